//! Gated recurrent unit sequence layers built from tape primitives.
//!
//! Cell:
//!
//! ```text
//! z  = sigmoid(Wz x + Uz h + bz)
//! r  = sigmoid(Wr x + Ur h + br)
//! n  = tanh(Wn x + r * (Un h) + bn)
//! h' = (1 - z) * n + z * h
//! ```
//!
//! Gate rows are stacked in `z, r, n` order in both `w_input` and `w_hidden`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    /// `[3H, Din]`
    pub w_input: Tensor,
    /// `[3H, H]`
    pub w_hidden: Tensor,
    /// `[3H]`
    pub bias: Tensor,
}

impl GruParams {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        GruParams {
            w_input: Tensor::uniform(&[3 * hidden, input], bound, rng),
            w_hidden: Tensor::uniform(&[3 * hidden, hidden], bound, rng),
            bias: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w_input: Tensor::zeros(&[3 * hidden, input]),
            w_hidden: Tensor::zeros(&[3 * hidden, hidden]),
            bias: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_input.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.w_input.len() + self.w_hidden.len() + self.bias.len()
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 3] {
        [
            ("w_input", &self.w_input),
            ("w_hidden", &self.w_hidden),
            ("bias", &self.bias),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 3] {
        [
            ("w_input", &mut self.w_input),
            ("w_hidden", &mut self.w_hidden),
            ("bias", &mut self.bias),
        ]
    }
}

/// A `GruParams` whose tensors are recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl GruVars {
    pub fn new(tape: &Tape, w_input: Var, w_hidden: Var, bias: Var) -> Result<Self> {
        let wi = tape.shape(w_input);
        let wh = tape.shape(w_hidden);
        let b = tape.shape(bias);
        if wh.len() != 2 || wi.len() != 2 || wh[0] != 3 * wh[1] || wi[0] != wh[0] || b != [wh[0]] {
            return Err(Error::shape(
                "gru",
                format!("w_input {wi:?}, w_hidden {wh:?}, bias {b:?}"),
            ));
        }
        Ok(GruVars {
            w_input,
            w_hidden,
            bias,
            hidden: wh[1],
        })
    }

    pub fn bind(tape: &Tape, p: &GruParams, requires_grad: bool) -> Self {
        let w_input = tape.leaf(p.w_input.clone(), requires_grad);
        let w_hidden = tape.leaf(p.w_hidden.clone(), requires_grad);
        let bias = tape.leaf(p.bias.clone(), requires_grad);
        GruVars::new(tape, w_input, w_hidden, bias).expect("GruParams shapes are consistent")
    }
}

/// Runs one direction of a GRU over `x[B, T, Din]`, returning `[B, T, H]`.
///
/// Outputs are placed at their time index for both directions. `h0`
/// defaults to zeros.
pub fn gru_sequence(tape: &Tape, x: Var, p: &GruVars, direction: Direction, h0: Option<Var>) -> Result<Var> {
    let s = tape.shape(x);
    let din = tape.shape(p.w_input)[1];
    if s.len() != 3 || s[2] != din {
        return Err(Error::shape(
            "gru_sequence",
            format!("input {s:?} does not match input width {din}"),
        ));
    }
    let (b, t) = (s[0], s[1]);
    let h = p.hidden;
    let mut state = match h0 {
        Some(h0) => {
            if tape.shape(h0) != [b, h] {
                return Err(Error::shape(
                    "gru_sequence",
                    format!("h0 {:?}, expected [{b}, {h}]", tape.shape(h0)),
                ));
            }
            h0
        }
        None => tape.constant(Tensor::zeros(&[b, h])),
    };

    let flat = tape.reshape(x, &[b * t, din])?;
    let xw = tape.linear(flat, p.w_input, Some(p.bias))?;
    let xw = tape.reshape(xw, &[b, t, 3 * h])?;

    let steps: Vec<usize> = match direction {
        Direction::Forward => (0..t).collect(),
        Direction::Backward => (0..t).rev().collect(),
    };
    let mut outputs = vec![None; t];
    for step in steps {
        let xt = tape.narrow(xw, 1, step, 1)?;
        let xt = tape.reshape(xt, &[b, 3 * h])?;
        let hu = tape.linear(state, p.w_hidden, None)?;
        let gate = |v: Var, i: usize| tape.narrow(v, 1, i * h, h);
        let z = tape.add(gate(xt, 0)?, gate(hu, 0)?)?;
        let z = tape.sigmoid(z);
        let r = tape.add(gate(xt, 1)?, gate(hu, 1)?)?;
        let r = tape.sigmoid(r);
        let rn = tape.mul(r, gate(hu, 2)?)?;
        let n = tape.add(gate(xt, 2)?, rn)?;
        let n = tape.tanh(n);
        // (1 - z) n + z h == n + z (h - n)
        let diff = tape.sub(state, n)?;
        let zd = tape.mul(z, diff)?;
        state = tape.add(n, zd)?;
        outputs[step] = Some(tape.reshape(state, &[b, 1, h])?);
    }
    let outputs: Vec<Var> = outputs.into_iter().map(|o| o.expect("every step visited")).collect();
    tape.concat(&outputs, 1)
}

/// Forward and backward passes concatenated along the feature axis: `[B, T, 2H]`.
pub fn bidirectional(tape: &Tape, x: Var, fwd: &GruVars, bwd: &GruVars) -> Result<Var> {
    let f = gru_sequence(tape, x, fwd, Direction::Forward, None)?;
    let r = gru_sequence(tape, x, bwd, Direction::Backward, None)?;
    tape.concat(&[f, r], 2)
}
