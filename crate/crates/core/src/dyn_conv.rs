//! Frequency dynamic convolution with per-kernel dilation.
//!
//! A layer holds `K` basis kernels `(W_i, b_i)`, each applied with its own
//! dilation `(d_t, d_f)` and same padding, so every branch output keeps the
//! input size. An attention branch produces per-frequency weights `pi[b,k,f]`
//! that sum to one over `k`, and the layer output is
//!
//! ```text
//! y[b,c,t,f] = sum_k pi[b,k,f] * y_k[b,c,t,f]
//! ```
//!
//! With every dilation equal to `(1, 1)` this is plain frequency dynamic
//! convolution.
//!
//! The attention branch pools over time, projects channels per frequency bin
//! down by `attention_reduction`, applies a rectifier, projects to `K` logits
//! and takes a temperature softmax over `K`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::Conv2dSpec;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const KERNEL: (usize, usize) = (3, 3);
pub const DEFAULT_TEMPERATURE: f64 = 31.0;
pub const DEFAULT_REDUCTION: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct DfdLayerConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// One `(d_t, d_f)` pair per basis kernel.
    pub dilations: Vec<(usize, usize)>,
    pub temperature: f64,
    pub attention_reduction: usize,
}

impl DfdLayerConfig {
    pub fn new(in_channels: usize, out_channels: usize, dilations: Vec<(usize, usize)>) -> Self {
        DfdLayerConfig {
            in_channels,
            out_channels,
            dilations,
            temperature: DEFAULT_TEMPERATURE,
            attention_reduction: DEFAULT_REDUCTION,
        }
    }

    /// Undilated layer with `k` basis kernels.
    pub fn fdy(in_channels: usize, out_channels: usize, k: usize) -> Self {
        Self::new(in_channels, out_channels, vec![(1, 1); k])
    }

    pub fn k(&self) -> usize {
        self.dilations.len()
    }

    pub fn attention_hidden(&self) -> usize {
        (self.in_channels / self.attention_reduction.max(1)).max(1)
    }

    pub fn max_freq_dilation(&self) -> usize {
        self.dilations.iter().map(|d| d.1).max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("layer channels must be positive".into()));
        }
        if self.dilations.is_empty() {
            return Err(Error::Config("a dynamic layer needs at least one basis kernel".into()));
        }
        if self.dilations.iter().any(|&(t, f)| t == 0 || f == 0) {
            return Err(Error::Config(format!(
                "dilations must be >= 1, got {:?}",
                self.dilations
            )));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.attention_reduction == 0 {
            return Err(Error::Config("attention_reduction must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DfdLayerParams {
    /// `K` kernels of shape `[Cout, Cin, 3, 3]`.
    pub basis_weights: Vec<Tensor>,
    /// `K` biases of shape `[Cout]`.
    pub basis_biases: Vec<Tensor>,
    /// `[hidden, Cin]`
    pub att_w1: Tensor,
    pub att_b1: Tensor,
    /// `[K, hidden]`
    pub att_w2: Tensor,
    pub att_b2: Tensor,
}

impl DfdLayerParams {
    pub fn init_with(cfg: &DfdLayerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (cin, cout, k, hidden) = (cfg.in_channels, cfg.out_channels, cfg.k(), cfg.attention_hidden());
        let conv_bound = fan_in_bound(cin * KERNEL.0 * KERNEL.1);
        let basis_weights = (0..k)
            .map(|_| Tensor::uniform(&[cout, cin, KERNEL.0, KERNEL.1], conv_bound, rng))
            .collect();
        let basis_biases = (0..k).map(|_| Tensor::zeros(&[cout])).collect();
        Ok(DfdLayerParams {
            basis_weights,
            basis_biases,
            att_w1: Tensor::uniform(&[hidden, cin], fan_in_bound(cin), rng),
            att_b1: Tensor::zeros(&[hidden]),
            att_w2: Tensor::uniform(&[k, hidden], fan_in_bound(hidden), rng),
            att_b2: Tensor::zeros(&[k]),
        })
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Zeroes both attention projections, which makes the attention uniform.
    pub fn zero_attention(&mut self) {
        for t in [&mut self.att_w1, &mut self.att_b1, &mut self.att_w2, &mut self.att_b2] {
            t.data_mut().fill(0.0);
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.basis_weights.iter().zip(&self.basis_biases).enumerate() {
            out.push((format!("basis.{i}.weight"), w));
            out.push((format!("basis.{i}.bias"), b));
        }
        out.push(("att.w1".into(), &self.att_w1));
        out.push(("att.b1".into(), &self.att_b1));
        out.push(("att.w2".into(), &self.att_w2));
        out.push(("att.b2".into(), &self.att_b2));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self
            .basis_weights
            .iter_mut()
            .zip(self.basis_biases.iter_mut())
            .enumerate()
        {
            out.push((format!("basis.{i}.weight"), w));
            out.push((format!("basis.{i}.bias"), b));
        }
        out.push(("att.w1".into(), &mut self.att_w1));
        out.push(("att.b1".into(), &mut self.att_b1));
        out.push(("att.w2".into(), &mut self.att_w2));
        out.push(("att.b2".into(), &mut self.att_b2));
        out
    }
}

/// Uniform bound giving variance `1 / fan_in`.
pub(crate) fn fan_in_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

/// Deterministic initialization: fan-in scaled uniform weights, zero biases.
pub fn init_dfd_layer(cfg: &DfdLayerConfig, seed: u64) -> Result<DfdLayerParams> {
    DfdLayerParams::init_with(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Trainable scalars of a layer. Depends only on channel widths, `K` and the
/// attention reduction, never on the dilations.
pub fn layer_param_count(cfg: &DfdLayerConfig) -> usize {
    let (cin, cout, k, hidden) = (cfg.in_channels, cfg.out_channels, cfg.k(), cfg.attention_hidden());
    let basis = k * cout * cin * KERNEL.0 * KERNEL.1 + k * cout;
    let attention = hidden * cin + hidden + k * hidden + k;
    basis + attention
}

/// Tape handles for a layer's parameters.
#[derive(Clone, Debug)]
pub struct DfdLayerVars {
    pub basis_weights: Vec<Var>,
    pub basis_biases: Vec<Var>,
    pub att_w1: Var,
    pub att_b1: Var,
    pub att_w2: Var,
    pub att_b2: Var,
}

impl DfdLayerVars {
    pub fn bind(tape: &Tape, p: &DfdLayerParams, requires_grad: bool) -> Self {
        let leaf = |t: &Tensor| tape.leaf(t.clone(), requires_grad);
        DfdLayerVars {
            basis_weights: p.basis_weights.iter().map(leaf).collect(),
            basis_biases: p.basis_biases.iter().map(leaf).collect(),
            att_w1: leaf(&p.att_w1),
            att_b1: leaf(&p.att_b1),
            att_w2: leaf(&p.att_w2),
            att_b2: leaf(&p.att_b2),
        }
    }

    /// Rebuilds handles from a flat list in `DfdLayerParams::named` order.
    pub fn from_flat(vars: &[Var], k: usize) -> Result<Self> {
        if vars.len() != 2 * k + 4 {
            return Err(Error::invalid(
                "dfd_layer",
                format!("expected {} tensors for K={k}, got {}", 2 * k + 4, vars.len()),
            ));
        }
        Ok(DfdLayerVars {
            basis_weights: (0..k).map(|i| vars[2 * i]).collect(),
            basis_biases: (0..k).map(|i| vars[2 * i + 1]).collect(),
            att_w1: vars[2 * k],
            att_b1: vars[2 * k + 1],
            att_w2: vars[2 * k + 2],
            att_b2: vars[2 * k + 3],
        })
    }
}

/// How the combination weights are obtained during a forward pass.
#[derive(Clone, Debug, Default)]
pub enum AttentionMode {
    #[default]
    Learned,
    /// All weight on basis kernel `j`.
    OneHot(usize),
    /// Caller-supplied weights `[B, K, F]`, treated as constants.
    Frozen(Tensor),
}

/// Per-frequency combination weights `pi[b, k, f]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub pi: Tensor,
}

impl AttentionMap {
    pub fn k(&self) -> usize {
        self.pi.shape()[1]
    }

    pub fn freq_bins(&self) -> usize {
        self.pi.shape()[2]
    }

    /// The K-vector for one `(batch, frequency)` cell.
    pub fn vector(&self, b: usize, f: usize) -> Vec<f64> {
        (0..self.k()).map(|k| self.pi.at(&[b, k, f])).collect()
    }
}

fn check_input(tape: &Tape, x: Var, cfg: &DfdLayerConfig) -> Result<Vec<usize>> {
    let s = tape.shape(x);
    if s.len() != 4 || s[1] != cfg.in_channels {
        return Err(Error::shape(
            "dfd_layer",
            format!("input {s:?}, expected [B, {}, T, F]", cfg.in_channels),
        ));
    }
    Ok(s)
}

/// Attention branch: `[B, Cin, T, F]` to `pi[B, K, F]`.
pub fn attention_weights(tape: &Tape, x: Var, p: &DfdLayerVars, cfg: &DfdLayerConfig) -> Result<Var> {
    let s = check_input(tape, x, cfg)?;
    let (b, c, f) = (s[0], s[1], s[3]);
    let k = cfg.k();
    let pooled = tape.mean_axis(x, 2)?; // [B, C, F]
    let per_freq = tape.permute(pooled, &[0, 2, 1])?;
    let rows = tape.reshape(per_freq, &[b * f, c])?;
    let hidden = tape.linear(rows, p.att_w1, Some(p.att_b1))?;
    let hidden = tape.relu(hidden);
    let logits = tape.linear(hidden, p.att_w2, Some(p.att_b2))?;
    let logits = tape.reshape(logits, &[b, f, k])?;
    let pi = tape.softmax(logits, 2, cfg.temperature)?;
    tape.permute(pi, &[0, 2, 1])
}

#[derive(Clone, Copy, Debug)]
pub struct DfdOutput {
    /// `[B, Cout, T, F]`
    pub y: Var,
    /// `[B, K, F]`
    pub pi: Var,
}

pub fn dfd_forward(
    tape: &Tape,
    x: Var,
    p: &DfdLayerVars,
    cfg: &DfdLayerConfig,
    mode: &AttentionMode,
) -> Result<DfdOutput> {
    cfg.validate()?;
    let s = check_input(tape, x, cfg)?;
    let (b, f) = (s[0], s[3]);
    let k = cfg.k();
    if p.basis_weights.len() != k || p.basis_biases.len() != k {
        return Err(Error::shape(
            "dfd_layer",
            format!("{} basis kernels for K={k}", p.basis_weights.len()),
        ));
    }
    let max_df = cfg.max_freq_dilation();
    if max_df > f {
        return Err(Error::shape(
            "dfd_layer",
            format!("frequency dilation {max_df} exceeds the {f} input bins"),
        ));
    }

    let branches = cfg
        .dilations
        .iter()
        .zip(p.basis_weights.iter().zip(&p.basis_biases))
        .map(|(&d, (&w, &bias))| tape.conv2d(x, w, Some(bias), Conv2dSpec::same_3x3(d)))
        .collect::<Result<Vec<_>>>()?;

    let pi = match mode {
        AttentionMode::Learned => attention_weights(tape, x, p, cfg)?,
        AttentionMode::OneHot(j) => {
            if *j >= k {
                return Err(Error::invalid("dfd_layer", format!("one-hot index {j} >= K={k}")));
            }
            let mut pi = Tensor::zeros(&[b, k, f]);
            for bi in 0..b {
                for fi in 0..f {
                    pi.set(&[bi, *j, fi], 1.0);
                }
            }
            tape.constant(pi)
        }
        AttentionMode::Frozen(pi) => {
            if pi.shape() != [b, k, f] {
                return Err(Error::shape(
                    "dfd_layer",
                    format!("frozen attention {:?}, expected [{b}, {k}, {f}]", pi.shape()),
                ));
            }
            tape.constant(pi.clone())
        }
    };
    let y = tape.dyn_combine(&branches, pi)?;
    Ok(DfdOutput { y, pi })
}

/// Gradient-free forward on plain tensors.
pub fn dfd_eval(
    x: &Tensor,
    p: &DfdLayerParams,
    cfg: &DfdLayerConfig,
    mode: &AttentionMode,
) -> Result<(Tensor, AttentionMap)> {
    let tape = Tape::new();
    let vars = DfdLayerVars::bind(&tape, p, false);
    let xv = tape.constant(x.clone());
    let out = dfd_forward(&tape, xv, &vars, cfg, mode)?;
    let y = tape.value(out.y).clone();
    let pi = tape.value(out.pi).clone();
    Ok((y, AttentionMap { pi }))
}
