use std::collections::BTreeMap;

use super::crnn::{crnn_forward, Crnn, CrnnVars, ForwardOptions};
use crate::error::{Error, Result};
use crate::tape::{ChannelStats, Tape, Var};
use crate::tensor::Tensor;

/// A stacked training batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, 1, T, F]`
    pub mel: Tensor,
    /// `[B, T / time_pool, classes]`
    pub strong: Tensor,
    /// `[B, classes]`
    pub weak: Tensor,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn update(&mut self, params: Vec<(String, &mut Tensor)>, grads: &BTreeMap<String, Tensor>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params {
            let Some(g) = grads.get(&name) else { continue };
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Strong-label plus weak-label binary cross-entropy.
pub fn sed_loss(
    tape: &Tape,
    model: &Crnn,
    vars: &CrnnVars,
    batch: &Batch,
) -> Result<(Var, Vec<ChannelStats>)> {
    sed_loss_with(tape, model, vars, batch, true)
}

/// Like [`sed_loss`]; `training = false` normalizes with the running
/// statistics instead of batch statistics.
pub fn sed_loss_with(
    tape: &Tape,
    model: &Crnn,
    vars: &CrnnVars,
    batch: &Batch,
    training: bool,
) -> Result<(Var, Vec<ChannelStats>)> {
    let n = model.config.n_classes;
    let b = batch.mel.shape()[0];
    let frames = batch.mel.shape().get(2).copied().unwrap_or(0);
    let t_out = frames / model.config.time_pool();
    if batch.strong.shape() != [b, t_out, n] || batch.weak.shape() != [b, n] {
        return Err(Error::shape(
            "train_step",
            format!(
                "labels {:?} / {:?}, expected [{b}, {t_out}, {n}] / [{b}, {n}]",
                batch.strong.shape(),
                batch.weak.shape()
            ),
        ));
    }
    if batch
        .strong
        .data()
        .iter()
        .chain(batch.weak.data())
        .any(|v| !(0.0..=1.0).contains(v))
    {
        return Err(Error::invalid("train_step", "labels must lie in [0, 1]"));
    }
    let x = tape.constant(batch.mel.clone());
    let out = crnn_forward(
        tape,
        model,
        vars,
        x,
        ForwardOptions {
            training,
            record_attention: false,
        },
    )?;
    let st = tape.constant(batch.strong.clone());
    let wt = tape.constant(batch.weak.clone());
    let ls = tape.bce(out.strong, st)?;
    let lw = tape.bce(out.weak, wt)?;
    Ok((tape.add(ls, lw)?, out.batch_stats))
}

/// One Adam step on `batch`. Returns the loss before the update.
pub fn train_step(model: &mut Crnn, batch: &Batch, opt: &mut Adam, lr: f64) -> Result<f64> {
    let tape = Tape::new();
    let vars = model.bind(&tape, true)?;
    let (loss, stats) = sed_loss(&tape, model, &vars, batch)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    let mut grads = tape.backward(loss)?;
    let mut by_name = BTreeMap::new();
    for (name, v) in &vars.named {
        if let Some(g) = grads.take(*v) {
            if g.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            by_name.insert(name.clone(), g);
        }
    }
    opt.update(model.named_params_mut(), &by_name, lr);
    for (norm, s) in model.norms.iter_mut().zip(&stats) {
        norm.update_running(s);
    }
    Ok(value)
}
