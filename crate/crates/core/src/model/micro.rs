//! A tiny CRNN for finite-difference checks of the full training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::crnn::{build_crnn, CrnnVars};
use super::train::{sed_loss_with, Batch};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::tensor::Tensor;

/// 32 mel bins pooled to 2, 8 frames pooled to 2, two kernels with
/// frequency dilations 1 and 2.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        n_classes: 3,
        mel_bins: 32,
        channels: vec![2; 7],
        pool: vec![(2, 2), (2, 2), (1, 2), (1, 2), (1, 1), (1, 1), (1, 1)],
        k: 2,
        dilations: vec![vec![(1, 1), (1, 2)]; 5],
        gru_hidden: 2,
        gru_layers: 2,
        ..ModelConfig::default()
    }
}

/// Random features and hard labels for the micro model.
pub fn micro_batch(cfg: &ModelConfig, batch: usize, frames: usize, seed: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Noise on top of a spectral tilt, so frequency bins are distinguishable.
    let mut mel = Tensor::uniform(&[batch, 1, frames, cfg.mel_bins], 1.0, &mut rng);
    let bins = cfg.mel_bins;
    for (i, v) in mel.data_mut().iter_mut().enumerate() {
        *v += 4.0 * (i % bins) as f64 / bins as f64 - 2.0;
    }
    let t_out = frames / cfg.time_pool();
    let strong: Vec<f64> = (0..batch * t_out * cfg.n_classes)
        .map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 })
        .collect();
    let strong = Tensor::from_vec(&[batch, t_out, cfg.n_classes], strong)?;
    let weak = (0..batch * cfg.n_classes)
        .map(|i| {
            let (b, c) = (i / cfg.n_classes, i % cfg.n_classes);
            (0..t_out).map(|t| strong.at(&[b, t, c])).fold(0.0, f64::max)
        })
        .collect();
    Ok(Batch {
        mel,
        weak: Tensor::from_vec(&[batch, cfg.n_classes], weak)?,
        strong,
    })
}

/// Checks every parameter gradient of the strong + weak loss of a freshly
/// initialized micro model on two 8-frame clips.
pub fn crnn_loss_gradcheck(seed: u64, step: f64, tol: f64) -> Result<GradCheckReport> {
    config_loss_gradcheck(&micro_config(), seed, 2, 8, true, step, tol)
}

/// `training = false` normalizes with running statistics.
pub fn config_loss_gradcheck(
    cfg: &ModelConfig,
    seed: u64,
    batch: usize,
    frames: usize,
    training: bool,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let model = build_crnn(cfg, seed)?;
    let batch = micro_batch(cfg, batch, frames, seed ^ 0x9e37)?;
    let params = model.param_tensors();
    Ok(grad_check(
        |tape, vars| {
            let v = CrnnVars::from_flat(cfg, tape, vars)?;
            Ok(sed_loss_with(tape, &model, &v, &batch, training)?.0)
        },
        &params,
        step,
        tol,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::DEFAULT_STEP;

    #[test]
    fn micro_config_is_valid() {
        let cfg = micro_config();
        cfg.validate().unwrap();
        assert_eq!(cfg.time_pool(), 4);
    }

    #[test]
    fn full_loss_gradients_match_differences() {
        let r = crnn_loss_gradcheck(1, DEFAULT_STEP, 1e-4).unwrap();
        assert!(r.pass, "max rel err {} abs {} at {:?}", r.max_rel_err, r.max_abs_err, r.worst);
        assert!(r.checked > 100);
    }
}
