//! Minibatch training over a sample corpus.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment_batch, AugmentConfig};
use crate::data::{stack_batch, Sample};
use crate::error::{Error, Result};
use crate::eval::ScoredClip;
use crate::model::{train_step, Adam, Crnn};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// `None` trains on clean samples.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 600,
            lr: 3e-3,
            batch_size: 8,
            seed: 0,
            augment: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("train: steps and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train: lr {} must be positive", self.lr)));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// Trains for `cfg.steps` Adam steps, reshuffling the corpus every epoch.
/// Calls `on_step(step, loss)` with 1-based step numbers and returns all losses.
pub fn train(
    model: &mut Crnn,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("train", "no training samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::default();
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    let bs = cfg.batch_size.min(samples.len());
    for step in 1..=cfg.steps {
        if order.len() < bs {
            let mut epoch: Vec<usize> = (0..samples.len()).collect();
            epoch.shuffle(&mut rng);
            order = epoch;
        }
        let picked: Vec<Sample> = order.drain(..bs).map(|i| samples[i].clone()).collect();
        let picked = match &cfg.augment {
            Some(a) => augment_batch(&picked, a, &mut rng)?,
            None => picked,
        };
        let refs: Vec<&Sample> = picked.iter().collect();
        let batch = stack_batch(&refs)?;
        let loss = train_step(model, &batch, &mut opt, cfg.lr)?;
        log::debug!("step {step} loss {loss:.6}");
        on_step(step, loss);
        losses.push(loss);
    }
    Ok(losses)
}

/// Frame-level strong predictions for each sample, `batch_size` clips at a time.
pub fn score_samples(model: &Crnn, samples: &[Sample], batch_size: usize) -> Result<Vec<ScoredClip>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = stack_batch(&refs)?;
        let pred = model.predict(&batch.mel, false)?;
        let (t, c) = (pred.strong.shape()[1], pred.strong.shape()[2]);
        for (i, s) in chunk.iter().enumerate() {
            out.push(ScoredClip {
                clip_id: s.id.clone(),
                probs: Tensor::from_vec(&[t, c], pred.strong.data()[i * t * c..(i + 1) * t * c].to_vec())?,
            });
        }
    }
    Ok(out)
}
