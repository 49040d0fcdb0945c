//! Training-time augmentation of log-mel samples.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Beta(a, a) parameter for the mixup weight; 0 disables mixup.
    pub mixup_alpha: f64,
    /// Longest time mask in feature frames; 0 disables masking.
    pub time_mask_max: usize,
    /// Largest absolute frame shift; 0 disables shifting.
    pub frame_shift_max: usize,
    pub filter_bands: (usize, usize),
    /// Gain range in dB; `(0, 0)` disables the filter.
    pub filter_gain_db: (f64, f64),
    /// Label frames per feature frame.
    pub time_pool: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            mixup_alpha: 0.2,
            time_mask_max: 8,
            frame_shift_max: 16,
            filter_bands: (2, 5),
            filter_gain_db: (-6.0, 6.0),
            time_pool: 4,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::Config(format!("augment: {d}")));
        if !(self.mixup_alpha >= 0.0 && self.mixup_alpha.is_finite()) {
            return bad(format!("mixup_alpha {} must be nonnegative", self.mixup_alpha));
        }
        let (lo, hi) = self.filter_bands;
        if lo == 0 || lo > hi {
            return bad(format!("filter bands {lo}..{hi} must satisfy 1 <= min <= max"));
        }
        let (glo, ghi) = self.filter_gain_db;
        if !(glo <= ghi && glo.is_finite() && ghi.is_finite()) {
            return bad(format!("filter gain range [{glo}, {ghi}] is empty"));
        }
        if self.time_pool == 0 {
            return bad("time_pool must be positive".into());
        }
        Ok(())
    }
}

fn roll_rows(t: &Tensor, shift: isize) -> Tensor {
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; t.len()];
    for r in 0..rows {
        let dst = (r as isize + shift).rem_euclid(rows as isize) as usize;
        out[dst * cols..(dst + 1) * cols].copy_from_slice(&t.data()[r * cols..(r + 1) * cols]);
    }
    Tensor::from_vec(t.shape(), out).expect("same shape")
}

/// Rolls features by `shift` frames and labels by `shift / time_pool`
/// (truncated toward zero). Content wraps around.
pub fn frame_shift(features: &Tensor, labels: &Tensor, shift: isize, time_pool: usize) -> Result<(Tensor, Tensor)> {
    if features.rank() != 2 || labels.rank() != 2 {
        return Err(Error::shape("frame_shift", "features and labels must be 2-d"));
    }
    let frames = features.shape()[0];
    if shift.unsigned_abs() >= frames {
        return Err(Error::invalid(
            "frame_shift",
            format!("|shift| = {} must be below {frames} frames", shift.unsigned_abs()),
        ));
    }
    Ok((
        roll_rows(features, shift),
        roll_rows(labels, shift / time_pool as isize),
    ))
}

/// `lambda * a + (1 - lambda) * b` for features and both label grids.
pub fn mixup(a: &Sample, b: &Sample, lambda: f64) -> Result<Sample> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("mixup", format!("lambda {lambda} outside [0, 1]")));
    }
    if a.features.shape() != b.features.shape() || a.strong.shape() != b.strong.shape() {
        return Err(Error::shape(
            "mixup",
            format!("{:?} vs {:?}", a.features.shape(), b.features.shape()),
        ));
    }
    let mix = |x: &Tensor, y: &Tensor| x.zip_map(y, |p, q| lambda * p + (1.0 - lambda) * q);
    Ok(Sample {
        id: a.id.clone(),
        features: mix(&a.features, &b.features)?,
        strong: mix(&a.strong, &b.strong)?,
        weak: mix(&a.weak, &b.weak)?,
    })
}

/// Overwrites frames `[start, start + len)` with the mean of the whole map.
pub fn time_mask(features: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    if features.rank() != 2 {
        return Err(Error::shape("time_mask", "features must be 2-d"));
    }
    let (frames, bins) = (features.shape()[0], features.shape()[1]);
    if start + len > frames {
        return Err(Error::invalid(
            "time_mask",
            format!("mask [{start}, {}) exceeds {frames} frames", start + len),
        ));
    }
    let mut out = features.clone();
    if len == 0 {
        return Ok(out);
    }
    let mean = features.mean();
    for v in &mut out.data_mut()[start * bins..(start + len) * bins] {
        *v = mean;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterBand {
    pub start: usize,
    pub end: usize,
    pub gain_db: f64,
}

/// Random contiguous bands covering `[0, bins)` with gains from `cfg`.
pub fn filter_bands(seed: u64, cfg: &AugmentConfig, bins: usize) -> Vec<FilterBand> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.filter_bands;
    let n = rng.gen_range(lo..=hi).min(bins).max(1);
    let mut cuts: Vec<usize> = sample_indices(&mut rng, bins - 1, n - 1)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    cuts.sort_unstable();
    let (glo, ghi) = cfg.filter_gain_db;
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(bins);
    bounds
        .windows(2)
        .map(|w| FilterBand {
            start: w[0],
            end: w[1],
            gain_db: if glo == ghi { glo } else { rng.gen_range(glo..=ghi) },
        })
        .collect()
}

/// Power gain in dB as an additive offset on natural-log features.
pub fn db_to_log_offset(db: f64) -> f64 {
    db / 10.0 * std::f64::consts::LN_10
}

/// Band-wise constant gains along the frequency axis of `[T, F]` features.
pub fn filter_aug_lite(features: &Tensor, seed: u64, cfg: &AugmentConfig) -> Result<Tensor> {
    cfg.validate()?;
    if features.rank() != 2 {
        return Err(Error::shape("filter_aug_lite", "features must be 2-d"));
    }
    let bins = features.shape()[1];
    let mut offsets = vec![0.0; bins];
    for band in filter_bands(seed, cfg, bins) {
        offsets[band.start..band.end].fill(db_to_log_offset(band.gain_db));
    }
    let mut out = features.clone();
    for row in out.data_mut().chunks_exact_mut(bins) {
        for (v, o) in row.iter_mut().zip(&offsets) {
            *v += o;
        }
    }
    Ok(out)
}

/// Applies shift, filter and mask to each sample, then mixes each with a
/// random partner from the same batch.
pub fn augment_batch(samples: &[Sample], cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let frames = s.frames();
        let mut s = s.clone();
        let max_shift = cfg.frame_shift_max.min(frames.saturating_sub(1)) as isize;
        if max_shift > 0 {
            let shift = rng.gen_range(-max_shift..=max_shift);
            (s.features, s.strong) = frame_shift(&s.features, &s.strong, shift, cfg.time_pool)?;
        }
        let filter_seed = rng.gen::<u64>();
        if cfg.filter_gain_db != (0.0, 0.0) {
            s.features = filter_aug_lite(&s.features, filter_seed, cfg)?;
        }
        let len = rng.gen_range(0..=cfg.time_mask_max.min(frames));
        let start = rng.gen_range(0..=frames - len);
        s.features = time_mask(&s.features, start, len)?;
        out.push(s);
    }
    if cfg.mixup_alpha > 0.0 && out.len() > 1 {
        let beta = Beta::new(cfg.mixup_alpha, cfg.mixup_alpha)
            .map_err(|e| Error::Config(format!("augment: mixup_alpha: {e}")))?;
        let partners: Vec<usize> = (0..out.len()).map(|_| rng.gen_range(0..out.len())).collect();
        let originals = out.clone();
        for (i, p) in partners.into_iter().enumerate() {
            let lambda = beta.sample(rng);
            out[i] = mixup(&originals[i], &originals[p], lambda)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(&[rows, cols], (0..rows * cols).map(|i| i as f64 * 0.5 - 3.0).collect()).unwrap()
    }

    #[test]
    fn shift_impulse_and_inverse() {
        let mut f = Tensor::zeros(&[32, 3]);
        f.set(&[10, 1], 1.0);
        let l = ramp(8, 2);
        let (g, _) = frame_shift(&f, &l, 4, 4).unwrap();
        assert_eq!(g.at(&[14, 1]), 1.0);
        assert_eq!(g.sum(), 1.0);
        let (f2, l2) = frame_shift(&f, &l, 0, 4).unwrap();
        assert_eq!((f2, l2), (f.clone(), l.clone()));
        for s in [-31isize, -9, -4, 3, 8, 31] {
            let (a, b) = frame_shift(&f, &l, s, 4).unwrap();
            let (c, d) = frame_shift(&a, &b, -s, 4).unwrap();
            assert_eq!(c, f);
            assert_eq!(d, l);
        }
        assert!(frame_shift(&f, &l, 32, 4).is_err());
    }

    #[test]
    fn label_shift_truncates_toward_zero() {
        let f = Tensor::zeros(&[16, 1]);
        let mut l = Tensor::zeros(&[4, 1]);
        l.set(&[1, 0], 1.0);
        assert_eq!(frame_shift(&f, &l, 7, 4).unwrap().1.at(&[2, 0]), 1.0);
        assert_eq!(frame_shift(&f, &l, -7, 4).unwrap().1.at(&[0, 0]), 1.0);
        assert_eq!(frame_shift(&f, &l, 3, 4).unwrap().1.at(&[1, 0]), 1.0);
    }

    fn sample(feat: Tensor, strong: Vec<f64>) -> Sample {
        let c = strong.len();
        Sample::new("s", feat, Tensor::from_vec(&[1, c], strong).unwrap()).unwrap()
    }

    #[test]
    fn mixup_cases() {
        let a = sample(ramp(4, 3), vec![1.0, 0.0]);
        let b = sample(ramp(4, 3).map(|v| v * -2.0 + 1.0), vec![0.0, 1.0]);
        assert_eq!(mixup(&a, &b, 1.0).unwrap(), a);
        let m = mixup(&a, &b, 0.5).unwrap();
        assert_eq!(m.strong.data(), &[0.5, 0.5]);
        assert_eq!(m.weak.data(), &[0.5, 0.5]);
        let m = mixup(&a, &b, 0.3).unwrap();
        for i in [0usize, 5, 11] {
            assert_eq!(m.features.data()[i], 0.3 * a.features.data()[i] + 0.7 * b.features.data()[i]);
        }
        let c = sample(ramp(8, 3), vec![0.0, 1.0]);
        assert!(mixup(&a, &c, 0.5).is_err());
        assert!(mixup(&a, &b, 1.5).is_err());
    }

    #[test]
    fn mask_cases() {
        let f = ramp(30, 4);
        assert_eq!(time_mask(&f, 5, 0).unwrap(), f);
        let full = time_mask(&f, 0, 30).unwrap();
        assert!(full.data().iter().all(|&v| v == f.mean()));
        let m = time_mask(&f, 10, 10).unwrap();
        assert_eq!(&m.data()[..40], &f.data()[..40]);
        assert_eq!(&m.data()[80..], &f.data()[80..]);
        assert!(m.data()[40..80].iter().all(|&v| v == f.mean()));
        assert!(time_mask(&f, 25, 6).is_err());
    }

    #[test]
    fn filter_identity_and_single_band() {
        let f = ramp(6, 128);
        let off = AugmentConfig {
            filter_gain_db: (0.0, 0.0),
            ..AugmentConfig::default()
        };
        assert_eq!(filter_aug_lite(&f, 3, &off).unwrap(), f);
        let single = AugmentConfig {
            filter_bands: (1, 1),
            filter_gain_db: (3.0, 3.0),
            ..AugmentConfig::default()
        };
        let g = filter_aug_lite(&f, 3, &single).unwrap();
        let want = 0.3 * std::f64::consts::LN_10;
        for (a, b) in g.data().iter().zip(f.data()) {
            assert!((a - b - want).abs() < 1e-12);
        }
    }

    #[test]
    fn bands_partition_for_many_seeds() {
        let cfg = AugmentConfig::default();
        for seed in 0..1000 {
            let bands = filter_bands(seed, &cfg, 128);
            assert!((2..=5).contains(&bands.len()));
            assert_eq!(bands[0].start, 0);
            assert_eq!(bands.last().unwrap().end, 128);
            for w in bands.windows(2) {
                assert_eq!(w[0].end, w[1].start);
            }
            for b in &bands {
                assert!(b.start < b.end);
                assert!((-6.0..=6.0).contains(&b.gain_db));
            }
        }
    }

    #[test]
    fn batch_augmentation_is_deterministic_and_shape_preserving() {
        let s: Vec<Sample> = (0..3)
            .map(|i| sample(ramp(16, 8).map(|v| v + i as f64), vec![i as f64 / 2.0, 1.0]))
            .map(|mut s| {
                s.strong = Tensor::from_vec(&[4, 2], s.strong.data().repeat(4)).unwrap();
                s
            })
            .collect();
        let cfg = AugmentConfig::default();
        let a = augment_batch(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = augment_batch(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.iter().zip(&s) {
            assert_eq!(x.features.shape(), y.features.shape());
            assert_eq!(x.strong.shape(), y.strong.shape());
            assert!(x.strong.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
