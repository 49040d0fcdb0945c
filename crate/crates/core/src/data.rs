//! Training samples and batching.

use crate::error::{Error, Result};
use crate::features::mel::{logmel_with, MelConfig, MelFilterbank};
use crate::features::synth::SynthClip;
use crate::model::Batch;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[T, F]` log-mel frames.
    pub features: Tensor,
    /// `[T / time_pool, classes]`
    pub strong: Tensor,
    /// `[classes]`, 1 where the class occurs anywhere in the clip.
    pub weak: Tensor,
}

impl Sample {
    pub fn new(id: impl Into<String>, features: Tensor, strong: Tensor) -> Result<Self> {
        if features.rank() != 2 || strong.rank() != 2 {
            return Err(Error::shape(
                "sample",
                format!("features {:?} and labels {:?} must be 2-d", features.shape(), strong.shape()),
            ));
        }
        let (frames, classes) = (strong.shape()[0], strong.shape()[1]);
        if !features.shape()[0].is_multiple_of(frames) {
            return Err(Error::shape(
                "sample",
                format!("{} feature frames do not divide into {frames} label frames", features.shape()[0]),
            ));
        }
        let weak = (0..classes)
            .map(|c| (0..frames).map(|t| strong.at(&[t, c])).fold(0.0, f64::max))
            .collect();
        Ok(Sample {
            id: id.into(),
            features,
            strong,
            weak: Tensor::from_vec(&[classes], weak)?,
        })
    }

    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }
}

/// Log-mel features of a clip, cropped to `4 * label_frames` rows.
pub fn sample_from_clip(clip: &SynthClip, cfg: &MelConfig, fb: &MelFilterbank, time_pool: usize) -> Result<Sample> {
    let mel = logmel_with(&clip.audio, cfg, fb)?;
    let labels = clip.labels.clone();
    let keep = labels.shape()[0] * time_pool;
    Sample::new(clip.clip_id.clone(), crop_frames(&mel, keep)?, labels)
}

/// Keeps the first `keep` frames of a `[1, 1, T, F]` or `[T, F]` map, as `[keep, F]`.
pub fn crop_frames(mel: &Tensor, keep: usize) -> Result<Tensor> {
    let f = *mel.shape().last().unwrap_or(&0);
    let frames = mel.len() / f.max(1);
    if keep == 0 || keep > frames {
        return Err(Error::invalid("crop_frames", format!("cannot keep {keep} of {frames} frames")));
    }
    Tensor::from_vec(&[keep, f], mel.data()[..keep * f].to_vec())
}

/// Stacks samples of equal length into a model batch.
pub fn stack_batch(samples: &[&Sample]) -> Result<Batch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("stack_batch", "empty batch"))?;
    let (t, f) = (first.features.shape()[0], first.features.shape()[1]);
    for s in samples {
        if s.features.shape() != first.features.shape() || s.strong.shape() != first.strong.shape() {
            return Err(Error::shape(
                "stack_batch",
                format!("sample {} has shape {:?}, expected {:?}", s.id, s.features.shape(), first.features.shape()),
            ));
        }
    }
    let b = samples.len();
    let cat = |get: &dyn Fn(&Sample) -> &Tensor| samples.iter().flat_map(|s| get(s).data().iter().copied()).collect::<Vec<_>>();
    let (lt, c) = (first.strong.shape()[0], first.strong.shape()[1]);
    Ok(Batch {
        mel: Tensor::from_vec(&[b, 1, t, f], cat(&|s| &s.features))?,
        strong: Tensor::from_vec(&[b, lt, c], cat(&|s| &s.strong))?,
        weak: Tensor::from_vec(&[b, c], cat(&|s| &s.weak))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::mel::mel_filterbank;
    use crate::features::synth::{synth_clip, EventSpec};

    #[test]
    fn sample_from_synth_clip() {
        let spec = EventSpec {
            class: 2,
            onset: 0.2,
            offset: 0.7,
        };
        let clip = synth_clip(1, "c.wav", 1.0, &[spec]).unwrap();
        let cfg = MelConfig::default();
        let s = sample_from_clip(&clip, &cfg, &mel_filterbank(&cfg).unwrap(), 4).unwrap();
        // 16000 / 256 + 1 = 63 frames, cropped to 60
        assert_eq!(s.features.shape(), &[60, 128]);
        assert_eq!(s.strong.shape(), &[15, 10]);
        assert_eq!(s.weak.data()[2], 1.0);
        assert_eq!(s.weak.sum(), 1.0);
        let b = stack_batch(&[&s, &s]).unwrap();
        assert_eq!(b.mel.shape(), &[2, 1, 60, 128]);
        assert_eq!(b.strong.shape(), &[2, 15, 10]);
    }

    #[test]
    fn stack_rejects_ragged() {
        let a = Sample::new("a", Tensor::zeros(&[8, 4]), Tensor::zeros(&[2, 3])).unwrap();
        let b = Sample::new("b", Tensor::zeros(&[12, 4]), Tensor::zeros(&[3, 3])).unwrap();
        assert!(stack_batch(&[&a, &b]).is_err());
        assert!(stack_batch(&[]).is_err());
        assert!(Sample::new("c", Tensor::zeros(&[7, 4]), Tensor::zeros(&[2, 3])).is_err());
    }
}
