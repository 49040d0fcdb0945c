//! Spread of the kernel attention vectors across clips, per layer and
//! frequency bin.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Crnn;
use crate::tensor::Tensor;

/// Attention vectors of one dynamic layer, indexed `[clip][freq][kernel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecord {
    /// 1-based network layer number (2 for the first dynamic layer).
    pub layer: usize,
    pub vectors: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AttentionRecord {
    pub layers: Vec<LayerRecord>,
}

impl AttentionRecord {
    pub fn clips(&self) -> usize {
        self.layers.first().map_or(0, |l| l.vectors.len())
    }
}

/// Runs each clip alone through the model and keeps its attention vectors.
/// Clips are `[T, F]` or `[1, 1, T, F]` feature maps.
pub fn collect_attention(model: &Crnn, clips: &[Tensor]) -> Result<AttentionRecord> {
    let per_clip: Vec<Vec<Vec<Vec<f64>>>> = clips
        .par_iter()
        .map(|clip| {
            let s = clip.shape();
            let mel = clip.reshape(&[1, 1, s[s.len() - 2], s[s.len() - 1]])?;
            let pred = model.predict(&mel, true)?;
            Ok(pred
                .attention
                .iter()
                .map(|m| (0..m.freq_bins()).map(|f| m.vector(0, f)).collect())
                .collect())
        })
        .collect::<Result<_>>()?;
    let layer_count = per_clip.first().map_or(0, |c| c.len());
    let layers = (0..layer_count)
        .map(|l| LayerRecord {
            layer: l + 2,
            vectors: per_clip.iter().map(|c| c[l].clone()).collect(),
        })
        .collect();
    Ok(AttentionRecord { layers })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStats {
    /// `(layer, variance per frequency bin)`
    pub layers: Vec<(usize, Vec<f64>)>,
    pub clips: usize,
}

/// `var[l][f] = 1/N sum_i || mean_j w_jlf - w_ilf ||^2`
pub fn attention_variance(record: &AttentionRecord) -> Result<AttentionStats> {
    let n = record.clips();
    if n == 0 {
        return Err(Error::invalid("attention_variance", "empty attention record"));
    }
    let mut layers = Vec::with_capacity(record.layers.len());
    for lr in &record.layers {
        if lr.vectors.len() != n {
            return Err(Error::shape("attention_variance", format!("layer {} has {} clips, expected {n}", lr.layer, lr.vectors.len())));
        }
        let bins = lr.vectors[0].len();
        let mut var = Vec::with_capacity(bins);
        for f in 0..bins {
            let k = lr.vectors[0][f].len();
            let mut mean = vec![0.0; k];
            for clip in &lr.vectors {
                if clip.len() != bins || clip[f].len() != k {
                    return Err(Error::shape("attention_variance", format!("ragged record in layer {}", lr.layer)));
                }
                for (m, w) in mean.iter_mut().zip(&clip[f]) {
                    *m += w;
                }
            }
            for m in &mut mean {
                *m /= n as f64;
            }
            let total: f64 = lr
                .vectors
                .iter()
                .map(|clip| clip[f].iter().zip(&mean).map(|(w, m)| (m - w) * (m - w)).sum::<f64>())
                .sum();
            var.push(total / n as f64);
        }
        layers.push((lr.layer, var));
    }
    Ok(AttentionStats { layers, clips: n })
}

pub const VARIANCE_HEADER: &str = "layer,freq,variance";

pub fn format_variance(stats: &AttentionStats) -> String {
    let mut s = String::from(VARIANCE_HEADER);
    s.push('\n');
    for (layer, var) in &stats.layers {
        for (f, v) in var.iter().enumerate() {
            let _ = writeln!(s, "{layer},{f},{v:.16e}");
        }
    }
    s
}

pub fn export_variance(stats: &AttentionStats, path: &Path) -> Result<()> {
    fs::write(path, format_variance(stats))?;
    Ok(())
}

/// Parses `layer,freq,variance` rows back into triples.
pub fn parse_variance(text: &str) -> Result<Vec<(usize, usize, f64)>> {
    let mut lines = text.lines();
    if lines.next() != Some(VARIANCE_HEADER) {
        return Err(Error::Format(format!("variance file must start with {VARIANCE_HEADER:?}")));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let bad = || Error::Format(format!("variance file line {}: {l:?}", i + 2));
            let mut it = l.split(',');
            let (Some(a), Some(b), Some(c), None) = (it.next(), it.next(), it.next(), it.next()) else {
                return Err(bad());
            };
            Ok((
                a.parse().map_err(|_| bad())?,
                b.parse().map_err(|_| bad())?,
                c.parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(vectors: Vec<Vec<Vec<f64>>>) -> AttentionRecord {
        AttentionRecord {
            layers: vec![LayerRecord { layer: 2, vectors }],
        }
    }

    #[test]
    fn two_opposite_vectors() {
        let r = record(vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]]);
        assert_eq!(attention_variance(&r).unwrap().layers[0].1, vec![0.5]);
    }

    #[test]
    fn single_clip_and_empty() {
        let r = record(vec![vec![vec![0.2, 0.8], vec![0.6, 0.4]]]);
        assert_eq!(attention_variance(&r).unwrap().layers[0].1, vec![0.0, 0.0]);
        assert!(attention_variance(&AttentionRecord::default()).is_err());
    }

    #[test]
    fn export_rows_and_roundtrip() {
        let stats = AttentionStats {
            layers: vec![(2, vec![0.1, 1.0 / 3.0, 0.0]), (3, vec![2e-17, 0.5, 0.25])],
            clips: 4,
        };
        let text = format_variance(&stats);
        assert_eq!(text.lines().count(), 7);
        let rows = parse_variance(&text).unwrap();
        assert_eq!(rows[1], (2, 1, 1.0 / 3.0));
        assert_eq!(rows[3], (3, 0, 2e-17));
        let empty = AttentionStats { layers: vec![], clips: 0 };
        assert_eq!(format_variance(&empty), "layer,freq,variance\n");
    }
}
