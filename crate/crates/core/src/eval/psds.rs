//! Threshold-swept detection score: mean true-positive ratio against
//! false positives per hour, integrated as a staircase.

use super::decode::{probs_to_events, ScoredClip};
use super::events::Event;
use super::matching::{match_events, MatchCriteria};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    /// Mean over classes with references of detected / total references.
    pub tpr: f64,
    /// Mean over classes of false positives per hour of audio.
    pub efpr: f64,
}

/// One operating point per threshold.
pub fn roc_points(
    scores: &[ScoredClip],
    refs: &[Event],
    crit: &MatchCriteria,
    thresholds: &[f64],
    frame_dur: f64,
    classes: &[String],
) -> Result<Vec<RocPoint>> {
    if thresholds.is_empty() {
        return Err(Error::invalid("psds_lite", "empty threshold list"));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) || thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::invalid("psds_lite", "thresholds must be increasing and inside (0, 1)"));
    }
    let hours: f64 = scores.iter().map(|s| s.duration(frame_dur)).sum::<f64>() / 3600.0;
    if !(hours > 0.0) {
        return Err(Error::invalid("psds_lite", "no scored audio"));
    }
    let ref_classes: Vec<usize> = (0..classes.len())
        .filter(|&c| refs.iter().any(|r| r.label == classes[c]))
        .collect();
    thresholds
        .iter()
        .map(|&th| {
            let mut dets = Vec::new();
            for s in scores {
                dets.extend(probs_to_events(&s.probs, th, frame_dur, &s.clip_id, classes)?);
            }
            let mut tpr_sum = 0.0;
            let mut fpr_sum = 0.0;
            for (c, name) in classes.iter().enumerate() {
                let d: Vec<Event> = dets.iter().filter(|e| &e.label == name).cloned().collect();
                let r: Vec<Event> = refs.iter().filter(|e| &e.label == name).cloned().collect();
                let m = match_events(&d, &r, crit);
                if ref_classes.contains(&c) {
                    tpr_sum += m.tp as f64 / r.len() as f64;
                }
                fpr_sum += m.fp as f64 / hours;
            }
            Ok(RocPoint {
                threshold: th,
                tpr: if ref_classes.is_empty() { 0.0 } else { tpr_sum / ref_classes.len() as f64 },
                efpr: fpr_sum / classes.len().max(1) as f64,
            })
        })
        .collect()
}

/// Area under the staircase `x -> max{tpr : efpr <= x}` over
/// `[0, max_efpr]`, divided by `max_efpr`.
pub fn staircase_area(points: &[RocPoint], max_efpr: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.efpr <= max_efpr)
        .map(|p| (p.efpr, p.tpr))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut area = 0.0;
    let mut best = 0.0f64;
    for (i, &(x, y)) in pts.iter().enumerate() {
        best = best.max(y);
        let next = pts.get(i + 1).map_or(max_efpr, |p| p.0);
        area += best * (next - x);
    }
    area / max_efpr
}

/// Simplified polyphonic detection score in `[0, 1]`.
pub fn psds_lite(
    scores: &[ScoredClip],
    refs: &[Event],
    crit: &MatchCriteria,
    thresholds: &[f64],
    max_efpr: f64,
    frame_dur: f64,
    classes: &[String],
) -> Result<f64> {
    if !(max_efpr > 0.0 && max_efpr.is_finite()) {
        return Err(Error::invalid("psds_lite", "max_efpr must be positive"));
    }
    let pts = roc_points(scores, refs, crit, thresholds, frame_dur, classes)?;
    Ok(staircase_area(&pts, max_efpr))
}

/// `n` evenly spaced thresholds strictly inside (0, 1).
pub fn default_thresholds(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
}
