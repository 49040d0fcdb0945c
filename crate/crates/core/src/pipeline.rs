//! Scoring and post-processing glue shared by the command line and tests.

use crate::error::Result;
use crate::eval::{
    apply_plan, intersection_f1, probs_to_events, psds_lite, Event, F1Report, MedianFilterPlan, ScoredClip,
};
use crate::model::Crnn;
use crate::run_config::EvalConfig;
use crate::training::score_samples;
use crate::data::Sample;

/// Applies the per-class median lengths of `plan` to every clip.
pub fn smooth_scores(scores: &[ScoredClip], plan: &MedianFilterPlan, classes: &[String]) -> Result<Vec<ScoredClip>> {
    scores
        .iter()
        .map(|s| {
            Ok(ScoredClip {
                clip_id: s.clip_id.clone(),
                probs: apply_plan(&s.probs, plan, classes)?,
            })
        })
        .collect()
}

pub fn detect(scores: &[ScoredClip], threshold: f64, frame_dur: f64, classes: &[String]) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for s in scores {
        out.extend(probs_to_events(&s.probs, threshold, frame_dur, &s.clip_id, classes)?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub f1: F1Report,
    pub psds: f64,
    pub detections: Vec<Event>,
}

/// Scores `samples`, smooths with `plan`, then reports intersection F1 at
/// the configured threshold and psds_lite over the threshold sweep.
pub fn evaluate(
    model: &Crnn,
    samples: &[Sample],
    refs: &[Event],
    cfg: &EvalConfig,
    plan: &MedianFilterPlan,
    frame_dur: f64,
    classes: &[String],
) -> Result<EvalReport> {
    let raw = score_samples(model, samples, cfg.batch_size)?;
    let scores = smooth_scores(&raw, plan, classes)?;
    let detections = detect(&scores, cfg.threshold, frame_dur, classes)?;
    let f1 = intersection_f1(&detections, refs, &cfg.criteria, classes);
    let psds = psds_lite(
        &scores,
        refs,
        &cfg.criteria,
        &cfg.psds_thresholds,
        cfg.psds_max_efpr,
        frame_dur,
        classes,
    )?;
    Ok(EvalReport { f1, psds, detections })
}
