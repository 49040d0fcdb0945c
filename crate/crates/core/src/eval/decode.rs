use super::events::Event;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frame-level class scores `[frames, classes]` for one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredClip {
    pub clip_id: String,
    pub probs: Tensor,
}

impl ScoredClip {
    pub fn duration(&self, frame_dur: f64) -> f64 {
        self.probs.shape()[0] as f64 * frame_dur
    }
}

/// Turns maximal runs of frames with `prob > threshold` into events.
///
/// A run covering frames `s..e` (exclusive) becomes `[s * frame_dur, e * frame_dur)`.
pub fn probs_to_events(
    probs: &Tensor,
    threshold: f64,
    frame_dur: f64,
    clip_id: &str,
    classes: &[String],
) -> Result<Vec<Event>> {
    if probs.rank() != 2 || probs.shape()[1] != classes.len() {
        return Err(Error::shape(
            "probs_to_events",
            format!("scores {:?} for {} classes", probs.shape(), classes.len()),
        ));
    }
    if !(frame_dur > 0.0) {
        return Err(Error::invalid("probs_to_events", "frame duration must be positive"));
    }
    let (frames, n) = (probs.shape()[0], classes.len());
    let mut out = Vec::new();
    for (c, label) in classes.iter().enumerate() {
        let mut start = None;
        for t in 0..=frames {
            let on = t < frames && probs.data()[t * n + c] > threshold;
            match (on, start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    out.push(Event {
                        clip_id: clip_id.to_string(),
                        label: label.clone(),
                        onset: s as f64 * frame_dur,
                        offset: t as f64 * frame_dur,
                    });
                    start = None;
                }
                _ => {}
            }
        }
    }
    Ok(out)
}
