use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::decode::{probs_to_events, ScoredClip};
use super::events::Event;
use super::matching::{intersection_f1, MatchCriteria};
use super::median::median_filter_1d;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_MEDIAN_LENGTH: usize = 7;

/// Median filter length per class, in output frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MedianFilterPlan {
    pub lengths: Vec<(String, usize)>,
}

impl MedianFilterPlan {
    pub fn uniform(classes: &[String], len: usize) -> Result<Self> {
        check_length(len)?;
        Ok(MedianFilterPlan {
            lengths: classes.iter().map(|c| (c.clone(), len)).collect(),
        })
    }

    pub fn length(&self, class: &str) -> Option<usize> {
        self.lengths.iter().find(|(c, _)| c == class).map(|p| p.1)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (c, l) in &self.lengths {
            let _ = writeln!(s, "{c}={l}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lengths = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |d: String| Error::Format(format!("median plan line {}: {d}", i + 1));
            let (c, l) = line.split_once('=').ok_or_else(|| bad("expected class=length".into()))?;
            let l: usize = l.trim().parse().map_err(|_| bad(format!("bad length {:?}", l.trim())))?;
            check_length(l).map_err(|e| bad(e.to_string()))?;
            lengths.push((c.trim().to_string(), l));
        }
        Ok(MedianFilterPlan { lengths })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

fn check_length(len: usize) -> Result<()> {
    if len == 0 || len.is_multiple_of(2) {
        return Err(Error::invalid("median plan", format!("length {len} must be odd and positive")));
    }
    Ok(())
}

fn filter_column(probs: &Tensor, c: usize, len: usize) -> Result<Vec<f64>> {
    let n = probs.shape()[1];
    let col: Vec<f64> = probs.data().iter().skip(c).step_by(n).copied().collect();
    median_filter_1d(&col, len)
}

/// Median-filters each class column with its planned length.
pub fn apply_plan(probs: &Tensor, plan: &MedianFilterPlan, classes: &[String]) -> Result<Tensor> {
    if probs.rank() != 2 || probs.shape()[1] != classes.len() {
        return Err(Error::shape("apply_plan", format!("scores {:?} for {} classes", probs.shape(), classes.len())));
    }
    let n = classes.len();
    let mut out = probs.clone();
    for (c, name) in classes.iter().enumerate() {
        let len = plan
            .length(name)
            .ok_or_else(|| Error::invalid("apply_plan", format!("no median length for class {name}")))?;
        for (t, v) in filter_column(probs, c, len)?.into_iter().enumerate() {
            out.data_mut()[t * n + c] = v;
        }
    }
    Ok(out)
}

/// Intersection F1 of one class when its scores are filtered with `len`.
#[allow(clippy::too_many_arguments)]
pub fn class_f1_with_length(
    scores: &[ScoredClip],
    refs: &[Event],
    crit: &MatchCriteria,
    class: usize,
    len: usize,
    threshold: f64,
    frame_dur: f64,
    classes: &[String],
) -> Result<f64> {
    let name = std::slice::from_ref(&classes[class]);
    let mut dets = Vec::new();
    for s in scores {
        let col = filter_column(&s.probs, class, len)?;
        let grid = Tensor::from_vec(&[col.len().max(1), 1], if col.is_empty() { vec![0.0] } else { col })?;
        dets.extend(probs_to_events(&grid, threshold, frame_dur, &s.clip_id, name)?);
    }
    let r: Vec<Event> = refs.iter().filter(|e| e.label == classes[class]).cloned().collect();
    Ok(intersection_f1(&dets, &r, crit, name).macro_f1)
}

/// Picks, per class, the candidate length with the best intersection F1;
/// ties go to the shorter filter.
pub fn classwise_mf_search(
    scores: &[ScoredClip],
    refs: &[Event],
    candidates: &[usize],
    crit: &MatchCriteria,
    threshold: f64,
    frame_dur: f64,
    classes: &[String],
) -> Result<MedianFilterPlan> {
    if candidates.is_empty() {
        return Err(Error::invalid("classwise_mf_search", "no candidate lengths"));
    }
    for &l in candidates {
        check_length(l)?;
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut lengths = Vec::with_capacity(classes.len());
    for (c, name) in classes.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, sorted[0]);
        for &l in &sorted {
            let f = class_f1_with_length(scores, refs, crit, c, l, threshold, frame_dur, classes)?;
            if f > best.0 {
                best = (f, l);
            }
        }
        lengths.push((name.clone(), best.1));
    }
    Ok(MedianFilterPlan { lengths })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_text_roundtrip() {
        let classes: Vec<String> = vec!["Dog".into(), "Cat".into()];
        let mut plan = MedianFilterPlan::uniform(&classes, 7).unwrap();
        plan.lengths[1].1 = 3;
        assert_eq!(plan.to_text(), "Dog=7\nCat=3\n");
        assert_eq!(MedianFilterPlan::parse(&plan.to_text()).unwrap(), plan);
        assert!(MedianFilterPlan::parse("Dog=4\n").is_err());
        assert!(MedianFilterPlan::parse("Dog 5\n").is_err());
        assert!(MedianFilterPlan::uniform(&classes, 2).is_err());
    }

    #[test]
    fn singleton_and_exact_scores() {
        let classes: Vec<String> = vec!["a".into(), "b".into()];
        let mut p = Tensor::zeros(&[20, 2]);
        for t in 4..9 {
            p.set(&[t, 0], 1.0);
        }
        for t in 12..19 {
            p.set(&[t, 1], 1.0);
        }
        let refs = vec![
            Event::new("c", "a", 0.4, 0.9).unwrap(),
            Event::new("c", "b", 1.2, 1.9).unwrap(),
        ];
        let s = vec![ScoredClip { clip_id: "c".into(), probs: p }];
        let crit = MatchCriteria::default();
        let plan = classwise_mf_search(&s, &refs, &[7], &crit, 0.5, 0.1, &classes).unwrap();
        assert!(plan.lengths.iter().all(|(_, l)| *l == 7));
        let plan = classwise_mf_search(&s, &refs, &[5, 1, 3], &crit, 0.5, 0.1, &classes).unwrap();
        assert!(plan.lengths.iter().all(|(_, l)| *l == 1));
        assert!(classwise_mf_search(&s, &refs, &[], &crit, 0.5, 0.1, &classes).is_err());
    }
}
