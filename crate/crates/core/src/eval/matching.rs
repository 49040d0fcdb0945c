use std::collections::BTreeMap;

use super::events::Event;
use crate::error::{Error, Result};

/// Slack when comparing an intersection ratio against its threshold.
const RATIO_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchCriteria {
    /// Fraction of a detection that must overlap same-class references.
    pub rho_dtc: f64,
    /// Fraction of a reference that must be covered by accepted detections.
    pub rho_gtc: f64,
}

impl Default for MatchCriteria {
    fn default() -> Self {
        MatchCriteria {
            rho_dtc: 0.5,
            rho_gtc: 0.5,
        }
    }
}

impl MatchCriteria {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho_dtc", self.rho_dtc), ("rho_gtc", self.rho_gtc)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("eval: {name} = {v} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn passes(inter: f64, dur: f64, rho: f64) -> bool {
    inter >= rho * dur - RATIO_EPS * dur
}

type Group<'a> = (Vec<&'a Event>, Vec<&'a Event>);

/// Intersection-based matching. Events only interact with events of the
/// same clip and label.
pub fn match_events(dets: &[Event], refs: &[Event], crit: &MatchCriteria) -> MatchCounts {
    let mut groups: BTreeMap<(&str, &str), Group> = BTreeMap::new();
    for d in dets {
        groups.entry((&d.clip_id, &d.label)).or_default().0.push(d);
    }
    for r in refs {
        groups.entry((&r.clip_id, &r.label)).or_default().1.push(r);
    }
    let mut total = MatchCounts::default();
    for (ds, rs) in groups.values() {
        let accepted: Vec<&Event> = ds
            .iter()
            .copied()
            .filter(|d| passes(rs.iter().map(|r| d.overlap(r)).sum(), d.duration(), crit.rho_dtc))
            .collect();
        let tp = rs
            .iter()
            .filter(|r| passes(accepted.iter().map(|d| d.overlap(r)).sum(), r.duration(), crit.rho_gtc))
            .count();
        total += MatchCounts {
            tp,
            fp: ds.len() - accepted.len(),
            fn_: rs.len() - tp,
        };
    }
    total
}

#[derive(Clone, Debug, PartialEq)]
pub struct F1Report {
    pub per_class: Vec<(String, MatchCounts, f64)>,
    pub macro_f1: f64,
}

/// Per-class and macro-averaged intersection-based F1. A class with no
/// references and no detections scores 1.
pub fn intersection_f1(dets: &[Event], refs: &[Event], crit: &MatchCriteria, classes: &[String]) -> F1Report {
    let per_class: Vec<(String, MatchCounts, f64)> = classes
        .iter()
        .map(|c| {
            let d: Vec<Event> = dets.iter().filter(|e| &e.label == c).cloned().collect();
            let r: Vec<Event> = refs.iter().filter(|e| &e.label == c).cloned().collect();
            let m = match_events(&d, &r, crit);
            (c.clone(), m, m.f1())
        })
        .collect();
    let macro_f1 = if per_class.is_empty() {
        1.0
    } else {
        per_class.iter().map(|p| p.2).sum::<f64>() / per_class.len() as f64
    };
    F1Report { per_class, macro_f1 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(clip: &str, label: &str, on: f64, off: f64) -> Event {
        Event::new(clip, label, on, off).unwrap()
    }

    #[test]
    fn half_overlap_passes_at_half() {
        let m = match_events(&[ev("a", "x", 0.0, 1.0)], &[ev("a", "x", 0.5, 1.5)], &MatchCriteria::default());
        assert_eq!(m, MatchCounts { tp: 1, fp: 0, fn_: 0 });
        let strict = MatchCriteria {
            rho_dtc: 0.6,
            rho_gtc: 0.5,
        };
        let m = match_events(&[ev("a", "x", 0.0, 1.0)], &[ev("a", "x", 0.5, 1.5)], &strict);
        assert_eq!(m, MatchCounts { tp: 0, fp: 1, fn_: 1 });
    }

    #[test]
    fn identity_disjoint_and_isolation() {
        let e = ev("a", "x", 0.3, 0.9);
        let full = MatchCriteria {
            rho_dtc: 1.0,
            rho_gtc: 1.0,
        };
        assert_eq!(match_events(std::slice::from_ref(&e), std::slice::from_ref(&e), &full).tp, 1);
        let m = match_events(&[ev("a", "x", 2.0, 3.0)], std::slice::from_ref(&e), &full);
        assert_eq!(m, MatchCounts { tp: 0, fp: 1, fn_: 1 });
        // other clip or label never matches
        let m = match_events(&[ev("b", "x", 0.3, 0.9), ev("a", "y", 0.3, 0.9)], &[e], &full);
        assert_eq!(m, MatchCounts { tp: 0, fp: 2, fn_: 1 });
    }

    #[test]
    fn fragmented_detections_cover_a_reference() {
        let refs = [ev("a", "x", 0.0, 1.0)];
        let dets = [ev("a", "x", 0.0, 0.3), ev("a", "x", 0.4, 0.7)];
        let m = match_events(&dets, &refs, &MatchCriteria::default());
        assert_eq!(m, MatchCounts { tp: 1, fp: 0, fn_: 0 });
    }

    #[test]
    fn f1_conventions() {
        let classes: Vec<String> = ["x", "y"].iter().map(|s| s.to_string()).collect();
        let refs = [ev("a", "x", 0.0, 1.0)];
        let r = intersection_f1(&refs, &refs, &MatchCriteria::default(), &classes);
        assert_eq!(r.macro_f1, 1.0);
        let r = intersection_f1(&[], &refs, &MatchCriteria::default(), &classes);
        assert_eq!(r.per_class[0].2, 0.0);
        assert_eq!(r.per_class[1].2, 1.0);
        assert_eq!(r.macro_f1, 0.5);
    }

    #[test]
    fn criteria_validation() {
        assert!(MatchCriteria::default().validate().is_ok());
        assert!(MatchCriteria { rho_dtc: 0.0, rho_gtc: 0.5 }.validate().is_err());
        assert!(MatchCriteria { rho_dtc: 0.5, rho_gtc: 1.5 }.validate().is_err());
    }
}
