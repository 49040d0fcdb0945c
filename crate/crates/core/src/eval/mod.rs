//! Post-processing and scoring of frame-level predictions.

pub mod decode;
pub mod events;
pub mod matching;
pub mod median;
pub mod mf_search;
pub mod psds;

pub use decode::{probs_to_events, ScoredClip};
pub use events::{read_events_tsv, write_events_tsv, Event};
pub use matching::{intersection_f1, match_events, F1Report, MatchCounts, MatchCriteria};
pub use median::median_filter_1d;
pub use mf_search::{apply_plan, classwise_mf_search, MedianFilterPlan, DEFAULT_MEDIAN_LENGTH};
pub use psds::{default_thresholds, psds_lite, roc_points, RocPoint};
