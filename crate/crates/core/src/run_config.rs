//! Run configuration files: `section.key = value` lines, `#` comments.
//!
//! Sections are `model`, `feature`, `train` and `eval`. Every key is
//! optional; an empty file yields the defaults. Paths are resolved against
//! the directory holding the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::eval::{MatchCriteria, DEFAULT_MEDIAN_LENGTH};
use crate::features::MelConfig;
use crate::model::config::parse_list;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

const MODEL_KEYS: &[&str] = &[
    "n_classes",
    "mel_bins",
    "channels",
    "pool",
    "k",
    "gru_hidden",
    "gru_layers",
    "attention_reduction",
    "temperature",
    "dilations_f",
    "dilations_t",
    "preset",
];

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Directory of WAV files plus `refs.tsv`.
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub threshold: f64,
    pub criteria: MatchCriteria,
    pub median: usize,
    pub median_candidates: Vec<usize>,
    /// Decision thresholds swept by the detection score.
    pub psds_thresholds: Vec<f64>,
    /// False positives per hour where the score curve is cut off.
    pub psds_max_efpr: f64,
    pub batch_size: usize,
    pub data: DataConfig,
    /// Per-class median lengths; overrides `median` when set.
    pub plan: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            criteria: MatchCriteria::default(),
            median: DEFAULT_MEDIAN_LENGTH,
            median_candidates: vec![1, 3, 5, 7, 9, 11],
            psds_thresholds: crate::eval::default_thresholds(49),
            psds_max_efpr: 100.0,
            batch_size: 8,
            data: DataConfig { dir: None },
            plan: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub feature: MelConfig,
    pub train: TrainConfig,
    pub train_data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            feature: MelConfig::default(),
            train: TrainConfig::default(),
            train_data: DataConfig { dir: None },
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Seconds per strong-label frame.
    pub fn frame_duration(&self) -> f64 {
        self.feature.frame_duration(self.model.time_pool())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.feature.validate()?;
        self.train.validate()?;
        if self.feature.n_mels != self.model.mel_bins {
            return Err(Error::Config(format!(
                "feature.n_mels = {} but model.mel_bins = {}",
                self.feature.n_mels, self.model.mel_bins
            )));
        }
        let e = &self.eval;
        e.criteria.validate()?;
        if !(e.threshold > 0.0 && e.threshold < 1.0) {
            return Err(Error::Config(format!("eval.threshold = {} must lie in (0, 1)", e.threshold)));
        }
        if e.median.is_multiple_of(2) {
            return Err(Error::Config(format!("eval.median = {} must be odd", e.median)));
        }
        if e.median_candidates.is_empty() || e.median_candidates.iter().any(|l| l % 2 == 0) {
            return Err(Error::Config(format!(
                "eval.median_candidates = {:?} must be a nonempty list of odd lengths",
                e.median_candidates
            )));
        }
        if e.psds_thresholds.is_empty()
            || e.psds_thresholds.windows(2).any(|w| w[0] >= w[1])
            || e.psds_thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0))
        {
            return Err(Error::Config("eval.psds_thresholds must increase strictly inside (0, 1)".into()));
        }
        if !(e.psds_max_efpr > 0.0 && e.psds_max_efpr.is_finite()) {
            return Err(Error::Config("eval.psds_max_efpr must be positive".into()));
        }
        if e.batch_size == 0 {
            return Err(Error::Config("eval.batch_size must be positive".into()));
        }
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    parse_config_str(&text, path, &base)
}

/// Parses config text; `origin` names the source in messages and `base`
/// anchors relative paths.
pub fn parse_config_str(text: &str, origin: &Path, base: &Path) -> Result<RunConfig> {
    let syntax = |line: usize, detail: String| Error::ConfigSyntax {
        path: origin.to_path_buf(),
        line,
        detail,
    };
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut model_pairs = Vec::new();
    let mut cfg = RunConfig::default();
    let mut augment = AugmentConfig::default();
    let mut augment_on = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax(line_no, format!("expected `section.key = value`, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let (section, name) = key
            .split_once('.')
            .ok_or_else(|| syntax(line_no, format!("key {key:?} has no section prefix")))?;
        if let Some(prev) = seen.insert(key.to_string(), line_no) {
            return Err(syntax(line_no, format!("duplicate key {key} (first set on line {prev})")));
        }
        let bad = |d: String| syntax(line_no, format!("{key}: {d}"));
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("not a number: {v:?}")));
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("not a nonnegative integer: {v:?}")));
        let boolean = |v: &str| match v {
            "true" | "on" | "yes" => Ok(true),
            "false" | "off" | "no" => Ok(false),
            _ => Err(bad(format!("expected true or false, got {v:?}"))),
        };
        let path = |v: &str| if v.is_empty() { None } else { Some(base.join(v)) };
        match section {
            "model" => {
                let known = MODEL_KEYS.contains(&name)
                    || name
                        .strip_prefix("dilations.")
                        .and_then(|l| l.parse::<usize>().ok())
                        .is_some_and(|l| (2..=6).contains(&l));
                if !known {
                    return Err(syntax(line_no, format!("unknown key {key}")));
                }
                model_pairs.push((name.to_string(), value.to_string()));
            }
            "feature" => match name {
                "n_fft" => cfg.feature.n_fft = int(value)?,
                "hop" => cfg.feature.hop = int(value)?,
                "n_mels" => cfg.feature.n_mels = int(value)?,
                "fmin" => cfg.feature.fmin = num(value)?,
                "fmax" => cfg.feature.fmax = num(value)?,
                "log_floor" => cfg.feature.log_floor = num(value)?,
                "window" => {
                    if !value.eq_ignore_ascii_case("hamming") {
                        return Err(bad(format!("unsupported window {value:?}; only hamming")));
                    }
                }
                _ => return Err(syntax(line_no, format!("unknown key {key}"))),
            },
            "train" => match name {
                "steps" => cfg.train.steps = int(value)?,
                "lr" => cfg.train.lr = num(value)?,
                "batch_size" => cfg.train.batch_size = int(value)?,
                "seed" => cfg.train.seed = value.parse().map_err(|_| bad(format!("not a seed: {value:?}")))?,
                "data" => cfg.train_data.dir = path(value),
                "augment" => augment_on = boolean(value)?,
                "mixup_alpha" => augment.mixup_alpha = num(value)?,
                "time_mask_max" => augment.time_mask_max = int(value)?,
                "frame_shift_max" => augment.frame_shift_max = int(value)?,
                "filter_bands" => {
                    let v = parse_list(value).map_err(bad)?;
                    let [lo, hi] = v[..] else {
                        return Err(bad("expected `min, max`".into()));
                    };
                    augment.filter_bands = (lo, hi);
                }
                "filter_gain_db" => {
                    let v: Vec<f64> = value.split(',').map(|s| num(s.trim())).collect::<Result<_>>()?;
                    let [lo, hi] = v[..] else {
                        return Err(bad("expected `min, max`".into()));
                    };
                    augment.filter_gain_db = (lo, hi);
                }
                _ => return Err(syntax(line_no, format!("unknown key {key}"))),
            },
            "eval" => match name {
                "threshold" => cfg.eval.threshold = num(value)?,
                "rho_dtc" => cfg.eval.criteria.rho_dtc = num(value)?,
                "rho_gtc" => cfg.eval.criteria.rho_gtc = num(value)?,
                "median" => {
                    let m = int(value)?;
                    if m == 0 || m % 2 == 0 {
                        return Err(bad(format!("median length {m} must be odd and positive")));
                    }
                    cfg.eval.median = m;
                }
                "median_candidates" => {
                    let v = parse_list(value).map_err(bad)?;
                    if let Some(l) = v.iter().find(|&&l| l % 2 == 0) {
                        return Err(bad(format!("median length {l} must be odd")));
                    }
                    cfg.eval.median_candidates = v;
                }
                "psds_thresholds" => {
                    cfg.eval.psds_thresholds = if value.contains(',') {
                        value.split(',').map(|s| num(s.trim())).collect::<Result<_>>()?
                    } else {
                        crate::eval::default_thresholds(int(value)?)
                    }
                }
                "psds_max_efpr" => cfg.eval.psds_max_efpr = num(value)?,
                "batch_size" => cfg.eval.batch_size = int(value)?,
                "data" => cfg.eval.data.dir = path(value),
                "plan" => cfg.eval.plan = path(value),
                _ => return Err(syntax(line_no, format!("unknown key {key}"))),
            },
            _ => return Err(syntax(line_no, format!("unknown section {section:?} in key {key}"))),
        }
    }
    cfg.model = ModelConfig::from_pairs(&model_pairs)?;
    augment.time_pool = cfg.model.time_pool();
    cfg.train.augment = augment_on.then_some(augment);
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config_str(text, Path::new("run.cfg"), Path::new("/base"))
    }

    #[test]
    fn empty_is_default_fdy() {
        let c = parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(c.model.dilations.iter().all(|l| l.iter().all(|&d| d == (1, 1))));
        assert_eq!(c.model.k, 4);
    }

    #[test]
    fn frequency_dilation_list() {
        let c = parse("# best\nmodel.dilations_f = 1,2,3,3\n").unwrap();
        assert_eq!(c.model.k, 4);
        for layer in 1..=5 {
            assert_eq!(c.model.layer_dilations(layer), vec![(1, 1), (1, 2), (1, 3), (1, 3)]);
        }
        assert_eq!(c.model.layer_dilations(6), vec![(1, 1); 4]);
    }

    #[test]
    fn rejections_name_the_key_and_line() {
        let err = parse("\neval.median = 4\n").unwrap_err().to_string();
        assert!(err.contains("run.cfg:2") && err.contains("eval.median"), "{err}");
        let err = parse("train.stepz = 3").unwrap_err().to_string();
        assert!(err.contains("unknown key train.stepz"), "{err}");
        let err = parse("model.kk = 3").unwrap_err().to_string();
        assert!(err.contains("model.kk"), "{err}");
        let err = parse("model.k 4").unwrap_err().to_string();
        assert!(err.contains("run.cfg:1"), "{err}");
        let err = parse("train.steps = 1\ntrain.steps = 2").unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
        assert!(parse("feature.n_mels = 64").is_err());
        assert!(parse("eval.median_candidates = 1,2").is_err());
        assert!(parse("bogus.x = 1").is_err());
    }

    #[test]
    fn paths_are_relative_to_the_file() {
        let c = parse("train.data = corpus/train\neval.plan = plan.txt\n").unwrap();
        assert_eq!(c.train_data.dir, Some(PathBuf::from("/base/corpus/train")));
        assert_eq!(c.eval.plan, Some(PathBuf::from("/base/plan.txt")));
    }

    #[test]
    fn augment_toggle() {
        let c = parse("train.augment = true\ntrain.mixup_alpha = 0.4\ntrain.filter_gain_db = -3, 3\n").unwrap();
        let a = c.train.augment.unwrap();
        assert_eq!(a.mixup_alpha, 0.4);
        assert_eq!(a.filter_gain_db, (-3.0, 3.0));
        assert!(parse("train.augment = maybe").is_err());
    }
}
