//! CRNN topology and its canonical `key = value` text form.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const CONV_LAYERS: usize = 7;
/// Layers 2 to 6 (indices 1..=5) take configurable dilations; layer 7 is
/// always undilated.
pub const DILATED_LAYERS: std::ops::RangeInclusive<usize> = 1..=5;

/// Named dilation configurations. Each entry lists `(d_t, d_f)` per basis
/// kernel; the same list is applied to every dilatable layer.
pub const PRESETS: &[(&str, &[(usize, usize)])] = &[
    ("fdy", &[(1, 1), (1, 1), (1, 1), (1, 1)]),
    ("freq", &[(1, 1), (1, 1), (1, 1), (1, 2)]),
    ("time", &[(1, 1), (1, 1), (1, 1), (2, 1)]),
    ("both", &[(1, 1), (1, 1), (1, 2), (2, 1)]),
    ("freq5", &[(1, 1), (1, 1), (1, 1), (1, 1), (1, 2)]),
    ("time5", &[(1, 1), (1, 1), (1, 1), (1, 1), (2, 1)]),
    ("d2x1", &[(1, 1), (1, 1), (1, 1), (1, 2)]),
    ("d2x2", &[(1, 1), (1, 1), (1, 2), (1, 2)]),
    ("d2x3", &[(1, 1), (1, 2), (1, 2), (1, 2)]),
    ("d2x4", &[(1, 2), (1, 2), (1, 2), (1, 2)]),
    ("d3x1", &[(1, 1), (1, 1), (1, 1), (1, 3)]),
    ("d3x2", &[(1, 1), (1, 1), (1, 3), (1, 3)]),
    ("d4x1", &[(1, 1), (1, 1), (1, 1), (1, 4)]),
    ("d4x2", &[(1, 1), (1, 1), (1, 4), (1, 4)]),
    ("v1123", &[(1, 1), (1, 1), (1, 2), (1, 3)]),
    ("v1223", &[(1, 1), (1, 2), (1, 2), (1, 3)]),
    ("best", &[(1, 1), (1, 2), (1, 3), (1, 3)]),
    ("v2233", &[(1, 2), (1, 2), (1, 3), (1, 3)]),
    ("v1234", &[(1, 1), (1, 2), (1, 3), (1, 4)]),
];

pub fn preset(name: &str) -> Option<Vec<(usize, usize)>> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, d)| d.to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_classes: usize,
    pub mel_bins: usize,
    /// Output channels of the seven conv layers.
    pub channels: Vec<usize>,
    /// `(time, freq)` average-pooling window after each conv layer.
    pub pool: Vec<(usize, usize)>,
    pub k: usize,
    /// Dilations for layers 2 to 6, `K` pairs each.
    pub dilations: Vec<Vec<(usize, usize)>>,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub temperature: f64,
    pub attention_reduction: usize,
}

impl Default for ModelConfig {
    /// Toy-scale undilated baseline.
    fn default() -> Self {
        ModelConfig {
            n_classes: 10,
            mel_bins: 128,
            channels: vec![4, 8, 8, 8, 8, 8, 8],
            pool: default_pool(),
            k: 4,
            dilations: vec![vec![(1, 1); 4]; 5],
            gru_hidden: 16,
            gru_layers: 2,
            temperature: crate::dyn_conv::DEFAULT_TEMPERATURE,
            attention_reduction: crate::dyn_conv::DEFAULT_REDUCTION,
        }
    }
}

fn default_pool() -> Vec<(usize, usize)> {
    vec![(2, 2), (2, 2), (1, 2), (1, 2), (1, 2), (1, 2), (1, 1)]
}

impl ModelConfig {
    pub fn with_dilations(mut self, per_kernel: &[(usize, usize)]) -> Self {
        self.k = per_kernel.len();
        self.dilations = vec![per_kernel.to_vec(); 5];
        self
    }

    /// Total time downsampling between input frames and output frames.
    pub fn time_pool(&self) -> usize {
        self.pool.iter().map(|p| p.0).product()
    }

    /// Frequency bins entering each conv layer.
    pub fn layer_freq_bins(&self) -> Vec<usize> {
        let mut f = self.mel_bins;
        let mut out = Vec::with_capacity(CONV_LAYERS);
        for p in &self.pool {
            out.push(f);
            f /= p.1.max(1);
        }
        out
    }

    /// Per-kernel dilations of the dynamic layer at conv index `layer` (1..=6).
    pub fn layer_dilations(&self, layer: usize) -> Vec<(usize, usize)> {
        if DILATED_LAYERS.contains(&layer) {
            self.dilations[layer - 1].clone()
        } else {
            vec![(1, 1); self.k]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_classes == 0 {
            return bad("model.n_classes must be >= 1".into());
        }
        if self.channels.len() != CONV_LAYERS || self.channels.contains(&0) {
            return bad(format!(
                "model.channels needs {CONV_LAYERS} positive widths, got {:?}",
                self.channels
            ));
        }
        if self.pool.len() != CONV_LAYERS || self.pool.iter().any(|p| p.0 == 0 || p.1 == 0) {
            return bad(format!("model.pool needs {CONV_LAYERS} positive windows"));
        }
        if self.k == 0 {
            return bad("model.k must be >= 1".into());
        }
        if self.dilations.len() != 5 {
            return bad("dilations must be given for layers 2 to 6".into());
        }
        for (i, d) in self.dilations.iter().enumerate() {
            if d.len() != self.k {
                return bad(format!(
                    "layer {} has {} dilations but K = {}",
                    i + 2,
                    d.len(),
                    self.k
                ));
            }
            if d.iter().any(|&(t, f)| t == 0 || f == 0) {
                return bad(format!("layer {} has a zero dilation", i + 2));
            }
        }
        if self.gru_hidden == 0 || self.gru_layers == 0 {
            return bad("GRU width and depth must be >= 1".into());
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad(format!("model.temperature must be positive, got {}", self.temperature));
        }
        if self.attention_reduction == 0 {
            return bad("model.attention_reduction must be >= 1".into());
        }
        let mut f = self.mel_bins;
        for (i, p) in self.pool[..6].iter().enumerate() {
            if !f.is_multiple_of(p.1) {
                return bad(format!(
                    "frequency pooling {} at layer {} does not divide {f} bins",
                    p.1,
                    i + 1
                ));
            }
            f /= p.1;
        }
        if f != 2 {
            return bad(format!(
                "pooling schedule leaves {f} frequency bins before layer 7, expected 2 (mel bins {})",
                self.mel_bins
            ));
        }
        if !f.is_multiple_of(self.pool[6].1) {
            return bad("layer 7 frequency pooling does not divide 2".into());
        }
        Ok(())
    }

    /// Width of the recurrent block input.
    pub fn gru_input(&self) -> usize {
        self.channels[6] * (2 / self.pool[6].1)
    }

    /// `model.key = value` lines with every field explicit.
    pub fn to_canonical_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let pairs = |v: &[(usize, usize)]| {
            v.iter()
                .map(|(a, b)| format!("{a}x{b}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(s, "model.n_classes = {}", self.n_classes).unwrap();
        writeln!(s, "model.mel_bins = {}", self.mel_bins).unwrap();
        writeln!(s, "model.channels = {}", list(&self.channels)).unwrap();
        writeln!(s, "model.pool = {}", pairs(&self.pool)).unwrap();
        writeln!(s, "model.k = {}", self.k).unwrap();
        for (i, d) in self.dilations.iter().enumerate() {
            writeln!(s, "model.dilations.{} = {}", i + 2, pairs(d)).unwrap();
        }
        writeln!(s, "model.gru_hidden = {}", self.gru_hidden).unwrap();
        writeln!(s, "model.gru_layers = {}", self.gru_layers).unwrap();
        writeln!(s, "model.temperature = {:?}", self.temperature).unwrap();
        writeln!(s, "model.attention_reduction = {}", self.attention_reduction).unwrap();
        s
    }

    /// Builds a config from `model.*` keys (prefix already stripped).
    ///
    /// Dilations may be given per layer (`dilations.3 = 1x1,1x2,...`), for
    /// all of layers 2 to 6 at once (`dilations_f`, `dilations_t`), or as a
    /// named `preset`. Unset layers default to `(1, 1)` for every kernel.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut k: Option<usize> = None;
        let mut all_f: Option<Vec<usize>> = None;
        let mut all_t: Option<Vec<usize>> = None;
        let mut preset_d: Option<Vec<(usize, usize)>> = None;
        let mut per_layer: [Option<Vec<(usize, usize)>>; 5] = Default::default();
        let err = |key: &str, detail: String| Error::Config(format!("model.{key}: {detail}"));

        for (key, value) in pairs {
            let v = value.as_str();
            match key.as_str() {
                "n_classes" => cfg.n_classes = parse_num(v).map_err(|e| err(key, e))?,
                "mel_bins" => cfg.mel_bins = parse_num(v).map_err(|e| err(key, e))?,
                "channels" => cfg.channels = parse_list(v).map_err(|e| err(key, e))?,
                "pool" => cfg.pool = parse_pairs(v).map_err(|e| err(key, e))?,
                "k" => k = Some(parse_num(v).map_err(|e| err(key, e))?),
                "gru_hidden" => cfg.gru_hidden = parse_num(v).map_err(|e| err(key, e))?,
                "gru_layers" => cfg.gru_layers = parse_num(v).map_err(|e| err(key, e))?,
                "attention_reduction" => {
                    cfg.attention_reduction = parse_num(v).map_err(|e| err(key, e))?
                }
                "temperature" => {
                    cfg.temperature = v
                        .parse()
                        .map_err(|_| err(key, format!("not a number: {v:?}")))?
                }
                "dilations_f" => all_f = Some(parse_list(v).map_err(|e| err(key, e))?),
                "dilations_t" => all_t = Some(parse_list(v).map_err(|e| err(key, e))?),
                "preset" => {
                    preset_d = Some(preset(v).ok_or_else(|| {
                        err(
                            key,
                            format!(
                                "unknown preset {v:?}; known: {}",
                                PRESETS.iter().map(|p| p.0).collect::<Vec<_>>().join(", ")
                            ),
                        )
                    })?)
                }
                other => {
                    let layer = other
                        .strip_prefix("dilations.")
                        .and_then(|l| l.parse::<usize>().ok())
                        .filter(|l| (2..=6).contains(l))
                        .ok_or_else(|| Error::Config(format!("unknown key model.{other}")))?;
                    per_layer[layer - 2] = Some(parse_pairs(v).map_err(|e| err(key, e))?);
                }
            }
        }

        let shared: Option<Vec<(usize, usize)>> = match (all_f, all_t) {
            (None, None) => preset_d,
            (f, t) => {
                if preset_d.is_some() {
                    return Err(Error::Config(
                        "model.preset conflicts with model.dilations_f / dilations_t".into(),
                    ));
                }
                let n = f.as_ref().or(t.as_ref()).map(Vec::len).unwrap_or(0);
                let f = f.unwrap_or_else(|| vec![1; n]);
                let t = t.unwrap_or_else(|| vec![1; n]);
                if f.len() != t.len() {
                    return Err(Error::Config(format!(
                        "model.dilations_t has {} entries, model.dilations_f has {}",
                        t.len(),
                        f.len()
                    )));
                }
                Some(t.into_iter().zip(f).collect())
            }
        };

        let implied_k = shared
            .as_ref()
            .map(Vec::len)
            .or_else(|| per_layer.iter().flatten().map(Vec::len).next());
        cfg.k = match (k, implied_k) {
            (Some(k), Some(n)) if k != n => {
                return Err(Error::Config(format!(
                    "model.k = {k} but the dilation lists have {n} entries"
                )))
            }
            (Some(k), _) => k,
            (None, Some(n)) => n,
            (None, None) => cfg.k,
        };
        let base = shared.unwrap_or_else(|| vec![(1, 1); cfg.k]);
        cfg.dilations = per_layer
            .into_iter()
            .map(|d| d.unwrap_or_else(|| base.clone()))
            .collect();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_num(v: &str) -> std::result::Result<usize, String> {
    v.trim()
        .parse()
        .map_err(|_| format!("expected a non-negative integer, got {v:?}"))
}

pub(crate) fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(',').map(parse_num).collect()
}

/// `1x2,3x4` or `1:2,3:4`.
fn parse_pairs(v: &str) -> std::result::Result<Vec<(usize, usize)>, String> {
    v.split(',')
        .map(|item| {
            let (a, b) = item
                .trim()
                .split_once(['x', ':'])
                .ok_or_else(|| format!("expected TxF pairs, got {item:?}"))?;
            Ok((parse_num(a)?, parse_num(b)?))
        })
        .collect()
}
