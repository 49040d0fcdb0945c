//! Convolutional recurrent network with strong (frame) and weak (clip) heads.
//!
//! ```text
//! mel [B,1,T,F]
//!   -> conv1 (plain 3x3) -> BN -> SiLU -> pool
//!   -> conv2..conv6 (dynamic, configurable dilations) -> BN -> SiLU -> pool
//!   -> conv7 (dynamic, undilated) -> BN -> SiLU -> pool
//!   -> [B, T', C*F'] -> bidirectional GRU x N
//!   -> strong = sigmoid(FC)            [B, T', classes]
//!   -> weak   = sum_t strong * softmax_t(FC_att)   [B, classes]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, CONV_LAYERS};
use crate::dyn_conv::{
    dfd_forward, fan_in_bound, layer_param_count, AttentionMap, AttentionMode, DfdLayerConfig,
    DfdLayerParams, DfdLayerVars,
};
use crate::error::{Error, Result};
use crate::gru::{bidirectional, GruParams, GruVars};
use crate::kernels::Conv2dSpec;
use crate::tape::{ChannelStats, Tape, Var};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNormParams {
    fn new(c: usize) -> Self {
        BatchNormParams {
            gamma: Tensor::ones(&[c]),
            beta: Tensor::zeros(&[c]),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::ones(&[c]),
        }
    }

    /// Exponential moving update from one batch's statistics.
    pub fn update_running(&mut self, stats: &ChannelStats) {
        let unbias = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        for (r, m) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        LinearParams {
            weight: Tensor::uniform(&[output, input], fan_in_bound(input), rng),
            bias: Tensor::zeros(&[output]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Crnn {
    pub config: ModelConfig,
    pub seed: u64,
    /// Layer 1 kernel `[C1, 1, 3, 3]`. No bias: the following batch norm
    /// removes any per-channel offset.
    pub conv1: Tensor,
    /// Layers 2 to 7.
    pub dyn_layers: Vec<DfdLayerParams>,
    pub norms: Vec<BatchNormParams>,
    /// `(forward, backward)` per recurrent layer.
    pub grus: Vec<(GruParams, GruParams)>,
    pub strong_head: LinearParams,
    pub weak_head: LinearParams,
}

/// Handles for every trainable tensor of a [`Crnn`] on a tape.
#[derive(Clone, Debug)]
pub struct CrnnVars {
    pub conv1: Var,
    pub dyn_layers: Vec<DfdLayerVars>,
    /// `(gamma, beta)` per conv layer.
    pub norms: Vec<(Var, Var)>,
    pub grus: Vec<(GruVars, GruVars)>,
    pub strong: (Var, Var),
    pub weak: (Var, Var),
    /// Same order as [`Crnn::named_params`].
    pub named: Vec<(String, Var)>,
}

#[derive(Clone, Debug)]
pub struct CrnnOutput {
    /// `[B, T', classes]`
    pub strong: Var,
    /// `[B, classes]`
    pub weak: Var,
    /// `pi[B, K, F_l]` for layers 2 to 7, when recorded.
    pub attention: Vec<Var>,
    /// Batch statistics per conv layer (training mode only).
    pub batch_stats: Vec<ChannelStats>,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub strong: Tensor,
    pub weak: Tensor,
    pub attention: Vec<AttentionMap>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Batch statistics in normalization (and report them) instead of the
    /// running estimates.
    pub training: bool,
    pub record_attention: bool,
}

impl Crnn {
    pub fn dyn_layer_config(&self, layer: usize) -> DfdLayerConfig {
        dyn_layer_config(&self.config, layer)
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("conv1.weight".to_string(), &self.conv1)];
        for (i, l) in self.dyn_layers.iter().enumerate() {
            for (name, t) in l.named() {
                out.push((format!("conv{}.{name}", i + 2), t));
            }
        }
        for (i, n) in self.norms.iter().enumerate() {
            out.push((format!("bn{}.gamma", i + 1), &n.gamma));
            out.push((format!("bn{}.beta", i + 1), &n.beta));
        }
        for (i, (f, b)) in self.grus.iter().enumerate() {
            for (dir, p) in [("fwd", f), ("bwd", b)] {
                for (name, t) in p.named() {
                    out.push((format!("gru{}.{dir}.{name}", i + 1), t));
                }
            }
        }
        out.push(("strong.weight".into(), &self.strong_head.weight));
        out.push(("strong.bias".into(), &self.strong_head.bias));
        out.push(("weak_att.weight".into(), &self.weak_head.weight));
        out.push(("weak_att.bias".into(), &self.weak_head.bias));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("conv1.weight".to_string(), &mut self.conv1)];
        for (i, l) in self.dyn_layers.iter_mut().enumerate() {
            for (name, t) in l.named_mut() {
                out.push((format!("conv{}.{name}", i + 2), t));
            }
        }
        for (i, n) in self.norms.iter_mut().enumerate() {
            out.push((format!("bn{}.gamma", i + 1), &mut n.gamma));
            out.push((format!("bn{}.beta", i + 1), &mut n.beta));
        }
        for (i, (f, b)) in self.grus.iter_mut().enumerate() {
            for (dir, p) in [("fwd", f), ("bwd", b)] {
                for (name, t) in p.named_mut() {
                    out.push((format!("gru{}.{dir}.{name}", i + 1), t));
                }
            }
        }
        out.push(("strong.weight".into(), &mut self.strong_head.weight));
        out.push(("strong.bias".into(), &mut self.strong_head.bias));
        out.push(("weak_att.weight".into(), &mut self.weak_head.weight));
        out.push(("weak_att.bias".into(), &mut self.weak_head.bias));
        out
    }

    /// Non-trainable state (normalization running statistics).
    pub fn named_buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, n) in self.norms.iter().enumerate() {
            out.push((format!("bn{}.running_mean", i + 1), &n.running_mean));
            out.push((format!("bn{}.running_var", i + 1), &n.running_var));
        }
        out
    }

    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, n) in self.norms.iter_mut().enumerate() {
            out.push((format!("bn{}.running_mean", i + 1), &mut n.running_mean));
            out.push((format!("bn{}.running_var", i + 1), &mut n.running_var));
        }
        out
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn bind(&self, tape: &Tape, requires_grad: bool) -> Result<CrnnVars> {
        let vars: Vec<Var> = self
            .named_params()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone(), requires_grad))
            .collect();
        CrnnVars::from_flat(&self.config, tape, &vars)
    }

    /// Inference with running normalization statistics.
    pub fn predict(&self, mel: &Tensor, record_attention: bool) -> Result<Prediction> {
        let tape = Tape::new();
        let vars = self.bind(&tape, false)?;
        let x = tape.constant(mel.clone());
        let out = crnn_forward(
            &tape,
            self,
            &vars,
            x,
            ForwardOptions {
                training: false,
                record_attention,
            },
        )?;
        let strong = tape.value(out.strong).clone();
        let weak = tape.value(out.weak).clone();
        let attention = out
            .attention
            .iter()
            .map(|&v| AttentionMap {
                pi: tape.value(v).clone(),
            })
            .collect();
        Ok(Prediction {
            strong,
            weak,
            attention,
        })
    }
}

impl CrnnVars {
    /// Rebuilds handles from a flat list in [`Crnn::named_params`] order.
    pub fn from_flat(cfg: &ModelConfig, tape: &Tape, vars: &[Var]) -> Result<Self> {
        let names = param_names(cfg);
        if vars.len() != names.len() {
            return Err(Error::invalid(
                "crnn",
                format!("expected {} parameter tensors, got {}", names.len(), vars.len()),
            ));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let conv1 = next();
        let mut dyn_layers = Vec::with_capacity(CONV_LAYERS - 1);
        for _ in 1..CONV_LAYERS {
            let flat: Vec<Var> = (0..2 * cfg.k + 4).map(|_| next()).collect();
            dyn_layers.push(DfdLayerVars::from_flat(&flat, cfg.k)?);
        }
        let norms = (0..CONV_LAYERS).map(|_| (next(), next())).collect();
        let mut grus = Vec::with_capacity(cfg.gru_layers);
        for _ in 0..cfg.gru_layers {
            let f = GruVars::new(tape, next(), next(), next())?;
            let b = GruVars::new(tape, next(), next(), next())?;
            grus.push((f, b));
        }
        let strong = (next(), next());
        let weak = (next(), next());
        Ok(CrnnVars {
            conv1,
            dyn_layers,
            norms,
            grus,
            strong,
            weak,
            named: names.into_iter().zip(vars.iter().copied()).collect(),
        })
    }
}

fn param_names(cfg: &ModelConfig) -> Vec<String> {
    // Cheap structural walk; mirrors Crnn::named_params.
    let mut names = vec!["conv1.weight".to_string()];
    for l in 2..=CONV_LAYERS {
        for i in 0..cfg.k {
            names.push(format!("conv{l}.basis.{i}.weight"));
            names.push(format!("conv{l}.basis.{i}.bias"));
        }
        for n in ["att.w1", "att.b1", "att.w2", "att.b2"] {
            names.push(format!("conv{l}.{n}"));
        }
    }
    for l in 1..=CONV_LAYERS {
        names.push(format!("bn{l}.gamma"));
        names.push(format!("bn{l}.beta"));
    }
    for g in 1..=cfg.gru_layers {
        for dir in ["fwd", "bwd"] {
            for n in ["w_input", "w_hidden", "bias"] {
                names.push(format!("gru{g}.{dir}.{n}"));
            }
        }
    }
    for n in ["strong.weight", "strong.bias", "weak_att.weight", "weak_att.bias"] {
        names.push(n.to_string());
    }
    names
}

/// Config of the dynamic layer at conv index `layer` (1..=6, i.e. layers 2 to 7).
pub fn dyn_layer_config(cfg: &ModelConfig, layer: usize) -> DfdLayerConfig {
    DfdLayerConfig {
        in_channels: cfg.channels[layer - 1],
        out_channels: cfg.channels[layer],
        dilations: cfg.layer_dilations(layer),
        temperature: cfg.temperature,
        attention_reduction: cfg.attention_reduction,
    }
}

/// Deterministic construction from `seed`.
pub fn build_crnn(config: &ModelConfig, seed: u64) -> Result<Crnn> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = &config.channels;
    let conv1 = Tensor::uniform(&[c[0], 1, 3, 3], fan_in_bound(9), &mut rng);
    let dyn_layers = (1..CONV_LAYERS)
        .map(|l| DfdLayerParams::init_with(&dyn_layer_config(config, l), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let norms = c.iter().map(|&ch| BatchNormParams::new(ch)).collect();
    let h = config.gru_hidden;
    let mut grus = Vec::with_capacity(config.gru_layers);
    for i in 0..config.gru_layers {
        let input = if i == 0 { config.gru_input() } else { 2 * h };
        let f = GruParams::init(input, h, &mut rng);
        let b = GruParams::init(input, h, &mut rng);
        grus.push((f, b));
    }
    let strong_head = LinearParams::init(2 * h, config.n_classes, &mut rng);
    let weak_head = LinearParams::init(2 * h, config.n_classes, &mut rng);
    Ok(Crnn {
        config: config.clone(),
        seed,
        conv1,
        dyn_layers,
        norms,
        grus,
        strong_head,
        weak_head,
    })
}

/// Exact number of trainable scalars.
pub fn model_param_count(model: &Crnn) -> usize {
    model.named_params().iter().map(|(_, t)| t.len()).sum()
}

/// Trainable scalar count computed from the config alone.
pub fn config_param_count(cfg: &ModelConfig) -> usize {
    let c = &cfg.channels;
    let conv1 = c[0] * 9;
    let dynamic: usize = (1..CONV_LAYERS)
        .map(|l| layer_param_count(&dyn_layer_config(cfg, l)))
        .sum();
    let norms: usize = c.iter().map(|ch| 2 * ch).sum();
    let h = cfg.gru_hidden;
    let gru: usize = (0..cfg.gru_layers)
        .map(|i| {
            let input = if i == 0 { cfg.gru_input() } else { 2 * h };
            2 * (3 * h * input + 3 * h * h + 3 * h)
        })
        .sum();
    let heads = 2 * (2 * h * cfg.n_classes + cfg.n_classes);
    conv1 + dynamic + norms + gru + heads
}

pub fn crnn_forward(
    tape: &Tape,
    model: &Crnn,
    vars: &CrnnVars,
    mel: Var,
    opts: ForwardOptions,
) -> Result<CrnnOutput> {
    let cfg = &model.config;
    let s = tape.shape(mel);
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::shape("crnn", format!("input {s:?}, expected [B, 1, T, F]")));
    }
    if s[3] != cfg.mel_bins {
        return Err(Error::shape(
            "crnn",
            format!("input has {} frequency bins, model expects {}", s[3], cfg.mel_bins),
        ));
    }
    let tp = cfg.time_pool();
    if !s[2].is_multiple_of(tp) {
        return Err(Error::shape(
            "crnn",
            format!("{} frames not divisible by time pooling {tp}", s[2]),
        ));
    }
    let b = s[0];

    let mut attention = Vec::new();
    let mut batch_stats = Vec::new();
    let mut x = mel;
    for layer in 0..CONV_LAYERS {
        x = if layer == 0 {
            tape.conv2d(x, vars.conv1, None, Conv2dSpec::same_3x3((1, 1)))?
        } else {
            if layer == CONV_LAYERS - 1 {
                let f = tape.shape(x)[3];
                assert_eq!(f, 2, "layer 7 must see exactly 2 frequency bins");
            }
            let lcfg = dyn_layer_config(cfg, layer);
            let out = dfd_forward(tape, x, &vars.dyn_layers[layer - 1], &lcfg, &AttentionMode::Learned)?;
            if opts.record_attention {
                attention.push(out.pi);
            }
            out.y
        };
        let (gamma, beta) = vars.norms[layer];
        let norm = &model.norms[layer];
        let running = (!opts.training).then(|| (norm.running_mean.data(), norm.running_var.data()));
        let (y, stats) = tape.batch_norm(x, gamma, beta, running)?;
        if opts.training {
            batch_stats.push(stats);
        }
        x = tape.silu(y);
        if cfg.pool[layer] != (1, 1) {
            x = tape.avg_pool2d(x, cfg.pool[layer])?;
        }
    }

    // [B, C, T', F'] -> [B, T', C * F']
    let cs = tape.shape(x);
    let t_out = cs[2];
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    let mut seq = tape.reshape(x, &[b, t_out, cs[1] * cs[3]])?;
    for (f, r) in &vars.grus {
        seq = bidirectional(tape, seq, f, r)?;
    }
    let width = tape.shape(seq)[2];
    let rows = tape.reshape(seq, &[b * t_out, width])?;
    let n = cfg.n_classes;
    let logits = tape.linear(rows, vars.strong.0, Some(vars.strong.1))?;
    let strong = tape.sigmoid(logits);
    let strong = tape.reshape(strong, &[b, t_out, n])?;
    let att = tape.linear(rows, vars.weak.0, Some(vars.weak.1))?;
    let att = tape.reshape(att, &[b, t_out, n])?;
    let att = tape.softmax(att, 1, 1.0)?;
    let weighted = tape.mul(strong, att)?;
    let weak = tape.sum_axis(weighted, 1)?;
    Ok(CrnnOutput {
        strong,
        weak,
        attention,
        batch_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_from_config_matches_model() {
        for cfg in [
            ModelConfig::default(),
            ModelConfig::default().with_dilations(&[(1, 1), (1, 2), (1, 3), (1, 3), (2, 1)]),
        ] {
            let m = build_crnn(&cfg, 1).unwrap();
            assert_eq!(model_param_count(&m), config_param_count(&cfg));
        }
    }

    #[test]
    fn names_are_consistent() {
        let m = build_crnn(&ModelConfig::default(), 0).unwrap();
        let a: Vec<String> = m.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(a, param_names(&m.config));
        let mut m2 = m.clone();
        let b: Vec<String> = m2.named_params_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(a, b);
    }
}
