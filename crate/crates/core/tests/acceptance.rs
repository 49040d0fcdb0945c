//! Acceptance criteria, one test each. Run with `--nocapture` to see the
//! PASS/FAIL summary line printed by every criterion.

use std::collections::BTreeSet;
use std::time::Instant;

use dfd_core::analysis::{attention_variance, collect_attention, AttentionRecord, LayerRecord};
use dfd_core::corpus::{class_names, load_corpus, write_corpus};
use dfd_core::data::sample_from_clip;
use dfd_core::dyn_conv::{dfd_eval, dfd_forward, init_dfd_layer, AttentionMode, DfdLayerConfig, DfdLayerVars};
use dfd_core::eval::{
    classwise_mf_search, intersection_f1, match_events, median_filter_1d, psds_lite, Event, MatchCriteria,
    MedianFilterPlan, ScoredClip,
};
use dfd_core::features::{mel_filterbank, stft, synth_corpus, AudioClip, MelConfig, Window, SAMPLE_RATE};
use dfd_core::gradcheck::grad_check;
use dfd_core::gru::{bidirectional, GruParams, GruVars};
use dfd_core::kernels::Conv2dSpec;
use dfd_core::model::micro::crnn_loss_gradcheck;
use dfd_core::model::{build_crnn, config_param_count, model_param_count, preset, ModelConfig};
use dfd_core::pipeline::evaluate;
use dfd_core::run_config::EvalConfig;
use dfd_core::training::{train, TrainConfig};
use dfd_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    println!("criterion {n:>2} [{name}]: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn best() -> Vec<(usize, usize)> {
    preset("best").unwrap()
}

#[test]
fn criterion_01_gradients() {
    let t0 = Instant::now();
    let tol = 1e-5;
    let mut r = rng(1);
    let mut results: Vec<(&str, f64)> = Vec::new();

    let x = Tensor::uniform(&[2, 3, 6, 7], 1.0, &mut r);
    let w = Tensor::uniform(&[4, 3, 3, 3], 0.5, &mut r);
    let b = Tensor::uniform(&[4], 0.5, &mut r);
    for dil in [(1, 1), (2, 3)] {
        let rep = grad_check(
            |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::same_3x3(dil))?;
                let sq = t.mul(y, y)?;
                Ok(t.sum(sq))
            },
            &[x.clone(), w.clone(), b.clone()],
            STEP,
            tol,
        );
        results.push(("conv2d", rep.max_rel_err));
    }

    let logits = Tensor::uniform(&[3, 5, 4], 2.0, &mut r);
    let rep = grad_check(
        |t, v| {
            let y = t.softmax(v[0], 1, 1.0)?;
            let sq = t.mul(y, y)?;
            Ok(t.sum(sq))
        },
        std::slice::from_ref(&logits),
        STEP,
        tol,
    );
    results.push(("softmax", rep.max_rel_err));
    // At high temperature the output is close to uniform and the squared sum
    // is nearly flat, so a random linear readout is used instead.
    let readout = Tensor::uniform(&[3, 5, 4], 1.0, &mut r);
    let rep = grad_check(
        |t, v| {
            let y = t.softmax(v[0], 1, 31.0)?;
            let c = t.constant(readout.clone());
            let yc = t.mul(y, c)?;
            Ok(t.sum(yc))
        },
        std::slice::from_ref(&logits),
        STEP,
        tol,
    );
    results.push(("softmax T=31", rep.max_rel_err));

    let seq = Tensor::uniform(&[2, 5, 3], 1.0, &mut r);
    let (fwd, bwd) = (GruParams::init(3, 4, &mut r), GruParams::init(3, 4, &mut r));
    let mut inputs = vec![seq];
    for p in [&fwd, &bwd] {
        inputs.extend(p.named().iter().map(|(_, t)| (*t).clone()));
    }
    let rep = grad_check(
        |t, v| {
            let f = GruVars::new(t, v[1], v[2], v[3])?;
            let g = GruVars::new(t, v[4], v[5], v[6])?;
            let y = bidirectional(t, v[0], &f, &g)?;
            let sq = t.mul(y, y)?;
            Ok(t.sum(sq))
        },
        &inputs,
        STEP,
        tol,
    );
    results.push(("gru", rep.max_rel_err));

    let cfg = DfdLayerConfig::new(3, 4, best());
    let mut p = init_dfd_layer(&cfg, 5).unwrap();
    for bias in &mut p.basis_biases {
        *bias = Tensor::uniform(bias.shape(), 0.5, &mut r);
    }
    let mut inputs = vec![Tensor::uniform(&[2, 3, 5, 9], 1.0, &mut r)];
    inputs.extend(p.named().iter().map(|(_, t)| (*t).clone()));
    let readout = Tensor::uniform(&[2, 4, 5, 9], 1.0, &mut r);
    let rep = grad_check(
        |t, v| {
            let vars = DfdLayerVars::from_flat(&v[1..], cfg.k())?;
            let out = dfd_forward(t, v[0], &vars, &cfg, &AttentionMode::Learned)?;
            let c = t.constant(readout.clone());
            let yc = t.mul(out.y, c)?;
            Ok(t.sum(yc))
        },
        &inputs,
        STEP,
        tol,
    );
    results.push(("dfd layer", rep.max_rel_err));

    let rep = crnn_loss_gradcheck(1, STEP, tol).unwrap();
    results.push(("micro-crnn loss", rep.max_rel_err));

    let secs = t0.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail: Vec<String> = results.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect();
    report(
        1,
        "gradients",
        worst < tol && secs < 60.0,
        &format!("max rel err {worst:.2e} (tol {tol:e}); {}; {secs:.1}s", detail.join(", ")),
    );
}

/// Independent count of what one more basis kernel adds to a layer.
fn kernel_increment(cin: usize, cout: usize, reduction: usize) -> usize {
    let hidden = (cin / reduction).max(1);
    cout * cin * 9 + cout + hidden + 1
}

#[test]
fn criterion_02_dilation_param_invariance() {
    let base = ModelConfig::default();
    let k4: Vec<&str> = vec![
        "fdy", "freq", "time", "both", "d2x1", "d2x2", "d2x3", "d2x4", "d3x1", "d3x2", "d4x1", "d4x2", "v1123",
        "v1223", "best", "v2233", "v1234",
    ];
    let counts: Vec<usize> = k4
        .iter()
        .map(|n| {
            let cfg = base.clone().with_dilations(&preset(n).unwrap());
            let c = model_param_count(&build_crnn(&cfg, 0).unwrap());
            assert_eq!(c, config_param_count(&cfg), "{n}");
            c
        })
        .collect();
    let same = counts.iter().all(|&c| c == counts[0]);
    let k5 = model_param_count(&build_crnn(&base.clone().with_dilations(&preset("freq5").unwrap()), 0).unwrap());
    let t5 = model_param_count(&build_crnn(&base.clone().with_dilations(&preset("time5").unwrap()), 0).unwrap());
    let c = &base.channels;
    let expected_delta: usize = (1..7).map(|l| kernel_increment(c[l - 1], c[l], base.attention_reduction)).sum();
    report(
        2,
        "dilation param invariance",
        same && k5 > counts[0] && k5 - counts[0] == expected_delta && t5 == k5,
        &format!(
            "{} K=4 presets all {} params; K=5 {} (delta {} vs enumerated {expected_delta})",
            k4.len(),
            counts[0],
            k5,
            k5 as i64 - counts[0] as i64
        ),
    );
}

/// Zero-padded dilated 3x3 convolution written out as loops.
fn oracle_conv(x: &Tensor, w: &Tensor, b: &Tensor, dil: (usize, usize)) -> Tensor {
    let (bs, cin, tt, ff) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let cout = w.shape()[0];
    let mut y = Tensor::zeros(&[bs, cout, tt, ff]);
    for bi in 0..bs {
        for o in 0..cout {
            for t in 0..tt {
                for f in 0..ff {
                    let mut acc = b.at(&[o]);
                    for c in 0..cin {
                        for i in 0..3 {
                            for k in 0..3 {
                                let ti = t as isize + (i as isize - 1) * dil.0 as isize;
                                let fi = f as isize + (k as isize - 1) * dil.1 as isize;
                                if ti >= 0 && fi >= 0 && (ti as usize) < tt && (fi as usize) < ff {
                                    acc += w.at(&[o, c, i, k]) * x.at(&[bi, c, ti as usize, fi as usize]);
                                }
                            }
                        }
                    }
                    y.set(&[bi, o, t, f], acc);
                }
            }
        }
    }
    y
}

#[test]
fn criterion_03_one_hot_oracle() {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = r.gen_range(1..=4);
        let dil: Vec<(usize, usize)> = (0..k).map(|_| (r.gen_range(1..=2), r.gen_range(1..=4))).collect();
        let cfg = DfdLayerConfig::new(r.gen_range(1..=3), r.gen_range(1..=3), dil.clone());
        let mut p = init_dfd_layer(&cfg, r.gen()).unwrap();
        for bias in &mut p.basis_biases {
            *bias = Tensor::uniform(bias.shape(), 1.0, &mut r);
        }
        let max_df = dil.iter().map(|d| d.1).max().unwrap();
        let shape = [r.gen_range(1..=2), cfg.in_channels, r.gen_range(3..=7), r.gen_range(max_df..=max_df + 5)];
        let x = Tensor::uniform(&shape, 1.0, &mut r);
        let j = r.gen_range(0..k);
        let (y, _) = dfd_eval(&x, &p, &cfg, &AttentionMode::OneHot(j)).unwrap();
        let want = oracle_conv(&x, &p.basis_weights[j], &p.basis_biases[j], dil[j]);
        worst = worst.max(y.max_abs_diff(&want));
    }
    report(3, "one-hot oracle", worst < 1e-12, &format!("max abs diff {worst:.2e} over 100 configs"));
}

/// Frequency offsets (relative to `f0`) whose outputs move when the input
/// column `f0` is perturbed.
fn sensitive_offsets(cfg: &DfdLayerConfig, seed: u64) -> BTreeSet<isize> {
    let mut r = rng(seed);
    let p = init_dfd_layer(cfg, seed).unwrap();
    let (tt, ff, f0) = (5, 17, 8);
    let x = Tensor::uniform(&[1, cfg.in_channels, tt, ff], 1.0, &mut r);
    let mut x2 = x.clone();
    for c in 0..cfg.in_channels {
        let v = x2.at(&[0, c, 2, f0]);
        x2.set(&[0, c, 2, f0], v + 0.5);
    }
    let (y1, _) = dfd_eval(&x, &p, cfg, &AttentionMode::Learned).unwrap();
    let (y2, _) = dfd_eval(&x2, &p, cfg, &AttentionMode::Learned).unwrap();
    let mut out = BTreeSet::new();
    for o in 0..cfg.out_channels {
        for t in 0..tt {
            for f in 0..ff {
                if (y1.at(&[0, o, t, f]) - y2.at(&[0, o, t, f])).abs() > 1e-12 {
                    out.insert(f as isize - f0 as isize);
                }
            }
        }
    }
    out
}

#[test]
fn criterion_04_receptive_field() {
    let mut ok = true;
    let mut detail = Vec::new();
    for d in 1..=4usize {
        let got = sensitive_offsets(&DfdLayerConfig::new(2, 3, vec![(1, d)]), 40 + d as u64);
        let want: BTreeSet<isize> = [-(d as isize), 0, d as isize].into();
        ok &= got == want;
        detail.push(format!("d_f={d} -> {got:?}"));
    }
    let got = sensitive_offsets(&DfdLayerConfig::new(2, 3, best()), 49);
    let want: BTreeSet<isize> = (-3..=3).collect();
    ok &= got == want;
    detail.push(format!("(1,2,3,3) -> span +/-{}", got.iter().map(|o| o.abs()).max().unwrap()));
    report(4, "receptive field", ok, &detail.join("; "));
}

#[test]
fn criterion_05_attention_normalization() {
    let mel = MelConfig::default();
    let fb = mel_filterbank(&mel).unwrap();
    let model = build_crnn(&ModelConfig::default().with_dilations(&best()), 5).unwrap();
    let clips = synth_corpus(500, "norm_", 100, 2.0, 3).unwrap();
    let feats: Vec<Tensor> = clips
        .iter()
        .map(|c| sample_from_clip(c, &mel, &fb, model.config.time_pool()).unwrap().features)
        .collect();
    let record = collect_attention(&model, &feats).unwrap();
    let mut worst = 0.0f64;
    let mut vectors = 0usize;
    let mut negative = false;
    for layer in &record.layers {
        for clip in &layer.vectors {
            for v in clip {
                worst = worst.max((v.iter().sum::<f64>() - 1.0).abs());
                negative |= v.iter().any(|&p| p < 0.0);
                vectors += 1;
            }
        }
    }
    report(
        5,
        "attention normalization",
        record.clips() == 100 && worst < 1e-9 && !negative,
        &format!("{vectors} vectors over {} clips, max |sum - 1| {worst:.2e}", record.clips()),
    );
}

/// `1/(2 N^2) sum_i sum_j ||w_i - w_j||^2`, which equals the spread about the mean.
fn pairwise_variance(vectors: &[Vec<f64>]) -> f64 {
    let n = vectors.len() as f64;
    let mut total = 0.0;
    for a in vectors {
        for b in vectors {
            total += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
    }
    total / (2.0 * n * n)
}

#[test]
fn criterion_06_variance_oracle() {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (n, bins, k, layers) = (r.gen_range(1..=12), r.gen_range(1..=6), r.gen_range(1..=5), r.gen_range(1..=3));
        let record = AttentionRecord {
            layers: (0..layers)
                .map(|l| LayerRecord {
                    layer: l + 2,
                    vectors: (0..n)
                        .map(|_| {
                            (0..bins)
                                .map(|_| {
                                    let raw: Vec<f64> = (0..k).map(|_| r.gen::<f64>()).collect();
                                    let s: f64 = raw.iter().sum();
                                    raw.iter().map(|v| v / s).collect()
                                })
                                .collect()
                        })
                        .collect(),
                })
                .collect(),
        };
        let stats = attention_variance(&record).unwrap();
        for (li, lr) in record.layers.iter().enumerate() {
            for f in 0..bins {
                let col: Vec<Vec<f64>> = lr.vectors.iter().map(|c| c[f].clone()).collect();
                worst = worst.max((stats.layers[li].1[f] - pairwise_variance(&col)).abs());
            }
        }
    }
    let hand = AttentionRecord {
        layers: vec![LayerRecord {
            layer: 2,
            vectors: vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
        }],
    };
    let hand_v = attention_variance(&hand).unwrap().layers[0].1[0];
    report(
        6,
        "variance oracle",
        worst < 1e-12 && hand_v == 0.5,
        &format!("max diff vs pairwise brute force {worst:.2e}; hand case {hand_v}"),
    );
}

// Scoring oracles work on a 1/8 s grid so every time is exact in binary.

const UNIT: f64 = 0.125;

#[derive(Clone, Debug)]
struct Cell {
    clip: usize,
    label: usize,
    on: usize,
    off: usize,
}

impl Cell {
    fn event(&self) -> Event {
        Event::new(format!("c{}", self.clip), format!("l{}", self.label), self.on as f64 * UNIT, self.off as f64 * UNIT)
            .unwrap()
    }

    fn shared(&self, o: &Cell) -> usize {
        if self.clip != o.clip || self.label != o.label {
            return 0;
        }
        (self.on..self.off).filter(|u| (o.on..o.off).contains(u)).count()
    }
}

/// Intersection matching by counting shared grid cells; `rho = num / den`.
fn oracle_match(dets: &[Cell], refs: &[Cell], rho: (usize, usize), rho_g: (usize, usize)) -> (usize, usize, usize) {
    let accepted: Vec<&Cell> = dets
        .iter()
        .filter(|d| refs.iter().map(|r| d.shared(r)).sum::<usize>() * rho.1 >= rho.0 * (d.off - d.on))
        .collect();
    let tp = refs
        .iter()
        .filter(|r| accepted.iter().map(|d| r.shared(d)).sum::<usize>() * rho_g.1 >= rho_g.0 * (r.off - r.on))
        .count();
    (tp, dets.len() - accepted.len(), refs.len() - tp)
}

fn oracle_f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn oracle_median(x: &[f64], len: usize) -> Vec<f64> {
    let half = (len / 2) as isize;
    (0..x.len() as isize)
        .map(|i| {
            let w: Vec<f64> = (i - half..=i + half)
                .map(|j| if j >= 0 && (j as usize) < x.len() { x[j as usize] } else { 0.0 })
                .collect();
            // the median is the value with at most `half` entries strictly on either side
            *w.iter()
                .find(|&&v| {
                    w.iter().filter(|&&u| u < v).count() as isize <= half
                        && w.iter().filter(|&&u| u > v).count() as isize <= half
                })
                .unwrap()
        })
        .collect()
}

/// Runs of frames above `th` as cells (one frame per grid unit).
fn oracle_runs(col: &[f64], th: f64, clip: usize, label: usize) -> Vec<Cell> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < col.len() {
        if col[t] > th {
            let s = t;
            while t < col.len() && col[t] > th {
                t += 1;
            }
            out.push(Cell { clip, label, on: s, off: t });
        } else {
            t += 1;
        }
    }
    out
}

fn random_cells(r: &mut ChaCha8Rng, clips: usize, labels: usize, max_each: usize, horizon: usize) -> Vec<Cell> {
    let mut out = Vec::new();
    for clip in 0..clips {
        for label in 0..labels {
            for _ in 0..r.gen_range(0..=max_each) {
                let on = r.gen_range(0..horizon - 1);
                let off = r.gen_range(on + 1..=(on + 8).min(horizon));
                out.push(Cell { clip, label, on, off });
            }
        }
    }
    out
}

fn label_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("l{i}")).collect()
}

/// Staircase area by evaluating `max{tpr : efpr <= x}` on each interval.
fn oracle_staircase(points: &[(f64, f64)], max_efpr: f64) -> f64 {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).filter(|&x| x <= max_efpr).collect();
    xs.push(0.0);
    xs.push(max_efpr);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let g = |x: f64| points.iter().filter(|p| p.0 <= x).map(|p| p.1).fold(0.0, f64::max);
    xs.windows(2).map(|w| g(w[0]) * (w[1] - w[0])).sum::<f64>() / max_efpr
}

#[test]
#[allow(clippy::needless_range_loop)]
fn criterion_07_scoring_oracles() {
    let mut r = rng(7);
    let rhos = [(1, 4), (1, 2), (3, 4), (1, 1)];
    let (mut med_bad, mut match_bad, mut f1_worst, mut psds_worst) = (0usize, 0usize, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        // median filter
        let x: Vec<f64> = (0..r.gen_range(1..=12)).map(|_| (r.gen_range(0..=10) as f64) / 10.0).collect();
        let len = [1, 3, 5, 7][r.gen_range(0..4)];
        if median_filter_1d(&x, len).unwrap() != oracle_median(&x, len) {
            med_bad += 1;
        }

        // matching and F1
        let labels = 2;
        let dets = random_cells(&mut r, 2, labels, 3, 24);
        let refs = random_cells(&mut r, 2, labels, 3, 24);
        let (rd, rg) = (rhos[r.gen_range(0..4)], rhos[r.gen_range(0..4)]);
        let crit = MatchCriteria {
            rho_dtc: rd.0 as f64 / rd.1 as f64,
            rho_gtc: rg.0 as f64 / rg.1 as f64,
        };
        let de: Vec<Event> = dets.iter().map(Cell::event).collect();
        let re: Vec<Event> = refs.iter().map(Cell::event).collect();
        let m = match_events(&de, &re, &crit);
        if (m.tp, m.fp, m.fn_) != oracle_match(&dets, &refs, rd, rg) {
            match_bad += 1;
        }
        let classes = label_names(labels);
        let f1 = intersection_f1(&de, &re, &crit, &classes);
        let mut macro_sum = 0.0;
        for (l, (_, counts, f)) in f1.per_class.iter().enumerate() {
            let d: Vec<Cell> = dets.iter().filter(|c| c.label == l).cloned().collect();
            let g: Vec<Cell> = refs.iter().filter(|c| c.label == l).cloned().collect();
            let (tp, fp, fn_) = oracle_match(&d, &g, rd, rg);
            if (counts.tp, counts.fp, counts.fn_) != (tp, fp, fn_) {
                match_bad += 1;
            }
            let want = oracle_f1(tp, fp, fn_);
            f1_worst = f1_worst.max((f - want).abs());
            macro_sum += want;
        }
        f1_worst = f1_worst.max((f1.macro_f1 - macro_sum / labels as f64).abs());

        // psds_lite over a tiny score grid
        let frames = r.gen_range(4..=16);
        let clips = r.gen_range(1..=3);
        let scores: Vec<Vec<Vec<f64>>> = (0..clips)
            .map(|_| (0..labels).map(|_| (0..frames).map(|_| r.gen_range(0..=10) as f64 / 10.0).collect()).collect())
            .collect();
        let refs = random_cells(&mut r, clips, labels, 2, frames);
        let thresholds = [0.15, 0.35, 0.55, 0.75];
        let hours = (clips * frames) as f64 * UNIT / 3600.0;
        let with_refs: Vec<usize> = (0..labels).filter(|&l| refs.iter().any(|c| c.label == l)).collect();
        let points: Vec<(f64, f64)> = thresholds
            .iter()
            .map(|&th| {
                let (mut tpr, mut efpr) = (0.0, 0.0);
                for l in 0..labels {
                    let d: Vec<Cell> =
                        (0..clips).flat_map(|c| oracle_runs(&scores[c][l], th, c, l)).collect();
                    let g: Vec<Cell> = refs.iter().filter(|c| c.label == l).cloned().collect();
                    let (tp, fp, _) = oracle_match(&d, &g, rd, rg);
                    if with_refs.contains(&l) {
                        tpr += tp as f64 / g.len() as f64;
                    }
                    efpr += fp as f64 / hours;
                }
                let tpr = if with_refs.is_empty() { 0.0 } else { tpr / with_refs.len() as f64 };
                (efpr / labels as f64, tpr)
            })
            .collect();
        let top = points.iter().map(|p| p.0).fold(0.0, f64::max);
        let max_efpr = (top * r.gen_range(0.3..1.3)).max(1.0);
        let scored: Vec<ScoredClip> = (0..clips)
            .map(|c| ScoredClip {
                clip_id: format!("c{c}"),
                probs: Tensor::from_vec(
                    &[frames, labels],
                    (0..frames).flat_map(|t| (0..labels).map(move |l| (t, l))).map(|(t, l)| scores[c][l][t]).collect(),
                )
                .unwrap(),
            })
            .collect();
        let re: Vec<Event> = refs.iter().map(Cell::event).collect();
        let got = psds_lite(&scored, &re, &crit, &thresholds, max_efpr, UNIT, &classes).unwrap();
        psds_worst = psds_worst.max((got - oracle_staircase(&points, max_efpr)).abs());
    }
    report(
        7,
        "scoring oracles",
        med_bad == 0 && match_bad == 0 && f1_worst < 1e-12 && psds_worst < 1e-12,
        &format!(
            "1000 scenarios: median mismatches {med_bad}, count mismatches {match_bad}, F1 max diff {f1_worst:.2e}, psds max diff {psds_worst:.2e}"
        ),
    );
}

#[test]
fn criterion_08_mf_search() {
    let mut r = rng(8);
    let classes = label_names(2);
    let frames = 64;
    let mut scored = Vec::new();
    let mut refs = Vec::new();
    for clip in 0..6 {
        let mut grid = vec![[0.05f64; 2]; frames];
        // class 0: two long events plus isolated one-frame spikes elsewhere
        let a = [(8 + clip, 24 + clip), (36, 50 - clip)];
        for &(on, off) in &a {
            grid[on..off].iter_mut().for_each(|g| g[0] = 0.9);
            refs.push(Cell { clip, label: 0, on, off });
        }
        let mut spikes = 0;
        while spikes < 3 {
            let t = r.gen_range(1..frames - 1);
            let clear = (t - 1..=t + 1).all(|u| grid[u][0] < 0.5 && !a.iter().any(|&(on, off)| (on..off).contains(&u)));
            if clear && !(a.iter().any(|&(on, off)| t + 1 >= on && t <= off + 1)) {
                grid[t][0] = 0.9;
                spikes += 1;
            }
        }
        // class 1: one clean long event
        let (on, off) = (5 + 2 * clip, 40 + clip);
        grid[on..off].iter_mut().for_each(|g| g[1] = 0.9);
        refs.push(Cell { clip, label: 1, on, off });
        scored.push((clip, grid));
    }
    let clips: Vec<ScoredClip> = scored
        .iter()
        .map(|(c, g)| ScoredClip {
            clip_id: format!("c{c}"),
            probs: Tensor::from_vec(&[frames, 2], g.iter().flat_map(|p| p.to_vec()).collect()).unwrap(),
        })
        .collect();
    let ref_events: Vec<Event> = refs.iter().map(Cell::event).collect();
    let candidates = [1, 3, 5, 7, 9];
    let plan = classwise_mf_search(&clips, &ref_events, &candidates, &MatchCriteria::default(), 0.5, UNIT, &classes)
        .unwrap();

    let mut want = Vec::new();
    for l in 0..2 {
        let mut best = (f64::NEG_INFINITY, 0);
        for &len in &candidates {
            let dets: Vec<Cell> = scored
                .iter()
                .flat_map(|(c, g)| {
                    let col: Vec<f64> = g.iter().map(|p| p[l]).collect();
                    oracle_runs(&oracle_median(&col, len), 0.5, *c, l)
                })
                .collect();
            let g: Vec<Cell> = refs.iter().filter(|c| c.label == l).cloned().collect();
            let (tp, fp, fn_) = oracle_match(&dets, &g, (1, 2), (1, 2));
            let f = oracle_f1(tp, fp, fn_);
            if f > best.0 {
                best = (f, len);
            }
        }
        want.push(best.1);
    }
    let got: Vec<usize> = classes.iter().map(|c| plan.length(c).unwrap()).collect();
    report(
        8,
        "class-wise median search",
        got == want && got[0] > 1 && got[1] == 1,
        &format!("selected {got:?}, exhaustive argmax {want:?}"),
    );
}

#[test]
fn criterion_09_toy_end_to_end() {
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let (train_dir, test_dir) = (tmp.path().join("train"), tmp.path().join("test"));
    write_corpus(&train_dir, &synth_corpus(1000, "train_", 32, 2.0, 3).unwrap()).unwrap();
    write_corpus(&test_dir, &synth_corpus(5000, "test_", 64, 2.0, 3).unwrap()).unwrap();
    let mel = MelConfig::default();
    let eval_cfg = EvalConfig::default();

    let run = |cfg: &ModelConfig, steps: usize| {
        let classes = class_names(cfg.n_classes).unwrap();
        let train_set = load_corpus(&train_dir, &mel, cfg.time_pool(), &classes).unwrap();
        let tc = TrainConfig {
            steps,
            seed: 1,
            ..TrainConfig::default()
        };
        let mut model = build_crnn(cfg, tc.seed).unwrap();
        let losses = train(&mut model, &train_set.samples, &tc, |_, _| {}).unwrap();
        (model, losses, classes)
    };

    let best_cfg = ModelConfig::default().with_dilations(&best());
    let (model, losses, classes) = run(&best_cfg, 600);
    let test_set = load_corpus(&test_dir, &mel, best_cfg.time_pool(), &classes).unwrap();
    let plan = MedianFilterPlan::uniform(&classes, eval_cfg.median).unwrap();
    let fd = mel.frame_duration(best_cfg.time_pool());
    let rep = evaluate(&model, &test_set.samples, &test_set.refs, &eval_cfg, &plan, fd, &classes).unwrap();

    let (_, fdy_losses, _) = run(&ModelConfig::default(), 300);
    let tail = |l: &[f64]| l[l.len() - 10..].iter().sum::<f64>() / 10.0;
    let fdy_drop = 1.0 - tail(&fdy_losses) / fdy_losses[0];
    let secs = t0.elapsed().as_secs_f64();
    report(
        9,
        "toy end-to-end",
        rep.f1.macro_f1 > 0.8 && fdy_drop >= 0.5 && secs < 600.0,
        &format!(
            "best DFD macro F1 {:.3} (psds_lite {:.3}, loss {:.3} -> {:.3}); FDY loss drop {:.0}%; {secs:.0}s",
            rep.f1.macro_f1,
            rep.psds,
            losses[0],
            tail(&losses),
            100.0 * fdy_drop
        ),
    );
}

#[test]
fn criterion_10_feature_contract() {
    let n = 10 * SAMPLE_RATE as usize;
    let sine: Vec<f64> =
        (0..n).map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / SAMPLE_RATE as f64).sin()).collect();
    let cfg = MelConfig::default();
    let spec = stft(&sine, cfg.n_fft, cfg.hop, cfg.window).unwrap();
    let frames = spec.shape()[0];
    let bins = spec.shape()[1];
    let mid = frames / 2;
    let row = &spec.data()[mid * bins..(mid + 1) * bins];
    let peak = (0..bins).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    let expected_peak = (440.0 * cfg.n_fft as f64 / SAMPLE_RATE as f64).round() as usize;
    let mel = dfd_core::features::logmel(&AudioClip::new(sine), &cfg).unwrap();
    let constants = (cfg.sample_rate, cfg.n_fft, cfg.hop, cfg.window, cfg.n_mels) == (16000, 2048, 256, Window::Hamming, 128);
    report(
        10,
        "feature contract",
        frames == 626 && peak == 56 && expected_peak == 56 && constants && mel.shape() == [1, 1, 626, 128],
        &format!("{frames} frames, 440 Hz peak at bin {peak}, log-mel {:?}, constants ok: {constants}", mel.shape()),
    );
}
