use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dfd_core::analysis::{attention_variance, collect_attention, export_variance};
use dfd_core::corpus::{class_names, load_corpus, write_corpus, Corpus};
use dfd_core::eval::{classwise_mf_search, MedianFilterPlan};
use dfd_core::features::synth::synth_corpus;
use dfd_core::model::micro::crnn_loss_gradcheck;
use dfd_core::model::{build_crnn, load_checkpoint, save_checkpoint, Crnn};
use dfd_core::pipeline::evaluate;
use dfd_core::run_config::{parse_config, RunConfig};
use dfd_core::training::{score_samples, train};
use dfd_core::Error;

const CHECKPOINT_FILE: &str = "model.dfdc";
const LOSS_FILE: &str = "loss.csv";
const F1_FILE: &str = "f1.csv";
const METRICS_FILE: &str = "metrics.txt";
const DETECTIONS_FILE: &str = "detections.tsv";
const PLAN_FILE: &str = "median_plan.txt";
const VARIANCE_FILE: &str = "attention_variance.csv";

/// Sound event detection with dilated frequency dynamic convolution.
#[derive(Parser, Debug)]
#[command(name = "dfdsed", version)]
struct Cli {
    /// Run configuration (`section.key = value` lines); defaults if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for synthesis, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// More logging (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus of WAV clips plus refs.tsv into --out.
    Synth {
        #[arg(long, default_value_t = 32)]
        clips: usize,
        /// Clip length in seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 3)]
        max_events: usize,
        /// File name prefix; clips are named `<prefix>NNNN.wav`.
        #[arg(long, default_value = "clip_")]
        prefix: String,
    },
    /// Train on a corpus; writes model.dfdc and loss.csv.
    Train {
        /// Corpus directory (overrides `train.data`).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference check of the training loss on a micro model.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
    /// Score a corpus; writes f1.csv, metrics.txt and detections.tsv.
    Eval {
        /// Defaults to <out>/model.dfdc.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Per-class median lengths (overrides `eval.plan`).
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Pick a median filter length per class; writes median_plan.txt.
    MfSearch {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Spread of attention vectors across clips; writes attention_variance.csv.
    AttVar {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    /// Bad input, config or arguments (exit 1).
    Validation(String),
    /// Numeric or I/O failure while running (exit 2).
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match &e {
            Error::Config(_)
            | Error::ConfigSyntax { .. }
            | Error::Format(_)
            | Error::Audio(_)
            | Error::InvalidArgument { .. }
            | Error::CorruptCheckpoint(_)
            | Error::CheckpointMismatch(_) => Failure::Validation(e.to_string()),
            Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::NotFound | std::io::ErrorKind::InvalidInput) => {
                Failure::Validation(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_run_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pick_dir(flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| Failure::Validation(format!("no {what} corpus: pass --data or set it in the config")))
}

fn open_checkpoint(cli: &Cli, flag: &Option<PathBuf>, cfg: &RunConfig) -> CliResult<Crnn> {
    let path = flag.clone().unwrap_or_else(|| cli.out.join(CHECKPOINT_FILE));
    if !path.is_file() {
        return Err(Failure::Validation(format!("checkpoint {} not found", path.display())));
    }
    let model = load_checkpoint(&path)?;
    if model.config.mel_bins != cfg.feature.n_mels {
        return Err(Failure::Validation(format!(
            "checkpoint expects {} mel bins but feature.n_mels = {}",
            model.config.mel_bins, cfg.feature.n_mels
        )));
    }
    Ok(model)
}

fn load_for(model: &Crnn, cfg: &RunConfig, dir: &Path) -> CliResult<(Corpus, Vec<String>)> {
    let classes = class_names(model.config.n_classes)?;
    let corpus = load_corpus(dir, &cfg.feature, model.config.time_pool(), &classes)?;
    Ok((corpus, classes))
}

fn frame_duration(model: &Crnn, cfg: &RunConfig) -> f64 {
    cfg.feature.frame_duration(model.config.time_pool())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth {
            clips,
            duration,
            max_events,
            prefix,
        } => {
            if *clips == 0 {
                return Err(Failure::Validation("--clips must be positive".into()));
            }
            let corpus = synth_corpus(cli.seed.unwrap_or(0), prefix, *clips, *duration, *max_events)?;
            write_corpus(&cli.out, &corpus)?;
            let events: usize = corpus.iter().map(|c| c.events.len()).sum();
            println!("wrote {clips} clips with {events} events to {}", cli.out.display());
        }
        Command::Train { data } => {
            let cfg = load_run_config(cli)?;
            let dir = pick_dir(data, &cfg.train_data.dir, "training")?;
            let classes = class_names(cfg.model.n_classes)?;
            let corpus = load_corpus(&dir, &cfg.feature, cfg.model.time_pool(), &classes)?;
            let mut model = build_crnn(&cfg.model, cfg.train.seed)?;
            log::info!("training on {} clips for {} steps", corpus.samples.len(), cfg.train.steps);
            let losses = train(&mut model, &corpus.samples, &cfg.train, |step, loss| {
                if step % 50 == 0 {
                    log::info!("step {step} loss {loss:.5}");
                }
            })?;
            fs::create_dir_all(&cli.out)?;
            save_checkpoint(&model, &cli.out.join(CHECKPOINT_FILE))?;
            let mut log_text = String::from("step,loss\n");
            for (i, l) in losses.iter().enumerate() {
                let _ = writeln!(log_text, "{},{l}", i + 1);
            }
            fs::write(cli.out.join(LOSS_FILE), log_text)?;
            println!(
                "loss {:.5} -> {:.5}; checkpoint {}",
                losses[0],
                losses[losses.len() - 1],
                cli.out.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Gradcheck { tol, step } => {
            if !(*tol > 0.0 && *step > 0.0) {
                return Err(Failure::Validation("--tol and --step must be positive".into()));
            }
            let r = crnn_loss_gradcheck(cli.seed.unwrap_or(1), *step, *tol)?;
            println!("max relative error {:.3e} over {} entries", r.max_rel_err, r.checked);
            if !r.pass {
                return Err(Failure::Runtime(format!(
                    "gradient check failed: {:.3e} > {tol:e} at {:?}",
                    r.max_rel_err, r.worst
                )));
            }
        }
        Command::Eval { checkpoint, data, plan } => {
            let cfg = load_run_config(cli)?;
            let model = open_checkpoint(cli, checkpoint, &cfg)?;
            let dir = pick_dir(data, &cfg.eval.data.dir, "evaluation")?;
            let (corpus, classes) = load_for(&model, &cfg, &dir)?;
            let plan = match plan.as_ref().or(cfg.eval.plan.as_ref()) {
                Some(p) => MedianFilterPlan::load(p)?,
                None => MedianFilterPlan::uniform(&classes, cfg.eval.median)?,
            };
            let fd = frame_duration(&model, &cfg);
            let report = evaluate(&model, &corpus.samples, &corpus.refs, &cfg.eval, &plan, fd, &classes)?;
            fs::create_dir_all(&cli.out)?;
            let mut csv = String::from("class,tp,fp,fn,f1\n");
            for (name, c, f) in &report.f1.per_class {
                let _ = writeln!(csv, "{name},{},{},{},{f:.6}", c.tp, c.fp, c.fn_);
            }
            let _ = writeln!(csv, "macro,,,,{:.6}", report.f1.macro_f1);
            fs::write(cli.out.join(F1_FILE), csv)?;
            fs::write(
                cli.out.join(METRICS_FILE),
                format!("macro_f1={:.6}\npsds_lite={:.6}\n", report.f1.macro_f1, report.psds),
            )?;
            dfd_core::eval::write_events_tsv(&report.detections, &cli.out.join(DETECTIONS_FILE))?;
            println!("macro F1 {:.4}  psds_lite {:.4}", report.f1.macro_f1, report.psds);
        }
        Command::MfSearch { checkpoint, data } => {
            let cfg = load_run_config(cli)?;
            let model = open_checkpoint(cli, checkpoint, &cfg)?;
            let dir = pick_dir(data, &cfg.eval.data.dir, "evaluation")?;
            let (corpus, classes) = load_for(&model, &cfg, &dir)?;
            let scores = score_samples(&model, &corpus.samples, cfg.eval.batch_size)?;
            let plan = classwise_mf_search(
                &scores,
                &corpus.refs,
                &cfg.eval.median_candidates,
                &cfg.eval.criteria,
                cfg.eval.threshold,
                frame_duration(&model, &cfg),
                &classes,
            )?;
            fs::create_dir_all(&cli.out)?;
            plan.save(&cli.out.join(PLAN_FILE))?;
            print!("{}", plan.to_text());
        }
        Command::AttVar { checkpoint, data } => {
            let cfg = load_run_config(cli)?;
            let model = open_checkpoint(cli, checkpoint, &cfg)?;
            let dir = pick_dir(data, &cfg.eval.data.dir, "evaluation")?;
            let (corpus, _) = load_for(&model, &cfg, &dir)?;
            let clips: Vec<_> = corpus.samples.iter().map(|s| s.features.clone()).collect();
            let stats = attention_variance(&collect_attention(&model, &clips)?)?;
            fs::create_dir_all(&cli.out)?;
            export_variance(&stats, &cli.out.join(VARIANCE_FILE))?;
            for (layer, var) in &stats.layers {
                let mean = var.iter().sum::<f64>() / var.len().max(1) as f64;
                println!("layer {layer}: mean variance {mean:.4e} over {} bins", var.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
