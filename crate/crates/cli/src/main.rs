use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use edgeflow::checkpoint;
use edgeflow::config::RunConfig;
use edgeflow::eval::EvalMode;
use edgeflow::net::{Phase, VelocityNet};
use edgeflow::pipeline::{self, StagedDir};
use edgeflow::synth::{self, Dataset, Sample};
use edgeflow::train;

/// Flow-matching edge detection at toy scale.
#[derive(Parser)]
#[command(name = "edgeflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value run configuration; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory, replaced atomically on success.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, short = 'n')]
        count: usize,
        /// Scene seed; defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the unconditional backbone on ground-truth edge maps.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; defaults to `pretrain_data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the adapter and condition projector on paired data.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Pretrained checkpoint.
        #[arg(long)]
        init: PathBuf,
        /// Dataset directory; defaults to `train_data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sample edge maps for every image of a dataset.
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampling: Sampling,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; defaults to `eval_data`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Guidance scale.
        #[arg(long, conflicts_with = "no_cfg")]
        guidance: Option<f64>,
        /// Integrate the conditional field directly.
        #[arg(long)]
        no_cfg: bool,
    },
    /// Score predictions under both protocols.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Prediction directory, or an `infer` output containing `predictions/`.
        #[arg(long)]
        predictions: PathBuf,
        /// Dataset directory; defaults to `eval_data`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also score wall masks.
        #[arg(long)]
        walls: bool,
    },
    /// Mean prediction brightness across guidance scales.
    SweepGamma {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampling: Sampling,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated scales; defaults to `gammas`.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
    },
}

#[derive(Args)]
struct Sampling {
    /// Euler steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Noise seed; defaults to the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Sampling {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(k) = self.steps {
            cfg.steps = k;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn dataset(explicit: Option<&Path>, fallback: Option<&Path>, key: &str) -> Result<Vec<Sample>> {
    let Some(dir) = explicit.or(fallback) else {
        return Err(edgeflow::Error::Config(format!("no dataset given: pass --data or set `{key}`")).into());
    };
    let data = Dataset::open(dir)?;
    Ok(data.load_all()?)
}

fn load_net(path: &Path, cfg: &RunConfig) -> Result<VelocityNet> {
    Ok(checkpoint::load(path, Some(&cfg.net_config()))?)
}

fn run_training(
    cfg: &RunConfig,
    common: &Common,
    mut net: VelocityNet,
    data: &[Sample],
    phase: Phase,
) -> Result<PathBuf> {
    let out = StagedDir::new(&common.out)?;
    out.write("config.txt", cfg.to_text())?;
    let tc = cfg.train_config(phase);
    let ckpt_dir = out.path().join("checkpoints");
    let log = train::train(&mut net, data, phase, &tc, &mut |step, n| {
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| edgeflow::Error::io(&ckpt_dir, e))?;
        checkpoint::save(n, &ckpt_dir.join(format!("step_{step:06}.ckpt")))
    })?;
    checkpoint::save(&net, &out.path().join("model.ckpt"))?;
    out.write("train_log.csv", train::log_csv(&log))?;
    Ok(out.commit()?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, count, seed } => {
            let cfg = load_config(common.config.as_deref())?;
            let samples = synth::generate(&cfg.scene_spec(seed.unwrap_or(cfg.seed)), count)?;
            let out = StagedDir::new(&common.out)?;
            synth::write_dataset(out.path(), &samples)?;
            out.write("config.txt", cfg.to_text())?;
            let dir = out.commit()?;
            eprintln!("wrote {count} samples to {}", dir.display());
        }
        Command::Pretrain { common, data } => {
            let cfg = load_config(common.config.as_deref())?;
            let data = dataset(data.as_deref(), cfg.pretrain_data.as_deref(), "pretrain_data")?;
            let net = VelocityNet::new(cfg.net_config(), cfg.seed)?;
            let dir = run_training(&cfg, &common, net, &data, Phase::Pretrain)?;
            eprintln!("pretrained model in {}", dir.display());
        }
        Command::Finetune { common, init, data } => {
            let cfg = load_config(common.config.as_deref())?;
            let data = dataset(data.as_deref(), cfg.train_data.as_deref(), "train_data")?;
            let net = load_net(&init, &cfg).with_context(|| format!("loading {}", init.display()))?;
            let dir = run_training(&cfg, &common, net, &data, Phase::Finetune)?;
            eprintln!("fine-tuned model in {}", dir.display());
        }
        Command::Infer {
            common,
            sampling,
            checkpoint,
            data,
            guidance,
            no_cfg,
        } => {
            let mut cfg = load_config(common.config.as_deref())?;
            sampling.apply(&mut cfg);
            if let Some(g) = guidance {
                cfg.guidance = g;
            }
            cfg.validate()?;
            let samples = dataset(data.as_deref(), cfg.eval_data.as_deref(), "eval_data")?;
            let net = load_net(&checkpoint, &cfg)?;
            let ic = pipeline::InferConfig {
                use_guidance: !no_cfg,
                ..cfg.infer_config()
            };
            let preds = pipeline::infer_all(&net, &samples, &ic)?;
            let out = StagedDir::new(&common.out)?;
            pipeline::write_predictions(&out.path().join("predictions"), &preds)?;
            out.write("config.txt", cfg.to_text())?;
            let dir = out.commit()?;
            eprintln!("wrote {} predictions to {}", preds.len(), dir.display());
        }
        Command::Eval {
            common,
            predictions,
            data,
            walls,
        } => {
            let cfg = load_config(common.config.as_deref())?;
            let samples = dataset(data.as_deref(), cfg.eval_data.as_deref(), "eval_data")?;
            let nested = predictions.join("predictions");
            let pred_dir = if nested.is_dir() { nested } else { predictions };
            if !pred_dir.is_dir() {
                return Err(edgeflow::Error::Data(format!("{} is not a directory", pred_dir.display())).into());
            }
            let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
            let preds = pipeline::read_predictions(&pred_dir, &ids)?;
            let ec = cfg.eval_config();
            let out = StagedDir::new(&common.out)?;
            let mut summary = String::new();
            for mode in [EvalMode::SEval, EvalMode::CEval] {
                let report = pipeline::evaluate(&samples, &preds, mode, &ec, cfg.par_mode())?;
                out.write(&format!("{}.csv", mode.name().to_lowercase()), report.to_csv())?;
                summary.push_str(&report.summary());
                summary.push('\n');
            }
            if walls {
                let w = pipeline::wall_report(&samples, &preds, &ec)?;
                out.write("walls.csv", w.to_csv())?;
                summary.push_str(&format!(
                    "walls: iou {:.4} boundary_f {:.4}\n",
                    w.mean_iou,
                    w.boundary.f_measure()
                ));
            }
            out.write("summary.txt", &summary)?;
            out.write("config.txt", cfg.to_text())?;
            out.commit()?;
            print!("{summary}");
        }
        Command::SweepGamma {
            common,
            sampling,
            checkpoint,
            data,
            gammas,
        } => {
            let mut cfg = load_config(common.config.as_deref())?;
            sampling.apply(&mut cfg);
            if let Some(g) = gammas {
                cfg.gammas = g;
            }
            cfg.validate()?;
            if cfg.gammas.is_empty() {
                bail!(edgeflow::Error::Config("no guidance scales to sweep".into()));
            }
            let samples = dataset(data.as_deref(), cfg.eval_data.as_deref(), "eval_data")?;
            let net = load_net(&checkpoint, &cfg)?;
            let rows = pipeline::gamma_sweep(&net, &samples, &cfg.gammas, &cfg.infer_config())?;
            let out = StagedDir::new(&common.out)?;
            let csv = pipeline::gamma_csv(&rows);
            out.write("gamma.csv", &csv)?;
            out.write("config.txt", cfg.to_text())?;
            out.commit()?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn report(err: &anyhow::Error) -> ExitCode {
    let (code, kind) = match err.downcast_ref::<edgeflow::Error>() {
        Some(e) => (e.exit_code(), e.kind()),
        None => (1, "internal"),
    };
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    let msg = msg.replace('\n', " ");
    eprintln!("error code={code} kind={kind}: {msg}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("error code=2 kind=usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
