//! Plain-text `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys and repeated keys
//! are errors. [`RunConfig::to_text`] writes every key, so an output
//! directory records the full configuration it was produced with.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{EvalConfig, MatchTolerance};
use crate::net::{NetConfig, Phase};
use crate::pipeline::InferConfig;
use crate::pixel::{ObjectiveConfig, PixelLossConfig};
use crate::synth::{SceneSpec, ShapeKind};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // architecture
    pub canvas: usize,
    pub patch: usize,
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub lora_rank: usize,
    pub prompt_tokens: usize,
    pub mlp_ratio: usize,
    pub codec_seed: u64,
    // objective
    pub eta: f64,
    pub lambda: f64,
    pub pixel_loss: bool,
    pub proxy_weight: f64,
    // optimization
    pub pretrain_iterations: usize,
    pub finetune_iterations: usize,
    pub batch: usize,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    pub weight_decay: f64,
    pub checkpoint_every: usize,
    pub flips: bool,
    // inference
    pub steps: usize,
    pub guidance: f64,
    pub gammas: Vec<f64>,
    // evaluation
    pub tolerance: f64,
    pub thresholds: usize,
    // data
    pub floor_plan: bool,
    pub annotators: usize,
    pub jitter: f64,
    pub noise: f64,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub pretrain_data: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        let scene = SceneSpec::default();
        Self {
            seed: 0,
            canvas: 32,
            patch: net.patch,
            d_model: net.d_model,
            blocks: net.blocks,
            heads: net.heads,
            lora_rank: net.lora_rank,
            prompt_tokens: net.prompt_tokens,
            mlp_ratio: net.mlp_ratio,
            codec_seed: net.codec_seed,
            eta: 0.3,
            lambda: 1.1,
            pixel_loss: true,
            proxy_weight: 0.01,
            pretrain_iterations: 2000,
            finetune_iterations: 2000,
            batch: 4,
            pretrain_lr: 1e-3,
            finetune_lr: 2e-3,
            weight_decay: 0.0,
            checkpoint_every: 0,
            flips: true,
            steps: 50,
            guidance: 2.0,
            gammas: vec![0.5, 1.0, 1.5, 2.0, 2.5],
            tolerance: 0.0075,
            thresholds: 99,
            floor_plan: false,
            annotators: scene.annotators,
            jitter: scene.jitter,
            noise: scene.noise,
            min_shapes: scene.min_shapes,
            max_shapes: scene.max_shapes,
            pretrain_data: None,
            train_data: None,
            eval_data: None,
            parallel: true,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}

fn parse_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn show_f64(v: f64) -> String {
    format!("{v:?}")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "canvas" => self.canvas = parse_num(key, v)?,
            "patch" => self.patch = parse_num(key, v)?,
            "d_model" => self.d_model = parse_num(key, v)?,
            "blocks" => self.blocks = parse_num(key, v)?,
            "heads" => self.heads = parse_num(key, v)?,
            "lora_rank" => self.lora_rank = parse_num(key, v)?,
            "prompt_tokens" => self.prompt_tokens = parse_num(key, v)?,
            "mlp_ratio" => self.mlp_ratio = parse_num(key, v)?,
            "codec_seed" => self.codec_seed = parse_num(key, v)?,
            "eta" => self.eta = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "pixel_loss" => self.pixel_loss = parse_bool(key, v)?,
            "proxy_weight" => self.proxy_weight = parse_num(key, v)?,
            "pretrain_iterations" => self.pretrain_iterations = parse_num(key, v)?,
            "finetune_iterations" => self.finetune_iterations = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse_num(key, v)?,
            "finetune_lr" => self.finetune_lr = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "flips" => self.flips = parse_bool(key, v)?,
            "steps" => self.steps = parse_num(key, v)?,
            "guidance" => self.guidance = parse_num(key, v)?,
            "gammas" => {
                self.gammas = v
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "tolerance" => self.tolerance = parse_num(key, v)?,
            "thresholds" => self.thresholds = parse_num(key, v)?,
            "floor_plan" => self.floor_plan = parse_bool(key, v)?,
            "annotators" => self.annotators = parse_num(key, v)?,
            "jitter" => self.jitter = parse_num(key, v)?,
            "noise" => self.noise = parse_num(key, v)?,
            "min_shapes" => self.min_shapes = parse_num(key, v)?,
            "max_shapes" => self.max_shapes = parse_num(key, v)?,
            "pretrain_data" => self.pretrain_data = parse_path(v),
            "train_data" => self.train_data = parse_path(v),
            "eval_data" => self.eval_data = parse_path(v),
            "parallel" => self.parallel = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("canvas", self.canvas.to_string()),
            ("patch", self.patch.to_string()),
            ("d_model", self.d_model.to_string()),
            ("blocks", self.blocks.to_string()),
            ("heads", self.heads.to_string()),
            ("lora_rank", self.lora_rank.to_string()),
            ("prompt_tokens", self.prompt_tokens.to_string()),
            ("mlp_ratio", self.mlp_ratio.to_string()),
            ("codec_seed", self.codec_seed.to_string()),
            ("eta", show_f64(self.eta)),
            ("lambda", show_f64(self.lambda)),
            ("pixel_loss", self.pixel_loss.to_string()),
            ("proxy_weight", show_f64(self.proxy_weight)),
            ("pretrain_iterations", self.pretrain_iterations.to_string()),
            ("finetune_iterations", self.finetune_iterations.to_string()),
            ("batch", self.batch.to_string()),
            ("pretrain_lr", show_f64(self.pretrain_lr)),
            ("finetune_lr", show_f64(self.finetune_lr)),
            ("weight_decay", show_f64(self.weight_decay)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("flips", self.flips.to_string()),
            ("steps", self.steps.to_string()),
            ("guidance", show_f64(self.guidance)),
            (
                "gammas",
                self.gammas.iter().map(|g| show_f64(*g)).collect::<Vec<_>>().join(","),
            ),
            ("tolerance", show_f64(self.tolerance)),
            ("thresholds", self.thresholds.to_string()),
            ("floor_plan", self.floor_plan.to_string()),
            ("annotators", self.annotators.to_string()),
            ("jitter", show_f64(self.jitter)),
            ("noise", show_f64(self.noise)),
            ("min_shapes", self.min_shapes.to_string()),
            ("max_shapes", self.max_shapes.to_string()),
            ("pretrain_data", show_path(&self.pretrain_data)),
            ("train_data", show_path(&self.train_data)),
            ("eval_data", show_path(&self.eval_data)),
            ("parallel", self.parallel.to_string()),
        ]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip(e))))
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.net_config().validate()?;
        self.pixel_config().validate()?;
        MatchTolerance::new(self.tolerance)?;
        self.scene_spec(0).validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.thresholds == 0 {
            return bad("thresholds must be at least 1");
        }
        if !(self.guidance >= 0.0) || self.gammas.iter().any(|g| !(*g >= 0.0)) {
            return bad("guidance scales must be >= 0");
        }
        if !(self.proxy_weight >= 0.0) {
            return bad("proxy_weight must be >= 0");
        }
        if !(self.pretrain_lr > 0.0 && self.finetune_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            d_model: self.d_model,
            blocks: self.blocks,
            heads: self.heads,
            lora_rank: self.lora_rank,
            prompt_tokens: self.prompt_tokens,
            mlp_ratio: self.mlp_ratio,
            patch: self.patch,
            canvas: self.canvas,
            codec_seed: self.codec_seed,
        }
    }

    pub fn pixel_config(&self) -> PixelLossConfig {
        PixelLossConfig {
            eta: self.eta,
            lambda: self.lambda,
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            pixel: self.pixel_config(),
            pixel_enabled: self.pixel_loss,
            proxy_weight: self.proxy_weight,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            tolerance: MatchTolerance {
                fraction: self.tolerance,
            },
            eta: self.eta,
            thresholds: self.thresholds,
        }
    }

    pub fn scene_spec(&self, seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            canvas: self.canvas,
            min_shapes: self.min_shapes,
            max_shapes: self.max_shapes,
            kinds: vec![ShapeKind::Rectangle, ShapeKind::Circle, ShapeKind::Polyline],
            noise: self.noise,
            annotators: self.annotators,
            jitter: self.jitter,
            floor_plan: self.floor_plan,
        }
    }

    pub fn train_config(&self, phase: Phase) -> TrainConfig {
        let (iterations, lr) = match phase {
            Phase::Pretrain => (self.pretrain_iterations, self.pretrain_lr),
            Phase::Finetune => (self.finetune_iterations, self.finetune_lr),
        };
        TrainConfig {
            iterations,
            batch: self.batch,
            lr,
            weight_decay: self.weight_decay,
            seed: self.seed,
            objective: self.objective(),
            flips: self.flips,
            floor_plan: self.floor_plan,
            checkpoint_every: self.checkpoint_every,
            par_mode: self.par_mode(),
        }
    }

    pub fn infer_config(&self) -> InferConfig {
        InferConfig {
            steps: self.steps,
            guidance: self.guidance,
            use_guidance: true,
            seed: self.seed,
            floor_plan: self.floor_plan,
            par_mode: self.par_mode(),
        }
    }

    pub fn par_mode(&self) -> crate::par::Mode {
        if self.parallel {
            crate::par::Mode::Parallel
        } else {
            crate::par::Mode::Sequential
        }
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let mut c = RunConfig::default();
        c.seed = 17;
        c.gammas = vec![0.0, 3.5];
        c.train_data = Some("data/train".into());
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_overrides() {
        let c = RunConfig::parse("# toy\nseed = 3 # inline\n\nguidance=2.5\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.guidance, 2.5);
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        let e = RunConfig::parse("seed = 1\nlearning_rate = 3\n").unwrap_err();
        assert!(e.to_string().contains("line 2: unknown key `learning_rate`"), "{e}");
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::parse("seed 1\n").is_err());
        assert!(RunConfig::parse("eta = 1.5\n").is_err());
    }
}
