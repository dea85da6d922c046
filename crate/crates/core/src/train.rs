//! Two-phase training: unconditional pretraining of the backbone on edge
//! maps, then adapter fine-tuning on paired data with the backbone frozen.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::net::{Condition, Phase, VelocityNet};
use crate::numerics::{AdamW, Graph, ParamId, Rng, Tensor};
use crate::par;
use crate::pixel::{sample_loss, LossTerms, ObjectiveConfig, TrainItem};
use crate::synth::{preprocess, PreprocessConfig, PreprocessMode, Sample};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    pub flips: bool,
    pub floor_plan: bool,
    /// Calls the checkpoint hook every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub par_mode: par::Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            batch: 4,
            lr: 1e-4,
            weight_decay: 0.0,
            seed: 0,
            objective: ObjectiveConfig::default(),
            flips: true,
            floor_plan: false,
            checkpoint_every: 0,
            par_mode: par::Mode::default(),
        }
    }
}

/// One row of the training log (batch means).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub fm: f64,
    pub pix: f64,
    pub sigma: f64,
    pub total: f64,
    pub wall_ms: f64,
}

pub const LOG_HEADER: &str = "step,L_FM,L_pix,sigma_t,total,wall_ms";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.3}\n",
            r.step, r.fm, r.pix, r.sigma, r.total, r.wall_ms
        ));
    }
    s
}

struct Draw {
    z0: Tensor,
    y: crate::image::GrayImage,
    cond: Option<Condition>,
    eps: Tensor,
    t: f64,
}

fn draw_batch(
    net: &VelocityNet,
    data: &[Sample],
    cfg: &TrainConfig,
    conditional: bool,
    rng: &mut Rng,
) -> Result<Vec<Draw>> {
    let pre = PreprocessConfig {
        target: net.config().canvas,
        patch: net.config().patch,
        floor_plan: cfg.floor_plan,
        flips: cfg.flips,
    };
    let shape = net.latent_shape();
    (0..cfg.batch)
        .map(|_| {
            let i = (rng.next_u64() % data.len() as u64) as usize;
            let s = preprocess(&data[i], &pre, PreprocessMode::Train, rng)?.sample;
            let z0 = net.codec().encode(&s.gt)?;
            let cond = if conditional {
                Some(net.condition(&s.image)?)
            } else {
                None
            };
            let eps = rng.randn(&shape);
            let t = rng.next_f64();
            Ok(Draw {
                z0,
                y: s.gt,
                cond,
                eps,
                t,
            })
        })
        .collect()
}

type ItemGrads = (LossTerms, Vec<(ParamId, Tensor)>);

fn item_gradients(net: &VelocityNet, d: &Draw, obj: &ObjectiveConfig) -> Result<ItemGrads> {
    let item = TrainItem {
        z0: &d.z0,
        y: &d.y,
        cond: d.cond.as_ref(),
        eps: d.eps.clone(),
        t: d.t,
    };
    let mut g = Graph::new();
    let l = sample_loss(&mut g, net, &item, obj)?;
    let grads = g.backward(l.loss, net.params())?;
    Ok((l.terms, grads.params().to_vec()))
}

/// Runs `cfg.iterations` AdamW steps in `phase`, calling `checkpoint` with
/// the completed iteration count at the configured cadence.
pub fn train(
    net: &mut VelocityNet,
    data: &[Sample],
    phase: Phase,
    cfg: &TrainConfig,
    checkpoint: &mut dyn FnMut(usize, &VelocityNet) -> Result<()>,
) -> Result<Vec<LogRow>> {
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("batch must be at least 1".into()));
    }
    cfg.objective.pixel.validate()?;
    net.set_phase(phase);
    let conditional = phase == Phase::Finetune;
    let obj = match phase {
        Phase::Pretrain => ObjectiveConfig {
            pixel_enabled: false,
            ..cfg.objective
        },
        Phase::Finetune => cfg.objective,
    };
    let opt = AdamW {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamW::default()
    };
    let scale = 1.0 / cfg.batch as f64;
    let mut log = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        let start = Instant::now();
        let mut rng = Rng::derive(cfg.seed, step as u64);
        let draws = draw_batch(net, data, cfg, conditional, &mut rng)?;
        let shared: &VelocityNet = net;
        let results = par::try_map(cfg.par_mode, &draws, |d| item_gradients(shared, d, &obj))?;
        let mut mean = LossTerms::default();
        for (terms, _) in &results {
            if !terms.total.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: step });
            }
            mean.fm += terms.fm * scale;
            mean.pix += terms.pix * scale;
            mean.sigma += terms.sigma * scale;
            mean.total += terms.total * scale;
        }
        let store = net.params_mut();
        store.zero_grad();
        for (_, grads) in &results {
            for (id, g) in grads {
                store.accumulate_grad(*id, g, scale)?;
            }
        }
        opt.step(store)?;
        log.push(LogRow {
            step,
            fm: mean.fm,
            pix: mean.pix,
            sigma: mean.sigma,
            total: mean.total,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            checkpoint(step + 1, net)?;
        }
    }
    net.params_mut().zero_grad();
    Ok(log)
}

/// Backbone pretraining on the ground-truth edge maps of `data` with the
/// flow-matching loss alone.
pub fn pretrain(net: &mut VelocityNet, data: &[Sample], cfg: &TrainConfig) -> Result<Vec<LogRow>> {
    train(net, data, Phase::Pretrain, cfg, &mut |_, _| Ok(()))
}

/// Adapter fine-tuning on paired data with the combined objective.
pub fn finetune(net: &mut VelocityNet, data: &[Sample], cfg: &TrainConfig) -> Result<Vec<LogRow>> {
    train(net, data, Phase::Finetune, cfg, &mut |_, _| Ok(()))
}

/// Mean flow-matching loss over `draws` fixed draws from `data`, for
/// progress checks. Conditional draws use the adapted field.
pub fn probe_loss(
    net: &VelocityNet,
    data: &[Sample],
    conditional: bool,
    seed: u64,
    draws: usize,
) -> Result<f64> {
    let cfg = TrainConfig {
        batch: draws,
        flips: false,
        ..TrainConfig::default()
    };
    let mut rng = Rng::new(seed);
    let batch = draw_batch(net, data, &cfg, conditional, &mut rng)?;
    let mut total = 0.0;
    for d in &batch {
        total += crate::flow::fm_loss(net, &d.z0, &d.eps, d.t, d.cond.as_ref())?;
    }
    Ok(total / draws.max(1) as f64)
}

/// FNV-1a over the raw bits of every parameter not in the finetune set.
pub fn frozen_fingerprint(net: &VelocityNet) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in net.params().iter() {
        if crate::net::is_condition_param(&p.name) {
            continue;
        }
        for b in p.name.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
        for v in p.value.data() {
            for b in v.to_bits().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
        }
    }
    h
}
