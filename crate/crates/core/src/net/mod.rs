//! Miniature diffusion transformer velocity field with condition-injection
//! LoRA.
//!
//! Three token groups share one joint self-attention per block: a fixed set
//! of learned prompt tokens, one token per latent cell of the noisy state,
//! and (in conditional mode) one token per latent cell of the encoded input
//! image. The low-rank adapter adds `Z_c·A·B` to the query, key and value
//! rows of the condition tokens only; prompt and noise rows always use the
//! frozen projections. The velocity is read from the noise-token rows.

mod embed;

pub use embed::{grid_embedding, time_embedding};

use crate::codec::PatchCodec;
use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};
use crate::numerics::{Graph, NodeId, ParamStore, Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub lora_rank: usize,
    pub prompt_tokens: usize,
    pub mlp_ratio: usize,
    pub patch: usize,
    pub canvas: usize,
    pub codec_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            blocks: 3,
            heads: 4,
            lora_rank: 4,
            prompt_tokens: 4,
            mlp_ratio: 4,
            patch: 4,
            canvas: 64,
            codec_seed: 0x5eed,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d_model == 0 || !self.d_model.is_multiple_of(4) {
            return bad("d_model must be a positive multiple of 4");
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("heads must divide d_model");
        }
        if self.lora_rank == 0 || self.lora_rank > self.d_model {
            return bad("lora_rank must be in 1..=d_model");
        }
        if self.patch == 0 || self.canvas == 0 || !self.canvas.is_multiple_of(self.patch) {
            return bad("patch must divide canvas");
        }
        if self.blocks == 0 || self.prompt_tokens == 0 || self.mlp_ratio == 0 {
            return bad("blocks, prompt_tokens and mlp_ratio must be positive");
        }
        Ok(())
    }

    pub fn latent_channels(&self) -> usize {
        self.patch * self.patch
    }

    /// Input width of the condition projector (three encoded color planes).
    pub fn cond_channels(&self) -> usize {
        CONDITION_PLANES * self.latent_channels()
    }

    /// Differences against `other`, formatted `field: ours vs theirs`.
    pub fn diff(&self, other: &NetConfig) -> Vec<String> {
        let mut out = Vec::new();
        macro_rules! cmp {
            ($($f:ident),*) => {$(
                if self.$f != other.$f {
                    out.push(format!("{}: {} vs {}", stringify!($f), self.$f, other.$f));
                }
            )*};
        }
        cmp!(d_model, blocks, heads, lora_rank, prompt_tokens, mlp_ratio, patch, canvas, codec_seed);
        out
    }
}

/// Which parameters a training phase may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
}

/// True for parameters that belong to the condition pathway: LoRA factors
/// and the condition projector.
pub fn is_condition_param(name: &str) -> bool {
    name.contains(".lora_") || name.starts_with("cond_in.")
}

/// Color planes plus one local-contrast plane.
pub const CONDITION_PLANES: usize = 4;

/// Weight of the identity added to query and key projections at init.
const QK_IDENTITY_SCALE: f64 = 2.0;
/// Amplitude of the fixed position table relative to unit sinusoids.
const POSITION_SCALE: f64 = 5.0;

/// The fixed feature planes a condition image is encoded from: R, G, B and
/// the summed absolute forward differences of all three toward the right
/// and lower neighbors (zero across the image border).
pub fn condition_planes(x: &RgbImage) -> Vec<GrayImage> {
    let (w, h) = (x.width(), x.height());
    let contrast = GrayImage::from_fn(w, h, |i, j| {
        x.planes()
            .iter()
            .map(|p| {
                let v = p.get(i, j);
                let r = if i + 1 < w { (p.get(i + 1, j) - v).abs() } else { 0.0 };
                let d = if j + 1 < h { (p.get(i, j + 1) - v).abs() } else { 0.0 };
                r + d
            })
            .sum()
    });
    let mut planes = x.planes().to_vec();
    planes.push(contrast);
    planes
}

/// Condition tokens for one image: `[cells, 4p²]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition(Tensor);

impl Condition {
    pub fn tokens(&self) -> &Tensor {
        &self.0
    }
}

/// Node ids of one block's projections, for inspection.
#[derive(Clone, Copy, Debug)]
pub struct BlockTrace {
    pub input: NodeId,
    pub q: NodeId,
    pub k: NodeId,
    pub v: NodeId,
    pub attention: NodeId,
    pub output: NodeId,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `[C, h, w]` velocity.
    pub velocity: NodeId,
    pub blocks: Vec<BlockTrace>,
    pub prompt_rows: std::ops::Range<usize>,
    pub noise_rows: std::ops::Range<usize>,
    pub cond_rows: Option<std::ops::Range<usize>>,
}

#[derive(Clone, Debug)]
pub struct VelocityNet {
    config: NetConfig,
    codec: PatchCodec,
    params: ParamStore,
}

fn init_normal(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    rng.randn(shape).scale(std)
}

fn eye(n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        t.data_mut()[i * n + i] = 1.0;
    }
    t
}

impl VelocityNet {
    /// Freshly initialized network. LoRA `B` factors start at zero.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let codec = PatchCodec::new(config.patch, config.codec_seed)?;
        let mut rng = Rng::derive(seed, 0x6e6574);
        let d = config.d_model;
        let c = config.latent_channels();
        let cc = config.cond_channels();
        let hidden = d * config.mlp_ratio;
        let r = config.lora_rank;
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let mut p = ParamStore::new();

        p.insert("prompt.tokens", init_normal(&mut rng, &[config.prompt_tokens, d], 0.5), true);
        p.insert("embed.group", init_normal(&mut rng, &[3, d], 0.5), true);
        p.insert("latent_in.weight", init_normal(&mut rng, &[c, d], inv(c)), true);
        p.insert("latent_in.bias", Tensor::zeros(&[d]), true);
        p.insert("time.fc1.weight", init_normal(&mut rng, &[d, d], inv(d)), true);
        p.insert("time.fc1.bias", Tensor::zeros(&[d]), true);
        p.insert("time.fc2.weight", init_normal(&mut rng, &[d, d], inv(d)), true);
        p.insert("time.fc2.bias", Tensor::zeros(&[d]), true);
        p.insert("cond_in.weight", init_normal(&mut rng, &[cc, d], inv(cc)), false);
        p.insert("cond_in.bias", Tensor::zeros(&[d]), false);
        for b in 0..config.blocks {
            let pre = format!("blocks.{b}");
            p.insert(format!("{pre}.ln1.gain"), Tensor::full(&[d], 1.0), true);
            p.insert(format!("{pre}.ln1.bias"), Tensor::zeros(&[d]), true);
            for proj in ["q", "k"] {
                let w = init_normal(&mut rng, &[d, d], 0.5 * inv(d));
                p.insert(
                    format!("{pre}.attn.{proj}.weight"),
                    w.add(&eye(d).scale(QK_IDENTITY_SCALE))?,
                    true,
                );
            }
            p.insert(
                format!("{pre}.attn.v.weight"),
                init_normal(&mut rng, &[d, d], inv(d)),
                true,
            );
            p.insert(
                format!("{pre}.attn.o.weight"),
                init_normal(&mut rng, &[d, d], 0.5 * inv(d)),
                true,
            );
            p.insert(format!("{pre}.attn.o.bias"), Tensor::zeros(&[d]), true);
            for proj in ["q", "k", "v"] {
                p.insert(
                    format!("{pre}.attn.lora_{proj}.a"),
                    init_normal(&mut rng, &[d, r], inv(d)),
                    false,
                );
                p.insert(format!("{pre}.attn.lora_{proj}.b"), Tensor::zeros(&[r, d]), false);
            }
            p.insert(format!("{pre}.ln2.gain"), Tensor::full(&[d], 1.0), true);
            p.insert(format!("{pre}.ln2.bias"), Tensor::zeros(&[d]), true);
            p.insert(
                format!("{pre}.mlp.fc1.weight"),
                init_normal(&mut rng, &[d, hidden], inv(d)),
                true,
            );
            p.insert(format!("{pre}.mlp.fc1.bias"), Tensor::zeros(&[hidden]), true);
            p.insert(
                format!("{pre}.mlp.fc2.weight"),
                init_normal(&mut rng, &[hidden, d], 0.5 * inv(hidden)),
                true,
            );
            p.insert(format!("{pre}.mlp.fc2.bias"), Tensor::zeros(&[d]), true);
        }
        p.insert("final_ln.gain", Tensor::full(&[d], 1.0), true);
        p.insert("final_ln.bias", Tensor::zeros(&[d]), true);
        p.insert("head.weight", Tensor::zeros(&[d, c]), true);
        p.insert("head.bias", Tensor::zeros(&[c]), true);

        let mut net = Self {
            config,
            codec,
            params: p,
        };
        net.set_phase(Phase::Pretrain);
        Ok(net)
    }

    /// Rebuilds a network from a parameter table, checking that every
    /// expected parameter is present with the expected shape.
    pub fn from_params(config: NetConfig, params: ParamStore) -> Result<Self> {
        let template = Self::new(config.clone(), 0)?;
        for p in template.params.iter() {
            let got = params
                .get(&p.name)
                .map_err(|_| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
            if got.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    got.shape(),
                    p.value.shape()
                )));
            }
        }
        if params.len() != template.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters, expected {}",
                params.len(),
                template.params.len()
            )));
        }
        let mut net = Self {
            config,
            codec: template.codec,
            params,
        };
        net.set_phase(Phase::Pretrain);
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn codec(&self) -> &PatchCodec {
        &self.codec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Applies the trainable/frozen split of `phase`.
    pub fn set_phase(&mut self, phase: Phase) {
        match phase {
            Phase::Pretrain => self.params.set_trainable_where(|n| !is_condition_param(n)),
            Phase::Finetune => self.params.set_trainable_where(is_condition_param),
        }
    }

    /// `(trainable, frozen)` parameter names under `phase`, without
    /// changing the current split.
    pub fn param_partition(&self, phase: Phase) -> (Vec<String>, Vec<String>) {
        self.params
            .iter()
            .map(|p| p.name.clone())
            .partition(|n| match phase {
                Phase::Pretrain => !is_condition_param(n),
                Phase::Finetune => is_condition_param(n),
            })
    }

    /// Encodes and patchifies a condition image into tokens.
    pub fn condition(&self, x: &RgbImage) -> Result<Condition> {
        let z = self.codec.encode_planes(&condition_planes(x))?;
        let (c, h, w) = (z.shape()[0], z.shape()[1], z.shape()[2]);
        let tokens = z.reshape(&[c, h * w])?.transpose()?;
        Ok(Condition(tokens))
    }

    /// Records the forward pass on `g` and returns the velocity node plus
    /// per-block projection nodes.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        z_t: &Tensor,
        t: f64,
        cond: Option<&Condition>,
        lora: bool,
    ) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let p = &self.params;
        let c = cfg.latent_channels();
        let (gh, gw) = match z_t.shape() {
            [ch, h, w] if *ch == c => (*h, *w),
            s => return Err(Error::Shape(format!("latent must be [{c}, h, w], got {s:?}"))),
        };
        if lora && cond.is_none() {
            return Err(Error::LoraWithoutCondition);
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Numeric(format!("time {t} outside [0, 1]")));
        }
        let cells = gh * gw;
        let d = cfg.d_model;
        let pos = g.constant(grid_embedding(gh, gw, d).scale(POSITION_SCALE));

        let group = g.param(p, "embed.group")?;
        let group_row = |g: &mut Graph, i: usize| -> Result<NodeId> {
            let r = g.slice_rows(group, i, 1)?;
            g.reshape(r, &[d])
        };

        let prompt = g.param(p, "prompt.tokens")?;
        let g0 = group_row(g, 0)?;
        let prompt = g.add_bias(prompt, g0)?;

        let z = g.constant(z_t.clone().reshape(&[c, cells])?.transpose()?);
        let w_in = g.param(p, "latent_in.weight")?;
        let b_in = g.param(p, "latent_in.bias")?;
        let noise = g.matmul(z, w_in)?;
        let noise = g.add_bias(noise, b_in)?;
        let g1 = group_row(g, 1)?;
        let noise = g.add_bias(noise, g1)?;
        let noise = g.add(noise, pos)?;

        let mut parts = vec![prompt, noise];
        let n_t = cfg.prompt_tokens;
        let mut cond_rows = None;
        if let Some(cond) = cond {
            let ct = cond.tokens();
            if ct.shape() != [cells, cfg.cond_channels()] {
                return Err(Error::Shape(format!(
                    "condition tokens {:?} do not match latent grid {gh}x{gw}",
                    ct.shape()
                )));
            }
            let ct = g.constant(ct.clone());
            let w_c = g.param(p, "cond_in.weight")?;
            let b_c = g.param(p, "cond_in.bias")?;
            let tok = g.matmul(ct, w_c)?;
            let tok = g.add_bias(tok, b_c)?;
            let g2 = group_row(g, 2)?;
            let tok = g.add_bias(tok, g2)?;
            let tok = g.add(tok, pos)?;
            parts.push(tok);
            cond_rows = Some(n_t + cells..n_t + 2 * cells);
        }
        let mut x = g.concat_rows(&parts)?;

        let temb = g.constant(time_embedding(t, d));
        let w1 = g.param(p, "time.fc1.weight")?;
        let b1 = g.param(p, "time.fc1.bias")?;
        let w2 = g.param(p, "time.fc2.weight")?;
        let b2 = g.param(p, "time.fc2.bias")?;
        let h = g.matmul(temb, w1)?;
        let h = g.add_bias(h, b1)?;
        let h = g.gelu(h);
        let h = g.matmul(h, w2)?;
        let h = g.add_bias(h, b2)?;
        let h = g.reshape(h, &[d])?;
        x = g.add_bias(x, h)?;

        let mut blocks = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            let (next, trace) = self.block(g, b, x, cond_rows.clone().filter(|_| lora))?;
            blocks.push(trace);
            x = next;
        }

        let gain = g.param(p, "final_ln.gain")?;
        let bias = g.param(p, "final_ln.bias")?;
        let x = g.layer_norm(x, gain, bias)?;
        let rows = g.slice_rows(x, n_t, cells)?;
        let w_out = g.param(p, "head.weight")?;
        let b_out = g.param(p, "head.bias")?;
        let out = g.matmul(rows, w_out)?;
        let out = g.add_bias(out, b_out)?;
        let out = g.transpose(out)?;
        let velocity = g.reshape(out, &[c, gh, gw])?;
        Ok(ForwardTrace {
            velocity,
            blocks,
            prompt_rows: 0..n_t,
            noise_rows: n_t..n_t + cells,
            cond_rows,
        })
    }

    fn block(
        &self,
        g: &mut Graph,
        b: usize,
        x: NodeId,
        lora_rows: Option<std::ops::Range<usize>>,
    ) -> Result<(NodeId, BlockTrace)> {
        let p = &self.params;
        let pre = format!("blocks.{b}");
        let name = |s: &str| format!("{pre}.{s}");

        let gain = g.param(p, &name("ln1.gain"))?;
        let bias = g.param(p, &name("ln1.bias"))?;
        let h = g.layer_norm(x, gain, bias)?;
        let hc = match &lora_rows {
            Some(r) => Some(g.slice_rows(h, r.start, r.len())?),
            None => None,
        };
        let mut qkv = [x; 3];
        for (i, proj) in ["q", "k", "v"].iter().enumerate() {
            let w = g.param(p, &name(&format!("attn.{proj}.weight")))?;
            let mut out = g.matmul(h, w)?;
            if let (Some(hc), Some(rows)) = (hc, &lora_rows) {
                let a = g.param(p, &name(&format!("attn.lora_{proj}.a")))?;
                let bb = g.param(p, &name(&format!("attn.lora_{proj}.b")))?;
                let down = g.matmul(hc, a)?;
                let delta = g.matmul(down, bb)?;
                out = g.add_into_rows(out, delta, rows.start)?;
            }
            qkv[i] = out;
        }
        let [q, k, v] = qkv;
        let attn = g.attention(q, k, v, self.config.heads)?;
        let wo = g.param(p, &name("attn.o.weight"))?;
        let bo = g.param(p, &name("attn.o.bias"))?;
        let o = g.matmul(attn, wo)?;
        let o = g.add_bias(o, bo)?;
        let x1 = g.add(x, o)?;

        let gain = g.param(p, &name("ln2.gain"))?;
        let bias = g.param(p, &name("ln2.bias"))?;
        let h2 = g.layer_norm(x1, gain, bias)?;
        let w1 = g.param(p, &name("mlp.fc1.weight"))?;
        let b1 = g.param(p, &name("mlp.fc1.bias"))?;
        let w2 = g.param(p, &name("mlp.fc2.weight"))?;
        let b2 = g.param(p, &name("mlp.fc2.bias"))?;
        let m = g.matmul(h2, w1)?;
        let m = g.add_bias(m, b1)?;
        let m = g.gelu(m);
        let m = g.matmul(m, w2)?;
        let m = g.add_bias(m, b2)?;
        let out = g.add(x1, m)?;
        Ok((
            out,
            BlockTrace {
                input: x,
                q,
                k,
                v,
                attention: attn,
                output: out,
            },
        ))
    }

    /// Velocity at `(z_t, t)` without recording gradients for later use.
    pub fn velocity(
        &self,
        z_t: &Tensor,
        t: f64,
        cond: Option<&Condition>,
        lora: bool,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let trace = self.forward_graph(&mut g, z_t, t, cond, lora)?;
        Ok(g.value(trace.velocity).clone())
    }

    /// The unconditional field of the frozen backbone: no condition tokens,
    /// no adapter.
    pub fn base_velocity(&self, z_t: &Tensor, t: f64) -> Result<Tensor> {
        self.velocity(z_t, t, None, false)
    }

    /// The adapted conditional field.
    pub fn cond_velocity(&self, z_t: &Tensor, t: f64, cond: &Condition) -> Result<Tensor> {
        self.velocity(z_t, t, Some(cond), true)
    }

    /// Latent shape `[C, h, w]` for the configured canvas.
    pub fn latent_shape(&self) -> [usize; 3] {
        let g = self.config.canvas / self.config.patch;
        [self.config.latent_channels(), g, g]
    }
}
