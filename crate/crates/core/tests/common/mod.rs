//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use edgeflow::image::{GrayImage, RgbImage};
use edgeflow::net::{Condition, NetConfig, VelocityNet};
use edgeflow::numerics::{Graph, Rng, Tensor};
use edgeflow::pixel::{sample_loss, ObjectiveConfig, TrainItem};

pub const FD_STEP: f64 = 1e-5;

/// d = 8, one block, rank-2 adapter on a 4×4 canvas.
pub fn small() -> NetConfig {
    NetConfig {
        d_model: 8,
        blocks: 1,
        heads: 2,
        lora_rank: 2,
        prompt_tokens: 2,
        mlp_ratio: 2,
        patch: 2,
        canvas: 4,
        codec_seed: 3,
    }
}

/// A network whose every parameter, including zero-initialized ones, holds
/// random values.
pub fn randomized(cfg: NetConfig, seed: u64) -> VelocityNet {
    let mut net = VelocityNet::new(cfg, seed).unwrap();
    let mut rng = Rng::new(seed ^ 0xabc);
    let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();
    for n in names {
        let t = net.params_mut().get_mut(&n).unwrap();
        let noise = rng.randn(t.shape()).scale(0.4);
        *t = t.add(&noise).unwrap();
    }
    net
}

pub fn test_image(w: usize, h: usize, seed: usize) -> RgbImage {
    let planes = [0, 1, 2].map(|c| {
        GrayImage::from_fn(w, h, |x, y| ((x * 3 + y * 5 + c + seed) % 7) as f64 / 7.0)
    });
    RgbImage::from_planes(planes).unwrap()
}

pub struct Case {
    pub z0: Tensor,
    pub eps: Tensor,
    pub y: GrayImage,
    pub cond: Condition,
    pub t: f64,
}

pub fn case(net: &VelocityNet, seed: u64) -> Case {
    let mut rng = Rng::new(seed);
    let shape = net.latent_shape();
    let w = net.config().canvas;
    let y = GrayImage::from_fn(w, w, |x, yy| if (x + yy) % 3 == 0 { 1.0 } else { 0.1 * x as f64 });
    Case {
        z0: net.codec().encode(&y).unwrap(),
        eps: rng.randn(&shape),
        cond: net.condition(&test_image(w, w, seed as usize)).unwrap(),
        y,
        t: 0.37,
    }
}

/// Flow-matching loss plus `coef · Σ ẑ0` evaluated by plain forward passes.
fn surrogate(net: &VelocityNet, c: &Case, cond: Option<&Condition>, coef: f64) -> f64 {
    let z_t = c.z0.scale(1.0 - c.t).add(&c.eps.scale(c.t)).unwrap();
    let v = net.velocity(&z_t, c.t, cond, cond.is_some()).unwrap();
    let target = c.eps.sub(&c.z0).unwrap();
    let n = v.data().len() as f64;
    let fm: f64 = v.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let clean: f64 = z_t.data().iter().zip(v.data()).map(|(z, v)| z - c.t * v).sum();
    fm + coef * clean
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) == 0.0 {
        0.0
    } else {
        diff / na.max(nb)
    }
}

/// Relative error between analytic and central-difference gradients for
/// each trainable parameter, by name.
pub fn gradient_errors(mut net: VelocityNet, c: &Case, conditional: bool, pixel: bool) -> Vec<(String, f64)> {
    let obj = ObjectiveConfig {
        pixel_enabled: pixel,
        ..ObjectiveConfig::default()
    };
    let item = TrainItem {
        z0: &c.z0,
        y: &c.y,
        cond: conditional.then_some(&c.cond),
        eps: c.eps.clone(),
        t: c.t,
    };
    let mut g = Graph::new();
    let l = sample_loss(&mut g, &net, &item, &obj).unwrap();
    let grads = g.backward(l.loss, net.params()).unwrap();
    let coef = if pixel && conditional { obj.proxy_weight * l.terms.sigma * l.terms.pix } else { 0.0 };
    assert!(!pixel || !conditional || coef > 0.0, "pixel term inactive");
    let cond = conditional.then_some(&c.cond);
    let trainable: Vec<String> = net.params().trainable_names().into_iter().map(String::from).collect();
    assert!(!trainable.is_empty());
    let mut out = Vec::new();
    for name in trainable {
        let id = net.params().id(&name).unwrap();
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(net.params().get(&name).unwrap().shape()));
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = net.params().get(&name).unwrap().data()[i];
            net.params_mut().get_mut(&name).unwrap().data_mut()[i] = orig + FD_STEP;
            let up = surrogate(&net, c, cond, coef);
            net.params_mut().get_mut(&name).unwrap().data_mut()[i] = orig - FD_STEP;
            let down = surrogate(&net, c, cond, coef);
            net.params_mut().get_mut(&name).unwrap().data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        out.push((name, rel_err(analytic.data(), &numeric)));
    }
    out
}

/// Maximum bipartite matching size by exhaustive search over subsets of
/// the right side.
pub fn brute_matching(adj: &[Vec<usize>], n_right: usize) -> usize {
    assert!(n_right <= 20);
    let mut best = vec![None::<usize>; 1 << n_right];
    best[0] = Some(0);
    let mut top = 0;
    for nbrs in adj {
        let mut next = best.clone();
        for (mask, b) in best.iter().enumerate() {
            let Some(b) = *b else { continue };
            for &r in nbrs {
                if mask & (1 << r) == 0 {
                    let m = mask | (1 << r);
                    if next[m].is_none_or(|x| x < b + 1) {
                        next[m] = Some(b + 1);
                    }
                }
            }
        }
        best = next;
    }
    for b in best.into_iter().flatten() {
        top = top.max(b);
    }
    top
}
