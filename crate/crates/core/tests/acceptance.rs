//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{brute_matching, case, gradient_errors, randomized, small, test_image};
use edgeflow::checkpoint;
use edgeflow::config::RunConfig;
use edgeflow::eval::{
    self, f_measure, match_boundaries, nms_thin, spearman, BinaryMap, Counts, EvalConfig, EvalMode,
    EvalReport, MatchTolerance,
};
use edgeflow::flow::{
    clean_estimate, guide, make_path_sample, sample, velocity_target, BaseField, CondField, GuidedField,
    Schedule, VelocityField,
};
use edgeflow::image::GrayImage;
use edgeflow::net::{NetConfig, Phase, VelocityNet};
use edgeflow::numerics::{Graph, ParamStore, Rng, Tensor};
use edgeflow::par::Mode;
use edgeflow::pipeline::{self, InferConfig};
use edgeflow::pixel::{
    inject_proxy_gradient, pixel_loss, sample_loss, ObjectiveConfig, PixelLossConfig, TrainItem, ZERO_LEVEL,
};
use edgeflow::synth::{encode_pgm, generate, Sample};
use edgeflow::train::{self, TrainConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn bits_equal(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (seed, phase, conditional, pixel) in [
        (1, Phase::Pretrain, false, false),
        (3, Phase::Finetune, true, false),
        (5, Phase::Finetune, true, true),
    ] {
        let mut net = randomized(small(), seed);
        net.set_phase(phase);
        let c = case(&net, seed + 1);
        for (name, e) in gradient_errors(net, &c, conditional, pixel) {
            ensure!(e < 1e-5, "{name} ({phase:?}, pixel {pixel}): relative error {e:e}");
            worst = worst.max(e);
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("{checked} parameter tensors, worst relative error {worst:.2e}, {secs:.1}s"))
}

fn path_identities() -> Outcome {
    let mut rng = Rng::new(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let shape = [rng.range_inclusive(1, 4) as usize, rng.range_inclusive(1, 5) as usize, rng.range_inclusive(1, 5) as usize];
        let scale = rng.uniform(0.1, 10.0);
        let z0 = rng.randn(&shape).scale(scale);
        let eps = rng.randn(&shape);
        let t = rng.next_f64();
        let at0 = ok(make_path_sample(&z0, &eps, 0.0))?;
        let at1 = ok(make_path_sample(&z0, &eps, 1.0))?;
        let z_t = ok(make_path_sample(&z0, &eps, t))?;
        let v = ok(velocity_target(&z0, &eps))?;
        let back = ok(clean_estimate(&z_t, t, &v))?;
        for e in [at0.max_abs_diff(&z0), at1.max_abs_diff(&eps), back.max_abs_diff(&z0)] {
            worst = worst.max(e);
        }
    }
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    Ok(format!("1000 draws, max deviation {worst:.2e}"))
}

fn lora_contracts() -> Outcome {
    let cfg = NetConfig {
        d_model: 16,
        blocks: 2,
        heads: 2,
        lora_rank: 2,
        prompt_tokens: 2,
        mlp_ratio: 2,
        patch: 2,
        canvas: 8,
        codec_seed: 1,
    };
    let mut rng = Rng::new(21);
    let mut net = ok(VelocityNet::new(cfg.clone(), 5))?;
    let head = net.params().get("head.weight").unwrap().shape().to_vec();
    *net.params_mut().get_mut("head.weight").unwrap() = rng.randn(&head).scale(0.2);
    let img = test_image(8, 8, 2);
    let cond = ok(net.condition(&img))?;
    let z = rng.randn(&net.latent_shape());

    // zero B with random A
    for b in 0..cfg.blocks {
        for proj in ["q", "k", "v"] {
            let t = net.params_mut().get_mut(&format!("blocks.{b}.attn.lora_{proj}.a")).unwrap();
            *t = rng.randn(t.shape());
        }
    }
    for t in [0.0, 0.3, 0.9] {
        let adapted = ok(net.velocity(&z, t, Some(&cond), true))?;
        let plain = ok(net.velocity(&z, t, Some(&cond), false))?;
        ensure!(bits_equal(&adapted, &plain), "B = 0 forward differs at t = {t}");
    }

    // arbitrary B: prompt and noise projections have no path from the
    // block's own adapter
    net.set_phase(Phase::Finetune);
    for b in 0..cfg.blocks {
        for proj in ["q", "k", "v"] {
            let t = net.params_mut().get_mut(&format!("blocks.{b}.attn.lora_{proj}.b")).unwrap();
            *t = rng.randn(t.shape());
        }
    }
    let mut with = Graph::new();
    let tw = ok(net.forward_graph(&mut with, &z, 0.4, Some(&cond), true))?;
    let mut without = Graph::new();
    let to = ok(net.forward_graph(&mut without, &z, 0.4, Some(&cond), false))?;
    let shared = tw.noise_rows.end;
    ensure!(tw.prompt_rows.start == 0 && tw.prompt_rows.end == tw.noise_rows.start, "unexpected row layout");
    let b0 = (&tw.blocks[0], &to.blocks[0]);
    for (name, a, o) in [("q", b0.0.q, b0.1.q), ("k", b0.0.k, b0.1.k), ("v", b0.0.v, b0.1.v)] {
        let (va, vo) = (with.value(a), without.value(o));
        let d = va.shape()[1];
        ensure!(
            va.data()[..shared * d] == vo.data()[..shared * d],
            "block 0 {name}: prompt/noise rows change with the adapter"
        );
        ensure!(va.data()[shared * d..] != vo.data()[shared * d..], "block 0 {name}: adapter had no effect on condition rows");
    }
    for (b, bt) in tw.blocks.iter().enumerate() {
        for (name, node) in [("q", bt.q), ("k", bt.k), ("v", bt.v)] {
            let rows = ok(with.slice_rows(node, 0, shared))?;
            let s = with.sum(rows);
            let grads = ok(with.backward(s, net.params()))?;
            for later in b..cfg.blocks {
                for proj in ["q", "k", "v"] {
                    for part in ["a", "b"] {
                        let pname = format!("blocks.{later}.attn.lora_{proj}.{part}");
                        let id = net.params().id(&pname).unwrap();
                        let zero = grads.param(id).is_none_or(|g| g.data().iter().all(|&x| x == 0.0));
                        ensure!(zero, "block {b} {name} prompt/noise rows depend on {pname}");
                    }
                }
            }
        }
    }

    // frozen backbone after fine-tuning
    let before: Vec<(String, Tensor)> = net
        .params()
        .iter()
        .filter(|p| !edgeflow::net::is_condition_param(&p.name))
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    let adapters_before = net.params().get("blocks.0.attn.lora_v.b").unwrap().clone();
    let data = ok(generate(&RunConfig::default().scene_spec(4), 3))?;
    let tc = TrainConfig {
        iterations: 5,
        batch: 2,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    ok(train::finetune(&mut net, &data, &tc))?;
    for (name, v) in &before {
        ensure!(bits_equal(net.params().get(name).unwrap(), v), "{name} changed during fine-tuning");
    }
    ensure!(
        !bits_equal(net.params().get("blocks.0.attn.lora_v.b").unwrap(), &adapters_before),
        "adapter did not train"
    );
    Ok(format!(
        "B = 0 forward bit-identical; prompt/noise Q/K/V independent of the adapter in all {} blocks; {} frozen tensors unchanged",
        cfg.blocks,
        before.len()
    ))
}

fn proxy_gradient() -> Outcome {
    let mut rng = Rng::new(31);
    // captured gradient on the clean estimate
    for _ in 0..20 {
        let l_pix = rng.uniform(0.01, 5.0);
        let mut g = Graph::new();
        let x = g.input(rng.randn(&[3, 2, 2]));
        let proxy = ok(inject_proxy_gradient(&mut g, x, l_pix))?;
        ensure!(g.value(proxy).data() == [l_pix], "forward value differs from L_pix");
        let grads = ok(g.backward(proxy, &ParamStore::new()))?;
        let gx = grads.of(x).ok_or("no gradient on the clean estimate")?;
        ensure!(bits_equal(gx, &Tensor::full(&[3, 2, 2], l_pix)), "gradient is not L_pix·1");
    }

    // through the training objective the clean estimate receives exactly
    // the weighted constant
    let mut net = randomized(small(), 9);
    net.set_phase(Phase::Finetune);
    let c = case(&net, 10);
    let obj = ObjectiveConfig::default();
    let item = TrainItem {
        z0: &c.z0,
        y: &c.y,
        cond: Some(&c.cond),
        eps: c.eps.clone(),
        t: c.t,
    };
    let mut g = Graph::new();
    let l = ok(sample_loss(&mut g, &net, &item, &obj))?;
    let clean = l.clean.ok_or("pixel term inactive")?;
    let grads = ok(g.backward(l.loss, net.params()))?;
    let expected = obj.proxy_weight * l.terms.sigma * l.terms.pix;
    ensure!(
        grads.of(clean).is_some_and(|t| t.data().iter().all(|&v| v == expected)),
        "objective gradient on ẑ0 is not the weighted constant"
    );

    // decoder parameters upstream of the injected loss stay untouched
    let mut store = ParamStore::new();
    let n = 4;
    let z = rng.randn(&[n, 1]);
    let mix_id = store.insert("decoder.mix", rng.randn(&[n, n]), true);
    let shift_id = store.insert("decoder.shift", rng.randn(&[n, 1]), true);
    let mut g = Graph::new();
    let x = g.input(z);
    let mix = ok(g.param(&store, "decoder.mix"))?;
    let shift = ok(g.param(&store, "decoder.shift"))?;
    let decoded = ok(g.matmul(mix, x))?;
    let decoded = ok(g.add(decoded, shift))?;
    let sq = ok(g.mul(decoded, decoded))?;
    let loss = g.mean(sq);
    let proxy = ok(g.specify_gradient(x, loss))?;
    let grads = ok(g.backward(proxy, &store))?;
    for id in [mix_id, shift_id] {
        ensure!(
            grads.param(id).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)),
            "decoder parameter received gradient"
        );
    }
    let l_val = g.value(loss).data()[0];
    ensure!(
        grads.of(x).is_some_and(|t| t.data().iter().all(|&v| v == l_val)),
        "input gradient is not L·1"
    );

    // linear model ẑ0 = W u
    let mut worst_cases = 0;
    for _ in 0..20 {
        let (rows, cols) = (rng.range_inclusive(1, 6) as usize, rng.range_inclusive(1, 6) as usize);
        let mut store = ParamStore::new();
        let w_id = store.insert("w", rng.randn(&[rows, cols]), true);
        let u = rng.randn(&[cols, 1]);
        let l_pix = rng.uniform(0.1, 3.0);
        let mut g = Graph::new();
        let w = ok(g.param(&store, "w"))?;
        let un = g.constant(u.clone());
        let zhat = ok(g.matmul(w, un))?;
        let proxy = ok(inject_proxy_gradient(&mut g, zhat, l_pix))?;
        let grads = ok(g.backward(proxy, &store))?;
        let gw = grads.param(w_id).ok_or("no gradient on W")?;
        let closed = Tensor::full(&[rows, 1], l_pix).matmul(&ok(u.transpose())?).map_err(|e| e.to_string())?;
        ensure!(bits_equal(gw, &closed), "∇W differs from g·uᵀ for {rows}x{cols}");
        worst_cases += 1;
    }
    Ok(format!(
        "gradient on ẑ0 is exactly L_pix·1; decoder gradients zero; ∇W = g·uᵀ exact on {worst_cases} linear models"
    ))
}

/// Per-pixel loss terms written out case by case.
fn scalar_pixel_loss(yhat: &[f64], y: &[f64], eta: f64, lambda: f64) -> f64 {
    let mut pos = 0.0;
    let mut neg = 0.0;
    for &t in y {
        if t >= eta {
            pos += 1.0;
        } else if t < ZERO_LEVEL {
            neg += 1.0;
        }
    }
    let valid = pos + neg;
    if valid == 0.0 {
        return 0.0;
    }
    let alpha = lambda * pos / valid;
    let beta = neg / valid;
    let mut total = 0.0;
    for i in 0..y.len() {
        let term = if y[i] >= eta {
            -beta * yhat[i].ln()
        } else if y[i] < ZERO_LEVEL {
            -alpha * (1.0 - yhat[i]).ln()
        } else {
            0.0
        };
        total += term;
    }
    total / valid
}

fn pixel_oracle() -> Outcome {
    let cfg = PixelLossConfig { eta: 0.3, lambda: 1.1 };
    let y = GrayImage::from_vec(2, 2, vec![0.0, 0.2, 0.5, 1.0]).unwrap();
    let yhat = GrayImage::from_vec(2, 2, vec![0.1, 0.9, 0.5, 0.8]).unwrap();
    let worked = ok(pixel_loss(&yhat, &y, &cfg))?;
    let by_hand = (-(2.2 / 3.0) * 0.9f64.ln() - (1.0 / 3.0) * (0.5f64.ln() + 0.8f64.ln())) / 3.0;
    ensure!((worked.value - by_hand).abs() < 1e-12, "worked example {} vs {by_hand}", worked.value);
    ensure!((worked.value - 0.12757).abs() < 1e-5, "worked example {}", worked.value);
    ensure!(worked.positives == 2 && worked.negatives == 1, "class counts");

    let mut rng = Rng::new(41);
    let mut worst = (worked.value - scalar_pixel_loss(yhat.data(), y.data(), 0.3, 1.1)).abs();
    for _ in 1..200 {
        let (w, h) = (rng.range_inclusive(1, 9) as usize, rng.range_inclusive(1, 9) as usize);
        let eta = rng.uniform(0.05, 0.95);
        let lambda = rng.uniform(0.5, 2.0);
        let yv: Vec<f64> = (0..w * h)
            .map(|_| match rng.range_inclusive(0, 2) {
                0 => 0.0,
                1 => rng.next_f64(),
                _ => rng.uniform(eta, 1.0),
            })
            .collect();
        let pv: Vec<f64> = (0..w * h).map(|_| rng.uniform(0.001, 0.999)).collect();
        let y = GrayImage::from_vec(w, h, yv.clone()).unwrap();
        let p = GrayImage::from_vec(w, h, pv.clone()).unwrap();
        let got = ok(pixel_loss(&p, &y, &PixelLossConfig { eta, lambda }))?.value;
        let want = scalar_pixel_loss(&pv, &yv, eta, lambda);
        worst = worst.max((got - want).abs());
    }
    ensure!(worst < 1e-12, "max deviation {worst:e}");
    Ok(format!("worked example {:.5}; 200 cases, max deviation {worst:.2e}", worked.value))
}

fn guidance_identities() -> Outcome {
    let cfg = NetConfig {
        d_model: 16,
        blocks: 1,
        heads: 2,
        lora_rank: 2,
        prompt_tokens: 2,
        mlp_ratio: 2,
        patch: 2,
        canvas: 8,
        codec_seed: 2,
    };
    let net = randomized(cfg, 51);
    let cond = ok(net.condition(&test_image(8, 8, 1)))?;
    let shape = net.latent_shape();
    let schedule = ok(Schedule::uniform(6))?;
    let run = |f: &dyn Fn(&mut Rng) -> edgeflow::Result<Tensor>| -> Result<Tensor, String> { ok(f(&mut Rng::new(77))) };
    let base = BaseField(&net);
    let condf = CondField { net: &net, cond: &cond };
    let plain_cond = run(&|r| sample(&condf, &schedule, r, &shape))?;
    let plain_base = run(&|r| sample(&base, &schedule, r, &shape))?;
    let g1 = ok(GuidedField::new(BaseField(&net), CondField { net: &net, cond: &cond }, 1.0))?;
    let g0 = ok(GuidedField::new(BaseField(&net), CondField { net: &net, cond: &cond }, 0.0))?;
    ensure!(bits_equal(&run(&|r| sample(&g1, &schedule, r, &shape))?, &plain_cond), "γ = 1 differs from conditional sampling");
    ensure!(bits_equal(&run(&|r| sample(&g0, &schedule, r, &shape))?, &plain_base), "γ = 0 differs from unconditional sampling");

    let mut rng = Rng::new(52);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let z = rng.randn(&shape).scale(rng.uniform(0.1, 3.0));
        let t = rng.next_f64();
        let gamma = rng.uniform(0.0, 5.0);
        let vb = ok(net.base_velocity(&z, t))?;
        let vc = ok(net.cond_velocity(&z, t, &cond))?;
        let field = ok(GuidedField::new(BaseField(&net), CondField { net: &net, cond: &cond }, gamma))?;
        let got = ok(field.eval(&z, t))?;
        let direct = ok(guide(&vb, &vc, gamma))?;
        ensure!(bits_equal(&got, &direct), "field and combination disagree");
        for ((g, b), c) in got.data().iter().zip(vb.data()).zip(vc.data()) {
            let want = b + gamma * (c - b);
            let err = (g - want).abs() / want.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    ensure!(worst <= 4.0 * f64::EPSILON, "guided combination off by {worst:e}");
    Ok(format!("γ = 1 and γ = 0 bit-identical; recomputation within {worst:.1e} over 50 draws"))
}

/// Brute-force counts: adjacency built from raw distances, maximum
/// matchings by exhaustive search.
fn brute_counts(pred: &BinaryMap, gt: &GrayImage, radius: f64, eta: f64) -> Counts {
    let (w, h) = (gt.width(), gt.height());
    let positives: Vec<(usize, usize)> =
        (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| gt.get(x, y) >= eta).collect();
    let cares: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| {
            let v = gt.get(x, y);
            v >= ZERO_LEVEL && v < eta
        })
        .collect();
    let near = |a: (usize, usize), b: (usize, usize)| {
        let dx = a.0 as f64 - b.0 as f64;
        let dy = a.1 as f64 - b.1 as f64;
        dx * dx + dy * dy <= radius * radius
    };
    let mut all = Vec::new();
    let mut plain = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !pred.get(x, y) {
                continue;
            }
            let nbrs: Vec<usize> = (0..positives.len()).filter(|&k| near((x, y), positives[k])).collect();
            if !cares.iter().any(|&c| near((x, y), c)) {
                plain.push(nbrs.clone());
            }
            all.push(nbrs);
        }
    }
    let tp = brute_matching(&all, positives.len());
    let plain_matched = brute_matching(&plain, positives.len());
    Counts {
        tp,
        fp: plain.len() - plain_matched,
        fn_: positives.len() - tp,
    }
}

fn evaluator() -> Outcome {
    let mut rng = Rng::new(61);
    let eta = 0.3;
    for case in 0..100 {
        let (w, h) = (rng.range_inclusive(1, 12) as usize, rng.range_inclusive(1, 12) as usize);
        let p_pos = rng.uniform(0.0, 0.15);
        let p_dc = rng.uniform(0.0, 0.1);
        let mut gt = GrayImage::new(w, h);
        let mut n_pos = 0;
        for y in 0..h {
            for x in 0..w {
                let u = rng.next_f64();
                if u < p_pos && n_pos < 14 {
                    gt.set(x, y, rng.uniform(eta, 1.0));
                    n_pos += 1;
                } else if u < p_pos + p_dc {
                    gt.set(x, y, rng.uniform(0.01, eta - 0.01));
                }
            }
        }
        let density = rng.uniform(0.0, 0.3);
        let mut pred = BinaryMap::new(w, h);
        for y in 0..h {
            for x in 0..w {
                pred.set(x, y, rng.bernoulli(density));
            }
        }
        let tol = ok(MatchTolerance::new(rng.uniform(0.02, 0.2)))?;
        let got = ok(match_boundaries(&pred, &gt, tol, eta))?;
        let want = brute_counts(&pred, &gt, tol.max_distance(w, h), eta);
        ensure!(got == want, "instance {case} ({w}x{h}): {got:?} vs brute force {want:?}");
    }

    ensure!(f_measure(1.0, 1.0) == 1.0, "F(1, 1)");
    ensure!((f_measure(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-15, "F(0.5, 1)");
    ensure!(f_measure(0.0, 0.0) == 0.0, "F(0, 0)");
    let c = Counts { tp: 3, fp: 1, fn_: 3 };
    ensure!((c.f_measure() - 2.0 * 0.75 * 0.5 / 1.25).abs() < 1e-15, "F from counts");

    let cfg = RunConfig::default();
    let samples = ok(generate(&cfg.scene_spec(62), 6))?;
    let ec = cfg.eval_config();
    let mut datasets = 0;
    for noise in [0.0, 0.2, 0.5] {
        let mut r = Rng::new(63);
        let preds: Vec<(String, GrayImage)> = samples
            .iter()
            .map(|s| {
                let mut p = eval::gaussian_smooth(&s.gt, 1.0);
                for v in p.data_mut() {
                    *v = (*v + noise * r.next_f64()).clamp(0.0, 1.0);
                }
                (s.id.clone(), p)
            })
            .collect();
        for mode in [EvalMode::SEval, EvalMode::CEval] {
            let rep = ok(pipeline::evaluate(&samples, &preds, mode, &ec, Mode::default()))?;
            ensure!(rep.ods.f <= rep.ois.f, "{} ODS {} > OIS {}", mode.name(), rep.ods.f, rep.ois.f);
            datasets += 1;
        }
    }
    Ok(format!("100 instances equal brute force; ODS <= OIS on {datasets} evaluations; F spot checks hold"))
}

fn seval_idempotence() -> Outcome {
    let (w, h) = (24, 24);
    let mut pred = GrayImage::new(w, h);
    for x in 2..20 {
        pred.set(x, 3, 0.9);
    }
    for y in 8..22 {
        pred.set(4, y, 0.6);
    }
    for i in 0..10 {
        pred.set(10 + i, 9 + i, 0.75);
    }
    let cfg = EvalConfig::default();
    for tau in cfg.threshold_values() {
        ensure!(nms_thin(&pred, tau) == BinaryMap::threshold(&pred, tau), "nms_thin altered the map at τ = {tau}");
    }
    let mut gt = GrayImage::new(w, h);
    for x in 2..22 {
        gt.set(x, 4, 1.0);
    }
    for i in 0..12 {
        gt.set(10 + i, 9 + i, 0.8);
    }
    let samples = vec![Sample {
        id: "thin".into(),
        image: edgeflow::image::RgbImage::from_gray(&pred),
        gt,
        walls: None,
    }];
    let preds = vec![("thin".to_string(), pred)];
    let s = ok(pipeline::evaluate(&samples, &preds, EvalMode::SEval, &cfg, Mode::default()))?;
    let c = ok(pipeline::evaluate(&samples, &preds, EvalMode::CEval, &cfg, Mode::default()))?;
    ensure!(
        s.ods == c.ods && s.ois == c.ois && s.ods_counts == c.ods_counts,
        "SEval {:?} vs CEval {:?}",
        s.ods,
        c.ods
    );
    Ok(format!("map unchanged at all {} thresholds; SEval = CEval (ODS F {:.4})", cfg.thresholds, s.ods.f))
}

fn ceval(samples: &[Sample], preds: &[(String, GrayImage)], cfg: &RunConfig) -> Result<EvalReport, String> {
    let r = ok(pipeline::evaluate(samples, preds, EvalMode::CEval, &cfg.eval_config(), cfg.par_mode()))?;
    ensure!(r.ods.f <= r.ois.f, "ODS {} > OIS {}", r.ods.f, r.ois.f);
    Ok(r)
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let corpus = ok(generate(&cfg.scene_spec(cfg.seed ^ 1), 256))?;
    let train_set = ok(generate(&cfg.scene_spec(cfg.seed ^ 2), 8))?;
    let held_out = ok(generate(&cfg.scene_spec(cfg.seed ^ 3), 16))?;
    let mut net = ok(VelocityNet::new(cfg.net_config(), cfg.seed))?;
    ok(train::pretrain(&mut net, &corpus, &cfg.train_config(Phase::Pretrain)))?;
    let ic = cfg.infer_config();
    let baseline = ceval(&held_out, &ok(pipeline::infer_all(&net, &held_out, &ic))?, &cfg)?;
    ok(train::finetune(&mut net, &train_set, &cfg.train_config(Phase::Finetune)))?;
    let tuned = ceval(&held_out, &ok(pipeline::infer_all(&net, &held_out, &ic))?, &cfg)?;
    let one_step = InferConfig { steps: 1, ..ic.clone() };
    let single = ceval(&held_out, &ok(pipeline::infer_all(&net, &held_out, &one_step))?, &cfg)?;
    let sweep = ok(pipeline::gamma_sweep(&net, &held_out, &cfg.gammas, &ic))?;
    let (gammas, bright): (Vec<f64>, Vec<f64>) = sweep.iter().copied().unzip();
    let rho = ok(spearman(&gammas, &bright))?;
    let minutes = start.elapsed().as_secs_f64() / 60.0;

    let gain = tuned.ods.f - baseline.ods.f;
    let detail = format!(
        "(a) CEval ODS {:.4} vs baseline {:.4}, gain {gain:+.4} (need >= 0.3); (b) K=50 {:.4} vs K=1 {:.4}; (c) Spearman {rho:.3} over brightness {}; {minutes:.1} min",
        tuned.ods.f,
        baseline.ods.f,
        tuned.ods.f,
        single.ods.f,
        bright.iter().map(|b| format!("{b:.4}")).collect::<Vec<_>>().join("/"),
    );
    let passed = gain >= 0.3 && tuned.ods.f >= single.ods.f && rho > 0.0 && minutes <= 30.0;
    if passed {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tiny_run_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("canvas", "16"),
        ("d_model", "16"),
        ("blocks", "1"),
        ("heads", "2"),
        ("lora_rank", "2"),
        ("pretrain_iterations", "6"),
        ("finetune_iterations", "6"),
        ("batch", "3"),
        ("steps", "4"),
        ("thresholds", "9"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

/// Trains, infers and evaluates; returns encoded predictions, report text
/// and the checkpoint bytes.
fn tiny_pipeline(cfg: &RunConfig) -> Result<(Vec<Vec<u8>>, String, Vec<u8>), String> {
    let data = ok(generate(&cfg.scene_spec(cfg.seed ^ 5), 4))?;
    let held = ok(generate(&cfg.scene_spec(cfg.seed ^ 6), 3))?;
    let mut net = ok(VelocityNet::new(cfg.net_config(), cfg.seed))?;
    ok(train::pretrain(&mut net, &data, &cfg.train_config(Phase::Pretrain)))?;
    ok(train::finetune(&mut net, &data, &cfg.train_config(Phase::Finetune)))?;
    let preds = ok(pipeline::infer_all(&net, &held, &cfg.infer_config()))?;
    let mut report = String::new();
    for mode in [EvalMode::SEval, EvalMode::CEval] {
        report += &ok(pipeline::evaluate(&held, &preds, mode, &cfg.eval_config(), cfg.par_mode()))?.to_csv();
    }
    let encoded = preds.iter().map(|(_, p)| encode_pgm(p)).collect();
    Ok((encoded, report, ok(checkpoint::encode(&net))?))
}

fn determinism() -> Outcome {
    let cfg = tiny_run_config();
    let a = tiny_pipeline(&cfg)?;
    let b = tiny_pipeline(&cfg)?;
    ensure!(a.0 == b.0, "predictions differ between identical runs");
    ensure!(a.1 == b.1, "reports differ between identical runs");
    ensure!(a.2 == b.2, "checkpoints differ between identical runs");
    let mut seq = cfg.clone();
    seq.parallel = false;
    let c = tiny_pipeline(&seq)?;
    ensure!(a.0 == c.0 && a.1 == c.1 && a.2 == c.2, "sequential run differs from parallel run");

    let (net_cfg, store) = ok(checkpoint::decode(&a.2))?;
    let restored = ok(VelocityNet::from_params(net_cfg, store))?;
    ensure!(ok(checkpoint::encode(&restored))? == a.2, "encode/decode round trip changed bytes");
    let dir = std::env::temp_dir().join(format!("edgeflow-acceptance-{}", std::process::id()));
    ok(std::fs::create_dir_all(&dir))?;
    let (p1, p2) = (dir.join("a.ckpt"), dir.join("b.ckpt"));
    ok(checkpoint::save(&restored, &p1))?;
    let loaded = ok(checkpoint::load(&p1, Some(&cfg.net_config())))?;
    ok(checkpoint::save(&loaded, &p2))?;
    let same = ok(std::fs::read(&p1))? == ok(std::fs::read(&p2))?;
    let _ = std::fs::remove_dir_all(&dir);
    ensure!(same, "save/load round trip changed bytes");
    Ok(format!(
        "{} predictions, reports and checkpoint identical across runs and modes; round trip of {} bytes identical",
        a.0.len(),
        a.2.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradients),
        ("path and clean-estimate identities", path_identities),
        ("adapter contracts", lora_contracts),
        ("proxy-gradient contract", proxy_gradient),
        ("pixel-loss oracle", pixel_oracle),
        ("guidance identities", guidance_identities),
        ("evaluator oracle", evaluator),
        ("SEval idempotence", seval_idempotence),
        ("end-to-end toy run", end_to_end),
        ("determinism and persistence", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("criterion {n} PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
