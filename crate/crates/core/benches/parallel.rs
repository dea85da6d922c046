//! Sequential versus rayon execution of the three data-parallel stages.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use edgeflow::config::RunConfig;
use edgeflow::eval::EvalMode;
use edgeflow::net::{Phase, VelocityNet};
use edgeflow::par::Mode;
use edgeflow::pipeline::{evaluate, infer_all, InferConfig};
use edgeflow::synth::generate;
use edgeflow::train::train;

fn config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.set("steps", "4").unwrap();
    cfg.set("batch", "8").unwrap();
    cfg.set("pretrain_iterations", "1").unwrap();
    cfg
}

const MODES: [(&str, Mode); 2] = [("sequential", Mode::Sequential), ("parallel", Mode::Parallel)];

fn bench(c: &mut Criterion) {
    let cfg = config();
    let samples = generate(&cfg.scene_spec(1), 8).unwrap();
    let net = VelocityNet::new(cfg.net_config(), 0).unwrap();

    let mut g = c.benchmark_group("infer");
    g.sample_size(10);
    for (name, mode) in MODES {
        let ic = InferConfig {
            par_mode: mode,
            ..cfg.infer_config()
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &ic, |b, ic| {
            b.iter(|| black_box(infer_all(&net, &samples, ic).unwrap()))
        });
    }
    g.finish();

    let preds = infer_all(&net, &samples, &cfg.infer_config()).unwrap();
    let ec = cfg.eval_config();
    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| black_box(evaluate(&samples, &preds, EvalMode::SEval, &ec, mode).unwrap()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    for (name, mode) in MODES {
        let tc = edgeflow::train::TrainConfig {
            par_mode: mode,
            ..cfg.train_config(Phase::Pretrain)
        };
        g.bench_function(name, |b| {
            b.iter(|| {
                let mut n = net.clone();
                black_box(train(&mut n, &samples, Phase::Pretrain, &tc, &mut |_, _| Ok(())).unwrap())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
