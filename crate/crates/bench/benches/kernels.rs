use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use dalc_core::gbt::gbt_fit;
use dalc_core::harness::{build_training_set, desk_net_config, generate_synthetic, EvalProtocol, SyntheticSpec};
use dalc_core::net::train;
use dalc_core::{chrf, exp3_fit, AnchorObservation, ChrfConfig, GbtConfig, NetConfig, PredictorModel};

fn bench_chrf(c: &mut Criterion) {
    let hyp = "the committee approved the revised budget for the next fiscal year";
    let reference = "the committee has approved a revised budget for next fiscal year";
    let cfg = ChrfConfig::default();
    c.bench_function("chrf/sentence", |b| {
        b.iter(|| chrf(black_box(hyp), black_box(reference), &cfg).unwrap())
    });
}

fn bench_exp3(c: &mut Criterion) {
    let obs: Vec<AnchorObservation> = [0u64, 1000, 3000, 10_000, 20_000, 100_000]
        .iter()
        .map(|&n| AnchorObservation::new(n, 0.7 - 0.2 * ((n + 1) as f64).powf(-0.3)))
        .collect();
    c.bench_function("exp3_fit/6_points", |b| b.iter(|| exp3_fit(black_box(&obs)).unwrap()));
}

fn bench_gbt(c: &mut Criterion) {
    let rows: Vec<Vec<f64>> = (0..500)
        .map(|i| (0..11).map(|j| ((i * 7 + j * 13) % 97) as f64 / 97.0).collect())
        .collect();
    let targets: Vec<f64> = rows.iter().map(|r| 0.3 * r[0] + 0.5 * r[3] * r[5]).collect();
    let cfg = GbtConfig {
        n_trees: 20,
        max_depth: 6,
        ..GbtConfig::default()
    };
    c.bench_function("gbt_fit/500x11_20_trees", |b| {
        b.iter(|| gbt_fit(black_box(&rows), black_box(&targets), &cfg, 1).unwrap())
    });
}

fn bench_net(c: &mut Criterion) {
    let spec = SyntheticSpec::small(1);
    let m = generate_synthetic(&spec).unwrap();
    let mut p = EvalProtocol::new("law", desk_net_config(spec.encoder_dim));
    p.anchor_sizes = vec![0, 100, 300, 1000];
    let set = build_training_set(&m, &p).unwrap();

    let one_epoch = NetConfig {
        max_epochs: 1,
        ..p.net.clone()
    };
    c.bench_function("net/train_epoch", |b| {
        b.iter(|| train(black_box(&set.instances), &one_epoch).unwrap())
    });

    let model = PredictorModel::init(p.net.clone()).unwrap();
    let dom = m.domain("law").unwrap();
    let eval = dom.eval_sentences();
    let corpus: BTreeMap<_, _> = [0u64, 100, 300, 1000]
        .iter()
        .map(|&n| {
            (
                n,
                dalc_core::features::resolve_corpus_features(&dom.samples, n, false).unwrap(),
            )
        })
        .collect();
    c.bench_function("net/predict_curve", |b| {
        b.iter(|| model.predict_curve_with(black_box(&eval), &corpus).unwrap())
    });
}

criterion_group!(benches, bench_chrf, bench_exp3, bench_gbt, bench_net);
criterion_main!(benches);
