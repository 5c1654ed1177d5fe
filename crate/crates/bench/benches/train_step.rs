use criterion::{criterion_group, criterion_main, Criterion};

use ecan::corpus::build_vocab;
use ecan::corpus::synth::{generate, SynthOptions};
use ecan::model::predict_doc;
use ecan::trainer::{gradcheck, train_step, TrainState};
use ecan::TrainConfig;

fn bench_train_step(c: &mut Criterion) {
    let (cats, docs) = generate(&SynthOptions::default());
    let vocab = build_vocab(&docs, 1, cats).unwrap();
    let doc = docs.iter().max_by_key(|d| d.num_sentences()).unwrap().clone();
    let mut state = TrainState::new(TrainConfig::default(), vocab);
    c.bench_function("train_step/default", |b| b.iter(|| train_step(&mut state, &doc).unwrap()));
    c.bench_function("predict_doc/default", |b| {
        b.iter(|| predict_doc(&state.config, &state.params, &state.vocab, &doc).unwrap())
    });
}

fn bench_gradcheck(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradcheck");
    group.sample_size(10);
    group.bench_function("tiny", |b| b.iter(|| gradcheck(&TrainConfig::tiny(), 1e-5, 1e-4).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_train_step, bench_gradcheck);
criterion_main!(benches);
