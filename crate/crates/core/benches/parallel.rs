//! Sequential vs. data-parallel execution of the batch-level hot paths.
//!
//! Run with: cargo bench -p lgcm-core --bench parallel

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lgcm::decoder::GenerationConfig;
use lgcm::trainer::evaluate_ppl;
use lgcm::{fixture, Execution, LgcmConfig, Model};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn setup() -> (Model, Vec<lgcm::data::ExampleInput>) {
    let (vocab, inputs) = fixture::prepare(&fixture::standard(), 7, 32).expect("fixture");
    let model = Model::build(LgcmConfig::desk(vocab.len())).expect("model");
    (model, inputs)
}

fn bench_loss_and_grads(c: &mut Criterion) {
    let (model, inputs) = setup();
    let batch = &inputs[..16];
    let mut group = c.benchmark_group("loss_and_grads");
    group.sample_size(10);
    for (label, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(label), &exec, |b, &exec| {
            b.iter(|| black_box(model.loss_and_grads(black_box(batch), exec, None).expect("grads")))
        });
    }
    group.finish();
}

fn bench_evaluate_ppl(c: &mut Criterion) {
    let (model, inputs) = setup();
    let mut group = c.benchmark_group("evaluate_ppl");
    group.sample_size(10);
    for (label, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(label), &exec, |b, &exec| {
            b.iter(|| black_box(evaluate_ppl(&model, black_box(&inputs), exec).expect("ppl")))
        });
    }
    group.finish();
}

fn bench_generate(c: &mut Criterion) {
    let (model, inputs) = setup();
    let gen = GenerationConfig {
        max_new_tokens: 8,
        ..GenerationConfig::default()
    };
    let mut group = c.benchmark_group("generate_all");
    group.sample_size(10);
    for (label, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(label), &exec, |b, &exec| {
            b.iter(|| black_box(model.generate_all(black_box(&inputs[..16]), &gen, exec).expect("generate")))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_loss_and_grads, bench_evaluate_ppl, bench_generate);
criterion_main!(benches);
