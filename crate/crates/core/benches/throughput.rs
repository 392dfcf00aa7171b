//! Sequential vs data-parallel throughput of the training step and of
//! few-shot evaluation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use factlab::corpus::{builtin_animal_facts, generate_eval_tasks, load_builtin_facts, render_narrative, Vocabulary};
use factlab::model::{init_params, loss_and_grads, ModelConfig};
use factlab::parallel;
use factlab::probe::{evaluate, FewShotConfig};

fn thread_settings() -> Vec<(&'static str, usize)> {
    let all = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    vec![("sequential", 1), ("parallel", all)]
}

fn training_step(c: &mut Criterion) {
    let config = ModelConfig {
        n_layers: 3,
        d_model: 64,
        n_heads: 4,
        d_ff: 256,
        vocab_size: 400,
        max_seq_len: 32,
        init_seed: 0,
    };
    let state = init_params(&config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch: Vec<Vec<u32>> = (0..16)
        .map(|_| (0..24).map(|_| rng.random_range(0..400)).collect())
        .collect();
    let mut group = c.benchmark_group("loss_and_grads");
    group.sample_size(10);
    for (label, threads) in thread_settings() {
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            parallel::set_max_threads(t);
            b.iter(|| loss_and_grads(&state, &batch).unwrap());
        });
    }
    group.finish();
    parallel::set_max_threads(0);
}

fn fewshot_eval(c: &mut Criterion) {
    let registry = load_builtin_facts();
    let narrative = render_narrative(&registry, 7).unwrap();
    let tasks = generate_eval_tasks(&registry, &builtin_animal_facts(), 11).unwrap();
    let evalset: Vec<_> = tasks.values().flatten().take(40).cloned().collect();
    let extra: Vec<String> = evalset.iter().map(|i| i.solved()).collect();
    let vocab = Vocabulary::build(&narrative, &extra).unwrap();
    let config = ModelConfig {
        n_layers: 3,
        d_model: 64,
        n_heads: 4,
        d_ff: 256,
        vocab_size: vocab.len(),
        max_seq_len: 256,
        init_seed: 0,
    };
    let state = init_params(&config).unwrap();
    let fewshot = FewShotConfig {
        k: 2,
        max_new_tokens: 4,
        ..FewShotConfig::default()
    };
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (label, threads) in thread_settings() {
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            parallel::set_max_threads(t);
            b.iter(|| evaluate(&state, &vocab, &evalset, &fewshot).unwrap());
        });
    }
    group.finish();
    parallel::set_max_threads(0);
}

criterion_group!(benches, training_step, fewshot_eval);
criterion_main!(benches);
