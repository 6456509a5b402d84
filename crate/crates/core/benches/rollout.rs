use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hsal::agent::{Agent, AgentConfig};
use hsal::learning::{batch_gradient, EncodedScene, Execution, TrainConfig};
use hsal::ndgrad::{ParamSet, Tensor};
use hsal::rng::keyed;
use rand::Rng;

fn scenes(n: usize, cfg: &AgentConfig) -> Vec<EncodedScene> {
    let mut r = keyed(&[7]);
    let (h, w) = cfg.grid;
    (0..n)
        .map(|_| {
            let labels: Vec<usize> = (0..r.random_range(1..=4)).map(|_| r.random_range(0..cfg.classes)).collect();
            EncodedScene {
                volume: Tensor::from_fn(&[cfg.channels, h, w], |_| r.random_range(0.0..1.0)),
                saliency: Tensor::from_fn(&[h, w], |_| r.random_range(0.0..1.0)),
                multiset: labels.iter().copied().collect(),
                labels,
            }
        })
        .collect()
}

fn batch_gradients(c: &mut Criterion) {
    hsal::parallel::init_from_env();
    let config = AgentConfig {
        ctrl_hidden: 128,
        ..Default::default()
    };
    let mut params = ParamSet::new();
    let agent = Agent::new(config.clone(), &mut params, &mut keyed(&[1])).unwrap();
    let data = scenes(32, &config);
    let batch: Vec<usize> = (0..data.len()).collect();
    let train = TrainConfig::default();
    let mut group = c.benchmark_group("batch_gradient");
    group.sample_size(10);
    for (name, exec) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
        group.bench_with_input(BenchmarkId::new(name, batch.len()), &exec, |b, &exec| {
            b.iter(|| batch_gradient(&agent, &params, &data, &batch, &train, 1, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradients);
criterion_main!(benches);
