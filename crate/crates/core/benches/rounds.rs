use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fedbiad::config::RunConfig;
use fedbiad::exec::ExecMode;
use fedbiad::federation::mc_generalization_estimate;
use fedbiad::rng::{stream_rng, Stream};

const MODES: [ExecMode; 2] = [ExecMode::Sequential, ExecMode::Parallel];

fn one_round(c: &mut Criterion) {
    let cfg = RunConfig::parse(
        "dataset = mnist\ntrain_limit = 1000\ntest_limit = 200\nclients = 10\nkappa = 0.5\n\
         rounds = 1\nstage_boundary = 1\np = 0.5\nhidden = 64",
    )
    .unwrap();
    let exp = cfg.build().unwrap();
    let mut group = c.benchmark_group("mnist_round");
    group.sample_size(10);
    for mode in MODES {
        let mut fed = cfg.fed.clone();
        fed.exec = mode;
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{mode:?}")),
            &fed,
            |b, fed| {
                b.iter(|| {
                    let mut sim = exp.simulation(fed).unwrap();
                    black_box(sim.step().unwrap().up_bytes)
                })
            },
        );
    }
    group.finish();
}

fn mc_error(c: &mut Criterion) {
    let cfg = RunConfig::parse(
        "dataset = teacher\nteacher_dim = 16\nhidden = 64\nsynth_train = 100\nsynth_test = 500\nclients = 2",
    )
    .unwrap();
    let exp = cfg.build().unwrap();
    let teacher = exp.teacher.as_ref().unwrap();
    let student = exp.simulation(&cfg.fed).unwrap().global_means().clone();
    let mut group = c.benchmark_group("mc_generalization");
    for mode in MODES {
        group.bench_function(BenchmarkId::from_parameter(format!("{mode:?}")), |b| {
            b.iter(|| {
                let mut rng = stream_rng(0, Stream::Evaluation, 0, 0);
                mc_generalization_estimate(
                    &student,
                    1e-4,
                    teacher,
                    &exp.test.inputs,
                    32,
                    &mut rng,
                    mode,
                )
                .unwrap()
                .mean
            })
        });
    }
    group.finish();
}

criterion_group!(benches, one_round, mc_error);
criterion_main!(benches);
