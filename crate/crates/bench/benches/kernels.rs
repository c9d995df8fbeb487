use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;
use vflsim_core::config::ExperimentConfig;
use vflsim_core::experiment::selection_dataset;
use vflsim_core::game::{harmonic_step, recursion_step, simulate_repeated_game, SimulationOptions};
use vflsim_core::mi::{dv_estimate, sample_batch, train_mi, MiTrainConfig};
use vflsim_core::rng::{rng_from, stream};
use vflsim_core::vfl::{epoch_batches, initial_networks, Federation, VflData};
use vflsim_core::{Activation, DenseNet, Matrix, StrategyState};

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    use rand::Rng;
    let mut rng = rng_from(seed, &[0]);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dense(c: &mut Criterion) {
    let mut rng = rng_from(1, &[stream::NN_INIT]);
    let net = DenseNet::new(&[40, 64, 64, 2], &[Activation::Relu, Activation::Relu, Activation::Identity], &mut rng).unwrap();
    let x = random_matrix(16, 40, 2);
    let up = random_matrix(16, 2, 3);
    c.bench_function("dense_forward_16x40", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));
    let (_, tape) = net.forward(&x).unwrap();
    c.bench_function("dense_backward_16x40", |b| b.iter(|| net.backward(black_box(&tape), black_box(&up)).unwrap()));
}

fn mutual_information(c: &mut Criterion) {
    let x = random_matrix(2000, 8, 4);
    let y = random_matrix(2000, 2, 5);
    let cfg = MiTrainConfig { steps: 20, monitor_samples: 0, ..MiTrainConfig::default() };
    let model = train_mi(&x, &y, &cfg, 0).unwrap();
    let batch = sample_batch(&x, &y, 50, 6).unwrap();
    c.bench_function("dv_estimate_n50", |b| b.iter(|| dv_estimate(&model, &x, &y, black_box(&batch)).unwrap()));
}

fn vfl_batch(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::default();
    cfg.data.time_steps = 400;
    let ds = selection_dataset(&cfg, 0).unwrap();
    let data = VflData::from_dataset(&ds, None).unwrap();
    let (bottoms, top) = initial_networks(&data, &cfg.vfl, 0).unwrap();
    let batch = epoch_batches(&data.train, cfg.vfl.batch_size, 0, 0).swap_remove(0);
    c.bench_function("vfl_train_batch_5mp", |b| {
        b.iter_batched(
            || Federation::new(&data, bottoms.clone(), top.clone(), &cfg.vfl).unwrap(),
            |mut fed| fed.train_batch(0, 0, black_box(&batch)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn recursion(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let p = cfg.game_params().unwrap();
    let s = StrategyState::new(0.5, 0.5);
    c.bench_function("recursion_direct_step", |b| b.iter(|| recursion_step(black_box(s), &p)));
    c.bench_function("recursion_harmonic_step", |b| b.iter(|| harmonic_step(black_box(s), &p)));
    let opts = SimulationOptions::empirical(500, 0);
    c.bench_function("empirical_game_500", |b| b.iter(|| simulate_repeated_game(&p, black_box(&opts)).unwrap()));
}

criterion_group!(benches, dense, mutual_information, vfl_batch, recursion);
criterion_main!(benches);
