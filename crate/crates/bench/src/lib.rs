//! Criterion benchmarks for the hot paths of training and evaluation.

use criterion::{black_box, BatchSize, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mada_core::augment::{ascend_step, AdversarialBatch};
use mada_core::eval::empirical_wasserstein;
use mada_core::metaloop::meta_gradient;
use mada_core::nets::{ArchSpec, TaskModel, Wae, WaeArch};
use mada_core::{Batch, HyperParams, ImageShape, MetaGradMode, SampleOrigin, ShapeSignature};

fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Batch {
    let x = Array2::from_shape_simple_fn((n, dim), || rng.gen_range(0.0..1.0));
    let y = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    Batch::new(x, y, classes).expect("batch")
}

fn desk_task() -> TaskModel {
    let sig = ShapeSignature { image: ImageShape::new(32, 32, 3), n_classes: 10 };
    TaskModel::new(ArchSpec::DigitsConvnet { conv1: 8, conv2: 16, fc: 64, kernel: 5 }, sig).expect("task")
}

pub fn task_forward_backward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let task = desk_task();
    let theta = task.init_params(&mut rng).values;
    let batch = random_batch(&mut rng, 32, 3 * 32 * 32, 10);
    c.bench_function("task_loss_and_grad_b32", |b| b.iter(|| task.loss_and_grad(black_box(&theta), &batch).expect("grad")));
}

pub fn ascent(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let task = desk_task();
    let theta = task.init_params(&mut rng).values;
    let dim = 3 * 32 * 32;
    let wae = Wae::new(WaeArch::digits(dim)).expect("wae");
    let psi = wae.init_params(&mut rng);
    let batch = random_batch(&mut rng, 32, dim, 10);
    let origins: Vec<SampleOrigin> = (0..32).map(|index| SampleOrigin { domain: "bench".into(), index }).collect();
    let start = AdversarialBatch::start(&task, &theta, batch.images.clone(), batch.labels.clone(), origins).expect("start");
    let h = HyperParams { gamma: 0.01, ..HyperParams::default() };
    c.bench_function("ascent_step_b32", |b| {
        b.iter_batched(|| start.clone(), |s| ascend_step(&task, &theta, &wae, &psi, s, &h).expect("step"), BatchSize::SmallInput)
    });
}

pub fn wasserstein(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("empirical_wasserstein");
    for n in [64, 256] {
        let a = Array2::from_shape_simple_fn((n, 64), || rng.gen_range(-1.0..1.0));
        let b = Array2::from_shape_simple_fn((n, 64), || rng.gen_range(-1.0..1.0));
        group.bench_function(format!("{n}x{n}"), |bn| bn.iter(|| empirical_wasserstein(black_box(&a), &b).expect("w2")));
    }
    let a = Array2::from_shape_simple_fn((96, 64), || rng.gen_range(-1.0..1.0));
    let b = Array2::from_shape_simple_fn((128, 64), || rng.gen_range(-1.0..1.0));
    group.bench_function("96x128", |bn| bn.iter(|| empirical_wasserstein(black_box(&a), &b).expect("w2")));
    group.finish();
}

pub fn meta_gradients(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let task = desk_task();
    let theta = task.init_params(&mut rng).values;
    let dim = 3 * 32 * 32;
    let source = random_batch(&mut rng, 32, dim, 10);
    let augmented: Vec<Batch> = (0..3).map(|_| random_batch(&mut rng, 32, dim, 10)).collect();
    let mut group = c.benchmark_group("meta_gradient_k3");
    group.sample_size(10);
    for mode in [MetaGradMode::FirstOrder, MetaGradMode::FullSecondOrder] {
        let h = HyperParams { meta_grad_mode: mode, eta: 1e-3, ..HyperParams::default() };
        group.bench_function(mode.to_string(), |b| b.iter(|| meta_gradient(&task, black_box(&theta), &source, &augmented, &h).expect("meta")));
    }
    group.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    task_forward_backward(c);
    ascent(c);
    wasserstein(c);
    meta_gradients(c);
}
