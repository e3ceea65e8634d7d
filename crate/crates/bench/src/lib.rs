//! Shared fixtures for the criterion benches.

use pcsr::linalg::softmax_rows;
use pcsr::trainer::{Arch, PretrainConfig};
use pcsr::{gen_shifted_pair, Dataset, Matrix, Model, Rng, ShiftSpec};

/// Gaussian features and random class probabilities, as a pseudo-labeling
/// step would see them.
pub fn snapshot(n: usize, d: usize, k: usize, seed: u64) -> (Matrix, Matrix) {
    let mut rng = Rng::new(seed);
    let features = gaussian(&mut rng, n, d);
    let logits = gaussian(&mut rng, n, k);
    (features, softmax_rows(&logits).expect("finite logits"))
}

pub fn gaussian(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let data: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.normal()).collect()).collect();
    Matrix::from_rows(&data).expect("finite")
}

/// The benchmark target set and a freshly initialized standard model.
pub fn benchmark_target(seed: u64) -> (Model, Dataset) {
    let spec = ShiftSpec::benchmark(seed);
    let (_, target) = gen_shifted_pair(&spec).expect("valid spec");
    let arch = Arch::standard(spec.class_count);
    let mut rng = Rng::child(PretrainConfig::default().seed, 1);
    let model = Model::init(
        spec.input_dim,
        &arch.hidden,
        arch.feature_dim,
        arch.class_count,
        &mut rng,
    )
    .expect("valid architecture");
    (model, target)
}
