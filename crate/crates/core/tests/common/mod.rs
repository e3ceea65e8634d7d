//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod grad;

use pcsr::{Matrix, Model, Rng};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Gradient entries at or below this magnitude are not compared.
pub const FD_FLOOR: f64 = 1e-8;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let plus = f(&probe);
            probe[i] = orig - FD_STEP;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest relative disagreement over entries where either gradient exceeds
/// the floor.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| a.abs() > FD_FLOOR || n.abs() > FD_FLOOR)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}

pub fn gaussian(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| scale * rng.normal()).collect()).unwrap()
}

pub fn with_params(model: &Model, params: &[f64]) -> Model {
    let mut m = model.clone();
    m.set_flat_params(params).unwrap();
    m
}
