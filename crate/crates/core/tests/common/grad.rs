//! One finite-difference instance per loss and per network setting. Each
//! function returns the largest relative error for its seed.

use super::*;
use pcsr::linalg::softmax_rows;
use pcsr::losses::{im_loss, mixup_loss, pcc_loss, total_loss, LossToggles};
use pcsr::{Matrix, Model, Rng};

fn logits_of(v: &[f64], k: usize) -> Matrix {
    Matrix::from_vec(v.len() / k, k, v.to_vec()).unwrap()
}

pub fn im_instance(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let (n, k) = (2 + seed as usize % 7, 2 + seed as usize % 5);
    let z = gaussian(&mut rng, n, k, 2.0);
    let analytic = im_loss(&z).unwrap().grad_logits;
    let numeric = numeric_gradient(|v| im_loss(&logits_of(v, k)).unwrap().value, z.as_slice());
    max_rel_error(analytic.as_slice(), &numeric)
}

pub fn pcc_instance(seed: u64) -> f64 {
    let mut rng = Rng::new(100 + seed);
    let (n, k) = (1 + seed as usize % 9, 2 + seed as usize % 4);
    let z = gaussian(&mut rng, n, k, 2.0);
    let y: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
    let analytic = pcc_loss(&z, &y).unwrap().grad_logits;
    let numeric = numeric_gradient(|v| pcc_loss(&logits_of(v, k), &y).unwrap().value, z.as_slice());
    max_rel_error(analytic.as_slice(), &numeric)
}

pub fn mixup_instance(seed: u64) -> f64 {
    let mut rng = Rng::new(200 + seed);
    let (n, k) = (2 + seed as usize % 6, 2 + seed as usize % 5);
    let pi = softmax_rows(&gaussian(&mut rng, n, k, 1.5)).unwrap();
    let pj = softmax_rows(&gaussian(&mut rng, n, k, 1.5)).unwrap();
    let lambda = rng.sample_beta(0.3).unwrap();
    let z = gaussian(&mut rng, n, k, 2.0);
    let analytic = mixup_loss(&pi, &pj, &z, lambda).unwrap().grad_logits;
    let numeric = numeric_gradient(
        |v| mixup_loss(&pi, &pj, &logits_of(v, k), lambda).unwrap().value,
        z.as_slice(),
    );
    max_rel_error(analytic.as_slice(), &numeric)
}

/// 2-16-8-3 network on 8 samples, IM plus pcc, all parameters including the
/// classifier.
pub fn backprop_instance(seed: u64) -> f64 {
    let mut rng = Rng::new(300 + seed);
    let model = Model::init(2, &[16], 8, 3, &mut rng).unwrap();
    let x = gaussian(&mut rng, 8, 2, 1.0);
    let y: Vec<usize> = (0..8).map(|_| rng.below(3)).collect();
    let loss = |m: &Model| {
        let z = m.logits(&x).unwrap();
        im_loss(&z).unwrap().value + pcc_loss(&z, &y).unwrap().value
    };
    let z = model.logits(&x).unwrap();
    let mut g = im_loss(&z).unwrap().grad_logits;
    g.add_scaled(&pcc_loss(&z, &y).unwrap().grad_logits, 1.0).unwrap();
    let analytic = model.backward(&x, &g).unwrap().flatten();
    let numeric = numeric_gradient(|p| loss(&with_params(&model, p)), &model.flat_params());
    max_rel_error(&analytic, &numeric)
}

/// The whole adaptation objective, including the second forward pass on the
/// mixed inputs, differentiated with respect to every parameter.
pub fn total_objective_instance(seed: u64) -> f64 {
    let mut rng = Rng::new(400 + seed);
    let model = Model::init(3, &[6, 5], 4, 3, &mut rng).unwrap();
    let x = gaussian(&mut rng, 6, 3, 1.0);
    let perm = rng.permutation(6);
    let lambda = rng.sample_beta(0.3).unwrap();
    let mut x_mix = x.clone();
    x_mix.scale(lambda);
    x_mix.add_scaled(&x.select_rows(&perm), 1.0 - lambda).unwrap();
    let y: Vec<usize> = (0..6).map(|_| rng.below(3)).collect();
    // mixup targets are constants computed from the unperturbed model
    let pi = softmax_rows(&model.logits(&x).unwrap()).unwrap();
    let pj = pi.select_rows(&perm);
    let beta = 0.5 + seed as f64 / 20.0;
    let objective = |m: &Model| {
        let z = m.logits(&x).unwrap();
        let zm = m.logits(&x_mix).unwrap();
        total_loss(
            &im_loss(&z).unwrap(),
            &pcc_loss(&z, &y).unwrap(),
            &mixup_loss(&pi, &pj, &zm, lambda).unwrap(),
            beta,
            LossToggles::ALL,
        )
        .unwrap()
    };
    let t = objective(&model);
    let mut g = model.backward(&x, &t.batch_grad).unwrap();
    g.accumulate(&model.backward(&x_mix, &t.mix_grad).unwrap()).unwrap();
    let numeric = numeric_gradient(|p| objective(&with_params(&model, p)).value, &model.flat_params());
    max_rel_error(&g.flatten(), &numeric)
}

pub type Instance = fn(u64) -> f64;

pub const ALL: [(&str, Instance); 5] = [
    ("im", im_instance),
    ("pcc", pcc_instance),
    ("mixup", mixup_instance),
    ("mlp backprop", backprop_instance),
    ("total objective", total_objective_instance),
];
