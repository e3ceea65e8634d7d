//! Adaptation objectives and their exact gradients with respect to logits.
//!
//! Every loss is a batch mean, so gradients carry a `1/n` factor. Results
//! compose with [`crate::model::Model::backward_from`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{entropy, log_sum_exp, softmax_rows, Matrix, LOG_EPS};

/// A scalar loss and its gradient with respect to the logits it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad_logits: Matrix,
}

/// Which terms of the adaptation objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossToggles {
    pub im: bool,
    pub pcc: bool,
    pub mix: bool,
}

impl LossToggles {
    pub const ALL: LossToggles = LossToggles {
        im: true,
        pcc: true,
        mix: true,
    };

    pub fn any(&self) -> bool {
        self.im || self.pcc || self.mix
    }
}

impl Default for LossToggles {
    fn default() -> Self {
        Self::ALL
    }
}

/// Information maximization: mean per-sample entropy minus the entropy of
/// the batch-mean prediction.
///
/// With `p_i = softmax(z_i)` and `p̄ = mean_i p_i`, the gradient with respect
/// to the probabilities is `g_ik = (ln p̄_k − ln p_ik) / n` (the constant
/// terms cancel between the two parts), pushed through the softmax Jacobian
/// as `∂L/∂z_ij = p_ij (g_ij − Σ_k p_ik g_ik)`.
pub fn im_loss(logits: &Matrix) -> Result<LossValue> {
    let n = logits.rows();
    if n == 0 {
        return Err(Error::invalid("im_loss batch", "empty batch"));
    }
    let probs = softmax_rows(logits)?;
    // Running means are exact when every row is the same, so a batch of
    // identical predictions scores exactly zero.
    let k = logits.cols();
    let mut mean = vec![0.0; k];
    let mut cond_entropy = 0.0;
    for i in 0..n {
        let w = 1.0 / (i + 1) as f64;
        for (m, &p) in mean.iter_mut().zip(probs.row(i)) {
            *m += (p - *m) * w;
        }
        cond_entropy += (entropy(probs.row(i)) - cond_entropy) * w;
    }
    let ln_mean: Vec<f64> = mean.iter().map(|&p| p.max(LOG_EPS).ln()).collect();
    let nf = n as f64;

    let mut grad = Matrix::zeros(n, k);
    for i in 0..n {
        let p = probs.row(i);
        let mut g = vec![0.0; k];
        let mut dot = 0.0;
        for k in 0..k {
            g[k] = (ln_mean[k] - p[k].max(LOG_EPS).ln()) / nf;
            dot += p[k] * g[k];
        }
        for (out, (&pk, &gk)) in grad.row_mut(i).iter_mut().zip(p.iter().zip(&g)) {
            *out = pk * (gk - dot);
        }
    }
    finish(cond_entropy - entropy(&mean), grad)
}

/// Cross-entropy against hard pseudo-labels; gradient `(softmax − onehot) / n`.
pub fn pcc_loss(logits: &Matrix, labels: &[usize]) -> Result<LossValue> {
    let (n, k) = logits.shape();
    if labels.len() != n {
        return Err(Error::shape("pcc_loss", n, labels.len()));
    }
    if n == 0 {
        return Err(Error::invalid("pcc_loss batch", "empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(
            "pseudo-label",
            format!("{bad} out of range for {k} classes"),
        ));
    }
    let mut grad = softmax_rows(logits)?;
    let nf = n as f64;
    let mut value = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.row(i);
        value += log_sum_exp(z) - z[y];
        grad[(i, y)] -= 1.0;
    }
    grad.scale(1.0 / nf);
    finish(value / nf, grad)
}

/// Interpolation consistency: cross-entropy of the prediction on mixed inputs
/// against the same mixture of the (constant) predictions on the endpoints,
/// `q = λ p_i + (1 − λ) p_j`. Gradient is `(softmax(z_mix) − q) / b`, taken
/// with respect to `logits_mix` only.
pub fn mixup_loss(probs_i: &Matrix, probs_j: &Matrix, logits_mix: &Matrix, lambda: f64) -> Result<LossValue> {
    mixup_loss_per_sample(probs_i, probs_j, logits_mix, &vec![lambda; logits_mix.rows()])
}

/// [`mixup_loss`] with one mixing coefficient per row.
pub fn mixup_loss_per_sample(
    probs_i: &Matrix,
    probs_j: &Matrix,
    logits_mix: &Matrix,
    lambdas: &[f64],
) -> Result<LossValue> {
    let shape = logits_mix.shape();
    for m in [probs_i, probs_j] {
        if m.shape() != shape {
            return Err(Error::shape(
                "mixup_loss",
                format!("{shape:?}"),
                format!("{:?}", m.shape()),
            ));
        }
    }
    if lambdas.len() != shape.0 {
        return Err(Error::shape("mixup_loss lambdas", shape.0, lambdas.len()));
    }
    if shape.0 == 0 {
        return Err(Error::invalid("mixup_loss batch", "empty batch"));
    }
    if let Some(&bad) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::invalid("lambda", format!("must lie in [0, 1], got {bad}")));
    }
    let b = shape.0 as f64;
    let mut grad = softmax_rows(logits_mix)?;
    let mut value = 0.0;
    for (i, &lambda) in lambdas.iter().enumerate() {
        let z = logits_mix.row(i);
        let lse = log_sum_exp(z);
        let (pi, pj) = (probs_i.row(i), probs_j.row(i));
        for k in 0..shape.1 {
            let q = lambda * pi[k] + (1.0 - lambda) * pj[k];
            value -= q * (z[k] - lse);
            grad[(i, k)] -= q;
        }
    }
    grad.scale(1.0 / b);
    finish(value / b, grad)
}

/// The combined objective `L_im + L_pcc + β L_mix` with ablation toggles.
///
/// `batch_grad` applies to the logits of the plain minibatch (IM and pcc
/// terms), `mix_grad` to the logits of the mixed minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub batch_grad: Matrix,
    pub mix_grad: Matrix,
}

pub fn total_loss(
    im: &LossValue,
    pcc: &LossValue,
    mix: &LossValue,
    beta: f64,
    toggles: LossToggles,
) -> Result<TotalLoss> {
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::invalid("beta", format!("must be finite and >= 0, got {beta}")));
    }
    if im.grad_logits.shape() != pcc.grad_logits.shape() {
        return Err(Error::shape(
            "total_loss",
            format!("{:?}", im.grad_logits.shape()),
            format!("{:?}", pcc.grad_logits.shape()),
        ));
    }
    let (n, k) = im.grad_logits.shape();
    let mut value = 0.0;
    let mut batch_grad = Matrix::zeros(n, k);
    let mut mix_grad = Matrix::zeros(mix.grad_logits.rows(), mix.grad_logits.cols());
    if toggles.im {
        value += im.value;
        batch_grad.add_scaled(&im.grad_logits, 1.0)?;
    }
    if toggles.pcc {
        value += pcc.value;
        batch_grad.add_scaled(&pcc.grad_logits, 1.0)?;
    }
    if toggles.mix {
        value += beta * mix.value;
        mix_grad.add_scaled(&mix.grad_logits, beta)?;
    }
    Ok(TotalLoss {
        value,
        batch_grad,
        mix_grad,
    })
}

fn finish(value: f64, grad_logits: Matrix) -> Result<LossValue> {
    if !value.is_finite() {
        return Err(Error::NonFinite("loss value"));
    }
    grad_logits.ensure_finite("loss gradient")?;
    Ok(LossValue { value, grad_logits })
}
