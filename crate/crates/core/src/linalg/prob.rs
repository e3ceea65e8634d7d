//! Probability transforms and vector geometry on plain slices.

use super::matrix::{dot, norm, Matrix};
use crate::error::{Error, Result};

/// Floor applied inside logarithms of probabilities, never elsewhere.
pub const LOG_EPS: f64 = 1e-12;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::invalid("softmax input", "empty vector"));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out)?;
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
    Ok(())
}

/// Row-wise softmax of an `n × K` matrix.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    if m.cols() == 0 {
        return Err(Error::invalid("softmax input", "zero columns"));
    }
    let mut out = m.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i))?;
    }
    Ok(out)
}

/// `log(sum(exp(v)))`, max-subtracted.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut sum = 0.0;
    for &x in v {
        sum += (x - max).exp();
    }
    max + sum.ln()
}

/// `p · ln p` with the `0 · ln 0 = 0` convention and an epsilon floor in the log.
#[inline]
pub fn xlogx(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * p.max(LOG_EPS).ln()
    }
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&x| xlogx(x)).sum::<f64>()
}

/// `1 − a·b / (‖a‖‖b‖)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_distance", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine_distance"));
    }
    let d = 1.0 - dot(a, b) / (na * nb);
    if !d.is_finite() {
        return Err(Error::NonFinite("cosine_distance"));
    }
    Ok(d.clamp(0.0, 2.0))
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroNorm("l2_normalize"));
    }
    if !n.is_finite() {
        return Err(Error::NonFinite("l2_normalize"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// L2-normalizes every row.
pub fn normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::ZeroNorm("normalize_rows"));
        }
        row.iter_mut().for_each(|x| *x /= n);
    }
    Ok(out)
}
