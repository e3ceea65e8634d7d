//! Inter-class balanced sampling and intra-class polycentric clustering.
//!
//! Given a frozen snapshot of target features and class probabilities, the
//! pipeline
//!
//! 1. picks, for every class independently, the `M` samples the model is
//!    most confident belong to it and averages their features into a
//!    prototype (inter-class balanced: every class gets exactly `M`),
//! 2. re-selects `M` samples per class by a softmax over feature/prototype
//!    inner products and re-averages,
//! 3. runs k-means with `P` centers inside each class's selection, scores
//!    every sample by its best-matching center per class, and repeats the
//!    selection/clustering step `rounds` times.
//!
//! Final pseudo-labels are the argmax of the polycentric score.
//!
//! When `normalize` is on, features are L2-normalized first and every
//! prototype/center is projected back to the unit sphere, so nearest-by-cosine
//! and largest-inner-product assignments coincide.

mod kmeans;

pub use kmeans::{kmeans, KMeansResult, DEFAULT_MAX_ITERS, DEFAULT_TOL};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, cosine_distance, dot, l2_normalize, normalize_rows, softmax_in_place, Matrix, Rng};

/// `K` classes × `P` centers × `d` features.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    centers: Vec<Matrix>,
    normalized: bool,
}

impl CentroidSet {
    /// One `P × d` matrix per class. Every class must have the same `P ≥ 1`
    /// and every center a finite, nonzero vector.
    pub fn new(centers: Vec<Matrix>, normalized: bool) -> Result<Self> {
        let first = centers
            .first()
            .ok_or_else(|| Error::invalid("centroid set", "no classes"))?;
        let shape = first.shape();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::invalid("centroid set", "P and d must be >= 1"));
        }
        for (k, c) in centers.iter().enumerate() {
            if c.shape() != shape {
                return Err(Error::shape(
                    "CentroidSet::new",
                    format!("{shape:?}"),
                    format!("{:?} for class {k}", c.shape()),
                ));
            }
            c.ensure_finite("CentroidSet::new")?;
            if c.iter_rows().any(|r| r.iter().all(|&x| x == 0.0)) {
                return Err(Error::ZeroNorm("centroid"));
            }
        }
        Ok(Self { centers, normalized })
    }

    pub fn class_count(&self) -> usize {
        self.centers.len()
    }

    pub fn centers_per_class(&self) -> usize {
        self.centers[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].cols()
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    /// The `P × d` centers of class `k`.
    pub fn class_centers(&self, k: usize) -> &Matrix {
        &self.centers[k]
    }

    /// All centers stacked class-major (`K·P × d`) with their class ids.
    pub fn stacked(&self) -> (Matrix, Vec<usize>) {
        let mut rows = Vec::new();
        let mut classes = Vec::new();
        for (k, c) in self.centers.iter().enumerate() {
            for r in c.iter_rows() {
                rows.push(r.to_vec());
                classes.push(k);
            }
        }
        (Matrix::from_rows(&rows).expect("finite"), classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Initial,
    Refined,
    Polycentric,
}

/// Per-sample pseudo-labels with the class scores they were derived from.
///
/// For the initial and refined stages the scores are cosine similarities to
/// the class prototypes; for the polycentric stage they are the normalized
/// polycentric scores. In both cases `labels[i]` is the row argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub labels: Vec<usize>,
    pub scores: Matrix,
    pub stage: Stage,
}

impl PseudoLabelSet {
    fn from_scores(scores: Matrix, stage: Stage) -> Self {
        Self {
            labels: scores.argmax_rows(),
            scores,
            stage,
        }
    }

    /// Fraction of labels equal to `truth`.
    pub fn accuracy(&self, truth: &[usize]) -> f64 {
        if truth.is_empty() {
            return 0.0;
        }
        let hits = self.labels.iter().zip(truth).filter(|(a, b)| a == b).count();
        hits as f64 / truth.len() as f64
    }
}

/// `M = max(1, ⌊n / (r·K)⌋)`.
pub fn top_m_count(n: usize, class_count: usize, ratio: f64) -> usize {
    let m = (n as f64 / (ratio * class_count as f64)).floor() as usize;
    m.max(1)
}

/// Indices of the `m` largest entries of column `k`, ties to the lower sample
/// index, returned in ascending index order.
pub fn balanced_top_m(scores: &Matrix, k: usize, m: usize) -> Result<Vec<usize>> {
    if k >= scores.cols() {
        return Err(Error::invalid("class index", format!("{k} >= {}", scores.cols())));
    }
    if m > scores.rows() {
        return Err(Error::invalid(
            "M",
            format!("{m} exceeds sample count {}", scores.rows()),
        ));
    }
    let mut order: Vec<usize> = (0..scores.rows()).collect();
    order.sort_by(|&a, &b| scores[(b, k)].total_cmp(&scores[(a, k)]).then(a.cmp(&b)));
    order.truncate(m);
    order.sort_unstable();
    Ok(order)
}

/// Balanced selections for every class.
fn select_all(scores: &Matrix, m: usize) -> Result<Vec<Vec<usize>>> {
    (0..scores.cols()).map(|k| balanced_top_m(scores, k, m)).collect()
}

fn mean_of(features: &Matrix, indices: &[usize], normalize: bool) -> Result<Vec<f64>> {
    let mut c = vec![0.0; features.cols()];
    for &i in indices {
        for (s, &v) in c.iter_mut().zip(features.row(i)) {
            *s += v;
        }
    }
    let n = indices.len() as f64;
    c.iter_mut().for_each(|s| *s /= n);
    if normalize {
        l2_normalize(&c)
    } else if c.iter().all(|&x| x == 0.0) {
        Err(Error::ZeroNorm("centroid"))
    } else {
        Ok(c)
    }
}

fn singleton_centroids(features: &Matrix, selections: &[Vec<usize>], normalize: bool) -> Result<CentroidSet> {
    let centers = selections
        .iter()
        .map(|sel| {
            let c = mean_of(features, sel, normalize)?;
            Matrix::from_vec(1, c.len(), c)
        })
        .collect::<Result<Vec<_>>>()?;
    CentroidSet::new(centers, normalize)
}

/// Cosine-similarity scores against one prototype per class; label = nearest
/// prototype by cosine distance.
fn nearest_prototype_labels(features: &Matrix, centroids: &CentroidSet, stage: Stage) -> Result<PseudoLabelSet> {
    let k = centroids.class_count();
    let mut scores = Matrix::zeros(features.rows(), k);
    for (i, f) in features.iter_rows().enumerate() {
        for c in 0..k {
            scores[(i, c)] = 1.0 - cosine_distance(f, centroids.class_centers(c).row(0))?;
        }
    }
    Ok(PseudoLabelSet::from_scores(scores, stage))
}

/// Prototypes from the `M` most confident samples per class (by the model's
/// probabilities), and nearest-prototype labels.
pub fn initial_centroids(
    features: &Matrix,
    probs: &Matrix,
    m: usize,
    normalized: bool,
) -> Result<(CentroidSet, PseudoLabelSet)> {
    check_rows("initial_centroids", features, probs)?;
    let selections = select_all(probs, m)?;
    let centroids = singleton_centroids(features, &selections, normalized)?;
    let labels = nearest_prototype_labels(features, &centroids, Stage::Initial)?;
    Ok((centroids, labels))
}

/// Row-wise softmax over the inner products with each class's first center.
pub fn inner_product_scores(features: &Matrix, centroids: &CentroidSet) -> Result<Matrix> {
    check_dim(features, centroids)?;
    let k = centroids.class_count();
    let mut scores = Matrix::zeros(features.rows(), k);
    for (i, f) in features.iter_rows().enumerate() {
        let row = scores.row_mut(i);
        for (c, s) in row.iter_mut().enumerate() {
            *s = dot(f, centroids.class_centers(c).row(0));
        }
        softmax_in_place(row)?;
    }
    Ok(scores)
}

/// One refinement round: re-select by [`inner_product_scores`] against the
/// previous prototypes, re-average, and relabel by cosine distance.
pub fn refine_centroids(features: &Matrix, previous: &CentroidSet, m: usize) -> Result<(CentroidSet, PseudoLabelSet)> {
    let scores = inner_product_scores(features, previous)?;
    let selections = select_all(&scores, m)?;
    let centroids = singleton_centroids(features, &selections, previous.normalized)?;
    let labels = nearest_prototype_labels(features, &centroids, Stage::Refined)?;
    Ok((centroids, labels))
}

/// `score[i][k] = max_p exp(f_i·c_k^p) / Σ_j max_p exp(f_i·c_j^p)`, computed
/// as a softmax over the per-class best inner products.
pub fn polycentric_scores(features: &Matrix, centroids: &CentroidSet) -> Result<Matrix> {
    check_dim(features, centroids)?;
    let k = centroids.class_count();
    let mut scores = Matrix::zeros(features.rows(), k);
    for (i, f) in features.iter_rows().enumerate() {
        let row = scores.row_mut(i);
        for (c, s) in row.iter_mut().enumerate() {
            *s = centroids
                .class_centers(c)
                .iter_rows()
                .map(|center| dot(f, center))
                .fold(f64::NEG_INFINITY, f64::max);
        }
        softmax_in_place(row)?;
    }
    Ok(scores)
}

/// Settings for [`polycentric_pseudolabels`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolycentricConfig {
    /// Centers per class, `P ≥ 1`.
    pub centers_per_class: usize,
    /// Top-M selection ratio `r ≥ 1`.
    pub ratio: f64,
    /// Number of cluster/select rounds after the two prototype rounds.
    pub rounds: usize,
    pub normalize: bool,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    /// k-means for class `k` in round `t` draws from `Rng::child(seed, t·K + k)`.
    pub seed: u64,
}

impl Default for PolycentricConfig {
    fn default() -> Self {
        Self {
            centers_per_class: 3,
            ratio: 3.0,
            rounds: 2,
            normalize: true,
            kmeans_max_iters: DEFAULT_MAX_ITERS,
            kmeans_tol: DEFAULT_TOL,
            seed: 0,
        }
    }
}

/// Everything the pipeline produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Polycentric {
    pub labels: PseudoLabelSet,
    pub centroids: CentroidSet,
    /// The per-class selections the final centroids were built from.
    pub selections: Vec<Vec<usize>>,
    /// Number of classes whose k-means had to pad duplicate centers.
    pub padded_classes: usize,
}

impl Polycentric {
    /// Selections shared between classes: `Σ_k |M_k| − |∪_k M_k|`.
    pub fn mk_overlap(&self) -> usize {
        overlap(&self.selections)
    }
}

pub fn overlap(selections: &[Vec<usize>]) -> usize {
    let total: usize = selections.iter().map(Vec::len).sum();
    let mut all: Vec<usize> = selections.iter().flatten().copied().collect();
    all.sort_unstable();
    all.dedup();
    total - all.len()
}

/// The full pseudo-labeling pipeline on a snapshot of features and
/// class probabilities.
///
/// The first clustering round selects by the inner-product softmax against
/// the refined prototypes; later rounds select by the polycentric score of
/// the previous round's centers. `rounds = 0` stops after refinement and
/// returns the refined labels with one center per class.
pub fn polycentric_pseudolabels(features: &Matrix, probs: &Matrix, cfg: &PolycentricConfig) -> Result<Polycentric> {
    check_rows("polycentric_pseudolabels", features, probs)?;
    if cfg.centers_per_class == 0 {
        return Err(Error::invalid("P", "must be >= 1"));
    }
    if cfg.ratio.is_nan() || cfg.ratio < 1.0 {
        return Err(Error::invalid("r", format!("must be >= 1, got {}", cfg.ratio)));
    }
    let (n, k) = probs.shape();
    if n == 0 {
        return Err(Error::invalid("features", "no samples"));
    }
    if n < k {
        log::warn!("{n} samples for {k} classes; selecting one sample per class");
    }
    let feats = if cfg.normalize {
        normalize_rows(features)?
    } else {
        features.clone()
    };
    let m = top_m_count(n, k, cfg.ratio);

    let (c0, _) = initial_centroids(&feats, probs, m, cfg.normalize)?;
    let (c1, refined) = refine_centroids(&feats, &c0, m)?;
    if cfg.rounds == 0 {
        let selections = select_all(&inner_product_scores(&feats, &c0)?, m)?;
        return Ok(Polycentric {
            labels: refined,
            centroids: c1,
            selections,
            padded_classes: 0,
        });
    }

    let mut scores = inner_product_scores(&feats, &c1)?;
    let mut centroids = c1;
    let mut selections = Vec::new();
    let mut padded_classes = 0;
    for round in 0..cfg.rounds {
        selections = select_all(&scores, m)?;
        let results: Vec<KMeansResult> = selections
            .par_iter()
            .enumerate()
            .map(|(class, sel)| {
                let mut rng = Rng::child(cfg.seed, (round * k + class) as u64);
                kmeans(
                    &feats.select_rows(sel),
                    cfg.centers_per_class,
                    &mut rng,
                    cfg.kmeans_max_iters,
                    cfg.kmeans_tol,
                )
            })
            .collect();
        padded_classes = results.iter().filter(|r| r.padded).count();
        let centers = results
            .into_iter()
            .map(|r| {
                if cfg.normalize {
                    normalize_rows(&r.centers)
                } else {
                    Ok(r.centers)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        centroids = CentroidSet::new(centers, cfg.normalize)?;
        scores = polycentric_scores(&feats, &centroids)?;
    }
    Ok(Polycentric {
        labels: PseudoLabelSet::from_scores(scores, Stage::Polycentric),
        centroids,
        selections,
        padded_classes,
    })
}

/// Argmax of the classifier's own probabilities, the baseline labeling.
pub fn argmax_labels(probs: &Matrix) -> Vec<usize> {
    probs.iter_rows().map(argmax).collect()
}

fn check_rows(op: &'static str, features: &Matrix, probs: &Matrix) -> Result<()> {
    if features.rows() != probs.rows() {
        return Err(Error::shape(op, features.rows(), probs.rows()));
    }
    if probs.cols() == 0 {
        return Err(Error::invalid("probabilities", "zero classes"));
    }
    Ok(())
}

fn check_dim(features: &Matrix, centroids: &CentroidSet) -> Result<()> {
    if features.cols() != centroids.dim() {
        return Err(Error::shape("centroid scores", centroids.dim(), features.cols()));
    }
    Ok(())
}
