use std::f64::consts::PI;

use super::{Dataset, Domain};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Two interleaved half circles, `K = 2`, centered on the origin.
    TwoMoons,
    /// `K` classes, each a pair of displaced Gaussian sub-clusters.
    Blobs,
}

/// A source/target pair: the target is the source law rotated in the plane
/// of the first two axes, translated within that plane, and re-weighted to
/// `class_proportions`. The source is class-balanced.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    pub task: Task,
    pub class_count: usize,
    /// Always 2 for two moons; blobs may use more axes.
    pub input_dim: usize,
    pub rotation_deg: f64,
    pub translation: [f64; 2],
    pub noise_std: f64,
    pub class_proportions: Vec<f64>,
    pub n_source: usize,
    pub n_target: usize,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn two_moons(rotation_deg: f64, seed: u64) -> Self {
        Self {
            task: Task::TwoMoons,
            class_count: 2,
            input_dim: 2,
            rotation_deg,
            translation: [0.0, 0.0],
            noise_std: 0.1,
            class_proportions: vec![0.5, 0.5],
            n_source: 1000,
            n_target: 1000,
            seed,
        }
    }

    pub fn blobs(class_count: usize, rotation_deg: f64, seed: u64) -> Self {
        Self {
            task: Task::Blobs,
            class_count,
            input_dim: 2,
            rotation_deg,
            translation: [0.0, 0.0],
            noise_std: 0.3,
            class_proportions: vec![1.0 / class_count as f64; class_count],
            n_source: 1200,
            n_target: 1200,
            seed,
        }
    }

    /// The committed adaptation benchmark: six bimodal classes in three
    /// dimensions, 40° rotation, a small translation and a fixed class
    /// imbalance in the target.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            translation: [0.3, -0.2],
            class_proportions: BENCHMARK_PROPORTIONS.to_vec(),
            n_source: 1800,
            n_target: 3000,
            input_dim: 3,
            ..Self::blobs(6, 40.0, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.class_count;
        if k == 0 {
            return Err(Error::invalid("class count", "must be >= 1"));
        }
        if self.task == Task::TwoMoons && k != 2 {
            return Err(Error::invalid(
                "class count",
                format!("two_moons has 2 classes, got {k}"),
            ));
        }
        match self.task {
            Task::TwoMoons if self.input_dim != 2 => {
                return Err(Error::invalid(
                    "input_dim",
                    format!("two_moons is 2-dimensional, got {}", self.input_dim),
                ));
            }
            _ if self.input_dim < 2 => {
                return Err(Error::invalid(
                    "input_dim",
                    format!("must be >= 2, got {}", self.input_dim),
                ));
            }
            _ => {}
        }
        if self.class_proportions.len() != k {
            return Err(Error::shape("class_proportions", k, self.class_proportions.len()));
        }
        if self.class_proportions.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::invalid("class_proportions", "entries must be finite and >= 0"));
        }
        let sum: f64 = self.class_proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("class_proportions", format!("must sum to 1, got {sum}")));
        }
        if let Some(c) = self.class_proportions.iter().position(|&p| p == 0.0) {
            return Err(Error::invalid(
                "class_proportions",
                format!("class {c} has proportion 0; every declared class must appear in the target"),
            ));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(Error::invalid(
                "noise_std",
                format!("must be >= 0, got {}", self.noise_std),
            ));
        }
        if !self.rotation_deg.is_finite() || self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("shift", "rotation and translation must be finite"));
        }
        if self.n_source < k || self.n_target < k {
            return Err(Error::invalid(
                "sample counts",
                format!("need at least one sample per class (k={k})"),
            ));
        }
        Ok(())
    }
}

/// Target class proportions of the committed benchmark.
pub const BENCHMARK_PROPORTIONS: [f64; 6] = [0.25, 0.2, 0.18, 0.15, 0.12, 0.1];

/// Splits `n` into per-class counts by largest-remainder rounding of
/// `proportions · n` (ties to the lower class index). A class with positive
/// proportion that rounds to zero is bumped to one sample, taken from the
/// currently largest class.
pub fn largest_remainder(proportions: &[f64], n: usize) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(n.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    for c in 0..counts.len() {
        if counts[c] == 0 && proportions[c] > 0.0 {
            let donor = (0..counts.len())
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .expect("non-empty");
            if counts[donor] > 1 {
                counts[donor] -= 1;
                counts[c] += 1;
            }
        }
    }
    counts
}

/// Angle between the two sub-clusters of a class, in degrees.
pub const SUBCLUSTER_SPREAD_DEG: f64 = 38.0;

/// Sub-cluster centers for the blobs task, two per class.
///
/// Classes alternate between two rings and are spread evenly in angle within
/// a ring; a class's two sub-clusters sit [`SUBCLUSTER_SPREAD_DEG`] apart on
/// its ring, so the class mean falls in the empty gap between them. With a
/// third input axis the rings share radius 3 and are stacked at heights ±1.5
/// along it, which keeps every sub-cluster on the convex hull of the data.
/// In the plane the rings are nested instead, at radii 2 and 4. Axes past the
/// third stay at zero.
pub fn blob_centers(class_count: usize, input_dim: usize) -> Vec<[Vec<f64>; 2]> {
    let per_ring = class_count.div_ceil(2);
    (0..class_count)
        .map(|c| {
            let ring = c % 2;
            let base = (c / 2) as f64 * 360.0 / per_ring as f64;
            let (radius, height) = match (input_dim > 2, ring) {
                (true, 0) => (3.0, -1.5),
                (true, _) => (3.0, 1.5),
                (false, 0) => (2.0, 0.0),
                (false, _) => (4.0, 0.0),
            };
            [0.0, SUBCLUSTER_SPREAD_DEG].map(|d| {
                let a = (base + d).to_radians();
                let mut v = vec![0.0; input_dim];
                v[0] = radius * a.cos();
                v[1] = radius * a.sin();
                if input_dim > 2 {
                    v[2] = height;
                }
                v
            })
        })
        .collect()
}

/// Generates a labeled source set and a labeled target set (target labels are
/// for evaluation only). Deterministic per `spec.seed`.
pub fn gen_shifted_pair(spec: &ShiftSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let k = spec.class_count;
    let balanced = vec![1.0 / k as f64; k];
    let source_counts = largest_remainder(&balanced, spec.n_source);
    let target_counts = largest_remainder(&spec.class_proportions, spec.n_target);

    let mut src_rng = Rng::child(spec.seed, 0);
    let mut tgt_rng = Rng::child(spec.seed, 1);
    let (xs, ys) = sample_base(spec, &source_counts, &mut src_rng);
    let (mut xt, yt) = sample_base(spec, &target_counts, &mut tgt_rng);

    let (sin, cos) = spec.rotation_deg.to_radians().sin_cos();
    for i in 0..xt.rows() {
        let row = xt.row_mut(i);
        let (x, y) = (row[0], row[1]);
        row[0] = cos * x - sin * y + spec.translation[0];
        row[1] = sin * x + cos * y + spec.translation[1];
    }
    Ok((
        Dataset::new(xs, Some(ys), k, Domain::Source)?,
        Dataset::new(xt, Some(yt), k, Domain::Target)?,
    ))
}

/// Draws `counts[c]` points of each class from the unshifted law, in a
/// shuffled order.
fn sample_base(spec: &ShiftSpec, counts: &[usize], rng: &mut Rng) -> (Matrix, Vec<usize>) {
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    rng.shuffle(&mut labels);
    let centers = match spec.task {
        Task::Blobs => blob_centers(spec.class_count, spec.input_dim),
        Task::TwoMoons => Vec::new(),
    };
    let dim = spec.input_dim;
    let mut data = Vec::with_capacity(labels.len() * dim);
    for &c in &labels {
        match spec.task {
            Task::TwoMoons => {
                let t = PI * rng.uniform();
                if c == 0 {
                    data.extend([t.cos() - 0.5, t.sin() - 0.25]);
                } else {
                    data.extend([0.5 - t.cos(), 0.25 - t.sin()]);
                }
            }
            Task::Blobs => data.extend_from_slice(&centers[c][rng.below(2)]),
        }
        let start = data.len() - dim;
        for v in &mut data[start..] {
            *v += spec.noise_std * rng.normal();
        }
    }
    let x = Matrix::from_vec(labels.len(), dim, data).expect("finite by construction");
    (x, labels)
}
