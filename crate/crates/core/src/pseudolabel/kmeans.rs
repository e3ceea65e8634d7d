//! Lloyd's k-means with k-means++ seeding.

use crate::linalg::{squared_distance, Matrix, Rng};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `P × d`, always exactly `P` rows.
    pub centers: Matrix,
    /// Nearest-center index per point (ties to the lower center index).
    pub assignment: Vec<usize>,
    /// Lloyd iterations performed.
    pub iterations: usize,
    /// Within-cluster sum of squares at the returned centers.
    pub sse: f64,
    /// SSE after each assignment step, for convergence diagnostics.
    pub sse_history: Vec<f64>,
    /// Fewer distinct seeds than `P` were available; trailing centers
    /// duplicate the last distinct one.
    pub padded: bool,
}

/// Clusters the rows of `points` into `p` groups.
///
/// Seeds with k-means++ (first center uniform, then proportional to squared
/// distance), then alternates assignment and mean updates until no center
/// moves by `tol` or more, or `max_iters` is reached. An emptied cluster is
/// re-seeded at the point farthest from its nearest center.
pub fn kmeans(points: &Matrix, p: usize, rng: &mut Rng, max_iters: usize, tol: f64) -> KMeansResult {
    assert!(points.rows() >= 1, "kmeans needs at least one point");
    assert!(p >= 1, "kmeans needs at least one center");
    let seeds = plus_plus(points, p, rng);
    let live = seeds.len();
    let mut centers = points.select_rows(&seeds);

    let mut assignment = assign(points, &centers);
    let mut sse_history = vec![sse_of(points, &centers, &assignment)];
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let mut next = means(points, &assignment, live);
        reseed_empty(points, &mut next, &assignment);
        let shift = (0..live)
            .map(|c| squared_distance(centers.row(c), next.row(c)).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        assignment = assign(points, &centers);
        sse_history.push(sse_of(points, &centers, &assignment));
        if shift < tol {
            break;
        }
    }

    let sse = *sse_history.last().expect("non-empty");
    let padded = live < p;
    if padded {
        let last = centers.row(live - 1).to_vec();
        let mut rows: Vec<Vec<f64>> = centers.iter_rows().map(<[f64]>::to_vec).collect();
        rows.resize(p, last);
        centers = Matrix::from_rows(&rows).expect("finite");
    }
    KMeansResult {
        centers,
        assignment,
        iterations,
        sse,
        sse_history,
        padded,
    }
}

/// k-means++ seed indices. Stops early once every point coincides with a
/// chosen seed, so the result may hold fewer than `p` indices.
fn plus_plus(points: &Matrix, p: usize, rng: &mut Rng) -> Vec<usize> {
    let m = points.rows();
    let mut seeds = vec![rng.below(m)];
    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|x| squared_distance(x, points.row(seeds[0])))
        .collect();
    while seeds.len() < p {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let target = rng.uniform() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("total > 0 implies a positive weight");
        seeds.push(pick);
        for (i, x) in points.iter_rows().enumerate() {
            d2[i] = d2[i].min(squared_distance(x, points.row(pick)));
        }
    }
    seeds
}

fn assign(points: &Matrix, centers: &Matrix) -> Vec<usize> {
    points.iter_rows().map(|x| nearest(x, centers).0).collect()
}

fn nearest(x: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, squared_distance(x, centers.row(0)));
    for c in 1..centers.rows() {
        let d = squared_distance(x, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn means(points: &Matrix, assignment: &[usize], k: usize) -> Matrix {
    let mut sums = Matrix::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (x, &c) in points.iter_rows().zip(assignment) {
        counts[c] += 1;
        for (s, &v) in sums.row_mut(c).iter_mut().zip(x) {
            *s += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums.row_mut(c).iter_mut().for_each(|s| *s /= n as f64);
        } else {
            // marks the cluster for re-seeding
            sums.row_mut(c).iter_mut().for_each(|s| *s = f64::NAN);
        }
    }
    sums
}

fn reseed_empty(points: &Matrix, centers: &mut Matrix, assignment: &[usize]) {
    let mut counts = vec![0usize; centers.rows()];
    for &c in assignment {
        counts[c] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            continue;
        }
        let live: Vec<usize> = (0..centers.rows()).filter(|&j| centers.row(j)[0].is_finite()).collect();
        let live_centers = centers.select_rows(&live);
        let mut far = (0, f64::NEG_INFINITY);
        for (i, x) in points.iter_rows().enumerate() {
            let d = nearest(x, &live_centers).1;
            if d > far.1 {
                far = (i, d);
            }
        }
        centers.row_mut(c).copy_from_slice(points.row(far.0));
    }
}

fn sse_of(points: &Matrix, centers: &Matrix, assignment: &[usize]) -> f64 {
    points
        .iter_rows()
        .zip(assignment)
        .map(|(x, &c)| squared_distance(x, centers.row(c)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(points: &Matrix, p: usize, seed: u64) -> KMeansResult {
        kmeans(points, p, &mut Rng::new(seed), DEFAULT_MAX_ITERS, DEFAULT_TOL)
    }

    #[test]
    fn two_obvious_clusters() {
        let pts = Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]).unwrap();
        for seed in 0..10 {
            let r = run(&pts, 2, seed);
            let mut centers: Vec<Vec<f64>> = r.centers.iter_rows().map(<[f64]>::to_vec).collect();
            centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
            assert_eq!(centers, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
            assert_eq!(r.sse, 1.0);
        }
    }

    #[test]
    fn single_center_is_mean() {
        let pts = Matrix::from_rows(&[[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]]).unwrap();
        let r = run(&pts, 1, 3);
        assert_eq!(r.centers.row(0), &[3.0, 3.0]);
        assert_eq!(r.assignment, vec![0, 0, 0]);
    }

    #[test]
    fn saturation_has_zero_sse() {
        let pts = Matrix::from_rows(&[[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]]).unwrap();
        let r = run(&pts, 3, 4);
        assert_eq!(r.sse, 0.0);
        assert!(!r.padded);
    }

    #[test]
    fn fewer_points_than_centers_pads() {
        let pts = Matrix::from_rows(&[[1.0, 2.0], [3.0, 6.0]]).unwrap();
        let r = run(&pts, 4, 5);
        assert!(r.padded);
        assert_eq!(r.centers.rows(), 4);
        assert_eq!(r.centers.row(1), r.centers.row(2));
        assert_eq!(r.centers.row(1), r.centers.row(3));
        assert_eq!(r.sse, 0.0);

        let dupes = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]).unwrap();
        let r = run(&dupes, 2, 1);
        assert!(r.padded);
        assert_eq!(r.centers.row(0), r.centers.row(1));
    }

    #[test]
    fn sse_never_increases() {
        let mut rng = Rng::new(12);
        for seed in 0..20 {
            let data: Vec<f64> = (0..60 * 3).map(|_| rng.normal() * 2.0).collect();
            let pts = Matrix::from_vec(60, 3, data).unwrap();
            let r = run(&pts, 4, seed);
            for w in r.sse_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", r.sse_history);
            }
        }
    }

    #[test]
    fn centers_are_means_at_termination() {
        let mut rng = Rng::new(13);
        let data: Vec<f64> = (0..80 * 2).map(|_| rng.normal()).collect();
        let pts = Matrix::from_vec(80, 2, data).unwrap();
        let r = run(&pts, 3, 1);
        let m = means(&pts, &r.assignment, 3);
        for c in 0..3 {
            assert!(squared_distance(m.row(c), r.centers.row(c)).sqrt() < 1e-6);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let mut rng = Rng::new(14);
        let data: Vec<f64> = (0..50 * 2).map(|_| rng.normal()).collect();
        let pts = Matrix::from_vec(50, 2, data).unwrap();
        assert_eq!(run(&pts, 3, 7), run(&pts, 3, 7));
    }
}
