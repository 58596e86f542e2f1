//! K-means with k-means++ seeding and Lloyd iterations, best of several
//! restarts by within-cluster sum of squares.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, streams, Rng};

pub const DEFAULT_RESTARTS: usize = 10;
const MAX_ITER: usize = 300;
const SHIFT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster label in `1..=k` per unit, numbered by first appearance.
    labels: Vec<usize>,
    k: usize,
    inertia: f64,
}

impl ClusterAssignment {
    /// Wraps externally produced labels, which must cover `1..=k` with no
    /// empty cluster. Inertia is left at zero.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; k];
        for &l in &labels {
            if l == 0 {
                return Err(Error::Validation("cluster labels start at 1".into()));
            }
            seen[l - 1] = true;
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!("cluster {} is empty", j + 1)));
        }
        Ok(ClusterAssignment {
            labels,
            k,
            inertia: 0.0,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l - 1] += 1;
        }
        s
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Within-cluster sum of squares of a labelling (labels in `0..k`).
pub(crate) fn inertia_of(points: &Matrix, labels: &[usize], k: usize) -> f64 {
    let centers = centroids(points, labels, k);
    (0..points.rows())
        .map(|i| sq_dist(points.row(i), centers.row(labels[i])))
        .sum()
}

fn centroids(points: &Matrix, labels: &[usize], k: usize) -> Matrix {
    let d = points.cols();
    let mut c = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for i in 0..points.rows() {
        counts[labels[i]] += 1;
        let row = points.row(i);
        for (t, v) in c.row_mut(labels[i]).iter_mut().zip(row) {
            *t += v;
        }
    }
    for (j, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            for v in c.row_mut(j) {
                *v /= cnt as f64;
            }
        }
    }
    c
}

fn plus_plus(points: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = points.rows();
    let d = points.cols();
    let mut centers = Matrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(points.row(pick));
        for (i, v) in closest.iter_mut().enumerate() {
            *v = v.min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    centers
}

fn nearest(centers: &Matrix, p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..centers.rows() {
        let d = sq_dist(p, centers.row(j));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn lloyd(points: &Matrix, mut centers: Matrix) -> (Vec<usize>, f64) {
    let n = points.rows();
    let k = centers.rows();
    let mut labels = vec![0usize; n];
    for _ in 0..MAX_ITER {
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (j, d) = nearest(&centers, points.row(i));
            labels[i] = j;
            dists[i] = d;
        }
        // An empty cluster takes the point farthest from its current centre.
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    counts[labels[i]] -= 1;
                    labels[i] = j;
                    counts[j] = 1;
                    dists[i] = 0.0;
                }
            }
        }
        let next = centroids(points, &labels, k);
        let shift: f64 = (0..k).map(|j| sq_dist(next.row(j), centers.row(j))).sum();
        centers = next;
        if shift < SHIFT_TOL {
            break;
        }
    }
    let inertia = inertia_of(points, &labels, k);
    (labels, inertia)
}

/// Renumbers labels in `0..k` to `1..=k` by order of first appearance.
fn canonical(labels: &[usize], k: usize) -> Vec<usize> {
    let mut map = vec![usize::MAX; k];
    let mut next = 1;
    labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect()
}

pub fn kmeans(points: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<ClusterAssignment> {
    let n = points.rows();
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds the {n} points")));
    }
    if restarts == 0 {
        return Err(Error::Config("k-means needs at least one restart".into()));
    }
    if !points.is_finite() {
        return Err(Error::Numeric("k-means input contains non-finite values".into()));
    }
    let mut rng = rng::rng_for(seed, streams::KMEANS ^ ((k as u64) << 8));
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts {
        let centers = plus_plus(points, k, &mut rng);
        let (labels, inertia) = lloyd(points, centers);
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((labels, inertia));
        }
    }
    let (labels, inertia) = best.expect("at least one restart");
    let used = {
        let mut seen = vec![false; k];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    Ok(ClusterAssignment {
        labels: canonical(&labels, k),
        k: used,
        inertia,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Matrix {
        let mut rows = Vec::new();
        for c in [0.0, 10.0, 20.0] {
            for i in 0..5 {
                rows.push(vec![c + 0.1 * f64::from(i), -c]);
            }
        }
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn separates_blobs() {
        let a = kmeans(&blobs(), 3, 4, DEFAULT_RESTARTS).unwrap();
        assert_eq!(a.labels()[..5], [1; 5]);
        assert_eq!(a.labels()[5..10], [2; 5]);
        assert_eq!(a.labels()[10..], [3; 5]);
        assert_eq!(a.sizes(), vec![5, 5, 5]);
        assert!(a.inertia() < 1.0);
    }

    #[test]
    fn deterministic() {
        assert_eq!(kmeans(&blobs(), 2, 9, 3).unwrap(), kmeans(&blobs(), 2, 9, 3).unwrap());
    }

    #[test]
    fn bad_k() {
        assert!(kmeans(&blobs(), 1, 0, 1).is_err());
        assert!(kmeans(&blobs(), 16, 0, 1).is_err());
    }

    #[test]
    fn duplicate_points_keep_k_clusters() {
        let m = Matrix::from_rows(&[vec![0.0], vec![0.0], vec![0.0], vec![1.0]]).unwrap();
        let a = kmeans(&m, 3, 0, 2).unwrap();
        assert_ne!(a.labels()[3], a.labels()[0]);
        assert!(a.inertia().abs() < 1e-12);
    }
}
