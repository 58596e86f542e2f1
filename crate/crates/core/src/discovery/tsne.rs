//! Exact t-SNE on a precomputed squared-distance matrix.
//!
//! Input affinities use `exp(-beta_i * D_ij)` with `beta_i` found by bisection
//! so that each conditional distribution has the requested perplexity. The
//! low-dimensional kernel is Student-t with one degree of freedom; the
//! optimiser is gradient descent with momentum, per-coordinate gains and an
//! early-exaggeration phase.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DistanceMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsneParams {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// `None` resolves to `min(30, floor((n - 1) / 3))`.
    #[serde(default)]
    pub perplexity: Option<f64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_exaggeration")]
    pub early_exaggeration: f64,
    #[serde(default = "default_exaggeration_iters")]
    pub exaggeration_iters: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_dim() -> usize {
    2
}
fn default_iterations() -> usize {
    1000
}
fn default_learning_rate() -> f64 {
    200.0
}
fn default_exaggeration() -> f64 {
    12.0
}
fn default_exaggeration_iters() -> usize {
    250
}
fn default_init_scale() -> f64 {
    1e-4
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            dim: default_dim(),
            perplexity: None,
            iterations: default_iterations(),
            learning_rate: default_learning_rate(),
            early_exaggeration: default_exaggeration(),
            exaggeration_iters: default_exaggeration_iters(),
            init_scale: default_init_scale(),
        }
    }
}

impl TsneParams {
    pub fn resolved_perplexity(&self, n: usize) -> f64 {
        self.perplexity
            .unwrap_or_else(|| 30f64.min(((n.saturating_sub(1)) / 3) as f64))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::Config(format!(
                "embedding dimension must be 2 or 3, got {}",
                self.dim
            )));
        }
        let perp = self.resolved_perplexity(n);
        if !(perp >= 1.0) {
            return Err(Error::Config(format!(
                "perplexity {perp} is below 1 (n = {n})"
            )));
        }
        if 3.0 * perp >= n as f64 {
            return Err(Error::Config(format!(
                "perplexity {perp} too large for n = {n} (need n > 3 * perplexity)"
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("t-SNE learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    coords: Matrix,
    params: TsneParams,
    seed: u64,
}

impl Embedding {
    pub fn coords(&self) -> &Matrix {
        &self.coords
    }

    pub fn params(&self) -> &TsneParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.coords.cols()
    }
}

const PERPLEXITY_TOL: f64 = 1e-5;
const BISECTION_STEPS: usize = 200;

/// Row-normalised conditional affinities `P(j | i)` at the target perplexity.
pub(crate) fn conditional_affinities(dist: &DistanceMatrix, perplexity: f64) -> Result<Vec<f64>> {
    let n = dist.n();
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut shifted = vec![0.0; n];
    for i in 0..n {
        let row = dist.row(i);
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(f64::INFINITY, f64::min);
        let mut mean = 0.0;
        for j in 0..n {
            shifted[j] = if j == i { 0.0 } else { row[j] - dmin };
            mean += shifted[j];
        }
        mean /= (n - 1) as f64;
        let out = &mut p[i * n..(i + 1) * n];
        if mean <= 0.0 {
            // every other unit is equidistant
            for (j, v) in out.iter_mut().enumerate() {
                *v = if j == i { 0.0 } else { 1.0 / (n - 1) as f64 };
            }
            continue;
        }
        let mut beta = 1.0 / mean;
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for _ in 0..BISECTION_STEPS {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                if j == i {
                    out[j] = 0.0;
                    continue;
                }
                let v = (-beta * shifted[j]).exp();
                out[j] = v;
                sum += v;
                weighted += shifted[j] * v;
            }
            let entropy = sum.ln() + beta * weighted / sum;
            let diff = entropy - target;
            if diff.abs() < PERPLEXITY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        // Ties at the nearest distance can make the target entropy
        // unreachable; the last iterate is kept in that case.
        let sum: f64 = out.iter().sum();
        for v in out.iter_mut() {
            *v /= sum;
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "perplexity calibration produced non-finite affinities for unit {i}"
            )));
        }
    }
    Ok(p)
}

/// Symmetrised joint affinities `(P(j|i) + P(i|j)) / 2n`, floored at 1e-12.
pub(crate) fn joint_affinities(dist: &DistanceMatrix, perplexity: f64) -> Result<Vec<f64>> {
    let n = dist.n();
    let cond = conditional_affinities(dist, perplexity)?;
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / denom).max(1e-12);
            }
        }
    }
    Ok(p)
}

pub fn project_tsne(dist: &DistanceMatrix, params: &TsneParams, seed: u64) -> Result<Embedding> {
    let n = dist.n();
    params.validate(n)?;
    let p = joint_affinities(dist, params.resolved_perplexity(n))?;
    let mut rng = rng::rng_for(seed, streams::TSNE);
    let init: Vec<f64> = (0..n * params.dim)
        .map(|_| params.init_scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let coords = match params.dim {
        2 => optimise::<2>(&p, n, init, params),
        3 => optimise::<3>(&p, n, init, params),
        _ => unreachable!("validated"),
    };
    let coords = Matrix::from_vec(n, params.dim, coords)?;
    if !coords.is_finite() {
        return Err(Error::Numeric("t-SNE diverged to non-finite coordinates".into()));
    }
    Ok(Embedding {
        coords,
        params: *params,
        seed,
    })
}

const LANES: usize = 4;

/// Per-lane partial sums of the kernel, the attractive and the repulsive
/// terms over `j < tail` for the unit at `yi`.
type LaneSums<const P: usize> = ([f64; LANES], [[f64; LANES]; P], [[f64; LANES]; P]);

fn lane_sums<const P: usize>(yi: &[f64; P], y: &[Vec<f64>; P], prow: &[f64], tail: usize) -> LaneSums<P> {
    // The vector path performs the same IEEE operations lane by lane in the
    // same order, so both paths give identical bits.
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the required CPU feature was detected at runtime.
        return unsafe { lane_sums_avx::<P>(yi, y, prow, tail) };
    }
    lane_sums_scalar::<P>(yi, y, prow, tail)
}

fn lane_sums_scalar<const P: usize>(yi: &[f64; P], y: &[Vec<f64>; P], prow: &[f64], tail: usize) -> LaneSums<P> {
    let mut zs = [0.0; LANES];
    let mut a = [[0.0; LANES]; P];
    let mut r = [[0.0; LANES]; P];
    let mut j = 0;
    while j < tail {
        let mut d2 = [1.0; LANES];
        let mut diff = [[0.0; LANES]; P];
        for k in 0..P {
            for l in 0..LANES {
                diff[k][l] = yi[k] - y[k][j + l];
                d2[l] += diff[k][l] * diff[k][l];
            }
        }
        for l in 0..LANES {
            let num = 1.0 / d2[l];
            zs[l] += num;
            let pa = prow[j + l] * num;
            let rb = num * num;
            for k in 0..P {
                a[k][l] += pa * diff[k][l];
                r[k][l] += rb * diff[k][l];
            }
        }
        j += LANES;
    }
    (zs, a, r)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn lane_sums_avx<const P: usize>(yi: &[f64; P], y: &[Vec<f64>; P], prow: &[f64], tail: usize) -> LaneSums<P> {
    use std::arch::x86_64::*;
    assert!(tail <= prow.len() && y.iter().all(|c| tail <= c.len()));
    let one = _mm256_set1_pd(1.0);
    let yiv: [__m256d; P] = std::array::from_fn(|k| _mm256_set1_pd(yi[k]));
    let mut zs = _mm256_setzero_pd();
    let mut a = [_mm256_setzero_pd(); P];
    let mut r = [_mm256_setzero_pd(); P];
    let mut j = 0;
    while j < tail {
        let mut d2 = one;
        let mut diff = [_mm256_setzero_pd(); P];
        for k in 0..P {
            // SAFETY: j + LANES <= tail, bounded by the assert above.
            let yk = _mm256_loadu_pd(y[k].as_ptr().add(j));
            diff[k] = _mm256_sub_pd(yiv[k], yk);
            d2 = _mm256_add_pd(d2, _mm256_mul_pd(diff[k], diff[k]));
        }
        let num = _mm256_div_pd(one, d2);
        zs = _mm256_add_pd(zs, num);
        let pa = _mm256_mul_pd(_mm256_loadu_pd(prow.as_ptr().add(j)), num);
        let rb = _mm256_mul_pd(num, num);
        for k in 0..P {
            a[k] = _mm256_add_pd(a[k], _mm256_mul_pd(pa, diff[k]));
            r[k] = _mm256_add_pd(r[k], _mm256_mul_pd(rb, diff[k]));
        }
        j += LANES;
    }
    let out = |v: __m256d| {
        let mut o = [0.0; LANES];
        _mm256_storeu_pd(o.as_mut_ptr(), v);
        o
    };
    (out(zs), std::array::from_fn(|k| out(a[k])), std::array::from_fn(|k| out(r[k])))
}

/// Gradient descent on the embedding. Coordinates are kept one array per
/// dimension and each row of the gradient is accumulated on its own,
/// visiting every pair twice, so the loop over `j` runs in vector lanes.
fn optimise<const P: usize>(p: &[f64], n: usize, init: Vec<f64>, params: &TsneParams) -> Vec<f64> {
    let mut y: [Vec<f64>; P] = std::array::from_fn(|k| (0..n).map(|i| init[i * P + k]).collect());
    let mut update = [[0.0f64; P]].repeat(n);
    let mut gains = [[1.0f64; P]].repeat(n);
    let mut attract = [[0.0f64; P]].repeat(n);
    let mut repulse = [[0.0f64; P]].repeat(n);
    let tail = n - n % LANES;
    for iter in 0..params.iterations {
        let (exaggeration, momentum) = if iter < params.exaggeration_iters {
            (params.early_exaggeration, 0.5)
        } else {
            (1.0, 0.8)
        };
        let mut z = 0.0;
        for i in 0..n {
            let yi: [f64; P] = std::array::from_fn(|k| y[k][i]);
            let prow = &p[i * n..(i + 1) * n];
            let (zs, a, r) = lane_sums::<P>(&yi, &y, prow, tail);
            let mut zi: f64 = zs.iter().sum();
            let mut ai: [f64; P] = std::array::from_fn(|k| a[k].iter().sum());
            let mut ri: [f64; P] = std::array::from_fn(|k| r[k].iter().sum());
            for j in tail..n {
                let mut d2 = 1.0;
                let diff: [f64; P] = std::array::from_fn(|k| yi[k] - y[k][j]);
                for v in diff {
                    d2 += v * v;
                }
                let num = 1.0 / d2;
                zi += num;
                for k in 0..P {
                    ai[k] += prow[j] * num * diff[k];
                    ri[k] += num * num * diff[k];
                }
            }
            // the j == i term contributes num = 1 and no force
            z += zi - 1.0;
            attract[i] = ai;
            repulse[i] = ri;
        }
        let inv_z = 1.0 / z;
        let mut mean = [0.0; P];
        for i in 0..n {
            for k in 0..P {
                let grad = 4.0 * (exaggeration * attract[i][k] - inv_z * repulse[i][k]);
                let g = &mut gains[i][k];
                if (update[i][k] > 0.0) != (grad > 0.0) {
                    *g += 0.2;
                } else {
                    *g = (*g * 0.8).max(0.01);
                }
                update[i][k] = momentum * update[i][k] - params.learning_rate * *g * grad;
                y[k][i] += update[i][k];
                mean[k] += y[k][i];
            }
        }
        for k in 0..P {
            let m = mean[k] / n as f64;
            for v in y[k].iter_mut() {
                *v -= m;
            }
        }
    }
    (0..n).flat_map(|i| (0..P).map(move |k| (i, k))).map(|(i, k)| y[k][i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conditional_rows_hit_target_perplexity() {
        let tau: Vec<f64> = (0..40).map(|i| (f64::from(i) * 0.37).sin()).collect();
        let d = DistanceMatrix::from_effects(&tau).unwrap();
        let perp = 10.0;
        let p = conditional_affinities(&d, perp).unwrap();
        for i in 0..40 {
            let row = &p[i * 40..(i + 1) * 40];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let h: f64 = row.iter().filter(|&&v| v > 0.0).map(|v| -v * v.ln()).sum();
            assert!((h.exp() - perp).abs() < 1e-3, "row {i}: perplexity {}", h.exp());
        }
    }

    #[test]
    fn joint_affinities_symmetric_and_normalised() {
        let tau: Vec<f64> = (0..25).map(|i| f64::from(i % 7)).collect();
        let d = DistanceMatrix::from_effects(&tau).unwrap();
        let p = joint_affinities(&d, 5.0).unwrap();
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        for i in 0..25 {
            for j in 0..25 {
                assert_eq!(p[i * 25 + j], p[j * 25 + i]);
            }
        }
    }

    #[test]
    fn zero_distances_are_not_an_error() {
        let d = DistanceMatrix::from_effects(&[0.0; 20]).unwrap();
        let params = TsneParams {
            iterations: 50,
            ..TsneParams::default()
        };
        let e = project_tsne(&d, &params, 1).unwrap();
        assert!(e.coords().is_finite());
    }

    #[test]
    fn perplexity_too_large() {
        let d = DistanceMatrix::from_effects(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let params = TsneParams {
            perplexity: Some(2.0),
            ..TsneParams::default()
        };
        assert!(matches!(project_tsne(&d, &params, 0), Err(Error::Config(_))));
        let params = TsneParams {
            dim: 4,
            ..TsneParams::default()
        };
        assert!(project_tsne(&d, &params, 0).is_err());
    }

    #[test]
    fn vector_and_scalar_kernels_agree_bitwise() {
        let n = 37usize;
        let y: [Vec<f64>; 2] = [
            (0..n).map(|i| (i as f64 * 1.3).sin()).collect(),
            (0..n).map(|i| (i as f64 * 0.7).cos() * 3.0).collect(),
        ];
        let prow: Vec<f64> = (0..n).map(|i| i as f64 / 1000.0).collect();
        let tail = n - n % LANES;
        let yi = [0.25, -1.5];
        assert_eq!(lane_sums::<2>(&yi, &y, &prow, tail), lane_sums_scalar::<2>(&yi, &y, &prow, tail));
    }

    #[test]
    fn default_perplexity() {
        let p = TsneParams::default();
        assert_eq!(p.resolved_perplexity(1000), 30.0);
        assert_eq!(p.resolved_perplexity(31), 10.0);
    }
}
