//! Product-of-coefficients mediation analysis within a region, with
//! percentile-bootstrap p-values.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::ols;
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediationParams {
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_min_region")]
    pub min_region: usize,
}

fn default_bootstrap() -> usize {
    499
}

fn default_min_region() -> usize {
    30
}

impl Default for MediationParams {
    fn default() -> Self {
        MediationParams {
            bootstrap: default_bootstrap(),
            min_region: default_min_region(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationEstimate {
    pub tte: f64,
    pub ite: f64,
    /// `ite / tte`; `None` when the total effect is numerically zero.
    pub med_prop: Option<f64>,
    pub p_tte: f64,
    pub p_ite: f64,
    pub p_med_prop: f64,
    /// Indirect effect over its bootstrap standard deviation.
    pub z_ite: f64,
    pub n_region: usize,
    /// Resamples that produced an estimate (both arms present).
    pub bootstrap_used: usize,
}

const TTE_EPS: f64 = 1e-10;

struct Point {
    tte: f64,
    ite: f64,
}

/// Fits `M ~ W + X`, `Y ~ W + M + X` and `Y ~ W + X` on the rows `idx`.
fn point(ds: &Dataset, m: &[f64], idx: &[usize]) -> Result<Option<Point>> {
    let x = ds.covariates();
    let w = ds.treatment();
    let ones = vec![1.0; idx.len()];
    let wcol: Vec<f64> = idx.iter().map(|&i| f64::from(w[i])).collect();
    let mcol: Vec<f64> = idx.iter().map(|&i| m[i]).collect();
    let ycol: Vec<f64> = idx.iter().map(|&i| ds.outcome()[i]).collect();
    let xcols: Vec<Vec<f64>> = (0..x.cols())
        .map(|c| idx.iter().map(|&i| x.get(i, c)).collect())
        .collect();

    let mut med = vec![ones.clone(), wcol.clone()];
    med.extend(xcols.iter().cloned());
    let mut out = vec![ones.clone(), wcol.clone(), mcol.clone()];
    out.extend(xcols.iter().cloned());
    let mut tot = vec![ones, wcol];
    tot.extend(xcols);

    let a = ols(&med, &mcol)?.coefficients[1];
    let b = ols(&out, &ycol)?.coefficients[2];
    let c = ols(&tot, &ycol)?.coefficients[1];
    Ok(match (a, b, c) {
        (Some(a), Some(b), Some(c)) => Some(Point { tte: c, ite: a * b }),
        _ => None,
    })
}

/// Two-sided percentile p-value for a zero null.
fn percentile_p(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 1.0;
    }
    let b = samples.len() as f64;
    let le = samples.iter().filter(|&&v| v <= 0.0).count() as f64;
    let ge = samples.iter().filter(|&&v| v >= 0.0).count() as f64;
    (2.0 * le.min(ge) / b).min(1.0)
}

pub fn mediation_proportion(
    ds: &Dataset,
    region: &[usize],
    params: &MediationParams,
    seed: u64,
) -> Result<MediationEstimate> {
    let m = ds
        .mediator()
        .ok_or_else(|| Error::Mode("mediation analysis needs a mediator column".into()))?;
    let n = region.len();
    if n < params.min_region.max(2) {
        return Err(Error::Validation(format!(
            "region of {n} units is below the minimum size {}",
            params.min_region
        )));
    }
    let treated = region.iter().filter(|&&i| ds.treatment()[i] == 1).count();
    if treated == 0 || treated == n {
        return Err(Error::DegenerateArm(format!(
            "region of {n} units has only one treatment arm"
        )));
    }
    let est = point(ds, m, region)?
        .ok_or_else(|| Error::Numeric("treatment or mediator coefficient not identifiable in region".into()))?;

    let mut rng = rng::rng_for(seed, streams::BOOTSTRAP);
    let mut tte = Vec::with_capacity(params.bootstrap);
    let mut ite = Vec::with_capacity(params.bootstrap);
    let mut prop = Vec::with_capacity(params.bootstrap);
    let mut idx = vec![0usize; n];
    for _ in 0..params.bootstrap {
        for v in idx.iter_mut() {
            *v = region[rng.random_range(0..n)];
        }
        if let Some(p) = point(ds, m, &idx)? {
            tte.push(p.tte);
            ite.push(p.ite);
            if p.tte.abs() >= TTE_EPS {
                prop.push(p.ite / p.tte);
            }
        }
    }
    let sd = crate::stats::mean_sd(&ite).1;
    let z_ite = if sd > 0.0 { est.ite / sd } else { 0.0 };
    Ok(MediationEstimate {
        tte: est.tte,
        ite: est.ite,
        med_prop: (est.tte.abs() >= TTE_EPS).then(|| est.ite / est.tte),
        p_tte: percentile_p(&tte),
        p_ite: percentile_p(&ite),
        p_med_prop: percentile_p(&prop),
        z_ite,
        n_region: n,
        bootstrap_used: ite.len(),
    })
}
