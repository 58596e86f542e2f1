//! Mean estimated effect over a two-covariate grid.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::{EffectKind, LearnerBundle};
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::linalg::Matrix;
use crate::rng::{self, streams};
use crate::simulation::{generate, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Zero-based covariate columns spanning the grid.
    #[serde(default)]
    pub cov1: usize,
    #[serde(default = "one")]
    pub cov2: usize,
    #[serde(default = "lo")]
    pub lo: f64,
    #[serde(default = "hi")]
    pub hi: f64,
    #[serde(default = "step")]
    pub step: f64,
}

fn one() -> usize {
    1
}
fn lo() -> f64 {
    -1.5
}
fn hi() -> f64 {
    1.5
}
fn step() -> f64 {
    0.05
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            cov1: 0,
            cov2: one(),
            lo: lo(),
            hi: hi(),
            step: step(),
        }
    }
}

impl GridSpec {
    /// Grid coordinates along one axis; computed from the index so there is
    /// no accumulated rounding.
    pub fn axis(&self) -> Vec<f64> {
        let m = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=m).map(|i| self.lo + i as f64 * self.step).collect()
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.cov1 >= d || self.cov2 >= d || self.cov1 == self.cov2 {
            return Err(Error::Config(format!(
                "grid covariates {} and {} must be distinct columns below {d}",
                self.cov1, self.cov2
            )));
        }
        if !(self.step > 0.0) || !(self.hi >= self.lo) {
            return Err(Error::Config("grid needs step > 0 and hi >= lo".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub cov1: f64,
    pub cov2: f64,
    pub mean_tau: f64,
}

/// For each replication: simulate training data, fit the learners, and
/// predict effects on the grid with the remaining covariates drawn from
/// N(0, 1). Grid values are the averages over replications.
pub fn effect_surface_grid(
    cfg: &ScenarioConfig,
    learner: &LearnerSpec,
    kind: EffectKind,
    grid: &GridSpec,
    reps: usize,
    master_seed: u64,
) -> Result<Vec<SurfacePoint>> {
    cfg.validate()?;
    grid.validate(cfg.d)?;
    if reps == 0 {
        return Err(Error::Config("surface needs at least one replication".into()));
    }
    let axis = grid.axis();
    let cells: Vec<(f64, f64)> = axis
        .iter()
        .flat_map(|&a| axis.iter().map(move |&b| (a, b)))
        .collect();
    let per_rep: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let seed = rng::derive(rng::derive(master_seed, streams::GRID), r as u64);
            let (ds, _) = generate(&cfg.clone().with_seed(rng::derive(seed, streams::DATA)))?;
            let spec = learner.clone().with_seed(rng::derive(seed, streams::LEARNER));
            let bundle = match kind {
                EffectKind::Total => LearnerBundle::fit_total(&ds, &spec)?,
                EffectKind::Indirect => LearnerBundle::fit_indirect(&ds, &spec)?,
            };
            let mut rng = rng::rng_for(seed, streams::GRID);
            let mut x = Matrix::zeros(cells.len(), cfg.d);
            for (row, &(a, b)) in cells.iter().enumerate() {
                for c in 0..cfg.d {
                    let v = if c == grid.cov1 {
                        a
                    } else if c == grid.cov2 {
                        b
                    } else {
                        StandardNormal.sample(&mut rng)
                    };
                    x.set(row, c, v);
                }
            }
            bundle.effects(&x)
        })
        .collect::<Result<_>>()?;
    let mut sums = vec![0.0; cells.len()];
    for tau in &per_rep {
        for (s, t) in sums.iter_mut().zip(tau) {
            *s += t;
        }
    }
    Ok(cells
        .iter()
        .zip(sums)
        .map(|(&(a, b), s)| SurfacePoint {
            cov1: a,
            cov2: b,
            mean_tau: s / reps as f64,
        })
        .collect())
}

pub fn write_surface_csv<W: Write>(points: &[SurfacePoint], names: (&str, &str), w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([names.0, names.1, "mean_tau_hat"])?;
    for p in points {
        out.write_record([p.cov1.to_string(), p.cov2.to_string(), p.mean_tau.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<surface>", e))?;
    Ok(())
}
