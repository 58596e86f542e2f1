//! Likelihood-ratio evidence that a subtyping modifies the treatment effect,
//! selection of the strongest candidate tree, and a null-calibrated
//! acceptance threshold.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::discovery::SubtypeTree;
use crate::error::{Error, Result};
use crate::linalg::ols;
use crate::stats::chi_square_sf;

/// Response regressed on leaf and treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Outcome,
    Mediator,
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "outcome" | "y" => Ok(Target::Outcome),
            "mediator" | "m" => Ok(Target::Mediator),
            other => Err(Error::Config(format!(
                "unknown target `{other}` (expected outcome or mediator)"
            ))),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Outcome => "outcome",
            Target::Mediator => "mediator",
        })
    }
}

fn target_values(ds: &Dataset, target: Target) -> Result<&[f64]> {
    match target {
        Target::Outcome => Ok(ds.outcome()),
        Target::Mediator => ds.mediator().ok_or_else(|| {
            Error::Mode("target is the mediator but the dataset has no mediator column".into())
        }),
    }
}

/// How the leaf enters the two linear models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafEncoding {
    /// Intercept plus one indicator per non-reference leaf.
    #[default]
    Categorical,
    /// The leaf id as a single numeric regressor.
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    /// Intercept, leaf terms, treatment. `None` marks a dropped column.
    pub beta_reduced: Vec<Option<f64>>,
    /// Reduced-model terms followed by the leaf-by-treatment interactions.
    pub beta_full: Vec<Option<f64>>,
    pub log_l0: f64,
    pub log_l1: f64,
    pub statistic: f64,
    pub df: usize,
    pub p_leaf: f64,
    pub n_leaves: usize,
    /// Set when some interaction column was not identifiable and df was
    /// reduced below `n_leaves - 1`.
    pub rank_deficient: bool,
}

impl LrtResult {
    fn degenerate(n_leaves: usize) -> Self {
        LrtResult {
            beta_reduced: Vec::new(),
            beta_full: Vec::new(),
            log_l0: f64::NAN,
            log_l1: f64::NAN,
            statistic: 0.0,
            df: 0,
            p_leaf: 1.0,
            n_leaves,
            rank_deficient: false,
        }
    }
}

/// Tests whether the treatment coefficient differs across leaves.
///
/// `leaves` holds one subtype id per unit; the ids themselves carry no
/// meaning beyond identity.
pub fn p_leaf(ds: &Dataset, leaves: &[usize], target: Target, encoding: LeafEncoding) -> Result<LrtResult> {
    let y = target_values(ds, target)?;
    let n = ds.n();
    if leaves.len() != n {
        return Err(Error::Shape {
            expected: n,
            actual: leaves.len(),
        });
    }
    let levels: Vec<usize> = {
        let mut v = leaves.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let l = levels.len();
    if l < 2 {
        return Ok(LrtResult::degenerate(l));
    }
    let w = ds.treatment_f64();
    let mut reduced: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut interactions: Vec<Vec<f64>> = Vec::new();
    match encoding {
        LeafEncoding::Categorical => {
            for &lv in &levels[1..] {
                let ind: Vec<f64> = leaves.iter().map(|&v| f64::from(u8::from(v == lv))).collect();
                interactions.push(ind.iter().zip(&w).map(|(a, b)| a * b).collect());
                reduced.push(ind);
            }
        }
        LeafEncoding::Scalar => {
            let code: Vec<f64> = leaves.iter().map(|&v| v as f64).collect();
            interactions.push(code.iter().zip(&w).map(|(a, b)| a * b).collect());
            reduced.push(code);
        }
    }
    reduced.push(w);
    let nominal_df = interactions.len();
    let mut full = reduced.clone();
    full.extend(interactions);

    let fit0 = ols(&reduced, y)?;
    let fit1 = ols(&full, y)?;
    let df = fit1.rank - fit0.rank;
    let rss0 = fit0.rss.max(0.0);
    let rss1 = fit1.rss.max(0.0).min(rss0);
    let scale = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let statistic = if df == 0 || rss0 <= 1e-28 * scale {
        0.0
    } else if rss1 <= 1e-28 * scale {
        f64::INFINITY
    } else {
        (n as f64 * (rss0 / rss1).ln()).max(0.0)
    };
    Ok(LrtResult {
        beta_reduced: fit0.coefficients.clone(),
        beta_full: fit1.coefficients.clone(),
        log_l0: fit0.log_likelihood(),
        log_l1: fit1.log_likelihood().max(fit0.log_likelihood()),
        statistic,
        df,
        p_leaf: chi_square_sf(statistic, df),
        n_leaves: l,
        rank_deficient: df < nominal_df,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Pending,
    Accepted,
    Rejected,
}

/// Where the threshold applied in a decision came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSource {
    Calibrated,
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub k: usize,
    pub n_leaves: usize,
    pub p_leaf: f64,
}

#[derive(Debug, Clone)]
pub struct SubtypeSelection {
    pub tree: SubtypeTree,
    pub lrt: LrtResult,
    /// Subtype id of every training unit under the chosen tree.
    pub assignment: Vec<usize>,
    pub candidates: Vec<CandidateSummary>,
    pub chosen: usize,
    pub decision: Decision,
    pub threshold_used: Option<f64>,
    pub threshold_source: Option<ThresholdSource>,
}

impl SubtypeSelection {
    pub fn p_leaf(&self) -> f64 {
        self.lrt.p_leaf
    }

    pub fn is_accepted(&self) -> bool {
        self.decision == Decision::Accepted
    }

    /// Covariates reported for the run: those of the chosen tree when
    /// accepted and none otherwise.
    pub fn reported_covariates(&self) -> Vec<String> {
        if self.is_accepted() {
            self.tree.covariates_used()
        } else {
            Vec::new()
        }
    }
}

/// Evaluates every candidate and keeps the smallest p_leaf; ties go to the
/// smaller cluster count, then to the tree with fewer leaves.
pub fn select_subtype(
    ds: &Dataset,
    trees: Vec<SubtypeTree>,
    target: Target,
    encoding: LeafEncoding,
) -> Result<SubtypeSelection> {
    if trees.is_empty() {
        return Err(Error::Config("subtype selection needs at least one candidate".into()));
    }
    let mut scored = Vec::with_capacity(trees.len());
    for tree in trees {
        let assignment = tree.assign(ds.covariates())?;
        let lrt = p_leaf(ds, &assignment, target, encoding)?;
        scored.push((tree, lrt, assignment));
    }
    let candidates: Vec<CandidateSummary> = scored
        .iter()
        .map(|(t, r, _)| CandidateSummary {
            k: t.k_source(),
            n_leaves: t.n_leaves(),
            p_leaf: r.p_leaf,
        })
        .collect();
    let chosen = (0..candidates.len())
        .min_by(|&a, &b| {
            let (x, y) = (&candidates[a], &candidates[b]);
            x.p_leaf
                .total_cmp(&y.p_leaf)
                .then(x.k.cmp(&y.k))
                .then(x.n_leaves.cmp(&y.n_leaves))
                .then(a.cmp(&b))
        })
        .expect("non-empty");
    let (tree, lrt, assignment) = scored.swap_remove(chosen);
    Ok(SubtypeSelection {
        tree,
        lrt,
        assignment,
        candidates,
        chosen,
        decision: Decision::Pending,
        threshold_used: None,
        threshold_source: None,
    })
}

pub const MIN_CALIBRATION_REPS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationThreshold {
    pub alpha: f64,
    pub threshold: f64,
    pub replications: usize,
    pub scenario: String,
    pub quantile: String,
    #[serde(default)]
    pub warning: Option<String>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub null_pvalues: Vec<f64>,
    /// Free-form settings of the null runs, echoed for provenance.
    #[serde(default)]
    pub settings: BTreeMap<String, String>,
}

impl CalibrationThreshold {
    /// Fraction of the stored null p-values at or below the threshold.
    pub fn rejection_fraction(&self) -> f64 {
        let hits = self.null_pvalues.iter().filter(|&&p| p <= self.threshold).count();
        hits as f64 / self.null_pvalues.len() as f64
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise threshold: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let t: CalibrationThreshold =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad threshold file: {e}")))?;
        if !(0.0..1.0).contains(&t.threshold) {
            return Err(Error::Config(format!(
                "threshold {} outside [0, 1)",
                t.threshold
            )));
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Lower empirical alpha-quantile of null p-values: the largest observed
/// value `t` with `#{p <= t} / R <= alpha`.
pub fn calibrate_threshold(
    null_ps: &[f64],
    alpha: f64,
    scenario: &str,
    seeds: Vec<u64>,
) -> Result<CalibrationThreshold> {
    let r = null_ps.len();
    if r < MIN_CALIBRATION_REPS {
        return Err(Error::Validation(format!(
            "calibration needs at least {MIN_CALIBRATION_REPS} null replications, got {r}"
        )));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1)")));
    }
    if let Some(p) = null_ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Validation(format!("null p-value {p} outside [0, 1]")));
    }
    let mut sorted = null_ps.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut warning = None;
    let threshold = if alpha == 0.0 {
        0.0
    } else if sorted.iter().all(|&p| p >= 1.0) {
        warning = Some(format!(
            "every null p-value equals 1; threshold set to alpha = {alpha}"
        ));
        alpha
    } else {
        let mut best = 0.0;
        for (i, &t) in sorted.iter().enumerate() {
            // Only the last of a run of ties carries the full count.
            if sorted.get(i + 1) == Some(&t) {
                continue;
            }
            if (i + 1) as f64 / r as f64 <= alpha + 1e-12 {
                best = t;
            } else {
                break;
            }
        }
        if best >= 1.0 {
            warning = Some(format!(
                "empirical quantile reached 1; threshold set to alpha = {alpha}"
            ));
            alpha
        } else {
            best
        }
    };
    Ok(CalibrationThreshold {
        alpha,
        threshold,
        replications: r,
        scenario: scenario.to_string(),
        quantile: "lower-empirical".into(),
        warning,
        seeds,
        null_pvalues: null_ps.to_vec(),
        settings: BTreeMap::new(),
    })
}

/// Applies a threshold: accepted iff `p_leaf <= threshold`.
pub fn decide_at(mut selection: SubtypeSelection, threshold: f64, source: ThresholdSource) -> SubtypeSelection {
    selection.decision = if selection.lrt.p_leaf <= threshold {
        Decision::Accepted
    } else {
        Decision::Rejected
    };
    selection.threshold_used = Some(threshold);
    selection.threshold_source = Some(source);
    selection
}

pub fn decide(selection: SubtypeSelection, thr: &CalibrationThreshold) -> SubtypeSelection {
    decide_at(selection, thr.threshold, ThresholdSource::Calibrated)
}
