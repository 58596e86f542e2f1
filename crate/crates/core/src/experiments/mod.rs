//! Monte-Carlo replication harness over the simulated scenarios and the
//! summaries reported from it.

pub mod mediation;
pub mod plot;
pub mod report;
pub mod surface;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use mediation::{mediation_proportion, MediationEstimate, MediationParams};
pub use report::{
    covariate_count_distribution, ecdf, ecdf_at, hit_table, read_records_csv, region_comparison,
    threshold_error, write_records_csv, HitTable, RegionComparison, RegionStats, ThresholdError,
};
pub use surface::{effect_surface_grid, GridSpec, SurfacePoint};

use crate::calibration::{decide_at, Decision, SubtypeSelection, Target, ThresholdSource};
use crate::data::Dataset;
use crate::discovery::{extract_leaf_profiles, LeafProfile};
use crate::error::Result;
use crate::learners::LearnerSpec;
use crate::pipeline::{kmeans_baseline, run_pipeline, DiscoveryParams};
use crate::rng::{self, streams};
use crate::simulation::{generate, Family, ScenarioConfig, ScenarioId};

/// Covariates carrying the simulated heterogeneity.
pub const TRUTH_COVARIATES: [&str; 2] = ["x1", "x2"];

/// Discovery settings used for a scenario in the simulation study: cluster
/// counts 2 to 5, and the mediator as target for the mediator family.
pub fn scenario_discovery(id: ScenarioId) -> DiscoveryParams {
    DiscoveryParams {
        k_range: Some((2, 5)),
        target: match id.family() {
            Family::NoMediator => Target::Outcome,
            Family::Mediator => Target::Mediator,
        },
        ..DiscoveryParams::default()
    }
}

#[derive(Debug, Clone)]
pub struct ReplicationPlan {
    /// Data-generating template; its seed is replaced per replication.
    pub scenario: ScenarioConfig,
    pub reps: usize,
    pub master_seed: u64,
    pub learner: LearnerSpec,
    pub discovery: DiscoveryParams,
    /// Acceptance threshold; `None` leaves decisions pending.
    pub threshold: Option<(f64, ThresholdSource)>,
    pub mediation: MediationParams,
    /// Cluster raw covariates instead of embedded effects.
    pub baseline: bool,
}

impl ReplicationPlan {
    pub fn new(scenario: ScenarioConfig, reps: usize, master_seed: u64, learner: LearnerSpec) -> Self {
        let discovery = scenario_discovery(scenario.id);
        ReplicationPlan {
            scenario,
            reps,
            master_seed,
            learner,
            discovery,
            threshold: None,
            mediation: MediationParams::default(),
            baseline: false,
        }
    }

    pub fn replication_seed(&self, rep: usize) -> u64 {
        rng::derive(rng::derive(self.master_seed, streams::REPLICATION), rep as u64)
    }
}

/// One replication's outcome. Optional fields are empty in CSV form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub seed: u64,
    pub scenario: String,
    pub learner: String,
    pub decision: Decision,
    pub p_leaf: f64,
    pub df: usize,
    pub chosen_k: usize,
    pub n_leaves: usize,
    pub n_covariates: usize,
    /// Reported covariates separated by `;`; empty unless accepted.
    pub covariates: String,
    pub selected_subtype: Option<usize>,
    pub selected_size: Option<usize>,
    pub lower_x1: Option<f64>,
    pub lower_x2: Option<f64>,
    pub truth_size: usize,
    pub truth_med_prop: Option<f64>,
    pub truth_ite: Option<f64>,
    pub truth_tte: Option<f64>,
    pub selected_med_prop: Option<f64>,
    pub selected_ite: Option<f64>,
    pub selected_tte: Option<f64>,
    pub selected_med_p: Option<f64>,
    #[serde(skip)]
    pub selected_indices: Vec<usize>,
}

impl ReplicationRecord {
    pub fn covariate_list(&self) -> Vec<&str> {
        if self.covariates.is_empty() {
            Vec::new()
        } else {
            self.covariates.split(';').collect()
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.decision == Decision::Accepted
    }
}

/// Leaf standing for the heterogeneous region of a run.
pub struct SelectedRegion {
    pub profile: LeafProfile,
    pub indices: Vec<usize>,
    pub mediation: Option<MediationEstimate>,
}

/// The most significant subtype of a selection. Without a mediator target
/// it is the leaf with the largest absolute mean effect; with one, the
/// eligible leaf with the lowest mediation p-value, ties going to the
/// larger |z| of the indirect effect. Leaves too small or confined to one
/// arm are not eligible; if none is, the effect rule applies.
pub fn most_significant_subtype(
    ds: &Dataset,
    selection: &SubtypeSelection,
    effects: Option<&[f64]>,
    target: Target,
    mediation: &MediationParams,
    seed: u64,
) -> Result<Option<SelectedRegion>> {
    let profiles = extract_leaf_profiles(&selection.tree);
    let members = |id: usize| -> Vec<usize> {
        (0..ds.n()).filter(|&i| selection.assignment[i] == id).collect()
    };
    let score = |idx: &[usize]| -> f64 {
        match effects {
            Some(tau) => idx.iter().map(|&i| tau[i]).sum::<f64>() / idx.len() as f64,
            None => {
                // raw difference of arm means
                let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
                for &i in idx {
                    if ds.treatment()[i] == 1 {
                        s1 += ds.outcome()[i];
                        n1 += 1;
                    } else {
                        s0 += ds.outcome()[i];
                        n0 += 1;
                    }
                }
                if n1 == 0 || n0 == 0 {
                    0.0
                } else {
                    s1 / n1 as f64 - s0 / n0 as f64
                }
            }
        }
        .abs()
    };

    if target == Target::Mediator {
        let mut best: Option<(f64, f64, usize, MediationEstimate, Vec<usize>)> = None;
        for (pos, prof) in profiles.iter().enumerate() {
            let idx = members(prof.subtype_id);
            let Ok(est) = mediation_proportion(ds, &idx, mediation, rng::derive(seed, prof.subtype_id as u64)) else {
                continue;
            };
            let key = (est.p_med_prop, -est.z_ite.abs());
            let better = best
                .as_ref()
                .is_none_or(|(p, z, _, _, _)| key.0 < *p || (key.0 == *p && key.1 < *z));
            if better {
                best = Some((key.0, key.1, pos, est, idx));
            }
        }
        if let Some((_, _, pos, est, idx)) = best {
            return Ok(Some(SelectedRegion {
                profile: profiles[pos].clone(),
                indices: idx,
                mediation: Some(est),
            }));
        }
    }

    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for (pos, prof) in profiles.iter().enumerate() {
        let idx = members(prof.subtype_id);
        if idx.is_empty() {
            continue;
        }
        let s = score(&idx);
        if best.as_ref().is_none_or(|(b, _, _)| s > *b) {
            best = Some((s, pos, idx));
        }
    }
    Ok(best.map(|(_, pos, indices)| SelectedRegion {
        profile: profiles[pos].clone(),
        indices,
        mediation: None,
    }))
}

pub fn run_replication(plan: &ReplicationPlan, rep: usize) -> Result<ReplicationRecord> {
    let seed = plan.replication_seed(rep);
    let cfg = plan.scenario.clone().with_seed(rng::derive(seed, streams::DATA));
    let (ds, truth) = generate(&cfg)?;
    let pipeline_seed = rng::derive(seed, streams::PIPELINE);
    let (selection, effects) = if plan.baseline {
        (kmeans_baseline(&ds, &plan.discovery, pipeline_seed)?, None)
    } else {
        let run = run_pipeline(&ds, &plan.learner, &plan.discovery, pipeline_seed)?;
        (run.selection, Some(run.effects))
    };
    let selection = match plan.threshold {
        Some((t, source)) => decide_at(selection, t, source),
        None => selection,
    };
    let mediator_family = cfg.family() == Family::Mediator;
    let med_seed = rng::derive(seed, streams::BOOTSTRAP);

    let region = if selection.decision == Decision::Rejected {
        None
    } else {
        most_significant_subtype(
            &ds,
            &selection,
            effects.as_ref().map(|e| e.values()),
            plan.discovery.target,
            &plan.mediation,
            med_seed,
        )?
    };
    let selected_mediation = match &region {
        Some(r) if mediator_family => match &r.mediation {
            Some(m) => Some(m.clone()),
            None => mediation_proportion(&ds, &r.indices, &plan.mediation, med_seed).ok(),
        },
        _ => None,
    };
    let truth_region = truth.region_indices();
    let truth_mediation = if mediator_family {
        mediation_proportion(&ds, &truth_region, &plan.mediation, rng::derive(med_seed, u64::MAX)).ok()
    } else {
        None
    };

    let accepted = selection.is_accepted();
    let covariates = selection.reported_covariates();
    let lower = |name: &str| {
        region
            .as_ref()
            .filter(|_| accepted)
            .and_then(|r| r.profile.lower_bound(name))
    };
    Ok(ReplicationRecord {
        rep,
        seed,
        scenario: cfg.id.slug().to_string(),
        learner: if plan.baseline {
            "kmeans-baseline".into()
        } else {
            plan.learner.short_name().into()
        },
        decision: selection.decision,
        p_leaf: selection.p_leaf(),
        df: selection.lrt.df,
        chosen_k: selection.tree.k_source(),
        n_leaves: selection.tree.n_leaves(),
        n_covariates: covariates.len(),
        covariates: covariates.join(";"),
        selected_subtype: region.as_ref().map(|r| r.profile.subtype_id),
        selected_size: region.as_ref().map(|r| r.indices.len()),
        lower_x1: lower(TRUTH_COVARIATES[0]),
        lower_x2: lower(TRUTH_COVARIATES[1]),
        truth_size: truth_region.len(),
        truth_med_prop: truth_mediation.as_ref().and_then(|m| m.med_prop),
        truth_ite: truth_mediation.as_ref().map(|m| m.ite),
        truth_tte: truth_mediation.as_ref().map(|m| m.tte),
        selected_med_prop: selected_mediation.as_ref().and_then(|m| m.med_prop),
        selected_ite: selected_mediation.as_ref().map(|m| m.ite),
        selected_tte: selected_mediation.as_ref().map(|m| m.tte),
        selected_med_p: selected_mediation.as_ref().map(|m| m.p_med_prop),
        selected_indices: region.map(|r| r.indices).unwrap_or_default(),
    })
}

/// Runs every replication of the plan, in parallel across replications.
/// Records come back in replication order and do not depend on the number
/// of worker threads.
pub fn run_replications(plan: &ReplicationPlan) -> Result<Vec<ReplicationRecord>> {
    plan.scenario.validate()?;
    (0..plan.reps)
        .into_par_iter()
        .map(|r| run_replication(plan, r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::TsneParams;
    use crate::learners::{CartParams, LearnerSpec};

    fn small_plan(id: ScenarioId) -> ReplicationPlan {
        let mut plan = ReplicationPlan::new(
            ScenarioConfig::new(id).with_n(200),
            2,
            7,
            LearnerSpec::cart(CartParams {
                min_leaf: 10,
                ..CartParams::default()
            }),
        );
        plan.discovery.tsne = TsneParams {
            iterations: 250,
            ..TsneParams::default()
        };
        plan.discovery.k_range = Some((2, 3));
        plan.mediation.bootstrap = 19;
        plan
    }

    #[test]
    fn replications_are_deterministic() {
        let plan = small_plan(ScenarioId::Simple);
        let a = run_replications(&plan).unwrap();
        let b = run_replications(&plan).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_ne!(a[0].seed, a[1].seed);
    }

    #[test]
    fn rejected_runs_report_nothing() {
        let mut plan = small_plan(ScenarioId::Null);
        plan.threshold = Some((0.0, ThresholdSource::Calibrated));
        for r in run_replications(&plan).unwrap() {
            if r.p_leaf > 0.0 {
                assert_eq!(r.decision, Decision::Rejected);
                assert_eq!(r.n_covariates, 0);
                assert!(r.covariate_list().is_empty());
                assert!(r.selected_size.is_none());
            }
        }
    }

    #[test]
    fn mediator_scenario_records_mediation() {
        let mut plan = small_plan(ScenarioId::SimpleAll);
        plan.threshold = Some((1e-3, ThresholdSource::Nominal));
        let recs = run_replications(&plan).unwrap();
        for r in &recs {
            assert!(r.truth_ite.is_some());
            assert!(r.truth_size > 20);
            if r.is_accepted() {
                assert!(r.selected_size.is_some());
            }
        }
    }
}
