//! One pass of subgroup discovery on a dataset: effect estimates, their
//! embedding, a clustering and subtype tree per candidate k, and the
//! minimal-p selection.

use serde::{Deserialize, Serialize};

use crate::calibration::{select_subtype, LeafEncoding, SubtypeSelection, Target};
use crate::data::Dataset;
use crate::discovery::{
    candidate_ks, distance_matrix, fit_subtype_tree, kmeans, project_tsne, ClusterAssignment,
    Embedding, SubtypeTreeParams, TsneParams,
};
use crate::discovery::kmeans::DEFAULT_RESTARTS;
use crate::effects::{estimate, EffectKind, EffectVector};
use crate::error::Result;
use crate::learners::LearnerSpec;
use crate::linalg::Matrix;
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoveryParams {
    #[serde(default)]
    pub tsne: TsneParams,
    #[serde(default)]
    pub tree: SubtypeTreeParams,
    /// Inclusive cluster-count range; `None` uses the covariate-count rule.
    #[serde(default)]
    pub k_range: Option<(usize, usize)>,
    #[serde(default = "default_restarts")]
    pub kmeans_restarts: usize,
    #[serde(default = "default_target")]
    pub target: Target,
    #[serde(default)]
    pub encoding: LeafEncoding,
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

fn default_target() -> Target {
    Target::Outcome
}

impl Default for DiscoveryParams {
    fn default() -> Self {
        DiscoveryParams {
            tsne: TsneParams::default(),
            tree: SubtypeTreeParams::default(),
            k_range: None,
            kmeans_restarts: DEFAULT_RESTARTS,
            target: Target::Outcome,
            encoding: LeafEncoding::Categorical,
        }
    }
}

impl DiscoveryParams {
    /// Indirect effects are estimated exactly when the mediator is the
    /// regression target.
    pub fn effect_kind(&self) -> EffectKind {
        match self.target {
            Target::Outcome => EffectKind::Total,
            Target::Mediator => EffectKind::Indirect,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub effects: EffectVector,
    pub embedding: Embedding,
    pub clusterings: Vec<ClusterAssignment>,
    pub selection: SubtypeSelection,
}

/// Runs the full discovery pass. The learner's own seed is replaced by one
/// derived from `seed`, so the run depends on `seed` alone.
pub fn run_pipeline(ds: &Dataset, learner: &LearnerSpec, params: &DiscoveryParams, seed: u64) -> Result<PipelineRun> {
    let spec = learner.clone().with_seed(rng::derive(seed, streams::LEARNER));
    let effects = estimate(ds, &spec, params.effect_kind())?;
    let dist = distance_matrix(&effects)?;
    let embedding = project_tsne(&dist, &params.tsne, rng::derive(seed, streams::TSNE))?;
    let (clusterings, selection) = cluster_and_select(ds, embedding.coords(), params, seed)?;
    Ok(PipelineRun {
        effects,
        embedding,
        clusterings,
        selection,
    })
}

/// K-means and a subtype tree for each candidate k on the given points,
/// followed by selection. Shared with the covariate-space baseline.
pub fn cluster_and_select(
    ds: &Dataset,
    points: &Matrix,
    params: &DiscoveryParams,
    seed: u64,
) -> Result<(Vec<ClusterAssignment>, SubtypeSelection)> {
    let ks = candidate_ks(ds.d(), params.k_range)?;
    let km_seed = rng::derive(seed, streams::KMEANS);
    let mut clusterings = Vec::with_capacity(ks.len());
    let mut trees = Vec::with_capacity(ks.len());
    for k in ks {
        let c = kmeans(points, k, km_seed, params.kmeans_restarts)?;
        trees.push(fit_subtype_tree(ds, &c, &params.tree)?);
        clusterings.push(c);
    }
    let selection = select_subtype(ds, trees, params.target, params.encoding)?;
    Ok((clusterings, selection))
}

/// K-means directly on the covariates, skipping effect estimation and
/// projection, then the same tree and selection steps.
pub fn kmeans_baseline(ds: &Dataset, params: &DiscoveryParams, seed: u64) -> Result<SubtypeSelection> {
    Ok(cluster_and_select(ds, ds.covariates(), params, seed)?.1)
}
