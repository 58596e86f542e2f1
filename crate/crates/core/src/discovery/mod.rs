//! From per-unit effects to candidate subgroupings: pairwise effect
//! distances, a t-SNE embedding of those distances, K-means on the embedding
//! for each candidate cluster count, and a covariate-space classification
//! tree per clustering whose leaves are the candidate subtypes.

pub mod kmeans;
pub mod subtype;
pub mod tsne;

pub use kmeans::{kmeans, ClusterAssignment};
pub use subtype::{
    extract_leaf_profiles, fit_subtype_tree, Condition, LeafProfile, SubtypeTree,
    SubtypeTreeParams,
};
pub use tsne::{project_tsne, Embedding, TsneParams};

use crate::effects::EffectVector;
use crate::error::{Error, Result};

/// Symmetric matrix of squared effect differences `(tau_i - tau_j)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_effects(tau: &[f64]) -> Result<Self> {
        let n = tau.len();
        if n < 2 {
            return Err(Error::Validation(format!(
                "distance matrix needs at least 2 units, got {n}"
            )));
        }
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (tau[i] - tau[j]) * (tau[i] - tau[j]);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

pub fn distance_matrix(tau: &EffectVector) -> Result<DistanceMatrix> {
    DistanceMatrix::from_effects(tau.values())
}

/// Cluster counts to try: `2..=floor(sqrt(d)) + 2` unless overridden.
pub fn candidate_ks(d: usize, range: Option<(usize, usize)>) -> Result<Vec<usize>> {
    if d == 0 {
        return Err(Error::Config("covariate count must be positive".into()));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) => {
            if lo < 2 {
                return Err(Error::Config(format!("minimum cluster count {lo} < 2")));
            }
            if hi < lo {
                return Err(Error::Config(format!("empty cluster range {lo}..={hi}")));
            }
            (lo, hi)
        }
        None => (2, (d as f64).sqrt().floor() as usize + 2),
    };
    Ok((lo..=hi).collect())
}
