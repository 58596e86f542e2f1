//! Interchangeable regression base learners: a single CART tree, a bagged
//! random forest and squared-error gradient boosting, plus a closed-form
//! oracle used for exactness tests.

pub mod boost;
pub mod cart;
pub mod forest;

use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

pub use boost::{fit_gradient_boost, BoostModel, BoostParams};
pub use cart::{fit_cart, root_split, CartParams, RegressionTree, SplitChoice, TreeNode};
pub use forest::{fit_random_forest, ForestModel, ForestParams};

use crate::error::Result;
use crate::linalg::Matrix;
use crate::rng;

/// The conditional expectation a fitted model stands in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelRole {
    /// `E[Y | X, W = arm]`
    Outcome { arm: u8 },
    /// `E[M | X, W = arm]`
    Mediator { arm: u8 },
    /// `E[Y | X, M, W = arm]`; the mediator is the last input column.
    OutcomeGivenMediator { arm: u8 },
}

impl ModelRole {
    fn stream(self) -> u64 {
        match self {
            ModelRole::Outcome { arm } => 10 + u64::from(arm),
            ModelRole::Mediator { arm } => 20 + u64::from(arm),
            ModelRole::OutcomeGivenMediator { arm } => 30 + u64::from(arm),
        }
    }
}

/// Closed-form regression functions standing in for fitted models.
pub trait OracleModel: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn evaluate(&self, role: ModelRole, x: &[f64]) -> f64;
}

#[derive(Debug, Clone)]
pub enum LearnerKind {
    Cart(CartParams),
    RandomForest(ForestParams),
    GradientBoost(BoostParams),
    /// Test-only; never constructed from command-line configuration.
    Oracle(Arc<dyn OracleModel>),
}

#[derive(Debug, Clone)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub seed: u64,
}

impl LearnerSpec {
    pub fn cart(params: CartParams) -> Self {
        LearnerSpec {
            kind: LearnerKind::Cart(params),
            seed: 0,
        }
    }

    pub fn random_forest(params: ForestParams, seed: u64) -> Self {
        LearnerSpec {
            kind: LearnerKind::RandomForest(params),
            seed,
        }
    }

    pub fn gradient_boost(params: BoostParams, seed: u64) -> Self {
        LearnerSpec {
            kind: LearnerKind::GradientBoost(params),
            seed,
        }
    }

    pub fn oracle(model: Arc<dyn OracleModel>) -> Self {
        LearnerSpec {
            kind: LearnerKind::Oracle(model),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn short_name(&self) -> &'static str {
        match self.kind {
            LearnerKind::Cart(_) => "cart",
            LearnerKind::RandomForest(_) => "rf",
            LearnerKind::GradientBoost(_) => "gb",
            LearnerKind::Oracle(_) => "oracle",
        }
    }

    /// Hex digest identifying the learner configuration and seed.
    pub fn fingerprint(&self) -> String {
        let descr = match &self.kind {
            LearnerKind::Oracle(o) => format!("oracle:{}", o.name()),
            other => format!("{other:?}"),
        };
        let digest = Sha256::digest(format!("{descr}|seed={}", self.seed).as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn fit(&self, role: ModelRole, x: &Matrix, y: &[f64]) -> Result<FittedModel> {
        let seed = rng::derive(self.seed, role.stream());
        Ok(match &self.kind {
            LearnerKind::Cart(p) => FittedModel::Tree(fit_cart(x, y, p)?),
            LearnerKind::RandomForest(p) => FittedModel::Forest(fit_random_forest(x, y, p, seed)?),
            LearnerKind::GradientBoost(p) => {
                FittedModel::Boost(fit_gradient_boost(x, y, p, seed)?)
            }
            LearnerKind::Oracle(o) => {
                cart::check_training(x, y)?;
                FittedModel::Oracle {
                    model: Arc::clone(o),
                    role,
                    n_features: x.cols(),
                }
            }
        })
    }
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Tree(RegressionTree),
    Forest(ForestModel),
    Boost(BoostModel),
    Oracle {
        model: Arc<dyn OracleModel>,
        role: ModelRole,
        n_features: usize,
    },
}

impl FittedModel {
    pub fn n_features(&self) -> usize {
        match self {
            FittedModel::Tree(t) => t.n_features(),
            FittedModel::Forest(f) => f.trees()[0].n_features(),
            FittedModel::Boost(b) => b.trees().first().map_or(0, RegressionTree::n_features),
            FittedModel::Oracle { n_features, .. } => *n_features,
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            FittedModel::Tree(t) => t.predict(x),
            FittedModel::Forest(f) => f.predict(x),
            FittedModel::Boost(b) => b.predict(x),
            FittedModel::Oracle {
                model,
                role,
                n_features,
            } => {
                cart::check_cols(*n_features, x)?;
                Ok((0..x.rows()).map(|r| model.evaluate(*role, x.row(r))).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    struct Affine;

    impl OracleModel for Affine {
        fn name(&self) -> String {
            "affine".into()
        }
        fn evaluate(&self, _role: ModelRole, x: &[f64]) -> f64 {
            1.0 + x[0]
        }
    }

    #[test]
    fn oracle_evaluates_closed_form() {
        let spec = LearnerSpec::oracle(Arc::new(Affine));
        let x = Matrix::column_vector(&[0.0, 2.0]);
        let m = spec.fit(ModelRole::Outcome { arm: 1 }, &x, &[0.0, 0.0]).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![1.0, 3.0]);
        assert!(m.predict(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn fingerprint_depends_on_seed_and_params() {
        let a = LearnerSpec::random_forest(ForestParams::default(), 1);
        let b = LearnerSpec::random_forest(ForestParams::default(), 2);
        let c = LearnerSpec::gradient_boost(BoostParams::default(), 1);
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
    }
}
