use std::io::Write;

use serde::{Deserialize, Serialize};

use super::cart::{check_cols, check_training, grow, CartParams, RegressionTree};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Minimum number of samples per leaf.
    pub min_child: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_rounds: 100,
            learning_rate: 0.3,
            max_depth: 6,
            min_child: 1,
        }
    }
}

/// Squared-error gradient boosting with unregularised leaf means.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostModel {
    base_score: f64,
    trees: Vec<RegressionTree>,
    learning_rate: f64,
    seed: u64,
    n_features: usize,
}

impl BoostModel {
    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn n_rounds(&self) -> usize {
        self.trees.len()
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |acc, t| acc + self.learning_rate * t.predict_row(x))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_cols(self.n_features, x)?;
        Ok((0..x.rows()).map(|r| self.predict_row(x.row(r))).collect())
    }

    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# base_score {}", self.base_score)?;
        for (k, t) in self.trees.iter().enumerate() {
            writeln!(w, "# round {k}")?;
            t.dump(&mut w)?;
        }
        Ok(())
    }
}

/// `seed` is recorded for provenance; fitting itself is deterministic since
/// no row or column subsampling is performed.
pub fn fit_gradient_boost(
    x: &Matrix,
    y: &[f64],
    params: &BoostParams,
    seed: u64,
) -> Result<BoostModel> {
    check_training(x, y)?;
    if params.n_rounds == 0 {
        return Err(Error::Config("n_rounds must be at least 1".into()));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::Config(format!(
            "learning_rate {} outside (0, 1]",
            params.learning_rate
        )));
    }
    let cart = CartParams {
        max_depth: params.max_depth,
        min_split: 2 * params.min_child.max(1),
        min_leaf: params.min_child.max(1),
    };
    let n = x.rows();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mut residual = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_rounds);
    for _ in 0..params.n_rounds {
        for i in 0..n {
            residual[i] = y[i] - pred[i];
        }
        let tree = grow(x, &residual, (0..n).collect(), &cart, None);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += params.learning_rate * tree.predict_row(x.row(i));
        }
        trees.push(tree);
    }
    Ok(BoostModel {
        base_score,
        trees,
        learning_rate: params.learning_rate,
        seed,
        n_features: x.cols(),
    })
}
