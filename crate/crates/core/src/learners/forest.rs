use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cart::{check_cols, check_training, grow, CartParams, RegressionTree};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `max(1, d / 3)`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 2000,
            mtry: None,
            min_leaf: 5,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, d: usize) -> usize {
        self.mtry.unwrap_or((d / 3).max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<RegressionTree>,
    mtry: usize,
    seed: u64,
    n_features: usize,
}

impl ForestModel {
    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn mtry(&self) -> usize {
        self.mtry
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict_row(x)).sum();
        s / self.trees.len() as f64
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_cols(self.n_features, x)?;
        Ok((0..x.rows()).map(|r| self.predict_row(x.row(r))).collect())
    }

    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, t) in self.trees.iter().enumerate() {
            writeln!(w, "# tree {k}")?;
            t.dump(&mut w)?;
        }
        Ok(())
    }
}

pub fn fit_random_forest(
    x: &Matrix,
    y: &[f64],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel> {
    check_training(x, y)?;
    let d = x.cols();
    let mtry = params.resolved_mtry(d);
    if params.n_trees == 0 {
        return Err(Error::Config("a forest needs at least one tree".into()));
    }
    if mtry == 0 || mtry > d {
        return Err(Error::Config(format!("mtry={mtry} outside [1, {d}]")));
    }
    if params.min_leaf == 0 {
        return Err(Error::Config("min_leaf must be at least 1".into()));
    }
    let cart = CartParams {
        max_depth: usize::MAX,
        min_split: 2 * params.min_leaf,
        min_leaf: params.min_leaf,
    };
    let n = x.rows();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::rng_for(seed, k as u64);
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(x, y, rows, &cart, Some((&mut rng, mtry)))
        })
        .collect();
    Ok(ForestModel {
        trees,
        mtry,
        seed,
        n_features: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn small() -> ForestParams {
        ForestParams {
            n_trees: 50,
            ..ForestParams::default()
        }
    }

    #[test]
    fn constant_target() {
        let x = Matrix::from_vec(10, 2, (0..20).map(f64::from).collect()).unwrap();
        let f = fit_random_forest(&x, &[2.5; 10], &small(), 1).unwrap();
        assert!(f.predict(&x).unwrap().iter().all(|&p| p == 2.5));
    }

    #[test]
    fn same_seed_same_predictions() {
        let mut rng = rng::rng_for(5, 0);
        let data: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = Matrix::from_vec(100, 3, data).unwrap();
        let y: Vec<f64> = (0..100).map(|i| x.get(i, 0) * 2.0).collect();
        let a = fit_random_forest(&x, &y, &small(), 9).unwrap();
        let b = fit_random_forest(&x, &y, &small(), 9).unwrap();
        assert_eq!(a, b);
        let c = fit_random_forest(&x, &y, &small(), 10).unwrap();
        assert_ne!(a.predict(&x).unwrap(), c.predict(&x).unwrap());
    }

    #[test]
    fn default_mtry() {
        let p = ForestParams::default();
        assert_eq!(p.resolved_mtry(10), 3);
        assert_eq!(p.resolved_mtry(2), 1);
    }

    #[test]
    fn mean_of_trees() {
        let x = Matrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = [1.0, 2.0, 3.0, 4.0];
        let f = fit_random_forest(&x, &y, &small(), 2).unwrap();
        let row = [1.0];
        let manual: f64 =
            f.trees().iter().map(|t| t.predict_row(&row)).sum::<f64>() / f.n_trees() as f64;
        assert_eq!(f.predict_row(&row), manual);
    }
}
