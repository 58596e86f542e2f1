//! Least-squares regression trees.

use std::io::Write;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_split: usize,
    pub min_leaf: usize,
}

impl Default for CartParams {
    fn default() -> Self {
        CartParams {
            max_depth: 30,
            min_split: 2,
            min_leaf: 1,
        }
    }
}

impl CartParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        if self.min_split < 2 {
            return Err(Error::Config("min_split must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

/// A fitted tree stored as a node arena; node 0 is the root. Rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
    n_features: usize,
}

/// The best split found at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Reduction in sum of squared errors.
    pub gain: f64,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    #[inline]
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value, .. } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_cols(self.n_features, x)?;
        Ok((0..x.rows()).map(|r| self.predict_row(x.row(r))).collect())
    }

    /// Tab-separated node list: `id parent kind feature threshold value n_samples`.
    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut parent = vec![None; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let TreeNode::Split { left, right, .. } = n {
                parent[*left] = Some(i);
                parent[*right] = Some(i);
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let p = parent[i].map_or("-".to_string(), |p| p.to_string());
            match n {
                TreeNode::Split {
                    feature, threshold, ..
                } => writeln!(w, "{i}\t{p}\tsplit\t{feature}\t{threshold}\t-\t-")?,
                TreeNode::Leaf { value, n_samples } => {
                    writeln!(w, "{i}\t{p}\tleaf\t-\t-\t{value}\t{n_samples}")?
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn check_cols(expected: usize, x: &Matrix) -> Result<()> {
    if x.cols() != expected {
        return Err(Error::Shape {
            expected,
            actual: x.cols(),
        });
    }
    Ok(())
}

pub(crate) fn check_training(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.rows() == 0 || y.is_empty() {
        return Err(Error::Empty("cannot fit a tree on zero rows".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::Validation(format!(
            "{} covariate rows but {} targets",
            x.rows(),
            y.len()
        )));
    }
    if x.cols() == 0 {
        return Err(Error::Empty("cannot fit a tree with zero columns".into()));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite training value".into()));
    }
    Ok(())
}

pub fn fit_cart(x: &Matrix, y: &[f64], params: &CartParams) -> Result<RegressionTree> {
    check_training(x, y)?;
    params.validate()?;
    let rows: Vec<usize> = (0..x.rows()).collect();
    Ok(grow(x, y, rows, params, None))
}

/// Grow a tree on the (possibly repeated) `rows`. With `features` set, each
/// split considers a fresh random subset of `mtry` columns.
pub(crate) fn grow(
    x: &Matrix,
    y: &[f64],
    rows: Vec<usize>,
    params: &CartParams,
    mut features: Option<(&mut Rng, usize)>,
) -> RegressionTree {
    let d = x.cols();
    let mut nodes = Vec::new();
    // (node slot, rows, depth)
    let mut stack = vec![(0usize, rows, 0usize)];
    nodes.push(TreeNode::Leaf {
        value: 0.0,
        n_samples: 0,
    });
    let all: Vec<usize> = (0..d).collect();
    while let Some((slot, rows, depth)) = stack.pop() {
        let m = rows.len();
        let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / m as f64;
        let leaf = TreeNode::Leaf {
            value: mean,
            n_samples: m,
        };
        if depth >= params.max_depth || m < params.min_split || m < 2 * params.min_leaf {
            nodes[slot] = leaf;
            continue;
        }
        let candidates: Vec<usize> = match features.as_mut() {
            Some((rng, mtry)) if *mtry < d => {
                let mut f = index::sample(*rng, d, *mtry).into_vec();
                f.sort_unstable();
                f
            }
            _ => all.clone(),
        };
        match best_split(x, y, &rows, &candidates, params.min_leaf, mean) {
            Some(split) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| x.get(i, split.feature) <= split.threshold);
                let left = nodes.len();
                let right = left + 1;
                nodes.push(TreeNode::Leaf {
                    value: 0.0,
                    n_samples: 0,
                });
                nodes.push(TreeNode::Leaf {
                    value: 0.0,
                    n_samples: 0,
                });
                nodes[slot] = TreeNode::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                };
                // push right first so the left subtree is numbered first
                stack.push((right, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
            None => nodes[slot] = leaf,
        }
    }
    RegressionTree {
        nodes: renumber_preorder(nodes),
        n_features: d,
    }
}

fn renumber_preorder(nodes: Vec<TreeNode>) -> Vec<TreeNode> {
    let mut order = Vec::with_capacity(nodes.len());
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        order.push(i);
        if let TreeNode::Split { left, right, .. } = nodes[i] {
            stack.push(right);
            stack.push(left);
        }
    }
    let mut new_index = vec![0; nodes.len()];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    order
        .iter()
        .map(|&old| match nodes[old] {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => TreeNode::Split {
                feature,
                threshold,
                left: new_index[left],
                right: new_index[right],
            },
            ref leaf => leaf.clone(),
        })
        .collect()
}

/// Midpoint between two consecutive distinct sorted values that still
/// separates them under the `<=` routing rule.
#[inline]
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    if mid >= b {
        a
    } else {
        mid
    }
}

/// Exhaustive least-squares split search. Ties in gain keep the earlier
/// candidate: lowest feature index, then lowest threshold.
pub(crate) fn best_split(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
    mean: f64,
) -> Option<SplitChoice> {
    let m = rows.len();
    let ssq: f64 = rows.iter().map(|&r| (y[r] - mean).powi(2)).sum();
    if ssq <= 0.0 {
        return None;
    }
    let mut best: Option<SplitChoice> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
    for &f in features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (x.get(r, f), y[r] - mean)));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        if pairs[0].0 == pairs[m - 1].0 {
            continue;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let mut left_sum = 0.0;
        for i in 0..m - 1 {
            left_sum += pairs[i].1;
            let n_left = i + 1;
            let n_right = m - n_left;
            if n_left < min_leaf {
                continue;
            }
            if n_right < min_leaf {
                break;
            }
            if pairs[i].0 == pairs[i + 1].0 {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64
                - total * total / m as f64;
            if best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: midpoint(pairs[i].0, pairs[i + 1].0),
                    gain,
                });
            }
        }
    }
    best.filter(|b| b.gain > ssq * 1e-12)
}

/// Root split of a CART fit, for inspection and oracle comparison.
pub fn root_split(x: &Matrix, y: &[f64], min_leaf: usize) -> Option<SplitChoice> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let features: Vec<usize> = (0..x.cols()).collect();
    best_split(x, y, &rows, &features, min_leaf, mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng as _, SeedableRng};

    fn col(v: &[f64]) -> Matrix {
        Matrix::column_vector(v)
    }

    #[test]
    fn constant_target_single_leaf() {
        let x = col(&[1.0, 2.0, 3.0, 4.0]);
        let t = fit_cart(&x, &[5.0; 4], &CartParams::default()).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.predict(&col(&[-10.0, 100.0])).unwrap(), vec![5.0, 5.0]);
    }

    #[test]
    fn step_function_single_split() {
        let xs = [-4.0, -3.0, -2.0, -0.5, 0.5, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|&v| if v < 0.0 { 1.0 } else { 3.0 }).collect();
        let t = fit_cart(&col(&xs), &ys, &CartParams::default()).unwrap();
        assert_eq!(t.n_leaves(), 2);
        match t.nodes()[0] {
            TreeNode::Split {
                feature, threshold, ..
            } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 0.0);
            }
            _ => panic!("expected split"),
        }
        assert_eq!(t.predict(&col(&[-1.0, 1.0])).unwrap(), vec![1.0, 3.0]);
    }

    #[test]
    fn empty_input_errors() {
        let x = Matrix::zeros(0, 2);
        assert!(matches!(
            fit_cart(&x, &[], &CartParams::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn shape_mismatch() {
        let t = fit_cart(&col(&[1.0, 2.0]), &[1.0, 2.0], &CartParams::default()).unwrap();
        assert!(matches!(
            t.predict(&Matrix::zeros(1, 2)),
            Err(Error::Shape { expected: 1, actual: 2 })
        ));
    }

    #[test]
    fn respects_depth_and_leaf_size() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let data: Vec<f64> = (0..n * 3).map(|_| rng.random::<f64>()).collect();
        let x = Matrix::from_vec(n, 3, data).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let p = CartParams {
            max_depth: 4,
            min_split: 10,
            min_leaf: 5,
        };
        let t = fit_cart(&x, &y, &p).unwrap();
        assert!(t.depth() <= 4);
        for node in t.nodes() {
            if let TreeNode::Leaf { n_samples, .. } = node {
                assert!(*n_samples >= 5);
            }
        }
    }

    #[test]
    fn dump_lists_every_node() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let t = fit_cart(&col(&xs), &[0.0, 0.0, 1.0, 1.0], &CartParams::default()).unwrap();
        let mut out = Vec::new();
        t.dump(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), t.nodes().len());
        assert!(text.starts_with("0\t-\tsplit\t0\t1.5"));
    }
}
