//! Dense row-major matrices and a rank-revealing least-squares solver.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Validation(format!(
                "matrix buffer has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Validation(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A single-column matrix.
    pub fn column_vector(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Returns a copy with `values` appended as the last column.
    pub fn with_column(&self, values: &[f64]) -> Result<Matrix> {
        if values.len() != self.rows {
            return Err(Error::Validation(format!(
                "appended column has {} values, matrix has {} rows",
                values.len(),
                self.rows
            )));
        }
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for (r, v) in values.iter().enumerate() {
            data.extend_from_slice(self.row(r));
            data.push(*v);
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Ordinary least squares fit on an explicit list of regressor columns.
#[derive(Debug, Clone)]
pub struct OlsFit {
    /// One entry per requested column; `None` when the column was dropped as
    /// linearly dependent on earlier columns.
    pub coefficients: Vec<Option<f64>>,
    pub rss: f64,
    pub rank: usize,
    pub n: usize,
}

impl OlsFit {
    pub fn dropped(&self) -> usize {
        self.coefficients.iter().filter(|c| c.is_none()).count()
    }

    /// Gaussian log-likelihood at the MLE variance `rss / n`.
    pub fn log_likelihood(&self) -> f64 {
        let n = self.n as f64;
        let sigma2 = self.rss / n;
        -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0)
    }
}

const RANK_TOL: f64 = 1e-9;

/// Least squares via modified Gram-Schmidt with one reorthogonalisation pass.
///
/// Columns are processed in order; a column whose residual norm falls below
/// `RANK_TOL` times its original norm is dropped (its coefficient is `None`).
pub fn ols(columns: &[Vec<f64>], y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Empty("least squares with no observations".into()));
    }
    for c in columns {
        if c.len() != n {
            return Err(Error::Validation(format!(
                "regressor has {} rows, response has {n}",
                c.len()
            )));
        }
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    // r[k] holds the projection coefficients of kept column k onto basis 0..=k
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let norm0 = dot(col, col).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut v = col.clone();
        let mut coeffs = vec![0.0; basis.len()];
        for _pass in 0..2 {
            for (k, q) in basis.iter().enumerate() {
                let p = dot(q, &v);
                coeffs[k] += p;
                axpy(-p, q, &mut v);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm <= RANK_TOL * norm0 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        coeffs.push(norm);
        basis.push(v);
        r_cols.push(coeffs);
        kept.push(j);
    }
    let rank = basis.len();
    let mut resid = y.to_vec();
    let mut qty = vec![0.0; rank];
    for _pass in 0..2 {
        for (k, q) in basis.iter().enumerate() {
            let p = dot(q, &resid);
            qty[k] += p;
            axpy(-p, q, &mut resid);
        }
    }
    // back substitution on the upper-triangular R
    let mut beta = vec![0.0; rank];
    for i in (0..rank).rev() {
        let mut s = qty[i];
        for (j, b) in beta.iter().enumerate().skip(i + 1) {
            s -= r_cols[j][i] * b;
        }
        beta[i] = s / r_cols[i][i];
    }
    let mut coefficients = vec![None; columns.len()];
    for (slot, b) in kept.iter().zip(beta) {
        coefficients[*slot] = Some(b);
    }
    Ok(OlsFit {
        coefficients,
        rss: dot(&resid, &resid),
        rank,
        n,
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_exact_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 + 2.0 * v).collect();
        let fit = ols(&[vec![1.0; 10], x], &y).unwrap();
        assert!((fit.coefficients[0].unwrap() - 3.0).abs() < 1e-10);
        assert!((fit.coefficients[1].unwrap() - 2.0).abs() < 1e-10);
        assert!(fit.rss < 1e-18);
        assert_eq!(fit.rank, 2);
    }

    #[test]
    fn ols_drops_collinear_column() {
        let a = vec![1.0, 0.0, 1.0, 0.0, 1.0];
        let b = vec![0.0, 1.0, 0.0, 1.0, 0.0];
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let y = vec![1.0, 2.0, 1.5, 2.5, 0.5];
        let fit = ols(&[a, b, ab], &y).unwrap();
        assert_eq!(fit.rank, 2);
        assert!(fit.coefficients[2].is_none());
        assert_eq!(fit.dropped(), 1);
        assert!((fit.coefficients[0].unwrap() - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1].unwrap() - 2.25).abs() < 1e-12);
    }

    #[test]
    fn append_column() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let m2 = m.with_column(&[9.0, 8.0]).unwrap();
        assert_eq!(m2.row(1), &[3.0, 4.0, 8.0]);
    }
}
