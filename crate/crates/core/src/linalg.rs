//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used when solving least-squares problems.
const RANK_TOL: f64 = 1e-10;

/// Least-squares solution of `x b = y` together with the numerical rank of `x`.
///
/// Tall systems go through a Householder QR first and the small triangular
/// factor is solved by SVD, so collinear columns get the minimum-norm answer
/// instead of blowing up.
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows, response has {}",
            y.len()
        )));
    }
    if p == 0 {
        return Ok((DVector::zeros(0), 0));
    }
    if n == 0 {
        return Err(Error::Empty("least squares with no rows".into()));
    }
    let (r, qty) = if n > p {
        let qr = x.clone().qr();
        let mut qty = y.clone();
        qr.q_tr_mul(&mut qty);
        let r = qr.r();
        (r, qty.rows(0, p).into_owned())
    } else {
        (x.clone(), y.clone())
    };
    let svd = r.svd(true, true);
    let smax = svd.singular_values.max();
    if !smax.is_finite() {
        return Err(Error::Numerical("non-finite design matrix".into()));
    }
    let tol = smax * RANK_TOL;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let b = svd
        .solve(&qty, tol)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok((b, rank))
}

/// Column-major design from a list of equally long columns.
pub fn design(columns: &[Vec<f64>]) -> DMatrix<f64> {
    let n = columns.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i])
}

/// Inverse of a symmetric positive-definite matrix, `None` if Cholesky fails.
pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = symmetrize(a);
    sym.cholesky().map(|c| c.inverse())
}

/// Moore-Penrose pseudo-inverse with a relative cutoff.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.pseudo_inverse(smax * RANK_TOL)
        .unwrap_or_else(|_| DMatrix::zeros(a.ncols(), a.nrows()))
}

/// Numerical rank with the same cutoff as [`lstsq`].
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    sv.iter().filter(|&&s| s > smax * RANK_TOL).count()
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Smallest and largest eigenvalue of the symmetric part of `a`.
pub fn eig_range(a: &DMatrix<f64>) -> (f64, f64) {
    if a.is_empty() {
        return (0.0, 0.0);
    }
    let ev = symmetrize(a).symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// Sample covariance with denominator `n` (plug-in), as used by the
/// closed-form scale ratios.
pub fn plugin_cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n
}

pub fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

/// Sample variance with denominator `n - 1` (0 for fewer than two values).
pub fn sample_var(a: &[f64]) -> f64 {
    if a.len() < 2 {
        return 0.0;
    }
    let m = mean(a);
    a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (a.len() - 1) as f64
}

pub fn corr(a: &[f64], b: &[f64]) -> f64 {
    plugin_cov(a, b) / (plugin_cov(a, a) * plugin_cov(b, b)).sqrt()
}

/// OLS with firm-clustered covariance.
#[derive(Debug, Clone)]
pub struct ClusteredOls {
    pub coef: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub resid: DVector<f64>,
    pub rank: usize,
}

impl ClusteredOls {
    pub fn se(&self, i: usize) -> f64 {
        self.vcov[(i, i)].max(0.0).sqrt()
    }
}

/// OLS of `y` on `x` with cluster-robust covariance
/// `(X'X)^-1 (sum_g X_g' u_g u_g' X_g) (X'X)^-1 * G/(G-1)`.
///
/// `clusters` lists contiguous row ranges, one per cluster.
pub fn ols_clustered(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    clusters: &[std::ops::Range<usize>],
) -> Result<ClusteredOls> {
    let (coef, rank) = lstsq(x, y)?;
    let resid = y - x * &coef;
    let p = x.ncols();
    let xtx = x.transpose() * x;
    let bread = spd_inverse(&xtx).unwrap_or_else(|| pinv(&xtx));
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for r in clusters {
        let mut s = DVector::<f64>::zeros(p);
        for i in r.clone() {
            for j in 0..p {
                s[j] += x[(i, j)] * resid[i];
            }
        }
        meat += &s * s.transpose();
    }
    let g = clusters.len() as f64;
    let adj = if g > 1.0 { g / (g - 1.0) } else { 1.0 };
    let vcov = symmetrize(&(&bread * meat * &bread)) * adj;
    Ok(ClusteredOls {
        coef,
        vcov,
        resid,
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lstsq_recovers_exact_fit() {
        let x = design(&[vec![1.0; 4], vec![0.0, 1.0, 2.0, 3.0]]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let (b, r) = lstsq(&x, &y).unwrap();
        assert_eq!(r, 2);
        assert_relative_eq!(b[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(b[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn lstsq_handles_zero_column() {
        let x = design(&[vec![1.0, 2.0, 3.0], vec![0.0; 3]]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let (b, r) = lstsq(&x, &y).unwrap();
        assert_eq!(r, 1);
        assert_relative_eq!(b[0], 2.0, epsilon = 1e-12);
        assert_eq!(b[1], 0.0);
    }

    #[test]
    fn plugin_cov_uses_n_denominator() {
        assert_relative_eq!(plugin_cov(&[1.0, 3.0], &[1.0, 3.0]), 1.0);
        assert_relative_eq!(sample_var(&[1.0, 3.0]), 2.0);
    }
}
