//! Polynomial bases built from monomials of a set of columns.

use crate::error::{Error, Result};

/// Exponent vectors of every monomial in `nvars` variables with total degree
/// between 1 and `max_degree`, graded by degree and, within a degree, with
/// higher powers of earlier variables first: for two variables and degree 2
/// this is `x1, x2, x1^2, x1 x2, x2^2`.
pub fn monomial_exponents(nvars: usize, max_degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for deg in 1..=max_degree {
        let mut cur = vec![0u32; nvars];
        push_degree(&mut out, &mut cur, 0, deg as u32);
    }
    out
}

fn push_degree(out: &mut Vec<Vec<u32>>, cur: &mut [u32], pos: usize, left: u32) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(cur.to_vec());
        cur[pos] = 0;
        return;
    }
    if cur.is_empty() {
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        push_degree(out, cur, pos + 1, left - e);
    }
    cur[pos] = 0;
}

/// Number of non-constant monomials: `C(nvars + degree, degree) - 1`.
pub fn basis_dim(nvars: usize, degree: usize) -> usize {
    let mut c: u128 = 1;
    for i in 1..=degree as u128 {
        c = c * (nvars as u128 + i) / i;
    }
    (c - 1) as usize
}

/// Evaluates the monomials of `columns` up to total degree `degree`.
pub fn polynomial_columns(columns: &[&[f64]], degree: usize) -> Vec<Vec<f64>> {
    if columns.is_empty() {
        return Vec::new();
    }
    let n = columns[0].len();
    monomial_exponents(columns.len(), degree)
        .iter()
        .map(|exps| {
            (0..n)
                .map(|i| {
                    exps.iter()
                        .zip(columns)
                        .fold(1.0, |acc, (&p, c)| acc * c[i].powi(p as i32))
                })
                .collect()
        })
        .collect()
}

/// Nuisance basis for the control columns: all monomials up to `degree`
/// excluding the constant.
pub fn nuisance_basis(z: &[Vec<f64>], degree: usize) -> Result<Vec<Vec<f64>>> {
    if degree < 1 {
        return Err(Error::InvalidArgument(
            "nuisance basis degree must be at least 1".into(),
        ));
    }
    let cols: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
    Ok(polynomial_columns(&cols, degree))
}
