//! Dense pointwise linear algebra: rank-revealing SVD helpers, principal
//! angles, a small pivoted solver generic over [`Scalar`], and
//! Gauss–Legendre nodes.

use crate::error::{Error, Result};
use crate::expr::Scalar;
use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Thin SVD of `m` padded with zero rows so that `V` is square.
fn padded_svd(m: &CMatrix) -> SVD<Complex64, nalgebra::Dyn, nalgebra::Dyn> {
    let (r, c) = m.shape();
    let a = if r < c {
        let mut p = CMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    SVD::new(a, true, true)
}

pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.is_empty() {
        return vec![];
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `tol` times the largest one (or above
/// `tol` itself when the matrix is small).
pub fn rank(m: &CMatrix, tol: f64) -> usize {
    let s = singular_values(m);
    let cut = tol * s.first().copied().unwrap_or(0.0).max(1.0);
    s.iter().filter(|&&v| v > cut).count()
}

pub fn rank_real(m: &DMatrix<f64>, tol: f64) -> usize {
    rank(&to_complex(m), tol)
}

/// Orthonormal basis of the null space, as columns.
pub fn nullspace(m: &CMatrix, tol: f64) -> CMatrix {
    let c = m.ncols();
    if m.nrows() == 0 {
        return CMatrix::identity(c, c);
    }
    let svd = padded_svd(m);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = tol * smax.max(1.0);
    let vt = svd.v_t.expect("v_t requested");
    let cols: Vec<_> = (0..vt.nrows())
        .filter(|&i| svd.singular_values[i] <= cut)
        .map(|i| vt.row(i).adjoint())
        .collect();
    if cols.is_empty() {
        return CMatrix::zeros(c, 0);
    }
    CMatrix::from_columns(&cols)
}

/// Orthonormal basis of the column space.
pub fn column_basis(m: &CMatrix, tol: f64) -> CMatrix {
    if m.ncols() == 0 {
        return CMatrix::zeros(m.nrows(), 0);
    }
    let svd = SVD::new(m.clone(), true, false);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = tol * smax.max(1.0);
    let u = svd.u.expect("u requested");
    let cols: Vec<_> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cut)
        .map(|i| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        return CMatrix::zeros(m.nrows(), 0);
    }
    CMatrix::from_columns(&cols)
}

/// Largest principal angle between the column spans of `a` and `b`.
///
/// Computed as `asin` of the spectral norm of `(I - P_b) Q_a`, which stays
/// accurate for tiny angles. Spans of different dimension are `pi/2` apart.
pub fn max_principal_angle(a: &CMatrix, b: &CMatrix, tol: f64) -> f64 {
    let qa = column_basis(a, tol);
    let qb = column_basis(b, tol);
    if qa.ncols() != qb.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if qa.ncols() == 0 {
        return 0.0;
    }
    let r = &qa - &qb * (qb.adjoint() * &qa);
    let s = singular_values(&r).first().copied().unwrap_or(0.0);
    s.min(1.0).asin()
}

/// Pseudo-inverse through the SVD, cutting singular values below
/// `tol` times the largest.
pub fn pinv(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = SVD::new(m.clone(), true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    svd.pseudo_inverse(tol * smax.max(1e-300))
        .expect("pseudo-inverse with u and v_t")
}

pub fn cpinv(m: &CMatrix, tol: f64) -> CMatrix {
    if m.is_empty() {
        return CMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = SVD::new(m.clone(), true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    svd.pseudo_inverse(tol * smax.max(1e-300))
        .expect("pseudo-inverse with u and v_t")
}

/// Spectral condition number (infinite for singular input).
pub fn condition(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(&to_complex(m));
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

pub fn spectral_norm(m: &CMatrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Solve `a * x = b` for square `a` (row-major `Vec<Vec<T>>`) by Gaussian
/// elimination with partial pivoting on the modulus of the base value.
pub fn solve<T: Scalar>(a: &[Vec<T>], b: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let n = a.len();
    if b.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension(format!("solve: {n}x? system")));
    }
    let m = b.first().map_or(0, |r| r.len());
    let mut a: Vec<Vec<T>> = a.to_vec();
    let mut b: Vec<Vec<T>> = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].base().norm().total_cmp(&a[j][col].base().norm()))
            .expect("nonempty range");
        if a[piv][col].base().norm() < 1e-300 {
            return Err(Error::Singular);
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let inv = a[col][col].recip();
        for r in col + 1..n {
            let f = a[r][col] * inv;
            if f.mag() == 0.0 {
                continue;
            }
            for c in col..n {
                let t = a[col][c];
                a[r][c] = a[r][c] - f * t;
            }
            for c in 0..m {
                let t = b[col][c];
                b[r][c] = b[r][c] - f * t;
            }
        }
    }
    let mut x = vec![vec![T::zero(); m]; n];
    for r in (0..n).rev() {
        for c in 0..m {
            let mut acc = b[r][c];
            for k in r + 1..n {
                acc = acc - a[r][k] * x[k][c];
            }
            x[r][c] = acc / a[r][r];
        }
    }
    Ok(x)
}

pub fn inverse<T: Scalar>(a: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let n = a.len();
    let id: Vec<Vec<T>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    solve(a, &id)
}

/// Minimum-norm right inverse `a^T (a a^T)^{-1}` of a full-row-rank real
/// matrix `a` (k x r), evaluated in generic arithmetic.
pub fn right_inverse<T: Scalar>(a: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let k = a.len();
    let r = a.first().map_or(0, |row| row.len());
    let gram: Vec<Vec<T>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| (0..r).fold(T::zero(), |acc, l| acc + a[i][l] * a[j][l]))
                .collect()
        })
        .collect();
    let g = inverse(&gram)?;
    Ok((0..r)
        .map(|l| {
            (0..k)
                .map(|j| (0..k).fold(T::zero(), |acc, i| acc + a[i][l] * g[i][j]))
                .collect()
        })
        .collect())
}

/// Rows of `a` forming a basis of its row space, chosen greedily by
/// Gram–Schmidt on the base values.
pub fn independent_rows<T: Scalar>(a: &[Vec<T>], tol: f64) -> Vec<usize> {
    let rows: Vec<DVector<f64>> = a
        .iter()
        .map(|r| DVector::from_iterator(r.len(), r.iter().map(|v| v.re())))
        .collect();
    let scale = rows.iter().map(|r| r.norm()).fold(0.0f64, f64::max).max(1e-300);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut chosen = Vec::new();
    // Largest residual first keeps the choice well conditioned.
    loop {
        let mut best: Option<(usize, f64, DVector<f64>)> = None;
        for (i, r) in rows.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let mut v = r.clone();
            for q in &basis {
                v -= q * q.dot(&v);
            }
            let nv = v.norm();
            if best.as_ref().is_none_or(|b| nv > b.1) {
                best = Some((i, nv, v));
            }
        }
        match best {
            Some((i, nv, v)) if nv > tol * scale => {
                basis.push(v / nv);
                chosen.push(i);
            }
            _ => break,
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Minimum-norm solution of a consistent system `a x = b` of any rank, in
/// generic arithmetic. The rank is decided on base values, so derivatives
/// are correct wherever the rank is locally constant. Returns the solution
/// and the residual `max |a x - b|` on base values.
pub fn min_norm_solve<T: Scalar>(a: &[Vec<T>], b: &[Vec<T>], tol: f64) -> Result<(Vec<Vec<T>>, f64)> {
    let r = a.first().map_or(0, |row| row.len());
    let m = b.first().map_or(0, |row| row.len());
    if a.len() != b.len() {
        return Err(Error::Dimension("min_norm_solve: row count mismatch".into()));
    }
    let rows = independent_rows(a, tol);
    let x = if rows.is_empty() {
        vec![vec![T::zero(); m]; r]
    } else {
        let ar: Vec<Vec<T>> = rows.iter().map(|&i| a[i].clone()).collect();
        let ri = right_inverse(&ar)?;
        (0..r)
            .map(|l| {
                (0..m)
                    .map(|c| {
                        rows.iter()
                            .enumerate()
                            .fold(T::zero(), |acc, (q, &i)| acc + ri[l][q] * b[i][c])
                    })
                    .collect()
            })
            .collect()
    };
    let mut res = 0.0f64;
    for (i, row) in a.iter().enumerate() {
        for c in 0..m {
            let v = (0..r).fold(T::zero(), |acc, l| acc + row[l] * x[l][c]) - b[i][c];
            res = res.max(v.base().norm());
        }
    }
    Ok((x, res))
}

/// Gauss–Legendre nodes and weights on `[a, b]`, from the eigen-decomposition
/// of the Jacobi matrix.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut jm = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let beta = kf / (4.0 * kf * kf - 1.0).sqrt();
        jm[(k, k - 1)] = beta;
        jm[(k - 1, k)] = beta;
    }
    let eig = SymmetricEigen::new(jm);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], 2.0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    pairs
        .into_iter()
        .map(|(x, w)| (mid + half * x, half * w))
        .unzip()
}

/// Gauss–Legendre with node doubling.
///
/// Starts at `nodes` and doubles until two successive rules differ by less
/// than `tol * max(1, |Q|)` (largest coefficient modulus), failing with
/// [`Error::Quadrature`] once `max_nodes` is exceeded. Returns the finer
/// value, its node count and the last change.
pub fn quadrature<T: Scalar>(
    f: impl Fn(f64) -> Result<Vec<T>> + Sync,
    a: f64,
    b: f64,
    nodes: usize,
    tol: f64,
    max_nodes: usize,
) -> Result<(Vec<T>, usize, f64)>
where
    T: Send,
{
    use rayon::prelude::*;
    let rule = |n: usize| -> Result<Vec<T>> {
        let (x, w) = gauss_legendre(n, a, b);
        let vals: Vec<Vec<T>> = x.par_iter().map(|&t| f(t)).collect::<Result<_>>()?;
        let len = vals.first().map_or(0, |v| v.len());
        let mut acc = vec![T::zero(); len];
        for (v, wi) in vals.iter().zip(&w) {
            for (a, c) in acc.iter_mut().zip(v) {
                *a = *a + c.scale(*wi);
            }
        }
        Ok(acc)
    };
    let mut n = nodes.max(1);
    let mut prev = rule(n)?;
    loop {
        let next_n = 2 * n;
        if next_n > max_nodes.max(nodes) {
            let change = f64::INFINITY;
            return Err(Error::Quadrature { change, nodes: n });
        }
        let next = rule(next_n)?;
        let size = next.iter().fold(1.0f64, |m, v| m.max(v.mag()));
        let change = next
            .iter()
            .zip(&prev)
            .fold(0.0f64, |m, (p, q)| m.max((*p - *q).mag()));
        if change <= tol * size {
            return Ok((next, next_n, change));
        }
        if 4 * n > max_nodes.max(nodes) {
            return Err(Error::Quadrature {
                change,
                nodes: next_n,
            });
        }
        prev = next;
        n = next_n;
    }
}
