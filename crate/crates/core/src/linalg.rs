//! Dense linear-algebra helpers shared by every module: numerical rank and
//! null spaces by SVD, column-stacking vectorization, spectral radius and
//! symmetric PSD utilities.
//!
//! Rank decisions use a relative threshold: a singular value `s_i` counts
//! toward the rank iff `s_i > tol * s_1`.

use nalgebra::{DMatrix, DVector, Dyn, SVD};
use num_complex::Complex64;

/// Default relative rank tolerance.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Thin SVD with both factors, computed by faer and checked by
/// reconstruction.
///
/// nalgebra's own SVD returns factors that do not reproduce the input on a
/// noticeable fraction of rank-deficient matrices, so it is not used here.
pub fn svd(m: &DMatrix<f64>) -> SVD<f64, Dyn, Dyn> {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return SVD {
            u: Some(DMatrix::zeros(r, 0)),
            v_t: Some(DMatrix::zeros(0, c)),
            singular_values: DVector::zeros(0),
        };
    }
    let fm = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let d = fm.thin_svd().expect("SVD did not converge");
    let (fu, fs, fv) = (d.U(), d.S().column_vector(), d.V());
    let out = SVD {
        u: Some(DMatrix::from_fn(r, k, |i, j| fu[(i, j)])),
        v_t: Some(DMatrix::from_fn(k, c, |i, j| fv[(j, i)])),
        singular_values: DVector::from_fn(k, |i, _| fs[i]),
    };
    let tol = 1e-12 * (1.0 + m.norm()) * (r.max(c) as f64);
    let err = (out.clone().recompose().expect("factors present") - m).norm();
    assert!(
        err <= tol,
        "SVD failed to reproduce a {r}x{c} matrix (error {err:e})"
    );
    out
}

/// Singular values in non-increasing order. Empty matrices have none.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = svd(m).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `tol * s_max`.
pub fn rank_from_singular_values(s: &[f64], tol: f64) -> usize {
    match s.first() {
        Some(&s1) if s1 > 0.0 => s.iter().filter(|&&x| x > tol * s1).count(),
        _ => 0,
    }
}

pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    rank_from_singular_values(&singular_values(m), tol)
}

/// Singular values of `X + iY`, read off the real embedding
/// `[[X, -Y], [Y, X]]` whose spectrum holds each of them twice.
pub fn singular_values_complex(m: &DMatrix<Complex64>) -> Vec<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Vec::new();
    }
    let mut real = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let z = m[(i, j)];
            real[(i, j)] = z.re;
            real[(i + r, j + c)] = z.re;
            real[(i, j + c)] = -z.im;
            real[(i + r, j)] = z.im;
        }
    }
    singular_values(&real).into_iter().step_by(2).collect()
}

pub fn rank_complex(m: &DMatrix<Complex64>, tol: f64) -> usize {
    rank_from_singular_values(&singular_values_complex(m), tol)
}

/// Full right-singular basis `V` (ncols x ncols) and singular values padded
/// with zeros to length ncols.
fn full_right_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return (DMatrix::zeros(0, 0), Vec::new());
    }
    if rows == 0 {
        return (DMatrix::identity(cols, cols), vec![0.0; cols]);
    }
    // Pad wide matrices with zero rows so the thin SVD returns a square V.
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = svd(&padded);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut v = DMatrix::zeros(cols, cols);
    let mut s = Vec::with_capacity(cols);
    for (j, &i) in order.iter().enumerate() {
        v.set_column(j, &v_t.row(i).transpose());
        s.push(svd.singular_values[i]);
    }
    (v, s)
}

/// Orthonormal basis of the numerical null space of `m`, one column per
/// null direction. Returns an `ncols x 0` matrix when `m` has full column
/// rank.
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let cols = m.ncols();
    let (v, s) = full_right_svd(m);
    let r = rank_from_singular_values(&s, tol);
    if r >= cols {
        return DMatrix::zeros(cols, 0);
    }
    v.columns(r, cols - r).into_owned()
}

/// Moore-Penrose pseudo-inverse with relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = svd(m);
    let s_max = svd.singular_values.max();
    let cutoff = tol * s_max;
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut out = DMatrix::zeros(cols, rows);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += v_t.row(i).transpose() * u.column(i).transpose() / s;
        }
    }
    out
}

/// Column-stacking vectorization.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    DMatrix::from_column_slice(rows, cols, v)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Relative asymmetry `||M - M^T||_F / max(1, ||M||_F)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm() / m.norm().max(1.0)
}

/// Eigenvalues of a square matrix, by faer.
///
/// nalgebra's Schur iteration has no iteration cap and fails to terminate
/// on some well-behaved inputs, so it is not used here.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
        .eigenvalues()
        .expect("eigenvalue iteration did not converge")
        .into_iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m).0[0]
}

/// Eigenvalues (non-decreasing) and orthonormal eigenvectors of the
/// symmetric part of `m`, by faer.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let s = symmetrize(m);
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| s[(i, j)]);
    let e = fm
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("symmetric eigen iteration did not converge");
    let (u, d) = (e.U(), e.S().column_vector());
    (
        DVector::from_fn(n, |i, _| d[i]),
        DMatrix::from_fn(n, n, |i, j| u[(i, j)]),
    )
}

/// `S` with `S S^T = M` for symmetric PSD `M`, from the eigen-decomposition
/// with negative eigenvalues clamped to zero.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    let (values, mut s) = sym_eigen(m);
    for (j, &lambda) in values.iter().enumerate() {
        s.column_mut(j).scale_mut(lambda.max(0.0).sqrt());
    }
    s
}

/// Real matrix embedded in the complex field.
pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// `[top; bottom]`.
pub fn vstack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(top.ncols(), bottom.ncols(), "vstack column mismatch");
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape())
        .copy_from(bottom);
    out
}

/// `[left, right]`.
pub fn hstack(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(left.nrows(), right.nrows(), "hstack row mismatch");
    let mut out = DMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape())
        .copy_from(right);
    out
}

/// Convert to a row-major `Vec<Vec<f64>>`.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Build from row-major rows. `cols` is used when `rows` is empty or rows
/// are empty; otherwise it must match every row length.
pub fn from_rows(rows: &[Vec<f64>], cols: Option<usize>) -> Option<DMatrix<f64>> {
    let ncols = match (rows.first(), cols) {
        (Some(r), _) => r.len(),
        (None, Some(c)) => c,
        (None, None) => 0,
    };
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    if let Some(c) = cols {
        if c != ncols {
            return None;
        }
    }
    Some(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
