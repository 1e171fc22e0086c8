//! Autocovariance least-squares regression.
//!
//! Vectorizing the stacked autocovariance gives
//! `vec(R(N)) = (L~ (x) Theta) vec(P) + (L (x) Upsilon) vec(R)` and, after
//! eliminating `vec(P)` through the Lyapunov equation,
//! `vec(R(N)) = H1 vec(Q) + H2 vec(R) = H [vec(Q); vec(R)]`, where
//!
//! ```text
//! Theta   = [L~; L~ A_c; ...; L~ A_c^(N-1)]
//! Upsilon = [L; -Theta1 K],  Theta1 = [L~; L~ A_c; ...; L~ A_c^(N-2)]
//! H1 = (L~ (x) Theta) (I - A_c (x) A_c)^-1 (G (x) G)
//! H2 = (L~ (x) Theta) (I - A_c (x) A_c)^-1 (K (x) K) + (L (x) Upsilon)
//! ```
//!
//! `H` never has full column rank when the plant has a full-column-rank
//! feedthrough, so the plain least-squares solve refuses and reports the
//! dimension of the solution set. Minimum-norm and Tikhonov solves are
//! available instead.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, AutocovStack, ErrorDynamics};
use crate::error::{Error, Result};
use crate::io::MatrixJson;
use crate::linalg::{self, DEFAULT_RANK_TOL};
use crate::system::NoiseSpec;

/// Samples discarded from the start of an innovation record before
/// averaging: `max(10 n, 100)`.
pub fn default_burn_in(n: usize) -> usize {
    (10 * n).max(100)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsMatrices {
    pub window: usize,
    pub theta: DMatrix<f64>,
    pub theta1: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub h1: DMatrix<f64>,
    pub h2: DMatrix<f64>,
    pub warnings: Vec<String>,
}

pub fn build_als_matrices(ed: &ErrorDynamics, window: usize) -> Result<AlsMatrices> {
    if window == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let n = ed.n();
    let mut warnings = Vec::new();
    if window <= n {
        warnings.push(format!(
            "window N={window} <= n={n}: rank analysis assumptions void (needs N >= n + 1)"
        ));
    }
    let lt = &ed.l_tilde;
    let mut theta1 = DMatrix::zeros((window - 1) * n, n);
    let mut block = lt.clone();
    for j in 0..window - 1 {
        theta1.view_mut((j * n, 0), (n, n)).copy_from(&block);
        block = &block * &ed.ac;
    }
    let theta = linalg::vstack(lt, &(&theta1 * &ed.ac));
    let upsilon = linalg::vstack(&ed.l, &(-(&theta1 * &ed.k)));

    let lu = dynamics::lyapunov_operator(&ed.ac).lu();
    let solve = |rhs: DMatrix<f64>| {
        lu.solve(&rhs)
            .ok_or_else(|| Error::Factorization("I - A_c (x) A_c is singular".into()))
    };
    let lt_theta = lt.kronecker(&theta);
    let h1 = &lt_theta * solve(ed.g.kronecker(&ed.g))?;
    let h2 = &lt_theta * solve(ed.k.kronecker(&ed.k))? + ed.l.kronecker(&upsilon);
    let h = linalg::hstack(&h1, &h2);
    Ok(AlsMatrices {
        window,
        theta,
        theta1,
        upsilon,
        h,
        h1,
        h2,
        warnings,
    })
}

/// Time-averaged autocovariance of an innovation record:
/// block `j` is `sum_i Y(i + j) Y(i)^T / (N_d - N + 1)` over the first
/// `N_d - N + 1` samples.
pub fn empirical_autocov(innovations: &[DVector<f64>], window: usize) -> Result<AutocovStack> {
    let nd = innovations.len();
    if window == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if nd < window {
        return Err(Error::InsufficientData {
            needed: window,
            got: nd,
        });
    }
    let n = innovations[0].len();
    if let Some(bad) = innovations.iter().position(|y| y.len() != n) {
        return Err(Error::Dimension {
            matrix: format!("innovation[{bad}]"),
            expected: format!("{n}"),
            found: format!("{}", innovations[bad].len()),
        });
    }
    let count = nd - window + 1;
    let mut acc = vec![0.0; window * n * n];
    for i in 0..count {
        let base = innovations[i].as_slice();
        for j in 0..window {
            let lagged = innovations[i + j].as_slice();
            let blk = &mut acc[j * n * n..(j + 1) * n * n];
            // column-major n x n block: entry (r, c) at c * n + r
            for (c, &bc) in base.iter().enumerate() {
                for (r, &lr) in lagged.iter().enumerate() {
                    blk[c * n + r] += lr * bc;
                }
            }
        }
    }
    let scale = 1.0 / count as f64;
    Ok(AutocovStack {
        blocks: (0..window)
            .map(|j| DMatrix::from_column_slice(n, n, &acc[j * n * n..(j + 1) * n * n]) * scale)
            .collect(),
    })
}

/// `b`: column-stacked vectorization of the empirical stacked autocovariance.
pub fn empirical_b(innovations: &[DVector<f64>], window: usize) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(
        empirical_autocov(innovations, window)?.vectorized(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsProblem {
    pub matrices: AlsMatrices,
    pub b: DVector<f64>,
    /// `None` means identity weighting.
    pub weight: Option<DMatrix<f64>>,
    pub provenance: Provenance,
    pub n: usize,
    pub g: usize,
    pub p: usize,
}

impl AlsProblem {
    /// `b` from the exact autocovariance under `noise`.
    pub fn analytic(ed: &ErrorDynamics, noise: &NoiseSpec, window: usize) -> Result<Self> {
        let matrices = build_als_matrices(ed, window)?;
        let stack = dynamics::analytic_autocov(ed, noise, window)?;
        Ok(Self::with_b(
            ed,
            matrices,
            DVector::from_vec(stack.vectorized()),
            Provenance::Analytic,
        ))
    }

    /// `b` from an innovation record after dropping `burn_in` samples.
    pub fn empirical(
        ed: &ErrorDynamics,
        innovations: &[DVector<f64>],
        window: usize,
        burn_in: usize,
    ) -> Result<Self> {
        let matrices = build_als_matrices(ed, window)?;
        let data = innovations.get(burn_in..).unwrap_or(&[]);
        if data.len() < window {
            return Err(Error::InsufficientData {
                needed: burn_in + window,
                got: innovations.len(),
            });
        }
        let b = empirical_b(data, window)?;
        Ok(Self::with_b(ed, matrices, b, Provenance::Empirical))
    }

    pub fn with_b(
        ed: &ErrorDynamics,
        matrices: AlsMatrices,
        b: DVector<f64>,
        provenance: Provenance,
    ) -> Self {
        Self {
            matrices,
            b,
            weight: None,
            provenance,
            n: ed.n(),
            g: ed.g_dim(),
            p: ed.p(),
        }
    }

    pub fn with_weight(mut self, w: DMatrix<f64>) -> Result<Self> {
        let m = self.b.len();
        if w.shape() != (m, m) {
            return Err(Error::dim("W", (m, m), w.shape()));
        }
        self.weight = Some(w);
        Ok(self)
    }

    pub fn to_bundle(&self) -> AlsBundle {
        AlsBundle {
            window: self.matrices.window,
            n: self.n,
            g: self.g,
            p: self.p,
            provenance: self.provenance,
            h: MatrixJson::from(&self.matrices.h),
            h1: MatrixJson::from(&self.matrices.h1),
            h2: MatrixJson::from(&self.matrices.h2),
            b: self.b.iter().copied().collect(),
            weight: self.weight.as_ref().map(MatrixJson::from),
        }
    }
}

/// JSON bundle of an ALS problem for external solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlsBundle {
    pub window: usize,
    pub n: usize,
    pub g: usize,
    pub p: usize,
    pub provenance: Provenance,
    pub h: MatrixJson,
    pub h1: MatrixJson,
    pub h2: MatrixJson,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<MatrixJson>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "lambda")]
pub enum Regularization {
    /// Plain least squares; fails unless the regressor has full column rank.
    None,
    MinNorm,
    Tikhonov(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub regularization: Regularization,
    pub project_psd: bool,
    pub rank_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            regularization: Regularization::None,
            project_psd: false,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

impl SolveOptions {
    pub fn with(regularization: Regularization) -> Self {
        Self {
            regularization,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlsSolution {
    pub q_hat: MatrixJson,
    pub r_hat: MatrixJson,
    /// `||H x - b||_2` of the unprojected solution.
    pub residual_norm: f64,
    pub min_norm: bool,
    pub regularization: Regularization,
    pub psd_projected: bool,
    /// Column count minus numerical rank of the regressor that was solved.
    pub nullity: usize,
}

impl AlsSolution {
    pub fn q(&self) -> DMatrix<f64> {
        self.q_hat.to_matrix()
    }
    pub fn r(&self) -> DMatrix<f64> {
        self.r_hat.to_matrix()
    }
}

struct LsResult {
    x: DVector<f64>,
    residual: f64,
    nullity: usize,
}

/// Orthonormal basis of vectorized symmetric `dim x dim` matrices, as the
/// columns of a `dim^2 x dim(dim+1)/2` matrix.
pub fn symmetric_basis(dim: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim * dim, dim * (dim + 1) / 2);
    let mut col = 0;
    for j in 0..dim {
        for i in j..dim {
            if i == j {
                out[(i + j * dim, col)] = 1.0;
            } else {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                out[(i + j * dim, col)] = s;
                out[(j + i * dim, col)] = s;
            }
            col += 1;
        }
    }
    out
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

/// Minimize `||H x - b||^2_W` (+ `lambda ||x||^2`) over `x = S z`, where the
/// columns of `S` are an orthonormal basis of symmetric covariances. The
/// reported nullity is that of `H` itself.
fn weighted_least_squares(
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    weight: Option<&DMatrix<f64>>,
    reg: Regularization,
    tol: f64,
    basis: &DMatrix<f64>,
) -> Result<LsResult> {
    let cols = h.ncols();
    let (hw, bw) = match weight {
        None => (h.clone(), b.clone()),
        Some(w) => {
            let chol = linalg::symmetrize(w).cholesky().ok_or_else(|| {
                Error::Factorization("weighting matrix is not positive definite".into())
            })?;
            let lt = chol.l().transpose();
            (&lt * h, &lt * b)
        }
    };
    let nullity = cols - linalg::rank(&hw, tol);
    let hw = hw * basis;
    let s = linalg::singular_values(&hw);
    if let Regularization::Tikhonov(lambda) = reg {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Infeasible(format!(
                "Tikhonov parameter must be positive, got {lambda}"
            )));
        }
    }
    if reg == Regularization::None && nullity > 0 {
        return Err(Error::NonIdentifiable { dimension: nullity });
    }
    let mut z = DVector::zeros(basis.ncols());
    if hw.nrows() > 0 && hw.ncols() > 0 {
        let svd = linalg::svd(&hw);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let s_max = s.first().copied().unwrap_or(0.0);
        for (i, &sigma) in svd.singular_values.iter().enumerate() {
            let coef = u.column(i).dot(&bw);
            let factor = match reg {
                Regularization::Tikhonov(lambda) => sigma / (sigma * sigma + lambda),
                _ if sigma > tol * s_max && sigma > 0.0 => 1.0 / sigma,
                _ => 0.0,
            };
            z += v_t.row(i).transpose() * (coef * factor);
        }
    }
    let x = basis * z;
    let residual = (h * &x - b).norm();
    Ok(LsResult {
        x,
        residual,
        nullity,
    })
}

fn reshape_cov(x: &[f64], dim: usize, project: bool) -> DMatrix<f64> {
    let m = linalg::symmetrize(&linalg::unvec(x, dim, dim));
    if project {
        project_psd(&m)
    } else {
        m
    }
}

fn check_cov_shape(name: &str, m: &DMatrix<f64>, dim: usize) -> Result<()> {
    if m.shape() != (dim, dim) {
        return Err(Error::dim(name, (dim, dim), m.shape()));
    }
    Ok(())
}

/// Joint estimate of `(Q, R)`.
pub fn solve_joint(prob: &AlsProblem, opts: &SolveOptions) -> Result<AlsSolution> {
    let ls = weighted_least_squares(
        &prob.matrices.h,
        &prob.b,
        prob.weight.as_ref(),
        opts.regularization,
        opts.rank_tol,
        &block_diag(&symmetric_basis(prob.g), &symmetric_basis(prob.p)),
    )?;
    let gg = prob.g * prob.g;
    Ok(AlsSolution {
        q_hat: MatrixJson::from(&reshape_cov(
            &ls.x.as_slice()[..gg],
            prob.g,
            opts.project_psd,
        )),
        r_hat: MatrixJson::from(&reshape_cov(
            &ls.x.as_slice()[gg..],
            prob.p,
            opts.project_psd,
        )),
        residual_norm: ls.residual,
        min_norm: opts.regularization == Regularization::MinNorm,
        regularization: opts.regularization,
        psd_projected: opts.project_psd,
        nullity: ls.nullity,
    })
}

/// Estimate `Q` with `R` known: regress `b - H2 vec(R)` on `H1`.
pub fn solve_q_given_r(
    prob: &AlsProblem,
    r_known: &DMatrix<f64>,
    opts: &SolveOptions,
) -> Result<AlsSolution> {
    check_cov_shape("R", r_known, prob.p)?;
    let b_q = &prob.b - &prob.matrices.h2 * linalg::vec(r_known);
    let ls = weighted_least_squares(
        &prob.matrices.h1,
        &b_q,
        prob.weight.as_ref(),
        opts.regularization,
        opts.rank_tol,
        &symmetric_basis(prob.g),
    )?;
    Ok(AlsSolution {
        q_hat: MatrixJson::from(&reshape_cov(ls.x.as_slice(), prob.g, opts.project_psd)),
        r_hat: MatrixJson::from(r_known),
        residual_norm: ls.residual,
        min_norm: opts.regularization == Regularization::MinNorm,
        regularization: opts.regularization,
        psd_projected: opts.project_psd,
        nullity: ls.nullity,
    })
}

/// Estimate `R` with `Q` known: regress `b - H1 vec(Q)` on `H2`.
pub fn solve_r_given_q(
    prob: &AlsProblem,
    q_known: &DMatrix<f64>,
    opts: &SolveOptions,
) -> Result<AlsSolution> {
    check_cov_shape("Q", q_known, prob.g)?;
    let b_r = &prob.b - &prob.matrices.h1 * linalg::vec(q_known);
    let ls = weighted_least_squares(
        &prob.matrices.h2,
        &b_r,
        prob.weight.as_ref(),
        opts.regularization,
        opts.rank_tol,
        &symmetric_basis(prob.p),
    )?;
    Ok(AlsSolution {
        q_hat: MatrixJson::from(q_known),
        r_hat: MatrixJson::from(&reshape_cov(ls.x.as_slice(), prob.p, opts.project_psd)),
        residual_norm: ls.residual,
        min_norm: opts.regularization == Regularization::MinNorm,
        regularization: opts.regularization,
        psd_projected: opts.project_psd,
        nullity: ls.nullity,
    })
}

/// Nearest symmetric PSD matrix in Frobenius norm (eigenvalue clamping).
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let (values, v) = linalg::sym_eigen(m);
    let clamped = values.map(|l| l.max(0.0));
    linalg::symmetrize(&(&v * DMatrix::from_diagonal(&clamped) * v.transpose()))
}
