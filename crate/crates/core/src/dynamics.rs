//! Error model driving the transformed innovation:
//!
//! ```text
//! e(k+1) = A_c e(k) + G w(k) - K v(k)
//! Y(k)   = L C e(k) + L v(k)
//! ```
//!
//! with `A_c = A - K C` and `e(k)` the one-step prediction error. The
//! steady-state covariance solves `P = A_c P A_c^T + G Q G^T + K R K^T`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::filter::FilterGains;
use crate::linalg;
use crate::system::{LtiSystem, NoiseSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDynamics {
    /// `A - K C`
    pub ac: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// `[G, -K]`
    pub g_tilde: DMatrix<f64>,
    /// `L C`
    pub l_tilde: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

impl ErrorDynamics {
    pub fn n(&self) -> usize {
        self.ac.nrows()
    }
    pub fn p(&self) -> usize {
        self.l.ncols()
    }
    pub fn g_dim(&self) -> usize {
        self.g.ncols()
    }
    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.ac)
    }
}

pub fn build_error_dynamics(sys: &LtiSystem, gains: &FilterGains) -> Result<ErrorDynamics> {
    let k = gains.k().clone();
    let ac = gains.closed_loop(sys);
    let radius = linalg::spectral_radius(&ac);
    if radius >= 1.0 || !radius.is_finite() {
        return Err(Error::Unstable { radius });
    }
    let g = sys.g().clone();
    let g_tilde = linalg::hstack(&g, &(-&k));
    let l = gains.l().clone();
    let l_tilde = &l * sys.c();
    Ok(ErrorDynamics {
        ac,
        k,
        g,
        g_tilde,
        l_tilde,
        l,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateCov {
    pub p: DMatrix<f64>,
}

impl SteadyStateCov {
    /// `||P - (A_c P A_c^T + G Q G^T + K R K^T)||_F`.
    pub fn residual(&self, ed: &ErrorDynamics, noise: &NoiseSpec) -> f64 {
        let rhs = &ed.ac * &self.p * ed.ac.transpose() + forcing(ed, noise);
        (&self.p - rhs).norm()
    }
}

fn forcing(ed: &ErrorDynamics, noise: &NoiseSpec) -> DMatrix<f64> {
    &ed.g * noise.q() * ed.g.transpose() + &ed.k * noise.r() * ed.k.transpose()
}

/// `I - A_c (x) A_c`.
pub fn lyapunov_operator(ac: &DMatrix<f64>) -> DMatrix<f64> {
    let n = ac.nrows();
    DMatrix::identity(n * n, n * n) - ac.kronecker(ac)
}

/// Solve the discrete Lyapunov equation through its vectorized form
/// `(I - A_c (x) A_c) vec(P) = (G (x) G) vec(Q) + (K (x) K) vec(R)`.
pub fn steady_state_covariance(ed: &ErrorDynamics, noise: &NoiseSpec) -> Result<SteadyStateCov> {
    let n = ed.n();
    if noise.q().shape() != (ed.g_dim(), ed.g_dim()) {
        return Err(Error::dim("Q", (ed.g_dim(), ed.g_dim()), noise.q().shape()));
    }
    if noise.r().shape() != (ed.p(), ed.p()) {
        return Err(Error::dim("R", (ed.p(), ed.p()), noise.r().shape()));
    }
    let rhs = linalg::vec(&forcing(ed, noise));
    let ps = lyapunov_operator(&ed.ac)
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Factorization("I - A_c (x) A_c is singular".into()))?;
    let p = linalg::symmetrize(&linalg::unvec(ps.as_slice(), n, n));
    let cov = SteadyStateCov { p };
    let res = cov.residual(ed, noise);
    if !(res <= 1e-8 * (1.0 + cov.p.norm())) {
        return Err(Error::Factorization(format!(
            "Lyapunov solve inconsistent (residual {res:.3e})"
        )));
    }
    Ok(cov)
}

/// First block column of the innovation autocovariance: blocks
/// `E[Y(k+j) Y(k)^T]` for `j = 0..window`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocovStack {
    pub blocks: Vec<DMatrix<f64>>,
}

impl AutocovStack {
    pub fn window(&self) -> usize {
        self.blocks.len()
    }

    /// The `(window * n) x n` stacked matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.blocks.first().map_or(0, |b| b.nrows());
        let mut out = DMatrix::zeros(n * self.blocks.len(), n);
        for (j, b) in self.blocks.iter().enumerate() {
            out.view_mut((j * n, 0), (n, n)).copy_from(b);
        }
        out
    }

    pub fn from_stacked(m: &DMatrix<f64>) -> Self {
        let n = m.ncols();
        let window = m.nrows().checked_div(n).unwrap_or(0);
        Self {
            blocks: (0..window)
                .map(|j| m.view((j * n, 0), (n, n)).into_owned())
                .collect(),
        }
    }

    /// Column-stacked vectorization of [`AutocovStack::stacked`].
    pub fn vectorized(&self) -> Vec<f64> {
        self.stacked().as_slice().to_vec()
    }
}

/// Blocks `L~ P L~^T + L R L^T` at lag 0 and
/// `L~ A_c^j P L~^T - L~ A_c^(j-1) K R L^T` at lag `j >= 1`.
pub fn analytic_autocov(
    ed: &ErrorDynamics,
    noise: &NoiseSpec,
    window: usize,
) -> Result<AutocovStack> {
    if window == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let cov = steady_state_covariance(ed, noise)?;
    Ok(autocov_from_p(ed, &cov.p, noise.r(), window))
}

/// Same as [`analytic_autocov`] for a given `P`.
pub fn autocov_from_p(
    ed: &ErrorDynamics,
    p: &DMatrix<f64>,
    r: &DMatrix<f64>,
    window: usize,
) -> AutocovStack {
    let lt = &ed.l_tilde;
    let p_lt = p * lt.transpose();
    let kr_l = &ed.k * r * ed.l.transpose();
    let mut blocks = Vec::with_capacity(window);
    blocks.push(lt * &p_lt + &ed.l * r * ed.l.transpose());
    // power = A_c^(j-1)
    let mut power = DMatrix::identity(ed.n(), ed.n());
    for _ in 1..window {
        let lt_pow = lt * &power;
        blocks.push(&lt_pow * &ed.ac * &p_lt - &lt_pow * &kr_l);
        power = &power * &ed.ac;
    }
    AutocovStack { blocks }
}
