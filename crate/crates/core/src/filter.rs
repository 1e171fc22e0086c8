//! Unbiased unknown-input filter.
//!
//! Each step estimates the input from the innovation, corrects the state and
//! predicts forward:
//!
//! ```text
//! d_hat(k)   = F (y(k) - C x_hat(k|k-1))
//! x_hat(k|k) = x_hat(k|k-1) + L (y(k) - C x_hat(k|k-1))
//! x_hat(k+1|k) = A x_hat(k|k) + B d_hat(k)
//! ```
//!
//! Unbiasedness requires `F D = I` and `L D = 0`. The transformed innovation
//! `L (y(k) - C x_hat(k|k-1))` does not depend on the unknown input.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DEFAULT_RANK_TOL};
use crate::optimize::NelderMead;
use crate::system::{LtiSystem, ValidationReport};

/// Absolute tolerance on `F D = I` and `L D = 0`.
pub const GAIN_CONSTRAINT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterGains {
    f: DMatrix<f64>,
    l: DMatrix<f64>,
    k: DMatrix<f64>,
}

impl FilterGains {
    /// Checks shapes and derives `K = A L + B F`. Does not check the
    /// unbiasedness constraints or stability; see [`validate_gains`].
    pub fn new(sys: &LtiSystem, f: DMatrix<f64>, l: DMatrix<f64>) -> Result<Self> {
        let (n, q, p) = (sys.n(), sys.q(), sys.p());
        if f.shape() != (q, p) {
            return Err(Error::dim("F", (q, p), f.shape()));
        }
        if l.shape() != (n, p) {
            return Err(Error::dim("L", (n, p), l.shape()));
        }
        let k = sys.a() * &l + sys.b() * &f;
        Ok(Self { f, l, k })
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }
    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// `A - K C`.
    pub fn closed_loop(&self, sys: &LtiSystem) -> DMatrix<f64> {
        sys.a() - &self.k * sys.c()
    }
}

/// JSON form of a gain pair, matrices row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsFile {
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "L")]
    pub l: Vec<Vec<f64>>,
}

impl GainsFile {
    pub fn from_gains(g: &FilterGains) -> Self {
        Self {
            f: linalg::to_rows(g.f()),
            l: linalg::to_rows(g.l()),
        }
    }

    pub fn into_gains(self, sys: &LtiSystem) -> Result<FilterGains> {
        let f = linalg::from_rows(&self.f, None)
            .ok_or_else(|| Error::dim("F", (sys.q(), sys.p()), (self.f.len(), 0)))?;
        // With q = 0 an empty array carries no column count.
        let f = if f.nrows() == 0 {
            DMatrix::zeros(0, sys.p())
        } else {
            f
        };
        let l = linalg::from_rows(&self.l, None)
            .ok_or_else(|| Error::dim("L", (sys.n(), sys.p()), (self.l.len(), 0)))?;
        FilterGains::new(sys, f, l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    pub seed: u64,
    /// Accept the first design with spectral radius `<= 1 - margin`.
    pub margin: f64,
    pub restarts: usize,
    pub iterations_per_restart: usize,
    pub rank_tol: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            margin: 0.1,
            restarts: 200,
            iterations_per_restart: 2000,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

/// Affine parameterization of every `(F, L)` with `F D = I`, `L D = 0`:
/// `F = F0 + N P`, `L = Z P`, where `F0 = (D^T D)^-1 D^T` and
/// `P = I - D F0` annihilates `D`.
struct GainParameterization<'a> {
    sys: &'a LtiSystem,
    f0: DMatrix<f64>,
    proj: DMatrix<f64>,
}

impl<'a> GainParameterization<'a> {
    fn new(sys: &'a LtiSystem, tol: f64) -> Result<Self> {
        let (q, p) = (sys.q(), sys.p());
        let d = sys.d();
        if linalg::rank(d, tol) != q {
            return Err(Error::NotApplicable(
                "gain design requires D of full column rank".into(),
            ));
        }
        let f0 = if q == 0 {
            DMatrix::zeros(0, p)
        } else {
            let dtd = d.transpose() * d;
            dtd.try_inverse()
                .ok_or_else(|| Error::Factorization("D^T D is singular".into()))?
                * d.transpose()
        };
        // I - D F0 built from an orthonormal basis of the left null space of
        // D, so that it is exactly zero when q = p.
        let proj = if q == 0 {
            DMatrix::identity(p, p)
        } else {
            let basis = linalg::null_space(&d.transpose(), tol);
            &basis * basis.transpose()
        };
        Ok(Self { sys, f0, proj })
    }

    fn dim(&self) -> usize {
        (self.sys.q() + self.sys.n()) * self.sys.p()
    }

    fn gains(&self, x: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, q, p) = (self.sys.n(), self.sys.q(), self.sys.p());
        let free_f = DMatrix::from_column_slice(q, p, &x[..q * p]);
        let free_l = DMatrix::from_column_slice(n, p, &x[q * p..]);
        (&self.f0 + free_f * &self.proj, free_l * &self.proj)
    }

    fn radius(&self, x: &[f64]) -> f64 {
        let (f, l) = self.gains(x);
        let k = self.sys.a() * l + self.sys.b() * f;
        let ac = self.sys.a() - k * self.sys.c();
        let r = linalg::spectral_radius(&ac);
        if r.is_finite() {
            r
        } else {
            f64::MAX
        }
    }
}

/// Find `(F, L)` satisfying the unbiasedness constraints with Schur-stable
/// `A - K C`, by seeded multi-start Nelder-Mead over the free parameters.
pub fn design_gains(sys: &LtiSystem, opts: &DesignOptions) -> Result<FilterGains> {
    let param = GainParameterization::new(sys, opts.rank_tol)?;
    let target = 1.0 - opts.margin;
    let dim = param.dim();
    let nm = NelderMead {
        max_iter: opts.iterations_per_restart,
        f_tol: 1e-10,
        initial_step: 0.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = f64::INFINITY;
    for restart in 0..opts.restarts.max(1) {
        let x0: Vec<f64> = if restart == 0 {
            vec![0.0; dim]
        } else {
            let scale = 1.0 + (restart % 4) as f64;
            (0..dim)
                .map(|_| {
                    let u: f64 = StandardNormal.sample(&mut rng);
                    scale * u
                })
                .collect()
        };
        let found = nm.minimize(|x| param.radius(x), &x0, target);
        best = best.min(found.value);
        if found.value <= target {
            let (f, l) = param.gains(&found.x);
            return FilterGains::new(sys, f, l);
        }
        if dim == 0 {
            break;
        }
    }
    Err(Error::NoStabilizingGain { best_radius: best })
}

/// Report on `F D = I`, `L D = 0` and the spectral radius of `A - K C`.
pub fn validate_gains(sys: &LtiSystem, gains: &FilterGains) -> ValidationReport {
    let mut report = ValidationReport::default();
    let q = sys.q();
    let fd_err = (gains.f() * sys.d() - DMatrix::<f64>::identity(q, q)).amax();
    report.push(
        "F D = I",
        fd_err <= GAIN_CONSTRAINT_TOL,
        format!("max abs deviation {fd_err:.3e}"),
    );
    let ld_err = (gains.l() * sys.d()).amax();
    report.push(
        "L D = 0",
        ld_err <= GAIN_CONSTRAINT_TOL,
        format!("max abs deviation {ld_err:.3e}"),
    );
    let radius = linalg::spectral_radius(&gains.closed_loop(sys));
    report.push(
        "spectral radius(A - K C) < 1",
        radius < 1.0,
        format!("spectral radius {radius:.12}"),
    );
    report
}

/// Per-step filter outputs. All sequences have one entry per measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    /// `x_hat(k|k-1)`
    pub predicted: Vec<DVector<f64>>,
    /// `x_hat(k|k)`
    pub filtered: Vec<DVector<f64>>,
    pub input_estimates: Vec<DVector<f64>>,
    /// `y(k) - C x_hat(k|k-1)`
    pub innovations: Vec<DVector<f64>>,
    /// `L` times the innovation.
    pub transformed: Vec<DVector<f64>>,
}

impl FilterRun {
    pub fn len(&self) -> usize {
        self.innovations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.innovations.is_empty()
    }
}

pub fn run_filter(
    sys: &LtiSystem,
    gains: &FilterGains,
    measurements: &[DVector<f64>],
    x0_hat: &DVector<f64>,
) -> Result<FilterRun> {
    let (n, p) = (sys.n(), sys.p());
    if x0_hat.len() != n {
        return Err(Error::dim("x0_hat", (n, 1), (x0_hat.len(), 1)));
    }
    if measurements.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if let Some((k, y)) = measurements.iter().enumerate().find(|(_, y)| y.len() != p) {
        return Err(Error::Dimension {
            matrix: format!("y[{k}]"),
            expected: format!("{p}"),
            found: format!("{}", y.len()),
        });
    }
    let steps = measurements.len();
    let mut run = FilterRun {
        predicted: Vec::with_capacity(steps),
        filtered: Vec::with_capacity(steps),
        input_estimates: Vec::with_capacity(steps),
        innovations: Vec::with_capacity(steps),
        transformed: Vec::with_capacity(steps),
    };
    let mut x_pred = x0_hat.clone();
    for y in measurements {
        let innov = y - sys.c() * &x_pred;
        let d_hat = gains.f() * &innov;
        let correction = gains.l() * &innov;
        let x_filt = &x_pred + &correction;
        let next = sys.a() * &x_filt + sys.b() * &d_hat;
        run.predicted.push(std::mem::replace(&mut x_pred, next));
        run.filtered.push(x_filt);
        run.input_estimates.push(d_hat);
        run.innovations.push(innov);
        run.transformed.push(correction);
    }
    Ok(run)
}

/// The hand-picked gains `F = [1, 0.5]`, `L = [[0, -1], [0, 0]]` for
/// [`crate::system::example_system`].
pub fn example_gains(sys: &LtiSystem) -> Result<FilterGains> {
    FilterGains::new(
        sys,
        DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 0.0, 0.0]),
    )
}
