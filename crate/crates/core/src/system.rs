//! Plant model `x+ = A x + B d + G w`, `y = C x + D d + v` and its noise
//! covariances.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::structural;

/// Relative asymmetry above which covariance inputs produce a warning.
pub const ASYMMETRY_WARN_TOL: f64 = 1e-8;

/// Linear time-invariant plant with unknown input `d` and noise shaping `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    g: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    shaping_known: bool,
}

impl LtiSystem {
    /// Checks that all shapes agree with `A` (n x n), `C` (p x n), `B` (n x q)
    /// and `G` (n x g).
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        g: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::Dimension {
                matrix: "A".into(),
                expected: "n x n with n >= 1".into(),
                found: "0 x 0".into(),
            });
        }
        if a.ncols() != n {
            return Err(Error::dim("A", (n, n), a.shape()));
        }
        let q = b.ncols();
        if b.nrows() != n {
            return Err(Error::dim("B", (n, q), b.shape()));
        }
        if g.nrows() != n || g.ncols() == 0 {
            return Err(Error::Dimension {
                matrix: "G".into(),
                expected: format!("{n} x g with g >= 1"),
                found: format!("{}x{}", g.nrows(), g.ncols()),
            });
        }
        let p = c.nrows();
        if p == 0 || c.ncols() != n {
            return Err(Error::Dimension {
                matrix: "C".into(),
                expected: format!("p x {n} with p >= 1"),
                found: format!("{}x{}", c.nrows(), c.ncols()),
            });
        }
        if d.shape() != (p, q) {
            return Err(Error::dim("D", (p, q), d.shape()));
        }
        Ok(Self {
            a,
            b,
            g,
            c,
            d,
            shaping_known: true,
        })
    }

    /// Unknown shaping: `G = I_n`, and the process covariance to identify is
    /// `G Q G^T` itself.
    pub fn with_unknown_shaping(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let mut sys = Self::new(a, b, DMatrix::identity(n, n), c, d)?;
        sys.shaping_known = false;
        Ok(sys)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn q(&self) -> usize {
        self.b.ncols()
    }
    pub fn g_dim(&self) -> usize {
        self.g.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
    /// False when the system was loaded without `G`; the process-noise
    /// estimand is then `G Q G^T` with `G = I`.
    pub fn shaping_known(&self) -> bool {
        self.shaping_known
    }

    /// Same plant with a different feedthrough (used by tests and sweeps).
    pub fn with_d(&self, d: DMatrix<f64>) -> Result<Self> {
        let mut s = Self::new(
            self.a.clone(),
            self.b.clone(),
            self.g.clone(),
            self.c.clone(),
            d,
        )?;
        s.shaping_known = self.shaping_known;
        Ok(s)
    }

    pub fn with_a(&self, a: DMatrix<f64>) -> Result<Self> {
        let mut s = Self::new(
            a,
            self.b.clone(),
            self.g.clone(),
            self.c.clone(),
            self.d.clone(),
        )?;
        s.shaping_known = self.shaping_known;
        Ok(s)
    }
}

/// Process and measurement noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    warnings: Vec<String>,
}

impl NoiseSpec {
    /// `Q` symmetric PSD, `R` symmetric positive definite. Inputs are
    /// symmetrized first; asymmetry is reported as a warning.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        Self::build(q, r, true)
    }

    /// Like [`NoiseSpec::new`] but accepts a singular PSD `R`. Needed for
    /// noise-free simulation and for covariance pairs on the PSD boundary.
    pub fn semidefinite(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        Self::build(q, r, false)
    }

    fn build(q: DMatrix<f64>, r: DMatrix<f64>, r_definite: bool) -> Result<Self> {
        let mut warnings = Vec::new();
        let q = check_covariance("Q", q, false, &mut warnings)?;
        let r = check_covariance("R", r, r_definite, &mut warnings)?;
        Ok(Self { q, r, warnings })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn check_against(&self, sys: &LtiSystem) -> Result<()> {
        let g = sys.g_dim();
        let p = sys.p();
        if self.q.shape() != (g, g) {
            return Err(Error::dim("Q", (g, g), self.q.shape()));
        }
        if self.r.shape() != (p, p) {
            return Err(Error::dim("R", (p, p), self.r.shape()));
        }
        Ok(())
    }
}

fn check_covariance(
    name: &str,
    m: DMatrix<f64>,
    definite: bool,
    warnings: &mut Vec<String>,
) -> Result<DMatrix<f64>> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::Covariance {
            name: name.into(),
            reason: format!(
                "must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            ),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Covariance {
            name: name.into(),
            reason: "contains non-finite entries".into(),
        });
    }
    let asym = linalg::asymmetry(&m);
    if asym > ASYMMETRY_WARN_TOL {
        warnings.push(format!(
            "{name} asymmetric (relative {asym:.3e}); symmetrized"
        ));
    }
    let m = linalg::symmetrize(&m);
    let scale = m.norm().max(1.0);
    let min_eig = linalg::min_sym_eigenvalue(&m);
    if min_eig < -1e-10 * scale {
        return Err(Error::Covariance {
            name: name.into(),
            reason: format!("not positive semidefinite (min eigenvalue {min_eig:.3e})"),
        });
    }
    if definite && min_eig <= 1e-12 * scale {
        return Err(Error::Covariance {
            name: name.into(),
            reason: format!("not positive definite (min eigenvalue {min_eig:.3e})"),
        });
    }
    Ok(m)
}

/// One named check with numeric evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn push(&mut self, name: &str, passed: bool, evidence: String) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            evidence,
        });
    }

    pub fn overall(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn fmt_values(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Dimension consistency, `rank(G) = g <= n`, `rank(D) = q` and PBH
/// detectability of `(A, C)`.
pub fn validate_system(sys: &LtiSystem, tol: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    let (n, q, g, p) = (sys.n(), sys.q(), sys.g_dim(), sys.p());
    report.push("dimensions", true, format!("n={n}, q={q}, g={g}, p={p}"));

    let sg = linalg::singular_values(sys.g());
    let rg = linalg::rank_from_singular_values(&sg, tol);
    report.push(
        "rank(G)=g",
        n >= g && rg == g,
        format!(
            "rank {rg} of g={g}, n={n}, singular values {}",
            fmt_values(&sg)
        ),
    );

    let sd = linalg::singular_values(sys.d());
    let rd = linalg::rank_from_singular_values(&sd, tol);
    report.push(
        "rank(D)=q",
        rd == q,
        format!("rank {rd} of q={q}, singular values {}", fmt_values(&sd)),
    );

    let pbh = structural::check_detectable_pair(sys.a(), sys.c(), tol);
    report.push("detectable(A,C)", pbh.passed, pbh.evidence);
    report
}

/// Remodel a rank-deficient noise shaping `G_raw` (n x m) with covariance
/// `Q_raw` into an equivalent full-column-rank pair `(G, Q)` such that
/// `G Q G^T = G_raw Q_raw G_raw^T`.
pub fn factor_shaping(
    g_raw: &DMatrix<f64>,
    q_raw: &DMatrix<f64>,
    tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = g_raw.ncols();
    if q_raw.shape() != (m, m) {
        return Err(Error::dim("Q", (m, m), q_raw.shape()));
    }
    let s = linalg::singular_values(g_raw);
    let r = linalg::rank_from_singular_values(&s, tol);
    if r == 0 {
        return Err(Error::Degenerate(
            "noise shaping matrix is zero (noise-free process channel)".into(),
        ));
    }
    if r == m {
        return Ok((g_raw.clone(), q_raw.clone()));
    }
    let svd = linalg::svd(g_raw);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let keep = &order[..r];

    let mut g = DMatrix::zeros(g_raw.nrows(), r);
    // T = Sigma_r V_r^T, so that G_raw = G T.
    let mut t = DMatrix::zeros(r, m);
    for (j, &i) in keep.iter().enumerate() {
        let mut col = u.column(i).into_owned();
        let mut row = v_t.row(i).into_owned() * svd.singular_values[i];
        // Fix the sign so the largest-magnitude entry of each column is positive.
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
            row.neg_mut();
        }
        g.set_column(j, &col);
        t.set_row(j, &row);
    }
    let q = linalg::symmetrize(&(&t * q_raw * t.transpose()));
    Ok((g, q))
}

/// Parsed system-description JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub struct SystemFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
}

/// Result of loading a system file: the plant plus optional covariances.
#[derive(Debug, Clone)]
pub struct LoadedSystem {
    pub system: LtiSystem,
    pub q: Option<DMatrix<f64>>,
    pub r: Option<DMatrix<f64>>,
}

fn matrix_field(name: &str, rows: &[Vec<f64>], cols: Option<usize>) -> Result<DMatrix<f64>> {
    linalg::from_rows(rows, cols).ok_or_else(|| Error::Dimension {
        matrix: name.into(),
        expected: "rectangular array of rows".into(),
        found: "ragged rows".into(),
    })
}

impl SystemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn into_system(self) -> Result<LoadedSystem> {
        let a = matrix_field("A", &self.a, None)?;
        let b = matrix_field("B", &self.b, None)?;
        let c = matrix_field("C", &self.c, None)?;
        let d = matrix_field("D", &self.d, None)?;
        let system = match &self.g {
            Some(g) => LtiSystem::new(a, b, matrix_field("G", g, None)?, c, d)?,
            None => LtiSystem::with_unknown_shaping(a, b, c, d)?,
        };
        let q = self
            .q
            .as_ref()
            .map(|q| matrix_field("Q", q, None))
            .transpose()?;
        let r = self
            .r
            .as_ref()
            .map(|r| matrix_field("R", r, None))
            .transpose()?;
        Ok(LoadedSystem { system, q, r })
    }

    pub fn from_system(sys: &LtiSystem, noise: Option<&NoiseSpec>) -> Self {
        Self {
            a: linalg::to_rows(sys.a()),
            b: linalg::to_rows(sys.b()),
            g: sys.shaping_known().then(|| linalg::to_rows(sys.g())),
            c: linalg::to_rows(sys.c()),
            d: linalg::to_rows(sys.d()),
            q: noise.map(|n| linalg::to_rows(n.q())),
            r: noise.map(|n| linalg::to_rows(n.r())),
        }
    }
}

/// The two-state example plant used throughout the tests: a double
/// integrator with a feedthrough unknown input.
pub fn example_system() -> LtiSystem {
    LtiSystem::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::identity(2, 2),
        DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
    )
    .expect("example system is well formed")
}
