//! Why `(Q, R)` cannot be recovered from transformed-innovation
//! autocovariances.
//!
//! The structural argument: `H` has full column rank only if
//! `rank(A) = rank(C) = n` and `rank(L) = p`, and the unbiasedness constraint
//! `L D = 0` with a full-column-rank `D` caps `rank(L)` at `p - q`, so the
//! last clause always fails. The null vector behind that argument is built
//! by solving `(G (x) G) vec(Q) = mu`, which always succeeds for square `G`
//! but not for tall `G`; there `H` (and `H1`, `H2`) can have full column
//! rank despite the failed clause. Verdicts therefore report the structural
//! clause and the numerical nullity side by side.
//!
//! Besides the rank diagnostics this module builds explicit null vectors
//! `Xi = [vec(Q); vec(R)]` of `H`:
//!
//! * `deficient_L`: `R = z z^T` for `L z = 0`, `P = 0`;
//! * `singular_A`: `P = z z^T` for `A z = 0`, `R = -C P C^T`;
//! * `numerical_svd`: a symmetric direction taken from the SVD of `H` when
//!   neither construction closes exactly.
//!
//! In the constructions `Q` is recovered from the Lyapunov equation as
//! `vec(Q) = (G (x) G)^+ mu` with `mu = (I - A_c (x) A_c) vec(P) - (K (x) K) vec(R)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::als::{symmetric_basis, AlsMatrices};
use crate::dynamics::{self, analytic_autocov, ErrorDynamics};
use crate::error::{Error, Result};
use crate::filter::FilterGains;
use crate::io::MatrixJson;
use crate::linalg;
use crate::system::{LtiSystem, NoiseSpec};

/// Relative bound on `||H Xi||` for a witness: `tol (1 + ||H|| ||Xi||)`.
pub const WITNESS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub tol: f64,
    pub rank_h: usize,
    pub rank_h1: usize,
    pub rank_h2: usize,
    pub cols_h: usize,
    pub cols_h1: usize,
    pub cols_h2: usize,
    pub nullity_h: usize,
    pub nullity_h1: usize,
    pub nullity_h2: usize,
}

impl RankReport {
    pub fn summary(&self) -> String {
        format!(
            "rank(H)={}, rank(H1)={}, rank(H2)={}",
            self.rank_h, self.rank_h1, self.rank_h2
        )
    }
}

pub fn rank_report(h: &DMatrix<f64>, h1: &DMatrix<f64>, h2: &DMatrix<f64>, tol: f64) -> RankReport {
    let (rank_h, rank_h1, rank_h2) = (
        linalg::rank(h, tol),
        linalg::rank(h1, tol),
        linalg::rank(h2, tol),
    );
    RankReport {
        tol,
        rank_h,
        rank_h1,
        rank_h2,
        cols_h: h.ncols(),
        cols_h1: h1.ncols(),
        cols_h2: h2.ncols(),
        nullity_h: h.ncols() - rank_h,
        nullity_h1: h1.ncols() - rank_h1,
        nullity_h2: h2.ncols() - rank_h2,
    }
}

/// Clause-by-clause evaluation of `rank(A) = rank(C) = n, rank(L) = p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessConditions {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub rank_a: usize,
    pub rank_c: usize,
    pub rank_l: usize,
    pub rank_d: usize,
    pub a_full_rank: bool,
    pub c_full_rank: bool,
    pub l_full_rank: bool,
    /// `p - rank(D)`, the largest rank any `L` with `L D = 0` can have.
    pub rank_l_bound: usize,
    pub bound_holds: bool,
    /// Conjunction of the three clauses.
    pub satisfied: bool,
    /// The impossibility argument instantiated on this system.
    pub trace: Vec<String>,
}

pub fn check_uniqueness_conditions(
    sys: &LtiSystem,
    gains: &FilterGains,
    tol: f64,
) -> UniquenessConditions {
    let (n, p, q) = (sys.n(), sys.p(), sys.q());
    let rank_a = linalg::rank(sys.a(), tol);
    let rank_c = linalg::rank(sys.c(), tol);
    let rank_l = linalg::rank(gains.l(), tol);
    let rank_d = linalg::rank(sys.d(), tol);
    let rank_l_bound = p - rank_d;
    let ld = (gains.l() * sys.d()).amax();
    let mut trace = vec![
        format!("rank(A)={rank_a} (n={n}): {}", mark(rank_a == n)),
        format!("rank(C)={rank_c} (n={n}): {}", mark(rank_c == n)),
        format!("rank(L)={rank_l} (p={p}): {}", mark(rank_l == p)),
        format!("max |L D| = {ld:.3e}, rank(D)={rank_d} (q={q})"),
        format!(
            "L D = 0 confines the rows of L to the left null space of D, so rank(L) <= p - rank(D) = {rank_l_bound}"
        ),
    ];
    if rank_d > 0 {
        trace.push(format!(
            "rank(D) = {rank_d} > 0 gives rank(L) <= {rank_l_bound} < {p} = p: the rank condition is infeasible"
        ));
    } else {
        trace.push("rank(D) = 0: the bound does not exclude rank(L) = p".to_string());
    }
    UniquenessConditions {
        n,
        p,
        q,
        rank_a,
        rank_c,
        rank_l,
        rank_d,
        a_full_rank: rank_a == n,
        c_full_rank: rank_c == n,
        l_full_rank: rank_l == p,
        rank_l_bound,
        bound_holds: rank_l <= rank_l_bound,
        satisfied: rank_a == n && rank_c == n && rank_l == p,
        trace,
    }
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "holds"
    } else {
        "fails"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlsVariant {
    Joint,
    QOnly,
    ROnly,
}

impl AlsVariant {
    fn label(self) -> &'static str {
        match self {
            Self::Joint => "joint (Q, R)",
            Self::QOnly => "Q given R",
            Self::ROnly => "R given Q",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub problem: AlsVariant,
    /// Whether the structural necessary condition for full column rank holds.
    pub necessary_condition_holds: bool,
    pub structural_reason: String,
    /// Column count minus numerical rank of the regressor.
    pub nullity: usize,
    /// Numerical verdict: the regressor has full column rank.
    pub uniquely_identifiable: bool,
    /// False when the structural argument predicts non-uniqueness but the
    /// regressor numerically has full column rank.
    pub consistent: bool,
}

/// Structural clause per problem, combined with the numerical nullity of the
/// corresponding regressor. The numerical result decides
/// `uniquely_identifiable`; disagreements are flagged, not hidden.
pub fn verdicts(ranks: &RankReport, cond: &UniquenessConditions) -> Vec<Verdict> {
    let l_clause = format!(
        "rank(L)={} <= p-rank(D)={} (p={})",
        cond.rank_l, cond.rank_l_bound, cond.p
    );
    let joint_reason = if cond.satisfied {
        "rank(A)=rank(C)=n and rank(L)=p hold".to_string()
    } else {
        let mut failed = Vec::new();
        if !cond.a_full_rank {
            failed.push(format!("rank(A)={} < n", cond.rank_a));
        }
        if !cond.c_full_rank {
            failed.push(format!("rank(C)={} < n", cond.rank_c));
        }
        if !cond.l_full_rank {
            failed.push(l_clause.clone());
        }
        format!("necessary condition fails: {}", failed.join(", "))
    };
    let single_reason = if cond.l_full_rank {
        "rank(L)=p holds".to_string()
    } else {
        format!("necessary condition rank(L)=p fails: {l_clause}")
    };
    [
        (
            AlsVariant::Joint,
            ranks.nullity_h,
            cond.satisfied,
            joint_reason,
        ),
        (
            AlsVariant::QOnly,
            ranks.nullity_h1,
            cond.l_full_rank,
            single_reason.clone(),
        ),
        (
            AlsVariant::ROnly,
            ranks.nullity_h2,
            cond.l_full_rank,
            single_reason,
        ),
    ]
    .into_iter()
    .map(|(problem, nullity, holds, structural_reason)| Verdict {
        problem,
        necessary_condition_holds: holds,
        structural_reason,
        nullity,
        uniquely_identifiable: nullity == 0,
        consistent: holds || nullity > 0,
    })
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WitnessKind {
    #[serde(rename = "singular_A")]
    SingularA,
    #[serde(rename = "deficient_L")]
    DeficientL,
    #[serde(rename = "numerical_svd")]
    NumericalSvd,
}

/// Unscaled construction data; `q` and `r` are the covariance directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessConstruction {
    /// `z` in `null(A)` or `z1` in `null(L)`; absent for `numerical_svd`.
    pub z: Option<Vec<f64>>,
    pub p: MatrixJson,
    pub mu: Vec<f64>,
    pub q: MatrixJson,
    pub r: MatrixJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub kind: WitnessKind,
    /// Unit-norm `[vec(Q); vec(R)]`.
    pub xi: Vec<f64>,
    pub construction: WitnessConstruction,
    /// `||H Xi||` for the unit-norm `Xi`.
    pub residual: f64,
    /// Set when this is a fallback for a construction that did not close.
    pub note: Option<String>,
}

impl Witness {
    pub fn xi_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.xi)
    }

    /// `(Q, R)` direction with the construction's scaling.
    pub fn direction(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            self.construction.q.to_matrix(),
            self.construction.r.to_matrix(),
        )
    }
}

fn within_tolerance(h: &DMatrix<f64>, xi: &DVector<f64>) -> (f64, bool) {
    let residual = (h * xi).norm();
    (
        residual,
        residual <= WITNESS_TOL * (1.0 + h.norm() * xi.norm()),
    )
}

fn stack_xi(q: &DMatrix<f64>, r: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        q.len() + r.len(),
        q.as_slice().iter().chain(r.as_slice()).copied(),
    )
}

/// Close a `(P, R)` pair into a witness by solving for `Q`.
fn from_p_and_r(
    kind: WitnessKind,
    ed: &ErrorDynamics,
    mats: &AlsMatrices,
    z: &DVector<f64>,
    p: DMatrix<f64>,
    r: DMatrix<f64>,
    tol: f64,
) -> Result<Witness> {
    let g = ed.g_dim();
    let mu = dynamics::lyapunov_operator(&ed.ac) * linalg::vec(&p)
        - ed.k.kronecker(&ed.k) * linalg::vec(&r);
    let q_s = linalg::pinv(&ed.g.kronecker(&ed.g), tol) * &mu;
    let q = linalg::symmetrize(&linalg::unvec(q_s.as_slice(), g, g));
    let raw = stack_xi(&q, &r);
    let scale = raw.norm();
    if scale == 0.0 {
        return Err(Error::Degenerate(format!(
            "{kind:?} construction produced Xi = 0"
        )));
    }
    let xi = raw / scale;
    let (residual, ok) = within_tolerance(&mats.h, &xi);
    let construction = WitnessConstruction {
        z: Some(z.as_slice().to_vec()),
        p: MatrixJson::from(&p),
        mu: mu.as_slice().to_vec(),
        q: MatrixJson::from(&q),
        r: MatrixJson::from(&r),
    };
    if ok {
        return Ok(Witness {
            kind,
            xi: xi.as_slice().to_vec(),
            construction,
            residual,
            note: None,
        });
    }
    let mut fallback = match witness_numerical(ed, mats, tol) {
        Err(Error::NotApplicable(_)) => {
            return Err(Error::NotApplicable(format!(
                "{kind:?} construction inexact (||H Xi|| = {residual:.3e}, mu not in range(G (x) G)) and H has full column rank"
            )))
        }
        other => other?,
    };
    fallback.note = Some(format!(
        "{kind:?} construction inexact (||H Xi|| = {residual:.3e}, mu not in range(G (x) G)); replaced by an SVD null vector"
    ));
    Ok(fallback)
}

/// Flip `v` so its largest-magnitude entry is positive.
fn canonical_sign(mut v: DVector<f64>) -> DVector<f64> {
    if let Some(i) = v.iamax().into() {
        if !v.is_empty() && v[i] < 0.0 {
            v = -v;
        }
    }
    v
}

/// One witness per basis vector of `null(L)`.
pub fn witnesses_deficient_l(
    sys: &LtiSystem,
    gains: &FilterGains,
    ed: &ErrorDynamics,
    mats: &AlsMatrices,
    tol: f64,
) -> Result<Vec<Witness>> {
    let basis = linalg::null_space(gains.l(), tol);
    if basis.ncols() == 0 {
        return Err(Error::NotApplicable(
            "L has full column rank; no deficient-L witness exists".into(),
        ));
    }
    let n = sys.n();
    basis
        .column_iter()
        .map(|col| {
            let z1 = canonical_sign(col.into_owned());
            let r = &z1 * z1.transpose();
            from_p_and_r(
                WitnessKind::DeficientL,
                ed,
                mats,
                &z1,
                DMatrix::zeros(n, n),
                r,
                tol,
            )
        })
        .collect()
}

/// Witness from the first unit vector of `null(L)`.
pub fn witness_deficient_l(
    sys: &LtiSystem,
    gains: &FilterGains,
    ed: &ErrorDynamics,
    mats: &AlsMatrices,
    tol: f64,
) -> Result<Witness> {
    Ok(witnesses_deficient_l(sys, gains, ed, mats, tol)?.remove(0))
}

/// Witness from a null vector `z` of `A`, preferring one with `C z != 0` so
/// that the `R` part is nonzero.
pub fn witness_singular_a(
    sys: &LtiSystem,
    ed: &ErrorDynamics,
    mats: &AlsMatrices,
    tol: f64,
) -> Result<Witness> {
    let basis = linalg::null_space(sys.a(), tol);
    if basis.ncols() == 0 {
        return Err(Error::NotApplicable(
            "A is nonsingular; use the deficient-L witness instead".into(),
        ));
    }
    let scale = sys.c().norm().max(f64::MIN_POSITIVE);
    let chosen = basis
        .column_iter()
        .map(|c| c.into_owned())
        .max_by(|a, b| (sys.c() * a).norm().total_cmp(&(sys.c() * b).norm()))
        .expect("non-empty basis");
    let z = canonical_sign(chosen);
    let p = &z * z.transpose();
    let r = -(sys.c() * &p * sys.c().transpose());
    let mut w = from_p_and_r(WitnessKind::SingularA, ed, mats, &z, p, r, tol)?;
    if w.kind == WitnessKind::SingularA && (sys.c() * &z).norm() <= tol * scale {
        w.note =
            Some("C z = 0 for every z in null(A): R part is zero, witness carried by Q".into());
    }
    Ok(w)
}

/// Unit-norm null vector of `H` restricted to symmetric `(Q, R)`, or of `H`
/// itself when no symmetric direction exists.
pub fn witness_numerical(ed: &ErrorDynamics, mats: &AlsMatrices, tol: f64) -> Result<Witness> {
    let (g, p) = (ed.g_dim(), ed.p());
    let gg = g * g;
    let (sg, sp) = (symmetric_basis(g), symmetric_basis(p));
    let mut s = DMatrix::zeros(gg + p * p, sg.ncols() + sp.ncols());
    s.view_mut((0, 0), sg.shape()).copy_from(&sg);
    s.view_mut((gg, sg.ncols()), sp.shape()).copy_from(&sp);
    let sym_null = linalg::null_space(&(&mats.h * &s), tol);
    let xi = if sym_null.ncols() > 0 {
        &s * sym_null.column(sym_null.ncols() - 1)
    } else {
        let full = linalg::null_space(&mats.h, tol);
        if full.ncols() == 0 {
            return Err(Error::NotApplicable("H has full column rank".into()));
        }
        full.column(full.ncols() - 1).into_owned()
    };
    let xi = canonical_sign(xi.normalize());
    let q = linalg::unvec(&xi.as_slice()[..gg], g, g);
    let r = linalg::unvec(&xi.as_slice()[gg..], p, p);
    let (residual, _) = within_tolerance(&mats.h, &xi);
    Ok(Witness {
        kind: WitnessKind::NumericalSvd,
        xi: xi.as_slice().to_vec(),
        construction: WitnessConstruction {
            z: None,
            p: MatrixJson::from(&DMatrix::<f64>::zeros(ed.n(), ed.n())),
            mu: Vec::new(),
            q: MatrixJson::from(&q),
            r: MatrixJson::from(&r),
        },
        residual,
        note: None,
    })
}

/// Orthonormal basis of the numerical null space of `H`.
pub fn null_space_basis(h: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    linalg::null_space(h, tol)
}

/// Distance from `v` to `span(basis)` for an orthonormal `basis`.
pub fn distance_to_span(basis: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v - basis * (basis.transpose() * v)).norm()
}

/// Closed interval of `alpha` for which `M + alpha * dm` stays PSD, assuming
/// `M` itself is PSD. Infinite ends mean unbounded in that direction.
pub fn psd_alpha_interval(m: &DMatrix<f64>, dm: &DMatrix<f64>) -> (f64, f64) {
    let scale = 1.0 + m.norm();
    let feasible =
        |a: f64| linalg::min_sym_eigenvalue(&(m + dm * a)) >= -4.0 * f64::EPSILON * scale;
    let edge = |sign: f64| {
        let mut hi = 1.0;
        while feasible(sign * hi) {
            hi *= 2.0;
            if hi > 1e15 {
                return f64::INFINITY;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if feasible(sign * mid) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        lo
    };
    if !feasible(0.0) {
        return (0.0, 0.0);
    }
    (-edge(-1.0), edge(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalentPair {
    pub alpha: f64,
    pub alpha_interval: (f64, f64),
    pub q: MatrixJson,
    pub r: MatrixJson,
    pub q_prime: MatrixJson,
    pub r_prime: MatrixJson,
    pub window: usize,
    /// `||S' - S||_F / ||S||_F` for the two analytic stacks.
    pub relative_stack_difference: f64,
    pub certified: bool,
}

impl EquivalentPair {
    pub fn noise_prime(&self) -> Result<NoiseSpec> {
        NoiseSpec::semidefinite(self.q_prime.to_matrix(), self.r_prime.to_matrix())
    }
}

/// Perturb `(Q, R)` along a witness direction by `alpha` and certify that
/// the analytic autocovariance stack does not change.
pub fn equivalent_covariance_pair(
    ed: &ErrorDynamics,
    noise: &NoiseSpec,
    witness: &Witness,
    alpha: f64,
    window: usize,
) -> Result<EquivalentPair> {
    let (dq, dr) = witness.direction();
    let (q_lo, q_hi) = psd_alpha_interval(noise.q(), &dq);
    let (r_lo, r_hi) = psd_alpha_interval(noise.r(), &dr);
    let interval = (q_lo.max(r_lo), q_hi.min(r_hi));
    if !(alpha >= interval.0 && alpha <= interval.1) {
        return Err(Error::Infeasible(format!(
            "alpha = {alpha} outside the PSD-feasible interval [{}, {}]",
            interval.0, interval.1
        )));
    }
    let prime = NoiseSpec::semidefinite(
        linalg::symmetrize(&(noise.q() + &dq * alpha)),
        linalg::symmetrize(&(noise.r() + &dr * alpha)),
    )?;
    let base = analytic_autocov(ed, noise, window)?.stacked();
    let moved = analytic_autocov(ed, &prime, window)?.stacked();
    let rel = (&moved - &base).norm() / base.norm().max(f64::MIN_POSITIVE);
    Ok(EquivalentPair {
        alpha,
        alpha_interval: interval,
        q: MatrixJson::from(noise.q()),
        r: MatrixJson::from(noise.r()),
        q_prime: MatrixJson::from(prime.q()),
        r_prime: MatrixJson::from(prime.r()),
        window,
        relative_stack_difference: rel,
        certified: rel <= 1e-9,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub window: usize,
    pub h_shape: (usize, usize),
    pub ranks: RankReport,
    pub conditions: UniquenessConditions,
    pub verdicts: Vec<Verdict>,
    pub null_space_dimension: usize,
    pub witnesses: Vec<Witness>,
    /// Largest distance of a witness from the numerical null-space span.
    pub max_witness_span_distance: f64,
    pub warnings: Vec<String>,
}

pub fn identifiability_report(
    sys: &LtiSystem,
    gains: &FilterGains,
    ed: &ErrorDynamics,
    mats: &AlsMatrices,
    tol: f64,
) -> Result<IdentifiabilityReport> {
    let ranks = rank_report(&mats.h, &mats.h1, &mats.h2, tol);
    let conditions = check_uniqueness_conditions(sys, gains, tol);
    let mut warnings = mats.warnings.clone();
    let mut witnesses = Vec::new();
    match witnesses_deficient_l(sys, gains, ed, mats, tol) {
        Ok(ws) => witnesses.extend(ws),
        Err(Error::NotApplicable(msg)) => warnings.push(msg),
        Err(e) => return Err(e),
    }
    match witness_singular_a(sys, ed, mats, tol) {
        Ok(w) => witnesses.push(w),
        Err(Error::NotApplicable(_)) => {}
        Err(e) => return Err(e),
    }
    if witnesses.is_empty() && ranks.nullity_h > 0 {
        witnesses.push(witness_numerical(ed, mats, tol)?);
    }
    let basis = null_space_basis(&mats.h, tol);
    let max_witness_span_distance = witnesses
        .iter()
        .map(|w| distance_to_span(&basis, &w.xi_vector()))
        .fold(0.0, f64::max);
    Ok(IdentifiabilityReport {
        window: mats.window,
        h_shape: mats.h.shape(),
        verdicts: verdicts(&ranks, &conditions),
        ranks,
        conditions,
        null_space_dimension: basis.ncols(),
        witnesses,
        max_witness_span_distance,
        warnings,
    })
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().map(|x| format!("{}", clean(*x))).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

/// Round away floating-point dust for display.
fn clean(x: f64) -> f64 {
    let r = (x * 1e12).round() / 1e12;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

impl IdentifiabilityReport {
    pub fn render_text(&self) -> String {
        let r = &self.ranks;
        let c = &self.conditions;
        let mut out = String::new();
        out.push_str(&format!(
            "With N={}, H is {}x{} and {} (relative tolerance {:e}).\n",
            self.window,
            self.h_shape.0,
            self.h_shape.1,
            r.summary(),
            r.tol
        ));
        out.push_str(&format!(
            "Nullities: H {}, H1 {}, H2 {}.\n",
            r.nullity_h, r.nullity_h1, r.nullity_h2
        ));
        let clauses = [
            ("rank(A)=n", c.a_full_rank),
            ("rank(C)=n", c.c_full_rank),
            ("rank(L)=p", c.l_full_rank),
        ];
        let failed: Vec<&str> = clauses
            .iter()
            .filter(|(_, ok)| !ok)
            .map(|(s, _)| *s)
            .collect();
        if failed.is_empty() {
            out.push_str("All rank conditions for unique identifiability hold.\n");
        } else {
            out.push_str(&format!(
                "Rank conditions: all satisfied except {} (rank(A)={}, rank(C)={}, rank(L)={}).\n",
                failed.join(", "),
                c.rank_a,
                c.rank_c,
                c.rank_l
            ));
        }
        for line in &c.trace {
            out.push_str(&format!("  {line}\n"));
        }
        for v in &self.verdicts {
            let status = if v.uniquely_identifiable {
                "unique (regressor has full column rank)".to_string()
            } else {
                format!(
                    "not uniquely identifiable, solution set of dimension {}",
                    v.nullity
                )
            };
            out.push_str(&format!(
                "{}: {}; {}\n",
                v.problem.label(),
                status,
                v.structural_reason
            ));
            if !v.consistent {
                out.push_str(
                    "  note: the rank condition fails yet the regressor has full column rank; \
                     the null-space construction needs mu in range(G (x) G), which a tall G need not provide\n",
                );
            }
        }
        for w in &self.witnesses {
            let (q, rr) = w.direction();
            out.push_str(&format!(
                "witness {:?}: Q part {}, R part {}, ||H Xi|| = {:.2e}\n",
                w.kind,
                fmt_matrix(&q),
                fmt_matrix(&rr),
                w.residual
            ));
            if let Some(note) = &w.note {
                out.push_str(&format!("  note: {note}\n"));
            }
        }
        for wmsg in &self.warnings {
            out.push_str(&format!("warning: {wmsg}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::als::build_als_matrices;
    use crate::dynamics::build_error_dynamics;
    use crate::filter::example_gains;
    use crate::linalg::DEFAULT_RANK_TOL;
    use crate::system::example_system;

    fn setup() -> (LtiSystem, FilterGains, ErrorDynamics, AlsMatrices) {
        let sys = example_system();
        let gains = example_gains(&sys).unwrap();
        let ed = build_error_dynamics(&sys, &gains).unwrap();
        let mats = build_als_matrices(&ed, 10).unwrap();
        (sys, gains, ed, mats)
    }

    #[test]
    fn example_ranks() {
        let (_, _, _, m) = setup();
        let r = rank_report(&m.h, &m.h1, &m.h2, DEFAULT_RANK_TOL);
        assert_eq!((r.rank_h, r.rank_h1, r.rank_h2), (2, 1, 2));
        assert_eq!((r.nullity_h, r.nullity_h1, r.nullity_h2), (6, 3, 2));
        assert_eq!(r.summary(), "rank(H)=2, rank(H1)=1, rank(H2)=2");
    }

    #[test]
    fn trivial_ranks() {
        let z = DMatrix::<f64>::zeros(4, 3);
        assert_eq!(rank_report(&z, &z, &z, 1e-9).rank_h, 0);
        let q = DMatrix::<f64>::identity(4, 3);
        assert_eq!(rank_report(&q, &q, &q, 1e-9).nullity_h, 0);
    }

    #[test]
    fn example_conditions() {
        let (sys, gains, _, _) = setup();
        let c = check_uniqueness_conditions(&sys, &gains, DEFAULT_RANK_TOL);
        assert!(c.a_full_rank && c.c_full_rank && !c.l_full_rank);
        assert_eq!((c.rank_l, c.rank_l_bound), (1, 1));
        assert!(c.bound_holds && !c.satisfied);
    }

    #[test]
    fn deficient_l_example() {
        let (sys, gains, ed, mats) = setup();
        let w = witness_deficient_l(&sys, &gains, &ed, &mats, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(w.kind, WitnessKind::DeficientL);
        assert_eq!(w.construction.z.as_deref(), Some(&[1.0, 0.0][..]));
        let (q, r) = w.direction();
        assert!((q - DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -1.0])).amax() < 1e-14);
        assert_eq!(r, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert!(w.residual <= 1e-12);
        assert!((w.xi_vector().norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_a_gate() {
        let (sys, _, ed, mats) = setup();
        assert!(matches!(
            witness_singular_a(&sys, &ed, &mats, DEFAULT_RANK_TOL),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn example_alpha_interval_and_pair() {
        let (sys, gains, ed, mats) = setup();
        let w = witness_deficient_l(&sys, &gains, &ed, &mats, DEFAULT_RANK_TOL).unwrap();
        let noise = NoiseSpec::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let pair = equivalent_covariance_pair(&ed, &noise, &w, 0.5, 10).unwrap();
        assert!((pair.alpha_interval.0 + 1.0).abs() < 1e-12);
        assert!((pair.alpha_interval.1 - 1.0).abs() < 1e-12);
        assert!(
            (pair.q_prime.to_matrix() - DMatrix::from_diagonal_element(2, 2, 1.0)
                + DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.5]))
            .amax()
                < 1e-14
        );
        assert!(pair.certified);
        assert!(equivalent_covariance_pair(&ed, &noise, &w, 1.5, 10).is_err());
    }

    #[test]
    fn interval_unbounded_for_psd_direction() {
        let (lo, hi) = psd_alpha_interval(&DMatrix::identity(2, 2), &DMatrix::identity(2, 2));
        assert!((lo + 1.0).abs() < 1e-12);
        assert!(hi.is_infinite());
    }

    #[test]
    fn report_text_contains_rank_sentence() {
        let (sys, gains, ed, mats) = setup();
        let rep = identifiability_report(&sys, &gains, &ed, &mats, DEFAULT_RANK_TOL).unwrap();
        let text = rep.render_text();
        assert!(text.contains("rank(H)=2, rank(H1)=1, rank(H2)=2"), "{text}");
        assert!(text.contains("all satisfied except rank(L)=p"));
        assert!(rep.verdicts.iter().all(|v| !v.uniquely_identifiable));
        assert_eq!(rep.null_space_dimension, 6);
        assert!(rep.max_witness_span_distance <= 1e-8);
    }
}
