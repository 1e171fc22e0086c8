//! Strong detectability: the rank-matching condition on `[[CB, D], [D, 0]]`,
//! invariant zeros of the system pencil and the minimum-phase test, plus
//! the PBH detectability test for `(A, C)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DEFAULT_RANK_TOL};
use crate::system::LtiSystem;

/// Default margin on `|z|` for the minimum-phase test.
pub const DEFAULT_STABILITY_MARGIN: f64 = 1e-9;

/// Relative singular-value threshold a candidate zero must meet on the full
/// rectangular pencil.
const ZERO_VERIFY_TOL: f64 = 1e-7;

/// Relative distance within which candidates from the two compressors are
/// considered the same zero.
const ZERO_MATCH_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralOptions {
    pub rank_tol: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for StructuralOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            margin: DEFAULT_STABILITY_MARGIN,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankMatching {
    pub passed: bool,
    /// rank of `[[CB, D], [D, 0]]`
    pub r1: usize,
    /// rank of `D`
    pub r2: usize,
    /// rank of `[B; D]`
    pub r3: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralReport {
    pub rank_matching: RankMatching,
    pub invariant_zeros: Vec<Complex64>,
    pub minimum_phase: bool,
    pub strongly_detectable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbhResult {
    pub passed: bool,
    pub evidence: String,
}

/// The pencil `M(z) = [[zI - A, -B], [C, D]] = z E - A_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct RosenbrockPencil {
    e: DMatrix<f64>,
    a_p: DMatrix<f64>,
}

impl RosenbrockPencil {
    pub fn new(sys: &LtiSystem) -> Self {
        Self::from_blocks(sys.a(), sys.b(), sys.c(), sys.d())
    }

    pub fn from_blocks(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        c: &DMatrix<f64>,
        d: &DMatrix<f64>,
    ) -> Self {
        let n = a.nrows();
        let p = c.nrows();
        let q = b.ncols();
        let mut e = DMatrix::zeros(n + p, n + q);
        e.view_mut((0, 0), (n, n)).fill_with_identity();
        let mut a_p = DMatrix::zeros(n + p, n + q);
        a_p.view_mut((0, 0), (n, n)).copy_from(a);
        a_p.view_mut((0, n), (n, q)).copy_from(b);
        a_p.view_mut((n, 0), (p, n)).copy_from(&(-c));
        a_p.view_mut((n, n), (p, q)).copy_from(&(-d));
        Self { e, a_p }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.e.shape()
    }

    pub fn eval(&self, z: Complex64) -> DMatrix<Complex64> {
        linalg::to_complex(&self.e) * z - linalg::to_complex(&self.a_p)
    }

    /// `sigma_min / sigma_max` of `M(z)`; zero means exactly rank deficient.
    pub fn relative_gap(&self, z: Complex64) -> f64 {
        let s = linalg::singular_values_complex(&self.eval(z));
        let cols = self.e.ncols();
        if s.len() < cols {
            return 0.0;
        }
        match (s.first(), s.get(cols - 1)) {
            (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
            _ => 0.0,
        }
    }
}

/// Returns `(pass, r1, r2, r3)` for `rank [[CB, D], [D, 0]] = rank D + rank [B; D]`.
pub fn check_rank_matching(sys: &LtiSystem, tol: f64) -> RankMatching {
    let (p, q) = (sys.p(), sys.q());
    let cb = sys.c() * sys.b();
    let mut big = DMatrix::zeros(2 * p, 2 * q);
    big.view_mut((0, 0), (p, q)).copy_from(&cb);
    big.view_mut((0, q), (p, q)).copy_from(sys.d());
    big.view_mut((p, 0), (p, q)).copy_from(sys.d());
    let r1 = linalg::rank(&big, tol);
    let r2 = linalg::rank(sys.d(), tol);
    let r3 = linalg::rank(&linalg::vstack(sys.b(), sys.d()), tol);
    RankMatching {
        passed: r1 == r2 + r3,
        r1,
        r2,
        r3,
    }
}

/// PBH detectability: `rank [zI - A; C] = n` for every eigenvalue `z` of `A`
/// with `|z| >= 1`.
pub fn check_detectable_pair(a: &DMatrix<f64>, c: &DMatrix<f64>, tol: f64) -> PbhResult {
    let n = a.nrows();
    if !a.is_square() || c.ncols() != n {
        return PbhResult {
            passed: false,
            evidence: format!(
                "inconsistent dimensions A {}x{}, C {}x{}",
                a.nrows(),
                a.ncols(),
                c.nrows(),
                c.ncols()
            ),
        };
    }
    let mut passed = true;
    let mut notes = Vec::new();
    // Eigenvalues of defective blocks on the unit circle can land just inside
    // it after rounding; checking a slightly larger set only adds work.
    for z in linalg::eigenvalues(a)
        .into_iter()
        .filter(|z| z.norm() >= 1.0 - 1e-6)
    {
        let mut m = DMatrix::<Complex64>::zeros(n + c.nrows(), n);
        for i in 0..n {
            for j in 0..n {
                let diag = if i == j { z } else { Complex64::new(0.0, 0.0) };
                m[(i, j)] = diag - a[(i, j)];
            }
        }
        for i in 0..c.nrows() {
            for j in 0..n {
                m[(n + i, j)] = Complex64::new(c[(i, j)], 0.0);
            }
        }
        let s = linalg::singular_values_complex(&m);
        let r = linalg::rank_from_singular_values(&s, tol);
        if r < n {
            passed = false;
        }
        notes.push(format!(
            "z={:.6}{:+.6}i rank {r}/{n} sigma_min {:.3e}",
            z.re,
            z.im,
            s.last().copied().unwrap_or(0.0)
        ));
    }
    let evidence = if notes.is_empty() {
        "all eigenvalues of A strictly inside the unit disc".to_string()
    } else {
        notes.join("; ")
    };
    PbhResult { passed, evidence }
}

fn random_orthonormal_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // QR of a Gaussian cols x rows matrix gives orthonormal columns; transpose.
    let g = DMatrix::from_fn(cols, rows, |_, _| StandardNormal.sample(rng));
    g.qr().q().transpose()
}

/// Eigenvalues of the square pencil `z E - A` via a shift-invert transform.
/// Infinite eigenvalues are dropped.
fn square_pencil_eigenvalues(
    e: &DMatrix<f64>,
    a: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Complex64>> {
    let k = e.nrows();
    if k == 0 {
        return Some(Vec::new());
    }
    // Pick the best-conditioned shift among a few random real candidates.
    let mut best: Option<(f64, f64, DMatrix<f64>)> = None;
    for _ in 0..8 {
        let u: f64 = StandardNormal.sample(rng);
        let shift = 0.5 + 1.5 * u;
        let m0 = a - e * shift;
        let s = linalg::singular_values(&m0);
        let cond = match (s.first(), s.last()) {
            (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
            _ => 0.0,
        };
        if best.as_ref().is_none_or(|b| cond > b.0) {
            best = Some((cond, shift, m0));
        }
    }
    let (cond, shift, m0) = best?;
    if cond < 1e-12 {
        return None;
    }
    let t = m0.lu().solve(e)?;
    let evs = linalg::eigenvalues(&t);
    let scale = evs.iter().map(|l| l.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Some(Vec::new());
    }
    Some(
        evs.into_iter()
            .filter(|l| l.norm() > 1e-10 * scale)
            .map(|l| Complex64::new(shift, 0.0) + Complex64::new(1.0, 0.0) / l)
            .collect(),
    )
}

fn compressed_candidates(
    pencil: &RosenbrockPencil,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Complex64>> {
    let (rows, cols) = pencil.shape();
    for _ in 0..4 {
        let w = random_orthonormal_rows(cols, rows, rng);
        let e = &w * &pencil.e;
        let a = &w * &pencil.a_p;
        if let Some(c) = square_pencil_eigenvalues(&e, &a, rng) {
            return Ok(c);
        }
    }
    Err(Error::PencilSingular)
}

/// Finite invariant zeros: the points where `M(z)` drops below its normal
/// rank `n + rank [B; D]`.
///
/// The pencil is first column-compressed onto the range of `[B; D]`, then
/// row-compressed to square by two independent random orthonormal maps.
/// A point is kept only if it appears for both maps and the full
/// rectangular pencil is rank deficient there.
pub fn invariant_zeros(sys: &LtiSystem, opts: &StructuralOptions) -> Result<Vec<Complex64>> {
    let n = sys.n();
    let bd = linalg::vstack(sys.b(), sys.d());
    // Column compression: [B; D] V1 spans the same column space.
    let basis = if bd.ncols() == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let svd = linalg::svd(&bd);
        let v_t = svd.v_t.expect("v_t requested");
        let s: Vec<f64> = svd.singular_values.iter().copied().collect();
        let r = linalg::rank_from_singular_values(
            &{
                let mut sorted = s.clone();
                sorted.sort_by(|a, b| b.total_cmp(a));
                sorted
            },
            opts.rank_tol,
        );
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let mut v1 = DMatrix::zeros(bd.ncols(), r);
        for (j, &i) in order.iter().take(r).enumerate() {
            v1.set_column(j, &v_t.row(i).transpose());
        }
        v1
    };
    let (b1, d1) = if basis.ncols() == 0 {
        (DMatrix::zeros(n, 0), DMatrix::zeros(sys.p(), 0))
    } else {
        (sys.b() * &basis, sys.d() * &basis)
    };
    let pencil = RosenbrockPencil::from_blocks(sys.a(), &b1, sys.c(), &d1);
    let (rows, cols) = pencil.shape();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    // Normal rank check at a few random points.
    let full_somewhere = rows >= cols
        && (0..3).any(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            pencil.relative_gap(Complex64::new(re, im)) > ZERO_VERIFY_TOL
        });
    if !full_somewhere {
        return Err(Error::PencilSingular);
    }

    let first = compressed_candidates(&pencil, &mut rng)?;
    let mut second = compressed_candidates(&pencil, &mut rng)?;

    let mut zeros: Vec<Complex64> = Vec::new();
    for z in first {
        let tol = ZERO_MATCH_TOL * (1.0 + z.norm());
        let Some(pos) = second.iter().position(|w| (w - z).norm() <= tol) else {
            continue;
        };
        second.swap_remove(pos);
        if pencil.relative_gap(z) > ZERO_VERIFY_TOL {
            continue;
        }
        let z = clean(z);
        if zeros
            .iter()
            .all(|w| (w - z).norm() > ZERO_MATCH_TOL * (1.0 + z.norm()))
        {
            zeros.push(z);
        }
    }
    zeros.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(zeros)
}

/// Snap rounding noise in the real and imaginary parts.
fn clean(z: Complex64) -> Complex64 {
    let snap = |x: f64| if x.abs() < 1e-12 { 0.0 } else { x };
    Complex64::new(snap(z.re), snap(z.im))
}

/// Every zero strictly inside the disc of radius `1 - margin`.
pub fn zeros_are_stable(zeros: &[Complex64], margin: f64) -> bool {
    zeros.iter().all(|z| z.norm() < 1.0 - margin)
}

pub fn check_minimum_phase(sys: &LtiSystem, opts: &StructuralOptions) -> Result<bool> {
    Ok(zeros_are_stable(&invariant_zeros(sys, opts)?, opts.margin))
}

pub fn check_strong_detectability(
    sys: &LtiSystem,
    opts: &StructuralOptions,
) -> Result<StructuralReport> {
    let rank_matching = check_rank_matching(sys, opts.rank_tol);
    let invariant_zeros = invariant_zeros(sys, opts)?;
    let minimum_phase = zeros_are_stable(&invariant_zeros, opts.margin);
    Ok(StructuralReport {
        rank_matching,
        invariant_zeros,
        minimum_phase,
        strongly_detectable: rank_matching.passed && minimum_phase,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::example_system;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn rank_matching_example() {
        let rm = check_rank_matching(&example_system(), DEFAULT_RANK_TOL);
        assert_eq!((rm.passed, rm.r1, rm.r2, rm.r3), (true, 2, 1, 1));
    }

    #[test]
    fn rank_matching_without_input() {
        let sys = example_system().with_d(DMatrix::zeros(2, 1)).unwrap();
        let sys = LtiSystem::new(
            sys.a().clone(),
            DMatrix::zeros(2, 1),
            sys.g().clone(),
            sys.c().clone(),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        let rm = check_rank_matching(&sys, DEFAULT_RANK_TOL);
        assert_eq!((rm.passed, rm.r1, rm.r2, rm.r3), (true, 0, 0, 0));
    }

    #[test]
    fn zero_output_map_still_rank_matches() {
        // With D of full column rank, [[CB, D], [D, 0]] has rank 2q whatever
        // CB is, so C = 0 does not break rank matching.
        let base = example_system();
        let sys = LtiSystem::new(
            base.a().clone(),
            base.b().clone(),
            base.g().clone(),
            DMatrix::zeros(2, 2),
            base.d().clone(),
        )
        .unwrap();
        let rm = check_rank_matching(&sys, DEFAULT_RANK_TOL);
        assert_eq!((rm.passed, rm.r1, rm.r2, rm.r3), (true, 2, 1, 1));
    }

    /// D = 0 and CB = 0: the input is invisible at the output for one step.
    fn rank_matching_failure() -> LtiSystem {
        LtiSystem::new(
            m(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            m(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
            m(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            DMatrix::zeros(2, 1),
        )
        .unwrap()
    }

    #[test]
    fn rank_matching_fails_when_input_invisible() {
        let rm = check_rank_matching(&rank_matching_failure(), DEFAULT_RANK_TOL);
        assert_eq!((rm.passed, rm.r1, rm.r2, rm.r3), (false, 0, 0, 1));
    }

    #[test]
    fn example_has_single_zero_at_origin() {
        let zeros = invariant_zeros(&example_system(), &StructuralOptions::default()).unwrap();
        assert_eq!(zeros.len(), 1, "{zeros:?}");
        assert!(zeros[0].norm() < 1e-8);
    }

    #[test]
    fn no_input_observable_scalar_has_no_zeros() {
        let sys = LtiSystem::new(
            m(1, 1, &[0.5]),
            DMatrix::zeros(1, 0),
            m(1, 1, &[1.0]),
            m(1, 1, &[1.0]),
            DMatrix::zeros(1, 0),
        )
        .unwrap();
        assert!(invariant_zeros(&sys, &StructuralOptions::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn zero_on_unit_circle_fails_minimum_phase() {
        // Scalar plant with transfer (z - 1)/(z - 0.5) + 1 style zero at 1:
        // M(z) = [[z - a, -b], [c, d]], det = d (z - a) + b c = 0 at z = a - b c / d.
        let sys = LtiSystem::new(
            m(1, 1, &[0.5]),
            m(1, 1, &[-0.5]),
            m(1, 1, &[1.0]),
            m(1, 1, &[1.0]),
            m(1, 1, &[1.0]),
        )
        .unwrap();
        let zeros = invariant_zeros(&sys, &StructuralOptions::default()).unwrap();
        assert_eq!(zeros.len(), 1);
        assert!((zeros[0] - Complex64::new(1.0, 0.0)).norm() < 1e-9);
        assert!(!check_minimum_phase(&sys, &StructuralOptions::default()).unwrap());
    }

    #[test]
    fn stable_zero_set_passes() {
        let zs = [Complex64::new(0.3, 0.0), Complex64::new(-0.9, 0.0)];
        assert!(zeros_are_stable(&zs, DEFAULT_STABILITY_MARGIN));
        let mut more = zs.to_vec();
        more.push(Complex64::new(0.0, 1.0));
        assert!(!zeros_are_stable(&more, DEFAULT_STABILITY_MARGIN));
    }

    #[test]
    fn pbh_cases() {
        let ex = example_system();
        assert!(check_detectable_pair(ex.a(), ex.c(), DEFAULT_RANK_TOL).passed);
        assert!(
            !check_detectable_pair(&m(1, 1, &[2.0]), &m(1, 1, &[0.0]), DEFAULT_RANK_TOL).passed
        );
        assert!(check_detectable_pair(&m(1, 1, &[0.5]), &m(1, 1, &[0.0]), DEFAULT_RANK_TOL).passed);
    }

    #[test]
    fn strong_detectability_of_example() {
        let rep =
            check_strong_detectability(&example_system(), &StructuralOptions::default()).unwrap();
        assert!(rep.rank_matching.passed && rep.minimum_phase && rep.strongly_detectable);
    }

    #[test]
    fn rank_matching_failure_still_reports_zeros() {
        let rep =
            check_strong_detectability(&rank_matching_failure(), &StructuralOptions::default())
                .unwrap();
        assert!(!rep.rank_matching.passed);
        assert!(!rep.strongly_detectable);
        // The 3x3 minor on rows (1, 2, 3) is identically 1: no finite zeros.
        assert!(rep.invariant_zeros.is_empty());
        assert!(rep.minimum_phase);
    }

    #[test]
    fn minimum_phase_failure_fails_strong_detectability() {
        let sys = LtiSystem::new(
            m(1, 1, &[0.5]),
            m(1, 1, &[-0.5]),
            m(1, 1, &[1.0]),
            m(1, 1, &[1.0]),
            m(1, 1, &[1.0]),
        )
        .unwrap();
        let rep = check_strong_detectability(&sys, &StructuralOptions::default()).unwrap();
        assert!(rep.rank_matching.passed);
        assert!(!rep.minimum_phase && !rep.strongly_detectable);
    }

    #[test]
    fn singular_pencil_is_reported() {
        // Two independent inputs against a single output: the pencil is
        // 2 x 3 and can never reach full column rank.
        let sys = LtiSystem::new(
            m(1, 1, &[0.5]),
            m(1, 2, &[1.0, 0.0]),
            m(1, 1, &[1.0]),
            m(1, 1, &[1.0]),
            m(1, 2, &[0.0, 1.0]),
        )
        .unwrap();
        assert_eq!(
            invariant_zeros(&sys, &StructuralOptions::default()).unwrap_err(),
            Error::PencilSingular
        );
    }
}
