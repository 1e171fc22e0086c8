#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use uials::dynamics::{build_error_dynamics, ErrorDynamics};
use uials::filter::{design_gains, DesignOptions, FilterGains};
use uials::structural::{check_strong_detectability, StructuralOptions};
use uials::system::{validate_system, LtiSystem};

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Random SPD matrix `M M^T + 0.1 I`.
pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let m = gaussian_matrix(rng, dim, dim, 1.0);
    &m * m.transpose() + DMatrix::identity(dim, dim) * 0.1
}

pub struct RandomCase {
    pub sys: LtiSystem,
    pub gains: FilterGains,
    pub ed: ErrorDynamics,
}

/// Designs whose Lyapunov operator `I - A_c (x) A_c` is worse conditioned
/// than this are redrawn: double-precision checks at 1e-10 are meaningless
/// there.
pub const MAX_LYAPUNOV_CONDITION: f64 = 1e6;

pub fn lyapunov_condition(ed: &ErrorDynamics) -> f64 {
    let n = ed.n();
    let op = DMatrix::<f64>::identity(n * n, n * n) - ed.ac.kronecker(&ed.ac);
    let s = uials::linalg::singular_values(&op);
    s[0] / s[s.len() - 1]
}

/// Draw a valid, strongly detectable system with `rank(D) = q >= 1` and a
/// stabilizing, reasonably conditioned gain, redrawing until one is found.
pub fn random_case(seed: u64) -> RandomCase {
    random_case_with(seed, MAX_LYAPUNOV_CONDITION)
}

/// As [`random_case`], with an explicit conditioning cap (`f64::INFINITY`
/// accepts every stabilizing design).
pub fn random_case_with(seed: u64, max_condition: f64) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.random_range(1..=4);
        let p = rng.random_range(1..=4);
        let q = rng.random_range(1..=p);
        let g = rng.random_range(1..=n);
        let a = gaussian_matrix(&mut rng, n, n, 0.9 / (n as f64).sqrt());
        let sys = LtiSystem::new(
            a,
            gaussian_matrix(&mut rng, n, q, 1.0),
            gaussian_matrix(&mut rng, n, g, 1.0),
            gaussian_matrix(&mut rng, p, n, 1.0),
            gaussian_matrix(&mut rng, p, q, 1.0),
        )
        .expect("consistent dimensions");
        if !validate_system(&sys, 1e-9).overall() {
            continue;
        }
        match check_strong_detectability(&sys, &StructuralOptions::default()) {
            Ok(r) if r.strongly_detectable => {}
            _ => continue,
        }
        let opts = DesignOptions {
            seed: rng.random(),
            restarts: 20,
            ..DesignOptions::default()
        };
        let Ok(gains) = design_gains(&sys, &opts) else {
            continue;
        };
        let ed = build_error_dynamics(&sys, &gains).expect("designed gains are stable");
        if max_condition.is_finite() && lyapunov_condition(&ed) > max_condition {
            continue;
        }
        return RandomCase { sys, gains, ed };
    }
}

/// `E[Y(k+j) Y(k)^T]` by brute-force propagation of the joint second moment
/// of the error state, independent of the Lyapunov/Kronecker machinery.
pub fn brute_force_autocov(
    ed: &ErrorDynamics,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    window: usize,
) -> Vec<DMatrix<f64>> {
    let n = ed.n();
    let forcing = &ed.g * q * ed.g.transpose() + &ed.k * r * ed.k.transpose();
    let mut p = DMatrix::<f64>::zeros(n, n);
    for _ in 0..200_000 {
        let next = &ed.ac * &p * ed.ac.transpose() + &forcing;
        let done = (&next - &p).amax() <= 1e-15 * (1.0 + next.amax());
        p = next;
        if done {
            break;
        }
    }
    // cross moment E[e(k+j) Y(k)^T], starting from E[e(k) Y(k)^T] = P L~^T
    // and picking up -K R L^T after the first step.
    let mut cross = &p * ed.l_tilde.transpose();
    let mut blocks = vec![&ed.l_tilde * &cross + &ed.l * r * ed.l.transpose()];
    for j in 1..window {
        cross = &ed.ac * &cross;
        if j == 1 {
            cross -= &ed.k * r * ed.l.transpose();
        }
        blocks.push(&ed.l_tilde * &cross);
    }
    blocks
}

pub fn stack_vec(blocks: &[DMatrix<f64>]) -> DVector<f64> {
    let n = blocks[0].nrows();
    let mut out = DMatrix::zeros(n * blocks.len(), n);
    for (j, b) in blocks.iter().enumerate() {
        out.view_mut((j * n, 0), (n, n)).copy_from(b);
    }
    DVector::from_column_slice(out.as_slice())
}

/// Rosenbrock pencil `[[zI - A, -B], [C, D]]` evaluated at `z`.
pub fn pencil_at(sys: &LtiSystem, z: Complex64) -> DMatrix<Complex64> {
    let (n, p, q) = (sys.n(), sys.p(), sys.q());
    let mut m = DMatrix::<Complex64>::zeros(n + p, n + q);
    for i in 0..n {
        for j in 0..n {
            let diag = if i == j { z } else { Complex64::new(0.0, 0.0) };
            m[(i, j)] = diag - sys.a()[(i, j)];
        }
        for j in 0..q {
            m[(i, n + j)] = Complex64::new(-sys.b()[(i, j)], 0.0);
        }
    }
    for i in 0..p {
        for j in 0..n {
            m[(n + i, j)] = Complex64::new(sys.c()[(i, j)], 0.0);
        }
        for j in 0..q {
            m[(n + i, n + j)] = Complex64::new(sys.d()[(i, j)], 0.0);
        }
    }
    m
}

fn combinations(total: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if total < k {
        return Vec::new();
    }
    let mut out = combinations(total - 1, k);
    for mut c in combinations(total - 1, k - 1) {
        c.push(total - 1);
        out.push(c);
    }
    out
}

fn sigma_gap(m: &DMatrix<Complex64>, r: usize) -> f64 {
    let s = uials::linalg::singular_values_complex(m);
    if r == 0 || s.is_empty() || s[0] == 0.0 {
        return 0.0;
    }
    s.get(r - 1).copied().unwrap_or(0.0) / s[0]
}

/// Invariant zeros by brute force: every maximal minor of the pencil is a
/// polynomial of degree at most `n`; its coefficients come from samples on
/// the unit circle, its roots from a companion matrix, and a root is a zero
/// iff the pencil loses rank there.
pub fn zeros_by_minors(sys: &LtiSystem) -> Vec<Complex64> {
    let n = sys.n();
    let probe = pencil_at(sys, Complex64::new(0.37, 0.61));
    let r = (1..=probe.nrows().min(probe.ncols()))
        .rev()
        .find(|&r| sigma_gap(&probe, r) > 1e-8)
        .unwrap_or(0);
    let m = n + 1;
    let nodes: Vec<Complex64> = (0..m)
        .map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / m as f64))
        .collect();
    let samples: Vec<DMatrix<Complex64>> = nodes.iter().map(|&z| pencil_at(sys, z)).collect();
    let mut candidates = Vec::new();
    for rows in combinations(probe.nrows(), r) {
        for cols in combinations(probe.ncols(), r) {
            let values: Vec<Complex64> = samples
                .iter()
                .map(|s| s.select_rows(&rows).select_columns(&cols).determinant())
                .collect();
            // Inverse DFT gives the monomial coefficients exactly.
            let coeffs: Vec<Complex64> = (0..m)
                .map(|j| {
                    values
                        .iter()
                        .zip(&nodes)
                        .map(|(v, z)| v * z.powi(-(j as i32)))
                        .sum::<Complex64>()
                        / m as f64
                })
                .collect();
            let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
            if scale < 1e-12 {
                continue;
            }
            let Some(deg) = (0..m).rev().find(|&j| coeffs[j].norm() > 1e-10 * scale) else {
                continue;
            };
            if deg == 0 {
                continue;
            }
            let mut comp = DMatrix::<Complex64>::zeros(deg, deg);
            for i in 1..deg {
                comp[(i, i - 1)] = Complex64::new(1.0, 0.0);
            }
            for i in 0..deg {
                comp[(i, deg - 1)] = -coeffs[i] / coeffs[deg];
            }
            // nalgebra's complex Schur, capped: independent of the faer path
            // used by the library.
            let schur = comp
                .try_schur(f64::EPSILON, 100_000)
                .expect("companion Schur converged");
            candidates.extend(
                schur
                    .eigenvalues()
                    .expect("complex Schur form")
                    .iter()
                    .copied(),
            );
        }
    }
    let mut zeros: Vec<Complex64> = Vec::new();
    for z in candidates {
        if sigma_gap(&pencil_at(sys, z), r) > 1e-6 {
            continue;
        }
        if zeros
            .iter()
            .all(|w| (w - z).norm() > 1e-6 * (1.0 + z.norm()))
        {
            zeros.push(z);
        }
    }
    zeros
}

/// Same point sets up to `tol`, ignoring order and multiplicity.
pub fn same_zero_sets(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
    let covered = |x: &[Complex64], y: &[Complex64]| {
        x.iter()
            .all(|z| y.iter().any(|w| (w - z).norm() <= tol * (1.0 + z.norm())))
    };
    covered(a, b) && covered(b, a)
}

/// Transformed innovations of the example plant and gains under `noise`,
/// from `x0 = x0_hat = 0`, with the burn-in already dropped.
pub fn example_innovations(
    noise: &uials::system::NoiseSpec,
    inputs: &[DVector<f64>],
    seed: u64,
) -> Vec<DVector<f64>> {
    let sys = uials::system::example_system();
    let gains = uials::filter::example_gains(&sys).expect("example gains");
    let x0 = DVector::zeros(sys.n());
    let traj =
        uials::simulation::simulate_plant(&sys, noise, inputs, &x0, seed).expect("simulation");
    let y = uials::simulation::innovation_sequence(&sys, &gains, &traj, &x0).expect("filter run");
    y[uials::als::default_burn_in(sys.n())..].to_vec()
}

/// Batch-means standard error of each entry of `empirical_b`.
pub fn batch_standard_error(
    innovations: &[DVector<f64>],
    window: usize,
    batches: usize,
) -> DVector<f64> {
    let len = innovations.len() / batches;
    let bs: Vec<DVector<f64>> = (0..batches)
        .map(|i| {
            uials::als::empirical_b(&innovations[i * len..(i + 1) * len], window).expect("batch b")
        })
        .collect();
    let mean = bs
        .iter()
        .fold(DVector::zeros(bs[0].len()), |acc, b| acc + b)
        / batches as f64;
    let var = bs
        .iter()
        .fold(DVector::zeros(mean.len()), |acc: DVector<f64>, b| {
            acc + (b - &mean).map(|x| x * x)
        })
        / (batches - 1) as f64;
    var.map(|v| (v / batches as f64).sqrt())
}

/// Entries of `diff` whose magnitude exceeds `k` standard errors. Entries
/// that are identically zero in the process (zero standard error) must
/// match to rounding.
pub fn outside_k_se(diff: &DVector<f64>, se: &DVector<f64>, k: f64) -> Vec<(usize, f64, f64)> {
    diff.iter()
        .zip(se.iter())
        .enumerate()
        .filter(|(_, (d, s))| d.abs() > k * **s + 1e-12)
        .map(|(i, (d, s))| (i, *d, *s))
        .collect()
}

/// Combined standard error of the difference of two independent estimates.
pub fn combined_se(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.zip_map(b, |x, y| (x * x + y * y).sqrt())
}
