//! Acceptance criteria 1-8, one PASS/FAIL line each. Runs as a plain binary
//! so the lines are always printed.

mod common;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{
    batch_standard_error, combined_se, example_innovations, outside_k_se, random_case_with,
    random_spd, same_zero_sets, zeros_by_minors,
};
use uials::als::{build_als_matrices, empirical_b};
use uials::dynamics::{
    analytic_autocov, build_error_dynamics, steady_state_covariance, ErrorDynamics,
};
use uials::filter::{example_gains, run_filter};
use uials::identifiability::{
    check_uniqueness_conditions, distance_to_span, equivalent_covariance_pair, null_space_basis,
    rank_report, verdicts, witness_deficient_l, WitnessKind,
};
use uials::linalg::{self, DEFAULT_RANK_TOL};
use uials::simulation::{derive_seed, generate_unknown_input, simulate_plant, UnknownInputSignal};
use uials::structural::{check_rank_matching, check_strong_detectability, StructuralOptions};
use uials::system::{example_system, NoiseSpec};

const WINDOW: usize = 10;
const ROOT_SEED: u64 = 20_240_601;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_budget(elapsed: Duration, budget_s: f64) -> Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < budget_s,
        format!(
            "runtime {:.2} s exceeds {budget_s} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn example_ed() -> ErrorDynamics {
    let sys = example_system();
    build_error_dynamics(&sys, &example_gains(&sys).unwrap()).unwrap()
}

fn unit_noise() -> NoiseSpec {
    NoiseSpec::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mats = build_als_matrices(&example_ed(), WINDOW).map_err(|e| e.to_string())?;
    let ranks = rank_report(&mats.h, &mats.h1, &mats.h2, DEFAULT_RANK_TOL);
    let elapsed = start.elapsed();
    ensure(
        mats.h.shape() == (40, 8),
        format!("H is {:?}", mats.h.shape()),
    )?;
    ensure(
        (ranks.rank_h, ranks.rank_h1, ranks.rank_h2) == (2, 1, 2),
        ranks.summary(),
    )?;
    within_budget(elapsed, 1.0)?;
    Ok(format!(
        "H is 40x8, {} at relative tolerance 1e-9 ({:.3} s)",
        ranks.summary(),
        elapsed.as_secs_f64()
    ))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let sys = example_system();
    let rm = check_rank_matching(&sys, DEFAULT_RANK_TOL);
    let report = check_strong_detectability(&sys, &StructuralOptions::default())
        .map_err(|e| e.to_string())?;
    let oracle = zeros_by_minors(&sys);
    let elapsed = start.elapsed();
    ensure(
        rm.passed && (rm.r1, rm.r2, rm.r3) == (2, 1, 1),
        format!("rank matching {rm:?}"),
    )?;
    let origin = [Complex64::new(0.0, 0.0)];
    ensure(
        report.invariant_zeros.len() == 1 && same_zero_sets(&report.invariant_zeros, &origin, 1e-9),
        format!("zeros {:?}", report.invariant_zeros),
    )?;
    ensure(
        same_zero_sets(&oracle, &report.invariant_zeros, 1e-6),
        format!("minor oracle {oracle:?}"),
    )?;
    ensure(
        report.minimum_phase && report.strongly_detectable,
        "not strongly detectable",
    )?;
    within_budget(elapsed, 1.0)?;
    Ok(format!(
        "rank matching 2 = 1 + 1, zeros {{0}} (minor oracle agrees), strongly detectable ({:.3} s)",
        elapsed.as_secs_f64()
    ))
}

fn criterion_3() -> Outcome {
    let sys = example_system();
    let gains = example_gains(&sys).unwrap();
    let ed = example_ed();
    let mats = build_als_matrices(&ed, WINDOW).map_err(|e| e.to_string())?;
    let w = witness_deficient_l(&sys, &gains, &ed, &mats, DEFAULT_RANK_TOL)
        .map_err(|e| e.to_string())?;
    ensure(
        w.kind == WitnessKind::DeficientL,
        format!("kind {:?}", w.kind),
    )?;
    let z = w.construction.z.clone().unwrap_or_default();
    ensure(z == vec![1.0, 0.0], format!("z1 = {z:?}"))?;
    let (q, r) = w.direction();
    let q_expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -1.0]);
    let r_expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    ensure(
        (&q - &q_expected).amax() <= 1e-12 && (&r - &r_expected).amax() <= 1e-12,
        format!("Q part {q}, R part {r}"),
    )?;
    let xi = DVector::from_iterator(8, q.iter().chain(r.iter()).copied());
    let residual = (&mats.h * &xi).norm();
    let bound = 1e-9 * mats.h.norm() * xi.norm();
    ensure(
        residual <= bound,
        format!("||H Xi|| = {residual:e} > {bound:e}"),
    )?;
    let basis = null_space_basis(&mats.h, DEFAULT_RANK_TOL);
    let dist = distance_to_span(&basis, &w.xi_vector());
    ensure(
        dist <= 1e-8,
        format!("distance to null-space span {dist:e}"),
    )?;
    Ok(format!(
        "z1 = [1, 0], ||H Xi|| = {residual:.1e} <= {bound:.1e}, distance to {}-dim null basis {dist:.1e}",
        basis.ncols()
    ))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let sys = example_system();
    let gains = example_gains(&sys).unwrap();
    let ed = example_ed();
    let mats = build_als_matrices(&ed, WINDOW).map_err(|e| e.to_string())?;
    let w = witness_deficient_l(&sys, &gains, &ed, &mats, DEFAULT_RANK_TOL)
        .map_err(|e| e.to_string())?;
    let noise = unit_noise();
    let pair =
        equivalent_covariance_pair(&ed, &noise, &w, 0.5, WINDOW).map_err(|e| e.to_string())?;
    let q_expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
    let r_expected = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 1.0]);
    ensure(
        (pair.q_prime.to_matrix() - &q_expected).amax() <= 1e-12
            && (pair.r_prime.to_matrix() - &r_expected).amax() <= 1e-12,
        format!("(Q', R') = ({:?}, {:?})", pair.q_prime, pair.r_prime),
    )?;
    // Independent check of the analytic certificate.
    let prime = pair.noise_prime().map_err(|e| e.to_string())?;
    let s = analytic_autocov(&ed, &noise, WINDOW).unwrap().stacked();
    let s_prime = analytic_autocov(&ed, &prime, WINDOW).unwrap().stacked();
    let rel = (&s_prime - &s).norm() / s.norm();
    ensure(
        rel <= 1e-9 && pair.certified,
        format!("analytic stacks differ by {rel:e}"),
    )?;

    let steps = 100_000;
    let zero = vec![DVector::zeros(1); steps];
    let y = example_innovations(&noise, &zero, derive_seed(ROOT_SEED, 40));
    let y_prime = example_innovations(&prime, &zero, derive_seed(ROOT_SEED, 41));
    let diff = empirical_b(&y, WINDOW).unwrap() - empirical_b(&y_prime, WINDOW).unwrap();
    let se = combined_se(
        &batch_standard_error(&y, WINDOW, 50),
        &batch_standard_error(&y_prime, WINDOW, 50),
    );
    let bad = outside_k_se(&diff, &se, 3.0);
    let worst = diff
        .iter()
        .zip(se.iter())
        .filter(|(_, s)| **s > 0.0)
        .map(|(d, s)| d.abs() / s)
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    ensure(
        bad.is_empty(),
        format!("empirical b entries beyond 3 SE: {bad:?}"),
    )?;
    within_budget(elapsed, 30.0)?;
    Ok(format!(
        "Q' = diag(1, 0.5), R' = diag(1.5, 1); analytic stacks differ by {rel:.1e}; \
         empirical b (2 x 1e5 steps) max |diff|/SE = {worst:.2} ({:.2} s)",
        elapsed.as_secs_f64()
    ))
}

fn criterion_5() -> Outcome {
    let mut worst_path: f64 = 0.0;
    let mut worst_lyap: f64 = 0.0;
    for i in 0..100u64 {
        let case = random_case_with(derive_seed(ROOT_SEED, 500 + i), f64::INFINITY);
        let ed = &case.ed;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ROOT_SEED, 600 + i));
        let noise = NoiseSpec::new(
            random_spd(&mut rng, ed.g_dim()),
            random_spd(&mut rng, ed.p()),
        )
        .map_err(|e| e.to_string())?;
        let window = 1 + (i as usize % 8);
        let p = steady_state_covariance(ed, &noise)
            .map_err(|e| format!("case {i}: {e}"))?
            .p;
        let lyap = (&p
            - (&ed.ac * &p * ed.ac.transpose()
                + &ed.g * noise.q() * ed.g.transpose()
                + &ed.k * noise.r() * ed.k.transpose()))
        .norm()
            / (1.0 + p.norm());
        let blockwise =
            DVector::from_vec(analytic_autocov(ed, &noise, window).unwrap().vectorized());
        let mats = build_als_matrices(ed, window).map_err(|e| e.to_string())?;
        let kron = ed.l_tilde.kronecker(&mats.theta) * linalg::vec(&p)
            + ed.l.kronecker(&mats.upsilon) * linalg::vec(noise.r());
        let path = (&kron - &blockwise).norm() / (1.0 + blockwise.norm());
        ensure(
            lyap <= 1e-10,
            format!("case {i}: Lyapunov residual {lyap:e}"),
        )?;
        ensure(path <= 1e-10, format!("case {i}: paths differ by {path:e}"))?;
        worst_path = worst_path.max(path);
        worst_lyap = worst_lyap.max(lyap);
    }
    Ok(format!(
        "100 random systems: max path difference {worst_path:.1e}, max Lyapunov residual {worst_lyap:.1e} (relative to 1 + norm)"
    ))
}

fn criterion_6() -> Outcome {
    let mut full_rank_h = 0;
    let mut tall_g = 0;
    for i in 0..100u64 {
        let case = random_case_with(derive_seed(ROOT_SEED, 700 + i), f64::INFINITY);
        let cond = check_uniqueness_conditions(&case.sys, &case.gains, DEFAULT_RANK_TOL);
        ensure(
            cond.rank_d == cond.q && cond.q >= 1,
            format!("case {i}: rank(D) = {}", cond.rank_d),
        )?;
        ensure(
            cond.rank_l <= cond.p - cond.q && cond.p - cond.q < cond.p,
            format!(
                "case {i}: rank(L) = {}, p = {}, q = {}",
                cond.rank_l, cond.p, cond.q
            ),
        )?;
        ensure(
            !cond.satisfied,
            format!("case {i}: condition reported satisfied"),
        )?;
        let mats = build_als_matrices(&case.ed, case.sys.n() + 1).map_err(|e| e.to_string())?;
        let ranks = rank_report(&mats.h, &mats.h1, &mats.h2, DEFAULT_RANK_TOL);
        let vs = verdicts(&ranks, &cond);
        ensure(vs.len() == 3, "expected joint, Q-only and R-only verdicts")?;
        for v in &vs {
            ensure(
                !v.necessary_condition_holds,
                format!("case {i}: {:?} necessary condition holds", v.problem),
            )?;
        }
        if ranks.nullity_h == 0 {
            full_rank_h += 1;
            tall_g += usize::from(case.sys.g_dim() < case.sys.n());
        }
    }
    println!(
        "NOTE criterion 6: {full_rank_h}/100 instances have numerically full-column-rank H at N = n + 1 \
         ({tall_g} of them with tall G); the rank(L) < p argument does not force a null vector there"
    );
    Ok("100 random systems: rank(L) <= p - q < p and all three verdicts non-unique".into())
}

fn criterion_7() -> Outcome {
    let sys = example_system();
    let gains = example_gains(&sys).unwrap();
    let noise = unit_noise();
    let steps = 200;
    let step = generate_unknown_input(
        &UnknownInputSignal::Step {
            time: 20,
            level: vec![2.0],
        },
        steps,
        1,
    )
    .unwrap();
    let sine = generate_unknown_input(
        &UnknownInputSignal::Sinusoid {
            amplitude: vec![3.0],
            period: 25.0,
            phase: 0.0,
        },
        steps,
        1,
    )
    .unwrap();
    let x0 = DVector::zeros(2);
    let seed = derive_seed(ROOT_SEED, 70);
    let run = |d: &[DVector<f64>]| {
        let traj = simulate_plant(&sys, &noise, d, &x0, seed).unwrap();
        run_filter(&sys, &gains, &traj.outputs, &x0).unwrap()
    };
    let (a, b) = (run(&step), run(&sine));
    let transformed = a
        .transformed
        .iter()
        .zip(&b.transformed)
        .map(|(x, y)| (x - y).amax())
        .fold(0.0, f64::max);
    let raw = a
        .innovations
        .iter()
        .zip(&b.innovations)
        .map(|(x, y)| (x - y).amax())
        .fold(0.0, f64::max);
    ensure(
        transformed <= 1e-10,
        format!("transformed innovations differ by {transformed:e}"),
    )?;
    ensure(
        raw > 1e-3,
        format!("raw innovations differ by only {raw:e}"),
    )?;
    Ok(format!(
        "step vs sinusoid over {steps} steps: transformed max diff {transformed:.1e}, raw max diff {raw:.2}"
    ))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let noise = unit_noise();
    let exact = DVector::from_vec(
        analytic_autocov(&example_ed(), &noise, WINDOW)
            .unwrap()
            .vectorized(),
    );
    let replicates = 64u64;
    let levels = [1_000usize, 10_000, 100_000];
    let mut rms = Vec::new();
    for (li, &nd) in levels.iter().enumerate() {
        let zero = vec![DVector::zeros(1); nd];
        let mean_sq = (0..replicates)
            .map(|r| {
                let y = example_innovations(
                    &noise,
                    &zero,
                    derive_seed(ROOT_SEED, 10_000 * (li as u64 + 1) + r),
                );
                ((empirical_b(&y, WINDOW).unwrap() - &exact).norm() / exact.norm()).powi(2)
            })
            .sum::<f64>()
            / replicates as f64;
        rms.push(mean_sq.sqrt());
    }
    let ratios = [rms[0] / rms[1], rms[1] / rms[2]];
    let elapsed = start.elapsed();
    let detail = format!(
        "RMS relative error over {replicates} replicates: {:.4} / {:.4} / {:.5} at N_d = 1e3 / 1e4 / 1e5, ratios {:.2}, {:.2} ({:.1} s)",
        rms[0],
        rms[1],
        rms[2],
        ratios[0],
        ratios[1],
        elapsed.as_secs_f64()
    );
    ensure(
        ratios.iter().all(|r| (2.5..=4.5).contains(r)),
        detail.clone(),
    )?;
    within_budget(elapsed, 60.0)?;
    Ok(detail)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("example ranks", criterion_1),
        ("structural checks", criterion_2),
        ("witness validity", criterion_3),
        ("indistinguishable covariances", criterion_4),
        ("cross-path identity", criterion_5),
        ("impossibility sweep", criterion_6),
        ("unknown-input decoupling", criterion_7),
        ("ergodic convergence", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
