//! Stages shared by the subcommands: load, gate, gains, noise, simulate,
//! estimate, identifiability. Every JSON document carries the tool version
//! and the config hash.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};
use uials::als::{self, AlsProblem, AlsSolution, SolveOptions};
use uials::dynamics::{self, build_error_dynamics, ErrorDynamics};
use uials::filter::{
    design_gains, run_filter, validate_gains, DesignOptions, FilterGains, GainsFile,
};
use uials::identifiability::{
    equivalent_covariance_pair, identifiability_report, psd_alpha_interval, EquivalentPair,
    IdentifiabilityReport,
};
use uials::io::{self as uio, MatrixJson};
use uials::linalg::{self, DEFAULT_RANK_TOL};
use uials::simulation::{derive_seed, generate_unknown_input, simulate_plant, Trajectory};
use uials::structural::{
    check_rank_matching, check_strong_detectability, RankMatching, StructuralOptions,
    StructuralReport,
};
use uials::system::{validate_system, LtiSystem, NoiseSpec, SystemFile, ValidationReport};

use crate::config::{self, GainsSource, Problem, Resolved, RunConfig};
use crate::error::CliError;

pub const TOOL: &str = "uials";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seed streams derived from the root seed.
const STREAM_DESIGN: u64 = 1;
const STREAM_SIMULATION: u64 = 2;

pub struct Context {
    pub res: Resolved,
    pub sys: LtiSystem,
    file_q: Option<DMatrix<f64>>,
    file_r: Option<DMatrix<f64>>,
}

pub fn load(cfg: &RunConfig) -> Result<Context, CliError> {
    let path = cfg
        .system
        .as_ref()
        .ok_or_else(|| CliError::Parse("a system file is required (--system <path>)".into()))?;
    let text = config::read(path)?;
    let loaded = SystemFile::from_json(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?
        .into_system()?;
    let res = config::resolve(cfg, text, loaded.system.q())?;
    Ok(Context {
        res,
        sys: loaded.system,
        file_q: loaded.q,
        file_r: loaded.r,
    })
}

impl Context {
    fn header(&self, command: &str) -> Value {
        json!({
            "tool": TOOL,
            "version": VERSION,
            "command": command,
            "config_hash": self.res.config_hash(),
            "config": self.res.provenance(),
        })
    }

    /// `(Q, R)` from the flags, else from the system file.
    pub fn noise(&self) -> Result<Option<NoiseSpec>, CliError> {
        let q = self.res.q.clone().or_else(|| self.file_q.clone());
        let r = self.res.r.clone().or_else(|| self.file_r.clone());
        match (q, r) {
            (Some(q), Some(r)) => {
                let noise = NoiseSpec::new(q, r)?;
                noise.check_against(&self.sys)?;
                Ok(Some(noise))
            }
            (None, None) => Ok(None),
            _ => Err(CliError::Parse("Q and R must be given together".into())),
        }
    }

    fn require_noise(&self, why: &str) -> Result<NoiseSpec, CliError> {
        self.noise()?.ok_or_else(|| {
            CliError::Parse(format!("{why} needs Q and R (--q/-r or the system file)"))
        })
    }

    fn require_nd(&self) -> Result<usize, CliError> {
        self.res
            .nd
            .ok_or_else(|| CliError::Parse("the data length is required (--nd <int>)".into()))
    }
}

pub struct Gate {
    pub validation: ValidationReport,
    pub rank_matching: RankMatching,
    pub structural: Option<StructuralReport>,
    pub failure: Option<CliError>,
}

/// Validation and structural analysis. A rank-matching failure is reported
/// as such even though it always coincides with `rank(D) < q`.
pub fn assess(sys: &LtiSystem) -> Gate {
    let validation = validate_system(sys, DEFAULT_RANK_TOL);
    let opts = StructuralOptions::default();
    let rm = check_rank_matching(sys, opts.rank_tol);
    let structural = check_strong_detectability(sys, &opts);
    let failed_checks = || {
        validation
            .failed()
            .map(|c| format!("{} ({})", c.name, c.evidence))
            .collect::<Vec<_>>()
            .join("; ")
    };
    let failure = match &structural {
        _ if !rm.passed => Some(CliError::NotStronglyDetectable(format!(
            "rank matching fails: rank [[CB, D], [D, 0]] = {} but rank D + rank [B; D] = {} + {}",
            rm.r1, rm.r2, rm.r3
        ))),
        Err(e) => Some(CliError::NotStronglyDetectable(e.to_string())),
        _ if !validation.overall() => Some(CliError::Validation(failed_checks())),
        Ok(s) if !s.strongly_detectable => Some(CliError::NotStronglyDetectable(format!(
            "invariant zeros {} are not all strictly inside the unit disc",
            fmt_zeros(s)
        ))),
        _ => None,
    };
    Gate {
        validation,
        rank_matching: rm,
        structural: structural.ok(),
        failure,
    }
}

fn fmt_zeros(s: &StructuralReport) -> String {
    if s.invariant_zeros.is_empty() {
        return "{}".into();
    }
    let parts: Vec<String> = s
        .invariant_zeros
        .iter()
        .map(|z| {
            if z.im == 0.0 {
                format!("{}", z.re)
            } else {
                format!("{}{:+}i", z.re, z.im)
            }
        })
        .collect();
    format!("{{{}}}", parts.join(", "))
}

fn gate(ctx: &Context) -> Result<Gate, CliError> {
    let mut g = assess(&ctx.sys);
    match g.failure.take() {
        Some(e) => Err(e),
        None => Ok(g),
    }
}

pub struct Designed {
    pub gains: FilterGains,
    pub ed: ErrorDynamics,
    pub source: &'static str,
}

fn obtain_gains(ctx: &Context, force_design: bool) -> Result<Designed, CliError> {
    let (gains, source) = match (&ctx.res.gains, force_design) {
        (GainsSource::File(p), false) => {
            let text = ctx.res.gains_text.as_deref().unwrap_or_default();
            let file: GainsFile = serde_json::from_str(text)
                .map_err(|e| CliError::Parse(format!("{}: {e}", p.display())))?;
            let gains = file.into_gains(&ctx.sys)?;
            let report = validate_gains(&ctx.sys, &gains);
            if let Some(c) = report.failed().next() {
                return Err(if c.name.starts_with("spectral") {
                    CliError::NoGain(format!("gains from {}: {}", p.display(), c.evidence))
                } else {
                    CliError::Validation(format!(
                        "gains from {}: {} violated, {}",
                        p.display(),
                        c.name,
                        c.evidence
                    ))
                });
            }
            (gains, "file")
        }
        _ => {
            let opts = DesignOptions {
                seed: derive_seed(ctx.res.seed, STREAM_DESIGN),
                ..DesignOptions::default()
            };
            (design_gains(&ctx.sys, &opts)?, "designed")
        }
    };
    let ed = build_error_dynamics(&ctx.sys, &gains)?;
    Ok(Designed { gains, ed, source })
}

fn gains_json(d: &Designed) -> Value {
    json!({
        "source": d.source,
        "F": MatrixJson::from(d.gains.f()),
        "L": MatrixJson::from(d.gains.l()),
        "K": MatrixJson::from(d.gains.k()),
        "closed_loop_spectral_radius": d.ed.spectral_radius(),
    })
}

fn simulate(
    ctx: &Context,
    d: &Designed,
    noise: &NoiseSpec,
    nd: usize,
) -> Result<(Trajectory, Vec<DVector<f64>>), CliError> {
    let inputs = generate_unknown_input(&ctx.res.input, nd, ctx.sys.q())
        .map_err(|e| CliError::Parse(format!("input signal: {e}")))?;
    if inputs.len() != nd {
        return Err(CliError::Parse(format!(
            "input signal has {} samples but N_d = {nd}",
            inputs.len()
        )));
    }
    let x0 = DVector::zeros(ctx.sys.n());
    let traj = simulate_plant(
        &ctx.sys,
        noise,
        &inputs,
        &x0,
        derive_seed(ctx.res.seed, STREAM_SIMULATION),
    )?;
    let innovations = run_filter(&ctx.sys, &d.gains, &traj.outputs, &x0)?.transformed;
    Ok((traj, innovations))
}

fn solve(
    ctx: &Context,
    prob: &AlsProblem,
    noise: Option<&NoiseSpec>,
) -> Result<AlsSolution, CliError> {
    let opts = SolveOptions::with(ctx.res.reg);
    let known = |what: &str| {
        noise.ok_or_else(|| {
            CliError::Parse(format!(
                "the {what} problem needs the known covariance (--q/-r)"
            ))
        })
    };
    Ok(match ctx.res.problem {
        Problem::Joint => als::solve_joint(prob, &opts)?,
        Problem::QOnly => als::solve_q_given_r(prob, known("q-only")?.r(), &opts)?,
        Problem::ROnly => als::solve_r_given_q(prob, known("r-only")?.q(), &opts)?,
    })
}

/// Pick `alpha` halfway to the nearer finite edge of the PSD interval,
/// preferring the positive side.
fn default_alpha(noise: &NoiseSpec, dq: &DMatrix<f64>, dr: &DMatrix<f64>) -> Option<f64> {
    let (q_lo, q_hi) = psd_alpha_interval(noise.q(), dq);
    let (r_lo, r_hi) = psd_alpha_interval(noise.r(), dr);
    let (lo, hi) = (q_lo.max(r_lo), q_hi.min(r_hi));
    if hi > 0.0 {
        Some(if hi.is_finite() { 0.5 * hi } else { 1.0 })
    } else if lo < 0.0 {
        Some(if lo.is_finite() { 0.5 * lo } else { -1.0 })
    } else {
        None
    }
}

fn equivalent_pair(
    ctx: &Context,
    d: &Designed,
    report: &IdentifiabilityReport,
    noise: &NoiseSpec,
) -> Result<Option<EquivalentPair>, CliError> {
    let Some(w) = report.witnesses.first() else {
        return Ok(None);
    };
    let (dq, dr) = w.direction();
    let alpha = match ctx.res.alpha.or_else(|| default_alpha(noise, &dq, &dr)) {
        Some(a) => a,
        None => return Ok(None),
    };
    Ok(Some(equivalent_covariance_pair(
        &d.ed,
        noise,
        w,
        alpha,
        report.window,
    )?))
}

fn out_dir(ctx: &Context) -> Result<Option<PathBuf>, CliError> {
    if let Some(dir) = &ctx.res.out {
        fs::create_dir_all(dir)?;
    }
    Ok(ctx.res.out.clone())
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Parse(e.to_string()))?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn structural_lines(sys: &LtiSystem, gate: &Gate) -> Vec<String> {
    let mut lines = vec![format!(
        "System: n={}, p={}, q={}, g={}.",
        sys.n(),
        sys.p(),
        sys.q(),
        sys.g_dim()
    )];
    let rm = &gate.rank_matching;
    lines.push(format!(
        "Rank matching: rank [[CB, D], [D, 0]] = {} {} {} + {} ({}).",
        rm.r1,
        if rm.passed { "=" } else { "!=" },
        rm.r2,
        rm.r3,
        if rm.passed { "passes" } else { "fails" }
    ));
    if let Some(s) = &gate.structural {
        lines.push(format!(
            "Invariant zeros: {}; minimum phase: {}; strongly detectable: {}.",
            fmt_zeros(s),
            yes_no(s.minimum_phase),
            yes_no(s.strongly_detectable)
        ));
    }
    for c in gate.validation.failed() {
        lines.push(format!("Validation failed: {} ({}).", c.name, c.evidence));
    }
    lines
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn gains_line(d: &Designed, seed: u64) -> String {
    let how = if d.source == "file" {
        "from file".to_string()
    } else {
        format!("designed (root seed {seed})")
    };
    format!(
        "Gains {how}: F = {}, L = {}; spectral radius of A - K C = {:.6}.",
        fmt_matrix(d.gains.f()),
        fmt_matrix(d.gains.l()),
        d.ed.spectral_radius()
    )
}

/// Entries below `1e-12` of the largest one print as zero.
fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let floor = 1e-12 * m.amax();
    let rows: Vec<String> = linalg::to_rows(m)
        .iter()
        .map(|r| {
            let cells: Vec<String> = r
                .iter()
                .map(|x| format!("{}", if x.abs() <= floor { 0.0 } else { round(*x) }))
                .collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

/// Twelve significant digits for display; JSON keeps full precision.
fn round(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x + 0.0;
    }
    let digits = 12 - x.abs().log10().ceil() as i32;
    let scale = 10f64.powi(digits.clamp(-300, 300));
    (x * scale).round() / scale + 0.0
}

fn solution_line(label: &str, s: &AlsSolution) -> String {
    format!(
        "Estimate ({label}, {:?}): Q_hat = {}, R_hat = {}, residual {:.3e}, solution-set dimension {}.",
        s.regularization,
        fmt_matrix(&s.q()),
        fmt_matrix(&s.r()),
        s.residual_norm,
        s.nullity
    )
}

fn pair_line(p: &EquivalentPair) -> String {
    format!(
        "Equivalent pair at alpha={} (feasible [{}, {}]): Q' = {}, R' = {}; stacks differ by {:.1e} relative ({}).",
        round(p.alpha),
        round(p.alpha_interval.0),
        round(p.alpha_interval.1),
        fmt_matrix(&p.q_prime.to_matrix()),
        fmt_matrix(&p.r_prime.to_matrix()),
        p.relative_stack_difference,
        if p.certified { "certified" } else { "NOT certified" }
    )
}

pub fn analyze(cfg: &RunConfig) -> Result<String, CliError> {
    let ctx = load(cfg)?;
    let mut g = assess(&ctx.sys);
    let mut doc = ctx.header("analyze");
    doc["validation"] = json!(g.validation);
    doc["rank_matching"] = json!(g.rank_matching);
    doc["structural"] = json!(g.structural);
    if let Some(dir) = out_dir(&ctx)? {
        write_json(&dir, "analysis.json", &doc)?;
    }
    let text = structural_lines(&ctx.sys, &g).join("\n");
    match g.failure.take() {
        Some(e) => {
            eprintln!("{text}");
            Err(e)
        }
        None => Ok(text),
    }
}

pub fn design(cfg: &RunConfig) -> Result<String, CliError> {
    let ctx = load(cfg)?;
    gate(&ctx)?;
    let d = obtain_gains(&ctx, true)?;
    let mut doc = ctx.header("design");
    doc["gains"] = gains_json(&d);
    match out_dir(&ctx)? {
        Some(dir) => {
            write_json(&dir, "gains.json", &GainsFile::from_gains(&d.gains))?;
            write_json(&dir, "design.json", &doc)?;
            Ok(gains_line(&d, ctx.res.seed))
        }
        None => Ok(
            serde_json::to_string_pretty(&GainsFile::from_gains(&d.gains))
                .expect("gains serialize"),
        ),
    }
}

pub fn simulate_cmd(cfg: &RunConfig) -> Result<String, CliError> {
    let ctx = load(cfg)?;
    gate(&ctx)?;
    let d = obtain_gains(&ctx, false)?;
    let noise = ctx.require_noise("simulation")?;
    let nd = ctx.require_nd()?;
    let dir = out_dir(&ctx)?
        .ok_or_else(|| CliError::Parse("simulate writes CSV files and needs --out <dir>".into()))?;
    let (traj, _) = simulate(&ctx, &d, &noise, nd)?;
    let x0 = DVector::zeros(ctx.sys.n());
    let run = run_filter(&ctx.sys, &d.gains, &traj.outputs, &x0)?;
    uio::write_trajectory_csv(create(&dir, "trajectory.csv")?, &traj)?;
    uio::write_innovations_csv(create(&dir, "innovations.csv")?, &run.transformed)?;
    uio::write_filter_run_csv(create(&dir, "filter_run.csv")?, &run)?;
    let mut doc = ctx.header("simulate");
    doc["gains"] = gains_json(&d);
    doc["steps"] = json!(nd);
    doc["simulation_seed"] = json!(traj.seed);
    write_json(&dir, "simulation.json", &doc)?;
    Ok(format!("Simulated {nd} steps into {}.", dir.display()))
}

struct Estimates {
    analytic: Option<(AlsProblem, AlsSolution)>,
    empirical: Option<(AlsProblem, AlsSolution, Trajectory, Vec<DVector<f64>>)>,
}

fn estimates(
    ctx: &Context,
    d: &Designed,
    window: usize,
    want_analytic: bool,
) -> Result<Estimates, CliError> {
    let noise = ctx.noise()?;
    let analytic = match (&noise, want_analytic) {
        (Some(noise), true) => {
            let prob = AlsProblem::analytic(&d.ed, noise, window)?;
            let sol = solve(ctx, &prob, Some(noise))?;
            Some((prob, sol))
        }
        _ => None,
    };
    let empirical = match ctx.res.nd {
        Some(nd) => {
            let noise = ctx.require_noise("simulation")?;
            let (traj, innov) = simulate(ctx, d, &noise, nd)?;
            let prob =
                AlsProblem::empirical(&d.ed, &innov, window, als::default_burn_in(ctx.sys.n()))?;
            let sol = solve(ctx, &prob, Some(&noise))?;
            Some((prob, sol, traj, innov))
        }
        None => None,
    };
    Ok(Estimates {
        analytic,
        empirical,
    })
}

pub fn estimate(cfg: &RunConfig) -> Result<String, CliError> {
    let ctx = load(cfg)?;
    gate(&ctx)?;
    let window = ctx.res.require_window()?;
    let d = obtain_gains(&ctx, false)?;
    if ctx.res.nd.is_none() && ctx.noise()?.is_none() {
        return Err(CliError::Parse(
            "estimate needs data (--nd with Q and R to simulate) or Q and R for the analytic b"
                .into(),
        ));
    }
    let est = estimates(&ctx, &d, window, ctx.res.nd.is_none())?;
    let mut doc = ctx.header("estimate");
    doc["gains"] = gains_json(&d);
    doc["window"] = json!(window);
    doc["problem"] = json!(ctx.res.problem);
    let mut lines = Vec::new();
    let dir = out_dir(&ctx)?;
    if let Some((prob, sol)) = &est.analytic {
        doc["analytic"] = json!(sol);
        lines.push(solution_line("analytic b", sol));
        if let Some(dir) = &dir {
            write_json(dir, "als_bundle_analytic.json", &prob.to_bundle())?;
        }
    }
    if let Some((prob, sol, _, _)) = &est.empirical {
        doc["empirical"] = json!(sol);
        lines.push(solution_line("empirical b", sol));
        if let Some(dir) = &dir {
            write_json(dir, "als_bundle_empirical.json", &prob.to_bundle())?;
        }
    }
    if let Some(dir) = &dir {
        write_json(dir, "estimate.json", &doc)?;
    }
    Ok(lines.join("\n"))
}

pub fn witness(cfg: &RunConfig) -> Result<String, CliError> {
    let ctx = load(cfg)?;
    gate(&ctx)?;
    let window = ctx.res.require_window()?;
    let d = obtain_gains(&ctx, false)?;
    let mats = als::build_als_matrices(&d.ed, window)?;
    let report = identifiability_report(&ctx.sys, &d.gains, &d.ed, &mats, DEFAULT_RANK_TOL)?;
    let pair = match ctx.noise()? {
        Some(noise) => equivalent_pair(&ctx, &d, &report, &noise)?,
        None => None,
    };
    let mut text = report.render_text();
    if let Some(p) = &pair {
        text.push_str(&pair_line(p));
        text.push('\n');
    }
    let mut doc = ctx.header("witness");
    doc["identifiability"] = json!(report);
    doc["equivalent_pair"] = json!(pair);
    if let Some(dir) = out_dir(&ctx)? {
        write_json(&dir, "identifiability.json", &doc)?;
        write_text(&dir, "identifiability.txt", &text)?;
    }
    Ok(text.trim_end().to_string())
}

pub fn report(cfg: &RunConfig) -> Result<String, CliError> {
    let ctx = load(cfg)?;
    let g = gate(&ctx)?;
    let window = ctx.res.require_window()?;
    let d = obtain_gains(&ctx, false)?;
    let mats = als::build_als_matrices(&d.ed, window)?;
    let ident = identifiability_report(&ctx.sys, &d.gains, &d.ed, &mats, DEFAULT_RANK_TOL)?;
    let noise = ctx.noise()?;
    let est = estimates(&ctx, &d, window, true)?;
    let pair = match &noise {
        Some(noise) => equivalent_pair(&ctx, &d, &ident, noise)?,
        None => None,
    };

    let mut lines = structural_lines(&ctx.sys, &g);
    lines.push(gains_line(&d, ctx.res.seed));
    lines.extend(ident.render_text().lines().map(String::from));
    if let Some((_, sol)) = &est.analytic {
        lines.push(solution_line("analytic b", sol));
    }
    if let Some((_, sol, _, _)) = &est.empirical {
        lines.push(solution_line("empirical b", sol));
    }
    if let Some(p) = &pair {
        lines.push(pair_line(p));
    }
    let summary = lines.join("\n");

    let mut doc = ctx.header("report");
    doc["validation"] = json!(g.validation);
    doc["rank_matching"] = json!(g.rank_matching);
    doc["structural"] = json!(g.structural);
    doc["gains"] = gains_json(&d);
    doc["rank_summary"] = json!(ident.ranks.summary());
    doc["identifiability"] = json!(ident);
    doc["analytic_estimate"] = json!(est.analytic.as_ref().map(|(_, s)| s));
    doc["empirical_estimate"] = json!(est.empirical.as_ref().map(|(_, s, _, _)| s));
    doc["equivalent_pair"] = json!(pair);
    doc["summary"] = json!(summary);

    if let Some(dir) = out_dir(&ctx)? {
        write_json(&dir, "report.json", &doc)?;
        write_text(&dir, "summary.txt", &format!("{summary}\n"))?;
        if let Some(noise) = &noise {
            let stack = dynamics::analytic_autocov(&d.ed, noise, window)?;
            uio::write_autocov_csv(create(&dir, "autocov_analytic.csv")?, &stack)?;
        }
        if let Some((_, _, traj, innov)) = &est.empirical {
            uio::write_trajectory_csv(create(&dir, "trajectory.csv")?, traj)?;
            uio::write_innovations_csv(create(&dir, "innovations.csv")?, innov)?;
            let burn = als::default_burn_in(ctx.sys.n()).min(innov.len());
            let stack = als::empirical_autocov(&innov[burn..], window)?;
            uio::write_autocov_csv(create(&dir, "autocov_empirical.csv")?, &stack)?;
        }
    }
    Ok(summary)
}
