//! Synthetic trajectories of the plant and their filter innovations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::filter::{run_filter, FilterGains};
use crate::linalg;
use crate::system::{LtiSystem, NoiseSpec};

/// Unknown-input generator. No statistical model is assumed for `d`; these
/// are just convenient test signals.
#[derive(Debug, Clone, PartialEq)]
pub enum UnknownInputSignal {
    Zero,
    /// `level` from step `time` on (1-based), zero before.
    Step {
        time: usize,
        level: Vec<f64>,
    },
    /// `amplitude * sin(2 pi k / period + phase)` for 1-based step `k`.
    Sinusoid {
        amplitude: Vec<f64>,
        period: f64,
        phase: f64,
    },
    /// Gaussian random walk started at zero.
    RandomWalk {
        step_cov: DMatrix<f64>,
        seed: u64,
    },
    Explicit(Vec<DVector<f64>>),
}

fn check_len(name: &str, v: &[f64], q: usize) -> Result<()> {
    if v.len() != q {
        return Err(Error::Dimension {
            matrix: name.into(),
            expected: format!("{q}"),
            found: format!("{}", v.len()),
        });
    }
    Ok(())
}

pub fn generate_unknown_input(
    signal: &UnknownInputSignal,
    steps: usize,
    q: usize,
) -> Result<Vec<DVector<f64>>> {
    match signal {
        UnknownInputSignal::Zero => Ok(vec![DVector::zeros(q); steps]),
        UnknownInputSignal::Step { time, level } => {
            check_len("step level", level, q)?;
            let on = DVector::from_column_slice(level);
            Ok((1..=steps)
                .map(|k| {
                    if k >= *time {
                        on.clone()
                    } else {
                        DVector::zeros(q)
                    }
                })
                .collect())
        }
        UnknownInputSignal::Sinusoid {
            amplitude,
            period,
            phase,
        } => {
            check_len("sinusoid amplitude", amplitude, q)?;
            if !(*period > 0.0) {
                return Err(Error::Parse(format!(
                    "sinusoid period must be positive, got {period}"
                )));
            }
            let amp = DVector::from_column_slice(amplitude);
            Ok((1..=steps)
                .map(|k| {
                    let angle = 2.0 * std::f64::consts::PI * k as f64 / period + phase;
                    &amp * angle.sin()
                })
                .collect())
        }
        UnknownInputSignal::RandomWalk { step_cov, seed } => {
            if step_cov.shape() != (q, q) {
                return Err(Error::dim(
                    "random walk covariance",
                    (q, q),
                    step_cov.shape(),
                ));
            }
            if linalg::min_sym_eigenvalue(step_cov) < -1e-12 * step_cov.norm().max(1.0) {
                return Err(Error::Covariance {
                    name: "random walk covariance".into(),
                    reason: "not positive semidefinite".into(),
                });
            }
            let factor = linalg::psd_factor(step_cov);
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut level = DVector::zeros(q);
            Ok((0..steps)
                .map(|_| {
                    level += &factor * gaussian(&mut rng, q);
                    level.clone()
                })
                .collect())
        }
        UnknownInputSignal::Explicit(seq) => {
            if seq.len() != steps {
                return Err(Error::InsufficientData {
                    needed: steps,
                    got: seq.len(),
                });
            }
            if let Some(k) = seq.iter().position(|d| d.len() != q) {
                return Err(Error::Dimension {
                    matrix: format!("d[{k}]"),
                    expected: format!("{q}"),
                    found: format!("{}", seq[k].len()),
                });
            }
            Ok(seq.clone())
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// Seed for replicate `index` of a run rooted at `root`: the first word of
/// ChaCha stream `index` keyed by `root`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(index);
    rng.random()
}

/// A simulated run. `states` has one more entry than the other sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub process_noise: Vec<DVector<f64>>,
    pub measurement_noise: Vec<DVector<f64>>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Largest deviation from `x(k+1) = A x + B d + G w`, `y = C x + D d + v`
    /// when replayed from the stored noises.
    pub fn replay_error(&self, sys: &LtiSystem) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.len() {
            let x = &self.states[k];
            let d = &self.inputs[k];
            let next = sys.a() * x + sys.b() * d + sys.g() * &self.process_noise[k];
            let y = sys.c() * x + sys.d() * d + &self.measurement_noise[k];
            worst = worst
                .max((next - &self.states[k + 1]).amax())
                .max((y - &self.outputs[k]).amax());
        }
        worst
    }
}

/// Simulate `steps = inputs.len()` steps from `x0`. Each step draws the
/// process noise then the measurement noise from a ChaCha stream seeded by
/// `seed`, shaped by symmetric square-root factors of `Q` and `R`.
pub fn simulate_plant(
    sys: &LtiSystem,
    noise: &NoiseSpec,
    inputs: &[DVector<f64>],
    x0: &DVector<f64>,
    seed: u64,
) -> Result<Trajectory> {
    noise.check_against(sys)?;
    let (n, q, g, p) = (sys.n(), sys.q(), sys.g_dim(), sys.p());
    if x0.len() != n {
        return Err(Error::dim("x0", (n, 1), (x0.len(), 1)));
    }
    if let Some(k) = inputs.iter().position(|d| d.len() != q) {
        return Err(Error::Dimension {
            matrix: format!("d[{k}]"),
            expected: format!("{q}"),
            found: format!("{}", inputs[k].len()),
        });
    }
    let sq = linalg::psd_factor(noise.q());
    let sr = linalg::psd_factor(noise.r());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = inputs.len();
    let mut traj = Trajectory {
        states: Vec::with_capacity(steps + 1),
        outputs: Vec::with_capacity(steps),
        inputs: inputs.to_vec(),
        process_noise: Vec::with_capacity(steps),
        measurement_noise: Vec::with_capacity(steps),
        seed,
    };
    let mut x = x0.clone();
    for d in inputs {
        let w = &sq * gaussian(&mut rng, g);
        let v = &sr * gaussian(&mut rng, p);
        let y = sys.c() * &x + sys.d() * d + &v;
        let next = sys.a() * &x + sys.b() * d + sys.g() * &w;
        traj.states.push(std::mem::replace(&mut x, next));
        traj.outputs.push(y);
        traj.process_noise.push(w);
        traj.measurement_noise.push(v);
    }
    traj.states.push(x);
    Ok(traj)
}

/// Transformed innovations `L (y(k) - C x_hat(k|k-1))` of a filter run over
/// the trajectory outputs.
pub fn innovation_sequence(
    sys: &LtiSystem,
    gains: &FilterGains,
    traj: &Trajectory,
    x0_hat: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    Ok(run_filter(sys, gains, &traj.outputs, x0_hat)?.transformed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::example_gains;
    use crate::system::example_system;

    fn scalars(v: &[DVector<f64>]) -> Vec<f64> {
        v.iter().map(|d| d[0]).collect()
    }

    #[test]
    fn zero_signal() {
        let d = generate_unknown_input(&UnknownInputSignal::Zero, 5, 1).unwrap();
        assert_eq!(scalars(&d), vec![0.0; 5]);
    }

    #[test]
    fn step_signal() {
        let spec = UnknownInputSignal::Step {
            time: 3,
            level: vec![2.0],
        };
        let d = generate_unknown_input(&spec, 5, 1).unwrap();
        assert_eq!(scalars(&d), vec![0.0, 0.0, 2.0, 2.0, 2.0]);
        assert!(generate_unknown_input(&spec, 5, 2).is_err());
    }

    #[test]
    fn random_walk_is_reproducible() {
        let spec = UnknownInputSignal::RandomWalk {
            step_cov: DMatrix::identity(2, 2) * 0.1,
            seed: 9,
        };
        let a = generate_unknown_input(&spec, 50, 2).unwrap();
        let b = generate_unknown_input(&spec, 50, 2).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|d| d.amax() > 0.0));
    }

    #[test]
    fn explicit_signal_echoes() {
        let seq = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-3.0])];
        let d = generate_unknown_input(&UnknownInputSignal::Explicit(seq.clone()), 2, 1).unwrap();
        assert_eq!(d, seq);
        assert!(generate_unknown_input(&UnknownInputSignal::Explicit(seq), 2, 2).is_err());
    }

    #[test]
    fn noise_free_zero_run() {
        let sys = example_system();
        let noise = NoiseSpec::semidefinite(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)).unwrap();
        let traj = simulate_plant(
            &sys,
            &noise,
            &vec![DVector::zeros(1); 20],
            &DVector::zeros(2),
            3,
        )
        .unwrap();
        assert!(traj
            .states
            .iter()
            .chain(&traj.outputs)
            .all(|v| v.amax() == 0.0));
    }

    #[test]
    fn noise_free_integrator_accumulates_step() {
        let sys = LtiSystem::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let noise = NoiseSpec::semidefinite(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)).unwrap();
        let level = vec![0.5, -1.0];
        let d = generate_unknown_input(
            &UnknownInputSignal::Step {
                time: 4,
                level: level.clone(),
            },
            10,
            2,
        )
        .unwrap();
        let traj = simulate_plant(&sys, &noise, &d, &DVector::zeros(2), 0).unwrap();
        for (k, x) in traj.states.iter().enumerate() {
            // x(k) = sum_{i < k} d(i); d(i) is on for 1-based step >= 4, i.e. i >= 3.
            let active = k.saturating_sub(3) as f64;
            assert_eq!(x[0], 0.5 * active);
            assert_eq!(x[1], -active);
        }
    }

    #[test]
    fn replay_and_determinism() {
        let sys = example_system();
        let noise = NoiseSpec::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let d = vec![DVector::zeros(1); 200];
        let a = simulate_plant(&sys, &noise, &d, &DVector::zeros(2), 11).unwrap();
        let b = simulate_plant(&sys, &noise, &d, &DVector::zeros(2), 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replay_error(&sys), 0.0);
        let c = simulate_plant(&sys, &noise, &d, &DVector::zeros(2), 12).unwrap();
        assert_ne!(a.outputs, c.outputs);
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: Vec<u64> = (0..8).map(|i| derive_seed(42, i)).collect();
        let mut unique = seeds.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), seeds.len());
        assert_eq!(derive_seed(42, 3), seeds[3]);
    }

    #[test]
    fn exact_start_without_noise_gives_zero_innovations() {
        let sys = example_system();
        let gains = example_gains(&sys).unwrap();
        let noise = NoiseSpec::semidefinite(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)).unwrap();
        let d = generate_unknown_input(
            &UnknownInputSignal::Sinusoid {
                amplitude: vec![1.0],
                period: 7.0,
                phase: 0.3,
            },
            50,
            1,
        )
        .unwrap();
        let x0 = DVector::from_vec(vec![1.0, -2.0]);
        let traj = simulate_plant(&sys, &noise, &d, &x0, 0).unwrap();
        let ys = innovation_sequence(&sys, &gains, &traj, &x0).unwrap();
        assert!(ys.iter().all(|y| y.amax() < 1e-9));
    }
}
