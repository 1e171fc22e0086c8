//! Derivative-free Nelder-Mead simplex minimizer for small parameter vectors.

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
}

pub(crate) struct NelderMead {
    pub max_iter: usize,
    pub f_tol: f64,
    pub initial_step: f64,
}

impl NelderMead {
    /// Minimize `f` from `x0`. Stops early once `f <= stop_below`.
    pub fn minimize<F>(&self, f: F, x0: &[f64], stop_below: f64) -> Minimum
    where
        F: Fn(&[f64]) -> f64,
    {
        let dim = x0.len();
        if dim == 0 {
            return Minimum {
                x: Vec::new(),
                value: f(x0),
            };
        }
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
        simplex.push(x0.to_vec());
        for i in 0..dim {
            let mut v = x0.to_vec();
            v[i] += if v[i].abs() > 1e-8 {
                self.initial_step * v[i].abs().max(1.0)
            } else {
                self.initial_step
            };
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

        for _ in 0..self.max_iter {
            let mut order: Vec<usize> = (0..=dim).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let best = values[0];
            let worst = values[dim];
            if best <= stop_below || (worst - best).abs() <= self.f_tol * (1.0 + best.abs()) {
                break;
            }

            let mut centroid = vec![0.0; dim];
            for v in &simplex[..dim] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / dim as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[dim])
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };

            let reflected = along(-1.0);
            let fr = f(&reflected);
            if fr < values[0] {
                let expanded = along(-2.0);
                let fe = f(&expanded);
                if fe < fr {
                    simplex[dim] = expanded;
                    values[dim] = fe;
                } else {
                    simplex[dim] = reflected;
                    values[dim] = fr;
                }
            } else if fr < values[dim - 1] {
                simplex[dim] = reflected;
                values[dim] = fr;
            } else {
                let contracted = if fr < values[dim] {
                    along(-0.5)
                } else {
                    along(0.5)
                };
                let fc = f(&contracted);
                if fc < values[dim].min(fr) {
                    simplex[dim] = contracted;
                    values[dim] = fc;
                } else {
                    // Shrink toward the best vertex.
                    let best_v = simplex[0].clone();
                    for i in 1..=dim {
                        for (x, b) in simplex[i].iter_mut().zip(&best_v) {
                            *x = b + 0.5 * (*x - b);
                        }
                        values[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let (i, &value) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty simplex");
        Minimum {
            x: simplex[i].clone(),
            value,
        }
    }
}
