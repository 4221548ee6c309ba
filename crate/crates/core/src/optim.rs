//! Derivative-free minimisation (Nelder–Mead simplex).
//!
//! Constraints are handled by rejection: the objective returns `+inf` (or
//! NaN, treated the same) outside the feasible region. The start point must
//! be feasible.

#[derive(Debug, Clone)]
pub struct NelderMead {
    /// Converged once every vertex is within `tol` of the best vertex in
    /// every coordinate.
    pub tol: f64,
    pub max_evals: usize,
    /// Per-coordinate offsets used to build the initial simplex.
    pub initial_step: Vec<f64>,
    /// Rebuild the simplex around the optimum this many times after
    /// convergence, which guards against a collapsed simplex.
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

impl NelderMead {
    pub fn new(initial_step: Vec<f64>) -> Self {
        Self {
            tol: 1e-8,
            max_evals: 10_000,
            initial_step,
            restarts: 2,
        }
    }

    pub fn minimize<F>(&self, mut f: F, x0: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        assert_eq!(x0.len(), self.initial_step.len(), "dimension mismatch");
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut best_x = x0.to_vec();
        let mut best_v = eval(&best_x, &mut evals);
        if !best_v.is_finite() {
            return Minimum {
                x: best_x,
                value: best_v,
                evals,
                converged: false,
            };
        }

        let mut converged = false;
        for _round in 0..=self.restarts {
            let (x, v, ok) = self.run(&mut eval, &best_x, best_v, &mut evals);
            let improved = v < best_v - 1e-12 * best_v.abs().max(1.0);
            if v <= best_v {
                best_x = x;
                best_v = v;
            }
            converged = ok;
            if !ok || !improved {
                break;
            }
        }
        Minimum {
            x: best_x,
            value: best_v,
            evals,
            converged,
        }
    }

    fn run<E>(&self, eval: &mut E, x0: &[f64], v0: f64, evals: &mut usize) -> (Vec<f64>, f64, bool)
    where
        E: FnMut(&[f64], &mut usize) -> f64,
    {
        let n = x0.len();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((x0.to_vec(), v0));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += self.initial_step[i];
            let mut v = eval(&x, evals);
            if !v.is_finite() {
                // step the other way if the first probe leaves the feasible region
                x[i] = x0[i] - self.initial_step[i];
                v = eval(&x, evals);
            }
            simplex.push((x, v));
        }

        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if self.diameter_below_tol(&simplex) {
                let (x, v) = simplex.swap_remove(0);
                return (x, v, true);
            }
            if *evals >= self.max_evals {
                let (x, v) = simplex.swap_remove(0);
                return (x, v, false);
            }

            let worst = simplex[n].1;
            let second_worst = simplex[n - 1].1;
            let best = simplex[0].1;
            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi / n as f64;
                }
            }
            let worst_x = simplex[n].0.clone();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&worst_x)
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };

            let xr = along(-1.0);
            let vr = eval(&xr, evals);
            if vr < best {
                let xe = along(-2.0);
                let ve = eval(&xe, evals);
                simplex[n] = if ve < vr { (xe, ve) } else { (xr, vr) };
                continue;
            }
            if vr < second_worst {
                simplex[n] = (xr, vr);
                continue;
            }
            let (xc, vc) = if vr < worst {
                let xc = along(-0.5);
                let vc = eval(&xc, evals);
                (xc, vc)
            } else {
                let xc = along(0.5);
                let vc = eval(&xc, evals);
                (xc, vc)
            };
            if vc < worst.min(vr) {
                simplex[n] = (xc, vc);
                continue;
            }
            // shrink toward the best vertex
            let x_best = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                for (xi, bi) in vertex.0.iter_mut().zip(&x_best) {
                    *xi = bi + 0.5 * (*xi - bi);
                }
                vertex.1 = eval(&vertex.0, evals);
            }
        }
    }

    fn diameter_below_tol(&self, simplex: &[(Vec<f64>, f64)]) -> bool {
        let best = &simplex[0].0;
        simplex[1..]
            .iter()
            .all(|(x, _)| x.iter().zip(best).all(|(a, b)| (a - b).abs() < self.tol))
    }
}
