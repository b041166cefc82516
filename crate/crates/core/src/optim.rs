//! Dense local optimizers: damped least squares for shooting and
//! Nelder-Mead for the derivative-free estimators. Both are deterministic.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct LmOptions {
    pub max_iters: usize,
    /// Stop when the residual 2-norm falls below this.
    pub residual_tol: f64,
    /// Relative forward-difference step for the Jacobian.
    pub fd_step_rel: f64,
    pub damping_init: f64,
    pub step_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iters: 60,
            residual_tol: 1e-10,
            fd_step_rel: 1e-6,
            damping_init: 1e-3,
            step_tol: 1e-14,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LmResult {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Levenberg-Marquardt with a forward-difference Jacobian. The residual
/// closure may fail (e.g. the underlying integration leaves the chart);
/// failed trial steps are rejected by raising the damping.
pub fn levenberg_marquardt<F>(f: &F, x0: &DVector<f64>, opts: &LmOptions) -> Option<LmResult>
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut x = x0.clone();
    let mut r = f(&x)?;
    let mut rnorm = r.norm();
    let mut mu = opts.damping_init;
    let n = x.len();

    for iter in 0..opts.max_iters {
        if rnorm <= opts.residual_tol {
            return Some(LmResult {
                x,
                residual_norm: rnorm,
                iterations: iter,
                converged: true,
            });
        }

        // J[:, j] = (f(x + h e_j) - f(x)) / h
        let m = r.len();
        let mut jac = DMatrix::zeros(m, n);
        for j in 0..n {
            let h = opts.fd_step_rel * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += h;
            match f(&xp) {
                Some(rp) => jac.set_column(j, &((rp - &r) / h)),
                None => { /* no information in this direction */ }
            }
        }

        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;

        let mut stepped = false;
        for _ in 0..25 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += mu;
            }
            let delta = match a.cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => {
                    mu *= 10.0;
                    continue;
                }
            };
            if delta.norm() < opts.step_tol {
                return Some(LmResult {
                    x,
                    residual_norm: rnorm,
                    iterations: iter,
                    converged: rnorm <= opts.residual_tol,
                });
            }
            let xn = &x + &delta;
            match f(&xn) {
                Some(rn) => {
                    let rn_norm = rn.norm();
                    if rn_norm < rnorm {
                        x = xn;
                        r = rn;
                        rnorm = rn_norm;
                        mu = (mu / 10.0).max(1e-14);
                        stepped = true;
                        break;
                    } else {
                        mu *= 10.0;
                    }
                }
                None => mu *= 10.0,
            }
            if mu > 1e14 {
                break;
            }
        }
        if !stepped {
            break;
        }
    }

    let converged = rnorm <= opts.residual_tol;
    Some(LmResult {
        x,
        residual_norm: rnorm,
        iterations: opts.max_iters,
        converged,
    })
}

#[derive(Clone, Debug)]
pub struct NmOptions {
    pub max_iters: usize,
    /// Initial simplex edge length.
    pub init_step: f64,
    /// Stop when the simplex diameter and value spread fall below these.
    pub x_tol: f64,
    pub f_tol: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        NmOptions {
            max_iters: 2000,
            init_step: 0.25,
            x_tol: 1e-9,
            f_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NmResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value after each iteration.
    pub history: Vec<f64>,
}

/// Nelder-Mead downhill simplex with standard coefficients. Objectives may
/// return `f64::INFINITY` to mark invalid points.
pub fn nelder_mead<F>(f: &F, x0: &DVector<f64>, opts: &NmOptions) -> NmResult
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x0.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<DVector<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.clone());
    for i in 0..n {
        let mut v = x0.clone();
        v[i] += opts.init_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut history = Vec::new();

    let mut iterations = 0;
    let mut converged = false;
    for iter in 0..opts.max_iters {
        iterations = iter + 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let sorted: Vec<DVector<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let sorted_vals: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = sorted;
        values = sorted_vals;
        history.push(values[0]);

        let diam = simplex
            .iter()
            .skip(1)
            .map(|v| (v - &simplex[0]).amax())
            .fold(0.0f64, f64::max);
        let spread = (values[n] - values[0]).abs();
        if diam < opts.x_tol && (spread < opts.f_tol || !spread.is_finite()) {
            converged = true;
            break;
        }

        let mut centroid = DVector::zeros(n);
        for v in simplex.iter().take(n) {
            centroid += v;
        }
        centroid /= n as f64;

        let reflected = &centroid + (&centroid - &simplex[n]) * alpha;
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = &centroid + (&reflected - &centroid) * gamma;
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] {
                &centroid + (&reflected - &centroid) * rho
            } else {
                &centroid + (&simplex[n] - &centroid) * rho
            };
            let fc = f(&contracted);
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = &simplex[0] + (&simplex[i] - &simplex[0]) * sigma;
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    NmResult {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        converged,
        history,
    }
}
