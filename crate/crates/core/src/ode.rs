//! Fixed-step explicit integrators with dense output.
//!
//! Euler is kept for fidelity with the original experiments; RK4 is the
//! default. The right-hand side may fail (chart exit, coincident
//! landmarks); integration then stops and returns the partial trajectory
//! together with the exit time.

use nalgebra::DVector;
use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Rk4,
}

#[derive(Clone, Debug)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub steps: usize,
    pub t_end: f64,
}

impl IntegratorConfig {
    pub fn rk4(steps: usize) -> Self {
        IntegratorConfig {
            scheme: Scheme::Rk4,
            steps,
            t_end: 1.0,
        }
    }

    pub fn euler(steps: usize) -> Self {
        IntegratorConfig {
            scheme: Scheme::Euler,
            steps,
            t_end: 1.0,
        }
    }

    pub fn with_t_end(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self
    }
}

/// Dense integrator output: uniform time grid and one state per node,
/// with optional per-node Hamiltonian and frame-conditioning diagnostics.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Hamiltonian at each node, recorded when integrating a Hamiltonian
    /// vector field.
    pub hamiltonian: Option<Vec<f64>>,
    /// Chart/manifold identifier.
    pub chart: Option<String>,
    /// Smallest singular value of the frame seen along the path.
    pub min_frame_sv: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("empty trajectory")
    }

    /// Relative Hamiltonian drift max_t |H_t - H_0| / max(|H_0|, eps).
    pub fn hamiltonian_drift(&self) -> Option<f64> {
        let h = self.hamiltonian.as_ref()?;
        let h0 = *h.first()?;
        let max_dev = h.iter().fold(0.0f64, |m, &v| m.max((v - h0).abs()));
        Some(max_dev / h0.abs().max(1e-300))
    }
}

#[derive(Debug, Error)]
pub enum IntegrationError {
    #[error("trajectory left the chart domain at t = {t:.6}: {source}")]
    ChartExit {
        t: f64,
        source: GeometryError,
        partial: Box<Trajectory>,
    },
    #[error("state became non-finite at t = {t:.6}")]
    NumericalBlowup { t: f64, partial: Box<Trajectory> },
}

impl IntegrationError {
    pub fn partial(&self) -> &Trajectory {
        match self {
            IntegrationError::ChartExit { partial, .. } => partial,
            IntegrationError::NumericalBlowup { partial, .. } => partial,
        }
    }
}

/// Integrate ż = rhs(t, z) over [0, t_end] with `steps` uniform steps,
/// returning states at all steps+1 nodes.
pub fn integrate<F>(
    rhs: &F,
    z0: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, IntegrationError>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>, GeometryError>,
{
    assert!(cfg.steps >= 1, "integrator needs at least one step");
    let h = cfg.t_end / cfg.steps as f64;
    let mut times = Vec::with_capacity(cfg.steps + 1);
    let mut states = Vec::with_capacity(cfg.steps + 1);
    times.push(0.0);
    states.push(z0.clone());

    let mut z = z0.clone();
    for step in 0..cfg.steps {
        let t = step as f64 * h;
        let next = step_once(rhs, t, &z, h, cfg.scheme);
        let partial = || {
            Box::new(Trajectory {
                times: times.clone(),
                states: states.clone(),
                hamiltonian: None,
                chart: None,
                min_frame_sv: None,
            })
        };
        match next {
            Ok(zn) => {
                if !zn.iter().all(|v| v.is_finite()) {
                    return Err(IntegrationError::NumericalBlowup {
                        t: t + h,
                        partial: partial(),
                    });
                }
                z = zn;
                times.push((step + 1) as f64 * h);
                states.push(z.clone());
            }
            Err(source) => {
                return Err(IntegrationError::ChartExit {
                    t,
                    source,
                    partial: partial(),
                })
            }
        }
    }

    Ok(Trajectory {
        times,
        states,
        hamiltonian: None,
        chart: None,
        min_frame_sv: None,
    })
}

fn step_once<F>(
    rhs: &F,
    t: f64,
    z: &DVector<f64>,
    h: f64,
    scheme: Scheme,
) -> Result<DVector<f64>, GeometryError>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>, GeometryError>,
{
    match scheme {
        Scheme::Euler => Ok(z + rhs(t, z)? * h),
        Scheme::Rk4 => {
            let k1 = rhs(t, z)?;
            let k2 = rhs(t + h / 2.0, &(z + &k1 * (h / 2.0)))?;
            let k3 = rhs(t + h / 2.0, &(z + &k2 * (h / 2.0)))?;
            let k4 = rhs(t + h, &(z + &k3 * h))?;
            Ok(z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exp_rhs(_t: f64, z: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        Ok(z.clone())
    }

    #[test]
    fn rk4_scalar_exponential() {
        let z0 = DVector::from_column_slice(&[1.0]);
        let traj = integrate(&exp_rhs, &z0, &IntegratorConfig::rk4(1000)).unwrap();
        assert_eq!(traj.len(), 1001);
        assert_relative_eq!(traj.last_state()[0], std::f64::consts::E, epsilon = 1e-10);
    }

    #[test]
    fn euler_first_order_on_exponential() {
        let z0 = DVector::from_column_slice(&[1.0]);
        let traj = integrate(&exp_rhs, &z0, &IntegratorConfig::euler(1000)).unwrap();
        let err = (traj.last_state()[0] - std::f64::consts::E).abs();
        assert!(err > 1e-5 && err < 1e-2, "euler error {err:.3e}");
    }

    #[test]
    fn rk4_richardson_order_four() {
        // ż = z², z0 = 1/2: exact z(t) = 1/(2 - t), endpoint z(1) = 1.
        let rhs = |_t: f64, z: &DVector<f64>| -> Result<DVector<f64>, GeometryError> {
            Ok(DVector::from_column_slice(&[z[0] * z[0]]))
        };
        let z0 = DVector::from_column_slice(&[0.5]);
        let err = |steps: usize| -> f64 {
            let traj = integrate(&rhs, &z0, &IntegratorConfig::rk4(steps)).unwrap();
            (traj.last_state()[0] - 1.0).abs()
        };
        let ratio = err(50) / err(100);
        assert!(
            (8.0..=32.0).contains(&ratio),
            "expected ~16x error reduction, got {ratio:.2}"
        );
    }

    #[test]
    fn rhs_failure_reports_exit_time_and_partial() {
        let rhs = |t: f64, z: &DVector<f64>| -> Result<DVector<f64>, GeometryError> {
            if t > 0.5 {
                Err(GeometryError::OutsideChart {
                    label: "test".into(),
                    point: vec![z[0]],
                })
            } else {
                Ok(DVector::from_column_slice(&[1.0]))
            }
        };
        let z0 = DVector::from_column_slice(&[0.0]);
        match integrate(&rhs, &z0, &IntegratorConfig::rk4(10)) {
            Err(IntegrationError::ChartExit { t, partial, .. }) => {
                assert!(t > 0.4 && t < 0.7);
                assert!(partial.len() >= 5);
            }
            other => panic!("expected chart exit, got {other:?}"),
        }
    }

    #[test]
    fn blowup_detected() {
        // ż = z³ from 1.0 blows up before t = 1.
        let rhs = |_t: f64, z: &DVector<f64>| -> Result<DVector<f64>, GeometryError> {
            Ok(DVector::from_column_slice(&[z[0] * z[0] * z[0]]))
        };
        let z0 = DVector::from_column_slice(&[1.0]);
        match integrate(&rhs, &z0, &IntegratorConfig::euler(30)) {
            Err(IntegrationError::NumericalBlowup { .. }) => {}
            other => panic!("expected blowup, got {other:?}"),
        }
    }
}
