//! Boundary-value shooting for minimizing MPPs.
//!
//! Given a frame point u0 over x0 and a target y in the chart, the solver
//! searches over the initial momentum ξ_0 ∈ R^{d+dk} for a normal
//! geodesic of the frame-bundle Hamiltonian whose base endpoint hits y.
//! The endpoint map is only d-dimensional, so the system is
//! underdetermined and generally multi-modal; a damped least-squares
//! iteration with deterministic seeded multi-start is used, and among
//! converged momenta the least sub-Riemannian energy wins, ties broken by
//! the smallest momentum norm.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::frame::{
    self, CotangentState, FrameError, FramePoint, DEFAULT_HORIZONTALITY_TOL,
};
use crate::geometry::ChartManifold;
use crate::ode::{self, IntegratorConfig, Trajectory};
use crate::optim::{levenberg_marquardt, LmOptions};

#[derive(Clone)]
pub struct ShootingProblem {
    pub manifold: ChartManifold,
    pub u0: FramePoint,
    /// Target chart point for the base endpoint π(z_1).
    pub target: DVector<f64>,
    /// Total solver attempts: the first starts from the chart-linear
    /// initialization, the rest from seeded perturbations of it.
    pub restarts: usize,
}

#[derive(Clone, Debug)]
pub struct ShootConfig {
    pub integrator: IntegratorConfig,
    pub seed: u64,
    /// Endpoint chart-distance below which an attempt counts as converged.
    pub accept_tol: f64,
    pub lm: LmOptions,
    /// Relative extent of the multi-start perturbations.
    pub perturbation_scale: f64,
}

impl Default for ShootConfig {
    fn default() -> Self {
        ShootConfig {
            integrator: IntegratorConfig::rk4(1000),
            seed: 0,
            accept_tol: 1e-8,
            lm: LmOptions::default(),
            perturbation_scale: 0.4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ShootResult {
    /// Selected initial momentum [ξ_x | ξ_u column-major].
    pub xi0: DVector<f64>,
    pub trajectory: Trajectory,
    /// Sub-Riemannian energy of the selected path (= squared distance for
    /// the unit time horizon).
    pub energy: f64,
    /// Endpoint chart distance |π(z_1) - y|.
    pub residual: f64,
    pub converged: bool,
    pub attempts: usize,
}

#[derive(Debug, Error)]
pub enum ShootError {
    #[error("target {0:?} outside the chart domain")]
    TargetOutsideChart(Vec<f64>),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("no shooting attempt produced an integrable trajectory")]
    NothingIntegrable,
}

fn endpoint(
    m: &ChartManifold,
    u0: &FramePoint,
    xi0: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> Option<DVector<f64>> {
    let (d, k, lambda) = (u0.dim(), u0.rank(), u0.lambda());
    let mut y0 = DVector::zeros(2 * (d + d * k));
    y0.rows_mut(0, d).copy_from(u0.x());
    y0.rows_mut(d, d * k)
        .copy_from(&DVector::from_column_slice(u0.u().as_slice()));
    y0.rows_mut(d + d * k, d + d * k).copy_from(xi0);
    let mc = m.clone();
    let rhs = move |_t: f64, y: &DVector<f64>| frame::rhs_flat(&mc, d, k, lambda, y);
    ode::integrate(&rhs, &y0, cfg)
        .ok()
        .map(|traj| traj.last_state().rows(0, d).clone_owned())
}

/// Chart-linear initialization: ξ_x = g(x0)(y - x0)/T, ξ_u = 0. For the
/// identity chart this is exact; elsewhere it seeds the iteration.
fn initial_momentum(
    m: &ChartManifold,
    u0: &FramePoint,
    target: &DVector<f64>,
    t_end: f64,
) -> Result<DVector<f64>, ShootError> {
    let d = u0.dim();
    let k = u0.rank();
    let jet = m.geometry_jet(u0.x().as_slice()).map_err(FrameError::from)?;
    let mut xi = DVector::zeros(d + d * k);
    let v = (target - u0.x()) / t_end;
    xi.rows_mut(0, d).copy_from(&(&jet.g * v));
    Ok(xi)
}

pub fn shoot_mpp(problem: &ShootingProblem, cfg: &ShootConfig) -> Result<ShootResult, ShootError> {
    let m = &problem.manifold;
    if !m.contains(problem.target.as_slice()) {
        return Err(ShootError::TargetOutsideChart(
            problem.target.as_slice().to_vec(),
        ));
    }
    let u0 = &problem.u0;
    let (d, k, lambda) = (u0.dim(), u0.rank(), u0.lambda());
    let attempts = problem.restarts.max(1);
    let xi_init = initial_momentum(m, u0, &problem.target, cfg.integrator.t_end)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let residual_fn = |xi: &DVector<f64>| -> Option<DVector<f64>> {
        endpoint(m, u0, xi, &cfg.integrator).map(|e| e - &problem.target)
    };

    struct Candidate {
        xi0: DVector<f64>,
        traj: Trajectory,
        energy: f64,
        residual: f64,
    }
    let mut converged: Vec<Candidate> = Vec::new();
    let mut best_failed: Option<(f64, DVector<f64>)> = None;

    for attempt in 0..attempts {
        let start = if attempt == 0 {
            xi_init.clone()
        } else {
            // widen the perturbations as attempts progress
            let ramp = attempt as f64 / attempts as f64;
            let scale = cfg.perturbation_scale * ramp * (1.0 + xi_init.amax());
            let mut xi = xi_init.clone();
            for v in xi.iter_mut() {
                *v += scale * rng.gen_range(-1.0..1.0);
            }
            xi
        };
        let Some(lm) = levenberg_marquardt(&residual_fn, &start, &cfg.lm) else {
            continue;
        };
        if lm.residual_norm <= cfg.accept_tol {
            let z0 = CotangentState::new(
                u0.clone(),
                lm.x.rows(0, d).clone_owned(),
                DMatrix::from_column_slice(d, k, lm.x.rows(d, d * k).as_slice()),
            )?;
            if let Ok(traj) = frame::integrate_mpp(m, &z0, &cfg.integrator) {
                let (xs, us) = frame::project_fm(d, k, &traj);
                let energy = frame::sub_riemannian_energy(
                    m,
                    &traj.times,
                    &xs,
                    &us,
                    lambda,
                    DEFAULT_HORIZONTALITY_TOL,
                )?;
                converged.push(Candidate {
                    xi0: lm.x,
                    traj,
                    energy,
                    residual: lm.residual_norm,
                });
                continue;
            }
        }
        match &best_failed {
            Some((r, _)) if *r <= lm.residual_norm => {}
            _ => best_failed = Some((lm.residual_norm, lm.x)),
        }
    }

    if converged.is_empty() {
        let (residual, xi0) = best_failed.ok_or(ShootError::NothingIntegrable)?;
        let z0 = CotangentState::new(
            u0.clone(),
            xi0.rows(0, d).clone_owned(),
            DMatrix::from_column_slice(d, k, xi0.rows(d, d * k).as_slice()),
        )?;
        let traj = frame::integrate_mpp(m, &z0, &cfg.integrator)
            .map_err(|_| ShootError::NothingIntegrable)?;
        return Ok(ShootResult {
            xi0,
            trajectory: traj,
            energy: f64::NAN,
            residual,
            converged: false,
            attempts,
        });
    }

    // least energy, ties broken by smallest momentum norm
    let mut best = 0;
    for i in 1..converged.len() {
        let (ei, eb) = (converged[i].energy, converged[best].energy);
        let tie = (ei - eb).abs() <= 1e-9 * eb.abs().max(1e-12);
        if (tie && converged[i].xi0.norm() < converged[best].xi0.norm()) || (!tie && ei < eb) {
            best = i;
        }
    }
    let chosen = converged.swap_remove(best);
    Ok(ShootResult {
        xi0: chosen.xi0,
        trajectory: chosen.traj,
        energy: chosen.energy,
        residual: chosen.residual,
        converged: true,
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::LandmarkManifold;
    use crate::surfaces::{make_surface, SurfaceSpec};
    use approx::assert_relative_eq;

    fn isotropic_frame(m: &ChartManifold, x: &[f64]) -> FramePoint {
        let jet = m.geometry_jet(x).unwrap();
        // columns g-orthonormal: u = L⁻ᵀ with g = L Lᵀ
        let l = jet.g.cholesky().unwrap().l();
        let u = l.transpose().try_inverse().unwrap();
        FramePoint::new(DVector::from_column_slice(x), u, 0.0).unwrap()
    }

    #[test]
    fn flat_plane_exact_recovery() {
        let m = make_surface(&SurfaceSpec::Plane).unwrap();
        let u0 = FramePoint::new(DVector::zeros(2), DMatrix::identity(2, 2), 0.0).unwrap();
        let problem = ShootingProblem {
            manifold: m,
            u0,
            target: DVector::from_column_slice(&[1.0, 0.0]),
            restarts: 8,
        };
        let cfg = ShootConfig {
            integrator: IntegratorConfig::rk4(100),
            ..ShootConfig::default()
        };
        let res = shoot_mpp(&problem, &cfg).unwrap();
        assert!(res.converged);
        assert!(res.residual <= 1e-8);
        let expected = DVector::from_column_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(
            (res.xi0.clone() - expected).amax() < 1e-8,
            "xi0 = {:?}",
            res.xi0.as_slice()
        );
        assert_relative_eq!(res.energy, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn multistart_is_deterministic() {
        let m = make_surface(&SurfaceSpec::Sphere { radius: 1.0 }).unwrap();
        let u0 = FramePoint::new(
            DVector::zeros(2),
            DMatrix::from_column_slice(2, 2, &[0.7, 0.1, 0.0, 0.3]),
            0.0,
        )
        .unwrap();
        let problem = ShootingProblem {
            manifold: m,
            u0,
            target: DVector::from_column_slice(&[0.4, 0.2]),
            restarts: 4,
        };
        let cfg = ShootConfig {
            integrator: IntegratorConfig::rk4(200),
            seed: 123,
            ..ShootConfig::default()
        };
        let a = shoot_mpp(&problem, &cfg).unwrap();
        let b = shoot_mpp(&problem, &cfg).unwrap();
        assert!(a.converged && b.converged);
        assert_eq!(a.xi0.as_slice(), b.xi0.as_slice(), "selected momentum must be bit-identical");
    }

    #[test]
    fn sphere_isotropic_energy_matches_squared_distance() {
        let m = make_surface(&SurfaceSpec::Sphere { radius: 1.0 }).unwrap();
        let u0 = isotropic_frame(&m, &[0.0, 0.0]);
        // target at great-circle distance 1 from the north pole image
        let ang: f64 = 1.0;
        let target = crate::surfaces::sphere_chart_of(1.0, &[ang.sin(), 0.0, ang.cos()]);
        let problem = ShootingProblem {
            manifold: m,
            u0,
            target: DVector::from_column_slice(&target),
            restarts: 4,
        };
        let cfg = ShootConfig {
            integrator: IntegratorConfig::rk4(400),
            ..ShootConfig::default()
        };
        let res = shoot_mpp(&problem, &cfg).unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.energy, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn landmark_translation_equivariance() {
        let lm = LandmarkManifold::new(2, 2, 0.5).unwrap();
        let m = lm.chart();
        let k = 1;
        let u = DMatrix::from_column_slice(4, k, &[1.0, 0.0, 1.0, 0.0]);
        let x = DVector::from_column_slice(&[-0.5, 0.0, 0.5, 0.0]);
        let target = DVector::from_column_slice(&[-0.5, 1.0, 0.5, 1.0]);

        let shift = DVector::from_column_slice(&[0.75, -0.3, 0.75, -0.3]);
        let mut lm = LmOptions::default();
        lm.residual_tol = 1e-13;
        let cfg = ShootConfig {
            integrator: IntegratorConfig::rk4(200),
            lm,
            ..ShootConfig::default()
        };

        let res = shoot_mpp(
            &ShootingProblem {
                manifold: m.clone(),
                u0: FramePoint::new(x.clone(), u.clone(), 0.05).unwrap(),
                target: target.clone(),
                restarts: 1,
            },
            &cfg,
        )
        .unwrap();
        let res_shift = shoot_mpp(
            &ShootingProblem {
                manifold: m,
                u0: FramePoint::new(&x + &shift, u, 0.05).unwrap(),
                target: &target + &shift,
                restarts: 1,
            },
            &cfg,
        )
        .unwrap();
        assert!(res.converged && res_shift.converged);

        // solution endpoints translate exactly (kernel depends on
        // differences only)
        let end = res.trajectory.last_state().rows(0, 4).clone_owned() + &shift;
        let end_shift = res_shift.trajectory.last_state().rows(0, 4).clone_owned();
        assert!(
            (end - end_shift).amax() < 1e-10,
            "translated endpoints differ"
        );
        let mut worst: f64 = 0.0;
        for (a, b) in res.trajectory.states.iter().zip(&res_shift.trajectory.states) {
            let shifted = a.rows(0, 4).clone_owned() + &shift;
            worst = worst.max((shifted - b.rows(0, 4)).amax());
        }
        assert!(worst < 1e-6, "translated trajectories differ by {worst:.3e}");
        assert_relative_eq!(res.energy, res_shift.energy, epsilon = 1e-8);
    }
}
