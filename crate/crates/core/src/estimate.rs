//! Intrinsic mean and mean/covariance estimators built on the
//! sub-Riemannian distance.
//!
//! Squared distances to the fibers over the data are realized by geodesic
//! shooting; the outer optimization is derivative-free (Nelder-Mead). The
//! joint estimator minimizes
//!
//! ```text
//!   F(x, u) = Σ_i d(s(x,u), π⁻¹(x_i))² + N · log det_g(u)
//! ```
//!
//! In a flat chart with k = d this is minimized at the sample mean and at
//! u uᵀ = 2·(maximum-likelihood sample covariance); the factor 2 comes
//! from the missing 1/2 in the squared distance relative to the Gaussian
//! exponent and is fixed by the one-dimensional closed form (see tests).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::frame::{FrameError, FramePoint};
use crate::geometry::ChartManifold;
use crate::ode::IntegratorConfig;
use crate::optim::{nelder_mead, NmOptions};
use crate::shoot::{shoot_mpp, ShootConfig, ShootingProblem};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("estimator needs at least {needed} data points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate sample: all points coincide, covariance collapses")]
    DegenerateSample,
    #[error("rank k = {k} must satisfy 1 ≤ k ≤ d = {d}")]
    BadRank { k: usize, d: usize },
    #[error("shooting failed for data point {index}")]
    ShootFailed { index: usize },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Clone, Debug)]
pub struct EstimatorOptions {
    pub integrator: IntegratorConfig,
    pub seed: u64,
    /// Shooting attempts per distance evaluation.
    pub shoot_restarts: usize,
    pub nm: NmOptions,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            integrator: IntegratorConfig::rk4(100),
            seed: 0,
            shoot_restarts: 1,
            nm: NmOptions::default(),
        }
    }
}

/// Squared sub-Riemannian distance from a frame point to the fiber over
/// `y` (energy of the minimizing normal MPP, scaled by the horizon).
fn squared_distance(
    m: &ChartManifold,
    u0: &FramePoint,
    y: &DVector<f64>,
    opts: &EstimatorOptions,
) -> Option<f64> {
    let problem = ShootingProblem {
        manifold: m.clone(),
        u0: u0.clone(),
        target: y.clone(),
        restarts: opts.shoot_restarts,
    };
    let cfg = ShootConfig {
        integrator: opts.integrator.clone(),
        seed: opts.seed,
        ..ShootConfig::default()
    };
    match shoot_mpp(&problem, &cfg) {
        Ok(r) if r.converged => Some(r.energy * cfg.integrator.t_end),
        _ => None,
    }
}

fn sum_squared_distances(
    m: &ChartManifold,
    u0: &FramePoint,
    data: &[DVector<f64>],
    opts: &EstimatorOptions,
) -> Vec<Option<f64>> {
    data.par_iter()
        .map(|y| squared_distance(m, u0, y, opts))
        .collect()
}

#[derive(Clone, Debug)]
pub struct FrechetResult {
    pub mean: DVector<f64>,
    /// Sub-Riemannian distances from the estimate to each data fiber.
    pub distances: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Best objective value per outer iteration.
    pub history: Vec<f64>,
}

/// Fiber-lifted intrinsic mean: argmin over x of
/// Σ_i d(s(x), π⁻¹(x_i))² for a fixed section x ↦ FramePoint.
pub fn frechet_mean_fm<S>(
    m: &ChartManifold,
    data: &[DVector<f64>],
    section: S,
    opts: &EstimatorOptions,
) -> Result<FrechetResult, EstimateError>
where
    S: Fn(&DVector<f64>) -> Result<FramePoint, FrameError> + Sync,
{
    if data.is_empty() {
        return Err(EstimateError::TooFewPoints { needed: 1, got: 0 });
    }
    let d = data[0].len();
    let mut init = DVector::zeros(d);
    for y in data {
        init += y;
    }
    init /= data.len() as f64;

    let objective = |x: &DVector<f64>| -> f64 {
        let Ok(u0) = section(x) else {
            return f64::INFINITY;
        };
        if !m.contains(x.as_slice()) {
            return f64::INFINITY;
        }
        let parts = sum_squared_distances(m, &u0, data, opts);
        let mut total = 0.0;
        for p in parts {
            match p {
                Some(v) => total += v,
                None => return f64::INFINITY,
            }
        }
        total
    };

    let nm = nelder_mead(&objective, &init, &opts.nm);

    // final evaluation pins down per-point distances and failures
    let u0 = section(&nm.x)?;
    let parts = sum_squared_distances(m, &u0, data, opts);
    let mut distances = Vec::with_capacity(data.len());
    for (index, p) in parts.iter().enumerate() {
        match p {
            Some(v) => distances.push(v.max(0.0).sqrt()),
            None => return Err(EstimateError::ShootFailed { index }),
        }
    }
    Ok(FrechetResult {
        mean: nm.x,
        distances,
        objective: nm.value,
        iterations: nm.iterations,
        history: nm.history,
    })
}

#[derive(Clone, Debug)]
pub struct MleResult {
    pub mean: DVector<f64>,
    /// Canonicalized frame: columns are principal directions of u uᵀ
    /// scaled by the square roots of its eigenvalues, in descending
    /// order, with the dominant component of each column positive.
    pub frame: DMatrix<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Joint maximum-likelihood mean and square-root covariance:
/// argmin over (x, u) of Σ_i d((x,u), π⁻¹(x_i))² + N log det_g(u).
pub fn mle_mean_covariance(
    m: &ChartManifold,
    data: &[DVector<f64>],
    k: usize,
    lambda: f64,
    opts: &EstimatorOptions,
) -> Result<MleResult, EstimateError> {
    if data.len() < 2 {
        return Err(EstimateError::TooFewPoints {
            needed: 2,
            got: data.len(),
        });
    }
    let d = data[0].len();
    if k == 0 || k > d {
        return Err(EstimateError::BadRank { k, d });
    }

    let mut mean = DVector::zeros(d);
    for y in data {
        mean += y;
    }
    mean /= data.len() as f64;

    let spread = data
        .iter()
        .map(|y| (y - &mean).amax())
        .fold(0.0f64, f64::max);
    if spread < 1e-12 {
        return Err(EstimateError::DegenerateSample);
    }

    // start from the flat-chart optimum u uᵀ = 2·sample covariance
    let mut cov = DMatrix::zeros(d, d);
    for y in data {
        let dev = y - &mean;
        cov += &dev * dev.transpose();
    }
    cov /= data.len() as f64;
    let u_init = principal_frame(&(cov * 2.0), k);

    let n = data.len() as f64;
    let pack = |x: &DVector<f64>, u: &DMatrix<f64>| -> DVector<f64> {
        let mut p = DVector::zeros(d + d * k);
        p.rows_mut(0, d).copy_from(x);
        p.rows_mut(d, d * k)
            .copy_from(&DVector::from_column_slice(u.as_slice()));
        p
    };
    let unpack = |p: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        (
            p.rows(0, d).clone_owned(),
            DMatrix::from_column_slice(d, k, p.rows(d, d * k).as_slice()),
        )
    };

    let objective = |p: &DVector<f64>| -> f64 {
        let (x, u) = unpack(p);
        if !m.contains(x.as_slice()) {
            return f64::INFINITY;
        }
        // rank guard: collapsing frames are rejected, which keeps the
        // iteration away from degenerate covariances
        let Ok(u0) = FramePoint::new(x.clone(), u.clone(), lambda) else {
            return f64::INFINITY;
        };
        let Ok(logdet) = m.log_det_frame(x.as_slice(), &u) else {
            return f64::INFINITY;
        };
        let parts = sum_squared_distances(m, &u0, data, opts);
        let mut total = n * logdet;
        for p in parts {
            match p {
                Some(v) => total += v,
                None => return f64::INFINITY,
            }
        }
        total
    };

    let nm = nelder_mead(&objective, &pack(&mean, &u_init), &opts.nm);
    let (x_hat, u_hat) = unpack(&nm.x);
    let frame = principal_frame(&(&u_hat * u_hat.transpose()), k);
    Ok(MleResult {
        mean: x_hat,
        frame,
        lambda,
        objective: nm.value,
        iterations: nm.iterations,
        history: nm.history,
    })
}

/// Columns = top-k eigenvectors of a PSD matrix scaled by the square
/// roots of the eigenvalues, descending, with each column's dominant
/// component made positive.
fn principal_frame(s: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let d = s.nrows();
    let eig = s.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut u = DMatrix::zeros(d, k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let scale = eig.eigenvalues[idx].max(0.0).sqrt();
        let mut dominant = 0;
        for i in 1..d {
            if v[i].abs() > v[dominant].abs() {
                dominant = i;
            }
        }
        let sign = if v[dominant] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            u[(i, col)] = sign * scale * v[i];
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::JetField;
    use crate::jet::Jet;
    use crate::surfaces::{make_surface, SurfaceSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane() -> ChartManifold {
        make_surface(&SurfaceSpec::Plane).unwrap()
    }

    fn flat_line() -> ChartManifold {
        ChartManifold::from_metric(
            "line",
            JetField::new(1, |x: &[Jet]| vec![Jet::constant(1.0, x.len())]),
        )
    }

    fn fast_opts() -> EstimatorOptions {
        EstimatorOptions {
            integrator: IntegratorConfig::rk4(10),
            ..EstimatorOptions::default()
        }
    }

    fn pts(coords: &[[f64; 2]]) -> Vec<DVector<f64>> {
        coords
            .iter()
            .map(|c| DVector::from_column_slice(c))
            .collect()
    }

    #[test]
    fn frechet_single_point_returns_it() {
        let m = plane();
        let data = pts(&[[0.7, -0.3]]);
        let res = frechet_mean_fm(
            &m,
            &data,
            |x: &DVector<f64>| FramePoint::new(x.clone(), DMatrix::identity(2, 2), 0.0),
            &fast_opts(),
        )
        .unwrap();
        assert!((res.mean.clone() - &data[0]).amax() < 1e-6);
        assert!(res.objective < 1e-10);
    }

    #[test]
    fn frechet_flat_anisotropic_section_gives_euclidean_mean() {
        let m = plane();
        let data = pts(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.5], [0.4, -0.7], [0.2, 0.9]]);
        let mut expected = DVector::zeros(2);
        for y in &data {
            expected += y;
        }
        expected /= data.len() as f64;

        let aniso = DMatrix::from_column_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let res = frechet_mean_fm(
            &m,
            &data,
            move |x: &DVector<f64>| FramePoint::new(x.clone(), aniso.clone(), 0.0),
            &fast_opts(),
        )
        .unwrap();
        assert!(
            (res.mean.clone() - expected).amax() < 1e-6,
            "mean {:?}",
            res.mean.as_slice()
        );
        assert_eq!(res.distances.len(), data.len());
    }

    #[test]
    fn mle_one_dimensional_matches_calculus_oracle() {
        let m = flat_line();
        let data = vec![
            DVector::from_column_slice(&[-1.0]),
            DVector::from_column_slice(&[1.0]),
        ];
        let res = mle_mean_covariance(&m, &data, 1, 0.0, &fast_opts()).unwrap();
        assert!(res.mean[0].abs() < 1e-4, "mean {}", res.mean[0]);

        // independent golden-section minimization of Σ(x_i - x̄)²/u² + 2 log u
        let f = |u: f64| -> f64 { 2.0 / (u * u) + 2.0 * u.ln() };
        let (mut lo, mut hi) = (0.2, 5.0);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert_relative_eq!(oracle, 2f64.sqrt(), epsilon = 1e-6);
        assert!(
            (res.frame[(0, 0)] - oracle).abs() < 1e-4,
            "u = {} vs oracle {}",
            res.frame[(0, 0)],
            oracle
        );
    }

    #[test]
    fn mle_axis_aligned_data_gives_ordered_diagonal_frame() {
        let m = plane();
        // sample covariance diag(2, 0.125); optimum u uᵀ = diag(4, 0.25)
        let data = pts(&[[2.0, 0.0], [-2.0, 0.0], [0.0, 0.5], [0.0, -0.5]]);
        let mut opts = fast_opts();
        opts.nm.max_iters = 4000;
        opts.nm.init_step = 0.1;
        let res = mle_mean_covariance(&m, &data, 2, 0.0, &opts).unwrap();
        assert!(res.mean.amax() < 1e-3);
        assert!(
            res.frame[(0, 1)].abs() < 1e-3 && res.frame[(1, 0)].abs() < 1e-3,
            "frame not diagonal: {:?}",
            res.frame.as_slice()
        );
        assert_relative_eq!(res.frame[(0, 0)], 2.0, epsilon = 1e-3);
        assert_relative_eq!(res.frame[(1, 1)], 0.5, epsilon = 1e-3);
        assert!(res.frame[(0, 0)] > res.frame[(1, 1)], "axes ordered by variance");
    }

    #[test]
    fn mle_rank_one_aligns_with_leading_eigenvector() {
        let m = plane();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut gauss = || {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        // anisotropic cloud, leading axis rotated by 30 degrees
        let ang = 30f64.to_radians();
        let (c, s) = (ang.cos(), ang.sin());
        let data: Vec<DVector<f64>> = (0..40)
            .map(|_| {
                let a = 2.0 * gauss();
                let b = 0.4 * gauss();
                DVector::from_column_slice(&[c * a - s * b, s * a + c * b])
            })
            .collect();

        let mut cov = DMatrix::zeros(2, 2);
        let mut mean = DVector::zeros(2);
        for y in &data {
            mean += y;
        }
        mean /= data.len() as f64;
        for y in &data {
            let dv = y - &mean;
            cov += &dv * dv.transpose();
        }
        cov /= data.len() as f64;
        let lead = principal_frame(&cov, 1);

        let mut opts = fast_opts();
        opts.nm.max_iters = 3000;
        let res = mle_mean_covariance(&m, &data, 1, 0.05, &opts).unwrap();

        let a = res.frame.column(0).normalize();
        let b = lead.column(0).normalize();
        let cos = a.dot(&b).abs().min(1.0);
        let angle_deg = cos.acos().to_degrees();
        assert!(
            angle_deg <= 2.0,
            "angle to leading eigenvector {angle_deg:.3}°"
        );
    }

    #[test]
    fn degenerate_sample_rejected() {
        let m = plane();
        let data = pts(&[[0.3, 0.3], [0.3, 0.3], [0.3, 0.3]]);
        match mle_mean_covariance(&m, &data, 2, 0.0, &fast_opts()) {
            Err(EstimateError::DegenerateSample) => {}
            other => panic!("expected degenerate-sample error, got {other:?}"),
        }
    }
}
