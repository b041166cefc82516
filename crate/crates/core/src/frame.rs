//! States and the Hamiltonian vector field on the cotangent bundle of the
//! rank-k frame bundle.
//!
//! A point carries a base position x and a d×k frame u whose columns span
//! the anisotropy directions; the isotropic weight λ adds λ·g_R⁻¹ to the
//! cometric. Covectors split into a base part ξ_x and a frame part ξ_u.
//! The flattened state layout is [x | u column-major | ξ_x | ξ_u
//! column-major], 2(d + dk) scalars in total.
//!
//! The cometric in coordinates has the blocks
//!
//! ```text
//!   g^{i j}     = W^{ij}
//!   g^{i j_β}   = -W^{ih} Γ^{j_β}_h
//!   g^{i_α j}   = -Γ^{i_α}_h W^{hj}
//!   g^{i_α j_β} =  Γ^{i_α}_k W^{kh} Γ^{j_β}_h
//! ```
//!
//! with W^{ij} = δ^{αβ} u^i_α u^j_β + λ g_R^{ij} and the frame-contracted
//! Christoffel symbols Γ^{h_γ}_j = Γ^h_{ji} u^i_γ. The Hamiltonian vector
//! field is coded from these blocks and their coordinate-derivative tables
//! (Γ^{i_α}_{h,l_ζ} = δ^{ζα} Γ^i_{hl}, W^{ij}_{,l_ζ} = δ^{il} u^j_ζ +
//! δ^{jl} u^i_ζ, W^{ij}_{,l} = λ g_R^{ij}_{,l}) as explicit contractions;
//! numerical differentiation of the Hamiltonian appears only as a test
//! oracle.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{self, ChartManifold, GeometryError, GeometryJet};
use crate::ode::{self, IntegratorConfig, IntegrationError, Trajectory};
use crate::tensor::Tensor3;

/// Default lower bound on the smallest singular value of a frame.
pub const DEFAULT_RANK_THRESHOLD: f64 = 1e-12;

/// Default horizontality tolerance accepted by the energy quadrature.
pub const DEFAULT_HORIZONTALITY_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("lambda = 0 requires a full-rank frame (k = d); got k = {k}, d = {d}")]
    DegenerateCometric { k: usize, d: usize },
    #[error("negative or non-finite isotropic weight lambda = {0}")]
    NegativeLambda(f64),
    #[error("path not horizontal: residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    NonHorizontal { residual: f64, tol: f64 },
    #[error("operation requires a full-rank frame (k = d)")]
    NotFullRank,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Base point plus frame: x ∈ chart, u ∈ R^{d×k} with full column rank,
/// and isotropic weight λ ≥ 0.
#[derive(Clone, Debug)]
pub struct FramePoint {
    x: DVector<f64>,
    u: DMatrix<f64>,
    lambda: f64,
}

impl FramePoint {
    pub fn new(x: DVector<f64>, u: DMatrix<f64>, lambda: f64) -> Result<Self, FrameError> {
        Self::with_rank_threshold(x, u, lambda, DEFAULT_RANK_THRESHOLD)
    }

    pub fn with_rank_threshold(
        x: DVector<f64>,
        u: DMatrix<f64>,
        lambda: f64,
        threshold: f64,
    ) -> Result<Self, FrameError> {
        let d = x.len();
        let k = u.ncols();
        if u.nrows() != d {
            return Err(FrameError::Dimension(format!(
                "frame has {} rows for a {d}-dimensional point",
                u.nrows()
            )));
        }
        if k == 0 || k > d {
            return Err(FrameError::Dimension(format!(
                "frame rank k = {k} must satisfy 1 ≤ k ≤ d = {d}"
            )));
        }
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(FrameError::NegativeLambda(lambda));
        }
        if lambda == 0.0 && k < d {
            return Err(FrameError::DegenerateCometric { k, d });
        }
        let sv = smallest_singular_value(&u);
        if sv <= threshold {
            return Err(GeometryError::RankDeficientFrame { sv, threshold }.into());
        }
        Ok(FramePoint { x, u, lambda })
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }
}

pub fn smallest_singular_value(u: &DMatrix<f64>) -> f64 {
    u.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v))
}

/// Full phase-space state (x, u, ξ_x, ξ_u) on T*F^kM.
#[derive(Clone, Debug)]
pub struct CotangentState {
    pub point: FramePoint,
    pub xi_x: DVector<f64>,
    pub xi_u: DMatrix<f64>,
}

impl CotangentState {
    pub fn new(
        point: FramePoint,
        xi_x: DVector<f64>,
        xi_u: DMatrix<f64>,
    ) -> Result<Self, FrameError> {
        let (d, k) = (point.dim(), point.rank());
        if xi_x.len() != d || xi_u.nrows() != d || xi_u.ncols() != k {
            return Err(FrameError::Dimension(format!(
                "momenta must be ({d}) and ({d}×{k}); got ({}) and ({}×{})",
                xi_x.len(),
                xi_u.nrows(),
                xi_u.ncols()
            )));
        }
        Ok(CotangentState { point, xi_x, xi_u })
    }

    /// Layout: [x (d) | u column-major (dk) | ξ_x (d) | ξ_u column-major (dk)].
    pub fn flatten(&self) -> DVector<f64> {
        let (d, k) = (self.point.dim(), self.point.rank());
        let mut z = DVector::zeros(2 * (d + d * k));
        z.rows_mut(0, d).copy_from(&self.point.x);
        z.rows_mut(d, d * k)
            .copy_from(&DVector::from_column_slice(self.point.u.as_slice()));
        z.rows_mut(d + d * k, d).copy_from(&self.xi_x);
        z.rows_mut(2 * d + d * k, d * k)
            .copy_from(&DVector::from_column_slice(self.xi_u.as_slice()));
        z
    }

    /// Inverse of [`CotangentState::flatten`], re-validating the frame.
    pub fn unflatten(
        d: usize,
        k: usize,
        lambda: f64,
        z: &DVector<f64>,
    ) -> Result<Self, FrameError> {
        let (x, u, xi_x, xi_u) = split_phase(d, k, z);
        CotangentState::new(FramePoint::new(x, u, lambda)?, xi_x, xi_u)
    }

    pub fn phase_dim(&self) -> usize {
        2 * (self.point.dim() + self.point.dim() * self.point.rank())
    }
}

pub(crate) fn split_phase(
    d: usize,
    k: usize,
    z: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let x = z.rows(0, d).clone_owned();
    let u = DMatrix::from_column_slice(d, k, z.rows(d, d * k).as_slice());
    let xi_x = z.rows(d + d * k, d).clone_owned();
    let xi_u = DMatrix::from_column_slice(d, k, z.rows(2 * d + d * k, d * k).as_slice());
    (x, u, xi_x, xi_u)
}

pub(crate) fn split_fm(d: usize, k: usize, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let x = y.rows(0, d).clone_owned();
    let u = DMatrix::from_column_slice(d, k, y.rows(d, d * k).as_slice());
    (x, u)
}

/// Blocks of the cometric on T*F^kM at a frame point.
#[derive(Clone, Debug)]
pub struct CometricBlocks {
    /// W^{ij} = δ^{αβ} u^i_α u^j_β + λ g_R^{ij} (d×d).
    pub w: DMatrix<f64>,
    /// g^{i j_β} (d × dk).
    pub gxu: DMatrix<f64>,
    /// g^{i_α j} (dk × d).
    pub gux: DMatrix<f64>,
    /// g^{i_α j_β} (dk × dk).
    pub guu: DMatrix<f64>,
    /// Frame-contracted Christoffel symbols Γ^{h_γ}_j as a (dk)×d matrix;
    /// row index flattened column-major over (h, γ).
    pub gamma_frame: DMatrix<f64>,
}

impl CometricBlocks {
    /// Assembled (d+dk) × (d+dk) block matrix.
    pub fn assembled(&self) -> DMatrix<f64> {
        let d = self.w.nrows();
        let dk = self.guu.nrows();
        let mut m = DMatrix::zeros(d + dk, d + dk);
        m.view_mut((0, 0), (d, d)).copy_from(&self.w);
        m.view_mut((0, d), (d, dk)).copy_from(&self.gxu);
        m.view_mut((d, 0), (dk, d)).copy_from(&self.gux);
        m.view_mut((d, d), (dk, dk)).copy_from(&self.guu);
        m
    }
}

/// Frame-contracted Christoffel symbols Γ^{(jβ)}_h = Γ^j_{hm} u^m_β,
/// rows flattened as β·d + j.
fn gamma_frame(gamma: &Tensor3, u: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, k) = (u.nrows(), u.ncols());
    let mut gf = DMatrix::zeros(d * k, d);
    for b in 0..k {
        for j in 0..d {
            for h in 0..d {
                let mut s = 0.0;
                for m in 0..d {
                    s += gamma.at(j, h, m) * u[(m, b)];
                }
                gf[(b * d + j, h)] = s;
            }
        }
    }
    gf
}

fn cometric_w(jet: &GeometryJet, u: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut w = u * u.transpose();
    if lambda > 0.0 {
        w += &jet.g_inv * lambda;
    }
    w
}

/// Cometric blocks at a frame point; the full-rank case (k = d, λ = 0)
/// reduces to W = u uᵀ.
pub fn cometric_blocks(m: &ChartManifold, s: &FramePoint) -> Result<CometricBlocks, FrameError> {
    let jet = m.geometry_jet(s.x().as_slice())?;
    let w = cometric_w(&jet, s.u(), s.lambda());
    let gf = gamma_frame(&jet.gamma, s.u());
    let gxu = -(&w * gf.transpose());
    let gux = -(&gf * &w);
    let guu = &gf * &w * gf.transpose();
    Ok(CometricBlocks {
        w,
        gxu,
        gux,
        guu,
        gamma_frame: gf,
    })
}

/// H(z) = 1/2 [ξ_x; ξ_u]ᵀ · blocks · [ξ_x; ξ_u].
pub fn hamiltonian(m: &ChartManifold, z: &CotangentState) -> Result<f64, FrameError> {
    let blocks = cometric_blocks(m, &z.point)?;
    let (d, k) = (z.point.dim(), z.point.rank());
    let mut xi = DVector::zeros(d + d * k);
    xi.rows_mut(0, d).copy_from(&z.xi_x);
    xi.rows_mut(d, d * k)
        .copy_from(&DVector::from_column_slice(z.xi_u.as_slice()));
    Ok(0.5 * (xi.transpose() * blocks.assembled() * xi)[(0, 0)])
}

/// The Hamiltonian vector field on T*F^kM as explicit index contractions
/// of the cometric block derivatives.
pub fn mpp_rhs(m: &ChartManifold, z: &CotangentState) -> Result<DVector<f64>, FrameError> {
    let y = z.flatten();
    rhs_flat(m, z.point.dim(), z.point.rank(), z.point.lambda(), &y).map_err(Into::into)
}

/// Dedicated full-rank vector field (k = d, λ = 0): the W^{ij}_{,l} terms
/// are structurally absent because W = u uᵀ does not depend on x.
pub fn mpp_rhs_full_rank(
    m: &ChartManifold,
    z: &CotangentState,
) -> Result<DVector<f64>, FrameError> {
    if z.point.rank() != z.point.dim() || z.point.lambda() != 0.0 {
        return Err(FrameError::NotFullRank);
    }
    let y = z.flatten();
    rhs_flat_impl(m, z.point.dim(), z.point.rank(), 0.0, &y, true).map_err(Into::into)
}

pub(crate) fn rhs_flat(
    m: &ChartManifold,
    d: usize,
    k: usize,
    lambda: f64,
    y: &DVector<f64>,
) -> Result<DVector<f64>, GeometryError> {
    rhs_flat_impl(m, d, k, lambda, y, false)
}

fn rhs_flat_impl(
    m: &ChartManifold,
    d: usize,
    k: usize,
    lambda: f64,
    y: &DVector<f64>,
    skip_w_base_deriv: bool,
) -> Result<DVector<f64>, GeometryError> {
    let (x, u, xi_x, xi_u) = split_phase(d, k, y);
    let jet = m.geometry_jet(x.as_slice())?;
    let w = cometric_w(&jet, &u, lambda);

    // a_h = Γ^{(jβ)}_h ξ_{j_β}; the base velocity collects the first two
    // blocks: ẋ^i = W^{ij} ξ_j - W^{ih} Γ^{j_β}_h ξ_{j_β} = (W η)^i.
    let mut a = DVector::zeros(d);
    for h in 0..d {
        let mut s = 0.0;
        for b in 0..k {
            for j in 0..d {
                let mut gf = 0.0;
                for mm in 0..d {
                    gf += jet.gamma.at(j, h, mm) * u[(mm, b)];
                }
                s += gf * xi_u[(j, b)];
            }
        }
        a[h] = s;
    }
    let eta = &xi_x - &a;
    let v = &w * &eta;

    let mut dy = DVector::zeros(2 * (d + d * k));

    for i in 0..d {
        dy[i] = v[i];
    }

    // u̇^i_α = -Γ^{i_α}_h W^{hj} ξ_j + Γ^{i_α}_k W^{kh} Γ^{j_β}_h ξ_{j_β}
    //        = -Γ^{i_α}_h (W η)^h
    for al in 0..k {
        for i in 0..d {
            let mut s = 0.0;
            for h in 0..d {
                let mut gf = 0.0;
                for mm in 0..d {
                    gf += jet.gamma.at(i, h, mm) * u[(mm, al)];
                }
                s -= gf * v[h];
            }
            dy[d + al * d + i] = s;
        }
    }

    // ξ̇_l = -1/2 η W^{··}_{,l} η + v^h Γ^{(jβ)}_{h,l} ξ_{j_β}
    // with W^{ij}_{,l} = λ g_R^{ij}_{,l} (zero in the full-rank case).
    for l in 0..d {
        let mut s = 0.0;
        if lambda > 0.0 && !skip_w_base_deriv {
            let mut quad = 0.0;
            for i in 0..d {
                for j in 0..d {
                    quad += eta[i] * jet.cometric_deriv.at(i, j, l) * eta[j];
                }
            }
            s -= 0.5 * lambda * quad;
        }
        for h in 0..d {
            let mut b_hl = 0.0;
            for bb in 0..k {
                for j in 0..d {
                    let mut gfd = 0.0;
                    for mm in 0..d {
                        gfd += jet.gamma_deriv.at(j, h, mm, l) * u[(mm, bb)];
                    }
                    b_hl += gfd * xi_u[(j, bb)];
                }
            }
            s += v[h] * b_hl;
        }
        dy[d + d * k + l] = s;
    }

    // ξ̇_{l_ζ} = -η_l (uᵀη)_ζ + v^m Γ^k_{ml} ξ_{k_ζ}
    // from W^{ij}_{,l_ζ} = δ^{il} u^j_ζ + δ^{jl} u^i_ζ and
    // Γ^{i_α}_{h,l_ζ} = δ^{ζα} Γ^i_{hl}.
    let p = u.transpose() * &eta;
    for z in 0..k {
        for l in 0..d {
            let mut s = -eta[l] * p[z];
            for mm in 0..d {
                let mut c = 0.0;
                for kk in 0..d {
                    c += jet.gamma.at(kk, mm, l) * xi_u[(kk, z)];
                }
                s += v[mm] * c;
            }
            dy[2 * d + d * k + z * d + l] = s;
        }
    }

    Ok(dy)
}

/// Integrate the MPP equations from `z0`, recording the Hamiltonian and
/// the frame conditioning at every node.
pub fn integrate_mpp(
    m: &ChartManifold,
    z0: &CotangentState,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, IntegrationError> {
    let (d, k, lambda) = (z0.point.dim(), z0.point.rank(), z0.point.lambda());
    let mc = m.clone();
    let rhs = move |_t: f64, y: &DVector<f64>| rhs_flat(&mc, d, k, lambda, y);
    let mut traj = ode::integrate(&rhs, &z0.flatten(), cfg)?;
    let mut hs = Vec::with_capacity(traj.len());
    let mut min_sv = f64::INFINITY;
    for y in &traj.states {
        let (x, u, xi_x, xi_u) = split_phase(d, k, y);
        min_sv = min_sv.min(smallest_singular_value(&u));
        let h = hamiltonian_raw(m, &x, &u, lambda, &xi_x, &xi_u)
            .map_err(|e| chart_exit_from(e, &traj))?;
        hs.push(h);
    }
    traj.hamiltonian = Some(hs);
    traj.chart = Some(m.label().to_string());
    traj.min_frame_sv = Some(min_sv);
    Ok(traj)
}

fn chart_exit_from(e: GeometryError, traj: &Trajectory) -> IntegrationError {
    IntegrationError::ChartExit {
        t: *traj.times.last().unwrap_or(&0.0),
        source: e,
        partial: Box::new(traj.clone()),
    }
}

/// Hamiltonian without frame-rank validation (used on integrated states).
fn hamiltonian_raw(
    m: &ChartManifold,
    x: &DVector<f64>,
    u: &DMatrix<f64>,
    lambda: f64,
    xi_x: &DVector<f64>,
    xi_u: &DMatrix<f64>,
) -> Result<f64, GeometryError> {
    let jet = m.geometry_jet(x.as_slice())?;
    let w = cometric_w(&jet, u, lambda);
    let gf = gamma_frame(&jet.gamma, u);
    let xiu_flat = DVector::from_column_slice(xi_u.as_slice());
    let eta = xi_x - gf.transpose() * xiu_flat;
    Ok(0.5 * (eta.transpose() * w * eta)[(0, 0)])
}

/// Base and frame parts of an integrated phase-space trajectory.
pub fn project_fm(
    d: usize,
    k: usize,
    traj: &Trajectory,
) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let mut xs = Vec::with_capacity(traj.len());
    let mut us = Vec::with_capacity(traj.len());
    for y in &traj.states {
        let (x, u, _, _) = split_phase(d, k, y);
        xs.push(x);
        us.push(u);
    }
    (xs, us)
}

/// A piecewise-linear driving path in R^d starting at 0.
#[derive(Clone, Debug)]
pub struct DrivingPath {
    pub times: Vec<f64>,
    pub points: Vec<DVector<f64>>,
}

impl DrivingPath {
    pub fn new(times: Vec<f64>, points: Vec<DVector<f64>>) -> Result<Self, FrameError> {
        if times.len() != points.len() || times.len() < 2 {
            return Err(FrameError::Dimension(
                "driving path needs matching times and points, at least two knots".into(),
            ));
        }
        if points[0].amax() != 0.0 {
            return Err(FrameError::Dimension("driving path must start at 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FrameError::Dimension("driving times must increase".into()));
        }
        Ok(DrivingPath { times, points })
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn value_at(&self, t: f64) -> DVector<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.points[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.points[n - 1].clone();
        }
        let seg = self.times.partition_point(|&s| s <= t) - 1;
        let f = (t - self.times[seg]) / (self.times[seg + 1] - self.times[seg]);
        &self.points[seg] + (&self.points[seg + 1] - &self.points[seg]) * f
    }
}

/// Develop a piecewise-linear driver onto the manifold:
/// ẋ^i = u^i_α ṡ^α, u̇^i_α = -Γ^i_{jk} ẋ^j u^k_α.
///
/// The output trajectory holds FM states [x | u column-major] on the fine
/// grid of `substeps` RK4 steps per driver segment.
pub fn develop(
    m: &ChartManifold,
    u0: &FramePoint,
    driver: &DrivingPath,
    substeps: usize,
) -> Result<Trajectory, IntegrationError> {
    let d = u0.dim();
    if u0.rank() != d {
        return Err(IntegrationError::ChartExit {
            t: 0.0,
            source: GeometryError::Dimension(
                "development needs an invertible frame (k = d)".into(),
            ),
            partial: Box::new(empty_traj()),
        });
    }
    assert_eq!(driver.dim(), d, "driver dimension must match the manifold");
    let substeps = substeps.max(1);

    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut y = DVector::zeros(d + d * d);
    y.rows_mut(0, d).copy_from(u0.x());
    y.rows_mut(d, d * d)
        .copy_from(&DVector::from_column_slice(u0.u().as_slice()));
    times.push(driver.times[0]);
    states.push(y.clone());

    for seg in 0..driver.times.len() - 1 {
        let dt = driver.times[seg + 1] - driver.times[seg];
        let sdot = (&driver.points[seg + 1] - &driver.points[seg]) / dt;
        let h = dt / substeps as f64;
        for s in 0..substeps {
            let f = |yv: &DVector<f64>| -> Result<DVector<f64>, GeometryError> {
                let (x, u) = split_fm(d, d, yv);
                let jet = m.geometry_jet(x.as_slice())?;
                let xdot = &u * &sdot;
                let du = geometry::transport_rhs(&jet.gamma, &xdot, &u);
                let mut dy = DVector::zeros(d + d * d);
                dy.rows_mut(0, d).copy_from(&xdot);
                dy.rows_mut(d, d * d)
                    .copy_from(&DVector::from_column_slice(du.as_slice()));
                Ok(dy)
            };
            y = rk4_step(&f, &y, h).map_err(|source| IntegrationError::ChartExit {
                t: driver.times[seg] + s as f64 * h,
                source,
                partial: Box::new(Trajectory {
                    times: times.clone(),
                    states: states.clone(),
                    hamiltonian: None,
                    chart: Some(m.label().to_string()),
                    min_frame_sv: None,
                }),
            })?;
            times.push(driver.times[seg] + (s + 1) as f64 * h);
            states.push(y.clone());
        }
    }

    Ok(Trajectory {
        times,
        states,
        hamiltonian: None,
        chart: Some(m.label().to_string()),
        min_frame_sv: None,
    })
}

/// Anti-development of a sampled manifold path: parallel transport the
/// frame along the (piecewise-linear) path while integrating ṡ = u_t⁻¹ ẋ_t.
pub fn antidevelop(
    m: &ChartManifold,
    u0: &FramePoint,
    times: &[f64],
    xs: &[DVector<f64>],
    substeps: usize,
) -> Result<DrivingPath, FrameError> {
    let d = u0.dim();
    if u0.rank() != d {
        return Err(FrameError::NotFullRank);
    }
    if times.len() != xs.len() || times.len() < 2 {
        return Err(FrameError::Dimension("need a sampled path".into()));
    }
    if (xs[0].clone() - u0.x()).amax() > 1e-9 {
        return Err(FrameError::Dimension(
            "path must start at the frame base point".into(),
        ));
    }
    let substeps = substeps.max(1);

    // joint state [u column-major | s]
    let mut y = DVector::zeros(d * d + d);
    y.rows_mut(0, d * d)
        .copy_from(&DVector::from_column_slice(u0.u().as_slice()));

    let mut out_t = Vec::with_capacity(times.len());
    let mut out_s = Vec::with_capacity(times.len());
    out_t.push(times[0]);
    out_s.push(DVector::zeros(d));

    for seg in 0..times.len() - 1 {
        let dt = times[seg + 1] - times[seg];
        let xdot = (&xs[seg + 1] - &xs[seg]) / dt;
        let h = dt / substeps as f64;
        for s in 0..substeps {
            let x_at = |frac: f64| -> DVector<f64> {
                let t = (s as f64 + frac) / substeps as f64;
                &xs[seg] + (&xs[seg + 1] - &xs[seg]) * t
            };
            let f = |frac: f64, yv: &DVector<f64>| -> Result<DVector<f64>, FrameError> {
                let u = DMatrix::from_column_slice(d, d, yv.rows(0, d * d).as_slice());
                let jet = m.geometry_jet(x_at(frac).as_slice())?;
                let du = geometry::transport_rhs(&jet.gamma, &xdot, &u);
                let sdot = u.lu().solve(&xdot).ok_or(FrameError::NotFullRank)?;
                let mut dy = DVector::zeros(d * d + d);
                dy.rows_mut(0, d * d)
                    .copy_from(&DVector::from_column_slice(du.as_slice()));
                dy.rows_mut(d * d, d).copy_from(&sdot);
                Ok(dy)
            };
            let k1 = f(0.0, &y)?;
            let k2 = f(0.5, &(&y + &k1 * (h / 2.0)))?;
            let k3 = f(0.5, &(&y + &k2 * (h / 2.0)))?;
            let k4 = f(1.0, &(&y + &k3 * h))?;
            y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        out_t.push(times[seg + 1]);
        out_s.push(y.rows(d * d, d).clone_owned());
    }

    DrivingPath::new(out_t, out_s)
}

fn rk4_step<F>(f: &F, y: &DVector<f64>, h: f64) -> Result<DVector<f64>, GeometryError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, GeometryError>,
{
    let k1 = f(y)?;
    let k2 = f(&(y + &k1 * (h / 2.0)))?;
    let k3 = f(&(y + &k2 * (h / 2.0)))?;
    let k4 = f(&(y + &k3 * h))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

fn empty_traj() -> Trajectory {
    Trajectory {
        times: vec![],
        states: vec![],
        hamiltonian: None,
        chart: None,
        min_frame_sv: None,
    }
}

/// Finite-difference velocities on a sampled grid: central differences
/// inside, second-order one-sided at the ends.
pub(crate) fn fd_velocities(times: &[f64], values: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = values.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let v = if i == 0 {
            let h = times[1] - times[0];
            (&values[0] * -3.0 + &values[1] * 4.0 - &values[2]) / (2.0 * h)
        } else if i == n - 1 {
            let h = times[n - 1] - times[n - 2];
            (&values[n - 1] * 3.0 - &values[n - 2] * 4.0 + &values[n - 3]) / (2.0 * h)
        } else {
            (&values[i + 1] - &values[i - 1]) / (times[i + 1] - times[i - 1])
        };
        out.push(v);
    }
    out
}

/// Max over t of ‖u̇^i_α + Γ^i_{jk} ẋ^j u^k_α‖_F for a sampled FM path.
pub fn horizontality_residual(
    m: &ChartManifold,
    times: &[f64],
    xs: &[DVector<f64>],
    us: &[DMatrix<f64>],
) -> Result<f64, GeometryError> {
    assert!(times.len() == xs.len() && xs.len() == us.len());
    let n = times.len();
    if n < 3 {
        return Ok(0.0);
    }
    let xdots = fd_velocities(times, xs);
    let uflat: Vec<DVector<f64>> = us
        .iter()
        .map(|u| DVector::from_column_slice(u.as_slice()))
        .collect();
    let udots = fd_velocities(times, &uflat);
    let (d, k) = (us[0].nrows(), us[0].ncols());
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let jet = m.geometry_jet(xs[i].as_slice())?;
        let du = DMatrix::from_column_slice(d, k, udots[i].as_slice());
        let resid = du - geometry::transport_rhs(&jet.gamma, &xdots[i], &us[i]);
        worst = worst.max(resid.norm());
    }
    Ok(worst)
}

/// Trapezoidal quadrature of W_{ij} ẋ^i ẋ^j along a horizontal FM path;
/// W_{ij} is the inverse of W^{ij} = u uᵀ + λ g_R⁻¹. For a normal MPP
/// trajectory this equals 2·T·H(z_0) up to integrator error.
pub fn sub_riemannian_energy(
    m: &ChartManifold,
    times: &[f64],
    xs: &[DVector<f64>],
    us: &[DMatrix<f64>],
    lambda: f64,
    horizontality_tol: f64,
) -> Result<f64, FrameError> {
    let resid = horizontality_residual(m, times, xs, us)?;
    if resid > horizontality_tol {
        return Err(FrameError::NonHorizontal {
            residual: resid,
            tol: horizontality_tol,
        });
    }
    let xdots = fd_velocities(times, xs);
    let n = times.len();
    let mut f = Vec::with_capacity(n);
    for i in 0..n {
        let jet = m.geometry_jet(xs[i].as_slice())?;
        let w = cometric_w(&jet, &us[i], lambda);
        let w_inv = w.cholesky().ok_or(GeometryError::DegenerateGram)?.inverse();
        f.push((xdots[i].transpose() * w_inv * &xdots[i])[(0, 0)]);
    }
    let mut e = 0.0;
    for i in 0..n - 1 {
        e += 0.5 * (f[i] + f[i + 1]) * (times[i + 1] - times[i]);
    }
    Ok(e)
}

/// Covariant acceleration of an MPP trajectory in frame coordinates,
/// evaluated along two independent routes.
#[derive(Clone, Debug)]
pub struct CovariantAcceleration {
    pub times: Vec<f64>,
    /// Route (a): d/dt of the frame coordinates of the velocity u_t⁻¹ ẋ_t.
    pub frame_derivative: Vec<DVector<f64>>,
    /// Route (b): curvature contraction ξ(ψ(u, R(·,·)u)) per node.
    pub curvature_contraction: Vec<DVector<f64>>,
}

impl CovariantAcceleration {
    /// Sup-norm disagreement of the two routes over interior nodes.
    pub fn route_disagreement(&self) -> f64 {
        let n = self.times.len();
        let mut worst: f64 = 0.0;
        for i in 1..n.saturating_sub(1) {
            worst = worst
                .max((&self.frame_derivative[i] - &self.curvature_contraction[i]).amax());
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.curvature_contraction
            .iter()
            .fold(0.0, |m, v| m.max(v.amax()))
    }
}

/// Evaluate the covariant acceleration of an integrated MPP trajectory
/// (full-rank frames required).
pub fn covariant_acceleration(
    m: &ChartManifold,
    traj: &Trajectory,
    k: usize,
    lambda: f64,
) -> Result<CovariantAcceleration, FrameError> {
    let dim2 = traj.states[0].len();
    let d = dim2 / (2 * (1 + k));
    if k != d {
        return Err(FrameError::NotFullRank);
    }
    let n = traj.len();
    let mut qs = Vec::with_capacity(n);
    let mut curvature_contraction = Vec::with_capacity(n);

    for y in &traj.states {
        let (x, u, xi_x, xi_u) = split_phase(d, k, y);
        let jet = m.geometry_jet(x.as_slice())?;
        let w = cometric_w(&jet, &u, lambda);
        let gf = gamma_frame(&jet.gamma, &u);
        let xiu_flat = DVector::from_column_slice(xi_u.as_slice());
        let eta = &xi_x - gf.transpose() * &xiu_flat;
        let v = &w * &eta;

        // route (a) samples: frame coordinates of the velocity
        let q = u.clone().lu().solve(&v).ok_or(FrameError::NotFullRank)?;
        qs.push(q);

        // route (b): the slot order (v, u e_i) in the curvature matches
        // the tensor convention documented at `geometry::curvature`.
        let r = geometry::curvature(&jet);
        let mut acc = DVector::zeros(d);
        for i in 0..d {
            let mut s = 0.0;
            for a in 0..d {
                for b in 0..d {
                    for t in 0..d {
                        for mm in 0..d {
                            for be in 0..d {
                                s += xi_u[(mm, be)]
                                    * r.at(a, b, t, mm)
                                    * v[a]
                                    * u[(b, i)]
                                    * u[(t, be)];
                            }
                        }
                    }
                }
            }
            acc[i] = s;
        }
        curvature_contraction.push(acc);
    }

    let frame_derivative = fd_velocities(&traj.times, &qs);
    Ok(CovariantAcceleration {
        times: traj.times.clone(),
        frame_derivative,
        curvature_contraction,
    })
}
