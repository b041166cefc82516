//! Chart-based Riemannian geometry.
//!
//! A manifold is represented by a single chart together with either a
//! metric field x ↦ g_ij(x) or a cometric field x ↦ g^ij(x), exactly one
//! of which is primary. Fields are evaluated through second-order jets
//! ([`crate::jet`]), so Christoffel symbols and their first derivatives
//! come out of one tensor implementation. The cometric-primary route goes
//! through the kernel-style Christoffel formula in
//! [`crate::landmarks::christoffel_from_cometric`].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::jet::{self, Jet};
use crate::landmarks;
use crate::ode::{self, IntegratorConfig, Trajectory};
use crate::tensor::{Tensor3, Tensor4};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point {point:?} outside chart domain of {label}")]
    OutsideChart { label: String, point: Vec<f64> },
    #[error("metric not symmetric positive definite at {point:?} on {label}: {detail} (bad chart or singular frame of reference)")]
    NotSpd {
        label: String,
        point: Vec<f64>,
        detail: String,
    },
    #[error("frame rank deficient: smallest singular value {sv:.3e} below threshold {threshold:.3e}")]
    RankDeficientFrame { sv: f64, threshold: f64 },
    #[error("landmarks {i} and {j} coincide (separation {sep:.3e}): kernel matrix singular")]
    CoincidentLandmarks { i: usize, j: usize, sep: f64 },
    #[error("invalid surface parameters: {0}")]
    InvalidSurface(String),
    #[error("gram matrix of frame not positive definite (rank-deficient frame)")]
    DegenerateGram,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Symmetric d×d tensor field evaluated together with its first and
/// second coordinate derivatives.
pub struct TensorFieldJet {
    /// T_ij(x).
    pub value: DMatrix<f64>,
    /// d1.at(i, j, l) = ∂_l T_ij.
    pub d1: Tensor3,
    /// d2.at(i, j, l, m) = ∂_l ∂_m T_ij.
    pub d2: Tensor4,
}

pub trait TensorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<TensorFieldJet, GeometryError>;
}

/// Adapter turning a jet-valued closure (row-major d×d entries) into a
/// [`TensorField`].
pub struct JetField<F> {
    dim: usize,
    f: F,
}

impl<F> JetField<F>
where
    F: Fn(&[Jet]) -> Vec<Jet> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        JetField { dim, f }
    }
}

impl<F> TensorField for JetField<F>
where
    F: Fn(&[Jet]) -> Vec<Jet> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Result<TensorFieldJet, GeometryError> {
        let d = self.dim;
        let entries = (self.f)(&jet::seed(x));
        assert_eq!(entries.len(), d * d, "tensor closure must return d*d entries");
        let mut value = DMatrix::zeros(d, d);
        let mut d1 = Tensor3::zeros(d, d, d);
        let mut d2 = Tensor4::zeros(d, d, d, d);
        for i in 0..d {
            for j in 0..d {
                let e = &entries[i * d + j];
                value[(i, j)] = e.v;
                for l in 0..d {
                    d1.set(i, j, l, e.g[l]);
                    for m in 0..d {
                        d2.set(i, j, l, m, e.h[(l, m)]);
                    }
                }
            }
        }
        Ok(TensorFieldJet { value, d1, d2 })
    }
}

#[derive(Clone)]
pub enum MetricSource {
    /// Primary field is the metric g_ij.
    Metric(Arc<dyn TensorField>),
    /// Primary field is the cometric g^ij.
    Cometric(Arc<dyn TensorField>),
}

/// A manifold in a single chart: dimension, primary (co)metric field,
/// optional embedding for output, and a chart-validity predicate.
#[derive(Clone)]
pub struct ChartManifold {
    dim: usize,
    source: MetricSource,
    embedding: Option<Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>>,
    domain: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
    label: String,
}

impl ChartManifold {
    pub fn from_metric<T: TensorField + 'static>(label: &str, field: T) -> Self {
        let dim = field.dim();
        ChartManifold {
            dim,
            source: MetricSource::Metric(Arc::new(field)),
            embedding: None,
            domain: Arc::new(all_finite),
            label: label.to_string(),
        }
    }

    pub fn from_cometric<T: TensorField + 'static>(label: &str, field: T) -> Self {
        let dim = field.dim();
        ChartManifold {
            dim,
            source: MetricSource::Cometric(Arc::new(field)),
            embedding: None,
            domain: Arc::new(all_finite),
            label: label.to_string(),
        }
    }

    pub fn with_embedding<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.embedding = Some(Arc::new(f));
        self
    }

    /// Restrict the chart domain. Non-finite coordinates are always
    /// rejected in addition to the given predicate.
    pub fn with_domain<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        self.domain = Arc::new(move |x| all_finite(x) && f(x));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && (self.domain)(x)
    }

    pub fn has_embedding(&self) -> bool {
        self.embedding.is_some()
    }

    /// Map a chart point to ambient coordinates, if an embedding is set.
    pub fn embed_point(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.embedding.as_ref().map(|f| f(x))
    }

    pub fn is_cometric_primary(&self) -> bool {
        matches!(self.source, MetricSource::Cometric(_))
    }

    fn check_domain(&self, x: &[f64]) -> Result<(), GeometryError> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(GeometryError::OutsideChart {
                label: self.label.clone(),
                point: x.to_vec(),
            })
        }
    }

    /// Metric, cometric, Christoffel symbols and their first derivatives
    /// at a chart point.
    pub fn geometry_jet(&self, x: &[f64]) -> Result<GeometryJet, GeometryError> {
        self.check_domain(x)?;
        match &self.source {
            MetricSource::Metric(field) => {
                let t = field.eval(x)?;
                let g = symmetrized(&self.label, x, &t.value)?;
                let g_inv = spd_inverse(&self.label, x, &g)?;
                let d = self.dim;

                // g^{ij}_{,l} = -g^{ia} g_{ab,l} g^{bj}
                let mut cometric_deriv = Tensor3::zeros(d, d, d);
                for l in 0..d {
                    let mut dl = DMatrix::zeros(d, d);
                    for a in 0..d {
                        for b in 0..d {
                            dl[(a, b)] = t.d1.at(a, b, l);
                        }
                    }
                    let m = -(&g_inv * dl * &g_inv);
                    for i in 0..d {
                        for j in 0..d {
                            cometric_deriv.set(i, j, l, m[(i, j)]);
                        }
                    }
                }

                // Γ^k_{ij} = 1/2 g^{kl} (g_{lj,i} + g_{li,j} - g_{ij,l})
                let mut gamma = Tensor3::zeros(d, d, d);
                for k in 0..d {
                    for i in 0..d {
                        for j in 0..d {
                            let mut s = 0.0;
                            for l in 0..d {
                                s += g_inv[(k, l)]
                                    * (t.d1.at(l, j, i) + t.d1.at(l, i, j) - t.d1.at(i, j, l));
                            }
                            gamma.set(k, i, j, 0.5 * s);
                        }
                    }
                }

                // Γ^k_{ij,m}: differentiate the formula once more.
                let mut gamma_deriv = Tensor4::zeros(d, d, d, d);
                for k in 0..d {
                    for i in 0..d {
                        for j in 0..d {
                            for m in 0..d {
                                let mut s = 0.0;
                                for l in 0..d {
                                    let first = t.d1.at(l, j, i) + t.d1.at(l, i, j)
                                        - t.d1.at(i, j, l);
                                    let second = t.d2.at(l, j, i, m) + t.d2.at(l, i, j, m)
                                        - t.d2.at(i, j, l, m);
                                    s += cometric_deriv.at(k, l, m) * first
                                        + g_inv[(k, l)] * second;
                                }
                                gamma_deriv.set(k, i, j, m, 0.5 * s);
                            }
                        }
                    }
                }

                Ok(GeometryJet {
                    x: DVector::from_column_slice(x),
                    g,
                    g_inv,
                    gamma,
                    gamma_deriv,
                    cometric_deriv,
                })
            }
            MetricSource::Cometric(field) => {
                let t = field.eval(x)?;
                let g_inv = symmetrized(&self.label, x, &t.value)?;
                let g = spd_inverse(&self.label, x, &g_inv)?;
                let (gamma, gamma_deriv) = landmarks::christoffel_from_cometric(&g, &t)?;
                Ok(GeometryJet {
                    x: DVector::from_column_slice(x),
                    g,
                    g_inv,
                    gamma,
                    gamma_deriv,
                    cometric_deriv: t.d1,
                })
            }
        }
    }

    /// Metric value alone (used by quadratures and oracles).
    pub fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        Ok(self.geometry_jet(x)?.g)
    }

    /// Integrate the classical geodesic equation ẍ^k = -Γ^k_{ij} ẋ^i ẋ^j.
    ///
    /// The trajectory states stack position and velocity as [x | ẋ].
    pub fn riemannian_geodesic(
        &self,
        x0: &DVector<f64>,
        v0: &DVector<f64>,
        t_end: f64,
        cfg: &IntegratorConfig,
    ) -> Result<Trajectory, ode::IntegrationError> {
        let d = self.dim;
        let m = self.clone();
        let rhs = move |_t: f64, y: &DVector<f64>| -> Result<DVector<f64>, GeometryError> {
            let x = y.rows(0, d).iter().copied().collect::<Vec<_>>();
            let v = y.rows(d, d);
            let jet = m.geometry_jet(&x)?;
            let mut dy = DVector::zeros(2 * d);
            for i in 0..d {
                dy[i] = v[i];
            }
            for k in 0..d {
                let mut acc = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        acc -= jet.gamma.at(k, i, j) * v[i] * v[j];
                    }
                }
                dy[d + k] = acc;
            }
            Ok(dy)
        };
        let mut z0 = DVector::zeros(2 * d);
        z0.rows_mut(0, d).copy_from(x0);
        z0.rows_mut(d, d).copy_from(v0);
        let cfg = IntegratorConfig { t_end, ..cfg.clone() };
        ode::integrate(&rhs, &z0, &cfg)
    }

    /// Parallel transport the columns of `u0` along a sampled path,
    /// treated as piecewise linear: u̇^i_α = -Γ^i_{jk} ẋ^j u^k_α.
    ///
    /// Returns the frame at every node of the path.
    pub fn parallel_transport(
        &self,
        times: &[f64],
        xs: &[DVector<f64>],
        u0: &DMatrix<f64>,
        substeps: usize,
    ) -> Result<Vec<DMatrix<f64>>, GeometryError> {
        assert_eq!(times.len(), xs.len());
        let d = self.dim;
        assert_eq!(u0.nrows(), d);
        let m = substeps.max(1);
        let mut out = Vec::with_capacity(times.len());
        let mut u = u0.clone();
        out.push(u.clone());
        for seg in 0..times.len().saturating_sub(1) {
            let dt = times[seg + 1] - times[seg];
            let xdot = (&xs[seg + 1] - &xs[seg]) / dt;
            let h = dt / m as f64;
            for s in 0..m {
                // Chart position is linear inside the segment.
                let pos = |frac: f64| -> Vec<f64> {
                    let t = (s as f64 + frac) / m as f64;
                    (&xs[seg] + (&xs[seg + 1] - &xs[seg]) * t)
                        .iter()
                        .copied()
                        .collect()
                };
                let f = |x: &[f64], u: &DMatrix<f64>| -> Result<DMatrix<f64>, GeometryError> {
                    let jet = self.geometry_jet(x)?;
                    Ok(transport_rhs(&jet.gamma, &xdot, u))
                };
                let k1 = f(&pos(0.0), &u)?;
                let k2 = f(&pos(0.5), &(&u + &k1 * (h / 2.0)))?;
                let k3 = f(&pos(0.5), &(&u + &k2 * (h / 2.0)))?;
                let k4 = f(&pos(1.0), &(&u + &k3 * h))?;
                u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            out.push(u.clone());
        }
        Ok(out)
    }

    /// log det_g(u) for a d×k frame: half the log-determinant of the Gram
    /// matrix [g(u_α, u_β)]. Reduces to log|det u| for the identity metric
    /// with k = d.
    pub fn log_det_frame(&self, x: &[f64], u: &DMatrix<f64>) -> Result<f64, GeometryError> {
        let g = self.metric(x)?;
        let gram = u.transpose() * g * u;
        let scale = gram.diagonal().amax().max(1e-300);
        // a pivot at sqrt(eps·scale) is rounding noise of an exactly
        // singular Gram matrix
        let floor = (1e-14 * scale).sqrt();
        match gram.cholesky() {
            Some(ch) => {
                let diag = ch.l().diagonal();
                if diag.iter().any(|&v| !(v > floor)) {
                    return Err(GeometryError::DegenerateGram);
                }
                Ok(diag.iter().map(|v| v.ln()).sum())
            }
            None => Err(GeometryError::DegenerateGram),
        }
    }
}

/// u̇ = -Γ(ẋ, u), columnwise.
pub(crate) fn transport_rhs(gamma: &Tensor3, xdot: &DVector<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    let d = u.nrows();
    let k = u.ncols();
    let mut du = DMatrix::zeros(d, k);
    for a in 0..k {
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                for l in 0..d {
                    s -= gamma.at(i, j, l) * xdot[j] * u[(l, a)];
                }
            }
            du[(i, a)] = s;
        }
    }
    du
}

/// Metric, cometric, Christoffel symbols and their first derivatives at a
/// chart point.
#[derive(Clone, Debug)]
pub struct GeometryJet {
    pub x: DVector<f64>,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    /// gamma.at(k, i, j) = Γ^k_{ij}; symmetric in (i, j).
    pub gamma: Tensor3,
    /// gamma_deriv.at(k, i, j, l) = Γ^k_{ij,l}.
    pub gamma_deriv: Tensor4,
    /// cometric_deriv.at(i, j, l) = g^{ij}_{,l}.
    pub cometric_deriv: Tensor3,
}

/// Coordinate curvature tensor
/// R_{ijk}^s = Γ^l_{ik} Γ^s_{jl} - Γ^l_{jk} Γ^s_{il} + Γ^s_{ik,j} - Γ^s_{jk,i},
/// returned as a tensor indexed at(i, j, k, s).
///
/// This convention is the negative of R(∂_i,∂_j)∂_k for the more common
/// curvature operator sign; [`sectional_curvature`] compensates so that
/// the round sphere has positive sectional curvature.
pub fn curvature(jet: &GeometryJet) -> Tensor4 {
    let d = jet.g.nrows();
    let mut r = Tensor4::zeros(d, d, d, d);
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for s in 0..d {
                    let mut v = jet.gamma_deriv.at(s, i, k, j) - jet.gamma_deriv.at(s, j, k, i);
                    for l in 0..d {
                        v += jet.gamma.at(l, i, k) * jet.gamma.at(s, j, l)
                            - jet.gamma.at(l, j, k) * jet.gamma.at(s, i, l);
                    }
                    r.set(i, j, k, s, v);
                }
            }
        }
    }
    r
}

pub fn curvature_at(m: &ChartManifold, x: &[f64]) -> Result<Tensor4, GeometryError> {
    Ok(curvature(&m.geometry_jet(x)?))
}

/// Sectional curvature of the plane spanned by `e1`, `e2`.
pub fn sectional_curvature(
    jet: &GeometryJet,
    e1: &DVector<f64>,
    e2: &DVector<f64>,
) -> f64 {
    let d = jet.g.nrows();
    let r = curvature(jet);
    // Contracted so that K(S^2 of radius R) = +1/R^2 with the tensor
    // convention used in `curvature`.
    let mut num = 0.0;
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for s in 0..d {
                    for m in 0..d {
                        num += jet.g[(s, m)] * r.at(i, j, k, s) * e2[i] * e1[j] * e2[k] * e1[m];
                    }
                }
            }
        }
    }
    let a = (e1.transpose() * &jet.g * e1)[(0, 0)];
    let b = (e2.transpose() * &jet.g * e2)[(0, 0)];
    let c = (e1.transpose() * &jet.g * e2)[(0, 0)];
    num / (a * b - c * c)
}

fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

fn symmetrized(
    label: &str,
    x: &[f64],
    m: &DMatrix<f64>,
) -> Result<DMatrix<f64>, GeometryError> {
    let scale = 1.0 + m.amax();
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(GeometryError::NotSpd {
            label: label.to_string(),
            point: x.to_vec(),
            detail: format!("asymmetry {asym:.3e}"),
        });
    }
    Ok((m + m.transpose()) * 0.5)
}

fn spd_inverse(
    label: &str,
    x: &[f64],
    m: &DMatrix<f64>,
) -> Result<DMatrix<f64>, GeometryError> {
    match m.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => Err(GeometryError::NotSpd {
            label: label.to_string(),
            point: x.to_vec(),
            detail: "Cholesky factorization failed".to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Jet;
    use approx::assert_relative_eq;

    fn euclidean_plane() -> ChartManifold {
        ChartManifold::from_metric(
            "plane",
            JetField::new(2, |x: &[Jet]| {
                let n = x.len();
                vec![
                    Jet::constant(1.0, n),
                    Jet::constant(0.0, n),
                    Jet::constant(0.0, n),
                    Jet::constant(1.0, n),
                ]
            }),
        )
        .with_embedding(|x| vec![x[0], x[1], 0.0])
    }

    /// Round sphere in polar coordinates (θ, φ): g = diag(1, sin²θ).
    fn polar_sphere() -> ChartManifold {
        ChartManifold::from_metric(
            "sphere-polar",
            JetField::new(2, |x: &[Jet]| {
                let n = x.len();
                let s = x[0].sin();
                vec![
                    Jet::constant(1.0, n),
                    Jet::constant(0.0, n),
                    Jet::constant(0.0, n),
                    &s * &s,
                ]
            }),
        )
        .with_domain(|x| x[0] > 1e-3 && x[0] < std::f64::consts::PI - 1e-3)
    }

    #[test]
    fn plane_jet_is_flat() {
        let m = euclidean_plane();
        let jet = m.geometry_jet(&[0.3, -1.2]).unwrap();
        assert_eq!(jet.gamma.max_abs(), 0.0);
        assert_eq!(jet.gamma_deriv.max_abs(), 0.0);
        assert_eq!(jet.cometric_deriv.max_abs(), 0.0);
        let r = curvature(&jet);
        assert_eq!(r.max_abs(), 0.0);
    }

    #[test]
    fn polar_sphere_christoffel_value() {
        let m = polar_sphere();
        let theta = std::f64::consts::FRAC_PI_4;
        let jet = m.geometry_jet(&[theta, 0.7]).unwrap();
        // Γ^θ_{φφ} = -sinθ cosθ = -1/2 at θ = π/4
        assert_relative_eq!(jet.gamma.at(0, 1, 1), -0.5, epsilon = 1e-12);
        // Γ^φ_{θφ} = cotθ = 1
        assert_relative_eq!(jet.gamma.at(1, 0, 1), 1.0, epsilon = 1e-12);
        assert_relative_eq!(jet.gamma.at(1, 1, 0), 1.0, epsilon = 1e-12);
        // identity g·g⁻¹ to 1e-10
        let id = &jet.g * &jet.g_inv;
        assert!((id - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn polar_sphere_sectional_curvature_is_one() {
        let m = polar_sphere();
        let jet = m.geometry_jet(&[1.1, -0.4]).unwrap();
        let k = sectional_curvature(
            &jet,
            &DVector::from_column_slice(&[1.0, 0.0]),
            &DVector::from_column_slice(&[0.0, 1.0]),
        );
        assert_relative_eq!(k, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn curvature_antisymmetry() {
        let m = polar_sphere();
        let jet = m.geometry_jet(&[0.9, 0.2]).unwrap();
        let r = curvature(&jet);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for s in 0..2 {
                        assert_relative_eq!(
                            r.at(i, j, k, s),
                            -r.at(j, i, k, s),
                            epsilon = 1e-10
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn domain_violation_reported() {
        let m = polar_sphere();
        let err = m.geometry_jet(&[-0.5, 0.0]).unwrap_err();
        assert!(matches!(err, GeometryError::OutsideChart { .. }));
    }

    #[test]
    fn log_det_frame_values() {
        let m = euclidean_plane();
        let id = DMatrix::<f64>::identity(2, 2);
        assert_relative_eq!(m.log_det_frame(&[0.0, 0.0], &id).unwrap(), 0.0);

        let u = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 1.0]));
        assert_relative_eq!(
            m.log_det_frame(&[0.0, 0.0], &u).unwrap(),
            2f64.ln(),
            epsilon = 1e-14
        );

        let sph = polar_sphere();
        let v = sph
            .log_det_frame(&[std::f64::consts::FRAC_PI_2, 0.3], &id)
            .unwrap();
        assert_relative_eq!(v, 0.0, epsilon = 1e-12);

        // rank-deficient frame rejected
        let bad = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(m.log_det_frame(&[0.0, 0.0], &bad).is_err());
    }

    #[test]
    fn plane_geodesic_is_straight() {
        let m = euclidean_plane();
        let cfg = IntegratorConfig::rk4(100);
        let traj = m
            .riemannian_geodesic(
                &DVector::from_column_slice(&[0.0, 0.0]),
                &DVector::from_column_slice(&[1.0, 0.0]),
                1.0,
                &cfg,
            )
            .unwrap();
        let last = traj.states.last().unwrap();
        assert_relative_eq!(last[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(last[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn plane_transport_is_identity() {
        let m = euclidean_plane();
        let times: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let xs: Vec<DVector<f64>> = times
            .iter()
            .map(|&t| DVector::from_column_slice(&[t, t * t]))
            .collect();
        let u0 = DMatrix::from_column_slice(2, 2, &[1.0, 2.0, -0.5, 0.3]);
        let us = m.parallel_transport(&times, &xs, &u0, 1).unwrap();
        assert!((us.last().unwrap() - &u0).amax() < 1e-14);
    }
}
