//! Bundled embedded test surfaces.
//!
//! Sphere and ellipsoid use stereographic projection from the south pole,
//! so a single chart covers everything except that pole and the chart
//! origin maps to (0, 0, R) (respectively (0, 0, c)). The hyperbolic
//! surface is the saddle z = x² - y², the simplest single-chart embedded
//! surface of negative curvature. Metrics are induced pullbacks g = DFᵀDF
//! with the Jacobian written out analytically and evaluated through jets.

use nalgebra::DVector;

use crate::geometry::{ChartManifold, GeometryError, JetField};
use crate::jet::Jet;

#[derive(Clone, Debug, PartialEq)]
pub enum SurfaceSpec {
    Plane,
    Sphere { radius: f64 },
    Ellipsoid { a: f64, b: f64, c: f64 },
    Hyperbolic,
}

impl SurfaceSpec {
    pub fn label(&self) -> String {
        match self {
            SurfaceSpec::Plane => "plane".to_string(),
            SurfaceSpec::Sphere { radius } => format!("sphere-r{radius}"),
            SurfaceSpec::Ellipsoid { a, b, c } => format!("ellipsoid-{a}-{b}-{c}"),
            SurfaceSpec::Hyperbolic => "hyperbolic".to_string(),
        }
    }
}

/// Jacobian entries of the unit-sphere stereographic chart
/// Φ(q) = (2q₁, 2q₂, 1-|q|²) / (1+|q|²).
fn stereographic_jacobian(q1: &Jet, q2: &Jet) -> [[Jet; 2]; 3] {
    let rho = &(q1 * q1) + &(q2 * q2);
    let s = rho.add_f64(1.0);
    let inv_s2 = (&s * &s).recip();
    let d11 = (&(&s - &(q1 * q1).mul_f64(2.0)) * &inv_s2).mul_f64(2.0);
    let d22 = (&(&s - &(q2 * q2).mul_f64(2.0)) * &inv_s2).mul_f64(2.0);
    let d12 = (&(q1 * q2) * &inv_s2).mul_f64(-4.0);
    let d31 = (q1 * &inv_s2).mul_f64(-4.0);
    let d32 = (q2 * &inv_s2).mul_f64(-4.0);
    [[d11, d12.clone()], [d12, d22], [d31, d32]]
}

/// Pullback metric g = DFᵀ DF for F_m(q) = axes_m · Φ_m(q / chart_scale).
fn stereographic_metric(
    axes: [f64; 3],
    chart_scale: f64,
) -> impl Fn(&[Jet]) -> Vec<Jet> + Send + Sync {
    move |q: &[Jet]| {
        let q1 = q[0].mul_f64(1.0 / chart_scale);
        let q2 = q[1].mul_f64(1.0 / chart_scale);
        let df = stereographic_jacobian(&q1, &q2);
        let mut out = Vec::with_capacity(4);
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = Jet::constant(0.0, q.len());
                for (m, row) in df.iter().enumerate() {
                    acc = &acc + &(&row[i] * &row[j]).mul_f64(axes[m] * axes[m]);
                }
                // chain rule for the inner q / chart_scale
                out.push(acc.mul_f64(1.0 / (chart_scale * chart_scale)));
            }
        }
        out
    }
}

fn unit_stereographic(q: &[f64]) -> [f64; 3] {
    let rho = q[0] * q[0] + q[1] * q[1];
    let s = 1.0 + rho;
    [2.0 * q[0] / s, 2.0 * q[1] / s, (1.0 - rho) / s]
}

/// Chart coordinates of an ambient sphere point (Z ≠ -R).
pub fn sphere_chart_of(radius: f64, p: &[f64; 3]) -> [f64; 2] {
    [
        radius * p[0] / (radius + p[2]),
        radius * p[1] / (radius + p[2]),
    ]
}

/// Build the chart manifold for a surface specification.
pub fn make_surface(spec: &SurfaceSpec) -> Result<ChartManifold, GeometryError> {
    let label = spec.label();
    match *spec {
        SurfaceSpec::Plane => {
            let field = JetField::new(2, |x: &[Jet]| {
                let n = x.len();
                vec![
                    Jet::constant(1.0, n),
                    Jet::constant(0.0, n),
                    Jet::constant(0.0, n),
                    Jet::constant(1.0, n),
                ]
            });
            Ok(ChartManifold::from_metric(&label, field)
                .with_embedding(|x| vec![x[0], x[1], 0.0]))
        }
        SurfaceSpec::Sphere { radius } => {
            if !(radius > 0.0) {
                return Err(GeometryError::InvalidSurface(format!(
                    "sphere radius must be positive, got {radius}"
                )));
            }
            let field = JetField::new(2, stereographic_metric([radius, radius, radius], radius));
            Ok(ChartManifold::from_metric(&label, field).with_embedding(move |q| {
                let p = unit_stereographic(&[q[0] / radius, q[1] / radius]);
                vec![radius * p[0], radius * p[1], radius * p[2]]
            }))
        }
        SurfaceSpec::Ellipsoid { a, b, c } => {
            if !(a > 0.0 && b > 0.0 && c > 0.0) {
                return Err(GeometryError::InvalidSurface(format!(
                    "ellipsoid semi-axes must be positive, got ({a}, {b}, {c})"
                )));
            }
            let field = JetField::new(2, stereographic_metric([a, b, c], 1.0));
            Ok(ChartManifold::from_metric(&label, field).with_embedding(move |q| {
                let p = unit_stereographic(&[q[0], q[1]]);
                vec![a * p[0], b * p[1], c * p[2]]
            }))
        }
        SurfaceSpec::Hyperbolic => {
            // F(x, y) = (x, y, x² - y²): g = I + 4 (x, -y)(x, -y)ᵀ
            let field = JetField::new(2, |q: &[Jet]| {
                let n = q.len();
                let g11 = (&q[0] * &q[0]).mul_f64(4.0).add_f64(1.0);
                let g22 = (&q[1] * &q[1]).mul_f64(4.0).add_f64(1.0);
                let g12 = (&q[0] * &q[1]).mul_f64(-4.0);
                let _ = n;
                vec![g11, g12.clone(), g12, g22]
            });
            Ok(ChartManifold::from_metric(&label, field)
                .with_embedding(|q| vec![q[0], q[1], q[0] * q[0] - q[1] * q[1]]))
        }
    }
}

/// Map a chart path pointwise to ambient coordinates.
pub fn embed(m: &ChartManifold, path: &[DVector<f64>]) -> Result<Vec<Vec<f64>>, GeometryError> {
    path.iter()
        .map(|x| {
            m.embed_point(x.as_slice()).ok_or_else(|| {
                GeometryError::Dimension(format!("{} has no embedding", m.label()))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sectional_curvature;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_metric_at_origin_is_conformal_four() {
        let m = make_surface(&SurfaceSpec::Sphere { radius: 1.0 }).unwrap();
        let g = m.metric(&[0.0, 0.0]).unwrap();
        assert!((g - DMatrix::<f64>::identity(2, 2) * 4.0).amax() < 1e-14);

        // conformal factor 4/(1+|q|²)² away from the origin
        let q = [0.3, -0.6];
        let rho = q[0] * q[0] + q[1] * q[1];
        let g = m.metric(&q).unwrap();
        let f = 4.0 / (1.0 + rho).powi(2);
        assert_relative_eq!(g[(0, 0)], f, epsilon = 1e-13);
        assert_relative_eq!(g[(1, 1)], f, epsilon = 1e-13);
        assert!(g[(0, 1)].abs() < 1e-13);
    }

    #[test]
    fn plane_metric_identity() {
        let m = make_surface(&SurfaceSpec::Plane).unwrap();
        let g = m.metric(&[3.0, -8.0]).unwrap();
        assert!((g - DMatrix::<f64>::identity(2, 2)).amax() == 0.0);
    }

    #[test]
    fn round_ellipsoid_matches_sphere() {
        let e = make_surface(&SurfaceSpec::Ellipsoid {
            a: 1.0,
            b: 1.0,
            c: 1.0,
        })
        .unwrap();
        let s = make_surface(&SurfaceSpec::Sphere { radius: 1.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let q = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let ge = e.metric(&q).unwrap();
            let gs = s.metric(&q).unwrap();
            assert!((ge - gs).amax() < 1e-12);
        }
    }

    #[test]
    fn embeddings_respect_surface_equations() {
        let m = make_surface(&SurfaceSpec::Sphere { radius: 1.0 }).unwrap();
        assert!((DVector::from_vec(m.embed_point(&[0.0, 0.0]).unwrap())
            - DVector::from_column_slice(&[0.0, 0.0, 1.0]))
        .amax()
            < 1e-15);

        let (a, b, c) = (1.0, 0.8, 0.6);
        let e = make_surface(&SurfaceSpec::Ellipsoid { a, b, c }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let p = e.embed_point(&q).unwrap();
            let resid = (p[0] / a).powi(2) + (p[1] / b).powi(2) + (p[2] / c).powi(2) - 1.0;
            assert!(resid.abs() < 1e-10, "membership residual {resid:.3e}");
        }

        let pl = make_surface(&SurfaceSpec::Plane).unwrap();
        assert_eq!(pl.embed_point(&[1.5, -2.0]).unwrap(), vec![1.5, -2.0, 0.0]);
    }

    #[test]
    fn sphere_sectional_curvature_inverse_radius_squared() {
        for radius in [1.0, 2.0] {
            let m = make_surface(&SurfaceSpec::Sphere { radius }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..20 {
                let q = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let jet = m.geometry_jet(&q).unwrap();
                let k = sectional_curvature(
                    &jet,
                    &DVector::from_column_slice(&[1.0, 0.0]),
                    &DVector::from_column_slice(&[0.0, 1.0]),
                );
                assert_relative_eq!(k, 1.0 / (radius * radius), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn hyperbolic_curvature_at_origin() {
        let m = make_surface(&SurfaceSpec::Hyperbolic).unwrap();
        let jet = m.geometry_jet(&[0.0, 0.0]).unwrap();
        let k = sectional_curvature(
            &jet,
            &DVector::from_column_slice(&[1.0, 0.0]),
            &DVector::from_column_slice(&[0.0, 1.0]),
        );
        assert_relative_eq!(k, -4.0, epsilon = 1e-8);

        // closed form K = -4 / (1 + 4x² + 4y²)² away from the origin
        let q = [0.3, -0.2];
        let jet = m.geometry_jet(&q).unwrap();
        let k = sectional_curvature(
            &jet,
            &DVector::from_column_slice(&[1.0, 0.0]),
            &DVector::from_column_slice(&[0.0, 1.0]),
        );
        let expected = -4.0 / (1.0 + 4.0 * q[0] * q[0] + 4.0 * q[1] * q[1]).powi(2);
        assert_relative_eq!(k, expected, epsilon = 1e-8);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(make_surface(&SurfaceSpec::Sphere { radius: 0.0 }).is_err());
        assert!(make_surface(&SurfaceSpec::Ellipsoid {
            a: 1.0,
            b: -0.5,
            c: 1.0
        })
        .is_err());
    }

    #[test]
    fn sphere_chart_inverse_round_trip() {
        let radius = 1.0;
        let m = make_surface(&SurfaceSpec::Sphere { radius }).unwrap();
        let q = [0.4, -0.9];
        let p = m.embed_point(&q).unwrap();
        let back = sphere_chart_of(radius, &[p[0], p[1], p[2]]);
        assert_relative_eq!(back[0], q[0], epsilon = 1e-12);
        assert_relative_eq!(back[1], q[1], epsilon = 1e-12);
    }
}
