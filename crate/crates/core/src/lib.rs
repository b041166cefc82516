//! Anisotropic sub-Riemannian geodesics on frame bundles.
//!
//! The crate integrates the Hamiltonian evolution equations for normal
//! sub-Riemannian geodesics on the bundle of (possibly rank-deficient)
//! frames over a chart-represented manifold. Projections of these curves
//! are the "most probable paths" of anisotropic diffusion statistics: the
//! frame carries a square-root covariance that is parallel transported
//! along the curve, and the induced cometric weights motion by the
//! transported precision.
//!
//! Layout:
//! - [`jet`]: truncated second-order forward-mode differentiation,
//! - [`geometry`]: chart manifolds, Christoffel symbols and derivatives,
//!   curvature, geodesics, parallel transport,
//! - [`surfaces`]: bundled embedded test surfaces (plane, sphere,
//!   ellipsoid, hyperbolic saddle),
//! - [`landmarks`]: Gaussian-kernel landmark manifolds with the
//!   cometric-route Christoffel symbols,
//! - [`frame`]: frame-bundle states, the block cometric, the Hamiltonian
//!   vector field, development/anti-development and diagnostics,
//! - [`ode`]: fixed-step explicit integrators and trajectories,
//! - [`shoot`]: Levenberg-Marquardt geodesic shooting with multi-start,
//! - [`estimate`]: intrinsic mean and mean/covariance estimators.

pub mod estimate;
pub mod frame;
pub mod geometry;
pub mod jet;
pub mod landmarks;
pub mod ode;
pub mod optim;
pub mod shoot;
pub mod surfaces;
pub mod tensor;

pub use frame::{CometricBlocks, CotangentState, FramePoint};
pub use geometry::{ChartManifold, GeometryJet};
pub use ode::{IntegratorConfig, Scheme, Trajectory};
