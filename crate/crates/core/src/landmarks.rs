//! LDDMM landmark manifolds with a Gaussian reproducing kernel.
//!
//! N labeled points in the ambient plane form a manifold of dimension
//! d = N·amb whose *cometric* is the kernel block matrix
//! g^{i^k j^l} = K(p_i, p_j) δ^l_k with K(a, b) = exp(-|a-b|²/(2σ²)).
//! Because the kernel is smooth and closed-form, the cometric derivatives
//! (and hence Christoffel symbols via the cometric route) are exact.
//!
//! The flat index convention is i^k = amb·i + k (landmark i, component k).

use nalgebra::{DMatrix, DVector};

use crate::geometry::{ChartManifold, GeometryError, TensorField, TensorFieldJet};
use crate::tensor::{Tensor3, Tensor4};

/// Landmarks closer than this are treated as coincident (singular kernel).
pub const MIN_SEPARATION: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct LandmarkManifold {
    /// Number of landmarks.
    pub n: usize,
    /// Ambient dimension of each landmark.
    pub amb: usize,
    /// Gaussian kernel width.
    pub sigma: f64,
}

impl LandmarkManifold {
    pub fn new(n: usize, amb: usize, sigma: f64) -> Result<Self, GeometryError> {
        if n == 0 || amb == 0 || !(sigma > 0.0) {
            return Err(GeometryError::InvalidSurface(format!(
                "landmark manifold needs n ≥ 1, amb ≥ 1, sigma > 0 (got n={n}, amb={amb}, sigma={sigma})"
            )));
        }
        Ok(LandmarkManifold { n, amb, sigma })
    }

    /// Manifold dimension d = N·amb.
    pub fn dim(&self) -> usize {
        self.n * self.amb
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-r2 / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// Kernel cometric g^{i^k j^l} = K(p_i,p_j) δ^l_k.
    pub fn cometric(&self, p: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        Ok(self.field().eval(p)?.value)
    }

    /// First derivatives of the cometric, at(i^k, j^l, r^q) = g^{i^k j^l}_{,r^q}.
    pub fn cometric_deriv(&self, p: &[f64]) -> Result<Tensor3, GeometryError> {
        Ok(self.field().eval(p)?.d1)
    }

    /// Christoffel symbols and their derivatives obtained from derivatives
    /// of the cometric.
    pub fn christoffel(&self, p: &[f64]) -> Result<(Tensor3, Tensor4), GeometryError> {
        let t = self.field().eval(p)?;
        let g = t
            .value
            .clone()
            .cholesky()
            .ok_or_else(|| GeometryError::NotSpd {
                label: self.label(),
                point: p.to_vec(),
                detail: "kernel matrix not positive definite".to_string(),
            })?
            .inverse();
        christoffel_from_cometric(&g, &t)
    }

    pub fn field(&self) -> GaussianKernelCometric {
        GaussianKernelCometric { m: self.clone() }
    }

    fn label(&self) -> String {
        format!("landmarks-n{}-sigma{}", self.n, self.sigma)
    }

    /// The landmark manifold as a cometric-primary chart manifold.
    pub fn chart(&self) -> ChartManifold {
        let lm = self.clone();
        ChartManifold::from_cometric(&self.label(), self.field())
            .with_domain(move |x| min_separation(&lm, x) > MIN_SEPARATION)
    }

    /// Flatten [x, y] landmark pairs to chart coordinates.
    pub fn pack(&self, landmarks: &[Vec<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (i, p) in landmarks.iter().enumerate() {
            for k in 0..self.amb {
                out[self.amb * i + k] = p[k];
            }
        }
        out
    }

    /// Split chart coordinates into landmark positions.
    pub fn unpack(&self, x: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| x[self.amb * i..self.amb * (i + 1)].to_vec())
            .collect()
    }
}

fn min_separation(lm: &LandmarkManifold, x: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..lm.n {
        for j in (i + 1)..lm.n {
            let mut r2 = 0.0;
            for k in 0..lm.amb {
                let d = x[lm.amb * i + k] - x[lm.amb * j + k];
                r2 += d * d;
            }
            best = best.min(r2.sqrt());
        }
    }
    best
}

/// Closed-form jet of the Gaussian kernel cometric.
pub struct GaussianKernelCometric {
    m: LandmarkManifold,
}

impl TensorField for GaussianKernelCometric {
    fn dim(&self) -> usize {
        self.m.dim()
    }

    fn eval(&self, x: &[f64]) -> Result<TensorFieldJet, GeometryError> {
        let (n, amb, sigma) = (self.m.n, self.m.amb, self.m.sigma);
        let d = n * amb;
        let s2 = sigma * sigma;
        let mut value = DMatrix::zeros(d, d);
        let mut d1 = Tensor3::zeros(d, d, d);
        let mut d2 = Tensor4::zeros(d, d, d, d);

        for i in 0..n {
            for j in 0..n {
                if i == j {
                    // K(p, p) = 1 with vanishing derivatives.
                    for k in 0..amb {
                        value[(amb * i + k, amb * j + k)] = 1.0;
                    }
                    continue;
                }
                let delta: Vec<f64> = (0..amb)
                    .map(|k| x[amb * i + k] - x[amb * j + k])
                    .collect();
                let r2: f64 = delta.iter().map(|v| v * v).sum();
                if i < j && r2.sqrt() <= MIN_SEPARATION {
                    return Err(GeometryError::CoincidentLandmarks {
                        i,
                        j,
                        sep: r2.sqrt(),
                    });
                }
                let kv = (-r2 / (2.0 * s2)).exp();
                // dK/dδ^q and d²K/dδ^q dδ^w for δ = p_i - p_j; a chart
                // coordinate r^q touches δ with sign +1 (r = i) or -1 (r = j).
                let grad: Vec<f64> = delta.iter().map(|&dq| -dq / s2 * kv).collect();
                let hess = |q: usize, w: usize| -> f64 {
                    let kron = if q == w { 1.0 } else { 0.0 };
                    (delta[q] * delta[w] / (s2 * s2) - kron / s2) * kv
                };
                for k in 0..amb {
                    let row = amb * i + k;
                    let col = amb * j + k;
                    value[(row, col)] = kv;
                    for q in 0..amb {
                        d1.set(row, col, amb * i + q, grad[q]);
                        d1.set(row, col, amb * j + q, -grad[q]);
                        for w in 0..amb {
                            let h = hess(q, w);
                            d2.set(row, col, amb * i + q, amb * i + w, h);
                            d2.set(row, col, amb * j + q, amb * j + w, h);
                            d2.set(row, col, amb * i + q, amb * j + w, -h);
                            d2.set(row, col, amb * j + q, amb * i + w, -h);
                        }
                    }
                }
            }
        }
        Ok(TensorFieldJet { value, d1, d2 })
    }
}

/// Christoffel symbols and their first derivatives from a cometric jet:
///
/// Γ^k_{ij} = 1/2 g_{ir} (g^{kl} g^{rs}_{,l} - g^{sl} g^{rk}_{,l}
///                        - g^{rl} g^{ks}_{,l}) g_{sj},
///
/// differentiated once more with g_{ab,q} = -g_{ar} g^{rs}_{,q} g_{sb}.
/// `g` is the (already inverted) metric, `t` the cometric with two
/// derivative orders.
pub fn christoffel_from_cometric(
    g: &DMatrix<f64>,
    t: &TensorFieldJet,
) -> Result<(Tensor3, Tensor4), GeometryError> {
    let d = g.nrows();
    let co = &t.value;

    // Cometric derivative slices as matrices: dco[l][(i,j)] = g^{ij}_{,l}.
    let dco: Vec<DMatrix<f64>> = (0..d)
        .map(|l| DMatrix::from_fn(d, d, |i, j| t.d1.at(i, j, l)))
        .collect();
    // Metric derivatives g_{ab,q} = -(g · g^{··}_{,q} · g)_{ab}.
    let dg: Vec<DMatrix<f64>> = (0..d).map(|q| -(g * &dco[q] * g)).collect();

    // inner[k][(r,s)] = g^{kl} g^{rs}_{,l} - g^{sl} g^{rk}_{,l} - g^{rl} g^{ks}_{,l}
    let inner: Vec<DMatrix<f64>> = (0..d)
        .map(|k| {
            DMatrix::from_fn(d, d, |r, s| {
                let mut acc = 0.0;
                for l in 0..d {
                    acc += co[(k, l)] * dco[l][(r, s)]
                        - co[(s, l)] * dco[l][(r, k)]
                        - co[(r, l)] * dco[l][(k, s)];
                }
                acc
            })
        })
        .collect();

    let mut gamma = Tensor3::zeros(d, d, d);
    for k in 0..d {
        let m = g * &inner[k] * g * 0.5;
        for i in 0..d {
            for j in 0..d {
                gamma.set(k, i, j, m[(i, j)]);
            }
        }
    }

    let mut gamma_deriv = Tensor4::zeros(d, d, d, d);
    for q in 0..d {
        for k in 0..d {
            let inner_q = DMatrix::from_fn(d, d, |r, s| {
                let mut acc = 0.0;
                for l in 0..d {
                    acc += dco[q][(k, l)] * dco[l][(r, s)]
                        + co[(k, l)] * t.d2.at(r, s, l, q)
                        - dco[q][(s, l)] * dco[l][(r, k)]
                        - co[(s, l)] * t.d2.at(r, k, l, q)
                        - dco[q][(r, l)] * dco[l][(k, s)]
                        - co[(r, l)] * t.d2.at(k, s, l, q);
                }
                acc
            });
            let m = (&dg[q] * &inner[k] * g + g * &inner[k] * &dg[q] + g * inner_q * g) * 0.5;
            for i in 0..d {
                for j in 0..d {
                    gamma_deriv.set(k, i, j, q, m[(i, j)]);
                }
            }
        }
    }

    Ok((gamma, gamma_deriv))
}
