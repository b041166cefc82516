//! Truncated second-order forward-mode jets.
//!
//! A [`Jet`] carries a value together with its gradient and Hessian with
//! respect to a fixed set of `n` input variables. Evaluating a metric
//! closure on seeded jets therefore yields the metric, its first and its
//! second coordinate derivatives in one pass, which is exactly what the
//! Christoffel symbols and their derivatives need. Finite differences are
//! used only as an independent oracle in tests.

use nalgebra::{DMatrix, DVector};

/// Second-order truncated jet over `n` input variables.
#[derive(Clone, Debug)]
pub struct Jet {
    /// Value of the expression.
    pub v: f64,
    /// Gradient with respect to the seeded inputs.
    pub g: DVector<f64>,
    /// Hessian with respect to the seeded inputs (kept symmetric).
    pub h: DMatrix<f64>,
}

impl Jet {
    /// A constant: zero gradient and Hessian.
    pub fn constant(v: f64, n: usize) -> Self {
        Jet {
            v,
            g: DVector::zeros(n),
            h: DMatrix::zeros(n, n),
        }
    }

    /// The `i`-th input variable with value `v`.
    pub fn variable(v: f64, i: usize, n: usize) -> Self {
        let mut g = DVector::zeros(n);
        g[i] = 1.0;
        Jet {
            v,
            g,
            h: DMatrix::zeros(n, n),
        }
    }

    fn n(&self) -> usize {
        self.g.len()
    }

    /// Chain rule for a scalar function with derivatives `d1 = f'(v)` and
    /// `d2 = f''(v)`.
    fn unary(&self, f: f64, d1: f64, d2: f64) -> Jet {
        let mut h = &self.h * d1;
        // h += d2 * g g^T
        for i in 0..self.n() {
            for j in 0..self.n() {
                h[(i, j)] += d2 * self.g[i] * self.g[j];
            }
        }
        Jet {
            v: f,
            g: &self.g * d1,
            h,
        }
    }

    pub fn sin(&self) -> Jet {
        self.unary(self.v.sin(), self.v.cos(), -self.v.sin())
    }

    pub fn cos(&self) -> Jet {
        self.unary(self.v.cos(), -self.v.sin(), -self.v.cos())
    }

    pub fn exp(&self) -> Jet {
        let e = self.v.exp();
        self.unary(e, e, e)
    }

    pub fn ln(&self) -> Jet {
        self.unary(self.v.ln(), 1.0 / self.v, -1.0 / (self.v * self.v))
    }

    pub fn sqrt(&self) -> Jet {
        let s = self.v.sqrt();
        self.unary(s, 0.5 / s, -0.25 / (s * s * s))
    }

    pub fn recip(&self) -> Jet {
        let iv = 1.0 / self.v;
        self.unary(iv, -iv * iv, 2.0 * iv * iv * iv)
    }

    pub fn powi(&self, p: i32) -> Jet {
        let f = self.v.powi(p);
        let d1 = p as f64 * self.v.powi(p - 1);
        let d2 = (p * (p - 1)) as f64 * self.v.powi(p - 2);
        self.unary(f, d1, d2)
    }

    pub fn mul_f64(&self, c: f64) -> Jet {
        Jet {
            v: self.v * c,
            g: &self.g * c,
            h: &self.h * c,
        }
    }

    pub fn add_f64(&self, c: f64) -> Jet {
        Jet {
            v: self.v + c,
            g: self.g.clone(),
            h: self.h.clone(),
        }
    }
}

impl std::ops::Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        Jet {
            v: self.v + rhs.v,
            g: &self.g + &rhs.g,
            h: &self.h + &rhs.h,
        }
    }
}

impl std::ops::Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        Jet {
            v: self.v - rhs.v,
            g: &self.g - &rhs.g,
            h: &self.h - &rhs.h,
        }
    }
}

impl std::ops::Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        let n = self.n();
        let mut h = &self.h * rhs.v + &rhs.h * self.v;
        for i in 0..n {
            for j in 0..n {
                h[(i, j)] += self.g[i] * rhs.g[j] + rhs.g[i] * self.g[j];
            }
        }
        Jet {
            v: self.v * rhs.v,
            g: &self.g * rhs.v + &rhs.g * self.v,
            h,
        }
    }
}

impl std::ops::Div for &Jet {
    type Output = Jet;
    fn div(self, rhs: &Jet) -> Jet {
        self * &rhs.recip()
    }
}

impl std::ops::Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet {
            v: -self.v,
            g: -&self.g,
            h: -&self.h,
        }
    }
}

macro_rules! forward_owned {
    ($trait:ident, $method:ident) => {
        impl std::ops::$trait for Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                std::ops::$trait::$method(&self, &rhs)
            }
        }
        impl std::ops::$trait<&Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: &Jet) -> Jet {
                std::ops::$trait::$method(&self, rhs)
            }
        }
        impl std::ops::$trait<Jet> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                std::ops::$trait::$method(self, &rhs)
            }
        }
    };
}

forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);
forward_owned!(Div, div);

impl std::ops::Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        -&self
    }
}

/// Seed a chart point as jet variables.
pub fn seed(x: &[f64]) -> Vec<Jet> {
    let n = x.len();
    x.iter()
        .enumerate()
        .map(|(i, &v)| Jet::variable(v, i, n))
        .collect()
}
