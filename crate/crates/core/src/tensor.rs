//! Dense rank-3 and rank-4 tensors with flat storage.
//!
//! Index order follows the written formulas: `Tensor3::at(k, i, j)` for a
//! symbol written with one upper and two lower indices, and the last index
//! of each type is the differentiation direction where applicable.

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(a: usize, b: usize, c: usize) -> Self {
        Tensor3 {
            dims: [a, b, c],
            data: vec![0.0; a * b * c],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.dims[1] + j) * self.dims[2] + k] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.dims[1] + j) * self.dims[2] + k] += v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(a: usize, b: usize, c: usize, d: usize) -> Self {
        Tensor4 {
            dims: [a, b, c, d],
            data: vec![0.0; a * b * c * d],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[((i * self.dims[1] + j) * self.dims[2] + k) * self.dims[3] + l]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        self.data[((i * self.dims[1] + j) * self.dims[2] + k) * self.dims[3] + l] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        self.data[((i * self.dims[1] + j) * self.dims[2] + k) * self.dims[3] + l] += v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trip() {
        let mut t = Tensor3::zeros(2, 3, 4);
        t.set(1, 2, 3, 5.0);
        t.add_at(1, 2, 3, 1.0);
        assert_eq!(t.at(1, 2, 3), 6.0);
        assert_eq!(t.at(0, 0, 0), 0.0);
        assert_eq!(t.max_abs(), 6.0);

        let mut q = Tensor4::zeros(2, 2, 2, 2);
        q.set(1, 0, 1, 0, -7.0);
        assert_eq!(q.at(1, 0, 1, 0), -7.0);
        assert_eq!(q.max_abs(), 7.0);
    }
}
