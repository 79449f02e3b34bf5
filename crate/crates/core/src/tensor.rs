//! Small dense matrices for dimensions 1 and 2.
//!
//! A [`Tensor`] always stores a 2x2 array; in dimension 1 only the `[0][0]`
//! entry is meaningful and the remaining entries are kept at zero.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tensor(pub [[f64; 2]; 2]);

impl Tensor {
    pub const ZERO: Tensor = Tensor([[0.0; 2]; 2]);

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    /// `value * I` restricted to `dim`.
    pub fn scalar(dim: usize, value: f64) -> Self {
        let mut t = Self::ZERO;
        for i in 0..dim {
            t.0[i][i] = value;
        }
        t
    }

    /// Symmetric matrix from its upper triangle. In 1D only `a11` is used.
    pub fn sym(dim: usize, a11: f64, a12: f64, a22: f64) -> Self {
        if dim == 1 {
            Self::scalar(1, a11)
        } else {
            Tensor([[a11, a12], [a12, a22]])
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut t = *self;
        for row in t.0.iter_mut() {
            for v in row.iter_mut() {
                *v *= c;
            }
        }
        t
    }

    pub fn add(&self, other: &Tensor) -> Self {
        let mut t = *self;
        for i in 0..2 {
            for j in 0..2 {
                t.0[i][j] += other.0[i][j];
            }
        }
        t
    }

    pub fn sub(&self, other: &Tensor) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn transpose(&self) -> Self {
        let a = self.0;
        Tensor([[a[0][0], a[1][0]], [a[0][1], a[1][1]]])
    }

    pub fn symmetrized(&self) -> Self {
        self.add(&self.transpose()).scale(0.5)
    }

    pub fn symmetry_defect(&self) -> f64 {
        (self.0[0][1] - self.0[1][0]).abs()
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    pub fn quad_form(&self, v: [f64; 2]) -> f64 {
        let av = self.apply(v);
        av[0] * v[0] + av[1] * v[1]
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Ascending eigenvalues of the symmetric part.
    pub fn eigenvalues(&self, dim: usize) -> [f64; 2] {
        if dim == 1 {
            return [self.0[0][0], self.0[0][0]];
        }
        let s = self.symmetrized().0;
        let mean = 0.5 * (s[0][0] + s[1][1]);
        let half_diff = 0.5 * (s[0][0] - s[1][1]);
        let rad = half_diff.hypot(s[0][1]);
        [mean - rad, mean + rad]
    }

    /// Row-major entries restricted to `dim`.
    pub fn to_rows(&self, dim: usize) -> Vec<Vec<f64>> {
        (0..dim)
            .map(|i| (0..dim).map(|j| self.0[i][j]).collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let dim = rows.len();
        if !(1..=2).contains(&dim) || rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        let mut t = Self::ZERO;
        for i in 0..dim {
            for j in 0..dim {
                t.0[i][j] = rows[i][j];
            }
        }
        Some(t)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((self.0[i][j] - other.0[i][j]).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_diagonal_and_rotated() {
        let t = Tensor::sym(2, 2.0, 0.0, 0.5);
        assert_eq!(t.eigenvalues(2), [0.5, 2.0]);
        // [[1, 0.5], [0.5, 1]] has eigenvalues 0.5 and 1.5
        let r = Tensor::sym(2, 1.0, 0.5, 1.0);
        let e = r.eigenvalues(2);
        assert!((e[0] - 0.5).abs() < 1e-15 && (e[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn one_dimensional_tensor_ignores_off_diagonal() {
        let t = Tensor::sym(1, 3.0, 7.0, 9.0);
        assert_eq!(t.0, [[3.0, 0.0], [0.0, 0.0]]);
        assert_eq!(t.eigenvalues(1), [3.0, 3.0]);
    }
}
