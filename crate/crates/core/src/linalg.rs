//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Operator 2-norm (largest singular value).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    match (m.nrows(), m.ncols()) {
        (0, _) | (_, 0) => 0.0,
        (1, 1) => m[(0, 0)].abs(),
        _ => m
            .singular_values()
            .iter()
            .fold(0.0_f64, |acc, &s| acc.max(s)),
    }
}

/// 2-norm condition number; infinite for singular matrices.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        let a = m[(0, 0)].abs();
        return if a == 0.0 { f64::INFINITY } else { 1.0 };
    }
    let sv = m.singular_values();
    let max = sv.iter().fold(0.0_f64, |a, &s| a.max(s));
    let min = sv.iter().fold(f64::INFINITY, |a, &s| a.min(s));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn identity(d: usize) -> DMatrix<f64> {
    DMatrix::identity(d, d)
}

/// Dense cubic array `a[(i, j, k)]`, used for second derivatives.
///
/// For a second derivative `∂²y/∂η²` the first index is the output
/// component and the last two are the differentiation slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array3 {
    dim: usize,
    data: Vec<f64>,
}

impl Array3 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    /// Wraps row-major data (`k` fastest).
    pub fn from_vec(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim * dim, "Array3 data length mismatch");
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dim + j) * self.dim + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    /// Flattening `R^{d×d} → R^d`; its 2-norm bounds the bilinear norm
    /// `sup |a(u, v)|` over unit vectors, with equality when `d = 1`.
    pub fn flattened(&self) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d * d, |i, jk| self.data[i * d * d + jk])
    }

    pub fn norm(&self) -> f64 {
        op_norm(&self.flattened())
    }

    /// Largest deviation between the two differentiation slots.
    pub fn symmetry_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                for k in (j + 1)..d {
                    worst = worst.max((self.get(i, j, k) - self.get(i, k, j)).abs());
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, &v| a.max(v.abs()))
    }

    pub fn sub(&self, other: &Array3) -> Array3 {
        assert_eq!(self.dim, other.dim);
        Array3 {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// `(m · a)[i,j,k] = Σ_l m[i,l] a[l,j,k]`.
    pub fn left_mul(&self, m: &DMatrix<f64>) -> Array3 {
        let d = self.dim;
        let mut out = Array3::zeros(d);
        for i in 0..d {
            for l in 0..d {
                let c = m[(i, l)];
                if c == 0.0 {
                    continue;
                }
                for j in 0..d {
                    for k in 0..d {
                        let o = out.offset(i, j, k);
                        out.data[o] += c * self.get(l, j, k);
                    }
                }
            }
        }
        out
    }

    /// Contraction with a matrix in both slots:
    /// `Σ_{a,b} self[i,a,b] z[a,j] z[b,k]`.
    pub fn contract_both(&self, z: &DMatrix<f64>) -> Array3 {
        let d = self.dim;
        let mut out = Array3::zeros(d);
        for i in 0..d {
            for a in 0..d {
                for b in 0..d {
                    let c = self.get(i, a, b);
                    if c == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        let za = z[(a, j)];
                        for k in 0..d {
                            let o = out.offset(i, j, k);
                            out.data[o] += c * za * z[(b, k)];
                        }
                    }
                }
            }
        }
        out
    }

    /// Slice with the last slot fixed: `m[i,j] = a[i,j,k]`.
    pub fn slice_last(&self, k: usize) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, j| self.get(i, j, k))
    }
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
}

/// Relative error with an absolute floor so that zero-vs-zero compares as 0.
pub fn rel_error(got: f64, want: f64, floor: f64) -> f64 {
    (got - want).abs() / want.abs().max(floor)
}

pub fn matrix_rel_error(got: &DMatrix<f64>, want: &DMatrix<f64>, floor: f64) -> f64 {
    op_norm(&(got - want)) / op_norm(want).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_of_diagonal_is_largest_entry() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![-3.0, 2.0]));
        assert!((op_norm(&m) - 3.0).abs() < 1e-14);
        assert!((condition_number(&m) - 1.5).abs() < 1e-14);
    }

    #[test]
    fn array3_contractions() {
        let mut a = Array3::zeros(2);
        a.set(0, 0, 1, 1.0);
        a.set(0, 1, 0, 1.0);
        assert_eq!(a.symmetry_defect(), 0.0);
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let c = a.contract_both(&z);
        // c[0,j,k] = z[0,j] z[1,k] + z[1,j] z[0,k]
        assert_eq!(c.get(0, 0, 0), 2.0 * 1.0 * 3.0);
        assert_eq!(c.get(0, 0, 1), 1.0 * 4.0 + 3.0 * 2.0);
        a.set(1, 1, 0, 0.5);
        assert_eq!(a.symmetry_defect(), 0.5);
    }

    #[test]
    fn flattened_norm_is_exact_in_one_dimension() {
        let a = Array3::from_vec(1, vec![-0.7]);
        assert_eq!(a.norm(), 0.7);
    }
}
