//! Small dense square matrices, an LU solver, and the scaling-and-squaring
//! matrix exponential with the order-13 Pade approximant.
//!
//! Transition structures in this crate have a handful of states, so the code
//! favors clarity over blocked performance; everything is O(n^3) with tiny n.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::fabs;
use crate::{Error, Result};

/// Row-major square matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    a: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            a: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from a flat row-major slice of length n*n.
    pub fn from_rows(n: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != n * n {
            return Err(Error::DimensionMismatch {
                what: alloc::format!("expected {} entries for a {n}x{n} matrix, got {}", n * n, rows.len()),
            });
        }
        Ok(Matrix {
            n,
            a: rows.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            n: self.n,
            a: self.a.iter().map(|x| x * s).collect(),
        }
    }

    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        debug_assert_eq!(self.n, rhs.n);
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.a[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.a[i * n + j] += aik * rhs.a[k * n + j];
                }
            }
        }
        out
    }

    /// self + s * rhs
    fn add_scaled(&self, s: f64, rhs: &Matrix) -> Matrix {
        debug_assert_eq!(self.n, rhs.n);
        Matrix {
            n: self.n,
            a: self
                .a
                .iter()
                .zip(rhs.a.iter())
                .map(|(x, y)| x + s * y)
                .collect(),
        }
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        let n = self.n;
        let mut best = 0.0f64;
        for j in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += fabs(self.a[i * n + j]);
            }
            if s > best {
                best = s;
            }
        }
        best
    }

    /// Solves self * X = B by LU decomposition with partial pivoting.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        debug_assert_eq!(self.n, b.n);
        let n = self.n;
        let mut lu = self.a.clone();
        let x = &b.a;
        let mut perm: Vec<usize> = (0..n).collect();

        for col in 0..n {
            let mut pivot = col;
            let mut best = fabs(lu[perm[col] * n + col]);
            for r in col + 1..n {
                let v = fabs(lu[perm[r] * n + col]);
                if v > best {
                    best = v;
                    pivot = r;
                }
            }
            if best == 0.0 {
                return Err(Error::SingularMatrix);
            }
            perm.swap(col, pivot);
            let p = perm[col];
            let diag = lu[p * n + col];
            for r in col + 1..n {
                let q = perm[r];
                let f = lu[q * n + col] / diag;
                lu[q * n + col] = f;
                for j in col + 1..n {
                    lu[q * n + j] -= f * lu[p * n + j];
                }
            }
        }

        // Forward and back substitution on each right-hand-side column.
        let mut out = Matrix::zeros(n);
        for j in 0..n {
            let mut y = vec![0.0; n];
            for i in 0..n {
                let mut s = x[perm[i] * n + j];
                for k in 0..i {
                    s -= lu[perm[i] * n + k] * y[k];
                }
                y[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = y[i];
                for k in i + 1..n {
                    s -= lu[perm[i] * n + k] * out.a[k * n + j];
                }
                out.a[i * n + j] = s / lu[perm[i] * n + i];
            }
        }
        Ok(out)
    }
}

/// Pade order-13 numerator coefficients.
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// 1-norm threshold above which the argument is scaled before the order-13
/// approximant is applied.
const PADE13_THETA: f64 = 5.371_920_351_148_152;

/// Matrix exponential by scaling and squaring with the order-13 Pade
/// approximant (Higham 2005).
pub fn expm(m: &Matrix) -> Result<Matrix> {
    let n = m.n();
    if n == 0 {
        return Ok(Matrix::zeros(0));
    }
    let norm = m.norm_1();
    let mut squarings = 0u32;
    let a = if norm > PADE13_THETA {
        squarings = libm::ceil(libm::log2(norm / PADE13_THETA)) as u32;
        m.scale(libm::exp2(-(squarings as f64)))
    } else {
        m.clone()
    };

    let ident = Matrix::identity(n);
    let a2 = a.matmul(&a);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);

    let b = &PADE13;
    // U = A (A6 (b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I)
    let inner_u = a6
        .scale(b[13])
        .add_scaled(b[11], &a4)
        .add_scaled(b[9], &a2);
    let u_core = a6
        .matmul(&inner_u)
        .add_scaled(b[7], &a6)
        .add_scaled(b[5], &a4)
        .add_scaled(b[3], &a2)
        .add_scaled(b[1], &ident);
    let u = a.matmul(&u_core);
    // V = A6 (b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
    let inner_v = a6
        .scale(b[12])
        .add_scaled(b[10], &a4)
        .add_scaled(b[8], &a2);
    let v = a6
        .matmul(&inner_v)
        .add_scaled(b[6], &a6)
        .add_scaled(b[4], &a4)
        .add_scaled(b[2], &a2)
        .add_scaled(b[0], &ident);

    // (V - U) X = (V + U)
    let lhs = v.add_scaled(-1.0, &u);
    let rhs = v.add_scaled(1.0, &u);
    let mut x = lhs.solve(&rhs)?;
    for _ in 0..squarings {
        x = x.matmul(&x);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::exp;

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let z = Matrix::zeros(4);
        assert_eq!(expm(&z).unwrap(), Matrix::identity(4));
    }

    #[test]
    fn expm_of_diagonal_exponentiates_entries() {
        let mut d = Matrix::zeros(3);
        for (i, &v) in [-2.0, 0.4, 3.7].iter().enumerate() {
            d.set(i, i, v);
        }
        let e = expm(&d).unwrap();
        for (i, &v) in [-2.0, 0.4, 3.7].iter().enumerate() {
            assert!((e.get(i, i) - exp(v)).abs() < 1e-13 * exp(v));
        }
    }

    #[test]
    fn expm_of_nilpotent_is_exact() {
        let m = Matrix::from_rows(2, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        let e = expm(&m).unwrap();
        let expect = Matrix::from_rows(2, &[1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(max_abs_diff(&e, &expect) < 1e-15);
    }

    #[test]
    fn expm_of_rotation_generator_gives_rotation() {
        let th = 1.0f64;
        let m = Matrix::from_rows(2, &[0.0, -th, th, 0.0]).unwrap();
        let e = expm(&m).unwrap();
        let expect = Matrix::from_rows(2, &[th.cos(), -th.sin(), th.sin(), th.cos()]).unwrap();
        assert!(max_abs_diff(&e, &expect) < 1e-14);
    }

    #[test]
    fn expm_handles_norms_requiring_scaling() {
        // Norm far above the Pade threshold; exact answer known for the
        // nilpotent structure.
        let m = Matrix::from_rows(2, &[0.0, 100.0, 0.0, 0.0]).unwrap();
        let e = expm(&m).unwrap();
        assert!((e.get(0, 1) - 100.0).abs() < 1e-11);
        assert!((e.get(0, 0) - 1.0).abs() < 1e-13);
        // Semigroup property for a dense matrix with substantial norm.
        let q = Matrix::from_rows(3, &[-6.0, 4.0, 2.0, 1.0, -9.0, 8.0, 3.0, 5.0, -8.0]).unwrap();
        let once = expm(&q).unwrap();
        let twice = expm(&q.scale(2.0)).unwrap();
        assert!(max_abs_diff(&once.matmul(&once), &twice) < 1e-12);
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = Matrix::from_rows(3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]).unwrap();
        let x = Matrix::from_rows(3, &[1.0, 2.0, 0.0, -1.0, 0.5, 1.0, 3.0, 0.0, -2.0]).unwrap();
        let b = a.matmul(&x);
        let solved = a.solve(&b).unwrap();
        assert!(max_abs_diff(&solved, &x) < 1e-12);
    }

    #[test]
    fn solve_rejects_singular_matrix() {
        let a = Matrix::from_rows(2, &[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert_eq!(a.solve(&Matrix::identity(2)), Err(Error::SingularMatrix));
    }

    #[test]
    fn norm_1_is_max_column_sum() {
        let m = Matrix::from_rows(2, &[1.0, -3.0, -2.0, 0.5]).unwrap();
        assert_eq!(m.norm_1(), 3.5);
    }
}
