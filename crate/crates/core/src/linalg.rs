//! Dense 2x2 matrices, all the state space ever needs.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix2(pub [[f64; 2]; 2]);

impl Matrix2 {
    pub const IDENTITY: Matrix2 = Matrix2([[1.0, 0.0], [0.0, 1.0]]);

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Matrix2([[a, b], [c, d]])
    }

    pub fn scaled(s: f64) -> Self {
        Self::new(s, 0.0, 0.0, s)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn transpose(&self) -> Self {
        let [[a, b], [c, d]] = self.0;
        Self::new(a, c, b, d)
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> f64 {
        let [[a, b], [c, d]] = self.0;
        a * d - b * c
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let [[a, b], [c, d]] = self.0;
        Some(Self::new(d / det, -b / det, -c / det, a / det))
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        let [[a, b], [c, d]] = self.0;
        [a * v[0] + b * v[1], c * v[0] + d * v[1]]
    }

    /// `v^T M v`.
    pub fn quadratic_form(&self, v: [f64; 2]) -> f64 {
        let w = self.mul_vec(v);
        v[0] * w[0] + v[1] * w[1]
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }

    pub fn eigenvalues(&self) -> [Complex64; 2] {
        let half_tr = 0.5 * self.trace();
        let disc = half_tr * half_tr - self.det();
        if disc >= 0.0 {
            let s = disc.sqrt();
            // Avoid cancellation in the smaller root.
            let big = if half_tr >= 0.0 {
                half_tr + s
            } else {
                half_tr - s
            };
            let small = if big != 0.0 { self.det() / big } else { 0.0 };
            let (lo, hi) = if big < small {
                (big, small)
            } else {
                (small, big)
            };
            [Complex64::new(lo, 0.0), Complex64::new(hi, 0.0)]
        } else {
            let s = (-disc).sqrt();
            [Complex64::new(half_tr, -s), Complex64::new(half_tr, s)]
        }
    }

    /// Eigenvalues of a symmetric matrix, ascending.
    pub fn symmetric_eigenvalues(&self) -> [f64; 2] {
        let [[a, b], [_, d]] = self.0;
        let m = 0.5 * (a + d);
        let r = (0.5 * (a - d)).hypot(b);
        [m - r, m + r]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.0[0][1] - self.0[1][0]).abs() <= tol * self.norm_inf().max(f64::MIN_POSITIVE)
    }

    /// Lower Cholesky factor of a symmetric positive definite matrix.
    pub fn cholesky(&self) -> Option<Self> {
        let [[a, b], [_, d]] = self.0;
        if !(a > 0.0) {
            return None;
        }
        let l11 = a.sqrt();
        let l21 = b / l11;
        let rem = d - l21 * l21;
        if !(rem > 0.0) {
            return None;
        }
        Some(Self::new(l11, 0.0, l21, rem.sqrt()))
    }
}

impl Add for Matrix2 {
    type Output = Matrix2;
    fn add(self, o: Matrix2) -> Matrix2 {
        let mut r = self.0;
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += o.0[i][j];
            }
        }
        Matrix2(r)
    }
}

impl Sub for Matrix2 {
    type Output = Matrix2;
    fn sub(self, o: Matrix2) -> Matrix2 {
        self + (-o)
    }
}

impl Neg for Matrix2 {
    type Output = Matrix2;
    fn neg(self) -> Matrix2 {
        let [[a, b], [c, d]] = self.0;
        Self::new(-a, -b, -c, -d)
    }
}

impl Mul for Matrix2 {
    type Output = Matrix2;
    fn mul(self, o: Matrix2) -> Matrix2 {
        let mut r = [[0.0; 2]; 2];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j];
            }
        }
        Matrix2(r)
    }
}
