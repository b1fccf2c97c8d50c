use crate::error::{Error, Result};
use crate::linalg::Matrix2;

/// Solves `A^T P + P A = -Q` for symmetric `P`.
///
/// With `P = [[p11, p12], [p12, p22]]` the matrix equation collapses to three
/// linear equations in `(p11, p12, p22)`. One round of iterative refinement
/// keeps the residual at rounding level for poorly scaled `A`.
pub fn solve_lyapunov(a: &Matrix2, q: &Matrix2) -> Result<Matrix2> {
    if !a.is_finite() || !q.is_finite() {
        return Err(Error::invalid("A", "entries must be finite"));
    }
    let ev = a.eigenvalues();
    if !(ev[0].re < 0.0 && ev[1].re < 0.0) {
        return Err(Error::NotHurwitz {
            re1: ev[0].re,
            re2: ev[1].re,
        });
    }
    if !q.is_symmetric(1e-14) || q.cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }

    let [[a11, a12], [a21, a22]] = a.0;
    let k = [
        [2.0 * a11, 2.0 * a21, 0.0],
        [a12, a11 + a22, a21],
        [0.0, 2.0 * a12, 2.0 * a22],
    ];
    let rhs = [
        -q.get(0, 0),
        -0.5 * (q.get(0, 1) + q.get(1, 0)),
        -q.get(1, 1),
    ];
    let mut x = solve3(&k, rhs).ok_or(Error::NotHurwitz {
        re1: ev[0].re,
        re2: ev[1].re,
    })?;
    let r = [
        rhs[0] - dot(&k[0], &x),
        rhs[1] - dot(&k[1], &x),
        rhs[2] - dot(&k[2], &x),
    ];
    if let Some(dx) = solve3(&k, r) {
        for i in 0..3 {
            x[i] += dx[i];
        }
    }
    let p = Matrix2::new(x[0], x[1], x[1], x[2]);
    if p.cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(p)
}

/// `A^T P + P A + Q`.
pub fn lyapunov_residual(a: &Matrix2, p: &Matrix2, q: &Matrix2) -> Matrix2 {
    a.transpose() * *p + *p * *a + *q
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Gaussian elimination with partial pivoting.
fn solve3(k: &[[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&k[i]);
        m[i][3] = b[i];
    }
    let scale = k.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() <= 1e-14 * scale {
            return None;
        }
        m.swap(col, piv);
        for row in col + 1..3 {
            let pivot = m[col];
            let f = m[row][col] / pivot[col];
            for (c, p) in pivot.iter().enumerate().skip(col) {
                m[row][c] -= f * p;
            }
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let mut s = m[i][3];
        for j in i + 1..3 {
            s -= m[i][j] * x[j];
        }
        x[i] = s / m[i][i];
    }
    Some(x)
}
