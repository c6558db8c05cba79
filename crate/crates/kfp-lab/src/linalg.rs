//! Dense helpers: tridiagonal solves, matrix exponential, eigen wrappers, fixed-order sums.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Factored tridiagonal system (Thomas algorithm, no pivoting).
///
/// Valid for diagonally dominant systems, which is all this crate produces
/// (backward-Euler M-matrices).
#[derive(Debug, Clone)]
pub struct Tridiag {
    // forward-eliminated coefficients
    cp: Vec<f64>,   // modified super-diagonal
    inv_d: Vec<f64>, // inverse of modified diagonal
    lower: Vec<f64>,
}

impl Tridiag {
    /// Factor the system with `lower[i]` on (i+1, i), `diag[i]` on (i, i),
    /// `upper[i]` on (i, i+1).
    pub fn factor(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        assert_eq!(lower.len(), n - 1);
        assert_eq!(upper.len(), n - 1);
        let mut cp = vec![0.0; n - 1];
        let mut inv_d = vec![0.0; n];
        let mut d = diag[0];
        if d == 0.0 {
            return Err(Error::Linalg("tridiagonal pivot is zero".into()));
        }
        inv_d[0] = 1.0 / d;
        for i in 0..n - 1 {
            cp[i] = upper[i] * inv_d[i];
            d = diag[i + 1] - lower[i] * cp[i];
            if d == 0.0 {
                return Err(Error::Linalg("tridiagonal pivot is zero".into()));
            }
            inv_d[i + 1] = 1.0 / d;
        }
        Ok(Self { cp, inv_d, lower: lower.to_vec() })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = b.len();
        b[0] *= self.inv_d[0];
        for i in 1..n {
            b[i] = (b[i] - self.lower[i - 1] * b[i - 1]) * self.inv_d[i];
        }
        for i in (0..n - 1).rev() {
            b[i] -= self.cp[i] * b[i + 1];
        }
    }
}

/// Matrix exponential by Padé(13) with scaling and squaring (Higham 2005).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let n = a.nrows();
    let norm = a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let theta13 = 5.371920351148152;
    let s = if norm > theta13 { (norm / theta13).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(s);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let id = DMatrix::identity(n, n);
    let u = &a
        * (&a6 * (B[13] * &a6 + B[11] * &a4 + B[9] * &a2)
            + B[7] * &a6
            + B[5] * &a4
            + B[3] * &a2
            + B[1] * &id);
    let v = &a6 * (B[12] * &a6 + B[10] * &a4 + B[8] * &a2)
        + B[6] * &a6
        + B[4] * &a4
        + B[2] * &a2
        + B[0] * &id;
    let num = &v + &u;
    let den = &v - &u;
    let mut r = den
        .lu()
        .solve(&num)
        .expect("Pade denominator is singular");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Eigenvalues of the symmetric pencil (A, B) with B symmetric positive definite,
/// via Cholesky reduction. Returns eigenvalues sorted ascending.
pub fn generalized_symmetric_eigenvalues(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Linalg("pencil right-hand matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Linalg("Cholesky factor is singular".into()))?;
    let m = &linv * a * linv.transpose();
    let sym = 0.5 * (&m + m.transpose());
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(ev)
}

/// Real parts of all eigenvalues of a general square matrix (Schur form).
pub fn eigenvalues_re(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let schur = a
        .clone()
        .try_schur(1e-12, 10_000)
        .ok_or(Error::EigenNoConvergence { residual: f64::NAN })?;
    let ev = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .collect();
    Ok(ev)
}

/// Spectral abscissa (max real part of the spectrum).
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues_re(a)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Fixed-order pairwise sum; deterministic and more accurate than naive folding.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    match x.len() {
        0 => 0.0,
        1 => x[0],
        2 => x[0] + x[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
        }
    }
}

/// Dot product between two slices with the fixed pairwise order.
pub fn weighted_dot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    assert_eq!(a.len(), w.len());
    let prods: Vec<f64> = (0..a.len()).map(|i| a[i] * b[i] * w[i]).collect();
    pairwise_sum(&prods)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn tridiag_solves_poisson_like_system() {
        let n = 8;
        let lower = vec![-1.0; n - 1];
        let diag = vec![2.5; n];
        let upper = vec![-1.0; n - 1];
        let t = Tridiag::factor(&lower, &diag, &upper).unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let mut b = vec![0.0; n];
        for i in 0..n {
            b[i] = 2.5 * x_true[i];
            if i > 0 {
                b[i] -= x_true[i - 1];
            }
            if i + 1 < n {
                b[i] -= x_true[i + 1];
            }
        }
        t.solve_in_place(&mut b);
        for i in 0..n {
            assert_relative_eq!(b[i], x_true[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn expm_matches_series_on_small_matrix() {
        let a = dmatrix![0.0, 1.0; -1.0, 0.0]; // rotation generator
        let e = expm(&a);
        // exp of rotation generator at angle 1
        assert_relative_eq!(e[(0, 0)], 1.0f64.cos(), epsilon = 1e-12);
        assert_relative_eq!(e[(0, 1)], 1.0f64.sin(), epsilon = 1e-12);
        assert_relative_eq!(e[(1, 0)], -(1.0f64.sin()), epsilon = 1e-12);
    }

    #[test]
    fn expm_scaling_branch() {
        let a = dmatrix![-30.0, 4.0; 0.0, -10.0];
        let e = expm(&a);
        assert_relative_eq!(e[(0, 0)], (-30.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(e[(1, 1)], (-10.0f64).exp(), epsilon = 1e-12);
        // off-diagonal: 4*(e^{-10}-e^{-30})/20
        assert_relative_eq!(e[(0, 1)], 4.0 * ((-10.0f64).exp() - (-30.0f64).exp()) / 20.0, epsilon = 1e-12);
    }

    #[test]
    fn generalized_eigen_diagonal_case() {
        let a = dmatrix![2.0, 0.0; 0.0, 12.0];
        let b = dmatrix![1.0, 0.0; 0.0, 4.0];
        let ev = generalized_symmetric_eigenvalues(&a, &b).unwrap();
        assert_relative_eq!(ev[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(ev[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn abscissa_of_triangular_matrix() {
        let a = dmatrix![-2.0, 3.0, 0.0; 0.0, -0.5, 1.0; 0.0, 0.0, -4.0];
        assert_relative_eq!(spectral_abscissa(&a).unwrap(), -0.5, epsilon = 1e-9);
    }
}
