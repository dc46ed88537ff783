//! Small dense complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Complex64 = nalgebra::Complex<f64>;

/// Dense complex matrix.
pub type CMat = DMatrix<Complex64>;

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn from_real(m: &DMatrix<f64>) -> CMat {
    m.map(c)
}

pub fn diag_real(d: &[f64]) -> CMat {
    CMat::from_diagonal(&DVector::from_iterator(d.len(), d.iter().map(|&x| c(x))))
}

/// `(M + Mᴴ) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Real inner product `Re Tr(X Yᴴ)` on Hermitian matrices.
pub fn inner(x: &CMat, y: &CMat) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a * b.conj()).re).sum()
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues in ascending order.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Columns are the orthonormal eigenvectors matching `values`.
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn new(m: &CMat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::numerical("eigendecomposition of a non-square matrix"));
        }
        if !is_finite(m) {
            return Err(Error::numerical("eigendecomposition of a non-finite matrix"));
        }
        let n = m.nrows();
        let eig = SymmetricEigen::new(hermitian_part(m));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = CMat::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(Self { values, vectors })
    }

    /// `V diag(φ(λ)) Vᴴ`.
    pub fn reconstruct_with(&self, phi: impl Fn(f64) -> f64) -> CMat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let mut col = scaled.column_mut(j);
            col *= c(phi(self.values[j]));
        }
        hermitian_part(&(scaled * self.vectors.adjoint()))
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

/// Hermitian PSD square root with negative eigenvalues clamped to zero.
pub fn psd_sqrt(m: &CMat) -> Result<CMat> {
    Ok(HermitianEigen::new(m)?.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// Spectral norm of a Hermitian matrix.
pub fn hermitian_norm(m: &CMat) -> Result<f64> {
    let e = HermitianEigen::new(m)?;
    Ok(e.max().abs().max(e.min().abs()))
}

fn cholesky(m: &CMat, what: &str) -> Result<Cholesky<Complex64, Dyn>> {
    if !is_finite(m) {
        return Err(Error::numerical(format!("{what}: non-finite matrix")));
    }
    // The complex square root never fails, so indefiniteness shows up as a
    // non-positive or non-real pivot rather than as `None`.
    let not_hpd = || Error::numerical(format!("{what}: matrix is not Hermitian positive definite"));
    let ch = Cholesky::new(hermitian_part(m)).ok_or_else(not_hpd)?;
    let pivots_ok = ch
        .l_dirty()
        .diagonal()
        .iter()
        .all(|z| z.re > 0.0 && z.re.is_finite() && z.im.abs() <= 1e-8 * z.re);
    if pivots_ok { Ok(ch) } else { Err(not_hpd()) }
}

/// `log det M` for Hermitian positive definite `M`, via Cholesky.
pub fn log_det_hpd(m: &CMat) -> Result<f64> {
    let ch = cholesky(m, "log-determinant")?;
    Ok(2.0 * ch.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>())
}

pub fn inverse_hpd(m: &CMat) -> Result<CMat> {
    Ok(hermitian_part(&cholesky(m, "inverse")?.inverse()))
}

/// General (LU) inverse.
pub fn inverse(m: &CMat) -> Result<CMat> {
    if !is_finite(m) {
        return Err(Error::numerical("inverse: non-finite matrix"));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::numerical("inverse: singular matrix"))
}

/// `log det M` together with `M⁻¹ R` for Hermitian positive definite `M`.
pub fn log_det_and_solve(m: &CMat, rhs: &CMat) -> Result<(f64, CMat)> {
    let ch = cholesky(m, "log-determinant")?;
    let ld = 2.0 * ch.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>();
    Ok((ld, ch.solve(rhs)))
}

/// Sine of the largest principal angle between the column spans of `u` and
/// `v` (both with orthonormal columns, same column count):
/// `‖(I − U Uᴴ) V‖₂`.
pub fn subspace_sin(u: &CMat, v: &CMat) -> Result<f64> {
    let resid = v - u * (u.adjoint() * v);
    let gram = hermitian_part(&(resid.adjoint() * &resid));
    Ok(HermitianEigen::new(&gram)?.max().max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CMat {
        CMat::from_row_slice(
            3,
            3,
            &[
                c(4.0),
                Complex64::new(1.0, 0.5),
                c(0.2),
                Complex64::new(1.0, -0.5),
                c(3.0),
                Complex64::new(0.0, 1.0),
                c(0.2),
                Complex64::new(0.0, -1.0),
                c(2.0),
            ],
        )
    }

    #[test]
    fn eigen_reconstructs() {
        let m = sample();
        let e = HermitianEigen::new(&m).unwrap();
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let back = e.reconstruct_with(|l| l);
        assert!(frobenius(&(back - &m)) < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = sample();
        let s = psd_sqrt(&m).unwrap();
        assert!(frobenius(&(&s * &s - &m)) < 1e-12);
    }

    #[test]
    fn log_det_matches_eigenvalues() {
        let m = sample();
        let e = HermitianEigen::new(&m).unwrap();
        let expected: f64 = e.values.iter().map(|l| l.ln()).sum();
        assert!((log_det_hpd(&m).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = diag_real(&[1.0, -1.0]);
        assert!(matches!(log_det_hpd(&m), Err(Error::Numerical(_))));
    }

    #[test]
    fn subspace_sin_of_rotated_axis() {
        let theta: f64 = 1e-7;
        let u = CMat::from_column_slice(2, 1, &[c(1.0), c(0.0)]);
        let v = CMat::from_column_slice(2, 1, &[c(theta.cos()), c(theta.sin())]);
        assert!((subspace_sin(&u, &v).unwrap() - theta.sin()).abs() < 1e-20);
        assert_eq!(subspace_sin(&u, &u).unwrap(), 0.0);
    }

    #[test]
    fn inverses_agree() {
        let m = sample();
        let a = inverse_hpd(&m).unwrap();
        let b = inverse(&m).unwrap();
        assert!(frobenius(&(a - b)) < 1e-12);
    }
}
