use crate::error::{Error, Result};
use crate::matrix::{symmetric_eigen, Matrix};
use crate::scalar::Real;

/// Symmetric PSD square root via eigen-decomposition.
///
/// Eigenvalues in `[-1e-10 ||A||, 0)` are clipped to zero; anything more
/// negative, or an asymmetry above `1e-10 (1 + ||A||)`, is a numeric error.
pub fn psd_sqrt<T: Real>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let n = a.dim();
    let scale = a.frobenius_norm();
    if !scale.is_finite() {
        return Err(Error::Numeric("psd_sqrt: non-finite input".into()));
    }
    let tol = T::lit(1e-10);
    if n == 1 {
        let v = a[(0, 0)];
        if v < -tol * scale {
            return Err(Error::Numeric(format!("psd_sqrt: negative eigenvalue {v}")));
        }
        return Ok(Matrix::from_diagonal(&[v.max(T::zero()).sqrt()]));
    }
    let asym = a.max_asymmetry();
    if asym > tol * (T::one() + scale) {
        return Err(Error::Numeric(format!("psd_sqrt: input asymmetric by {asym}")));
    }
    let e = symmetric_eigen(a);
    let mut out = Matrix::zeros(n);
    for (k, &lambda) in e.values.iter().enumerate() {
        if lambda < -tol * scale {
            return Err(Error::Numeric(format!("psd_sqrt: negative eigenvalue {lambda}")));
        }
        let root = lambda.max(T::zero()).sqrt();
        if root == T::zero() {
            continue;
        }
        for i in 0..n {
            let vi = e.vectors[(i, k)] * root;
            for j in 0..n {
                out[(i, j)] = out[(i, j)] + vi * e.vectors[(j, k)];
            }
        }
    }
    out.symmetrize();
    Ok(out)
}
