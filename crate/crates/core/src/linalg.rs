//! Dense Hermitian eigensolver shared by the molecular and spin modules.

use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigenvalues in nondecreasing order with matching column eigenvectors.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<Complex64>,
}

/// Diagonalizes a Hermitian matrix. Only the lower triangle is read.
///
/// Purely real input goes through the real symmetric solver, which is several
/// times faster and yields real eigenvectors.
pub fn hermitian_eigen(matrix: &Mat<Complex64>) -> Result<HermitianEigen> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::Diagonalization(format!(
            "matrix is {}x{}, not square",
            n,
            matrix.ncols()
        )));
    }
    if n == 0 {
        return Ok(HermitianEigen {
            values: Vec::new(),
            vectors: Mat::zeros(0, 0),
        });
    }
    for j in 0..n {
        for i in 0..n {
            let z = matrix[(i, j)];
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::Diagonalization(format!(
                    "non-finite entry at ({i}, {j})"
                )));
            }
        }
    }

    let is_real = (0..n).all(|j| (j..n).all(|i| matrix[(i, j)].im == 0.0));
    let (values, vectors) = if is_real {
        let real = Mat::<f64>::from_fn(n, n, |i, j| matrix[(i, j)].re);
        let (values, u) = symmetric_eigen(&real)?;
        (
            values,
            Mat::<Complex64>::from_fn(n, n, |i, j| Complex64::new(u[(i, j)], 0.0)),
        )
    } else {
        let evd = matrix
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Diagonalization(format!("{e:?}")))?;
        let values: Vec<f64> = (0..n).map(|i| evd.S()[i].re).collect();
        (values, evd.U().to_owned())
    };

    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diagonalization(
            "eigensolver returned non-finite eigenvalues".into(),
        ));
    }
    Ok(HermitianEigen { values, vectors })
}

/// Real symmetric eigendecomposition; eigenvalues ascending, eigenvectors in
/// columns. Only the lower triangle is read.
pub fn symmetric_eigen(matrix: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::Diagonalization(format!(
            "matrix is {}x{}, not square",
            n,
            matrix.ncols()
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    if (0..n).any(|j| (0..n).any(|i| !matrix[(i, j)].is_finite())) {
        return Err(Error::Diagonalization("non-finite matrix entry".into()));
    }
    let evd = matrix
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Diagonalization(format!("{e:?}")))?;
    let values: Vec<f64> = (0..n).map(|i| evd.S()[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diagonalization(
            "eigensolver returned non-finite eigenvalues".into(),
        ));
    }
    Ok((values, evd.U().to_owned()))
}
