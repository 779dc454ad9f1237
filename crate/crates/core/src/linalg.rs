//! Thin wrappers over the BLAS/LAPACK routines the metrics need.
//!
//! Matrices are row-major `ndarray` values. For symmetric inputs the
//! row-major buffer is also the column-major buffer LAPACK expects, so the
//! symmetric routines are called on the data directly.

use std::os::raw::{c_char, c_int};

use ndarray::{Array1, Array2, ArrayView2, ShapeBuilder};
use ndarray_linalg::{JobSvd, SVDDC};

use crate::error::{Error, Result};

extern "C" {
    fn openblas_set_num_threads(n: c_int);
    fn openblas_get_num_threads() -> c_int;
}

/// Pins the BLAS thread pool size.
pub fn set_blas_threads(n: usize) {
    let n = n.clamp(1, c_int::MAX as usize) as c_int;
    // SAFETY: plain setter on the global OpenBLAS state.
    unsafe { openblas_set_num_threads(n) }
}

pub fn blas_threads() -> usize {
    // SAFETY: plain getter on the global OpenBLAS state.
    unsafe { openblas_get_num_threads() }.max(1) as usize
}

/// `F Fᵀ` (n × n).
pub fn gram_rows(f: ArrayView2<'_, f64>) -> Array2<f64> {
    f.dot(&f.t())
}

/// `Fᵀ F` (d × d).
pub fn gram_cols(f: ArrayView2<'_, f64>) -> Array2<f64> {
    f.t().dot(&f)
}

fn lapack_dim(n: usize) -> Result<c_int> {
    c_int::try_from(n).map_err(|_| Error::Dimension(format!("dimension {n} exceeds LAPACK int range")))
}

/// Symmetric eigendecomposition by divide and conquer (`dsyevd`).
///
/// Returns eigenvalues in ascending order and the eigenvectors as columns.
/// Only the lower triangle of `a` is read.
pub fn sym_eigh(a: Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!("eigh on non-square {}x{}", n, a.ncols())));
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    let n_i = lapack_dim(n)?;
    let mut a = if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().to_owned()
    };
    let data = a.as_slice_mut().expect("standard layout");
    let mut w = vec![0.0f64; n];
    let mut info: c_int = 0;
    let jobz = b'V' as c_char;
    // Row-major lower == column-major upper.
    let uplo = b'U' as c_char;

    let mut work_query = [0.0f64];
    let mut iwork_query = [0 as c_int];
    let query: c_int = -1;
    // SAFETY: workspace query; all pointers are valid for the sizes LAPACK reads.
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &n_i,
            data.as_mut_ptr(),
            &n_i,
            w.as_mut_ptr(),
            work_query.as_mut_ptr(),
            &query,
            iwork_query.as_mut_ptr(),
            &query,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Numerical(format!("dsyevd workspace query failed (info={info})")));
    }
    let lwork = work_query[0] as c_int;
    let liwork = iwork_query[0];
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork = vec![0 as c_int; liwork.max(1) as usize];
    // SAFETY: buffers sized per the workspace query above.
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &n_i,
            data.as_mut_ptr(),
            &n_i,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Numerical(format!("dsyevd failed to converge (info={info})")));
    }
    // Column-major eigenvector matrix read row-major is its transpose.
    Ok((Array1::from(w), a.reversed_axes()))
}

/// Cholesky factor of a symmetric positive definite matrix, kept in LAPACK
/// layout for repeated solves.
pub struct Cholesky {
    factor: Vec<f64>,
    n: usize,
}

impl Cholesky {
    pub fn new(a: ArrayView2<'_, f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("cholesky on non-square {}x{}", n, a.ncols())));
        }
        let n_i = lapack_dim(n.max(1))?;
        let mut factor: Vec<f64> = a.iter().copied().collect();
        if n == 0 {
            return Ok(Self { factor, n });
        }
        let uplo = b'U' as c_char;
        let mut info: c_int = 0;
        // SAFETY: `factor` holds n*n values.
        unsafe { lapack_sys::dpotrf_(&uplo, &n_i, factor.as_mut_ptr(), &n_i, &mut info) };
        if info > 0 {
            return Err(Error::Numerical(format!(
                "matrix not positive definite (leading minor {info})"
            )));
        }
        if info < 0 {
            return Err(Error::Numerical(format!("dpotrf argument error (info={info})")));
        }
        Ok(Self { factor, n })
    }

    /// Solves `A X = B` for an n × k right-hand side.
    pub fn solve(&self, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (rows, k) = b.dim();
        if rows != self.n {
            return Err(Error::Dimension(format!("rhs has {rows} rows, factor is {}", self.n)));
        }
        if self.n == 0 || k == 0 {
            return Ok(Array2::zeros((rows, k)));
        }
        // Column-major copy of B.
        let mut x = Array2::<f64>::zeros((rows, k).f());
        x.assign(&b);
        let n_i = lapack_dim(self.n)?;
        let k_i = lapack_dim(k)?;
        let uplo = b'U' as c_char;
        let mut info: c_int = 0;
        let buf = x.as_slice_memory_order_mut().expect("contiguous");
        // SAFETY: factor is n*n, buf is n*k column-major with ldb = n.
        unsafe {
            lapack_sys::dpotrs_(
                &uplo,
                &n_i,
                &k_i,
                self.factor.as_ptr(),
                &n_i,
                buf.as_mut_ptr(),
                &n_i,
                &mut info,
            );
        }
        if info != 0 {
            return Err(Error::Numerical(format!("dpotrs failed (info={info})")));
        }
        Ok(x)
    }
}

/// Thin SVD `F = U diag(s) Vᵀ`, returning `(U, s)` with `k = min(n, d)`
/// columns and singular values in descending order.
pub fn thin_svd_left(f: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let owned = f.to_owned();
    let (u, s, _) = owned
        .svddc(JobSvd::Some)
        .map_err(|e| Error::Numerical(format!("SVD failed: {e}")))?;
    let u = u.ok_or_else(|| Error::Numerical("SVD returned no left vectors".into()))?;
    Ok((u, s))
}
