//! Dense linear algebra: LAPACK-backed factorizations for large matrices and
//! a hand-rolled Cholesky for the small local systems that dominate the
//! sparse-likelihood inner loop.
//!
//! Large-matrix work (the exact-GP oracle) goes through the system OpenBLAS.
//! Local conditioning sets are tiny (tens of rows), where the FFI call
//! overhead and column-major copies would cost more than the factorization
//! itself, so those use the in-crate routines on row-major slices.

use std::os::raw::c_char;
use std::sync::Once;

use serde::{Deserialize, Serialize};

extern "C" {
    fn dpotrf_(uplo: *const c_char, n: *const i32, a: *mut f64, lda: *const i32, info: *mut i32);
    fn dtrsv_(
        uplo: *const c_char,
        trans: *const c_char,
        diag: *const c_char,
        n: *const i32,
        a: *const f64,
        lda: *const i32,
        x: *mut f64,
        incx: *const i32,
    );
    fn dtrsm_(
        side: *const c_char,
        uplo: *const c_char,
        trans: *const c_char,
        diag: *const c_char,
        m: *const i32,
        n: *const i32,
        alpha: *const f64,
        a: *const f64,
        lda: *const i32,
        b: *mut f64,
        ldb: *const i32,
    );
}

static BLAS_INIT: Once = Once::new();

/// OpenBLAS reads `OPENBLAS_CORETYPE` lazily on its first call. The runtime
/// auto-detection picks a generic kernel inside some VMs, which costs ~3x on
/// dpotrf, so pin the kernel from CPU features unless the user already chose.
/// The choice is fixed per machine, keeping reruns bit-identical.
fn ensure_blas_init() {
    BLAS_INIT.call_once(|| {
        if std::env::var_os("OPENBLAS_CORETYPE").is_none() {
            #[cfg(target_arch = "x86_64")]
            {
                let core = if is_x86_feature_detected!("avx512f") {
                    Some("SKYLAKEX")
                } else if is_x86_feature_detected!("avx2") {
                    Some("HASWELL")
                } else {
                    None
                };
                if let Some(core) = core {
                    std::env::set_var("OPENBLAS_CORETYPE", core);
                }
            }
        }
    });
}

/// Column-major dense matrix, the layout LAPACK expects.
#[derive(Debug, Clone)]
pub struct ColMat {
    pub rows: usize,
    pub cols: usize,
    /// Column-major storage: element (i, j) at `data[j * rows + i]`.
    pub data: Vec<f64>,
}

impl ColMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ColMat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; rows * cols];
        for j in 0..cols {
            for i in 0..rows {
                data[j * rows + i] = f(i, j);
            }
        }
        ColMat { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }
}

/// In-place lower Cholesky of a symmetric matrix. Returns Err(pivot) with the
/// 1-based pivot index reported by LAPACK when the matrix is not PD.
pub fn cholesky_lower(a: &mut ColMat) -> Result<(), usize> {
    assert_eq!(a.rows, a.cols, "cholesky needs a square matrix");
    ensure_blas_init();
    let uplo = b'L' as c_char;
    let n = a.rows as i32;
    let mut info = 0i32;
    unsafe { dpotrf_(&uplo, &n, a.data.as_mut_ptr(), &n, &mut info) };
    if info == 0 {
        Ok(())
    } else {
        Err(info.max(0) as usize)
    }
}

/// Solve L x = b in place for lower-triangular L (as produced by [`cholesky_lower`]).
pub fn solve_lower(l: &ColMat, b: &mut [f64]) {
    ensure_blas_init();
    assert_eq!(l.rows, b.len());
    let (uplo, trans, diag) = (b'L' as c_char, b'N' as c_char, b'N' as c_char);
    let n = l.rows as i32;
    let inc = 1i32;
    unsafe { dtrsv_(&uplo, &trans, &diag, &n, l.data.as_ptr(), &n, b.as_mut_ptr(), &inc) };
}

/// Solve L' x = b in place.
pub fn solve_lower_transpose(l: &ColMat, b: &mut [f64]) {
    ensure_blas_init();
    assert_eq!(l.rows, b.len());
    let (uplo, trans, diag) = (b'L' as c_char, b'T' as c_char, b'N' as c_char);
    let n = l.rows as i32;
    let inc = 1i32;
    unsafe { dtrsv_(&uplo, &trans, &diag, &n, l.data.as_ptr(), &n, b.as_mut_ptr(), &inc) };
}

/// Solve L X = B in place for a full right-hand-side block.
pub fn solve_lower_block(l: &ColMat, b: &mut ColMat) {
    ensure_blas_init();
    assert_eq!(l.rows, b.rows);
    let (side, uplo, trans, diag) = (b'L' as c_char, b'L' as c_char, b'N' as c_char, b'N' as c_char);
    let m = b.rows as i32;
    let n = b.cols as i32;
    let alpha = 1.0f64;
    unsafe {
        dtrsm_(
            &side,
            &uplo,
            &trans,
            &diag,
            &m,
            &n,
            &alpha,
            l.data.as_ptr(),
            &m,
            b.data.as_mut_ptr(),
            &m,
        )
    };
}

/// Row-major matrix for datasets: `n` rows of `d` contiguous coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row matrix shape mismatch");
        RowMatrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        RowMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            assert_eq!(r.len(), d, "ragged rows");
            data.extend_from_slice(r);
        }
        RowMatrix { rows: n, cols: d, data }
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// New matrix with rows picked out in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> RowMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        RowMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// In-place lower Cholesky on a small row-major `n x n` slice.
/// Overwrites the lower triangle; the upper triangle is left stale.
/// Returns Err(i) with the failing 0-based pivot when not PD.
pub fn small_cholesky(a: &mut [f64], n: usize) -> Result<(), usize> {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            let v = a[j * n + k];
            d -= v * v;
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(j);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        let inv = 1.0 / d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            let (ri, rj) = (i * n, j * n);
            for k in 0..j {
                s -= a[ri + k] * a[rj + k];
            }
            a[i * n + j] = s * inv;
        }
    }
    Ok(())
}

/// Solve L x = b in place over the lower triangle of a small row-major factor.
pub fn small_solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    debug_assert_eq!(l.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for i in 0..n {
        let mut s = b[i];
        let ri = i * n;
        for k in 0..i {
            s -= l[ri + k] * b[k];
        }
        b[i] = s / l[ri + i];
    }
}

/// Solve L' x = b in place.
pub fn small_solve_lower_transpose(l: &[f64], n: usize, b: &mut [f64]) {
    debug_assert_eq!(l.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}
