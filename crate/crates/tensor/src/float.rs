use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Scalar element type. Implemented for `f32` (training) and `f64`
/// (gradient verification).
pub trait Float:
    num_traits::Float
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a·b + beta * c` for row/column strided matrices.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping
    /// `m×k`, `k×n` and `m×n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Float for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f64(v: f64) -> f32 {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Float for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f64(v: f64) -> f64 {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Strided view of a matrix stored inside a flat slice.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatRef {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub rs: isize,
    pub cs: isize,
}

impl MatRef {
    pub fn dense(rows: usize, cols: usize) -> Self {
        MatRef { rows, cols, offset: 0, rs: cols as isize, cs: 1 }
    }

    pub fn t(self) -> Self {
        MatRef { rows: self.cols, cols: self.rows, offset: self.offset, rs: self.cs, cs: self.rs }
    }

    /// Column block `[col, col + width)` of a dense row-major matrix.
    pub fn col_block(rows: usize, stride: usize, col: usize, width: usize) -> Self {
        MatRef { rows, cols: width, offset: col, rs: stride as isize, cs: 1 }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return self.offset;
        }
        self.offset
            + (self.rows - 1) * self.rs.unsigned_abs()
            + (self.cols - 1) * self.cs.unsigned_abs()
    }
}

/// `c ← alpha·a·b + beta·c` with bounds checked up front.
pub(crate) fn gemm<F: Float>(
    alpha: F,
    a: &[F],
    am: MatRef,
    b: &[F],
    bm: MatRef,
    beta: F,
    c: &mut [F],
    cm: MatRef,
) {
    assert_eq!(am.cols, bm.rows, "gemm inner dimension");
    assert_eq!(am.rows, cm.rows, "gemm output rows");
    assert_eq!(bm.cols, cm.cols, "gemm output cols");
    if cm.rows == 0 || cm.cols == 0 {
        return;
    }
    assert!(am.last_index() < a.len().max(1) || am.cols == 0);
    assert!(bm.last_index() < b.len().max(1) || bm.rows == 0);
    assert!(cm.last_index() < c.len());
    // SAFETY: bounds verified above; `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        F::gemm(
            am.rows,
            am.cols,
            bm.cols,
            alpha,
            a.as_ptr().add(am.offset),
            am.rs,
            am.cs,
            b.as_ptr().add(bm.offset),
            bm.rs,
            bm.cs,
            beta,
            c.as_mut_ptr().add(cm.offset),
            cm.rs,
            cm.cs,
        );
    }
}
