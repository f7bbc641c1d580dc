use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use super::layers::FeatureMap;
use super::direct;

/// Scalar type of the network: `f32` for training and inference, `f64` for
/// gradient checking.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// `C ← α·A·B + β·C` for strided row-major views.
    ///
    /// # Safety
    /// Every index reachable through the dimensions and strides must lie
    /// inside the allocations behind `a`, `b` and `c`, and `c` must not alias
    /// `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
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

    fn of(x: f64) -> Self;

    fn f64(self) -> f64;

    /// Specialised forward convolution, if one exists for this type and CPU.
    fn conv3x3_fast(_input: &FeatureMap<Self>, _weight: &[Self], _cout: usize) -> Option<FeatureMap<Self>> {
        None
    }

    /// Specialised backward convolution, if one exists for this type and CPU.
    fn conv3x3_backward_fast(
        _input: &FeatureMap<Self>,
        _weight: &[Self],
        _dout: &FeatureMap<Self>,
        _dweight: &mut [Self],
        _want_input: bool,
    ) -> Option<Option<FeatureMap<Self>>> {
        None
    }
}

impl Real for f32 {
    #[inline(always)]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn f64(self) -> f64 {
        self as f64
    }

    fn conv3x3_fast(input: &FeatureMap<f32>, weight: &[f32], cout: usize) -> Option<FeatureMap<f32>> {
        direct::available().then(|| direct::conv3x3(input, weight, cout))
    }

    fn conv3x3_backward_fast(
        input: &FeatureMap<f32>,
        weight: &[f32],
        dout: &FeatureMap<f32>,
        dweight: &mut [f32],
        want_input: bool,
    ) -> Option<Option<FeatureMap<f32>>> {
        direct::available().then(|| direct::conv3x3_backward(input, weight, dout, dweight, want_input))
    }

    unsafe fn gemm_raw(
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
        dispatch(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    #[inline(always)]
    fn of(x: f64) -> Self {
        x as f64
    }

    #[inline(always)]
    fn f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
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
        dispatch(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

#[allow(clippy::too_many_arguments)]
unsafe fn dispatch<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: *const T,
    rsa: isize,
    csa: isize,
    b: *const T,
    rsb: isize,
    csb: isize,
    beta: T,
    c: *mut T,
    rsc: isize,
    csc: isize,
) {
    // The backend computes `dst ← α·dst + β·lhs·rhs`.
    gemm::gemm(
        m,
        n,
        k,
        c,
        csc,
        rsc,
        beta != T::zero(),
        a,
        csa,
        rsa,
        b,
        csb,
        rsb,
        beta,
        alpha,
        false,
        false,
        false,
        gemm::Parallelism::None,
    )
}

/// A strided matrix view over a slice: `(slice, row stride, col stride)`.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major matrix with `cols` columns.
    pub fn rows(data: &'a [T], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }

    fn fits(&self, r: usize, c: usize) -> bool {
        r == 0 || c == 0 || (r - 1) * self.rs + (c - 1) * self.cs < self.data.len()
    }
}

/// `C[m×n] ← α·A[m×k]·B[k×n] + β·C`, with C row-major of stride `rsc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
    rsc: usize,
) {
    assert!(a.fits(m, k), "gemm: A out of bounds");
    assert!(b.fits(k, n), "gemm: B out of bounds");
    assert!(m == 0 || n == 0 || (m - 1) * rsc + n <= c.len(), "gemm: C out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for v in &mut c[i * rsc..i * rsc + n] {
                *v = if beta == T::zero() { T::zero() } else { *v * beta };
            }
        }
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches, and
    // `c` is a unique borrow distinct from `a` and `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        )
    }
}
