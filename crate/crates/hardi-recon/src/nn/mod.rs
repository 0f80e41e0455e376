//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Exactly the layer set the reconstruction network needs: strided 1D
//! convolution (cross-correlation semantics) with optional bias, 1D
//! transposed convolution, ReLU, and the normalized-MSE loss, plus Adam/SGD.
//! Forward values are recorded on a [`graph::Graph`] tape; `backward` walks
//! it once in reverse. Everything is generic over [`Real`] so training runs
//! in f32 while gradient and adjoint test suites run in f64.
//!
//! Convolution inner loops are expressed as GEMM on an unfolded (im2col)
//! buffer. Batches are split into fixed-size chunks processed in parallel;
//! per-chunk partial gradients are reduced in chunk order, so results do not
//! depend on the number of worker threads.

pub mod conv;
pub mod graph;
pub mod init;
pub mod optim;
pub mod tensor;

pub use conv::{conv1d_forward, conv1d_transposed_forward, ConvSpec};
pub use graph::{relu_forward, Graph, NodeId};
pub use init::init_conv_params;
pub use optim::{adam_step, Adam, Optimizer, Sgd};
pub use tensor::Tensor;

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar type the engine is generic over. Implemented for f32 and f64.
pub trait Real:
    Copy
    + PartialOrd
    + Send
    + Sync
    + 'static
    + fmt::Debug
    + fmt::Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    /// C = alpha * A B + beta * C with explicit row/column strides
    /// (matrixmultiply semantics).
    ///
    /// # Safety
    /// Pointers must cover the strided index ranges implied by m, k, n.
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
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn abs(self) -> Self {
        f32::abs(self)
    }

    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }

    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }

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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn abs(self) -> Self {
        f64::abs(self)
    }

    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }

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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
