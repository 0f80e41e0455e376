//! Strided 1D convolution and transposed convolution.
//!
//! Convolution uses cross-correlation semantics with zero padding. The
//! transposed convolution is its exact adjoint: with the same filter array,
//! `<conv(x), y> == <x, conv_transposed(y)>` whenever `output_padding` is
//! chosen to recover the original length.
//!
//! Filter layouts (row-major):
//!   convolution            [out_channels, in_channels, kernel]
//!   transposed convolution [in_channels, out_channels, kernel]
//!
//! Both directions unfold the work into GEMM over fixed-size batch chunks;
//! chunks run in parallel and per-chunk partial gradients are summed in
//! chunk order, so results are independent of the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::nn::Real;

/// Samples per parallel chunk; fixed so floating-point reduction order never
/// depends on the machine.
const BATCH_CHUNK: usize = 64;

/// Geometry of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Extra trailing output length; transposed direction only, < stride.
    pub output_padding: usize,
    pub has_bias: bool,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        has_bias: bool,
    ) -> Result<Self> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding: 0,
            has_bias,
            transposed: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn transposed(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding,
            has_bias: false,
            transposed: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::validation("channel counts must be positive"));
        }
        if self.kernel == 0 {
            return Err(Error::validation("kernel size must be at least 1"));
        }
        if self.stride == 0 {
            return Err(Error::validation("stride must be at least 1"));
        }
        if self.output_padding >= self.stride {
            return Err(Error::validation(format!(
                "output_padding {} must be smaller than stride {}",
                self.output_padding, self.stride
            )));
        }
        if !self.transposed && self.output_padding != 0 {
            return Err(Error::validation(
                "output_padding is only meaningful for the transposed direction",
            ));
        }
        Ok(())
    }

    /// Expected filter tensor shape for this spec.
    pub fn filter_shape(&self) -> [usize; 3] {
        if self.transposed {
            [self.in_channels, self.out_channels, self.kernel]
        } else {
            [self.out_channels, self.in_channels, self.kernel]
        }
    }

    /// Output length given input length `n`.
    pub fn out_len(&self, n: usize) -> Result<usize> {
        if self.transposed {
            let m = (n as i64 - 1) * self.stride as i64 - 2 * self.padding as i64
                + self.kernel as i64
                + self.output_padding as i64;
            if m <= 0 {
                return Err(Error::validation(format!(
                    "transposed conv output length ({n} - 1)*{} - 2*{} + {} + {} = {m} is not positive",
                    self.stride, self.padding, self.kernel, self.output_padding
                )));
            }
            Ok(m as usize)
        } else {
            let span = n as i64 + 2 * self.padding as i64 - self.kernel as i64;
            if span < 0 {
                return Err(Error::validation(format!(
                    "conv output length floor(({n} + 2*{} - {})/{}) + 1 is not positive",
                    self.padding, self.kernel, self.stride
                )));
            }
            Ok((span / self.stride as i64) as usize + 1)
        }
    }

    /// The output_padding that makes a transposed layer invert a forward
    /// layer mapping `n_in` to its conv output length.
    pub fn inverting_output_padding(kernel: usize, stride: usize, padding: usize, n_in: usize) -> Result<usize> {
        let fwd = ConvSpec::conv(1, 1, kernel, stride, padding, false)?;
        let m = fwd.out_len(n_in)?;
        let base = (m as i64 - 1) * stride as i64 - 2 * padding as i64 + kernel as i64;
        let op = n_in as i64 - base;
        if op < 0 || op >= stride as i64 {
            return Err(Error::validation(format!(
                "no valid output_padding recovers length {n_in} (base {base}, stride {stride})"
            )));
        }
        Ok(op as usize)
    }
}

fn check_filters<T: Real>(filters: &Tensor<T>, spec: &ConvSpec) -> Result<()> {
    let want = spec.filter_shape();
    if filters.shape() != want {
        return Err(Error::validation(format!(
            "filter shape {:?} does not match spec {:?}",
            filters.shape(),
            want
        )));
    }
    Ok(())
}

/// Forward convolution: out[b, co, m] = bias[co] + sum_{ci, t} in[b, ci,
/// m*stride + t - padding] * filters[co, ci, t].
pub fn conv1d_forward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    if spec.transposed {
        return Err(Error::validation(
            "conv1d_forward called with a transposed spec",
        ));
    }
    check_filters(filters, spec)?;
    let (batch, c_in, n) = input.dims3()?;
    if c_in != spec.in_channels {
        return Err(Error::validation(format!(
            "input has {c_in} channels, spec expects {}",
            spec.in_channels
        )));
    }
    match (bias, spec.has_bias) {
        (Some(b), true) => {
            if b.shape() != [spec.out_channels] {
                return Err(Error::validation(format!(
                    "bias shape {:?}, expected [{}]",
                    b.shape(),
                    spec.out_channels
                )));
            }
        }
        (None, false) => {}
        (Some(_), false) => {
            return Err(Error::validation("bias passed to a bias-free layer"));
        }
        (None, true) => {
            return Err(Error::validation("layer expects a bias tensor"));
        }
    }
    let m = spec.out_len(n)?;
    let (c_out, k) = (spec.out_channels, spec.kernel);
    let mut out = Tensor::zeros(&[batch, c_out, m]);

    let in_stride = c_in * n;
    let out_stride = c_out * m;
    out.data_mut()
        .par_chunks_mut(BATCH_CHUNK * out_stride)
        .zip(input.data().par_chunks(BATCH_CHUNK * in_stride))
        .for_each(|(out_chunk, in_chunk)| {
            let bc = in_chunk.len() / in_stride;
            let cols = unfold_input(in_chunk, bc, c_in, n, m, k, spec.stride, spec.padding);
            let mut buf = vec![T::ZERO; c_out * bc * m];
            unsafe {
                T::gemm(
                    c_out,
                    c_in * k,
                    bc * m,
                    T::ONE,
                    filters.data().as_ptr(),
                    (c_in * k) as isize,
                    1,
                    cols.as_ptr(),
                    (bc * m) as isize,
                    1,
                    T::ZERO,
                    buf.as_mut_ptr(),
                    (bc * m) as isize,
                    1,
                );
            }
            for bi in 0..bc {
                for co in 0..c_out {
                    let add = bias.map_or(T::ZERO, |b| b.data()[co]);
                    let dst = &mut out_chunk[bi * out_stride + co * m..bi * out_stride + co * m + m];
                    let src = &buf[co * bc * m + bi * m..co * bc * m + bi * m + m];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = s + add;
                    }
                }
            }
        });
    debug_assert!(out.check_finite("conv1d_forward output").is_ok());
    Ok(out)
}

/// cols[(ci*k + t), (bi*m + mm)] = in[bi, ci, mm*stride + t - padding]
fn unfold_input<T: Real>(
    in_chunk: &[T],
    bc: usize,
    c_in: usize,
    n: usize,
    m: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Vec<T> {
    let width = bc * m;
    let mut cols = vec![T::ZERO; c_in * k * width];
    for bi in 0..bc {
        for ci in 0..c_in {
            let src_base = bi * c_in * n + ci * n;
            for t in 0..k {
                let row = ci * k + t;
                let dst_base = row * width + bi * m;
                for mm in 0..m {
                    let pos = mm * stride + t;
                    if pos >= padding && pos - padding < n {
                        cols[dst_base + mm] = in_chunk[src_base + pos - padding];
                    }
                }
            }
        }
    }
    cols
}

/// Gradients of [`conv1d_forward`] with respect to input, filters and bias.
pub(crate) fn conv1d_backward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    dout: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Vec<T>, Option<Vec<T>>)> {
    let (batch, c_in, n) = input.dims3()?;
    let (_, c_out, m) = dout.dims3()?;
    let k = spec.kernel;
    let mut dx = Tensor::zeros(&[batch, c_in, n]);
    let in_stride = c_in * n;
    let out_stride = c_out * m;

    let partials: Vec<(Vec<T>, Vec<T>)> = dx
        .data_mut()
        .par_chunks_mut(BATCH_CHUNK * in_stride)
        .zip(input.data().par_chunks(BATCH_CHUNK * in_stride))
        .zip(dout.data().par_chunks(BATCH_CHUNK * out_stride))
        .map(|((dx_chunk, in_chunk), dout_chunk)| {
            let bc = in_chunk.len() / in_stride;
            let width = bc * m;
            // dout gathered as a [c_out, bc*m] matrix
            let mut dout_mat = vec![T::ZERO; c_out * width];
            let mut db = vec![T::ZERO; c_out];
            for bi in 0..bc {
                for co in 0..c_out {
                    let src = &dout_chunk[bi * out_stride + co * m..bi * out_stride + co * m + m];
                    let dst = &mut dout_mat[co * width + bi * m..co * width + bi * m + m];
                    dst.copy_from_slice(src);
                    db[co] += src.iter().copied().sum::<T>();
                }
            }
            let cols = unfold_input(in_chunk, bc, c_in, n, m, k, spec.stride, spec.padding);
            // dW = dout_mat * cols^T
            let mut dw = vec![T::ZERO; c_out * c_in * k];
            unsafe {
                T::gemm(
                    c_out,
                    width,
                    c_in * k,
                    T::ONE,
                    dout_mat.as_ptr(),
                    width as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    width as isize,
                    T::ZERO,
                    dw.as_mut_ptr(),
                    (c_in * k) as isize,
                    1,
                );
            }
            // dcols = W^T * dout_mat, then fold back onto dx
            let mut dcols = vec![T::ZERO; c_in * k * width];
            unsafe {
                T::gemm(
                    c_in * k,
                    c_out,
                    width,
                    T::ONE,
                    filters.data().as_ptr(),
                    1,
                    (c_in * k) as isize,
                    dout_mat.as_ptr(),
                    width as isize,
                    1,
                    T::ZERO,
                    dcols.as_mut_ptr(),
                    width as isize,
                    1,
                );
            }
            for bi in 0..bc {
                for ci in 0..c_in {
                    let dst_base = bi * in_stride + ci * n;
                    for t in 0..k {
                        let row = ci * k + t;
                        let src_base = row * width + bi * m;
                        for mm in 0..m {
                            let pos = mm * spec.stride + t;
                            if pos >= spec.padding && pos - spec.padding < n {
                                dx_chunk[dst_base + pos - spec.padding] += dcols[src_base + mm];
                            }
                        }
                    }
                }
            }
            (dw, db)
        })
        .collect();

    let mut dw = vec![T::ZERO; c_out * c_in * k];
    let mut db = vec![T::ZERO; c_out];
    for (pw, pb) in partials {
        for (a, b) in dw.iter_mut().zip(&pw) {
            *a += *b;
        }
        for (a, b) in db.iter_mut().zip(&pb) {
            *a += *b;
        }
    }
    let db = if spec.has_bias { Some(db) } else { None };
    Ok((dx, dw, db))
}

/// Transposed convolution: out[b, co, n*stride + t - padding] +=
/// in[b, ci, n] * filters[ci, co, t]. The adjoint of [`conv1d_forward`].
pub fn conv1d_transposed_forward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    if !spec.transposed {
        return Err(Error::validation(
            "conv1d_transposed_forward needs a transposed spec",
        ));
    }
    check_filters(filters, spec)?;
    let (batch, c_in, n) = input.dims3()?;
    if c_in != spec.in_channels {
        return Err(Error::validation(format!(
            "input has {c_in} channels, spec expects {}",
            spec.in_channels
        )));
    }
    let m = spec.out_len(n)?;
    let (c_out, k) = (spec.out_channels, spec.kernel);
    let mut out = Tensor::zeros(&[batch, c_out, m]);
    let in_stride = c_in * n;
    let out_stride = c_out * m;

    out.data_mut()
        .par_chunks_mut(BATCH_CHUNK * out_stride)
        .zip(input.data().par_chunks(BATCH_CHUNK * in_stride))
        .for_each(|(out_chunk, in_chunk)| {
            let bc = in_chunk.len() / in_stride;
            let width = bc * n;
            // input gathered as [c_in, bc*n]
            let mut x_mat = vec![T::ZERO; c_in * width];
            for bi in 0..bc {
                for ci in 0..c_in {
                    let src = &in_chunk[bi * in_stride + ci * n..bi * in_stride + ci * n + n];
                    x_mat[ci * width + bi * n..ci * width + bi * n + n].copy_from_slice(src);
                }
            }
            // out_cols = W~^T x_mat, W~ = filters as [c_in, c_out*k]
            let mut out_cols = vec![T::ZERO; c_out * k * width];
            unsafe {
                T::gemm(
                    c_out * k,
                    c_in,
                    width,
                    T::ONE,
                    filters.data().as_ptr(),
                    1,
                    (c_out * k) as isize,
                    x_mat.as_ptr(),
                    width as isize,
                    1,
                    T::ZERO,
                    out_cols.as_mut_ptr(),
                    width as isize,
                    1,
                );
            }
            for bi in 0..bc {
                for co in 0..c_out {
                    for t in 0..k {
                        let src_base = (co * k + t) * width + bi * n;
                        for nn in 0..n {
                            let pos = nn * spec.stride + t;
                            if pos >= spec.padding && pos - spec.padding < m {
                                out_chunk[bi * out_stride + co * m + pos - spec.padding] +=
                                    out_cols[src_base + nn];
                            }
                        }
                    }
                }
            }
        });
    debug_assert!(out.check_finite("conv1d_transposed_forward output").is_ok());
    Ok(out)
}

/// Gradients of [`conv1d_transposed_forward`] with respect to input and
/// filters.
pub(crate) fn conv1d_transposed_backward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    dout: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (batch, c_in, n) = input.dims3()?;
    let (_, c_out, m) = dout.dims3()?;
    let k = spec.kernel;
    let mut dx = Tensor::zeros(&[batch, c_in, n]);
    let in_stride = c_in * n;
    let out_stride = c_out * m;

    let partials: Vec<Vec<T>> = dx
        .data_mut()
        .par_chunks_mut(BATCH_CHUNK * in_stride)
        .zip(input.data().par_chunks(BATCH_CHUNK * in_stride))
        .zip(dout.data().par_chunks(BATCH_CHUNK * out_stride))
        .map(|((dx_chunk, in_chunk), dout_chunk)| {
            let bc = in_chunk.len() / in_stride;
            let width = bc * n;
            // dcols[(co*k + t), (bi*n + nn)] = dout[bi, co, nn*stride + t - padding]
            let mut dcols = vec![T::ZERO; c_out * k * width];
            for bi in 0..bc {
                for co in 0..c_out {
                    let src_base = bi * out_stride + co * m;
                    for t in 0..k {
                        let dst_base = (co * k + t) * width + bi * n;
                        for nn in 0..n {
                            let pos = nn * spec.stride + t;
                            if pos >= spec.padding && pos - spec.padding < m {
                                dcols[dst_base + nn] = dout_chunk[src_base + pos - spec.padding];
                            }
                        }
                    }
                }
            }
            // dx_mat = W~ dcols
            let mut dx_mat = vec![T::ZERO; c_in * width];
            unsafe {
                T::gemm(
                    c_in,
                    c_out * k,
                    width,
                    T::ONE,
                    filters.data().as_ptr(),
                    (c_out * k) as isize,
                    1,
                    dcols.as_ptr(),
                    width as isize,
                    1,
                    T::ZERO,
                    dx_mat.as_mut_ptr(),
                    width as isize,
                    1,
                );
            }
            for bi in 0..bc {
                for ci in 0..c_in {
                    let src = &dx_mat[ci * width + bi * n..ci * width + bi * n + n];
                    dx_chunk[bi * in_stride + ci * n..bi * in_stride + ci * n + n]
                        .copy_from_slice(src);
                }
            }
            // dW~ = x_mat dcols^T
            let mut x_mat = vec![T::ZERO; c_in * width];
            for bi in 0..bc {
                for ci in 0..c_in {
                    let src = &in_chunk[bi * in_stride + ci * n..bi * in_stride + ci * n + n];
                    x_mat[ci * width + bi * n..ci * width + bi * n + n].copy_from_slice(src);
                }
            }
            let mut dw = vec![T::ZERO; c_in * c_out * k];
            unsafe {
                T::gemm(
                    c_in,
                    width,
                    c_out * k,
                    T::ONE,
                    x_mat.as_ptr(),
                    width as isize,
                    1,
                    dcols.as_ptr(),
                    1,
                    width as isize,
                    T::ZERO,
                    dw.as_mut_ptr(),
                    (c_out * k) as isize,
                    1,
                );
            }
            dw
        })
        .collect();

    let mut dw = vec![T::ZERO; c_in * c_out * k];
    for pw in partials {
        for (a, b) in dw.iter_mut().zip(&pw) {
            *a += *b;
        }
    }
    Ok((dx, dw))
}
