//! 2-D cross-correlation via im2col + GEMM.

use super::gemm::{gemm, Strides};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Upper bound on the im2col scratch buffer, in elements. Large inputs are
/// processed in bands of output rows so the buffer never exceeds this.
const COL_BUDGET: usize = 1 << 22;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    /// `out_channels × in_channels × kernel × kernel`
    pub weight: Tensor<T>,
    /// Present only for convolutions not followed by batch norm.
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvParams<T> {
    /// Zero-initialized convolution. Padding is `kernel / 2`, which keeps
    /// stride-1 outputs the same size as their input.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        with_bias: bool,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd, got {kernel}"
            )));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::InvalidArgument(format!(
                "stride must be 1 or 2, got {stride}"
            )));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        Ok(ConvParams {
            weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: with_bias.then(|| Tensor::zeros(&[out_channels])),
            stride,
            padding: kernel / 2,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        let (ph, pw) = (height + 2 * self.padding, width + 2 * self.padding);
        if ph < k || pw < k || height == 0 || width == 0 {
            return Err(Error::EmptyOutput {
                height,
                width,
                kernel: k,
                stride: self.stride,
                padding: self.padding,
            });
        }
        Ok(((ph - k) / self.stride + 1, (pw - k) / self.stride + 1))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == 1 && self.stride == 1 && self.padding == 0
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let dims = input.dims4()?;
        if dims.1 != self.in_channels() {
            return Err(Error::ChannelMismatch {
                expected: self.in_channels(),
                actual: dims.1,
            });
        }
        Ok(dims)
    }
}

struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_width: usize,
}

impl Geometry {
    /// Range of output columns whose tap `kx` lands inside the input row.
    fn valid_columns(&self, kx: usize) -> (usize, usize) {
        let lo = if self.padding > kx {
            (self.padding - kx).div_ceil(self.stride)
        } else {
            0
        };
        let hi = (self.width + self.padding)
            .saturating_sub(kx)
            .div_ceil(self.stride)
            .min(self.out_width);
        (lo.min(hi), hi)
    }

    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.stride + ky)
            .checked_sub(self.padding)
            .filter(|&iy| iy < self.height)
    }

    fn rows_per_band(&self, out_height: usize) -> usize {
        let per_row = self.channels * self.kernel * self.kernel * self.out_width;
        (COL_BUDGET / per_row.max(1)).clamp(1, out_height)
    }
}

/// Unfolds output rows `rows` of one image into `col`, laid out as
/// `(c·k·k) × (rows.len()·out_width)`.
fn im2col<T: Scalar>(x: &[T], g: &Geometry, rows: std::ops::Range<usize>, col: &mut [T]) {
    let ncols = rows.len() * g.out_width;
    let k = g.kernel;
    for ci in 0..g.channels {
        let plane = &x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let dst = &mut col[r * ncols..(r + 1) * ncols];
                let (lo, hi) = g.valid_columns(kx);
                for (band_row, oy) in rows.clone().enumerate() {
                    let out = &mut dst[band_row * g.out_width..(band_row + 1) * g.out_width];
                    let Some(iy) = g.input_row(oy, ky) else {
                        out.fill(T::zero());
                        continue;
                    };
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = lo + kx - g.padding;
                        out[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for ox in lo..hi {
                            out[ox] = src[ox * g.stride + kx - g.padding];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back onto the input gradient.
fn col2im<T: Scalar>(col: &[T], g: &Geometry, rows: std::ops::Range<usize>, dx: &mut [T]) {
    let ncols = rows.len() * g.out_width;
    let k = g.kernel;
    for ci in 0..g.channels {
        let plane = &mut dx[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let src = &col[r * ncols..(r + 1) * ncols];
                let (lo, hi) = g.valid_columns(kx);
                for (band_row, oy) in rows.clone().enumerate() {
                    let Some(iy) = g.input_row(oy, ky) else {
                        continue;
                    };
                    let from = &src[band_row * g.out_width..(band_row + 1) * g.out_width];
                    let row = &mut plane[iy * g.width..(iy + 1) * g.width];
                    for ox in lo..hi {
                        row[ox * g.stride + kx - g.padding] += from[ox];
                    }
                }
            }
        }
    }
}

fn output_shape(input: &Tensor<impl Scalar>, b: usize, d: usize, ho: usize, wo: usize) -> Vec<usize> {
    if input.rank() == 3 {
        vec![d, ho, wo]
    } else {
        vec![b, d, ho, wo]
    }
}

/// Forward cross-correlation (no kernel flip), summed over input channels,
/// plus the optional per-output-channel bias.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = params.check_input(input)?;
    let (ho, wo) = params.output_size(h, w)?;
    let d = params.out_channels();
    let k = params.kernel();
    let kk = c * k * k;
    let weights = params.weight.data();
    let mut out = Tensor::zeros(&output_shape(input, b, d, ho, wo));
    let g = Geometry {
        channels: c,
        height: h,
        width: w,
        kernel: k,
        stride: params.stride,
        padding: params.padding,
        out_width: wo,
    };
    let band = g.rows_per_band(ho);
    let mut col = if params.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * band * wo]
    };

    for n in 0..b {
        let x = input.item(n);
        let y = out.item_mut(n);
        if params.is_pointwise() {
            gemm(
                d,
                c,
                h * w,
                T::one(),
                weights,
                Strides::row_major(c),
                x,
                Strides::row_major(h * w),
                T::zero(),
                y,
                Strides::row_major(h * w),
            );
        } else {
            let mut r0 = 0;
            while r0 < ho {
                let r1 = (r0 + band).min(ho);
                let ncols = (r1 - r0) * wo;
                im2col(x, &g, r0..r1, &mut col);
                gemm(
                    d,
                    kk,
                    ncols,
                    T::one(),
                    weights,
                    Strides::row_major(kk),
                    &col,
                    Strides::row_major(ncols),
                    T::zero(),
                    &mut y[r0 * wo..],
                    Strides(ho * wo, 1),
                );
                r0 = r1;
            }
        }
        if let Some(bias) = &params.bias {
            for (plane, &bv) in y.chunks_mut(ho * wo).zip(bias.data()) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] with respect to its input, weights
/// and bias. The bias gradient is returned even for bias-free convolutions.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    params: &ConvParams<T>,
) -> Result<ConvGrads<T>> {
    let (b, c, h, w) = params.check_input(saved_input)?;
    let (ho, wo) = params.output_size(h, w)?;
    let d = params.out_channels();
    let expected = output_shape(saved_input, b, d, ho, wo);
    if grad_out.shape() != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            expected,
            actual: grad_out.shape().to_vec(),
        });
    }
    let k = params.kernel();
    let kk = c * k * k;
    let weights = params.weight.data();
    let mut grad_input = Tensor::zeros(saved_input.shape());
    let mut grad_weight = Tensor::zeros(params.weight.shape());
    let mut grad_bias = Tensor::zeros(&[d]);
    let g = Geometry {
        channels: c,
        height: h,
        width: w,
        kernel: k,
        stride: params.stride,
        padding: params.padding,
        out_width: wo,
    };
    let band = g.rows_per_band(ho);
    let (mut col, mut grad_col) = if params.is_pointwise() {
        (Vec::new(), Vec::new())
    } else {
        (vec![T::zero(); kk * band * wo], vec![T::zero(); kk * band * wo])
    };

    for n in 0..b {
        let go = grad_out.item(n);
        for (gb, plane) in grad_bias.data_mut().iter_mut().zip(go.chunks(ho * wo)) {
            *gb += plane.iter().copied().sum::<T>();
        }
        let x = saved_input.item(n);
        if params.is_pointwise() {
            let hw = h * w;
            gemm(
                d,
                hw,
                c,
                T::one(),
                go,
                Strides::row_major(hw),
                x,
                Strides::transposed(hw),
                T::one(),
                grad_weight.data_mut(),
                Strides::row_major(c),
            );
            gemm(
                c,
                d,
                hw,
                T::one(),
                weights,
                Strides::transposed(c),
                go,
                Strides::row_major(hw),
                T::zero(),
                grad_input.item_mut(n),
                Strides::row_major(hw),
            );
            continue;
        }
        let mut r0 = 0;
        while r0 < ho {
            let r1 = (r0 + band).min(ho);
            let ncols = (r1 - r0) * wo;
            let go_band = &go[r0 * wo..];
            im2col(x, &g, r0..r1, &mut col);
            gemm(
                d,
                ncols,
                kk,
                T::one(),
                go_band,
                Strides(ho * wo, 1),
                &col,
                Strides::transposed(ncols),
                T::one(),
                grad_weight.data_mut(),
                Strides::row_major(kk),
            );
            gemm(
                kk,
                d,
                ncols,
                T::one(),
                weights,
                Strides::transposed(kk),
                go_band,
                Strides(ho * wo, 1),
                T::zero(),
                &mut grad_col,
                Strides::row_major(ncols),
            );
            col2im(&grad_col, &g, r0..r1, grad_input.item_mut(n));
            r0 = r1;
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}
