use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Fraction of the previous running statistic kept at each training step.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Per-channel batch statistics; running statistics are updated.
    Train,
    /// Running statistics only.
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T = f32> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: T,
    pub momentum: T,
}

/// What the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    mode: NormMode,
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNormParams<T> {
    /// Identity statistics: scale 1, shift 0, running mean 0, running var 1.
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            scale: Tensor::full(&[channels], T::one()),
            shift: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            epsilon: T::from_f64(BN_EPSILON),
            momentum: T::from_f64(BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Inference-mode forward without touching any state.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c, h, w) = self.check(input)?;
        let mut out = input.clone();
        let hw = h * w;
        for n in 0..b {
            let item = out.item_mut(n);
            for ch in 0..c {
                let inv = (self.running_var.data()[ch] + self.epsilon).sqrt().recip();
                let a = self.scale.data()[ch] * inv;
                let mean = self.running_mean.data()[ch];
                let shift = self.shift.data()[ch];
                for v in &mut item[ch * hw..(ch + 1) * hw] {
                    *v = a * (*v - mean) + shift;
                }
            }
        }
        Ok(out)
    }

    fn check(&self, input: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let dims = input.dims4()?;
        if dims.1 != self.channels() {
            return Err(Error::ChannelMismatch {
                expected: self.channels(),
                actual: dims.1,
            });
        }
        Ok(dims)
    }
}

/// Batch normalization. In [`NormMode::Train`] the per-channel statistics are
/// taken over batch, height and width, and the running statistics move by an
/// exponential moving average.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    bn: &mut BatchNormParams<T>,
    mode: NormMode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (b, c, h, w) = bn.check(input)?;
    let hw = h * w;
    let count = T::from_f64((b * hw) as f64);
    let mut normalized = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    let mut inv_std = Vec::with_capacity(c);

    for ch in 0..c {
        let planes = || (0..b).map(move |n| &input.item(n)[ch * hw..(ch + 1) * hw]);
        let (mean, var) = match mode {
            NormMode::Infer => (bn.running_mean.data()[ch], bn.running_var.data()[ch]),
            NormMode::Train => {
                // shifted by the first sample so constant channels are exact
                let pivot = input.item(0)[ch * hw];
                let offset: T = planes().flatten().map(|&v| v - pivot).sum::<T>() / count;
                let mean = pivot + offset;
                let var = planes()
                    .flatten()
                    .map(|&v| (v - mean) * (v - mean))
                    .sum::<T>()
                    / count;
                (mean, var)
            }
        };
        let inv = (var + bn.epsilon).sqrt().recip();
        inv_std.push(inv);
        let scale = bn.scale.data()[ch];
        let shift = bn.shift.data()[ch];
        for n in 0..b {
            let range = ch * hw..(ch + 1) * hw;
            let src = &input.item(n)[range.clone()];
            let xh = &mut normalized.item_mut(n)[range.clone()];
            for (dst, &v) in xh.iter_mut().zip(src) {
                *dst = (v - mean) * inv;
            }
            let xh = &normalized.item(n)[range.clone()];
            for (dst, &v) in out.item_mut(n)[range].iter_mut().zip(xh) {
                *dst = scale * v + shift;
            }
        }
        if mode == NormMode::Train {
            let keep = bn.momentum;
            let rm = &mut bn.running_mean.data_mut()[ch];
            *rm = keep * *rm + (T::one() - keep) * mean;
            let rv = &mut bn.running_var.data_mut()[ch];
            *rv = keep * *rv + (T::one() - keep) * var;
        }
    }
    Ok((
        out,
        BatchNormCache {
            mode,
            normalized,
            inv_std,
        },
    ))
}

/// Gradients `(input, scale, shift)` of the forward call that produced `cache`.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &BatchNormCache<T>,
    bn: &BatchNormParams<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if grad_out.shape() != cache.normalized.shape() {
        return Err(Error::ShapeMismatch {
            expected: cache.normalized.shape().to_vec(),
            actual: grad_out.shape().to_vec(),
        });
    }
    let (b, c, h, w) = grad_out.dims4()?;
    let hw = h * w;
    let count = T::from_f64((b * hw) as f64);
    let mut grad_in = Tensor::zeros(grad_out.shape());
    let mut grad_scale = Tensor::zeros(&[c]);
    let mut grad_shift = Tensor::zeros(&[c]);

    for ch in 0..c {
        let range = ch * hw..(ch + 1) * hw;
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        for n in 0..b {
            let dy = &grad_out.item(n)[range.clone()];
            let xh = &cache.normalized.item(n)[range.clone()];
            for (&g, &x) in dy.iter().zip(xh) {
                sum_dy += g;
                sum_dy_xh += g * x;
            }
        }
        grad_scale.data_mut()[ch] = sum_dy_xh;
        grad_shift.data_mut()[ch] = sum_dy;
        let a = bn.scale.data()[ch] * cache.inv_std[ch];
        let mean_dy = sum_dy / count;
        let mean_dy_xh = sum_dy_xh / count;
        for n in 0..b {
            let dy = &grad_out.item(n)[range.clone()];
            let xh = &cache.normalized.item(n)[range.clone()];
            let dx = &mut grad_in.item_mut(n)[range.clone()];
            match cache.mode {
                NormMode::Infer => {
                    for (d, &g) in dx.iter_mut().zip(dy) {
                        *d = a * g;
                    }
                }
                NormMode::Train => {
                    for ((d, &g), &x) in dx.iter_mut().zip(dy).zip(xh) {
                        *d = a * (g - mean_dy - x * mean_dy_xh);
                    }
                }
            }
        }
    }
    Ok((grad_in, grad_scale, grad_shift))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_statistics_only_rescale_by_epsilon() {
        let bn = BatchNormParams::<f64>::new(1);
        let x = Tensor::from_vec(&[1, 1, 3], vec![-1.0, 0.5, 4.0]).unwrap();
        let y = bn.infer(&x).unwrap();
        let f = 1.0 / (1.0 + BN_EPSILON).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * f).abs() < 1e-15);
        }
    }

    #[test]
    fn infer_affine_arithmetic() {
        let mut bn = BatchNormParams::<f64>::new(1);
        bn.running_var.data_mut()[0] = 1.0 - bn.epsilon;
        bn.scale.data_mut()[0] = 2.0;
        bn.shift.data_mut()[0] = 1.0;
        let x = Tensor::from_vec(&[1, 1, 1], vec![3.0]).unwrap();
        assert_eq!(bn.infer(&x).unwrap().data(), &[7.0]);
        let (y, _) = batchnorm_forward(&x, &mut bn, NormMode::Infer).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn constant_channel_in_train_mode_outputs_shift() {
        let mut bn = BatchNormParams::<f32>::new(2);
        bn.shift.data_mut().copy_from_slice(&[0.25, -3.0]);
        bn.scale.data_mut().copy_from_slice(&[5.0, 2.0]);
        let mut data = vec![0.1f32; 6];
        data[6 / 2..].fill(7.3);
        let x = Tensor::from_vec(&[1, 2, 1, 3], data).unwrap();
        let (y, _) = batchnorm_forward(&x, &mut bn, NormMode::Train).unwrap();
        assert_eq!(y.data(), &[0.25, 0.25, 0.25, -3.0, -3.0, -3.0]);
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut bn = BatchNormParams::<f64>::new(1);
        let x = Tensor::from_vec(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        batchnorm_forward(&x, &mut bn, NormMode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.01 * 2.0).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.99 + 0.01 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn channel_count_checked() {
        let mut bn = BatchNormParams::<f32>::new(3);
        let x = Tensor::zeros(&[2, 4, 4]);
        assert!(matches!(
            batchnorm_forward(&x, &mut bn, NormMode::Train),
            Err(Error::ChannelMismatch { expected: 3, actual: 2 })
        ));
    }
}
