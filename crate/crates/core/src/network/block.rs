use super::{NamedTensor, NamedTensorMut, ParamKind};
use crate::error::Result;
use crate::tensor::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, leaky_relu,
    leaky_relu_backward, leaky_relu_pinned, BatchNormCache, BatchNormParams, ConvParams, NormMode, Scalar, Tensor,
    LEAKY_SLOPE,
};

/// Convolution (no bias) → batch norm → leaky ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T = f32> {
    pub conv: ConvParams<T>,
    pub bn: BatchNormParams<T>,
}

pub struct LayerTape<T> {
    input: Tensor<T>,
    bn: BatchNormCache<T>,
    pre_activation: Tensor<T>,
}

impl<T: Scalar> LayerTape<T> {
    /// Number of activations whose pre-activation sign differs between tapes.
    pub fn sign_changes(&self, other: &LayerTape<T>) -> usize {
        let zero = T::zero();
        self.pre_activation
            .data()
            .iter()
            .zip(other.pre_activation.data())
            .filter(|(&a, &b)| (a >= zero) != (b >= zero))
            .count()
    }
}

#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    pub weight: Tensor<T>,
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
}

impl<T> LayerGrads<T> {
    pub fn into_vec(self) -> Vec<Tensor<T>> {
        vec![self.weight, self.scale, self.shift]
    }
}

fn slope<T: Scalar>() -> T {
    T::from_f64(LEAKY_SLOPE)
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        Ok(ConvLayer {
            conv: ConvParams::new(in_channels, out_channels, kernel, stride, false)?,
            bn: BatchNormParams::new(out_channels),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let z = conv2d_forward(x, &self.conv)?;
        Ok(leaky_relu(&self.bn.infer(&z)?, slope()))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, LayerTape<T>)> {
        self.forward_train_pinned(x, None)
    }

    /// Training forward; with `pin`, activations follow the sign pattern
    /// recorded in that tape rather than their own.
    pub fn forward_train_pinned(
        &mut self,
        x: &Tensor<T>,
        pin: Option<&LayerTape<T>>,
    ) -> Result<(Tensor<T>, LayerTape<T>)> {
        let z = conv2d_forward(x, &self.conv)?;
        let (y, bn) = batchnorm_forward(&z, &mut self.bn, NormMode::Train)?;
        let out = match pin {
            Some(p) => leaky_relu_pinned(&y, &p.pre_activation, slope())?,
            None => leaky_relu(&y, slope()),
        };
        Ok((
            out,
            LayerTape {
                input: x.clone(),
                bn,
                pre_activation: y,
            },
        ))
    }

    /// Returns the gradient with respect to the layer input plus the
    /// parameter gradients.
    pub fn backward(&self, tape: &LayerTape<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, LayerGrads<T>)> {
        let gy = leaky_relu_backward(grad_out, &tape.pre_activation, slope())?;
        let (gz, scale, shift) = batchnorm_backward(&gy, &tape.bn, &self.bn)?;
        let conv = conv2d_backward(&gz, &tape.input, &self.conv)?;
        Ok((
            conv.input,
            LayerGrads {
                weight: conv.weight,
                scale,
                shift,
            },
        ))
    }

    pub(super) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        let entries = [
            ("w", ParamKind::ConvWeight, &self.conv.weight),
            ("bn.scale", ParamKind::BnScale, &self.bn.scale),
            ("bn.shift", ParamKind::BnShift, &self.bn.shift),
            ("bn.mean", ParamKind::RunningMean, &self.bn.running_mean),
            ("bn.var", ParamKind::RunningVar, &self.bn.running_var),
        ];
        out.extend(entries.into_iter().map(|(name, kind, tensor)| NamedTensor {
            name: format!("{prefix}.{name}"),
            kind,
            tensor,
        }));
    }

    pub(super) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
        let entries = [
            ("w", ParamKind::ConvWeight, &mut self.conv.weight),
            ("bn.scale", ParamKind::BnScale, &mut self.bn.scale),
            ("bn.shift", ParamKind::BnShift, &mut self.bn.shift),
            ("bn.mean", ParamKind::RunningMean, &mut self.bn.running_mean),
            ("bn.var", ParamKind::RunningVar, &mut self.bn.running_var),
        ];
        out.extend(entries.into_iter().map(|(name, kind, tensor)| NamedTensorMut {
            name: format!("{prefix}.{name}"),
            kind,
            tensor,
        }));
    }
}

/// Residual unit: 3×3 (optionally stride 2) → 3×3 → 1×1, with the first
/// convolution's activation added to the last one's.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvResBlock<T = f32> {
    pub a: ConvLayer<T>,
    pub b: ConvLayer<T>,
    pub c: ConvLayer<T>,
}

pub struct BlockTape<T> {
    a: LayerTape<T>,
    b: LayerTape<T>,
    c: LayerTape<T>,
}

impl<T: Scalar> BlockTape<T> {
    pub fn sign_changes(&self, other: &BlockTape<T>) -> usize {
        self.a.sign_changes(&other.a) + self.b.sign_changes(&other.b) + self.c.sign_changes(&other.c)
    }
}

impl<T: Scalar> ConvResBlock<T> {
    pub fn new(in_channels: usize, channels: usize, stride: usize) -> Result<Self> {
        Ok(ConvResBlock {
            a: ConvLayer::new(in_channels, channels, 3, stride)?,
            b: ConvLayer::new(channels, channels, 3, 1)?,
            c: ConvLayer::new(channels, channels, 1, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.a.forward(x)?;
        let b = self.b.forward(&a)?;
        let c = self.c.forward(&b)?;
        c.add(&a)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BlockTape<T>)> {
        self.forward_train_pinned(x, None)
    }

    pub fn forward_train_pinned(
        &mut self,
        x: &Tensor<T>,
        pin: Option<&BlockTape<T>>,
    ) -> Result<(Tensor<T>, BlockTape<T>)> {
        let (a_out, a) = self.a.forward_train_pinned(x, pin.map(|p| &p.a))?;
        let (b_out, b) = self.b.forward_train_pinned(&a_out, pin.map(|p| &p.b))?;
        let (c_out, c) = self.c.forward_train_pinned(&b_out, pin.map(|p| &p.c))?;
        Ok((c_out.add(&a_out)?, BlockTape { a, b, c }))
    }

    /// Gradient with respect to the block input and the `[a, b, c]` layer
    /// gradients.
    pub fn backward(&self, tape: &BlockTape<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, [LayerGrads<T>; 3])> {
        let (g_b, c) = self.c.backward(&tape.c, grad_out)?;
        let (g_a, b) = self.b.backward(&tape.b, &g_b)?;
        let (gx, a) = self.a.backward(&tape.a, &g_a.add(grad_out)?)?;
        Ok((gx, [a, b, c]))
    }

    pub(super) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        self.a.collect(&format!("{prefix}.a"), out);
        self.b.collect(&format!("{prefix}.b"), out);
        self.c.collect(&format!("{prefix}.c"), out);
    }

    pub(super) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
        self.a.collect_mut(&format!("{prefix}.a"), out);
        self.b.collect_mut(&format!("{prefix}.b"), out);
        self.c.collect_mut(&format!("{prefix}.c"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_last_branch_passes_first_activation_through() {
        let mut block = ConvResBlock::<f64>::new(2, 3, 1).unwrap();
        for (i, v) in block.a.conv.weight.data_mut().iter_mut().enumerate() {
            *v = ((i * 7 % 11) as f64 - 5.0) * 0.1;
        }
        block.b.conv.weight.fill(0.3);
        let eps = block.c.bn.epsilon;
        block.c.bn.running_var.fill(1.0 - eps);
        block.c.conv.weight.fill(0.0);
        let x = Tensor::from_vec(&[2, 4, 4], (0..32).map(|v| (v as f64).sin()).collect()).unwrap();
        let a = block.a.forward(&x).unwrap();
        assert_eq!(block.forward(&x).unwrap(), a);
    }

    #[test]
    fn strided_block_halves_extent() {
        let block = ConvResBlock::<f32>::new(3, 4, 2).unwrap();
        let y = block.forward(&Tensor::zeros(&[3, 8, 8])).unwrap();
        assert_eq!(y.shape(), &[4, 4, 4]);
    }
}
