//! The detector backbone: two plain convolutions, five ConvRes blocks at
//! three spatial scales, and a linear 1×1 detection head.

mod block;
mod weights;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use block::{BlockTape, ConvLayer, ConvResBlock, LayerGrads, LayerTape};
pub use weights::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use crate::error::{Error, Result};
use crate::tensor::{conv2d_backward, conv2d_forward, ConvParams, Scalar, Tensor};

/// Number of stride-2 stages between input and head.
pub const DOWNSAMPLE_STAGES: usize = 3;
pub const DOWNSAMPLE: usize = 1 << DOWNSAMPLE_STAGES;
pub const DEFAULT_INPUT_SIZE: usize = 608;
pub const DEFAULT_WIDTHS: [usize; 7] = [64, 128, 128, 256, 256, 512, 512];
pub const TINY_WIDTHS: [usize; 7] = [8, 16, 16, 32, 32, 64, 64];
pub const INPUT_CHANNELS: usize = 3;

/// Which ConvRes blocks (0-based) downsample in their first convolution.
const STRIDED_BLOCKS: [usize; 2] = [1, 3];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_size: usize,
    pub num_classes: usize,
    pub num_anchors: usize,
    /// Channels of conv1, conv2 and ConvRes1..5.
    pub widths: [usize; 7],
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            input_size: DEFAULT_INPUT_SIZE,
            num_classes: 4,
            num_anchors: 4,
            widths: DEFAULT_WIDTHS,
        }
    }
}

impl NetworkSpec {
    pub fn with_classes(num_classes: usize) -> Self {
        NetworkSpec {
            num_classes,
            ..Default::default()
        }
    }

    /// 152-pixel input, 19×19 grid, narrow widths.
    pub fn tiny(num_classes: usize) -> Self {
        NetworkSpec {
            input_size: 152,
            num_classes,
            num_anchors: 4,
            widths: TINY_WIDTHS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidSpec("at least one class is required".into()));
        }
        if self.num_anchors == 0 {
            return Err(Error::InvalidSpec("at least one anchor is required".into()));
        }
        if self.input_size == 0 || self.input_size % DOWNSAMPLE != 0 {
            return Err(Error::InvalidSpec(format!(
                "input size {} is not a positive multiple of {DOWNSAMPLE}",
                self.input_size
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidSpec("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Side length of the output grid.
    pub fn grid(&self) -> usize {
        self.input_size / DOWNSAMPLE
    }

    pub fn slot_channels(&self) -> usize {
        5 + self.num_classes
    }

    pub fn head_channels(&self) -> usize {
        self.num_anchors * self.slot_channels()
    }
}

/// Role of a stored tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnScale,
    BnShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn is_learnable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Batch-norm affine parameters are exempt from weight decay.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::ConvBias)
    }
}

pub struct NamedTensor<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: &'a Tensor<T>,
}

pub struct NamedTensorMut<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: &'a mut Tensor<T>,
}

/// Gradients of every learnable tensor, in [`Network::learnable`] order.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

/// One row of the per-layer parameter table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSummary {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub out_size: usize,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    spec: NetworkSpec,
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub blocks: Vec<ConvResBlock<T>>,
    /// Linear 1×1 convolution with bias; no normalization or activation.
    pub head: ConvParams<T>,
}

/// Saved activations of a training-mode forward pass.
pub struct Tape<T> {
    conv1: LayerTape<T>,
    conv2: LayerTape<T>,
    blocks: Vec<BlockTape<T>>,
    head_input: Tensor<T>,
}

impl<T: Scalar> Tape<T> {
    /// Activations whose pre-activation sign differs between two tapes of the
    /// same network and input shape.
    pub fn sign_changes(&self, other: &Tape<T>) -> usize {
        self.conv1.sign_changes(&other.conv1)
            + self.conv2.sign_changes(&other.conv2)
            + self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a.sign_changes(b))
                .sum::<usize>()
    }
}

impl<T: Scalar> Network<T> {
    /// Builds the layer plan with identity batch norm and zero weights; call
    /// [`Network::init_weights`] before use.
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let w = spec.widths;
        let conv1 = ConvLayer::new(INPUT_CHANNELS, w[0], 3, 1)?;
        let conv2 = ConvLayer::new(w[0], w[1], 3, 2)?;
        let mut blocks = Vec::with_capacity(5);
        let mut in_ch = w[1];
        for (i, &width) in w[2..].iter().enumerate() {
            let stride = if STRIDED_BLOCKS.contains(&i) { 2 } else { 1 };
            blocks.push(ConvResBlock::new(in_ch, width, stride)?);
            in_ch = width;
        }
        let head = ConvParams::new(in_ch, spec.head_channels(), 1, 1, true)?;
        Ok(Network {
            spec: spec.clone(),
            conv1,
            conv2,
            blocks,
            head,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Every stored tensor in layer order, running statistics included.
    pub fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = Vec::new();
        self.conv1.collect("conv1", &mut out);
        self.conv2.collect("conv2", &mut out);
        for (i, block) in self.blocks.iter().enumerate() {
            block.collect(&format!("convres{}", i + 1), &mut out);
        }
        out.push(NamedTensor {
            name: "head.w".into(),
            kind: ParamKind::ConvWeight,
            tensor: &self.head.weight,
        });
        if let Some(b) = &self.head.bias {
            out.push(NamedTensor {
                name: "head.b".into(),
                kind: ParamKind::ConvBias,
                tensor: b,
            });
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_, T>> {
        let mut out = Vec::new();
        self.conv1.collect_mut("conv1", &mut out);
        self.conv2.collect_mut("conv2", &mut out);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.collect_mut(&format!("convres{}", i + 1), &mut out);
        }
        out.push(NamedTensorMut {
            name: "head.w".into(),
            kind: ParamKind::ConvWeight,
            tensor: &mut self.head.weight,
        });
        if let Some(b) = &mut self.head.bias {
            out.push(NamedTensorMut {
                name: "head.b".into(),
                kind: ParamKind::ConvBias,
                tensor: b,
            });
        }
        out
    }

    pub fn learnable(&self) -> Vec<NamedTensor<'_, T>> {
        self.tensors()
            .into_iter()
            .filter(|t| t.kind.is_learnable())
            .collect()
    }

    pub fn learnable_mut(&mut self) -> Vec<NamedTensorMut<'_, T>> {
        self.tensors_mut()
            .into_iter()
            .filter(|t| t.kind.is_learnable())
            .collect()
    }

    /// Total learnable scalars: conv weights, head bias, batch-norm scale
    /// and shift. Running statistics are not counted.
    pub fn count_params(&self) -> usize {
        self.learnable().iter().map(|t| t.tensor.len()).sum()
    }

    pub fn layer_summary(&self) -> Vec<LayerSummary> {
        let mut size = self.spec.input_size;
        let mut rows = Vec::new();
        let mut push = |name: String, conv: &ConvParams<T>, extra: usize, size: &mut usize| {
            *size = (*size + 2 * conv.padding - conv.kernel()) / conv.stride + 1;
            rows.push(LayerSummary {
                name,
                kernel: conv.kernel(),
                stride: conv.stride,
                in_channels: conv.in_channels(),
                out_channels: conv.out_channels(),
                out_size: *size,
                params: conv.weight.len() + conv.bias.as_ref().map_or(0, |b| b.len()) + extra,
            });
        };
        push("conv1".into(), &self.conv1.conv, 2 * self.conv1.bn.channels(), &mut size);
        push("conv2".into(), &self.conv2.conv, 2 * self.conv2.bn.channels(), &mut size);
        for (i, block) in self.blocks.iter().enumerate() {
            for (tag, layer) in [("a", &block.a), ("b", &block.b), ("c", &block.c)] {
                push(
                    format!("convres{}.{tag}", i + 1),
                    &layer.conv,
                    2 * layer.bn.channels(),
                    &mut size,
                );
            }
        }
        push("head".into(), &self.head, 0, &mut size);
        rows
    }

    /// Seeded initialization: conv weights uniform in ±sqrt(2 / fan_in),
    /// biases zero, batch norm at identity statistics.
    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in self.tensors_mut() {
            match t.kind {
                ParamKind::ConvWeight => {
                    let fan_in: usize = t.tensor.shape()[1..].iter().product();
                    let bound = (2.0 / fan_in as f64).sqrt();
                    for v in t.tensor.data_mut() {
                        *v = T::from_f64(rng.gen_range(-bound..bound));
                    }
                }
                ParamKind::ConvBias | ParamKind::BnShift | ParamKind::RunningMean => {
                    t.tensor.fill(T::zero())
                }
                ParamKind::BnScale | ParamKind::RunningVar => t.tensor.fill(T::one()),
            }
        }
    }

    /// Converts every stored tensor to another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut out = Network::<U>::new(&self.spec).expect("spec already validated");
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst.tensor = src.tensor.cast();
        }
        out
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let s = self.spec.input_size;
        if c != INPUT_CHANNELS || h != s || w != s {
            return Err(Error::ShapeMismatch {
                expected: vec![INPUT_CHANNELS, s, s],
                actual: vec![c, h, w],
            });
        }
        Ok(())
    }

    /// Inference-mode forward pass returning the raw head tensor.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_with_taps(x, |_, _| {})
    }

    /// Inference forward that hands each intermediate feature map
    /// (`conv1`, `conv2`, `convres1`..`convres5`) to `tap`.
    pub fn forward_with_taps(
        &self,
        x: &Tensor<T>,
        mut tap: impl FnMut(&str, &Tensor<T>),
    ) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = self.conv1.forward(x)?;
        tap("conv1", &h);
        h = self.conv2.forward(&h)?;
        tap("conv2", &h);
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(&h)?;
            tap(&format!("convres{}", i + 1), &h);
        }
        conv2d_forward(&h, &self.head)
    }

    /// Feature map produced by the named layer.
    pub fn feature_map(&self, x: &Tensor<T>, layer: &str) -> Result<Tensor<T>> {
        if !LAYER_TAPS.contains(&layer) {
            return Err(Error::InvalidArgument(format!(
                "unknown layer {layer:?}; expected one of {LAYER_TAPS:?}"
            )));
        }
        let mut found = None;
        self.forward_with_taps(x, |name, t| {
            if name == layer {
                found = Some(t.clone());
            }
        })?;
        Ok(found.expect("every tap name is visited"))
    }

    /// Training-mode forward: batch statistics, running-stat updates, and a
    /// tape for [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        self.forward_train_pinned(x, None)
    }

    /// Training forward whose leaky ReLUs, given `pin`, keep the activation
    /// pattern recorded there. The result is then smooth in the parameters
    /// near the pinned point, which finite differences rely on.
    pub fn forward_train_pinned(&mut self, x: &Tensor<T>, pin: Option<&Tape<T>>) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(x)?;
        let (h, conv1) = self.conv1.forward_train_pinned(x, pin.map(|p| &p.conv1))?;
        let (mut h, conv2) = self.conv2.forward_train_pinned(&h, pin.map(|p| &p.conv2))?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let (out, tape) = block.forward_train_pinned(&h, pin.map(|p| &p.blocks[i]))?;
            blocks.push(tape);
            h = out;
        }
        let out = conv2d_forward(&h, &self.head)?;
        Ok((
            out,
            Tape {
                conv1,
                conv2,
                blocks,
                head_input: h,
            },
        ))
    }

    /// Gradients of all learnable tensors given the gradient of the head output.
    pub fn backward(&self, tape: &Tape<T>, grad_out: &Tensor<T>) -> Result<Gradients<T>> {
        let head = conv2d_backward(grad_out, &tape.head_input, &self.head)?;
        let mut groups: Vec<Vec<Tensor<T>>> = vec![vec![head.weight, head.bias]];
        let mut g = head.input;
        for (block, bt) in self.blocks.iter().zip(&tape.blocks).rev() {
            let (gx, grads) = block.backward(bt, &g)?;
            groups.push(grads.into_iter().flat_map(LayerGrads::into_vec).collect());
            g = gx;
        }
        let (g, conv2) = self.conv2.backward(&tape.conv2, &g)?;
        groups.push(conv2.into_vec());
        let (_, conv1) = self.conv1.backward(&tape.conv1, &g)?;
        groups.push(conv1.into_vec());
        Ok(Gradients {
            tensors: groups.into_iter().rev().flatten().collect(),
        })
    }
}

/// Layers whose outputs can be tapped for visualization.
pub const LAYER_TAPS: [&str; 7] = [
    "conv1", "conv2", "convres1", "convres2", "convres3", "convres4", "convres5",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_head_geometry() {
        let spec = NetworkSpec::with_classes(4);
        assert_eq!(spec.grid(), 76);
        assert_eq!(spec.head_channels(), 36);
        let net = Network::<f32>::new(&spec).unwrap();
        let rows = net.layer_summary();
        let last = rows.last().unwrap();
        assert_eq!((last.out_size, last.out_channels), (76, 36));
    }

    #[test]
    fn block_scales_and_stride_count() {
        let net = Network::<f32>::new(&NetworkSpec::default()).unwrap();
        let rows = net.layer_summary();
        let block_out: Vec<usize> = rows
            .iter()
            .filter(|r| r.name.ends_with(".c"))
            .map(|r| r.out_size)
            .collect();
        assert_eq!(block_out, vec![304, 152, 152, 76, 76]);
        assert_eq!(rows.iter().filter(|r| r.stride == 2).count(), DOWNSAMPLE_STAGES);
    }

    #[test]
    fn parameter_counts() {
        let net = Network::<f32>::new(&NetworkSpec::with_classes(4)).unwrap();
        assert_eq!(net.count_params(), 11_392_868);
        let net = Network::<f32>::new(&NetworkSpec::with_classes(11)).unwrap();
        assert_eq!(net.count_params(), 11_407_232);
        let table: usize = net.layer_summary().iter().map(|r| r.params).sum();
        assert_eq!(table, 11_407_232);
    }

    #[test]
    fn zero_classes_rejected() {
        assert!(matches!(
            Network::<f32>::new(&NetworkSpec::with_classes(0)),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn indivisible_input_rejected() {
        let spec = NetworkSpec {
            input_size: 100,
            ..NetworkSpec::tiny(2)
        };
        assert!(Network::<f32>::new(&spec).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let spec = NetworkSpec::tiny(2);
        let mut a = Network::<f32>::new(&spec).unwrap();
        let mut b = Network::<f32>::new(&spec).unwrap();
        a.init_weights(7);
        b.init_weights(7);
        assert_eq!(a, b);
        b.init_weights(8);
        assert_ne!(a, b);
    }

    #[test]
    fn gradient_layout_matches_learnable_tensors() {
        let spec = NetworkSpec {
            input_size: 16,
            ..NetworkSpec::tiny(1)
        };
        let mut net = Network::<f64>::new(&spec).unwrap();
        net.init_weights(1);
        let x = Tensor::full(&[1, 3, 16, 16], 0.5);
        let (out, tape) = net.forward_train(&x).unwrap();
        let grads = net.backward(&tape, &Tensor::full(out.shape(), 1.0)).unwrap();
        let learnable = net.learnable();
        assert_eq!(grads.tensors.len(), learnable.len());
        for (g, p) in grads.tensors.iter().zip(&learnable) {
            assert_eq!(g.shape(), p.tensor.shape(), "{}", p.name);
        }
    }
}
