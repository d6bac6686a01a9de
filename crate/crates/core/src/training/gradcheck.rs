use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{assign_targets, detection_loss, TrainConfig};
use crate::boxes::GroundTruthBox;
use crate::detection::AnchorSet;
use crate::error::{Error, Result};
use crate::network::{Network, NetworkSpec};
use crate::tensor::Tensor;

pub const GRADCHECK_MIN_SAMPLES: usize = 200;
const MAX_INPUT: usize = 64;
/// Gradients smaller than this are compared absolutely rather than relatively.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter with the largest error, as `name[index]`.
    pub worst: String,
    /// Samples whose perturbation moved at least one pre-activation across
    /// the leaky-ReLU kink.
    pub kinked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic[i]` against the central difference
/// `(f(i, +eps) − f(i, −eps)) / 2eps` for each `i` in `indices`, where
/// `f(i, δ)` evaluates the objective with coordinate `i` shifted by `δ`.
/// Returns the largest relative error and the index where it occurred.
pub fn finite_difference_check(
    analytic: &[f64],
    indices: &[usize],
    eps: f64,
    mut f: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<(f64, usize)> {
    check_eps(eps)?;
    let mut worst = (0.0, indices.first().copied().unwrap_or(0));
    for &i in indices {
        let numeric = (f(i, eps)? - f(i, -eps)?) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(worst)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference perturbation must be positive, got {eps}"
        )));
    }
    Ok(())
}

/// End-to-end check of the analytic loss gradient of a small network at
/// 64-bit precision against central differences, over at least
/// [`GRADCHECK_MIN_SAMPLES`] parameters drawn from every learnable tensor.
///
/// The perturbed evaluations keep the activation pattern of the unperturbed
/// forward pass, so a perturbation that pushes a pre-activation across zero
/// measures the slope of the piece the analytic gradient belongs to.
pub fn gradient_check(spec: &NetworkSpec, seed: u64, eps: f64) -> Result<GradCheckReport> {
    check_eps(eps)?;
    if spec.input_size > MAX_INPUT {
        return Err(Error::InvalidSpec(format!(
            "gradient check needs an input of at most {MAX_INPUT} pixels, got {}",
            spec.input_size
        )));
    }
    let mut net = Network::<f64>::new(spec)?;
    net.init_weights(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

    let anchors = AnchorSet::new(
        (1..=spec.num_anchors)
            .map(|a| (0.08 * a as f64, 0.06 * a as f64 + 0.02))
            .collect(),
    )?;
    let batch = 2;
    let s = spec.input_size;
    let image: Vec<f64> = (0..batch * 3 * s * s).map(|_| rng.gen::<f64>()).collect();
    let image = Tensor::from_vec(&[batch, 3, s, s], image)?;
    let targets = (0..batch)
        .map(|_| {
            let gts: Vec<GroundTruthBox> = (0..3)
                .map(|_| {
                    GroundTruthBox::new(
                        rng.gen_range(0..spec.num_classes),
                        rng.gen_range(0.05..0.95),
                        rng.gen_range(0.05..0.95),
                        rng.gen_range(0.05..0.4),
                        rng.gen_range(0.05..0.4),
                    )
                })
                .collect();
            assign_targets(&gts, &anchors, spec.grid(), spec.num_classes)
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = TrainConfig::default();

    let (out, tape) = net.forward_train(&image)?;
    let (_, grad) = detection_loss(&out, &targets, &cfg)?;
    let grads = net.backward(&tape, &grad)?;

    let shapes: Vec<(String, usize)> = net
        .learnable()
        .iter()
        .map(|t| (t.name.clone(), t.tensor.len()))
        .collect();
    let per_tensor = GRADCHECK_MIN_SAMPLES.div_ceil(shapes.len()).max(4);
    let mut samples = Vec::new();
    for (t, (_, len)) in shapes.iter().enumerate() {
        for _ in 0..per_tensor.min(*len) {
            samples.push((t, rng.gen_range(0..*len)));
        }
    }

    let analytic: Vec<f64> = samples
        .iter()
        .map(|&(t, e)| grads.tensors[t].data()[e])
        .collect();
    let indices: Vec<usize> = (0..samples.len()).collect();
    let mut kinked = vec![false; samples.len()];
    let (max_rel_error, worst) = finite_difference_check(&analytic, &indices, eps, |i, delta| {
        let (t, e) = samples[i];
        let original = net.learnable()[t].tensor.data()[e];
        net.learnable_mut()[t].tensor.data_mut()[e] = original + delta;
        let loss = net.forward_train_pinned(&image, Some(&tape)).and_then(|(out, pinned)| {
            kinked[i] |= pinned.sign_changes(&tape) > 0;
            detection_loss(&out, &targets, &cfg)
        });
        net.learnable_mut()[t].tensor.data_mut()[e] = original;
        loss.map(|(l, _)| l)
    })?;
    let (t, e) = samples[worst];
    Ok(GradCheckReport {
        max_rel_error,
        checked: samples.len(),
        worst: format!("{}[{e}]", shapes[t].0),
        kinked: kinked.iter().filter(|&&k| k).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{conv2d_backward, conv2d_forward, ConvParams};

    #[test]
    fn zero_eps_rejected() {
        let spec = NetworkSpec {
            input_size: 16,
            ..NetworkSpec::tiny(1)
        };
        assert!(gradient_check(&spec, 0, 0.0).is_err());
        assert!(gradient_check(&spec, 0, f64::NAN).is_err());
    }

    #[test]
    fn oversized_input_rejected() {
        assert!(gradient_check(&NetworkSpec::tiny(1), 0, 1e-5).is_err());
    }

    #[test]
    fn linear_layer_quadratic_loss() {
        // one 1×1 convolution with bias, loss ½‖y − t‖²
        let mut p = ConvParams::<f64>::new(3, 2, 1, 1, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        p.weight.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let x = Tensor::from_vec(&[3, 4, 4], (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let t: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |p: &ConvParams<f64>| {
            let y = conv2d_forward(&x, p).unwrap();
            0.5 * y.data().iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let y = conv2d_forward(&x, &p).unwrap();
        let r: Vec<f64> = y.data().iter().zip(&t).map(|(a, b)| a - b).collect();
        let g = conv2d_backward(&Tensor::from_vec(y.shape(), r).unwrap(), &x, &p).unwrap();
        let mut analytic = g.weight.data().to_vec();
        analytic.extend_from_slice(g.bias.data());
        let n = analytic.len();
        let (err, _) = finite_difference_check(&analytic, &(0..n).collect::<Vec<_>>(), 1e-5, |i, d| {
            let mut q = p.clone();
            if i < 6 {
                q.weight.data_mut()[i] += d;
            } else {
                q.bias.as_mut().unwrap().data_mut()[i - 6] += d;
            }
            Ok(loss(&q))
        })
        .unwrap();
        assert!(err < 1e-8, "max relative error {err}");
    }
}
