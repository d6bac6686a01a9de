use super::{TargetTensor, TrainConfig};
use crate::detection::{sigmoid, softmax};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Sum-of-squares detection loss over a batch of head outputs and its exact
/// gradient with respect to the raw head values. Both are divided by the
/// batch size.
///
/// Responsible slots pay for center offsets (after the sigmoid), log-size
/// residuals, objectness against 1 and the softmax class distribution against
/// its one-hot target; every other slot pays only for its objectness against 0.
pub fn detection_loss<T: Scalar>(
    pred: &Tensor<T>,
    targets: &[TargetTensor],
    cfg: &TrainConfig,
) -> Result<(f64, Tensor<T>)> {
    let (b, ch, h, w) = pred.dims4()?;
    if targets.len() != b {
        return Err(Error::InvalidArgument(format!(
            "{} target tensors for a batch of {b}",
            targets.len()
        )));
    }
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0;
    for (n, target) in targets.iter().enumerate() {
        let layout = target.layout;
        if layout.channels() != ch || layout.grid != h || layout.grid != w {
            return Err(Error::ShapeMismatch {
                expected: vec![layout.channels(), layout.grid, layout.grid],
                actual: vec![ch, h, w],
            });
        }
        let p = pred.item(n);
        let g = grad.item_mut(n);
        let nc = layout.num_classes;
        let mut logits = vec![0.0; nc];
        let mut probs = vec![0.0; nc];
        for a in 0..layout.num_anchors {
            for i in 0..h {
                for j in 0..w {
                    let at = |f: usize| layout.index(a, f, i, j);
                    let obj_logit = p[at(4)].as_f64();
                    let so = sigmoid(obj_logit);
                    let dso = so * sigmoid(-obj_logit);
                    let Some(t) = target.get(a, i, j) else {
                        total += cfg.lambda_noobj * so * so;
                        g[at(4)] = T::from_f64(2.0 * cfg.lambda_noobj * so * dso);
                        continue;
                    };
                    for (f, goal) in [(0, t.offset_x), (1, t.offset_y)] {
                        let x = p[at(f)].as_f64();
                        let s = sigmoid(x);
                        let r = s - goal;
                        total += cfg.lambda_coord * r * r;
                        g[at(f)] = T::from_f64(2.0 * cfg.lambda_coord * r * s * sigmoid(-x));
                    }
                    for (f, goal) in [(2, t.tw), (3, t.th)] {
                        let r = p[at(f)].as_f64() - goal;
                        total += cfg.lambda_coord * r * r;
                        g[at(f)] = T::from_f64(2.0 * cfg.lambda_coord * r);
                    }
                    total += cfg.lambda_obj * (so - 1.0) * (so - 1.0);
                    g[at(4)] = T::from_f64(2.0 * cfg.lambda_obj * (so - 1.0) * dso);

                    for (c, l) in logits.iter_mut().enumerate() {
                        *l = p[at(5 + c)].as_f64();
                    }
                    softmax(&logits, &mut probs);
                    // d/ds_c of Σ (s_c - y_c)², then back through the softmax
                    let mut dot = 0.0;
                    for (c, &s) in probs.iter().enumerate() {
                        let r = s - if c == t.class_id { 1.0 } else { 0.0 };
                        total += cfg.lambda_class * r * r;
                        dot += 2.0 * r * s;
                    }
                    for (c, &s) in probs.iter().enumerate() {
                        let r = s - if c == t.class_id { 1.0 } else { 0.0 };
                        g[at(5 + c)] = T::from_f64(cfg.lambda_class * s * (2.0 * r - dot));
                    }
                }
            }
        }
    }
    let inv = 1.0 / b as f64;
    let inv_t = T::from_f64(inv);
    grad.data_mut().iter_mut().for_each(|v| *v *= inv_t);
    Ok((total * inv, grad))
}
