//! Classification losses with analytic gradients.
//!
//! Both losses are means over rows, and both return the gradient with
//! respect to the logits so callers can feed it straight into
//! `DenseNet::backward`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{FridaError, Result};
use crate::tensor::Tensor2;

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor2) -> Result<Tensor2> {
    if !logits.all_finite() {
        return Err(FridaError::NonFinite {
            context: "softmax logits",
        });
    }
    let mut out = logits.clone();
    let cols = out.cols();
    for r in 0..out.rows() {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let mut max = f64::NEG_INFINITY;
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Mean cross-entropy of `logits` against integer targets, with gradient.
///
/// Loss is `mean over rows of -log softmax(logits)[target]`; the gradient is
/// `(softmax - onehot) / rows`.
pub fn softmax_xent(logits: &Tensor2, targets: &[usize]) -> Result<(f64, Tensor2)> {
    if targets.len() != logits.rows() {
        return Err(FridaError::Contract(
            "softmax_xent: one target per row required".into(),
        ));
    }
    for &t in targets {
        if t >= logits.cols() {
            return Err(FridaError::Index {
                context: "softmax_xent target",
                index: t,
                bound: logits.cols(),
            });
        }
    }
    let probs = softmax(logits)?;
    let n = logits.rows() as f64;
    let cols = logits.cols();
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (r, &t) in targets.iter().enumerate() {
        // -ln p computed stably from the shifted logits
        let row = logits.row(r);
        let mut max = f64::NEG_INFINITY;
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0;
        for &v in row.iter() {
            sum += libm::exp(v - max);
        }
        loss += libm::log(sum) - (row[t] - max);
        let g = grad.get(r, t) - 1.0;
        grad.set(r, t, g);
    }
    grad.scale(1.0 / n);
    loss /= n;
    if !loss.is_finite() {
        return Err(FridaError::NonFinite {
            context: "softmax_xent loss",
        });
    }
    let _ = cols;
    Ok((loss, grad))
}

/// Mean binary cross-entropy of `n x 1` logits against 0/1 targets, with
/// gradient. Target 1 means "positive" (`sigmoid(logit)` should be 1).
pub fn bce_logits(logits: &Tensor2, targets: &[f64]) -> Result<(f64, Tensor2)> {
    if logits.cols() != 1 {
        return Err(FridaError::Shape {
            context: "bce_logits",
            expected: (logits.rows(), 1),
            got: (logits.rows(), logits.cols()),
        });
    }
    if targets.len() != logits.rows() {
        return Err(FridaError::Contract(
            "bce_logits: one target per row required".into(),
        ));
    }
    if !logits.all_finite() {
        return Err(FridaError::NonFinite {
            context: "bce_logits logits",
        });
    }
    let n = logits.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor2::zeros(logits.rows(), 1);
    for (r, &t) in targets.iter().enumerate() {
        let z = logits.get(r, 0);
        // -[t ln s + (1-t) ln(1-s)] = max(z,0) - t z + ln(1 + e^{-|z|})
        loss += if z > 0.0 { z } else { 0.0 } - t * z + libm::log1p(libm::exp(-libm::fabs(z)));
        let s = 1.0 / (1.0 + libm::exp(-z));
        grad.set(r, 0, (s - t) / n);
    }
    loss /= n;
    Ok((loss, grad))
}

/// Logistic sigmoid.
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-z))
}

/// Central finite-difference gradient of `f` at `x`, one entry at a time.
///
/// Test-support oracle: it never looks at how `f` computes its value, so it
/// stays independent of every analytic gradient it checks.
pub fn finite_difference<F>(x: &Tensor2, h: f64, mut f: F) -> Result<Tensor2>
where
    F: FnMut(&Tensor2) -> Result<f64>,
{
    let mut grad = Tensor2::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Relative error between two gradient tensors, `|a-b| / max(|a|, |b|, eps)`
/// measured in Frobenius norm.
pub fn grad_rel_error(a: &Tensor2, b: &Tensor2) -> f64 {
    let mut diff = 0.0;
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        diff += (x - y) * (x - y);
    }
    let na = a.sq_norm();
    let nb = b.sq_norm();
    let denom = libm::sqrt(na.max(nb)).max(1e-8);
    libm::sqrt(diff) / denom
}

/// Collect per-row argmax with ties broken toward the lower index.
pub fn argmax_rows(probs: &Tensor2) -> Vec<usize> {
    let mut out = vec![0usize; probs.rows()];
    for (r, slot) in out.iter_mut().enumerate() {
        let row = probs.row(r);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        *slot = best;
    }
    out
}
