//! Tensor-level operations with explicit backward companions.
//!
//! Forward functions validate shapes and return fresh tensors; each
//! `*_backward` returns the input gradients for a given upstream gradient.
//! The backward formulas here are what the model's fused training path uses,
//! so the finite-difference checks against these functions cover both.

use super::kernels;
use super::{NumericsError, Tensor};

/// Standard matrix product of 2-D tensors `[m,k] @ [k,n] -> [m,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, ka) = a.dims2("matmul")?;
    let (kb, n) = b.dims2("matmul")?;
    if ka != kb {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    kernels::matmul_forward(out.data_mut(), a.data(), b.data(), m, ka, n);
    out.debug_check_finite("matmul output");
    Ok(out)
}

/// Gradients of `c = a @ b`: `da = dc @ b^T`, `db = a^T @ dc`.
pub fn matmul_backward(
    a: &Tensor,
    b: &Tensor,
    dout: &Tensor,
) -> Result<(Tensor, Tensor), NumericsError> {
    let (m, k) = a.dims2("matmul_backward")?;
    let (_, n) = b.dims2("matmul_backward")?;
    if dout.shape() != [m, n] {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul_backward",
            left: dout.shape().to_vec(),
            right: vec![m, n],
        });
    }
    let mut da = Tensor::zeros(&[m, k]);
    let mut db = Tensor::zeros(&[k, n]);
    kernels::matmul_backward_a(da.data_mut(), dout.data(), b.data(), m, k, n);
    kernels::matmul_backward_b(db.data_mut(), a.data(), dout.data(), m, k, n);
    Ok((da, db))
}

fn lane_geometry(shape: &[usize], axis: usize) -> Result<(usize, usize, usize), NumericsError> {
    if axis >= shape.len() {
        return Err(NumericsError::BadAxis {
            axis,
            shape: shape.to_vec(),
        });
    }
    let outer: usize = shape[..axis].iter().product();
    let lane = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, lane, inner))
}

/// Max-subtracted softmax along `axis`. Lanes sum to 1.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor, NumericsError> {
    let (outer, lane, inner) = lane_geometry(x.shape(), axis)?;
    let mut out = x.clone();
    let mut buf = vec![0.0; lane];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * lane * inner + i;
            for l in 0..lane {
                buf[l] = x.data()[base + l * inner];
            }
            kernels::softmax_row(&mut buf);
            for l in 0..lane {
                out.data_mut()[base + l * inner] = buf[l];
            }
        }
    }
    Ok(out)
}

/// Gradient of `y = softmax(x, axis)` given the forward output `y`.
pub fn softmax_backward(y: &Tensor, dout: &Tensor, axis: usize) -> Result<Tensor, NumericsError> {
    if y.shape() != dout.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "softmax_backward",
            left: y.shape().to_vec(),
            right: dout.shape().to_vec(),
        });
    }
    let (outer, lane, inner) = lane_geometry(y.shape(), axis)?;
    let mut dx = Tensor::zeros(y.shape());
    let mut y_buf = vec![0.0; lane];
    let mut dy_buf = vec![0.0; lane];
    let mut dx_buf = vec![0.0; lane];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * lane * inner + i;
            for l in 0..lane {
                y_buf[l] = y.data()[base + l * inner];
                dy_buf[l] = dout.data()[base + l * inner];
                dx_buf[l] = 0.0;
            }
            kernels::softmax_row_backward(&mut dx_buf, &y_buf, &dy_buf);
            for l in 0..lane {
                dx.data_mut()[base + l * inner] = dx_buf[l];
            }
        }
    }
    Ok(dx)
}

fn norm_geometry(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize), NumericsError> {
    let cols = *x.shape().last().ok_or(NumericsError::BadShape {
        shape: vec![],
        len: 0,
    })?;
    if gain.numel() != cols || bias.numel() != cols {
        return Err(NumericsError::ShapeMismatch {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    Ok((x.numel() / cols, cols))
}

/// Per-row standardization over the last axis, then `* gain + bias`.
pub fn layer_norm(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<Tensor, NumericsError> {
    let (rows, cols) = norm_geometry(x, gain, bias)?;
    let mut out = Tensor::zeros(x.shape());
    let mut mean = vec![0.0; rows];
    let mut rstd = vec![0.0; rows];
    kernels::layer_norm_forward(
        out.data_mut(),
        &mut mean,
        &mut rstd,
        x.data(),
        gain.data(),
        bias.data(),
        rows,
        cols,
        eps,
    );
    Ok(out)
}

/// Gradients of layer_norm with respect to (x, gain, bias).
pub fn layer_norm_backward(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
    dout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NumericsError> {
    let (rows, cols) = norm_geometry(x, gain, bias)?;
    // Recompute the row statistics; cheaper than caching for the op-level API.
    let mut out = vec![0.0; x.numel()];
    let mut mean = vec![0.0; rows];
    let mut rstd = vec![0.0; rows];
    kernels::layer_norm_forward(
        &mut out,
        &mut mean,
        &mut rstd,
        x.data(),
        gain.data(),
        bias.data(),
        rows,
        cols,
        eps,
    );
    let mut dx = Tensor::zeros(x.shape());
    let mut dgain = Tensor::zeros(gain.shape());
    let mut dbias = Tensor::zeros(bias.shape());
    kernels::layer_norm_backward(
        dx.data_mut(),
        dgain.data_mut(),
        dbias.data_mut(),
        dout.data(),
        x.data(),
        gain.data(),
        &mean,
        &rstd,
        rows,
        cols,
    );
    Ok((dx, dgain, dbias))
}

/// Elementwise GELU (tanh approximation).
pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    kernels::gelu_forward(out.data_mut(), x.data());
    out
}

/// Gradient of GELU with respect to its input.
pub fn gelu_backward(x: &Tensor, dout: &Tensor) -> Result<Tensor, NumericsError> {
    if x.shape() != dout.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "gelu_backward",
            left: x.shape().to_vec(),
            right: dout.shape().to_vec(),
        });
    }
    let mut dx = Tensor::zeros(x.shape());
    kernels::gelu_backward(dx.data_mut(), x.data(), dout.data());
    Ok(dx)
}

fn check_labels(labels: &[u32], b: usize, c: usize) -> Result<(), NumericsError> {
    if labels.len() != b {
        return Err(NumericsError::ShapeMismatch {
            op: "cross_entropy",
            left: vec![labels.len()],
            right: vec![b],
        });
    }
    for &l in labels {
        if l as usize >= c {
            return Err(NumericsError::LabelOutOfRange {
                label: l,
                num_classes: c,
            });
        }
    }
    Ok(())
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<f64, NumericsError> {
    let (b, c) = logits.dims2("cross_entropy")?;
    check_labels(labels, b, c)?;
    let mut probs = vec![0.0; b * c];
    Ok(kernels::cross_entropy_forward(
        &mut probs,
        logits.data(),
        labels,
        b,
        c,
    ))
}

/// Loss plus its gradient with respect to the logits: `(softmax - onehot) / b`.
pub fn cross_entropy_backward(
    logits: &Tensor,
    labels: &[u32],
) -> Result<(f64, Tensor), NumericsError> {
    let (b, c) = logits.dims2("cross_entropy")?;
    check_labels(labels, b, c)?;
    let mut probs = vec![0.0; b * c];
    let loss = kernels::cross_entropy_forward(&mut probs, logits.data(), labels, b, c);
    let mut dlogits = Tensor::zeros(&[b, c]);
    kernels::cross_entropy_backward(dlogits.data_mut(), &probs, labels, b, c);
    Ok((loss, dlogits))
}
