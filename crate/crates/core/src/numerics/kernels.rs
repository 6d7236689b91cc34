//! Slice-level forward/backward math kernels.
//!
//! All buffers are row-major `f64` slices. Forward kernels overwrite their
//! output, backward kernels accumulate (`+=`) into their gradient outputs so
//! a parameter used in several places collects every contribution. Loops run
//! in a fixed ascending order; there is no reduction-order nondeterminism.

/// out = a @ b, with a: [m,k], b: [k,n], out: [m,n].
pub fn matmul_forward(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                out_row[j] += a_ik * b_row[j];
            }
        }
    }
}

/// da += dout @ b^T, with dout: [m,n], b: [k,n], da: [m,k].
pub fn matmul_backward_a(da: &mut [f64], dout: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(da.len(), m * k);
    for i in 0..m {
        let dout_row = &dout[i * n..(i + 1) * n];
        let da_row = &mut da[i * k..(i + 1) * k];
        for kk in 0..k {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += dout_row[j] * b_row[j];
            }
            da_row[kk] += acc;
        }
    }
}

/// db += a^T @ dout, with a: [m,k], dout: [m,n], db: [k,n].
pub fn matmul_backward_b(db: &mut [f64], a: &[f64], dout: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(db.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let dout_row = &dout[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            let db_row = &mut db[kk * n..(kk + 1) * n];
            for j in 0..n {
                db_row[j] += a_ik * dout_row[j];
            }
        }
    }
}

/// out[r, :] += bias for every row.
pub fn add_row_bias(out: &mut [f64], bias: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(out.len(), rows * cols);
    debug_assert_eq!(bias.len(), cols);
    for r in 0..rows {
        let row = &mut out[r * cols..(r + 1) * cols];
        for j in 0..cols {
            row[j] += bias[j];
        }
    }
}

/// dbias += column sums of dout.
pub fn bias_backward(dbias: &mut [f64], dout: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(dbias.len(), cols);
    for r in 0..rows {
        let row = &dout[r * cols..(r + 1) * cols];
        for j in 0..cols {
            dbias[j] += row[j];
        }
    }
}

/// In-place max-subtracted softmax of one row.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Backward of y = softmax(x) for one row: dx += y * (dy - dot(dy, y)).
pub fn softmax_row_backward(dx: &mut [f64], y: &[f64], dy: &[f64]) {
    let mut dot = 0.0;
    for j in 0..y.len() {
        dot += dy[j] * y[j];
    }
    for j in 0..y.len() {
        dx[j] += y[j] * (dy[j] - dot);
    }
}

/// Per-row standardization followed by an affine map:
/// out = (x - mean) * rstd * gain + bias, rstd = 1/sqrt(var + eps).
/// `mean` and `rstd` ([rows]) are cached for the backward pass.
pub fn layer_norm_forward(
    out: &mut [f64],
    mean: &mut [f64],
    rstd: &mut [f64],
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    rows: usize,
    cols: usize,
    eps: f64,
) {
    debug_assert_eq!(x.len(), rows * cols);
    debug_assert_eq!(gain.len(), cols);
    debug_assert_eq!(bias.len(), cols);
    for r in 0..rows {
        let x_row = &x[r * cols..(r + 1) * cols];
        let mut m = 0.0;
        for &v in x_row {
            m += v;
        }
        m /= cols as f64;
        let mut var = 0.0;
        for &v in x_row {
            let d = v - m;
            var += d * d;
        }
        var /= cols as f64;
        let rs = 1.0 / (var + eps).sqrt();
        mean[r] = m;
        rstd[r] = rs;
        let out_row = &mut out[r * cols..(r + 1) * cols];
        for j in 0..cols {
            out_row[j] = (x_row[j] - m) * rs * gain[j] + bias[j];
        }
    }
}

/// Backward of layer_norm_forward. dx, dgain, dbias all accumulate.
pub fn layer_norm_backward(
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    dout: &[f64],
    x: &[f64],
    gain: &[f64],
    mean: &[f64],
    rstd: &[f64],
    rows: usize,
    cols: usize,
) {
    for r in 0..rows {
        let x_row = &x[r * cols..(r + 1) * cols];
        let dout_row = &dout[r * cols..(r + 1) * cols];
        let (m, rs) = (mean[r], rstd[r]);

        // dnorm = dout * gain; two row means are needed for the x gradient.
        let mut dnorm_mean = 0.0;
        let mut dnorm_xhat_mean = 0.0;
        for j in 0..cols {
            let xhat = (x_row[j] - m) * rs;
            let dnorm = dout_row[j] * gain[j];
            dnorm_mean += dnorm;
            dnorm_xhat_mean += dnorm * xhat;
        }
        dnorm_mean /= cols as f64;
        dnorm_xhat_mean /= cols as f64;

        let dx_row = &mut dx[r * cols..(r + 1) * cols];
        for j in 0..cols {
            let xhat = (x_row[j] - m) * rs;
            let dnorm = dout_row[j] * gain[j];
            dgain[j] += dout_row[j] * xhat;
            dbias[j] += dout_row[j];
            dx_row[j] += rs * (dnorm - dnorm_mean - xhat * dnorm_xhat_mean);
        }
    }
}

const GELU_SCALE: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_CUBIC: f64 = 0.044_715;

/// Elementwise GELU, tanh approximation:
/// 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3))).
pub fn gelu_forward(out: &mut [f64], x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        let u = GELU_SCALE * (v + GELU_CUBIC * v * v * v);
        *o = 0.5 * v * (1.0 + u.tanh());
    }
}

/// dx += gelu'(x) * dout.
pub fn gelu_backward(dx: &mut [f64], x: &[f64], dout: &[f64]) {
    for i in 0..x.len() {
        let v = x[i];
        let u = GELU_SCALE * (v + GELU_CUBIC * v * v * v);
        let t = u.tanh();
        let sech2 = 1.0 - t * t;
        let du = GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * v * v);
        dx[i] += dout[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du);
    }
}

/// Mean negative log-likelihood over the batch. `probs` ([b, c]) receives the
/// row softmaxes for reuse in the backward pass.
pub fn cross_entropy_forward(
    probs: &mut [f64],
    logits: &[f64],
    labels: &[u32],
    b: usize,
    c: usize,
) -> f64 {
    debug_assert_eq!(logits.len(), b * c);
    debug_assert_eq!(labels.len(), b);
    probs.copy_from_slice(logits);
    let mut loss = 0.0;
    for r in 0..b {
        let row = &mut probs[r * c..(r + 1) * c];
        softmax_row(row);
        loss -= row[labels[r] as usize].ln();
    }
    loss / b as f64
}

/// dlogits += (softmax - onehot) / b.
pub fn cross_entropy_backward(
    dlogits: &mut [f64],
    probs: &[f64],
    labels: &[u32],
    b: usize,
    c: usize,
) {
    let scale = 1.0 / b as f64;
    for r in 0..b {
        let p_row = &probs[r * c..(r + 1) * c];
        let d_row = &mut dlogits[r * c..(r + 1) * c];
        for j in 0..c {
            let indicator = if j == labels[r] as usize { 1.0 } else { 0.0 };
            d_row[j] += (p_row[j] - indicator) * scale;
        }
    }
}
