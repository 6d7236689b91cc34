//! Row-major dense tensor with an optional gradient buffer.

use super::NumericsError;

/// Dense array of 64-bit reals. `grad`, when allocated, always has the same
/// length as `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(NumericsError::BadShape {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    /// Identity matrix of side `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Mark the tensor as differentiable and allocate a zeroed grad buffer.
    pub fn enable_grad(&mut self) -> &mut Self {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<(), NumericsError> {
        if grad.len() != self.data.len() {
            return Err(NumericsError::BadShape {
                shape: self.shape.clone(),
                len: grad.len(),
            });
        }
        self.grad = Some(grad);
        self.requires_grad = true;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// NaN/Inf is a checked failure in debug builds; a no-op in release.
    pub fn debug_check_finite(&self, what: &str) {
        if cfg!(debug_assertions) {
            for (i, v) in self.data.iter().enumerate() {
                assert!(v.is_finite(), "non-finite value at {what}[{i}]: {v}");
            }
        }
    }

    /// Row/column count of a 2-D tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize), NumericsError> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(NumericsError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: vec![],
            }),
        }
    }
}
