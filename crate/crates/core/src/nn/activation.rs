//! Element-wise non-linearities and the row-wise softmax.

use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Softmax applied independently to each row.
    SoftmaxRows,
}

pub fn activation(x: &Matrix, kind: Activation) -> Matrix {
    match kind {
        Activation::Relu => relu(x),
        Activation::Sigmoid => sigmoid(x),
        Activation::SoftmaxRows => softmax_rows(x),
    }
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient through ReLU given the pre-activation input.
pub fn relu_backward(grad_out: &Matrix, pre_activation: &Matrix) -> Matrix {
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(pre_activation.data()) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Gradient through sigmoid given the forward *output*.
pub fn sigmoid_backward(grad_out: &Matrix, output: &Matrix) -> Matrix {
    let mut g = grad_out.clone();
    for (gv, &y) in g.data_mut().iter_mut().zip(output.data()) {
        *gv *= y * (1.0 - y);
    }
    g
}

/// Gradient through the row-wise softmax given the forward *output*:
/// `dx_j = p_j (g_j - sum_k g_k p_k)` per row.
pub fn softmax_backward(grad_out: &Matrix, output: &Matrix) -> Matrix {
    let mut gx = output.clone();
    for r in 0..output.rows() {
        let g = grad_out.row(r);
        let p = output.row(r);
        let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
        let row = gx.row_mut(r);
        for ((out, &gj), &pj) in row.iter_mut().zip(g).zip(p) {
            *out = pj * (gj - dot);
        }
    }
    gx
}

/// Row-wise softmax stabilized by max subtraction; each row sums to 1.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    for r in 0..y.rows() {
        let row = y.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}
