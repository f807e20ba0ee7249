//! Dense helpers shared by the models.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Columns of `x` holding at least one nonzero.
pub fn active_columns(x: ArrayView2<f64>) -> Vec<usize> {
    (0..x.ncols())
        .filter(|&j| x.column(j).iter().any(|&v| v != 0.0))
        .collect()
}

/// `x * w + b`, skipping the rows of `w` whose input column is all zero.
/// Returns the product and the gathered nonzero input columns.
pub fn sparse_input_linear(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
) -> (Array2<f64>, Vec<usize>, Array2<f64>) {
    let cols = active_columns(x);
    let xs = x.select(Axis(1), &cols);
    let ws = w.select(Axis(0), &cols);
    let mut out = xs.dot(&ws);
    out += &b;
    (out, cols, xs)
}

/// Scatters the gradient of the gathered weight rows back to full shape.
pub fn scatter_rows(rows: usize, cols: &[usize], part: ArrayView2<f64>) -> Array2<f64> {
    let mut full = Array2::zeros((rows, part.ncols()));
    for (k, &r) in cols.iter().enumerate() {
        full.row_mut(r).assign(&part.row(k));
    }
    full
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Zeroes `grad` wherever `pre` is not positive.
pub fn relu_backward(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    grad.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn column_sums(x: &Array2<f64>) -> Array1<f64> {
    x.sum_axis(Axis(0))
}
