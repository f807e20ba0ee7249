//! Forward and reverse passes of the graph convolutional network.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::ops::{relu, relu_backward, scatter_rows, sigmoid, softplus, sparse_input_linear};
use super::params::{ConvLayer, ModelParams};
use super::{Batch, BN_EPS, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::graph::BlockAdjacency;

/// Cached state of one convolution block.
#[derive(Debug, Clone)]
pub struct ConvTrace {
    /// Batch-norm output before the ReLU.
    pub pre: Array2<f64>,
    pub xhat: Array2<f64>,
    pub mean: Array1<f64>,
    /// Biased batch variance used for normalization.
    pub var: Array1<f64>,
    /// Unbiased batch variance fed to the running estimate.
    pub var_unbiased: Array1<f64>,
}

/// Everything the backward pass needs from a training forward.
#[derive(Debug, Clone)]
pub struct GcnTrace {
    pub adjacency: BlockAdjacency,
    pub inv_cols: Vec<usize>,
    pub inv_input: Array2<f64>,
    pub inv_pre: Array2<f64>,
    pub dep_cols: Vec<usize>,
    pub dep_input: Array2<f64>,
    pub dep_pre: Array2<f64>,
    /// E0, E1, ..., EK.
    pub embeddings: Vec<Array2<f64>>,
    pub layers: Vec<ConvTrace>,
    pub pooled: Array2<f64>,
    pub logits: Array1<f64>,
    pub output: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn check_widths(params: &ModelParams, inv: ArrayView2<f64>, dep: ArrayView2<f64>) -> Result<()> {
    let a = &params.arch;
    if inv.ncols() != a.invariant_width {
        return Err(Error::dim("invariant feature width", a.invariant_width, inv.ncols()));
    }
    if dep.ncols() != a.dependent_width {
        return Err(Error::dim("dependent feature width", a.dependent_width, dep.ncols()));
    }
    if inv.nrows() != dep.nrows() {
        return Err(Error::dim("dependent feature rows", inv.nrows(), dep.nrows()));
    }
    Ok(())
}

struct Embedded {
    e0: Array2<f64>,
    inv_cols: Vec<usize>,
    inv_input: Array2<f64>,
    inv_pre: Array2<f64>,
    dep_cols: Vec<usize>,
    dep_input: Array2<f64>,
    dep_pre: Array2<f64>,
}

fn embed(params: &ModelParams, inv: ArrayView2<f64>, dep: ArrayView2<f64>) -> Result<Embedded> {
    check_widths(params, inv, dep)?;
    let (inv_pre, inv_cols, inv_input) = sparse_input_linear(inv, params.w_inv.view(), params.b_inv.view());
    let (dep_pre, dep_cols, dep_input) = sparse_input_linear(dep, params.w_dep.view(), params.b_dep.view());
    let ei = params.arch.invariant_embed;
    let mut e0 = Array2::zeros((inv.nrows(), params.arch.embed()));
    e0.slice_mut(s![.., ..ei]).assign(&relu(&inv_pre));
    e0.slice_mut(s![.., ei..]).assign(&relu(&dep_pre));
    Ok(Embedded {
        e0,
        inv_cols,
        inv_input,
        inv_pre,
        dep_cols,
        dep_input,
        dep_pre,
    })
}

/// `concat(ReLU(inv W_inv + b_inv), ReLU(dep W_dep + b_dep))` for every node.
pub fn initial_embedding(params: &ModelParams, inv: ArrayView2<f64>, dep: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(embed(params, inv, dep)?.e0)
}

/// `ReLU(BN(A' (E W + b)))`. Training mode normalizes with batch statistics
/// and returns them in the trace; evaluation mode uses the running ones.
pub fn conv_forward(
    e: ArrayView2<f64>,
    adjacency: &BlockAdjacency,
    layer: &ConvLayer,
    mode: Mode,
) -> Result<(Array2<f64>, Option<ConvTrace>)> {
    if e.ncols() != layer.weight.nrows() {
        return Err(Error::dim("conv input width", layer.weight.nrows(), e.ncols()));
    }
    if e.nrows() != adjacency.num_nodes() {
        return Err(Error::dim("conv input rows", adjacency.num_nodes(), e.nrows()));
    }
    let mut z = e.dot(&layer.weight);
    z += &layer.bias;
    let m = adjacency.aggregate(z.view());
    let n = m.nrows();
    let (mean, var, var_unbiased) = match mode {
        Mode::Train if n > 0 => {
            let mean = m.mean_axis(Axis(0)).expect("non-empty");
            let var = m.var_axis(Axis(0), 0.0);
            let var_unbiased = if n > 1 { m.var_axis(Axis(0), 1.0) } else { var.clone() };
            (mean, var, var_unbiased)
        }
        _ => (
            layer.running_mean.clone(),
            layer.running_var.clone(),
            layer.running_var.clone(),
        ),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let mut xhat = m;
    xhat -= &mean;
    xhat *= &inv_std;
    let mut pre = &xhat * &layer.bn_gamma;
    pre += &layer.bn_beta;
    let out = relu(&pre);
    let trace = (mode == Mode::Train).then(|| ConvTrace {
        pre,
        xhat,
        mean,
        var,
        var_unbiased,
    });
    Ok((out, trace))
}

/// Sum-pools every embedding depth per graph and concatenates the blocks.
pub fn pool(batch_adj: &BlockAdjacency, embeddings: &[Array2<f64>]) -> Array2<f64> {
    let width: usize = embeddings.iter().map(|e| e.ncols()).sum();
    let mut f = Array2::zeros((batch_adj.num_graphs(), width));
    let mut col = 0;
    for e in embeddings {
        let w = e.ncols();
        for g in 0..batch_adj.num_graphs() {
            let r = batch_adj.range(g);
            f.slice_mut(s![g, col..col + w])
                .assign(&e.slice(s![r, ..]).sum_axis(Axis(0)));
        }
        col += w;
    }
    f
}

/// `softplus(F W_out + b_out)` for a matrix of pooled vectors.
pub fn readout(params: &ModelParams, pooled: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    if pooled.ncols() != params.w_out.nrows() {
        return Err(Error::dim("readout width", params.w_out.nrows(), pooled.ncols()));
    }
    let logits = pooled.dot(&params.w_out.column(0)) + params.b_out[0];
    let output = logits.mapv(softplus);
    Ok((logits, output))
}

fn run(params: &ModelParams, batch: &Batch, mode: Mode) -> Result<(Array1<f64>, Option<GcnTrace>)> {
    let emb = embed(params, batch.invariant.view(), batch.dependent.view())?;
    if batch.num_nodes() != batch.invariant.nrows() {
        return Err(Error::dim("batch nodes", batch.num_nodes(), batch.invariant.nrows()));
    }
    let mut embeddings = vec![emb.e0];
    let mut layers = Vec::with_capacity(params.conv.len());
    for layer in &params.conv {
        let (next, trace) = conv_forward(embeddings.last().expect("e0").view(), &batch.adjacency, layer, mode)?;
        embeddings.push(next);
        if let Some(t) = trace {
            layers.push(t);
        }
    }
    let pooled = pool(&batch.adjacency, &embeddings);
    let (logits, output) = readout(params, pooled.view())?;
    let trace = (mode == Mode::Train).then(|| GcnTrace {
        adjacency: batch.adjacency.clone(),
        inv_cols: emb.inv_cols,
        inv_input: emb.inv_input,
        inv_pre: emb.inv_pre,
        dep_cols: emb.dep_cols,
        dep_input: emb.dep_input,
        dep_pre: emb.dep_pre,
        embeddings,
        layers,
        pooled,
        logits,
        output: output.clone(),
    });
    Ok((output, trace))
}

pub fn forward_train(params: &ModelParams, batch: &Batch) -> Result<(Array1<f64>, GcnTrace)> {
    let (y, trace) = run(params, batch, Mode::Train)?;
    Ok((y, trace.expect("train mode records a trace")))
}

pub fn predict(params: &ModelParams, batch: &Batch) -> Result<Array1<f64>> {
    Ok(run(params, batch, Mode::Eval)?.0)
}

pub fn update_running_stats(params: &mut ModelParams, trace: &GcnTrace) {
    for (layer, t) in params.conv.iter_mut().zip(&trace.layers) {
        layer.running_mean *= 1.0 - BN_MOMENTUM;
        layer.running_mean.scaled_add(BN_MOMENTUM, &t.mean);
        layer.running_var *= 1.0 - BN_MOMENTUM;
        layer.running_var.scaled_add(BN_MOMENTUM, &t.var_unbiased);
    }
}

/// Reverse pass: gradients of `sum(dy * yhat)`.
pub fn backward(params: &ModelParams, trace: &GcnTrace, dy: ArrayView1<f64>) -> Result<ModelParams> {
    let g_count = trace.adjacency.num_graphs();
    if dy.len() != g_count {
        return Err(Error::dim("output gradient length", g_count, dy.len()));
    }
    if trace.layers.len() != params.conv.len() {
        return Err(Error::dim("traced conv layers", params.conv.len(), trace.layers.len()));
    }
    let mut grads = params.zeros_like();
    let dz: Array1<f64> = dy.iter().zip(&trace.logits).map(|(&d, &z)| d * sigmoid(z)).collect();
    grads.w_out.column_mut(0).assign(&trace.pooled.t().dot(&dz));
    grads.b_out[0] = dz.sum();

    let e = params.arch.embed();
    let n = trace.adjacency.num_nodes();
    let w_out = params.w_out.column(0);
    // Pooling gradient for every depth.
    let mut d_emb: Vec<Array2<f64>> = (0..trace.embeddings.len())
        .map(|k| {
            let mut d = Array2::zeros((n, e));
            let block = w_out.slice(s![k * e..(k + 1) * e]);
            for g in 0..g_count {
                let r = trace.adjacency.range(g);
                let row = &block * dz[g];
                for mut node in d.slice_mut(s![r, ..]).rows_mut() {
                    node += &row;
                }
            }
            d
        })
        .collect();

    for k in (0..params.conv.len()).rev() {
        let layer = &params.conv[k];
        let t = &trace.layers[k];
        let mut dpre = d_emb[k + 1].clone();
        relu_backward(&mut dpre, &t.pre);
        grads.conv[k].bn_beta.assign(&dpre.sum_axis(Axis(0)));
        grads.conv[k].bn_gamma.assign(&(&dpre * &t.xhat).sum_axis(Axis(0)));
        let dxhat = &dpre * &layer.bn_gamma;
        let dm = if n > 0 {
            let inv_std = t.var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let mean_dxhat = dxhat.mean_axis(Axis(0)).expect("non-empty");
            let mean_dxhat_xhat = (&dxhat * &t.xhat).mean_axis(Axis(0)).expect("non-empty");
            let mut dm = dxhat - &mean_dxhat;
            dm -= &(&t.xhat * &mean_dxhat_xhat);
            dm *= &inv_std;
            dm
        } else {
            dxhat
        };
        let dzk = trace.adjacency.aggregate_transposed(dm.view());
        grads.conv[k].weight.assign(&trace.embeddings[k].t().dot(&dzk));
        grads.conv[k].bias.assign(&dzk.sum_axis(Axis(0)));
        let back = dzk.dot(&layer.weight.t());
        d_emb[k] += &back;
    }

    let ei = params.arch.invariant_embed;
    let d0 = &d_emb[0];
    let mut d_inv = d0.slice(s![.., ..ei]).to_owned();
    relu_backward(&mut d_inv, &trace.inv_pre);
    let mut d_dep = d0.slice(s![.., ei..]).to_owned();
    relu_backward(&mut d_dep, &trace.dep_pre);
    grads.w_inv.assign(&scatter_rows(
        params.arch.invariant_width,
        &trace.inv_cols,
        trace.inv_input.t().dot(&d_inv).view(),
    ));
    grads.b_inv.assign(&d_inv.sum_axis(Axis(0)));
    grads.w_dep.assign(&scatter_rows(
        params.arch.dependent_width,
        &trace.dep_cols,
        trace.dep_input.t().dot(&d_dep).view(),
    ));
    grads.b_dep.assign(&d_dep.sum_axis(Axis(0)));
    Ok(grads)
}
