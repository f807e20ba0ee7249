//! Feed-forward baseline over sum-pooled stage features.

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::ops::{relu, relu_backward, scatter_rows, sigmoid, softplus, sparse_input_linear};
use super::params::{uniform_matrix, uniform_vector};
use super::Batch;
use crate::error::{Error, Result};
use crate::features::{DEPENDENT_WIDTH, INVARIANT_WIDTH};
use crate::synth::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineArchitecture {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for BaselineArchitecture {
    fn default() -> Self {
        Self {
            input: INVARIANT_WIDTH + DEPENDENT_WIDTH,
            hidden1: 256,
            hidden2: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub arch: BaselineArchitecture,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct BaselineTrace {
    pub cols: Vec<usize>,
    pub input: Array2<f64>,
    pub pre1: Array2<f64>,
    pub h1: Array2<f64>,
    pub pre2: Array2<f64>,
    pub h2: Array2<f64>,
    pub logits: Array1<f64>,
}

impl BaselineParams {
    pub fn init(arch: BaselineArchitecture, seed: u64) -> Self {
        let mut rng = rng_for(seed, 5);
        Self {
            arch,
            w1: uniform_matrix(&mut rng, arch.input, arch.hidden1),
            b1: uniform_vector(&mut rng, arch.input, arch.hidden1),
            w2: uniform_matrix(&mut rng, arch.hidden1, arch.hidden2),
            b2: uniform_vector(&mut rng, arch.hidden1, arch.hidden2),
            w3: uniform_matrix(&mut rng, arch.hidden2, 1),
            b3: uniform_vector(&mut rng, arch.hidden2, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch,
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
            w3: Array2::zeros(self.w3.raw_dim()),
            b3: Array1::zeros(self.b3.raw_dim()),
        }
    }

    pub fn learnables(&self) -> Vec<(String, &[f64], bool)> {
        vec![
            ("w1".into(), self.w1.as_slice().expect("standard layout"), true),
            ("b1".into(), self.b1.as_slice().expect("contiguous"), false),
            ("w2".into(), self.w2.as_slice().expect("standard layout"), true),
            ("b2".into(), self.b2.as_slice().expect("contiguous"), false),
            ("w3".into(), self.w3.as_slice().expect("standard layout"), true),
            ("b3".into(), self.b3.as_slice().expect("contiguous"), false),
        ]
    }

    pub fn learnables_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        vec![
            (self.w1.as_slice_mut().expect("standard layout"), true),
            (self.b1.as_slice_mut().expect("contiguous"), false),
            (self.w2.as_slice_mut().expect("standard layout"), true),
            (self.b2.as_slice_mut().expect("contiguous"), false),
            (self.w3.as_slice_mut().expect("standard layout"), true),
            (self.b3.as_slice_mut().expect("contiguous"), false),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        let shapes = [
            ("w1", self.w1.dim(), (a.input, a.hidden1)),
            ("w2", self.w2.dim(), (a.hidden1, a.hidden2)),
            ("w3", self.w3.dim(), (a.hidden2, 1)),
            ("b1", (self.b1.len(), 1), (a.hidden1, 1)),
            ("b2", (self.b2.len(), 1), (a.hidden2, 1)),
            ("b3", (self.b3.len(), 1), (1, 1)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Incompatible {
                    what: "baseline parameter shape",
                    left: format!("{name} {got:?}"),
                    right: format!("{want:?}"),
                });
            }
        }
        if self
            .learnables()
            .iter()
            .any(|(_, d, _)| d.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Invalid("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Per-graph sum over stages of `concat(inv, dep)`.
pub fn pooled_features(batch: &Batch) -> Result<Array2<f64>> {
    let rows = concatenate(Axis(1), &[batch.invariant.view(), batch.dependent.view()])
        .map_err(|e| Error::Invalid(format!("feature stacking: {e}")))?;
    Ok(batch.pool(&rows))
}

/// MLP forward on pooled feature vectors.
pub fn forward_pooled(params: &BaselineParams, x: &Array2<f64>) -> Result<(Array1<f64>, BaselineTrace)> {
    if x.ncols() != params.arch.input {
        return Err(Error::dim("baseline input width", params.arch.input, x.ncols()));
    }
    let (pre1, cols, input) = sparse_input_linear(x.view(), params.w1.view(), params.b1.view());
    let h1 = relu(&pre1);
    let mut pre2 = h1.dot(&params.w2);
    pre2 += &params.b2;
    let h2 = relu(&pre2);
    let logits = h2.dot(&params.w3.column(0)) + params.b3[0];
    let y = logits.mapv(softplus);
    Ok((
        y,
        BaselineTrace {
            cols,
            input,
            pre1,
            h1,
            pre2,
            h2,
            logits,
        },
    ))
}

pub fn forward_train(params: &BaselineParams, batch: &Batch) -> Result<(Array1<f64>, BaselineTrace)> {
    forward_pooled(params, &pooled_features(batch)?)
}

pub fn predict(params: &BaselineParams, batch: &Batch) -> Result<Array1<f64>> {
    Ok(forward_train(params, batch)?.0)
}

pub fn backward(params: &BaselineParams, trace: &BaselineTrace, dy: ArrayView1<f64>) -> Result<BaselineParams> {
    if dy.len() != trace.logits.len() {
        return Err(Error::dim("output gradient length", trace.logits.len(), dy.len()));
    }
    let mut g = params.zeros_like();
    let dz: Array1<f64> = dy.iter().zip(&trace.logits).map(|(&d, &z)| d * sigmoid(z)).collect();
    g.w3.column_mut(0).assign(&trace.h2.t().dot(&dz));
    g.b3[0] = dz.sum();
    let mut d2 = dz.view().insert_axis(Axis(1)).dot(&params.w3.t());
    relu_backward(&mut d2, &trace.pre2);
    g.w2.assign(&trace.h1.t().dot(&d2));
    g.b2.assign(&d2.sum_axis(Axis(0)));
    let mut d1 = d2.dot(&params.w2.t());
    relu_backward(&mut d1, &trace.pre1);
    g.w1.assign(&scatter_rows(
        params.arch.input,
        &trace.cols,
        trace.input.t().dot(&d1).view(),
    ));
    g.b1.assign(&d1.sum_axis(Axis(0)));
    Ok(g)
}
