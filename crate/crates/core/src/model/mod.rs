//! Run-time models: the graph convolutional network and a feed-forward
//! baseline, both with hand-written reverse-mode gradients.

pub mod baseline;
pub mod gcn;
pub mod ops;
pub mod params;

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};

pub use baseline::{BaselineArchitecture, BaselineParams, BaselineTrace};
pub use gcn::{ConvTrace, GcnTrace};
pub use params::{Architecture, ConvLayer, ModelParams};

use crate::dataset::ScheduledSample;
use crate::error::{Error, Result};
use crate::features::{NormStats, DEPENDENT_WIDTH, INVARIANT_WIDTH};
use crate::graph::{normalize_adjacency, BlockAdjacency, NormalizedAdjacency};

/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;
/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-5;

/// A sample with normalized features and its adjacency, ready for batching.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub pipeline_id: u64,
    pub schedule_id: u64,
    pub adjacency: NormalizedAdjacency,
    pub invariant: Array2<f64>,
    pub dependent: Array2<f64>,
    pub mean_runtime: f64,
    pub std_runtime: f64,
}

impl PreparedSample {
    pub fn new(sample: &ScheduledSample, norm: &NormStats) -> Result<Self> {
        sample.validate()?;
        Ok(Self {
            pipeline_id: sample.pipeline_id,
            schedule_id: sample.schedule_id,
            adjacency: normalize_adjacency(&sample.graph)?,
            invariant: norm.normalize_invariant(sample.invariant.view())?,
            dependent: norm.normalize_dependent(sample.dependent.view())?,
            mean_runtime: sample.mean_runtime(),
            std_runtime: sample.std_runtime(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }
}

/// Several graphs stacked node-wise with a block-diagonal adjacency.
#[derive(Debug, Clone)]
pub struct Batch {
    pub adjacency: BlockAdjacency,
    pub invariant: Array2<f64>,
    pub dependent: Array2<f64>,
}

impl Batch {
    pub fn new(adjacency: BlockAdjacency, invariant: Array2<f64>, dependent: Array2<f64>) -> Result<Self> {
        let n = adjacency.num_nodes();
        if invariant.nrows() != n {
            return Err(Error::dim("invariant feature rows", n, invariant.nrows()));
        }
        if dependent.nrows() != n {
            return Err(Error::dim("dependent feature rows", n, dependent.nrows()));
        }
        Ok(Self {
            adjacency,
            invariant,
            dependent,
        })
    }

    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a PreparedSample>) -> Result<Self> {
        let samples: Vec<&PreparedSample> = samples.into_iter().collect();
        let adjacency = BlockAdjacency::new(samples.iter().map(|s| s.adjacency.clone()).collect());
        let stack = |f: fn(&PreparedSample) -> &Array2<f64>, width: usize| -> Result<Array2<f64>> {
            if samples.is_empty() {
                return Ok(Array2::zeros((0, width)));
            }
            let views: Vec<_> = samples.iter().map(|s| f(s).view()).collect();
            concatenate(Axis(0), &views).map_err(|e| Error::Invalid(format!("feature stacking: {e}")))
        };
        let inv_width = samples.first().map_or(INVARIANT_WIDTH, |s| s.invariant.ncols());
        let dep_width = samples.first().map_or(DEPENDENT_WIDTH, |s| s.dependent.ncols());
        let invariant = stack(|s| &s.invariant, inv_width)?;
        let dependent = stack(|s| &s.dependent, dep_width)?;
        Self::new(adjacency, invariant, dependent)
    }

    pub fn num_graphs(&self) -> usize {
        self.adjacency.num_graphs()
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    /// Per-graph sums of the rows of `x`.
    pub fn pool(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_graphs(), x.ncols()));
        for g in 0..self.num_graphs() {
            let r = self.adjacency.range(g);
            out.row_mut(g).assign(&x.slice(ndarray::s![r, ..]).sum_axis(Axis(0)));
        }
        out
    }

    /// Copies row `g` of `grad` to every node of graph `g`.
    pub fn unpool(&self, grad: ArrayView1<f64>, g: usize, out: &mut Array2<f64>) {
        let r = self.adjacency.range(g);
        for mut row in out.slice_mut(ndarray::s![r, ..]).rows_mut() {
            row += &grad;
        }
    }
}

/// Common interface of the trainable models.
pub trait Regressor: Clone + Send + Sync {
    type Trace: Send;

    /// Training-mode forward pass with cached intermediates.
    fn forward_train(&self, batch: &Batch) -> Result<(Array1<f64>, Self::Trace)>;

    /// Inference-mode forward pass; stores nothing.
    fn predict(&self, batch: &Batch) -> Result<Array1<f64>>;

    /// Gradients of `sum(dy * yhat)` with respect to every learnable tensor,
    /// in the same layout as the model.
    fn backward(&self, trace: &Self::Trace, dy: ArrayView1<f64>) -> Result<Self>;

    /// Folds batch statistics from a training forward into running state.
    fn update_running_stats(&mut self, trace: &Self::Trace);

    fn learnables(&self) -> Vec<(String, &[f64], bool)>;

    fn learnables_mut(&mut self) -> Vec<(&mut [f64], bool)>;
}

impl Regressor for ModelParams {
    type Trace = GcnTrace;

    fn forward_train(&self, batch: &Batch) -> Result<(Array1<f64>, GcnTrace)> {
        gcn::forward_train(self, batch)
    }

    fn predict(&self, batch: &Batch) -> Result<Array1<f64>> {
        gcn::predict(self, batch)
    }

    fn backward(&self, trace: &GcnTrace, dy: ArrayView1<f64>) -> Result<Self> {
        gcn::backward(self, trace, dy)
    }

    fn update_running_stats(&mut self, trace: &GcnTrace) {
        gcn::update_running_stats(self, trace)
    }

    fn learnables(&self) -> Vec<(String, &[f64], bool)> {
        ModelParams::learnables(self)
    }

    fn learnables_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        ModelParams::learnables_mut(self)
    }
}

impl Regressor for BaselineParams {
    type Trace = BaselineTrace;

    fn forward_train(&self, batch: &Batch) -> Result<(Array1<f64>, BaselineTrace)> {
        baseline::forward_train(self, batch)
    }

    fn predict(&self, batch: &Batch) -> Result<Array1<f64>> {
        baseline::predict(self, batch)
    }

    fn backward(&self, trace: &BaselineTrace, dy: ArrayView1<f64>) -> Result<Self> {
        baseline::backward(self, trace, dy)
    }

    fn update_running_stats(&mut self, _trace: &BaselineTrace) {}

    fn learnables(&self) -> Vec<(String, &[f64], bool)> {
        BaselineParams::learnables(self)
    }

    fn learnables_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        BaselineParams::learnables_mut(self)
    }
}
