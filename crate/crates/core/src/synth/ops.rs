use serde::{Deserialize, Serialize};

/// How many producers a stage consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arity {
    Source,
    Unary,
    Binary,
}

impl Arity {
    pub fn producers(self) -> usize {
        match self {
            Arity::Source => 0,
            Arity::Unary => 1,
            Arity::Binary => 2,
        }
    }
}

/// Stage operations. The declaration order is the op-histogram slot order in
/// the invariant feature layout, so new variants go at the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Input,
    Conv,
    Gemm,
    MatMul,
    Relu,
    Sigmoid,
    Softmax,
    MaxPool,
    AvgPool,
    Pad,
    BatchNorm,
    Add,
    Mul,
    Concat,
}

impl OpKind {
    pub const ALL: [OpKind; 14] = [
        OpKind::Input,
        OpKind::Conv,
        OpKind::Gemm,
        OpKind::MatMul,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Softmax,
        OpKind::MaxPool,
        OpKind::AvgPool,
        OpKind::Pad,
        OpKind::BatchNorm,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Concat,
    ];

    pub const UNARY: [OpKind; 6] = [
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Softmax,
        OpKind::MaxPool,
        OpKind::AvgPool,
        OpKind::Pad,
    ];

    pub const BINARY: [OpKind; 7] = [
        OpKind::Conv,
        OpKind::Gemm,
        OpKind::MatMul,
        OpKind::BatchNorm,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Concat,
    ];

    pub const FAVORED: [OpKind; 2] = [OpKind::Conv, OpKind::Relu];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn arity(self) -> Arity {
        match self {
            OpKind::Input => Arity::Source,
            OpKind::Relu | OpKind::Sigmoid | OpKind::Softmax | OpKind::MaxPool | OpKind::AvgPool | OpKind::Pad => {
                Arity::Unary
            }
            OpKind::Conv
            | OpKind::Gemm
            | OpKind::MatMul
            | OpKind::BatchNorm
            | OpKind::Add
            | OpKind::Mul
            | OpKind::Concat => Arity::Binary,
        }
    }

    /// Floating-point operations per output element.
    pub fn flop_weight(self) -> f64 {
        match self {
            OpKind::Input => 0.0,
            OpKind::Conv => 4.0,
            OpKind::Gemm | OpKind::MatMul => 2.0,
            OpKind::Softmax => 3.0,
            OpKind::MaxPool | OpKind::AvgPool => 1.0,
            OpKind::Relu
            | OpKind::Sigmoid
            | OpKind::Pad
            | OpKind::BatchNorm
            | OpKind::Add
            | OpKind::Mul
            | OpKind::Concat => 1.0,
        }
    }

    /// Comparisons/selects per output element.
    pub fn bool_weight(self) -> f64 {
        match self {
            OpKind::Relu | OpKind::MaxPool | OpKind::Pad => 1.0,
            _ => 0.0,
        }
    }

    /// How many times a producer element is read per output element when this
    /// op consumes an inlined producer.
    pub fn reuse_factor(self) -> f64 {
        match self {
            OpKind::Conv => 3.0,
            OpKind::Gemm | OpKind::MatMul => 2.0,
            OpKind::MaxPool | OpKind::AvgPool | OpKind::Softmax => 2.0,
            _ => 1.0,
        }
    }

    /// The second operand is read along its non-contiguous dimension.
    pub fn reads_transposed(self) -> bool {
        matches!(self, OpKind::Gemm | OpKind::MatMul)
    }

    pub fn is_pool(self) -> bool {
        matches!(self, OpKind::MaxPool | OpKind::AvgPool)
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Conv => "conv",
            OpKind::Gemm => "gemm",
            OpKind::MatMul => "matmul",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax => "softmax",
            OpKind::MaxPool => "maxpool",
            OpKind::AvgPool => "avgpool",
            OpKind::Pad => "pad",
            OpKind::BatchNorm => "batch_norm",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Concat => "concat",
        }
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Output shape of `op` applied to `inputs`, clamped into `[dim_min, dim_max]`.
pub fn output_shape(op: OpKind, inputs: &[&[u32]], dim_min: u32, dim_max: u32) -> Vec<u32> {
    let clamp = |d: u32| d.clamp(dim_min, dim_max);
    let first = inputs[0];
    let rank = first.len();
    let trailing = rank.min(2);
    match op {
        OpKind::Input => first.to_vec(),
        OpKind::Relu | OpKind::Sigmoid | OpKind::Softmax | OpKind::BatchNorm | OpKind::Add | OpKind::Mul => {
            first.to_vec()
        }
        OpKind::Pad => first
            .iter()
            .enumerate()
            .map(|(i, &d)| if i >= rank - trailing { clamp(d + 2) } else { d })
            .collect(),
        OpKind::MaxPool | OpKind::AvgPool => first
            .iter()
            .enumerate()
            .map(|(i, &d)| if i >= rank - trailing { clamp(d.div_ceil(2)) } else { d })
            .collect(),
        OpKind::Concat => {
            let mut out = first.to_vec();
            let extra = *inputs[1].last().expect("rank >= 1");
            out[rank - 1] = clamp(out[rank - 1] + extra);
            out
        }
        OpKind::Conv | OpKind::Gemm | OpKind::MatMul => {
            let mut out = first.to_vec();
            out[rank - 1] = *inputs[1].last().expect("rank >= 1");
            out
        }
    }
}
