//! Random pipeline generator.
//!
//! Pipelines are grown stage by stage: every node of a new stage draws its
//! producers from the tensors available at the previous stage, and tensors no
//! node consumed are carried forward. Finished pipelines go through three
//! filters (output count, depth, favored-op presence).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{output_shape, Arity, OpKind};
use super::rng_for;
use crate::error::{Error, Result};
use crate::graph::PipelineGraph;

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Span {
    pub min: u32,
    pub max: u32,
}

impl Span {
    pub const fn new(min: u32, max: u32) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        rng.gen_range(self.min..=self.max)
    }

    fn check(&self, name: &str, floor: u32) -> Result<()> {
        if self.min > self.max {
            return Err(Error::Config(format!(
                "{name}: inverted range [{}, {}]",
                self.min, self.max
            )));
        }
        if self.min < floor {
            return Err(Error::Config(format!("{name}: minimum must be >= {floor}")));
        }
        Ok(())
    }
}

impl From<[u32; 2]> for Span {
    fn from([min, max]: [u32; 2]) -> Self {
        Span { min, max }
    }
}

impl From<Span> for [u32; 2] {
    fn from(s: Span) -> Self {
        [s.min, s.max]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub num_inputs: Span,
    pub num_stages: Span,
    pub stage_width: Span,
    pub rank: Span,
    pub dim: Span,
    /// Tensors larger than this are shrunk (largest dim halved) until they
    /// fit.
    pub max_elements: u64,
    /// Tensors smaller than this are grown (smallest dim doubled, up to the
    /// dim maximum) until they reach it.
    pub min_elements: u64,
    /// Apply the element bounds to every stage output, not only to inputs.
    pub budget_all_stages: bool,
    pub binary_prob: f64,
    /// Shrink the stage-width upper bound linearly so the last stage has the
    /// minimum width.
    pub taper: bool,
    /// Probability that a node picks its producers among tensors nobody in the
    /// current stage has consumed yet.
    pub prefer_unused_prob: f64,
    pub unary_ops: Vec<OpKind>,
    pub binary_ops: Vec<OpKind>,
    pub favored_ops: Vec<OpKind>,
    pub output_thresh: usize,
    pub depth_thresh: usize,
    /// Probability of discarding a pipeline with more than `output_thresh`
    /// outputs.
    pub multi_output_discard_prob: f64,
    pub max_attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_inputs: Span::new(1, 3),
            num_stages: Span::new(5, 8),
            stage_width: Span::new(1, 4),
            rank: Span::new(2, 4),
            dim: Span::new(4, 256),
            max_elements: 1 << 17,
            min_elements: 1 << 14,
            budget_all_stages: true,
            binary_prob: 0.5,
            taper: true,
            prefer_unused_prob: 0.9,
            unary_ops: OpKind::UNARY.to_vec(),
            binary_ops: OpKind::BINARY.to_vec(),
            favored_ops: OpKind::FAVORED.to_vec(),
            output_thresh: 1,
            depth_thresh: 5,
            multi_output_discard_prob: 0.95,
            max_attempts: 1000,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.num_inputs.check("num_inputs", 1)?;
        self.num_stages.check("num_stages", 1)?;
        self.stage_width.check("stage_width", 1)?;
        self.rank.check("rank", 1)?;
        self.dim.check("dim", 1)?;
        if self.rank.max > 4 {
            return Err(Error::Config("rank: maximum is 4".into()));
        }
        if self.unary_ops.is_empty() && self.binary_ops.is_empty() {
            return Err(Error::Config("empty op set".into()));
        }
        if self.unary_ops.is_empty() {
            return Err(Error::Config("at least one unary op is required".into()));
        }
        for &op in &self.unary_ops {
            if op.arity() != Arity::Unary {
                return Err(Error::Config(format!("{op} is not unary")));
            }
        }
        for &op in &self.binary_ops {
            if op.arity() != Arity::Binary {
                return Err(Error::Config(format!("{op} is not binary")));
            }
        }
        for (name, p) in [
            ("binary_prob", self.binary_prob),
            ("prefer_unused_prob", self.prefer_unused_prob),
            ("multi_output_discard_prob", self.multi_output_discard_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1]")));
            }
        }
        if self.min_elements > self.max_elements {
            return Err(Error::Config("min_elements larger than max_elements".into()));
        }
        if self.max_elements < u64::from(self.dim.min) {
            return Err(Error::Config("max_elements smaller than the minimum dim".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// A generated pipeline: graph, per-node operation, operand order and output
/// shape, and the seed that reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPipeline {
    pub graph: PipelineGraph,
    pub node_ops: Vec<OpKind>,
    /// Producers of each node in operand order.
    pub node_operands: Vec<Vec<usize>>,
    pub node_shapes: Vec<Vec<u32>>,
    pub seed: u64,
}

impl SynthPipeline {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn elements(&self, node: usize) -> f64 {
        self.node_shapes[node].iter().map(|&d| f64::from(d)).product()
    }

    /// Checks the structural invariants tying ops, operands, shapes and graph
    /// together.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        for (what, len) in [
            ("node_ops", self.node_ops.len()),
            ("node_operands", self.node_operands.len()),
            ("node_shapes", self.node_shapes.len()),
        ] {
            if len != n {
                return Err(Error::Invalid(format!("{what} has {len} entries for {n} nodes")));
            }
        }
        for node in 0..n {
            let op = self.node_ops[node];
            let operands = &self.node_operands[node];
            if operands.len() != op.arity().producers() {
                return Err(Error::Invalid(format!(
                    "node {node} ({op}) has {} producers",
                    operands.len()
                )));
            }
            let mut producers = operands.clone();
            producers.sort_unstable();
            if producers != self.graph.producers(node) {
                return Err(Error::Invalid(format!("node {node}: operands disagree with edges")));
            }
            let rank = self.node_shapes[node].len();
            if !(1..=4).contains(&rank) || self.node_shapes[node].contains(&0) {
                return Err(Error::Invalid(format!("node {node}: bad shape")));
            }
        }
        Ok(())
    }
}

/// Why a candidate pipeline was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    TooManyOutputs(usize),
    TooShallow(usize),
    NoFavoredOp,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Accepted(SynthPipeline),
    Rejected(Rejection),
}

struct Builder<'a> {
    config: &'a GeneratorConfig,
    rng: ChaCha8Rng,
    ops: Vec<OpKind>,
    operands: Vec<Vec<usize>>,
    shapes: Vec<Vec<u32>>,
}

/// Halves the largest dim while the shape exceeds `max_elements`, then
/// doubles the smallest while it is below `min_elements`, staying inside the
/// dim range.
fn fit_elements(shape: &mut [u32], config: &GeneratorConfig) {
    let elements = |s: &[u32]| s.iter().map(|&d| u64::from(d)).product::<u64>();
    let (floor, ceiling) = (config.dim.min, config.dim.max);
    while elements(shape) > config.max_elements {
        let (i, _) = shape
            .iter()
            .enumerate()
            .max_by_key(|&(i, &d)| (d, std::cmp::Reverse(i)))
            .expect("rank >= 1");
        if shape[i] <= floor {
            break;
        }
        shape[i] = (shape[i] / 2).max(floor);
    }
    while elements(shape) < config.min_elements {
        let (i, _) = shape
            .iter()
            .enumerate()
            .min_by_key(|&(i, &d)| (d, i))
            .expect("rank >= 1");
        if shape[i] >= ceiling {
            break;
        }
        shape[i] = (shape[i] * 2).min(ceiling);
    }
}

impl Builder<'_> {
    fn push(&mut self, op: OpKind, operands: Vec<usize>, shape: Vec<u32>) -> usize {
        self.ops.push(op);
        self.operands.push(operands);
        self.shapes.push(shape);
        self.ops.len() - 1
    }

    fn log_uniform_dim(&mut self) -> u32 {
        let lo = f64::from(self.config.dim.min).ln();
        let hi = f64::from(self.config.dim.max).ln();
        let d = self.rng.gen_range(lo..=hi).exp().round() as u32;
        d.clamp(self.config.dim.min, self.config.dim.max)
    }

    fn input_shape(&mut self) -> Vec<u32> {
        let rank = self.config.rank.sample(&mut self.rng) as usize;
        let mut shape: Vec<u32> = (0..rank).map(|_| self.log_uniform_dim()).collect();
        fit_elements(&mut shape, self.config);
        shape
    }

    fn pick(&mut self, available: &[usize], consumed: &[bool], exclude: Option<usize>) -> usize {
        let fresh: Vec<usize> = available
            .iter()
            .enumerate()
            .filter(|&(k, &t)| !consumed[k] && Some(t) != exclude)
            .map(|(_, &t)| t)
            .collect();
        if !fresh.is_empty() && self.rng.gen_bool(self.config.prefer_unused_prob) {
            return *fresh.choose(&mut self.rng).expect("non-empty");
        }
        let all: Vec<usize> = available.iter().copied().filter(|&t| Some(t) != exclude).collect();
        *all.choose(&mut self.rng).expect("at least one candidate")
    }

    fn build_node(&mut self, available: &[usize], consumed: &mut [bool]) -> usize {
        let binary =
            available.len() >= 2 && !self.config.binary_ops.is_empty() && self.rng.gen_bool(self.config.binary_prob);
        let (op, operands) = if binary {
            let op = *self.config.binary_ops.choose(&mut self.rng).expect("non-empty");
            let a = self.pick(available, consumed, None);
            mark(available, consumed, a);
            let b = self.pick(available, consumed, Some(a));
            mark(available, consumed, b);
            (op, vec![a, b])
        } else {
            let op = *self.config.unary_ops.choose(&mut self.rng).expect("non-empty");
            let a = self.pick(available, consumed, None);
            mark(available, consumed, a);
            (op, vec![a])
        };
        let inputs: Vec<&[u32]> = operands.iter().map(|&t| self.shapes[t].as_slice()).collect();
        let mut shape = output_shape(op, &inputs, self.config.dim.min, self.config.dim.max);
        if self.config.budget_all_stages {
            fit_elements(&mut shape, self.config);
        }
        self.push(op, operands, shape)
    }

    fn build_stage(&mut self, input_stage: &[usize], index: u32, num_stages: u32) -> Vec<usize> {
        let span = self.config.stage_width;
        let width = if self.config.taper && num_stages > 1 {
            let room = span.max - span.min;
            let remaining = num_stages - 1 - index;
            let hi = span.min + (room * remaining).div_ceil(num_stages - 1);
            Span::new(span.min, hi).sample(&mut self.rng)
        } else {
            span.sample(&mut self.rng)
        };
        let mut consumed = vec![false; input_stage.len()];
        let mut stage: Vec<usize> = (0..width)
            .map(|_| self.build_node(input_stage, &mut consumed))
            .collect();
        stage.extend(input_stage.iter().zip(&consumed).filter(|(_, &c)| !c).map(|(&t, _)| t));
        stage
    }
}

fn mark(available: &[usize], consumed: &mut [bool], tensor: usize) {
    if let Some(k) = available.iter().position(|&t| t == tensor) {
        consumed[k] = true;
    }
}

/// Builds one candidate pipeline from `seed` and runs it through the filters.
pub fn build_random_pipeline(config: &GeneratorConfig, seed: u64) -> Result<Outcome> {
    config.validate()?;
    let mut b = Builder {
        config,
        rng: rng_for(seed, 0),
        ops: Vec::new(),
        operands: Vec::new(),
        shapes: Vec::new(),
    };

    let num_inputs = config.num_inputs.sample(&mut b.rng);
    let mut stage: Vec<usize> = (0..num_inputs)
        .map(|_| {
            let shape = b.input_shape();
            b.push(OpKind::Input, Vec::new(), shape)
        })
        .collect();
    let num_stages = config.num_stages.sample(&mut b.rng);
    for k in 0..num_stages {
        stage = b.build_stage(&stage, k, num_stages);
    }

    let edges = b
        .operands
        .iter()
        .enumerate()
        .flat_map(|(c, ops)| ops.iter().map(move |&p| (p, c)))
        .collect();
    let graph = PipelineGraph::new(b.ops.len(), edges)?;

    let outputs = graph.sinks().len();
    // Drawn unconditionally so the random stream does not depend on the
    // filter outcome.
    let discard = b.rng.gen_bool(config.multi_output_discard_prob);
    if outputs > config.output_thresh && discard {
        return Ok(Outcome::Rejected(Rejection::TooManyOutputs(outputs)));
    }
    let depth = graph.longest_path();
    if depth < config.depth_thresh {
        return Ok(Outcome::Rejected(Rejection::TooShallow(depth)));
    }
    if !b.ops.iter().any(|op| config.favored_ops.contains(op)) {
        return Ok(Outcome::Rejected(Rejection::NoFavoredOp));
    }

    Ok(Outcome::Accepted(SynthPipeline {
        graph,
        node_ops: b.ops,
        node_operands: b.operands,
        node_shapes: b.shapes,
        seed,
    }))
}

/// Retries `build_random_pipeline` with consecutive seeds until one is
/// accepted or `max_attempts` is exhausted.
pub fn sample_pipeline(config: &GeneratorConfig, seed: u64) -> Result<SynthPipeline> {
    config.validate()?;
    for attempt in 0..config.max_attempts {
        if let Outcome::Accepted(p) = build_random_pipeline(config, seed.wrapping_add(attempt as u64))? {
            return Ok(p);
        }
    }
    Err(Error::Exhausted {
        attempts: config.max_attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shallow_configs_always_rejected() {
        let config = GeneratorConfig {
            num_stages: Span::new(3, 3),
            ..Default::default()
        };
        for seed in 0..200 {
            match build_random_pipeline(&config, seed).unwrap() {
                Outcome::Rejected(_) => {}
                Outcome::Accepted(p) => panic!("accepted depth {}", p.graph.longest_path()),
            }
        }
        assert!(matches!(
            sample_pipeline(
                &GeneratorConfig {
                    max_attempts: 50,
                    ..config
                },
                0
            ),
            Err(Error::Exhausted { attempts: 50 })
        ));
    }

    #[test]
    fn accepted_pipelines_pass_filters() {
        let config = GeneratorConfig::default();
        for seed in 0..50 {
            let p = sample_pipeline(&config, seed * 7919).unwrap();
            p.validate().unwrap();
            assert!(p.graph.longest_path() >= 5);
            assert!(p.node_ops.iter().any(|op| OpKind::FAVORED.contains(op)));
        }
    }

    #[test]
    fn deterministic() {
        let config = GeneratorConfig::default();
        let a = serde_json::to_vec(&sample_pipeline(&config, 42).unwrap()).unwrap();
        let b = serde_json::to_vec(&sample_pipeline(&config, 42).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_configs() {
        let empty = GeneratorConfig {
            unary_ops: vec![],
            binary_ops: vec![],
            ..Default::default()
        };
        assert!(matches!(build_random_pipeline(&empty, 0), Err(Error::Config(_))));
        let inverted = GeneratorConfig {
            dim: Span::new(64, 8),
            ..Default::default()
        };
        assert!(matches!(build_random_pipeline(&inverted, 0), Err(Error::Config(_))));
        let wrong_arity = GeneratorConfig {
            unary_ops: vec![OpKind::Conv],
            ..Default::default()
        };
        assert!(wrong_arity.validate().is_err());
    }

    #[test]
    fn arity_matches_producers() {
        let p = sample_pipeline(&GeneratorConfig::default(), 3).unwrap();
        for node in 0..p.num_nodes() {
            assert_eq!(p.graph.producers(node).len(), p.node_ops[node].arity().producers());
        }
    }
}
