//! Pipeline DAGs and the self-loop, row-normalized adjacency used by graph
//! convolution.
//!
//! Aggregation pulls from producers into consumers: row `i` of the adjacency
//! has a nonzero at column `j` iff `j -> i` is an edge (or `i == j`).

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A directed acyclic graph of pipeline stages. Node `i` carries the features
/// stored at index `i` of the accompanying per-node feature rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct PipelineGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<RawGraph> for PipelineGraph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        PipelineGraph::new(raw.num_nodes, raw.edges.into_iter().map(|[p, c]| (p, c)).collect())
    }
}

impl From<PipelineGraph> for RawGraph {
    fn from(g: PipelineGraph) -> Self {
        RawGraph {
            num_nodes: g.num_nodes,
            edges: g.edges.into_iter().map(|(p, c)| [p, c]).collect(),
        }
    }
}

impl PipelineGraph {
    /// Builds a graph, rejecting out-of-range indices, self-edges, duplicate
    /// edges and cycles.
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let graph = Self::with_checked_edges(num_nodes, edges)?;
        graph.topological_order()?;
        Ok(graph)
    }

    fn with_checked_edges(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(p, c) in &edges {
            if p >= num_nodes || c >= num_nodes {
                return Err(Error::Graph(format!(
                    "edge ({p}, {c}) out of range for {num_nodes} nodes"
                )));
            }
            if p == c {
                return Err(Error::Graph(format!("self-edge on node {p}")));
            }
            if !seen.insert((p, c)) {
                return Err(Error::Graph(format!("duplicate edge ({p}, {c})")));
            }
        }
        Ok(Self { num_nodes, edges })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Producers of `node`, ascending.
    pub fn producers(&self, node: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .edges
            .iter()
            .filter(|&&(_, c)| c == node)
            .map(|&(p, _)| p)
            .collect();
        v.sort_unstable();
        v
    }

    /// Consumers of `node`, ascending.
    pub fn consumers(&self, node: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .edges
            .iter()
            .filter(|&&(p, _)| p == node)
            .map(|&(_, c)| c)
            .collect();
        v.sort_unstable();
        v
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &(p, _) in &self.edges {
            d[p] += 1;
        }
        d
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &(_, c) in &self.edges {
            d[c] += 1;
        }
        d
    }

    /// Nodes with no consumers.
    pub fn sinks(&self) -> Vec<usize> {
        self.out_degrees()
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Kahn's algorithm with ascending-index tie-breaking.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        topological_order(self.num_nodes, &self.edges)
    }

    /// Number of edges on the longest path.
    pub fn longest_path(&self) -> usize {
        let order = self
            .topological_order()
            .expect("PipelineGraph is acyclic by construction");
        let mut depth = vec![0usize; self.num_nodes];
        let mut succ = vec![Vec::new(); self.num_nodes];
        for &(p, c) in &self.edges {
            succ[p].push(c);
        }
        for &n in &order {
            for &c in &succ[n] {
                depth[c] = depth[c].max(depth[n] + 1);
            }
        }
        depth.into_iter().max().unwrap_or(0)
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return Err(Error::dim("permutation", self.num_nodes, perm.len()));
        }
        let edges = self.edges.iter().map(|&(p, c)| (perm[p], perm[c])).collect();
        PipelineGraph::new(self.num_nodes, edges)
    }

    /// Disjoint union: `other`'s nodes are appended after `self`'s.
    pub fn disjoint_union(&self, other: &PipelineGraph) -> PipelineGraph {
        let off = self.num_nodes;
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().map(|&(p, c)| (p + off, c + off)));
        PipelineGraph {
            num_nodes: off + other.num_nodes,
            edges,
        }
    }
}

/// Topological order over a raw edge list; ties resolve to the smallest index.
pub fn topological_order(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>> {
    let mut indeg = vec![0usize; num_nodes];
    let mut succ = vec![Vec::new(); num_nodes];
    for &(p, c) in edges {
        if p >= num_nodes || c >= num_nodes {
            return Err(Error::Graph(format!(
                "edge ({p}, {c}) out of range for {num_nodes} nodes"
            )));
        }
        succ[p].push(c);
        indeg[c] += 1;
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..num_nodes).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(num_nodes);
    while let Some(Reverse(n)) = ready.pop() {
        order.push(n);
        for &c in &succ[n] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() < num_nodes {
        let mut done = vec![false; num_nodes];
        for &n in &order {
            done[n] = true;
        }
        let cyclic = edges.iter().copied().filter(|&(p, c)| !done[p] && !done[c]).collect();
        return Err(Error::Cycle { edges: cyclic });
    }
    Ok(order)
}

/// `rownorm(A + I)` for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: Array2<f64>,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn num_nodes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }
}

pub fn normalize_adjacency(graph: &PipelineGraph) -> Result<NormalizedAdjacency> {
    let n = graph.num_nodes();
    if n == 0 {
        return Err(Error::Graph("cannot normalize an empty graph".into()));
    }
    let mut m = Array2::<f64>::eye(n);
    for &(p, c) in graph.edges() {
        m[[c, p]] = 1.0;
    }
    for mut row in m.rows_mut() {
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    Ok(NormalizedAdjacency { matrix: m })
}

/// Block-diagonal adjacency for a batch of graphs, kept as per-graph blocks.
/// Products touch only the diagonal blocks.
#[derive(Debug, Clone)]
pub struct BlockAdjacency {
    blocks: Vec<NormalizedAdjacency>,
    offsets: Vec<usize>,
    total: usize,
}

impl BlockAdjacency {
    pub fn new(blocks: Vec<NormalizedAdjacency>) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut total = 0;
        for b in &blocks {
            offsets.push(total);
            total += b.num_nodes();
        }
        Self { blocks, offsets, total }
    }

    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a PipelineGraph>) -> Result<Self> {
        let blocks = graphs
            .into_iter()
            .map(normalize_adjacency)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(blocks))
    }

    pub fn num_graphs(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.total
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Node index range of graph `g`.
    pub fn range(&self, g: usize) -> std::ops::Range<usize> {
        let start = self.offsets[g];
        start..start + self.blocks[g].num_nodes()
    }

    pub fn blocks(&self) -> &[NormalizedAdjacency] {
        &self.blocks
    }

    /// `A' * x`.
    pub fn aggregate(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.apply(x, false)
    }

    /// `A'^T * x`.
    pub fn aggregate_transposed(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.apply(x, true)
    }

    fn apply(&self, x: ArrayView2<f64>, transpose: bool) -> Array2<f64> {
        assert_eq!(x.nrows(), self.total, "row count must match batched nodes");
        let mut out = Array2::<f64>::zeros(x.raw_dim());
        for (g, block) in self.blocks.iter().enumerate() {
            let r = self.range(g);
            let xs = x.slice(s![r.clone(), ..]);
            let m = block.matrix();
            let prod = if transpose { m.t().dot(&xs) } else { m.dot(&xs) };
            out.slice_mut(s![r, ..]).assign(&prod);
        }
        out
    }

    pub fn to_dense(&self) -> NormalizedAdjacency {
        let mut m = Array2::<f64>::zeros((self.total, self.total));
        for (g, block) in self.blocks.iter().enumerate() {
            let r = self.range(g);
            m.slice_mut(s![r.clone(), r]).assign(block.matrix());
        }
        NormalizedAdjacency { matrix: m }
    }
}

/// Block-diagonal composition of per-graph normalized adjacencies, with the
/// starting node index of every graph.
pub fn batch_graphs(graphs: &[PipelineGraph]) -> Result<(NormalizedAdjacency, Vec<usize>)> {
    if graphs.is_empty() {
        return Err(Error::Graph("cannot batch an empty list of graphs".into()));
    }
    let blocks = BlockAdjacency::from_graphs(graphs)?;
    let offsets = blocks.offsets().to_vec();
    Ok((blocks.to_dense(), offsets))
}
