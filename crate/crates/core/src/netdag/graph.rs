use super::Activation;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, VecDeque};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// A hidden state: one pre-activity and its post-activity.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub width: usize,
    pub activation: Activation,
    pub rank: usize,
}

/// A fully connected layer `dst.A += W * src.B + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: EdgeId,
    pub src: NodeId,
    pub dst: NodeId,
    /// Shape `dst.width x src.width`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Edge {
    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Node or edge id does not match its storage position.
    BadIdentifier(String),
    ZeroWidth(NodeId),
    DuplicateRank(usize),
    /// The input must hold the lowest rank, the output the highest.
    EndpointRank(NodeId),
    OutputActivation(Activation),
    UnknownEndpoint { edge: EdgeId, node: NodeId },
    CycleRisk { edge: EdgeId, src_rank: usize, dst_rank: usize },
    Cycle,
    ShapeMismatch { edge: EdgeId, detail: String },
    DuplicateEdge { src: NodeId, dst: NodeId },
    DanglingNode { node: NodeId, missing: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadIdentifier(s) => write!(f, "bad identifier: {s}"),
            Violation::ZeroWidth(n) => write!(f, "zero-width node {n}"),
            Violation::DuplicateRank(r) => write!(f, "duplicate rank {r}"),
            Violation::EndpointRank(n) => write!(f, "endpoint {n} has an out-of-order rank"),
            Violation::OutputActivation(a) => write!(f, "output activation must be identity, found {a}"),
            Violation::UnknownEndpoint { edge, node } => {
                write!(f, "edge {edge} references unknown node {node}")
            }
            Violation::CycleRisk { edge, src_rank, dst_rank } => write!(
                f,
                "cycle-risk edge {edge}: rank {src_rank} -> rank {dst_rank}"
            ),
            Violation::Cycle => write!(f, "graph contains a cycle"),
            Violation::ShapeMismatch { edge, detail } => {
                write!(f, "shape mismatch on edge {edge}: {detail}")
            }
            Violation::DuplicateEdge { src, dst } => write!(f, "duplicate edge {src} -> {dst}"),
            Violation::DanglingNode { node, missing } => {
                write!(f, "dangling node {node}: no {missing}")
            }
        }
    }
}

/// A fully connected network whose layers form an arbitrary DAG.
///
/// Node and edge ids are their positions in the internal vectors; nothing is
/// ever removed, so ids stay stable across growth. Ranks form a strict total
/// order consistent with every edge, which is what rules out cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct DagNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    input: NodeId,
    output: NodeId,
}

impl DagNetwork {
    /// The network with no layers at all. It computes the constant zero.
    pub fn empty(input_width: usize, output_width: usize) -> Self {
        let nodes = vec![
            Node {
                id: NodeId(0),
                width: input_width,
                activation: Activation::Identity,
                rank: 0,
            },
            Node {
                id: NodeId(1),
                width: output_width,
                activation: Activation::Identity,
                rank: 1,
            },
        ];
        DagNetwork {
            nodes,
            edges: Vec::new(),
            input: NodeId(0),
            output: NodeId(1),
        }
    }

    /// Assemble a network without checking anything; call [`validate`](Self::validate).
    pub fn from_parts(nodes: Vec<Node>, edges: Vec<Edge>, input: NodeId, output: NodeId) -> Self {
        DagNetwork {
            nodes,
            edges,
            input,
            output,
        }
    }

    pub fn input(&self) -> NodeId {
        self.input
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id))
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(id.0)
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id.0]
    }

    pub(crate) fn edge_mut(&mut self, id: EdgeId) -> &mut Edge {
        &mut self.edges[id.0]
    }

    pub fn input_width(&self) -> usize {
        self.nodes[self.input.0].width
    }

    pub fn output_width(&self) -> usize {
        self.nodes[self.output.0].width
    }

    pub fn width(&self, id: NodeId) -> usize {
        self.nodes[id.0].width
    }

    pub fn rank(&self, id: NodeId) -> usize {
        self.nodes[id.0].rank
    }

    pub fn is_hidden(&self, id: NodeId) -> bool {
        id != self.input && id != self.output
    }

    pub fn hidden_nodes(&self) -> impl Iterator<Item = &Node> + '_ {
        self.nodes.iter().filter(move |n| self.is_hidden(n.id))
    }

    pub fn hidden_count(&self) -> usize {
        self.nodes.len() - 2
    }

    pub fn in_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(move |e| e.dst == id)
    }

    pub fn out_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(move |e| e.src == id)
    }

    pub fn has_edge(&self, src: NodeId, dst: NodeId) -> bool {
        self.edges.iter().any(|e| e.src == src && e.dst == dst)
    }

    /// Node ids sorted by rank.
    pub fn topo_order(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        ids.sort_by_key(|id| self.nodes[id.0].rank);
        ids
    }

    /// Total trainable parameters: every edge carries a weight matrix and a bias.
    pub fn param_count(&self) -> usize {
        self.edges.iter().map(Edge::param_count).sum()
    }

    /// Insert a node immediately below `dst` in the rank order. Ranks are
    /// renumbered so they stay consecutive.
    pub fn insert_node_before(
        &mut self,
        dst: NodeId,
        width: usize,
        activation: Activation,
    ) -> Result<NodeId> {
        let at = self.node(dst)?.rank;
        for n in &mut self.nodes {
            if n.rank >= at {
                n.rank += 1;
            }
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            id,
            width,
            activation,
            rank: at,
        });
        self.normalize_ranks();
        Ok(id)
    }

    fn normalize_ranks(&mut self) {
        let order = self.topo_order();
        for (r, id) in order.into_iter().enumerate() {
            self.nodes[id.0].rank = r;
        }
    }

    /// Add a layer, refusing anything that would break the graph invariants.
    pub fn add_edge(
        &mut self,
        src: NodeId,
        dst: NodeId,
        weight: DMatrix<f64>,
        bias: DVector<f64>,
    ) -> Result<EdgeId> {
        let (s, d) = (self.node(src)?, self.node(dst)?);
        if s.rank >= d.rank {
            return Err(Error::InvalidCandidate(format!(
                "edge {src} -> {dst} goes against the rank order"
            )));
        }
        if weight.shape() != (d.width, s.width) || bias.len() != d.width {
            return Err(Error::Shape(format!(
                "edge {src} -> {dst} needs weight {}x{} and bias {}, got {:?} and {}",
                d.width,
                s.width,
                d.width,
                weight.shape(),
                bias.len()
            )));
        }
        if self.has_edge(src, dst) {
            return Err(Error::InvalidCandidate(format!("edge {src} -> {dst} already exists")));
        }
        let id = EdgeId(self.edges.len());
        self.edges.push(Edge {
            id,
            src,
            dst,
            weight,
            bias,
        });
        Ok(id)
    }

    /// Every invariant violation; empty when the network is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.0 != i {
                out.push(Violation::BadIdentifier(format!("node at {i} has id {}", n.id)));
            }
            if n.width == 0 {
                out.push(Violation::ZeroWidth(n.id));
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.id.0 != i {
                out.push(Violation::BadIdentifier(format!("edge at {i} has id {}", e.id)));
            }
        }
        if self.input.0 >= self.nodes.len() || self.output.0 >= self.nodes.len() {
            out.push(Violation::BadIdentifier("input/output id out of range".into()));
            return out;
        }
        let mut ranks = BTreeSet::new();
        for n in &self.nodes {
            if !ranks.insert(n.rank) {
                out.push(Violation::DuplicateRank(n.rank));
            }
        }
        let (rin, rout) = (self.rank(self.input), self.rank(self.output));
        for n in &self.nodes {
            if n.id != self.input && n.rank <= rin {
                out.push(Violation::EndpointRank(self.input));
            }
            if n.id != self.output && n.rank >= rout {
                out.push(Violation::EndpointRank(self.output));
            }
        }
        let out_act = self.nodes[self.output.0].activation;
        if out_act != Activation::Identity {
            out.push(Violation::OutputActivation(out_act));
        }

        let mut pairs = BTreeSet::new();
        let mut endpoints_ok = true;
        for e in &self.edges {
            let (Some(s), Some(d)) = (self.nodes.get(e.src.0), self.nodes.get(e.dst.0)) else {
                let node = if self.nodes.get(e.src.0).is_none() { e.src } else { e.dst };
                out.push(Violation::UnknownEndpoint { edge: e.id, node });
                endpoints_ok = false;
                continue;
            };
            if s.rank >= d.rank {
                out.push(Violation::CycleRisk {
                    edge: e.id,
                    src_rank: s.rank,
                    dst_rank: d.rank,
                });
            }
            if e.weight.shape() != (d.width, s.width) {
                out.push(Violation::ShapeMismatch {
                    edge: e.id,
                    detail: format!(
                        "weight is {:?}, endpoints need ({}, {})",
                        e.weight.shape(),
                        d.width,
                        s.width
                    ),
                });
            }
            if e.bias.len() != d.width {
                out.push(Violation::ShapeMismatch {
                    edge: e.id,
                    detail: format!("bias has {} entries, destination width is {}", e.bias.len(), d.width),
                });
            }
            if !pairs.insert((e.src, e.dst)) {
                out.push(Violation::DuplicateEdge { src: e.src, dst: e.dst });
            }
        }
        if endpoints_ok && !self.is_acyclic() {
            out.push(Violation::Cycle);
        }
        for n in self.hidden_nodes() {
            if self.in_edges(n.id).next().is_none() {
                out.push(Violation::DanglingNode {
                    node: n.id,
                    missing: "in-edge",
                });
            }
            if self.out_edges(n.id).next().is_none() {
                out.push(Violation::DanglingNode {
                    node: n.id,
                    missing: "out-edge",
                });
            }
        }
        out
    }

    /// Kahn's algorithm on the edge list alone, independent of ranks.
    pub fn is_acyclic(&self) -> bool {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for e in &self.edges {
            indeg[e.dst.0] += 1;
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop_front() {
            seen += 1;
            for e in self.edges.iter().filter(|e| e.src.0 == v) {
                indeg[e.dst.0] -= 1;
                if indeg[e.dst.0] == 0 {
                    queue.push_back(e.dst.0);
                }
            }
        }
        seen == n
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidNetwork(v))
        }
    }

    /// Compact description such as `0->2 2->1 0->1 | n2:10`.
    pub fn describe(&self) -> String {
        let edges: Vec<String> = self
            .edges
            .iter()
            .map(|e| format!("{}->{}", e.src.0, e.dst.0))
            .collect();
        let widths: Vec<String> = self
            .hidden_nodes()
            .map(|n| format!("n{}:{}", n.id.0, n.width))
            .collect();
        format!("{} | {}", edges.join(" "), widths.join(" "))
    }
}
