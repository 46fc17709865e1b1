//! Expressivity bottleneck of each node.
//!
//! For a node `v` the desired update of its pre-activity is projected onto
//! what its own in-edge parameters can produce: with `B_cat` the in-source
//! post-activities plus a bias channel, the best update is
//! `dW* = N^T (S + ridge I)^{-1}` where `S = E[B_cat B_cat^T]` and
//! `N = E[B_cat desired^T]`. The remainder `v_orth = desired - dW* B_cat`
//! cannot be expressed by the current architecture; its RMS norm is `psi`.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{augment_with_bias, cross_moment, ridge_for, solve_psd};
use crate::metrics::{flops_backward, flops_forward, flops_gram, flops_matmul, flops_spd_solve, FlopCounter, Phase};
use crate::netdag::{
    backward, forward, loss_and_functional_gradient, ActivationCache, Backprop, DagNetwork, EdgeId, LossKind,
    NodeId,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Relative ridge used unless configured otherwise.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Optimal update of one in-edge.
#[derive(Debug, Clone)]
pub struct InEdgeUpdate {
    pub edge: EdgeId,
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct NodeProjection {
    pub node: NodeId,
    pub width: usize,
    /// Per in-edge blocks of `dW*`; the bias channel lands on the first in-edge.
    pub best_in_updates: Vec<InEdgeUpdate>,
    pub v_star: DMatrix<f64>,
    pub v_orth: DMatrix<f64>,
    pub psi: f64,
}

/// How psi values are compared when picking the worst node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiNormalize {
    #[default]
    None,
    /// `psi / sqrt(width)`.
    Width,
}

impl FromStr for PsiNormalize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(PsiNormalize::None),
            "width" => Ok(PsiNormalize::Width),
            other => Err(format!("unknown psi normalization '{other}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BottleneckReport {
    pub projections: Vec<NodeProjection>,
    /// Node with the largest (possibly normalized) psi; ties go to the lowest id.
    pub argmax: NodeId,
    pub batch: String,
    pub loss: f64,
}

impl BottleneckReport {
    pub fn get(&self, node: NodeId) -> Option<&NodeProjection> {
        self.projections.iter().find(|p| p.node == node)
    }

    pub fn psi(&self, node: NodeId) -> Option<f64> {
        self.get(node).map(|p| p.psi)
    }
}

fn rms(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    (m.norm_squared() / m.nrows() as f64).sqrt()
}

/// Project the desired update of `node` onto its in-edge tangent directions.
///
/// `ridge` is relative: the absolute regularizer is `ridge * trace(S) / dim(S)`.
/// A zero ridge gives the exact minimum-norm least-squares projection.
pub fn project_node(
    net: &DagNetwork,
    cache: &ActivationCache,
    desired: &DMatrix<f64>,
    node: NodeId,
    ridge: f64,
) -> Result<NodeProjection> {
    project_node_counted(net, cache, desired, node, ridge, &mut FlopCounter::default())
}

pub(crate) fn project_node_counted(
    net: &DagNetwork,
    cache: &ActivationCache,
    desired: &DMatrix<f64>,
    node: NodeId,
    ridge: f64,
    flops: &mut FlopCounter,
) -> Result<NodeProjection> {
    let width = net.node(node)?.width;
    let n = cache.batch_size();
    if desired.shape() != (n, width) {
        return Err(Error::Shape(format!(
            "desired update at {node} is {:?}, expected ({n}, {width})",
            desired.shape()
        )));
    }
    let in_edges: Vec<_> = net.in_edges(node).collect();
    if in_edges.is_empty() {
        if node != net.output() {
            return Err(Error::InvalidCandidate(format!("{node} has no in-edges to project onto")));
        }
        return Ok(NodeProjection {
            node,
            width,
            best_in_updates: Vec::new(),
            v_star: DMatrix::zeros(n, width),
            v_orth: desired.clone(),
            psi: rms(desired),
        });
    }
    let blocks: Vec<&DMatrix<f64>> = in_edges.iter().map(|e| cache.post(e.src)).collect();
    let b_cat = augment_with_bias(&blocks, n);
    let p = b_cat.ncols();
    let s = cross_moment(&b_cat, &b_cat);
    let cross = cross_moment(&b_cat, desired);
    // coefficients: p x width, i.e. dW*^T
    let coef = solve_psd(&s, &cross, ridge_for(&s, ridge))?;
    let v_star = &b_cat * &coef;
    let v_orth = desired - &v_star;
    flops.book(
        Phase::BottleneckSolve,
        flops_gram(n, p, p) + flops_gram(n, p, width) + flops_spd_solve(p, width) + flops_matmul(n, p, width),
    );

    let mut best_in_updates = Vec::with_capacity(in_edges.len());
    let mut at = 0;
    for (i, e) in in_edges.iter().enumerate() {
        let w = net.width(e.src);
        let weight = coef.rows(at, w).transpose();
        let bias = if i == 0 {
            coef.row(p - 1).transpose()
        } else {
            DVector::zeros(width)
        };
        best_in_updates.push(InEdgeUpdate {
            edge: e.id,
            weight,
            bias,
        });
        at += w;
    }
    let psi = rms(&v_orth);
    Ok(NodeProjection {
        node,
        width,
        best_in_updates,
        v_star,
        v_orth,
        psi,
    })
}

/// Nodes whose bottleneck is defined: every node with an in-edge, and the
/// output even when nothing feeds it yet.
pub fn projectable_nodes(net: &DagNetwork) -> Vec<NodeId> {
    net.topo_order()
        .into_iter()
        .filter(|&id| id == net.output() || (id != net.input() && net.in_edges(id).next().is_some()))
        .collect()
}

/// Index of the worst node; ties resolved toward the lowest node id.
pub fn argmax_psi(projections: &[NodeProjection], normalize: PsiNormalize) -> Option<NodeId> {
    let score = |p: &NodeProjection| match normalize {
        PsiNormalize::None => p.psi,
        PsiNormalize::Width => p.psi / (p.width as f64).sqrt(),
    };
    projections
        .iter()
        .fold(None::<&NodeProjection>, |best, p| match best {
            None => Some(p),
            Some(b) => {
                let (sp, sb) = (score(p), score(b));
                if sp > sb || (sp == sb && p.node < b.node) {
                    Some(p)
                } else {
                    Some(b)
                }
            }
        })
        .map(|p| p.node)
}

/// Forward and backward passes with everything the projections need.
pub struct BatchState {
    pub cache: ActivationCache,
    pub backprop: Backprop,
    pub loss: f64,
}

pub fn batch_state(net: &DagNetwork, batch: &Dataset, kind: LossKind, flops: &mut FlopCounter) -> Result<BatchState> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("bottleneck batch is empty"));
    }
    let (out, cache) = forward(net, &batch.x)?;
    let (loss, goal) = loss_and_functional_gradient(&out, &batch.y, kind)?;
    let backprop = backward(net, &cache, &goal)?;
    flops.book(Phase::BottleneckForward, flops_forward(net, batch.len()));
    flops.book(Phase::BottleneckBackward, flops_backward(net, batch.len()));
    Ok(BatchState { cache, backprop, loss })
}

pub fn report_from_state(
    net: &DagNetwork,
    state: &BatchState,
    ridge: f64,
    normalize: PsiNormalize,
    label: &str,
    flops: &mut FlopCounter,
) -> Result<BottleneckReport> {
    let mut projections = Vec::new();
    for id in projectable_nodes(net) {
        let desired = state.backprop.desired(id).expect("non-input node");
        projections.push(project_node_counted(net, &state.cache, desired, id, ridge, flops)?);
    }
    let argmax = argmax_psi(&projections, normalize).unwrap_or(net.output());
    Ok(BottleneckReport {
        projections,
        argmax,
        batch: label.to_string(),
        loss: state.loss,
    })
}

/// Forward, functional gradient, backward, then a projection at every node.
pub fn bottleneck_report(
    net: &DagNetwork,
    batch: &Dataset,
    kind: LossKind,
    ridge: f64,
    normalize: PsiNormalize,
) -> Result<BottleneckReport> {
    let mut flops = FlopCounter::default();
    let state = batch_state(net, batch, kind, &mut flops)?;
    report_from_state(net, &state, ridge, normalize, "batch", &mut flops)
}

/// CSV rows `node_id,width,psi,n_in_edges`.
pub fn report_csv(net: &DagNetwork, report: &BottleneckReport) -> String {
    let mut out = String::from("node_id,width,psi,n_in_edges\n");
    for p in &report.projections {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.node.0,
            p.width,
            p.psi,
            net.in_edges(p.node).count()
        ));
    }
    out
}
