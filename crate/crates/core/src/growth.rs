//! Candidate expansions: enumeration, fitting of new weights against the
//! bottleneck residual, amplitude line search, estimation and graph surgery.

use crate::bottleneck::{BottleneckReport, InEdgeUpdate};
use crate::error::{Error, Result};
use crate::linalg::{augment_with_bias, cross_moment, inverse_sqrt, numerical_rank, ridge_for, sorted_svd};
use crate::metrics::{
    flops_forward_from, flops_gram, flops_matmul, flops_svd, flops_sym_eigen, FlopCounter, Phase,
};
use crate::netdag::{forward_output_from, loss, Activation, ActivationCache, DagNetwork, LossKind, NodeId};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpansionKind {
    /// One new layer `src -> dst`.
    DirectEdge { src: NodeId, dst: NodeId },
    /// A new node of `neurons` units with one in-edge from `src` and one
    /// out-edge to `dst`.
    NewNode {
        src: NodeId,
        dst: NodeId,
        neurons: usize,
        activation: Activation,
    },
    /// `neurons` more units in an existing hidden node, fed by all of its
    /// in-edge sources and feeding all of its consumers.
    WidenNode { node: NodeId, neurons: usize },
}

impl ExpansionKind {
    fn order_key(&self) -> (u8, usize, usize) {
        match *self {
            ExpansionKind::DirectEdge { src, dst } => (0, src.0, dst.0),
            ExpansionKind::NewNode { src, dst, .. } => (1, src.0, dst.0),
            ExpansionKind::WidenNode { node, .. } => (2, node.0, node.0),
        }
    }

    /// Nodes whose post-activities feed the new weights, in block order.
    pub fn sources(&self, net: &DagNetwork) -> Vec<NodeId> {
        match *self {
            ExpansionKind::DirectEdge { src, .. } | ExpansionKind::NewNode { src, .. } => vec![src],
            ExpansionKind::WidenNode { node, .. } => net.in_edges(node).map(|e| e.src).collect(),
        }
    }

    /// Nodes whose pre-activities receive the new contribution, in block order.
    pub fn targets(&self, net: &DagNetwork) -> Vec<NodeId> {
        match *self {
            ExpansionKind::DirectEdge { dst, .. } | ExpansionKind::NewNode { dst, .. } => vec![dst],
            ExpansionKind::WidenNode { node, .. } => net.out_edges(node).map(|e| e.dst).collect(),
        }
    }

    /// Exact increase of `param_count` when applied to `net`.
    pub fn param_delta(&self, net: &DagNetwork) -> usize {
        match *self {
            ExpansionKind::DirectEdge { src, dst } => net.width(dst) * net.width(src) + net.width(dst),
            ExpansionKind::NewNode { src, dst, neurons, .. } => {
                neurons * net.width(src) + neurons + net.width(dst) * neurons + net.width(dst)
            }
            ExpansionKind::WidenNode { node, neurons } => {
                let ins: usize = net.in_edges(node).map(|e| neurons * (net.width(e.src) + 1)).sum();
                let outs: usize = net.out_edges(node).map(|e| net.width(e.dst) * neurons).sum();
                ins + outs
            }
        }
    }
}

impl fmt::Display for ExpansionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpansionKind::DirectEdge { src, dst } => write!(f, "edge({}->{})", src.0, dst.0),
            ExpansionKind::NewNode { src, dst, neurons, .. } => {
                write!(f, "node({}->[{neurons}]->{})", src.0, dst.0)
            }
            ExpansionKind::WidenNode { node, neurons } => write!(f, "widen({}+{neurons})", node.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Whole,
    /// Only expansions whose output lands on this node's pre-activity.
    NodeRestricted(NodeId),
}

/// All legal expansions in `scope`, sorted by kind, then source, then destination.
pub fn enumerate_candidates(
    net: &DagNetwork,
    scope: Scope,
    neurons: usize,
    activation: Activation,
) -> Result<Vec<ExpansionKind>> {
    let order = net.topo_order();
    let mut out = Vec::new();
    let dsts: Vec<NodeId> = match scope {
        Scope::Whole => order.clone(),
        Scope::NodeRestricted(target) => {
            net.node(target)?;
            vec![target]
        }
    };
    for &dst in &dsts {
        for &src in &order {
            if net.rank(src) >= net.rank(dst) {
                continue;
            }
            if !net.has_edge(src, dst) {
                out.push(ExpansionKind::DirectEdge { src, dst });
            }
            out.push(ExpansionKind::NewNode {
                src,
                dst,
                neurons,
                activation,
            });
        }
    }
    let widen: Vec<NodeId> = match scope {
        Scope::Whole => net.hidden_nodes().map(|n| n.id).collect(),
        Scope::NodeRestricted(target) => {
            if net.is_hidden(target) {
                vec![target]
            } else {
                vec![]
            }
        }
    };
    out.extend(widen.into_iter().map(|node| ExpansionKind::WidenNode { node, neurons }));
    out.sort_by_key(|k| k.order_key());
    Ok(out)
}

/// Second moments of one source set, augmented with the bias channel.
pub struct SourceMoments {
    pub augmented: DMatrix<f64>,
    pub second: DMatrix<f64>,
    /// `(S + ridge I)^{-1/2}`.
    pub inv_sqrt: DMatrix<f64>,
}

impl SourceMoments {
    /// `ridge` is relative to `trace(S) / dim(S)`.
    pub fn new(blocks: &[&DMatrix<f64>], ridge: f64) -> Result<Self> {
        let rows = blocks.first().map_or(0, |b| b.nrows());
        let augmented = augment_with_bias(blocks, rows);
        let second = cross_moment(&augmented, &augmented);
        let inv_sqrt = inverse_sqrt(&second, ridge_for(&second, ridge))?;
        Ok(SourceMoments {
            augmented,
            second,
            inv_sqrt,
        })
    }

    pub fn cost(&self) -> u64 {
        let (n, p) = self.augmented.shape();
        flops_gram(n, p, p) + flops_sym_eigen(p) + flops_matmul(p, p, p)
    }

    pub fn dim(&self) -> usize {
        self.augmented.ncols()
    }
}

/// Rank-k solution of the linearized new-neuron problem.
#[derive(Debug, Clone)]
pub struct NeuronFit {
    /// `k x (p + 1)`; the last column is the bias of the new units.
    pub alpha: DMatrix<f64>,
    /// `d x k`.
    pub omega: DMatrix<f64>,
    /// Singular values of the whitened cross-moment, decreasing.
    pub singular: Vec<f64>,
    pub rank: usize,
}

/// Fit `k` new units so that `slope * omega * alpha * b` best matches the
/// residual, where `slope` is the activation's slope at 0.
///
/// With `W = (S + ridge)^{-1/2}` and `M = W N`, the top-k singular triplets
/// `(u_j, s_j, v_j)` of `M` give `alpha_j = W u_j` and `omega_j = s_j v_j / slope`.
/// Units beyond the rank of `M` get `omega = 0` and a random `alpha` of unit
/// norm in the `S` metric.
pub fn fit_new_neurons_with(
    moments: &SourceMoments,
    residual: &DMatrix<f64>,
    neurons: usize,
    activation: Activation,
    rng: &mut impl Rng,
    flops: &mut FlopCounter,
) -> Result<NeuronFit> {
    let slope = activation.slope_at_zero();
    if slope == 0.0 {
        return Err(Error::UnsupportedActivation(activation));
    }
    let (n, p) = moments.augmented.shape();
    let d = residual.ncols();
    if residual.nrows() != n {
        return Err(Error::Shape(format!("residual has {} rows, sources have {n}", residual.nrows())));
    }
    let cross = cross_moment(&moments.augmented, residual);
    let m = &moments.inv_sqrt * cross;
    let svd = sorted_svd(&m)?;
    flops.book(
        Phase::CandidateSolve,
        flops_gram(n, p, d) + flops_matmul(p, p, d) + flops_svd(p, d) + flops_matmul(p, p, neurons),
    );
    let rank = numerical_rank(&svd.singular, p, d);
    let mut alpha = DMatrix::zeros(neurons, p);
    let mut omega = DMatrix::zeros(d, neurons);
    for j in 0..neurons {
        if j < rank {
            let dir = &moments.inv_sqrt * svd.u.column(j);
            alpha.row_mut(j).copy_from(&dir.transpose());
            omega.column_mut(j).copy_from(&(svd.v.column(j) * (svd.singular[j] / slope)));
        } else {
            let mut r = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
            let norm = r.norm();
            if norm > 0.0 {
                r /= norm;
            }
            let dir = &moments.inv_sqrt * r;
            alpha.row_mut(j).copy_from(&dir.transpose());
        }
    }
    Ok(NeuronFit {
        alpha,
        omega,
        singular: svd.singular,
        rank,
    })
}

/// Convenience wrapper computing the source moments first. `sources` excludes
/// the bias channel.
pub fn fit_new_neurons(
    sources: &DMatrix<f64>,
    residual: &DMatrix<f64>,
    neurons: usize,
    activation: Activation,
    ridge: f64,
    rng: &mut impl Rng,
) -> Result<NeuronFit> {
    let moments = SourceMoments::new(&[sources], ridge)?;
    fit_new_neurons_with(&moments, residual, neurons, activation, rng, &mut FlopCounter::default())
}

/// Least-squares layer from the sources to the residual: `(weight, bias)`.
pub fn fit_direct_edge_with(
    moments: &SourceMoments,
    residual: &DMatrix<f64>,
    flops: &mut FlopCounter,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (n, p) = moments.augmented.shape();
    let d = residual.ncols();
    if residual.nrows() != n {
        return Err(Error::Shape(format!("residual has {} rows, sources have {n}", residual.nrows())));
    }
    let cross = cross_moment(&moments.augmented, residual);
    let coef = &moments.inv_sqrt * (&moments.inv_sqrt * cross);
    flops.book(Phase::CandidateSolve, flops_gram(n, p, d) + 2 * flops_matmul(p, p, d));
    let weight = coef.rows(0, p - 1).transpose();
    let bias = coef.row(p - 1).transpose();
    Ok((weight, bias))
}

pub fn fit_direct_edge(
    sources: &DMatrix<f64>,
    residual: &DMatrix<f64>,
    ridge: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let moments = SourceMoments::new(&[sources], ridge)?;
    fit_direct_edge_with(&moments, residual, &mut FlopCounter::default())
}

/// `mean || slope * (b alpha^T) omega^T - v ||^2`, the linearized objective.
pub fn linearized_objective(
    augmented: &DMatrix<f64>,
    residual: &DMatrix<f64>,
    alpha: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    slope: f64,
) -> f64 {
    let pred = (augmented * alpha.transpose()) * omega.transpose() * slope;
    (pred - residual).norm_squared() / augmented.nrows().max(1) as f64
}

#[derive(Debug, Clone)]
pub enum ExpansionWeights {
    /// Unscaled layer; applied as `gamma * weight`, `gamma * bias`.
    Edge { weight: DMatrix<f64>, bias: DVector<f64> },
    /// New units; `omega` is scaled by `gamma` on application.
    Neurons { alpha: DMatrix<f64>, omega: DMatrix<f64> },
}

#[derive(Debug, Clone)]
pub struct FittedExpansion {
    pub kind: ExpansionKind,
    pub weights: ExpansionWeights,
    /// Optional updates of existing in-edges at the targets, also scaled by gamma.
    pub in_updates: Vec<InEdgeUpdate>,
}

impl FittedExpansion {
    /// Whether the fitted contribution is identically zero.
    pub fn is_inactive(&self) -> bool {
        let new_zero = match &self.weights {
            ExpansionWeights::Edge { weight, bias } => weight.amax() == 0.0 && bias.amax() == 0.0,
            ExpansionWeights::Neurons { omega, .. } => omega.amax() == 0.0,
        };
        new_zero
            && self
                .in_updates
                .iter()
                .all(|u| u.weight.amax() == 0.0 && u.bias.amax() == 0.0)
    }
}

/// Apply a fitted expansion with amplitude `gamma`. Returns the new network
/// and the lowest rank whose activations may differ from the original.
pub fn apply_expansion(net: &DagNetwork, fitted: &FittedExpansion, gamma: f64) -> Result<(DagNetwork, usize)> {
    let mut out = net.clone();
    for u in &fitted.in_updates {
        let e = out
            .edge(u.edge)
            .ok_or_else(|| Error::InvalidCandidate(format!("unknown edge {}", u.edge)))?;
        if e.weight.shape() != u.weight.shape() || e.bias.len() != u.bias.len() {
            return Err(Error::InvalidCandidate(format!("update does not fit edge {}", u.edge)));
        }
        let edge = out.edge_mut(u.edge);
        edge.weight += &u.weight * gamma;
        edge.bias += &u.bias * gamma;
    }
    let start = match (&fitted.kind, &fitted.weights) {
        (ExpansionKind::DirectEdge { src, dst }, ExpansionWeights::Edge { weight, bias }) => {
            out.add_edge(*src, *dst, weight * gamma, bias * gamma)?;
            out.rank(*dst)
        }
        (
            ExpansionKind::NewNode {
                src,
                dst,
                neurons,
                activation,
            },
            ExpansionWeights::Neurons { alpha, omega },
        ) => {
            let p = net.width(*src);
            check_neurons(alpha, omega, *neurons, p + 1, net.width(*dst))?;
            if net.rank(*src) >= net.rank(*dst) {
                return Err(Error::InvalidCandidate(format!("{} goes against the rank order", fitted.kind)));
            }
            let id = out.insert_node_before(*dst, *neurons, *activation)?;
            out.add_edge(*src, id, alpha.columns(0, p).into_owned(), alpha.column(p).into_owned())?;
            out.add_edge(id, *dst, omega * gamma, DVector::zeros(net.width(*dst)))?;
            out.rank(id)
        }
        (ExpansionKind::WidenNode { node, neurons }, ExpansionWeights::Neurons { alpha, omega }) => {
            widen(&mut out, net, *node, *neurons, alpha, omega, gamma)?;
            out.rank(*node)
        }
        _ => {
            return Err(Error::InvalidCandidate(format!(
                "weights do not match expansion {}",
                fitted.kind
            )))
        }
    };
    out.ensure_valid()?;
    Ok((out, start))
}

fn check_neurons(alpha: &DMatrix<f64>, omega: &DMatrix<f64>, k: usize, p: usize, d: usize) -> Result<()> {
    if alpha.shape() != (k, p) || omega.shape() != (d, k) {
        return Err(Error::InvalidCandidate(format!(
            "alpha {:?} / omega {:?} do not match {k} units from {p} inputs to {d} outputs",
            alpha.shape(),
            omega.shape()
        )));
    }
    Ok(())
}

fn widen(
    out: &mut DagNetwork,
    net: &DagNetwork,
    node: NodeId,
    k: usize,
    alpha: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    gamma: f64,
) -> Result<()> {
    if !net.is_hidden(node) {
        return Err(Error::InvalidCandidate(format!("{node} is not a hidden node")));
    }
    let ins: Vec<_> = net.in_edges(node).map(|e| (e.id, net.width(e.src))).collect();
    let outs: Vec<_> = net.out_edges(node).map(|e| (e.id, net.width(e.dst))).collect();
    let p: usize = ins.iter().map(|(_, w)| w).sum::<usize>() + 1;
    let d: usize = outs.iter().map(|(_, w)| w).sum();
    check_neurons(alpha, omega, k, p, d)?;
    let old = net.width(node);
    let mut at = 0;
    for (i, &(eid, w)) in ins.iter().enumerate() {
        let edge = out.edge_mut(eid);
        let mut weight = edge.weight.clone().resize_vertically(old + k, 0.0);
        weight.rows_mut(old, k).copy_from(&alpha.columns(at, w));
        let mut bias = edge.bias.clone().resize_vertically(old + k, 0.0);
        if i == 0 {
            bias.rows_mut(old, k).copy_from(&alpha.column(p - 1));
        }
        edge.weight = weight;
        edge.bias = bias;
        at += w;
    }
    let mut at = 0;
    for &(eid, w) in &outs {
        let edge = out.edge_mut(eid);
        let mut weight = edge.weight.clone().resize_horizontally(old + k, 0.0);
        weight.columns_mut(old, k).copy_from(&(omega.rows(at, w) * gamma));
        edge.weight = weight;
        at += w;
    }
    out.node_mut(node).width = old + k;
    Ok(())
}

/// Amplitudes tried by the line search: `0` and `±2^j * base` for `j = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaGrid {
    pub base: f64,
    pub steps: u32,
}

impl Default for GammaGrid {
    fn default() -> Self {
        GammaGrid {
            base: 1.0 / 16.0,
            steps: 8,
        }
    }
}

impl GammaGrid {
    /// `0` first, then increasing magnitude with the positive sign first.
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![0.0];
        for j in 0..=self.steps {
            let g = self.base * 2f64.powi(j as i32);
            v.push(g);
            v.push(-g);
        }
        v
    }
}

/// Batch activations of the base network plus targets, for one data split.
pub struct EvalBatch<'a> {
    pub cache: &'a ActivationCache,
    pub targets: &'a DMatrix<f64>,
}

fn expanded_loss(
    net: &DagNetwork,
    fitted: &FittedExpansion,
    gamma: f64,
    batch: &EvalBatch<'_>,
    kind: LossKind,
    flops: &mut FlopCounter,
) -> Result<f64> {
    let (grown, start) = apply_expansion(net, fitted, gamma)?;
    let out = forward_output_from(&grown, batch.cache, start)?;
    flops.book(Phase::CandidateForward, flops_forward_from(&grown, batch.cache.batch_size(), start));
    loss(&out, batch.targets, kind)
}

/// Grid search of the amplitude on train-ls. Ties keep the earlier grid
/// entry, so an inactive candidate gets `gamma = 0`.
pub fn line_search_gamma(
    net: &DagNetwork,
    fitted: &FittedExpansion,
    batch: &EvalBatch<'_>,
    kind: LossKind,
    grid: &GammaGrid,
    flops: &mut FlopCounter,
) -> Result<(f64, f64)> {
    if batch.cache.batch_size() == 0 {
        return Err(Error::EmptyDataset("train-ls is empty"));
    }
    let mut best = (0.0, f64::INFINITY);
    for gamma in grid.values() {
        let l = expanded_loss(net, fitted, gamma, batch, kind, flops)?;
        if l < best.1 {
            best = (gamma, l);
        }
    }
    Ok(best)
}

/// Loss of the expanded network on train-gr without further training.
pub fn estimate_candidate(
    net: &DagNetwork,
    fitted: &FittedExpansion,
    gamma: f64,
    batch: &EvalBatch<'_>,
    kind: LossKind,
    flops: &mut FlopCounter,
) -> Result<f64> {
    if batch.cache.batch_size() == 0 {
        return Err(Error::EmptyDataset("train-gr is empty"));
    }
    expanded_loss(net, fitted, gamma, batch, kind, flops)
}

/// A fitted, line-searched and estimated candidate.
#[derive(Debug, Clone)]
pub struct ExpansionCandidate {
    /// Position in the enumeration, used for tie-breaking.
    pub index: usize,
    pub fitted: FittedExpansion,
    pub gamma: f64,
    pub loss_ls: f64,
    pub est_loss_gr: f64,
    pub param_delta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    pub neurons: usize,
    pub activation: Activation,
    /// Relative ridge for every least-squares solve.
    pub ridge: f64,
    pub gamma_grid: GammaGrid,
    /// Also move existing in-edges of the targets along the projection's
    /// optimal update (scaled by the same gamma).
    pub apply_dw_star: bool,
    pub seed: u64,
}

impl Default for GrowthParams {
    fn default() -> Self {
        GrowthParams {
            neurons: 10,
            activation: Activation::Selu,
            ridge: crate::bottleneck::DEFAULT_RIDGE,
            gamma_grid: GammaGrid::default(),
            apply_dw_star: false,
            seed: 0,
        }
    }
}

/// Everything candidate evaluation reads: the projections on train-opt and
/// base activations on all three training parts.
pub struct GrowthContext<'a> {
    pub report: &'a BottleneckReport,
    pub opt_cache: &'a ActivationCache,
    pub ls: EvalBatch<'a>,
    pub gr: EvalBatch<'a>,
    pub loss: LossKind,
}

fn residual_at(report: &BottleneckReport, targets: &[NodeId], rows: usize) -> Result<DMatrix<f64>> {
    let parts: Vec<&DMatrix<f64>> = targets
        .iter()
        .map(|t| {
            report
                .get(*t)
                .map(|p| &p.v_orth)
                .ok_or_else(|| Error::InvalidCandidate(format!("no bottleneck computed at {t}")))
        })
        .collect::<Result<_>>()?;
    let width = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, width);
    let mut at = 0;
    for p in parts {
        out.columns_mut(at, p.ncols()).copy_from(p);
        at += p.ncols();
    }
    Ok(out)
}

/// Fit the new weights of one candidate against the residual at its targets.
pub fn fit_candidate(
    net: &DagNetwork,
    kind: &ExpansionKind,
    ctx: &GrowthContext<'_>,
    moments: &SourceMoments,
    params: &GrowthParams,
    rng: &mut impl Rng,
    flops: &mut FlopCounter,
) -> Result<FittedExpansion> {
    let targets = kind.targets(net);
    let residual = residual_at(ctx.report, &targets, ctx.opt_cache.batch_size())?;
    let weights = match *kind {
        ExpansionKind::DirectEdge { .. } => {
            let (weight, bias) = fit_direct_edge_with(moments, &residual, flops)?;
            ExpansionWeights::Edge { weight, bias }
        }
        ExpansionKind::NewNode {
            neurons, activation, ..
        } => {
            let fit = fit_new_neurons_with(moments, &residual, neurons, activation, rng, flops)?;
            ExpansionWeights::Neurons {
                alpha: fit.alpha,
                omega: fit.omega,
            }
        }
        ExpansionKind::WidenNode { node, neurons } => {
            let act = net.node(node)?.activation;
            let fit = fit_new_neurons_with(moments, &residual, neurons, act, rng, flops)?;
            ExpansionWeights::Neurons {
                alpha: fit.alpha,
                omega: fit.omega,
            }
        }
    };
    let in_updates = if params.apply_dw_star {
        targets
            .iter()
            .filter_map(|t| ctx.report.get(*t))
            .flat_map(|p| p.best_in_updates.iter().cloned())
            .collect()
    } else {
        Vec::new()
    };
    Ok(FittedExpansion {
        kind: *kind,
        weights,
        in_updates,
    })
}

fn candidate_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fit, line-search and estimate every candidate. Candidates are processed
/// in parallel; results and cost bookings come back in enumeration order.
pub fn evaluate_candidates(
    net: &DagNetwork,
    kinds: &[ExpansionKind],
    ctx: &GrowthContext<'_>,
    params: &GrowthParams,
    flops: &mut FlopCounter,
) -> Result<Vec<ExpansionCandidate>> {
    let mut moments: BTreeMap<Vec<NodeId>, SourceMoments> = BTreeMap::new();
    for kind in kinds {
        let key = kind.sources(net);
        if let Entry::Vacant(slot) = moments.entry(key) {
            let blocks: Vec<&DMatrix<f64>> = slot.key().iter().map(|s| ctx.opt_cache.post(*s)).collect();
            let m = SourceMoments::new(&blocks, params.ridge)?;
            flops.book(Phase::CandidateSolve, m.cost());
            slot.insert(m);
        }
    }
    let results: Vec<Result<(ExpansionCandidate, FlopCounter)>> = kinds
        .par_iter()
        .enumerate()
        .map(|(index, kind)| {
            let mut local = FlopCounter::default();
            let mut rng = ChaCha8Rng::seed_from_u64(candidate_seed(params.seed, index));
            let m = &moments[&kind.sources(net)];
            let fitted = fit_candidate(net, kind, ctx, m, params, &mut rng, &mut local)?;
            let (gamma, loss_ls) = line_search_gamma(net, &fitted, &ctx.ls, ctx.loss, &params.gamma_grid, &mut local)?;
            let est_loss_gr = estimate_candidate(net, &fitted, gamma, &ctx.gr, ctx.loss, &mut local)?;
            Ok((
                ExpansionCandidate {
                    index,
                    param_delta: kind.param_delta(net),
                    fitted,
                    gamma,
                    loss_ls,
                    est_loss_gr,
                },
                local,
            ))
        })
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        let (c, local) = r?;
        flops.merge(&local);
        out.push(c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netdag::{forward, uniform_layer};

    fn diamond(rng: &mut ChaCha8Rng) -> DagNetwork {
        let mut net = DagNetwork::empty(3, 2);
        let h = net.insert_node_before(net.output(), 4, Activation::Selu).unwrap();
        for (s, d) in [(net.input(), h), (h, net.output()), (net.input(), net.output())] {
            let (w, b) = uniform_layer(rng, net.width(d), net.width(s));
            net.add_edge(s, d, w, b).unwrap();
        }
        net
    }

    #[test]
    fn empty_net_has_two_candidates() {
        let net = DagNetwork::empty(4, 1);
        let c = enumerate_candidates(&net, Scope::Whole, 10, Activation::Selu).unwrap();
        assert_eq!(
            c,
            vec![
                ExpansionKind::DirectEdge {
                    src: net.input(),
                    dst: net.output()
                },
                ExpansionKind::NewNode {
                    src: net.input(),
                    dst: net.output(),
                    neurons: 10,
                    activation: Activation::Selu
                },
            ]
        );
    }

    #[test]
    fn diamond_enumeration_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = diamond(&mut rng);
        let whole = enumerate_candidates(&net, Scope::Whole, 5, Activation::Selu).unwrap();
        // 3 ordered pairs, all already connected: 0 edges + 3 new nodes + 1 widen
        assert_eq!(whole.len(), 4);
        let restricted = enumerate_candidates(&net, Scope::NodeRestricted(net.output()), 5, Activation::Selu).unwrap();
        assert_eq!(restricted.len(), 2);
        assert!(restricted.iter().all(|c| whole.contains(c)));
    }

    #[test]
    fn restricting_to_a_missing_node_fails() {
        let net = DagNetwork::empty(2, 1);
        assert!(enumerate_candidates(&net, Scope::NodeRestricted(NodeId(7)), 1, Activation::Selu).is_err());
    }

    #[test]
    fn zero_residual_gives_inactive_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = DMatrix::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0));
        let fit = fit_new_neurons(&b, &DMatrix::zeros(30, 2), 3, Activation::Selu, 1e-8, &mut rng).unwrap();
        assert_eq!(fit.rank, 0);
        assert_eq!(fit.omega.amax(), 0.0);
        let (w, bias) = fit_direct_edge(&b, &DMatrix::zeros(30, 2), 1e-8).unwrap();
        assert_eq!(w.amax(), 0.0);
        assert_eq!(bias.amax(), 0.0);
    }

    #[test]
    fn relu_cannot_seed_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let r = fit_new_neurons(&b, &DMatrix::zeros(5, 1), 1, Activation::Relu, 1e-6, &mut rng);
        assert!(matches!(r, Err(Error::UnsupportedActivation(Activation::Relu))));
    }

    #[test]
    fn direct_edge_fits_one_sample_exactly() {
        let b = DMatrix::from_row_slice(1, 2, &[0.3, -0.8]);
        let v = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -0.5]);
        let moments = SourceMoments::new(&[&b], 0.0).unwrap();
        let (w, bias) = fit_direct_edge_with(&moments, &v, &mut FlopCounter::default()).unwrap();
        let pred = &b * w.transpose() + DMatrix::from_fn(1, 3, |_, j| bias[j]);
        assert!((pred - v).amax() < 1e-12);
    }

    #[test]
    fn grid_starts_at_zero_and_is_symmetric() {
        let g = GammaGrid::default().values();
        assert_eq!(g.len(), 19);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 1.0 / 16.0);
        assert_eq!(g[2], -1.0 / 16.0);
        assert_eq!(*g.last().unwrap(), -16.0);
    }

    #[test]
    fn new_node_on_empty_net_adds_expected_parameters() {
        let net = DagNetwork::empty(6, 3);
        let kind = ExpansionKind::NewNode {
            src: net.input(),
            dst: net.output(),
            neurons: 10,
            activation: Activation::Tanh,
        };
        let fitted = FittedExpansion {
            kind,
            weights: ExpansionWeights::Neurons {
                alpha: DMatrix::from_element(10, 7, 0.1),
                omega: DMatrix::from_element(3, 10, 0.2),
            },
            in_updates: vec![],
        };
        let (grown, _) = apply_expansion(&net, &fitted, 0.5).unwrap();
        assert_eq!(grown.param_count(), (10 * 6 + 10) + (3 * 10 + 3));
        assert_eq!(kind.param_delta(&net), grown.param_count());
    }

    #[test]
    fn widening_grows_every_adjacent_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = diamond(&mut rng);
        let h = NodeId(2);
        let kind = ExpansionKind::WidenNode { node: h, neurons: 3 };
        let fitted = FittedExpansion {
            kind,
            weights: ExpansionWeights::Neurons {
                alpha: DMatrix::from_element(3, 4, 0.1),
                omega: DMatrix::from_element(2, 3, 0.2),
            },
            in_updates: vec![],
        };
        let (grown, start) = apply_expansion(&net, &fitted, 1.0).unwrap();
        assert_eq!(start, net.rank(h));
        assert_eq!(grown.width(h), 7);
        for e in grown.out_edges(h) {
            assert_eq!(e.weight.ncols(), 7);
        }
        assert_eq!(grown.param_count() - net.param_count(), kind.param_delta(&net));
        let x = DMatrix::from_fn(4, 3, |i, j| (i + j) as f64 * 0.1);
        let (gamma0, _) = apply_expansion(&net, &fitted, 0.0).unwrap();
        let a = forward(&net, &x).unwrap().0;
        let b = forward(&gamma0, &x).unwrap().0;
        assert!((a - b).amax() < 1e-12);
    }
}
