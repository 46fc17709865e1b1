use super::{DagNetwork, EdgeId, NodeId};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::borrow::Cow;

/// Per-node pre-activities `A` and post-activities `B` for one batch, rows
/// are samples. The input node has no pre-activity and `B = x`.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    pre: Vec<Option<DMatrix<f64>>>,
    post: Vec<DMatrix<f64>>,
    batch: usize,
}

impl ActivationCache {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn pre(&self, id: NodeId) -> Option<&DMatrix<f64>> {
        self.pre.get(id.0).and_then(|p| p.as_ref())
    }

    pub fn post(&self, id: NodeId) -> &DMatrix<f64> {
        &self.post[id.0]
    }

    pub fn node_count(&self) -> usize {
        self.post.len()
    }

    fn covers(&self, net: &DagNetwork) -> bool {
        self.post.len() == net.nodes().len()
            && net.nodes().iter().all(|n| {
                self.post[n.id.0].shape() == (self.batch, n.width)
            })
    }
}

/// Weight and bias gradients of the batch-mean loss for one edge.
#[derive(Debug, Clone)]
pub struct EdgeGrad {
    pub edge: EdgeId,
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Backprop {
    /// Per node, the per-sample negative loss gradient at its pre-activity.
    /// `None` for the input node.
    pub desired: Vec<Option<DMatrix<f64>>>,
    /// Aligned with `net.edges()`.
    pub grads: Vec<EdgeGrad>,
}

impl Backprop {
    pub fn desired(&self, id: NodeId) -> Option<&DMatrix<f64>> {
        self.desired.get(id.0).and_then(|d| d.as_ref())
    }
}

fn pre_activity<'a>(
    net: &DagNetwork,
    id: NodeId,
    batch: usize,
    post: impl Fn(NodeId) -> &'a DMatrix<f64>,
) -> DMatrix<f64> {
    let width = net.width(id);
    let mut a = DMatrix::zeros(batch, width);
    for e in net.in_edges(id) {
        a.gemm(1.0, post(e.src), &e.weight.transpose(), 1.0);
        for (j, b) in e.bias.iter().enumerate() {
            a.column_mut(j).add_scalar_mut(*b);
        }
    }
    a
}

fn activate(net: &DagNetwork, id: NodeId, a: &DMatrix<f64>) -> DMatrix<f64> {
    let act = net.nodes()[id.0].activation;
    a.map(|v| act.apply(v))
}

fn check_input(net: &DagNetwork, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != net.input_width() {
        return Err(Error::Shape(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            net.input_width()
        )));
    }
    Ok(())
}

/// Evaluate the network on a batch, keeping every node's activations.
pub fn forward(net: &DagNetwork, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ActivationCache)> {
    check_input(net, x)?;
    let n = x.nrows();
    let count = net.nodes().len();
    let mut pre: Vec<Option<DMatrix<f64>>> = vec![None; count];
    let mut post: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); count];
    post[net.input().0] = x.clone();
    for id in net.topo_order() {
        if id == net.input() {
            continue;
        }
        let a = pre_activity(net, id, n, |s| &post[s.0]);
        post[id.0] = activate(net, id, &a);
        pre[id.0] = Some(a);
    }
    let out = post[net.output().0].clone();
    Ok((out, ActivationCache { pre, post, batch: n }))
}

/// Output of `net` when every node ranked below `start_rank` is known to
/// produce the same post-activity as in `reuse`. Only the remaining nodes
/// are recomputed.
pub fn forward_output_from(
    net: &DagNetwork,
    reuse: &ActivationCache,
    start_rank: usize,
) -> Result<DMatrix<f64>> {
    let n = reuse.batch;
    let mut post: Vec<Option<Cow<'_, DMatrix<f64>>>> = vec![None; net.nodes().len()];
    for node in net.nodes() {
        if node.rank < start_rank || node.id == net.input() {
            let cached = reuse
                .post
                .get(node.id.0)
                .filter(|m| m.shape() == (n, node.width))
                .ok_or_else(|| Error::Shape(format!("no reusable activations for {}", node.id)))?;
            post[node.id.0] = Some(Cow::Borrowed(cached));
        }
    }
    for id in net.topo_order() {
        if post[id.0].is_some() {
            continue;
        }
        let a = pre_activity(net, id, n, |s| post[s.0].as_deref().expect("rank order"));
        post[id.0] = Some(Cow::Owned(activate(net, id, &a)));
    }
    Ok(post[net.output().0].take().expect("output computed").into_owned())
}

/// Output only, no cache retained.
pub fn predict(net: &DagNetwork, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(forward(net, x)?.0)
}

/// Reverse-rank accumulation of desired updates and parameter gradients.
///
/// `v_goal` is the per-sample negative loss gradient at the output; the
/// returned gradients are those of the batch-mean loss.
pub fn backward(net: &DagNetwork, cache: &ActivationCache, v_goal: &DMatrix<f64>) -> Result<Backprop> {
    if !cache.covers(net) {
        return Err(Error::Shape("activation cache does not match the network".into()));
    }
    let n = cache.batch;
    if v_goal.shape() != (n, net.output_width()) {
        return Err(Error::Shape(format!(
            "functional gradient is {:?}, expected ({n}, {})",
            v_goal.shape(),
            net.output_width()
        )));
    }
    let count = net.nodes().len();
    // desired updates w.r.t. post-activities, accumulated from consumers
    let mut post_goal: Vec<Option<DMatrix<f64>>> = vec![None; count];
    let mut desired: Vec<Option<DMatrix<f64>>> = vec![None; count];
    post_goal[net.output().0] = Some(v_goal.clone());
    let mut order = net.topo_order();
    order.reverse();
    for id in order {
        if id == net.input() {
            continue;
        }
        let width = net.width(id);
        let act = net.nodes()[id.0].activation;
        let mut d = post_goal[id.0]
            .take()
            .unwrap_or_else(|| DMatrix::zeros(n, width));
        if let Some(a) = cache.pre(id) {
            d.zip_apply(a, |g, a| *g *= act.derivative(a));
        }
        for e in net.in_edges(id) {
            if e.src == net.input() {
                continue;
            }
            let slot = post_goal[e.src.0].get_or_insert_with(|| DMatrix::zeros(n, net.width(e.src)));
            slot.gemm(1.0, &d, &e.weight, 1.0);
        }
        desired[id.0] = Some(d);
    }
    let scale = if n == 0 { 0.0 } else { -1.0 / n as f64 };
    let grads = net
        .edges()
        .iter()
        .map(|e| {
            let d = desired[e.dst.0].as_ref().expect("non-input node");
            let weight = d.tr_mul(cache.post(e.src)) * scale;
            let bias = d.row_sum().transpose() * scale;
            EdgeGrad {
                edge: e.id,
                weight,
                bias,
            }
        })
        .collect();
    Ok(Backprop { desired, grads })
}
