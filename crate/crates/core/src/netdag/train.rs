use super::{backward, forward, loss, loss_and_functional_gradient, DagNetwork, LossKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{flops_backward, flops_forward, FlopCounter, Phase};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Uniform `±1/sqrt(fan_in)` weight matrix and bias for a `fan_out x fan_in` layer.
pub fn uniform_layer<R: Rng>(rng: &mut R, fan_out: usize, fan_in: usize) -> (DMatrix<f64>, DVector<f64>) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let w = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
    let b = DVector::from_fn(fan_out, |_, _| rng.random_range(-bound..bound));
    (w, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            epochs: 1,
            batch_size: 32,
            learning_rate: 1e-2,
            momentum: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sample-weighted mean of the mini-batch losses seen during the epoch.
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Mini-batch SGD with momentum over `data`, reshuffled every epoch.
pub fn train_epochs(
    net: &mut DagNetwork,
    data: &Dataset,
    kind: LossKind,
    cfg: &SgdConfig,
    flops: &mut FlopCounter,
) -> Result<Vec<EpochStats>> {
    train_epochs_with(net, data, kind, cfg, flops, |_, _| {})
}

/// As [`train_epochs`], calling `on_epoch` after every epoch.
pub fn train_epochs_with(
    net: &mut DagNetwork,
    data: &Dataset,
    kind: LossKind,
    cfg: &SgdConfig,
    flops: &mut FlopCounter,
    mut on_epoch: impl FnMut(&EpochStats, &FlopCounter),
) -> Result<Vec<EpochStats>> {
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Domain("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity: Vec<(DMatrix<f64>, DVector<f64>)> = net
        .edges()
        .iter()
        .map(|e| (DMatrix::zeros(e.weight.nrows(), e.weight.ncols()), DVector::zeros(e.bias.len())))
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let (out, cache) = forward(net, &batch.x)?;
            let (l, goal) = loss_and_functional_gradient(&out, &batch.y, kind)?;
            let bp = backward(net, &cache, &goal)?;
            flops.book(Phase::TrainForward, flops_forward(net, chunk.len()));
            flops.book(Phase::TrainBackward, flops_backward(net, chunk.len()));
            loss_sum += l * chunk.len() as f64;
            if kind == LossKind::SoftmaxCrossEntropy {
                hits += super::accuracy(&out, &batch.y) * chunk.len() as f64;
            }
            for (g, (vw, vb)) in bp.grads.iter().zip(velocity.iter_mut()) {
                *vw *= cfg.momentum;
                *vw += &g.weight;
                *vb *= cfg.momentum;
                *vb += &g.bias;
                let edge = net.edge_mut(g.edge);
                edge.weight.zip_apply(vw, |w, v| *w -= cfg.learning_rate * v);
                edge.bias.zip_apply(vb, |b, v| *b -= cfg.learning_rate * v);
            }
        }
        let n = data.len() as f64;
        let mean = loss_sum / n;
        if !mean.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let st = EpochStats {
            epoch: epoch + 1,
            loss: mean,
            accuracy: (kind == LossKind::SoftmaxCrossEntropy).then_some(hits / n),
        };
        on_epoch(&st, flops);
        stats.push(st);
    }
    Ok(stats)
}

/// Loss and (for classification) accuracy of `net` on a whole dataset.
pub fn evaluate(
    net: &DagNetwork,
    data: &Dataset,
    kind: LossKind,
    flops: &mut FlopCounter,
) -> Result<(f64, Option<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluation set is empty"));
    }
    let (out, _) = forward(net, &data.x)?;
    flops.book(Phase::Evaluation, flops_forward(net, data.len()));
    let l = loss(&out, &data.y, kind)?;
    let acc = (kind == LossKind::SoftmaxCrossEntropy).then(|| super::accuracy(&out, &data.y));
    Ok((l, acc))
}
