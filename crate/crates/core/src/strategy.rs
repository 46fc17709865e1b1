//! The growth loop: split discipline, candidate scoping, selection and the
//! alternation of growth steps with inter-training.

use crate::bottleneck::{batch_state, report_from_state, PsiNormalize, DEFAULT_RIDGE};
use crate::data::DatasetSplits;
use crate::error::{Error, Result};
use crate::growth::{
    apply_expansion, enumerate_candidates, evaluate_candidates, EvalBatch, ExpansionCandidate, ExpansionKind,
    GammaGrid, GrowthContext, GrowthParams, Scope,
};
use crate::metrics::{
    flops_forward, FlopCounter, MetricsRow, Phase, RunMetrics, StepSummary, EPOCH_SPLIT, EVAL_SPLITS,
};
use crate::netdag::{evaluate, forward, loss, train_epochs_with, Activation, DagNetwork, LossKind, SgdConfig};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "whole")]
    WholeSearchSpace,
    #[serde(rename = "restricted")]
    BottleneckRestricted,
    #[serde(rename = "bic")]
    BicRestricted,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::WholeSearchSpace,
        StrategyKind::BottleneckRestricted,
        StrategyKind::BicRestricted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::WholeSearchSpace => "whole",
            StrategyKind::BottleneckRestricted => "restricted",
            StrategyKind::BicRestricted => "bic",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown strategy '{s}' (expected whole, restricted or bic)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BicVariant {
    /// `k ln n - 2 ln loss`.
    #[default]
    #[serde(rename = "loss")]
    Loss,
    /// `k ln n + n ln mse`, the Gaussian-likelihood form.
    #[serde(rename = "n-log-mse")]
    NLogMse,
}

impl FromStr for BicVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "loss" => Ok(BicVariant::Loss),
            "n-log-mse" => Ok(BicVariant::NLogMse),
            other => Err(format!("unknown BIC variant '{other}' (expected loss or n-log-mse)")),
        }
    }
}

/// Smallest loss fed to a logarithm.
pub const BIC_LOSS_FLOOR: f64 = 1e-12;

/// `k ln(n) - 2 ln(loss)`, with the loss floored at [`BIC_LOSS_FLOOR`].
pub fn bic(k: usize, n: usize, loss: f64) -> Result<f64> {
    bic_with(BicVariant::Loss, k, n, loss)
}

pub fn bic_with(variant: BicVariant, k: usize, n: usize, loss: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("BIC needs at least one sample".into()));
    }
    if !(loss > 0.0) {
        return Err(Error::Domain(format!("BIC needs a positive loss, got {loss}")));
    }
    let l = loss.max(BIC_LOSS_FLOOR).ln();
    let penalty = k as f64 * (n as f64).ln();
    Ok(match variant {
        BicVariant::Loss => penalty - 2.0 * l,
        BicVariant::NLogMse => penalty + n as f64 * l,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowthConfig {
    pub strategy: StrategyKind,
    pub neurons_per_step: usize,
    pub activation: Activation,
    pub inter_train_epochs: usize,
    pub max_growth_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub gamma_grid: GammaGrid,
    pub ridge: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub psi_normalize: PsiNormalize,
    pub bic_variant: BicVariant,
    pub apply_dw_star: bool,
    /// Widest a node may become; `None` is unbounded.
    pub max_node_width: Option<usize>,
    /// Most nodes the graph may hold, input and output included.
    pub max_nodes: Option<usize>,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            strategy: StrategyKind::BottleneckRestricted,
            neurons_per_step: 10,
            activation: Activation::Selu,
            inter_train_epochs: 100,
            max_growth_steps: 15,
            batch_size: 32,
            learning_rate: 1e-2,
            momentum: 0.9,
            gamma_grid: GammaGrid::default(),
            ridge: DEFAULT_RIDGE,
            seed: 0,
            loss: LossKind::Mse,
            psi_normalize: PsiNormalize::None,
            bic_variant: BicVariant::Loss,
            apply_dw_star: false,
            max_node_width: None,
            max_nodes: None,
        }
    }
}

impl GrowthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neurons_per_step == 0 {
            return Err(Error::Config("neurons_per_step must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::Config("ridge must be non-negative".into()));
        }
        if !(self.gamma_grid.base > 0.0) || !self.gamma_grid.base.is_finite() {
            return Err(Error::Config("gamma grid base must be positive".into()));
        }
        Ok(())
    }

    fn params(&self, step: usize) -> GrowthParams {
        GrowthParams {
            neurons: self.neurons_per_step,
            activation: self.activation,
            ridge: self.ridge,
            gamma_grid: self.gamma_grid,
            apply_dw_star: self.apply_dw_star,
            seed: derive_seed(self.seed, 1, step),
        }
    }

    fn sgd(&self, step: usize) -> SgdConfig {
        SgdConfig {
            epochs: self.inter_train_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            seed: derive_seed(self.seed, 2, step),
        }
    }

    fn allows(&self, net: &DagNetwork, kind: &ExpansionKind) -> bool {
        match *kind {
            ExpansionKind::DirectEdge { .. } => true,
            ExpansionKind::NewNode { neurons, .. } => {
                self.max_nodes.is_none_or(|m| net.nodes().len() < m)
                    && self.max_node_width.is_none_or(|w| neurons <= w)
            }
            ExpansionKind::WidenNode { node, neurons } => {
                self.max_node_width.is_none_or(|w| net.width(node) + neurons <= w)
            }
        }
    }
}

/// SplitMix64 finalizer over `(seed, stream, step)`.
fn derive_seed(seed: u64, stream: u64, step: usize) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add((step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One evaluated candidate as seen by the selection rule.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub kind: ExpansionKind,
    pub gamma: f64,
    pub loss_ls: f64,
    pub est_loss_gr: f64,
    pub param_delta: usize,
    /// Selection criterion; lower is better.
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub hidden_before: usize,
    pub bottleneck_node: crate::netdag::NodeId,
    pub psi: f64,
    /// Train-ls loss of the network before growing.
    pub base_loss_ls: f64,
    pub evaluated: Vec<CandidateScore>,
    /// Index into `evaluated`; `None` when no legal candidate exists.
    pub selected: Option<usize>,
    /// Cost of bottleneck computation and candidate evaluation in this step.
    pub flops: FlopCounter,
}

impl StepRecord {
    pub fn selected(&self) -> Option<&CandidateScore> {
        self.selected.map(|i| &self.evaluated[i])
    }
}

#[derive(Debug, Clone)]
pub enum StepOutcome {
    Grown { net: DagNetwork, record: StepRecord },
    /// No legal expansion is left under the configured caps.
    Saturated { record: StepRecord },
}

impl StepOutcome {
    pub fn record(&self) -> &StepRecord {
        match self {
            StepOutcome::Grown { record, .. } | StepOutcome::Saturated { record } => record,
        }
    }
}

fn score(config: &GrowthConfig, net: &DagNetwork, n_gr: usize, c: &ExpansionCandidate) -> Result<f64> {
    if !c.est_loss_gr.is_finite() {
        return Ok(f64::INFINITY);
    }
    match config.strategy {
        StrategyKind::WholeSearchSpace | StrategyKind::BottleneckRestricted => Ok(c.est_loss_gr),
        StrategyKind::BicRestricted => bic_with(
            config.bic_variant,
            net.param_count() + c.param_delta,
            n_gr,
            c.est_loss_gr.max(BIC_LOSS_FLOOR),
        ),
    }
}

/// Lowest score; ties go to the earliest candidate.
pub fn select(scores: &[CandidateScore]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s.score < scores[b].score) {
            best = Some(i);
        }
    }
    best
}

/// Bottleneck on train-opt, scoped candidate evaluation, selection, surgery.
pub fn growth_step(net: &DagNetwork, splits: &DatasetSplits, config: &GrowthConfig, step: usize) -> Result<StepOutcome> {
    let mut flops = FlopCounter::default();
    let opt = batch_state(net, &splits.train_opt, config.loss, &mut flops)?;
    let report = report_from_state(net, &opt, config.ridge, config.psi_normalize, "train_opt", &mut flops)?;
    let scope = match config.strategy {
        StrategyKind::WholeSearchSpace => Scope::Whole,
        _ => Scope::NodeRestricted(report.argmax),
    };
    let kinds: Vec<ExpansionKind> = enumerate_candidates(net, scope, config.neurons_per_step, config.activation)?
        .into_iter()
        .filter(|k| config.allows(net, k))
        .collect();

    if splits.train_ls.is_empty() || splits.train_gr.is_empty() {
        return Err(Error::EmptyDataset("train-ls and train-gr must be non-empty"));
    }
    let (ls_out, ls_cache) = forward(net, &splits.train_ls.x)?;
    flops.book(Phase::CandidateForward, flops_forward(net, splits.train_ls.len()));
    let base_loss_ls = loss(&ls_out, &splits.train_ls.y, config.loss)?;

    let mut record = StepRecord {
        step,
        hidden_before: net.hidden_count(),
        bottleneck_node: report.argmax,
        psi: report.psi(report.argmax).unwrap_or(0.0),
        base_loss_ls,
        evaluated: Vec::new(),
        selected: None,
        flops,
    };
    if kinds.is_empty() {
        return Ok(StepOutcome::Saturated { record });
    }

    let (_, gr_cache) = forward(net, &splits.train_gr.x)?;
    record
        .flops
        .book(Phase::CandidateForward, flops_forward(net, splits.train_gr.len()));
    let ctx = GrowthContext {
        report: &report,
        opt_cache: &opt.cache,
        ls: EvalBatch {
            cache: &ls_cache,
            targets: &splits.train_ls.y,
        },
        gr: EvalBatch {
            cache: &gr_cache,
            targets: &splits.train_gr.y,
        },
        loss: config.loss,
    };
    let candidates = evaluate_candidates(net, &kinds, &ctx, &config.params(step), &mut record.flops)?;
    let n_gr = splits.train_gr.len();
    record.evaluated = candidates
        .iter()
        .map(|c| {
            Ok(CandidateScore {
                kind: c.fitted.kind,
                gamma: c.gamma,
                loss_ls: c.loss_ls,
                est_loss_gr: c.est_loss_gr,
                param_delta: c.param_delta,
                score: score(config, net, n_gr, c)?,
            })
        })
        .collect::<Result<_>>()?;
    record.selected = select(&record.evaluated);
    let chosen = &candidates[record.selected.expect("non-empty")];
    let (grown, _) = apply_expansion(net, &chosen.fitted, chosen.gamma)?;
    Ok(StepOutcome::Grown { net: grown, record })
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub net: DagNetwork,
    pub metrics: RunMetrics,
    pub flops: FlopCounter,
    pub records: Vec<StepRecord>,
}

struct Logger {
    start: Instant,
    metrics: RunMetrics,
}

impl Logger {
    fn evaluate_all(
        &mut self,
        net: &DagNetwork,
        splits: &DatasetSplits,
        kind: LossKind,
        step: usize,
        epoch: usize,
        candidates: usize,
        flops: &mut FlopCounter,
    ) -> Result<()> {
        let sets = [
            &splits.train_opt,
            &splits.train_ls,
            &splits.train_gr,
            &splits.inter_train,
            &splits.test,
        ];
        for (name, data) in EVAL_SPLITS.iter().zip(sets) {
            if data.is_empty() {
                continue;
            }
            let (l, acc) = evaluate(net, data, kind, flops)?;
            self.metrics.rows.push(MetricsRow {
                step,
                epoch,
                split: name.to_string(),
                loss: l,
                accuracy: acc,
                params: net.param_count(),
                candidates,
                flops_cum: flops.total(),
                wall_s: self.start.elapsed().as_secs_f64(),
            });
        }
        Ok(())
    }
}

/// Grow from the empty network.
pub fn growth_loop(config: &GrowthConfig, splits: &DatasetSplits) -> Result<RunResult> {
    let net = DagNetwork::empty(splits.train_opt.input_width(), splits.train_opt.output_width());
    grow_from(net, config, splits)
}

/// Alternate growth steps and inter-training, logging every split at the
/// start of each step and after its training.
pub fn grow_from(mut net: DagNetwork, config: &GrowthConfig, splits: &DatasetSplits) -> Result<RunResult> {
    config.validate()?;
    if net.input_width() != splits.train_opt.input_width() || net.output_width() != splits.train_opt.output_width() {
        return Err(Error::Shape(format!(
            "network maps {} -> {} but data has {} inputs and {} targets",
            net.input_width(),
            net.output_width(),
            splits.train_opt.input_width(),
            splits.train_opt.output_width()
        )));
    }
    let mut flops = FlopCounter::default();
    let mut log = Logger {
        start: Instant::now(),
        metrics: RunMetrics::default(),
    };
    let mut records = Vec::new();
    log.evaluate_all(&net, splits, config.loss, 0, 0, 0, &mut flops)?;

    for step in 1..=config.max_growth_steps {
        let outcome = growth_step(&net, splits, config, step)?;
        let record = outcome.record().clone();
        flops.merge(&record.flops);
        let selected = record.selected().cloned();
        if let StepOutcome::Grown { net: grown, .. } = outcome {
            net = grown;
        }
        let candidates = record.evaluated.len();
        log.metrics.steps.push(StepSummary {
            step,
            hidden_nodes: record.hidden_before,
            selected: selected.as_ref().map(|s| s.kind.to_string()),
            gamma: selected.as_ref().map(|s| s.gamma),
            est_loss_gr: selected.as_ref().map(|s| s.est_loss_gr),
            bottleneck_node: Some(record.bottleneck_node.0),
            psi: Some(record.psi),
            candidates,
            candidate_flops: record.flops.candidate_evaluation(),
            params: net.param_count(),
            saturated: selected.is_none(),
        });
        records.push(record);
        log.evaluate_all(&net, splits, config.loss, step, 0, candidates, &mut flops)?;

        let params = net.param_count();
        let mut epoch_rows = Vec::new();
        let start = log.start;
        train_epochs_with(&mut net, &splits.inter_train, config.loss, &config.sgd(step), &mut flops, |st, f| {
            epoch_rows.push(MetricsRow {
                step,
                epoch: st.epoch,
                split: EPOCH_SPLIT.to_string(),
                loss: st.loss,
                accuracy: st.accuracy,
                params,
                candidates,
                flops_cum: f.total(),
                wall_s: start.elapsed().as_secs_f64(),
            })
        })?;
        log.metrics.rows.extend(epoch_rows);
        if config.inter_train_epochs > 0 {
            log.evaluate_all(&net, splits, config.loss, step, config.inter_train_epochs, candidates, &mut flops)?;
        }
    }
    Ok(RunResult {
        net,
        metrics: log.metrics,
        flops,
        records,
    })
}
