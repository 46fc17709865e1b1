//! Cost accounting and run logs.

mod flops;

pub use flops::{
    flops_backward, flops_forward, flops_forward_from, flops_gram, flops_matmul, flops_spd_solve,
    flops_svd, flops_sym_eigen, FlopCounter, Phase, EIGEN_FLOP_FACTOR, SVD_FLOP_FACTOR,
};

mod run;

pub use run::{
    emit_metrics, emit_plotdata, load_summary, parse_metrics, parse_summary, MetricsRow, RunMetrics, RunSummary,
    StepSummary, EPOCH_SPLIT, EVAL_SPLITS, SCHEMA_VERSION,
};
