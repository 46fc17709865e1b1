//! Operation counts used as the training-cost measure.
//!
//! Conventions: a multiply-add is 2 operations, each activation output is 1,
//! bias additions are free, and a backward pass costs twice its forward pass.

use crate::netdag::DagNetwork;
use serde::{Deserialize, Serialize};

/// Leading constant of the thin SVD cost `c * m * n * min(m, n)`.
pub const SVD_FLOP_FACTOR: u64 = 4;
/// Leading constant of the symmetric eigendecomposition cost `c * p^3`.
pub const EIGEN_FLOP_FACTOR: u64 = 9;

/// Forward cost of the whole network on `batch` samples.
pub fn flops_forward(net: &DagNetwork, batch: usize) -> u64 {
    flops_forward_from(net, batch, 0)
}

/// Forward cost of recomputing only the nodes ranked at or above `start_rank`.
pub fn flops_forward_from(net: &DagNetwork, batch: usize, start_rank: usize) -> u64 {
    let b = batch as u64;
    let mut total = 0u64;
    for node in net.nodes() {
        if node.id == net.input() || node.rank < start_rank {
            continue;
        }
        let mut any = false;
        for e in net.in_edges(node.id) {
            any = true;
            total += 2 * (node.width as u64) * (net.width(e.src) as u64) * b;
        }
        if any {
            total += node.width as u64 * b;
        }
    }
    total
}

pub fn flops_backward(net: &DagNetwork, batch: usize) -> u64 {
    2 * flops_forward(net, batch)
}

/// `X^T Y` for `X: n x p`, `Y: n x q`.
pub fn flops_gram(n: usize, p: usize, q: usize) -> u64 {
    2 * (n as u64) * (p as u64) * (q as u64)
}

pub fn flops_matmul(m: usize, k: usize, n: usize) -> u64 {
    2 * (m as u64) * (k as u64) * (n as u64)
}

pub fn flops_svd(m: usize, n: usize) -> u64 {
    SVD_FLOP_FACTOR * (m as u64) * (n as u64) * (m.min(n) as u64)
}

pub fn flops_sym_eigen(p: usize) -> u64 {
    EIGEN_FLOP_FACTOR * (p as u64).pow(3)
}

/// Cholesky factorization plus triangular solves for `rhs` right-hand sides.
pub fn flops_spd_solve(p: usize, rhs: usize) -> u64 {
    (p as u64).pow(3) / 3 + 2 * (p as u64).pow(2) * rhs as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    TrainForward,
    TrainBackward,
    Evaluation,
    BottleneckForward,
    BottleneckBackward,
    BottleneckSolve,
    CandidateSolve,
    CandidateForward,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::TrainForward,
        Phase::TrainBackward,
        Phase::Evaluation,
        Phase::BottleneckForward,
        Phase::BottleneckBackward,
        Phase::BottleneckSolve,
        Phase::CandidateSolve,
        Phase::CandidateForward,
    ];

    fn index(self) -> usize {
        Phase::ALL.iter().position(|&p| p == self).expect("listed")
    }

    pub fn is_candidate_evaluation(self) -> bool {
        matches!(self, Phase::CandidateSolve | Phase::CandidateForward)
    }
}

/// Per-phase operation and call counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounter {
    flops: [u64; 8],
    calls: [u64; 8],
}

impl FlopCounter {
    pub fn book(&mut self, phase: Phase, flops: u64) {
        let i = phase.index();
        self.flops[i] += flops;
        self.calls[i] += 1;
    }

    pub fn merge(&mut self, other: &FlopCounter) {
        for i in 0..self.flops.len() {
            self.flops[i] += other.flops[i];
            self.calls[i] += other.calls[i];
        }
    }

    pub fn phase(&self, phase: Phase) -> u64 {
        self.flops[phase.index()]
    }

    pub fn calls(&self, phase: Phase) -> u64 {
        self.calls[phase.index()]
    }

    pub fn total(&self) -> u64 {
        self.flops.iter().sum()
    }

    /// Fitting, line search and estimation of candidate expansions.
    pub fn candidate_evaluation(&self) -> u64 {
        Phase::ALL
            .iter()
            .filter(|p| p.is_candidate_evaluation())
            .map(|&p| self.phase(p))
            .sum()
    }
}
