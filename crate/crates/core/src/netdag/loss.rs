use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Per-sample `||f - y||^2`, averaged over the batch.
    Mse,
    /// Softmax over the output followed by cross-entropy against target rows.
    SoftmaxCrossEntropy,
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "ce" | "cross-entropy" | "softmax-cross-entropy" => Ok(LossKind::SoftmaxCrossEntropy),
            other => Err(format!("unknown loss '{other}'")),
        }
    }
}

fn check(outputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
    if outputs.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "outputs {:?} vs targets {:?}",
            outputs.shape(),
            targets.shape()
        )));
    }
    if outputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network outputs"));
    }
    Ok(())
}

fn log_softmax_row(outputs: &DMatrix<f64>, i: usize, buf: &mut Vec<f64>) {
    let c = outputs.ncols();
    let m = (0..c).map(|j| outputs[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
    let lse = m + (0..c).map(|j| (outputs[(i, j)] - m).exp()).sum::<f64>().ln();
    buf.clear();
    buf.extend((0..c).map(|j| outputs[(i, j)] - lse));
}

/// Batch-mean loss only.
pub fn loss(outputs: &DMatrix<f64>, targets: &DMatrix<f64>, kind: LossKind) -> Result<f64> {
    check(outputs, targets)?;
    let n = outputs.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let total = match kind {
        LossKind::Mse => outputs
            .iter()
            .zip(targets.iter())
            .map(|(f, y)| (f - y) * (f - y))
            .sum::<f64>(),
        LossKind::SoftmaxCrossEntropy => {
            let mut buf = Vec::new();
            let mut acc = 0.0;
            for i in 0..n {
                log_softmax_row(outputs, i, &mut buf);
                for (j, lp) in buf.iter().enumerate() {
                    acc -= targets[(i, j)] * lp;
                }
            }
            acc
        }
    };
    Ok(total / n as f64)
}

/// Batch-mean loss and the functional gradient: per sample, the negative
/// gradient of that sample's loss with respect to the network output.
///
/// The gradient is not divided by the batch size; for MSE it is `-2 (f - y)`.
pub fn loss_and_functional_gradient(
    outputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    kind: LossKind,
) -> Result<(f64, DMatrix<f64>)> {
    let value = loss(outputs, targets, kind)?;
    let goal = match kind {
        LossKind::Mse => (targets - outputs) * 2.0,
        LossKind::SoftmaxCrossEntropy => {
            let (n, c) = outputs.shape();
            let mut g = DMatrix::zeros(n, c);
            let mut buf = Vec::new();
            for i in 0..n {
                log_softmax_row(outputs, i, &mut buf);
                let mass: f64 = (0..c).map(|j| targets[(i, j)]).sum();
                for j in 0..c {
                    g[(i, j)] = targets[(i, j)] - mass * buf[j].exp();
                }
            }
            g
        }
    };
    Ok((value, goal))
}

/// Fraction of rows whose argmax matches the target row's argmax.
pub fn accuracy(outputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> f64 {
    let n = outputs.nrows();
    if n == 0 {
        return 0.0;
    }
    let argmax = |m: &DMatrix<f64>, i: usize| {
        (0..m.ncols())
            .max_by(|&a, &b| m[(i, a)].total_cmp(&m[(i, b)]).then(b.cmp(&a)))
            .unwrap_or(0)
    };
    let hits = (0..n).filter(|&i| argmax(outputs, i) == argmax(targets, i)).count();
    hits as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_goal(out: &DMatrix<f64>, tgt: &DMatrix<f64>, kind: LossKind) -> DMatrix<f64> {
        // per-sample loss gradient = batch-mean gradient times n
        let n = out.nrows() as f64;
        let h = 1e-6;
        DMatrix::from_fn(out.nrows(), out.ncols(), |i, j| {
            let mut p = out.clone();
            let mut m = out.clone();
            p[(i, j)] += h;
            m[(i, j)] -= h;
            -(loss(&p, tgt, kind).unwrap() - loss(&m, tgt, kind).unwrap()) / (2.0 * h) * n
        })
    }

    #[test]
    fn perfect_fit_has_zero_goal() {
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (l, g) = loss_and_functional_gradient(&y, &y, LossKind::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_goal_single_sample() {
        let f = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let y = DMatrix::zeros(1, 2);
        let (l, g) = loss_and_functional_gradient(&f, &y, LossKind::Mse).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.as_slice(), &[-2.0, 0.0]);
        let fd = fd_goal(&f, &y, LossKind::Mse);
        assert!((fd - g).amax() < 1e-6);
    }

    #[test]
    fn uniform_logits_cross_entropy_goal() {
        let c = 4;
        let f = DMatrix::from_element(1, c, 0.3);
        let mut y = DMatrix::zeros(1, c);
        y[(0, 2)] = 1.0;
        let (l, g) = loss_and_functional_gradient(&f, &y, LossKind::SoftmaxCrossEntropy).unwrap();
        assert!((l - (c as f64).ln()).abs() < 1e-12);
        for j in 0..c {
            let expect = if j == 2 { 1.0 } else { 0.0 } - 0.25;
            assert!((g[(0, j)] - expect).abs() < 1e-12);
        }
        let fd = fd_goal(&f, &y, LossKind::SoftmaxCrossEntropy);
        assert!((fd - g).amax() < 1e-6);
    }

    #[test]
    fn cross_entropy_goal_matches_finite_differences() {
        let f = DMatrix::from_row_slice(3, 3, &[0.2, -1.0, 3.0, 0.0, 0.5, 0.1, -2.0, 1.0, 0.0]);
        let y = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let (_, g) = loss_and_functional_gradient(&f, &y, LossKind::SoftmaxCrossEntropy).unwrap();
        assert!((fd_goal(&f, &y, LossKind::SoftmaxCrossEntropy) - g).amax() < 1e-6);
    }

    #[test]
    fn non_finite_outputs_are_rejected() {
        let f = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        let y = DMatrix::zeros(1, 1);
        assert!(matches!(
            loss_and_functional_gradient(&f, &y, LossKind::Mse),
            Err(Error::NonFinite(_))
        ));
    }
}
