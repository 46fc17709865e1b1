//! Independent reference implementations and the numerical checks shared by
//! the integration tests and the acceptance harness. Nothing here calls the
//! library's own linear-algebra helpers.
#![allow(dead_code)]

use dag_grow::bottleneck::{project_node, InEdgeUpdate};
use dag_grow::growth::{
    apply_expansion, enumerate_candidates, fit_new_neurons, linearized_objective, ExpansionKind, ExpansionWeights,
    FittedExpansion, Scope,
};
use dag_grow::netdag::{
    backward, forward, loss, loss_and_functional_gradient, uniform_layer, Activation, DagNetwork, EdgeId, LossKind,
    NodeId,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// A random valid DAG: up to `max_hidden` hidden nodes of width `1..=max_width`
/// with activations drawn from `acts`, a chain through all nodes in rank
/// order plus random skip edges.
pub fn random_dag(
    rng: &mut impl Rng,
    input: usize,
    output: usize,
    max_hidden: usize,
    max_width: usize,
    acts: &[Activation],
) -> DagNetwork {
    let mut net = DagNetwork::empty(input, output);
    for _ in 0..rng.random_range(0..=max_hidden) {
        let later: Vec<NodeId> = net.topo_order().into_iter().skip(1).collect();
        let before = later[rng.random_range(0..later.len())];
        let width = rng.random_range(1..=max_width);
        let act = acts[rng.random_range(0..acts.len())];
        net.insert_node_before(before, width, act).unwrap();
    }
    let order = net.topo_order();
    for (i, &dst) in order.iter().enumerate().skip(1) {
        for (j, &src) in order[..i].iter().enumerate() {
            if j + 1 == i || rng.random_bool(0.4) {
                let (mut w, mut b) = uniform_layer(rng, net.width(dst), net.width(src));
                w *= 1.5;
                b *= 1.5;
                net.add_edge(src, dst, w, b).unwrap();
            }
        }
    }
    net.ensure_valid().unwrap();
    net
}

/// Gaussian elimination with partial pivoting for `A X = B`.
pub fn solve_dense(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
    let mut x: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| b[(i, j)]).collect()).collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .unwrap();
        a.swap(col, piv);
        x.swap(col, piv);
        let d = a[col][col];
        assert!(d != 0.0, "singular system");
        for r in col + 1..n {
            let f = a[r][col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            for c in 0..m {
                x[r][c] -= f * x[col][c];
            }
        }
    }
    for col in (0..n).rev() {
        for c in 0..m {
            let mut s = x[col][c];
            for k in col + 1..n {
                s -= a[col][k] * x[k][c];
            }
            x[col][c] = s / a[col][col];
        }
    }
    DMatrix::from_fn(n, m, |i, j| x[i][j])
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_lower(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                assert!(s > 0.0, "not positive definite");
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    l
}

/// `L^{-1} B` by forward substitution.
pub fn lower_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, decreasing.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut a = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 * a.norm_squared().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Sources side by side plus a ones column.
pub fn with_ones(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let p: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::from_element(n, p + 1, 1.0);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

/// Mean over samples of the squared row norm.
pub fn mean_sq(m: &DMatrix<f64>) -> f64 {
    m.norm_squared() / m.nrows() as f64
}

/// Least-squares minimum of `mean ||B W - V||^2` via the normal equations.
pub fn least_squares_min(b: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let g = b.tr_mul(b);
    let r = b.tr_mul(v);
    let w = solve_dense(&g, &r);
    mean_sq(&(b * w - v))
}

const KINKED: [Activation; 2] = [Activation::Selu, Activation::Relu];

fn min_kink_distance(net: &DagNetwork, x: &DMatrix<f64>) -> f64 {
    let (_, cache) = forward(net, x).unwrap();
    net.nodes()
        .iter()
        .filter(|n| KINKED.contains(&n.activation) && n.id != net.input())
        .filter_map(|n| cache.pre(n.id))
        .flat_map(|a| a.iter().map(|v| v.abs()).collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min)
}

fn net_loss(net: &DagNetwork, x: &DMatrix<f64>, y: &DMatrix<f64>, kind: LossKind) -> f64 {
    let (out, _) = forward(net, x).unwrap();
    loss(&out, y, kind).unwrap()
}

/// Largest relative error between backprop gradients and Richardson-extrapolated
/// central differences over `instances` random DAGs. Relative error is
/// `|g - fd| / max(|g|, |fd|, 1e-6)`. Batches whose pre-activities come
/// within 1e-2 of a kink (selu, relu) are redrawn, since differences across a
/// kink do not approximate a derivative.
pub fn gradient_check(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let kind = if i % 2 == 0 { LossKind::Mse } else { LossKind::SoftmaxCrossEntropy };
        let out_w = if kind == LossKind::Mse { rng.random_range(1..=4) } else { rng.random_range(2..=4) };
        let in_w = rng.random_range(1..=6);
        let net = random_dag(&mut rng, in_w, out_w, 3, 8, &Activation::ALL);
        let n = 5;
        let mut x = uniform(&mut rng, n, net.input_width(), 1.0);
        for _ in 0..1000 {
            if min_kink_distance(&net, &x) > 1e-2 {
                break;
            }
            x = uniform(&mut rng, n, net.input_width(), 1.0);
        }
        assert!(min_kink_distance(&net, &x) > 1e-2, "could not avoid kinks");
        let y = match kind {
            LossKind::Mse => uniform(&mut rng, n, out_w, 1.0),
            LossKind::SoftmaxCrossEntropy => {
                DMatrix::from_fn(n, out_w, |r, c| if c == r % out_w { 1.0 } else { 0.0 })
            }
        };
        let (out, cache) = forward(&net, &x).unwrap();
        let (_, goal) = loss_and_functional_gradient(&out, &y, kind).unwrap();
        let bp = backward(&net, &cache, &goal).unwrap();
        let h = 1e-3;
        for g in &bp.grads {
            let e = net.edge(g.edge).unwrap();
            let rows = e.weight.nrows();
            let cols = e.weight.ncols();
            let mut probe = |set: &dyn Fn(&mut DagNetwork, f64), analytic: f64| {
                let d = |step: f64| {
                    let mut plus = net.clone();
                    set(&mut plus, step);
                    let mut minus = net.clone();
                    set(&mut minus, -step);
                    (net_loss(&plus, &x, &y, kind) - net_loss(&minus, &x, &y, kind)) / (2.0 * step)
                };
                let fd = (4.0 * d(h / 2.0) - d(h)) / 3.0;
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            };
            for r in 0..rows {
                for c in 0..cols {
                    let id = g.edge;
                    probe(&move |n: &mut DagNetwork, s| bump_weight(n, id, r, c, s), g.weight[(r, c)]);
                }
                let id = g.edge;
                probe(&move |n: &mut DagNetwork, s| bump_bias(n, id, r, s), g.bias[r]);
            }
        }
    }
    worst
}

fn bump_weight(net: &mut DagNetwork, id: EdgeId, r: usize, c: usize, s: f64) {
    let e = net.edge(id).unwrap();
    let mut w = e.weight.clone();
    let b = e.bias.clone();
    w[(r, c)] += s;
    replace_edge(net, id, w, b);
}

fn bump_bias(net: &mut DagNetwork, id: EdgeId, r: usize, s: f64) {
    let e = net.edge(id).unwrap();
    let w = e.weight.clone();
    let mut b = e.bias.clone();
    b[r] += s;
    replace_edge(net, id, w, b);
}

/// Rebuild `net` with one edge's parameters replaced, through the public API.
fn replace_edge(net: &mut DagNetwork, id: EdgeId, w: DMatrix<f64>, b: DVector<f64>) {
    let edges = net
        .edges()
        .iter()
        .map(|e| {
            let mut e = e.clone();
            if e.id == id {
                e.weight = w.clone();
                e.bias = b.clone();
            }
            e
        })
        .collect();
    *net = DagNetwork::from_parts(net.nodes().to_vec(), edges, net.input(), net.output());
}

pub struct ProjectionErrors {
    pub objective: f64,
    pub orthogonality: f64,
}

/// Compare node projections with a dense normal-equations solve. Instances
/// whose second-moment matrix has condition number above 1e8 are redrawn,
/// as are dead units: the comparison is between two solvers, not a test of
/// rank-deficient behaviour.
pub fn projection_check(instances: usize, seed: u64) -> ProjectionErrors {
    let mut rng = rng(seed);
    let mut worst = ProjectionErrors {
        objective: 0.0,
        orthogonality: 0.0,
    };
    let acts = [Activation::Selu, Activation::Tanh];
    let mut done = 0;
    while done < instances {
        let (in_w, out_w) = (rng.random_range(1..=6), rng.random_range(1..=4));
        let net = random_dag(&mut rng, in_w, out_w, 3, 8, &acts);
        let n = 60;
        let x = uniform(&mut rng, n, net.input_width(), 1.0);
        let (_, cache) = forward(&net, &x).unwrap();
        let targets: Vec<NodeId> = net
            .topo_order()
            .into_iter()
            .filter(|&id| net.in_edges(id).next().is_some())
            .collect();
        let node = targets[rng.random_range(0..targets.len())];
        let posts: Vec<&DMatrix<f64>> = net.in_edges(node).map(|e| cache.post(e.src)).collect();
        let b = with_ones(&posts);
        let ev = jacobi_eigenvalues(&(b.tr_mul(&b) / n as f64));
        if ev[ev.len() - 1] < 1e-8 * ev[0] {
            continue;
        }
        let desired = uniform(&mut rng, n, net.width(node), 1.0);
        let p = project_node(&net, &cache, &desired, node, 0.0).unwrap();

        let oracle = least_squares_min(&b, &desired);
        let ours = p.psi * p.psi;
        worst.objective = worst.objective.max((ours - oracle).abs() / oracle);

        let cross = p.v_orth.tr_mul(&b) / n as f64;
        let scale = mean_sq(&p.v_orth).sqrt() * mean_sq(&b).sqrt();
        worst.orthogonality = worst.orthogonality.max(cross.norm() / scale);
        done += 1;
    }
    worst
}

pub struct SolverErrors {
    pub full_rank: f64,
    pub truncated: f64,
}

/// Compare the rank-k new-neuron solution with least squares (full rank) and
/// with the Eckart-Young tail computed through Cholesky whitening and Jacobi
/// eigenvalues (rank below full).
pub fn neuron_solver_check(instances: usize, seed: u64) -> SolverErrors {
    let mut rng = rng(seed);
    let mut worst = SolverErrors {
        full_rank: 0.0,
        truncated: 0.0,
    };
    let acts = [Activation::Selu, Activation::Tanh, Activation::Identity];
    for i in 0..instances {
        let n = 80;
        let p = rng.random_range(1..=8);
        let d = rng.random_range(2..=6);
        let src = uniform(&mut rng, n, p, 1.0);
        let v = uniform(&mut rng, n, d, 1.0) + &src * uniform(&mut rng, p, d, 1.0);
        let act = acts[i % acts.len()];
        let slope = act.slope_at_zero();
        let b = with_ones(&[&src]);
        let full = (p + 1).min(d);

        let fit = fit_new_neurons(&src, &v, full, act, 0.0, &mut rng).unwrap();
        let ours = linearized_objective(&b, &v, &fit.alpha, &fit.omega, slope);
        let oracle = least_squares_min(&b, &v);
        worst.full_rank = worst.full_rank.max((ours - oracle).abs() / oracle);

        let g = b.tr_mul(&b) / n as f64;
        let r = b.tr_mul(&v) / n as f64;
        let m = lower_solve(&cholesky_lower(&g), &r);
        let s2 = jacobi_eigenvalues(&m.tr_mul(&m));
        for k in 1..full {
            let fit = fit_new_neurons(&src, &v, k, act, 0.0, &mut rng).unwrap();
            let ours = linearized_objective(&b, &v, &fit.alpha, &fit.omega, slope);
            let tail = mean_sq(&v) - s2[..k].iter().sum::<f64>();
            worst.truncated = worst.truncated.max((ours - tail).abs() / tail);
        }
    }
    worst
}

fn random_weights(rng: &mut impl Rng, net: &DagNetwork, kind: &ExpansionKind) -> ExpansionWeights {
    let p: usize = kind.sources(net).iter().map(|&s| net.width(s)).sum::<usize>() + 1;
    let d: usize = kind.targets(net).iter().map(|&t| net.width(t)).sum();
    match *kind {
        ExpansionKind::DirectEdge { src, dst } => ExpansionWeights::Edge {
            weight: uniform(rng, net.width(dst), net.width(src), 2.0),
            bias: DVector::from_fn(net.width(dst), |_, _| rng.random_range(-2.0..2.0)),
        },
        ExpansionKind::NewNode { neurons, .. } | ExpansionKind::WidenNode { neurons, .. } => {
            ExpansionWeights::Neurons {
                alpha: uniform(rng, neurons, p, 2.0),
                omega: uniform(rng, d, neurons, 2.0),
            }
        }
    }
}

/// Largest output change after applying random expansions with gamma = 0,
/// together with random in-edge updates at the targets.
pub fn preservation_check(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let acts = [Activation::Selu, Activation::Tanh, Activation::Identity];
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < instances {
        let (in_w, out_w) = (rng.random_range(1..=6), rng.random_range(1..=4));
        let net = random_dag(&mut rng, in_w, out_w, 3, 8, &Activation::ALL);
        let k = rng.random_range(1..=5);
        let act = acts[rng.random_range(0..acts.len())];
        let kinds = enumerate_candidates(&net, Scope::Whole, k, act).unwrap();
        let kind = kinds[rng.random_range(0..kinds.len())];
        let in_updates = kind
            .targets(&net)
            .iter()
            .flat_map(|&t| net.in_edges(t).collect::<Vec<_>>())
            .map(|e| InEdgeUpdate {
                edge: e.id,
                weight: uniform(&mut rng, e.weight.nrows(), e.weight.ncols(), 1.0),
                bias: DVector::from_fn(e.bias.len(), |_, _| rng.random_range(-1.0..1.0)),
            })
            .collect();
        let fitted = FittedExpansion {
            kind,
            weights: random_weights(&mut rng, &net, &kind),
            in_updates,
        };
        let (grown, _) = apply_expansion(&net, &fitted, 0.0).unwrap();
        assert!(grown.param_count() > net.param_count());
        let x = uniform(&mut rng, 7, net.input_width(), 1.5);
        let a = forward(&net, &x).unwrap().0;
        let b = forward(&grown, &x).unwrap().0;
        worst = worst.max((a - b).amax());
        done += 1;
    }
    worst
}
