//! End-to-end acceptance run. Prints one `[PASS]`/`[FAIL]` line per criterion
//! and exits non-zero if any fails.

mod common;

use common::{gradient_check, neuron_solver_check, preservation_check, projection_check};
use dag_grow::cli::{mnist_defaults, MNIST_DEFAULT_SUBSET};
use dag_grow::data::{
    load_idx, load_mnist, make_teacher, split_dataset, teacher_student_data, IdxError,
};
use dag_grow::metrics::load_summary;
use dag_grow::strategy::{growth_loop, GrowthConfig, RunResult, StrategyKind};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

const SEEDS: [u64; 6] = [0, 1, 2, 3, 4, 5];
const MINUTE: Duration = Duration::from_secs(60);

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String, took: Duration) {
        if !pass {
            self.failures += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name}: {detail} ({:.1}s)", took.as_secs_f64());
    }
}

fn gradient(r: &mut Report) {
    let t = Instant::now();
    let err = gradient_check(50, 11);
    let took = t.elapsed();
    r.line(1, "gradient oracle", err < 1e-6 && took < MINUTE, format!("max rel err {err:.2e} < 1e-6"), took);
}

fn projection(r: &mut Report) {
    let t = Instant::now();
    let e = projection_check(50, 12);
    let took = t.elapsed();
    r.line(
        2,
        "projection oracle",
        e.objective < 1e-8 && e.orthogonality < 1e-8 && took < MINUTE,
        format!("objective {:.2e}, orthogonality {:.2e} (< 1e-8)", e.objective, e.orthogonality),
        took,
    );
}

fn neuron_solver(r: &mut Report) {
    let t = Instant::now();
    let e = neuron_solver_check(30, 13);
    let took = t.elapsed();
    r.line(
        3,
        "new-neuron solver oracle",
        e.full_rank < 1e-8 && e.truncated < 1e-8 && took < MINUTE,
        format!("full rank {:.2e}, rank-k tail {:.2e} (< 1e-8)", e.full_rank, e.truncated),
        took,
    );
}

fn preservation(r: &mut Report) {
    let t = Instant::now();
    let err = preservation_check(100, 14);
    r.line(4, "function preservation", err <= 1e-12, format!("max output change {err:.2e} <= 1e-12"), t.elapsed());
}

fn teacher_params(r: &mut Report) {
    let t = Instant::now();
    let counts: Vec<usize> = SEEDS.iter().map(|&s| make_teacher(s).param_count()).collect();
    r.line(
        5,
        "teacher parameter count",
        counts.iter().all(|&c| c == 4701),
        format!("{counts:?} == 4701"),
        t.elapsed(),
    );
}

fn teacher_run(seed: u64, strategy: StrategyKind) -> dag_grow::Result<RunResult> {
    let cfg = GrowthConfig {
        strategy,
        seed,
        ..GrowthConfig::default()
    };
    let (_, train, test) = teacher_student_data(seed, 3000, 1000, 1.0)?;
    let splits = split_dataset(&train, test, seed)?;
    growth_loop(&cfg, &splits)
}

/// Candidate-evaluation FLOPs summed over the step indices at which both
/// runs already had at least two hidden nodes.
fn late_candidate_flops(restricted: &RunResult, whole: &RunResult) -> (u64, u64) {
    let mut sums = (0, 0);
    for (a, b) in restricted.metrics.steps.iter().zip(&whole.metrics.steps) {
        if a.hidden_nodes >= 2 && b.hidden_nodes >= 2 {
            sums.0 += a.candidate_flops;
            sums.1 += b.candidate_flops;
        }
    }
    sums
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2]) as f64
    }
}

fn teacher_student(r: &mut Report) {
    let t = Instant::now();
    let mut runs = Vec::new();
    for &seed in &SEEDS {
        let mut per = Vec::new();
        for s in StrategyKind::ALL {
            match teacher_run(seed, s) {
                Ok(run) => per.push(run),
                Err(e) => {
                    let took = t.elapsed();
                    for (id, name) in [(6, "teacher-student fit"), (7, "search-cost reduction"), (8, "BIC compactness")] {
                        r.line(id, name, false, format!("seed {seed} {s}: {e}"), took);
                    }
                    return;
                }
            }
        }
        runs.push(per);
    }
    let took = t.elapsed();
    let idx = |k: StrategyKind| StrategyKind::ALL.iter().position(|&s| s == k).expect("known strategy");
    let (whole, restricted, bic) = (
        idx(StrategyKind::WholeSearchSpace),
        idx(StrategyKind::BottleneckRestricted),
        idx(StrategyKind::BicRestricted),
    );

    let mut good = 0;
    let mut detail = Vec::new();
    for (seed, per) in SEEDS.iter().zip(&runs) {
        let run = &per[restricted];
        let gr = run.metrics.last("train_gr").map_or(f64::NAN, |m| m.loss);
        let test = run.metrics.last("test").map_or(f64::NAN, |m| m.loss);
        let (_, train, test_set) = teacher_student_data(*seed, 3000, 1000, 1.0).expect("regenerates");
        let zero = split_dataset(&train, test_set, *seed).expect("splits").train_gr.target_second_moment();
        let ok = gr <= 0.1 * zero && test <= 2.0 * gr;
        good += usize::from(ok);
        detail.push(format!("s{seed}: gr/zero {:.3} test/gr {:.2}", gr / zero, test / gr));
    }
    r.line(
        6,
        "teacher-student fit",
        good >= 5 && took < 30 * MINUTE,
        format!("{good}/6 seeds ok [{}]", detail.join("; ")),
        took,
    );

    let mut total = (0u64, 0u64);
    let mut ratios = Vec::new();
    for per in &runs {
        let (a, b) = late_candidate_flops(&per[restricted], &per[whole]);
        total.0 += a;
        total.1 += b;
        ratios.push(if b > 0 { a as f64 / b as f64 } else { f64::NAN });
    }
    let agg = total.0 as f64 / total.1 as f64;
    let per_seed_ok = ratios.iter().all(|&x| x <= 0.6);
    r.line(
        7,
        "search-cost reduction",
        total.1 > 0 && agg <= 0.6 && per_seed_ok,
        format!(
            "restricted/whole candidate FLOPs {agg:.3} <= 0.6, per seed [{}]",
            ratios.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
        ),
        took,
    );

    let params = |k: usize| runs.iter().map(|p| p[k].net.param_count()).collect::<Vec<_>>();
    let (pb, pr) = (params(bic), params(restricted));
    let (mb, mr) = (median(pb.clone()), median(pr.clone()));
    r.line(
        8,
        "BIC compactness",
        mb < mr,
        format!("median params bic {mb} < restricted {mr} (bic {pb:?}, restricted {pr:?})"),
        took,
    );
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("DAG_GROW_DATA").map_or_else(|| PathBuf::from("/root/data/mnist"), PathBuf::from)
}

fn mnist(r: &mut Report) {
    let t = Instant::now();
    let cfg = mnist_defaults();
    let result = load_mnist(&mnist_dir(), Some(MNIST_DEFAULT_SUBSET))
        .and_then(|(train, test)| split_dataset(&train, test, cfg.seed))
        .and_then(|splits| growth_loop(&cfg, &splits));
    let took = t.elapsed();
    match result {
        Ok(run) => {
            let acc = run.metrics.last("test").and_then(|m| m.accuracy).unwrap_or(0.0);
            let params = run.metrics.params_per_step();
            let increasing = params.len() == cfg.max_growth_steps + 1 && params.windows(2).all(|w| w[0] < w[1]);
            r.line(
                9,
                "MNIST scaled run",
                acc >= 0.90 && increasing && took < 30 * MINUTE,
                format!("test accuracy {:.4} >= 0.90, params per step {params:?}", acc),
                took,
            );
        }
        Err(e) => r.line(9, "MNIST scaled run", false, format!("{e}"), took),
    }
}

fn idx_fixtures(r: &mut Report) {
    let t = Instant::now();
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let load = |n: &str| load_idx(dir.join(n));
    let images = load("images_2x2.idx");
    let labels = load("labels_1.idx");
    let ok = images.as_ref().is_ok_and(|t| t.dims == [1, 2, 2] && t.data == [0, 128, 255, 64])
        && labels.as_ref().is_ok_and(|t| t.dims == [1] && t.data == [7])
        && load("bad_magic.idx") == Err(IdxError::BadMagic(0x0903))
        && load("images_truncated.idx") == Err(IdxError::Truncated { expected: 20, found: 19 })
        && load("labels_truncated.idx") == Err(IdxError::Truncated { expected: 9, found: 8 });
    r.line(10, "IDX fixtures", ok, "images, labels, bad magic, truncated".into(), t.elapsed());
}

fn determinism(r: &mut Report) {
    let t = Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "strategy = \"bic\"\nsteps = 4\nepochs = 5\nseed = 3\nn_train = 600\nn_test = 200\n")
        .expect("writes config");
    let mut summaries = Vec::new();
    for name in ["first.csv", "second.csv"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_dag-grow"))
            .arg("--config")
            .arg(&config)
            .arg("run")
            .arg("--metrics-out")
            .arg(&out)
            .output()
            .expect("binary runs");
        if !status.status.success() {
            r.line(11, "CLI determinism", false, String::from_utf8_lossy(&status.stderr).into_owned(), t.elapsed());
            return;
        }
        summaries.push(load_summary(&out.with_extension("json")).expect("summary"));
    }
    let selected = |i: usize| summaries[i].steps.iter().map(|s| s.selected.clone()).collect::<Vec<_>>();
    let same = selected(0) == selected(1) && summaries[0].final_params == summaries[1].final_params;
    r.line(
        11,
        "CLI determinism",
        same,
        format!("{} steps, final params {} == {}", selected(0).len(), summaries[0].final_params, summaries[1].final_params),
        t.elapsed(),
    );
}

fn main() -> ExitCode {
    let mut r = Report { failures: 0 };
    gradient(&mut r);
    projection(&mut r);
    neuron_solver(&mut r);
    preservation(&mut r);
    teacher_params(&mut r);
    teacher_student(&mut r);
    mnist(&mut r);
    idx_fixtures(&mut r);
    determinism(&mut r);
    if r.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", r.failures);
        ExitCode::FAILURE
    }
}
