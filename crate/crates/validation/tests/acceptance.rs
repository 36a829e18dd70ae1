//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p l2x-validation --test acceptance -- 1 2 3`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use l2x::oracle_suite::{run_oracle_suite, OracleConfig, OracleSummary};
use l2x::pipeline::{explain_all, run_benchmark, write_benchmark, BenchmarkConfig, BenchmarkOutcome, Source, METRIC_FILES};
use l2x::report::BenchmarkReport;
use l2x_core::autodiff::{finite_diff_check, Graph, ParameterSet, Var};
use l2x_core::explainers::Method;
use l2x_core::models::{Classifier, Explainer, Head, Mlp, MlpSpec, VariationalNet};
use l2x_core::rng::rng_from_seed;
use l2x_core::sampling::{concrete_vector, relaxed_subset_mask, sample_gumbel, GumbelNoise, SamplerConfig};
use l2x_core::synthetic::{design_matrix, DatasetKind};
use l2x_core::tensor::argmax;
use l2x_core::training::objective_on_graph;
use l2x_core::Tensor;
use rand::Rng;

const GRAD_SEEDS: u64 = 100;
const GRAD_TOLERANCE: f64 = 1e-4;
// Near ε^(1/3), balancing truncation against round-off in central differences.
const GRAD_STEP: f64 = 1e-5;
const BENCH_SEED: u64 = 1;
const ORACLE_SEED: u64 = 2024;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn line(id: u32, name: &str, v: &Verdict, secs: f64) -> String {
    let tag = if v.passed { "PASS" } else { "FAIL" };
    format!("criterion {id:>2} [{tag}] {name}: {} ({secs:.1} s)", v.detail)
}

// ---------------------------------------------------------------- 1

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

type OpCase = (&'static str, fn(&mut Graph, Var, Var, Var) -> l2x_core::Result<Var>);

/// Each case maps parameters `a: 3×4`, `b: 3×4`, `bias: 4` to a tensor;
/// the checked scalar is `Σ w ⊙ out` for a fixed random `w`.
fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul", |g, a, b, _| {
            let m = g.matmul(a, b)?;
            g.sum(m, Some(1))
        }),
        ("add_bias", |g, a, _, bias| g.add_bias(a, bias)),
        ("add", |g, a, b, _| g.add(a, b)),
        ("mul", |g, a, b, _| g.mul(a, b)),
        ("max", |g, a, b, _| g.max(a, b)),
        ("relu", |g, a, _, _| Ok(g.relu(a))),
        ("sigmoid", |g, a, _, _| Ok(g.sigmoid(a))),
        ("exp", |g, a, _, _| Ok(g.exp(a))),
        ("log", |g, _, b, _| g.log(b)),
        ("neg", |g, a, _, _| Ok(g.neg(a))),
        ("abs", |g, a, _, _| Ok(g.abs(a))),
        ("scale", |g, a, _, _| Ok(g.scale(a, -2.5))),
        ("clamp_min", |g, a, _, _| Ok(g.clamp_min(a, 0.1))),
        ("softmax", |g, a, _, _| g.softmax(a, 0.7)),
        ("sum_axis", |g, a, _, _| g.sum(a, Some(0))),
        ("mean", |g, a, _, _| g.mean(a, Some(1))),
        ("reduce_max", |g, a, _, _| g.reduce_max(a, Some(1))),
        ("reduce_max_all", |g, a, _, _| g.reduce_max(a, None)),
    ]
}

fn check_elementary(seed: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (name, op) in op_cases() {
        let mut rng = rng_from_seed(seed.wrapping_mul(7919).wrapping_add(name.len() as u64));
        let mut params = ParameterSet::new();
        let a = random_matrix(&mut rng, 3, 4, -2.0, 2.0);
        params.insert("a", a.clone()).unwrap();
        // `b` doubles as the right matmul operand (4×3 view) and the positive log input.
        let b = if name == "matmul" {
            random_matrix(&mut rng, 4, 3, -2.0, 2.0)
        } else {
            random_matrix(&mut rng, 3, 4, 0.5, 2.0)
        };
        params.insert("b", b).unwrap();
        params.insert("bias", Tensor::vector((0..4).map(|_| rng.random_range(-1.0..1.0)).collect())).unwrap();

        let mut probe = Graph::new();
        let vars = params.bind(&mut probe);
        let out = op(&mut probe, vars[0], vars[1], vars[2]).map_err(|e| format!("{name}: {e}"))?;
        let shape = probe.value(out).shape().to_vec();
        let n: usize = shape.iter().product();
        let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

        let report = finite_diff_check(&params, GRAD_STEP, |g, v| {
            let out = op(g, v[0], v[1], v[2])?;
            let wv = g.constant(w.clone());
            let weighted = g.mul(out, wv)?;
            g.sum(weighted, None)
        })
        .map_err(|e| format!("{name}: {e}"))?;
        if report.checked == 0 {
            return Err(format!("{name}: every coordinate excluded"));
        }
        if report.max_rel_error > GRAD_TOLERANCE {
            return Err(format!("{name} seed {seed}: rel err {:.3e} at {:?}", report.max_rel_error, report.worst));
        }
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

/// Copies `mlp`'s parameters under `prefix.`, replacing the zero-initialized
/// biases with random values so no ReLU sits exactly on its kink.
fn prefixed(mlp: &Mlp, prefix: &str, rng: &mut impl Rng, into: &mut ParameterSet) {
    for (name, t) in mlp.params().iter() {
        let mut value = t.clone();
        if name.ends_with("bias") {
            value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        into.insert(format!("{prefix}.{name}"), value).unwrap();
    }
}

fn check_objective(seed: u64, temperature: f64) -> Result<(f64, usize, usize), String> {
    let (d, k, classes, batch, hidden) = (5, 2, 3, 3, 6);
    let mut rng = rng_from_seed(10_000 + seed);
    let classifier = Classifier::new(Mlp::init(MlpSpec::uniform(d, hidden, 1, classes, Head::Softmax).unwrap(), &mut rng).unwrap()).unwrap();
    let explainer = Explainer::new(Mlp::init(MlpSpec::uniform(d, hidden, 2, d, Head::Linear).unwrap(), &mut rng).unwrap()).unwrap();
    let variational =
        VariationalNet::new(Mlp::init(MlpSpec::uniform(d, hidden, 3, classes, Head::Softmax).unwrap(), &mut rng).unwrap()).unwrap();
    let x = random_matrix(&mut rng, batch, d, -2.0, 2.0);
    let targets = classifier.predict(&x).unwrap();
    let noise: Vec<GumbelNoise> = (0..batch).map(|_| sample_gumbel(&mut rng, k, d)).collect();

    let mut params = ParameterSet::new();
    prefixed(explainer.mlp(), "e", &mut rng, &mut params);
    prefixed(variational.mlp(), "v", &mut rng, &mut params);
    let split = explainer.mlp().params().len();

    let report = finite_diff_check(&params, GRAD_STEP, |g, vars| {
        let (ev, vv) = vars.split_at(split);
        objective_on_graph(g, &x, &targets, &explainer, ev, &variational, vv, &noise, temperature)
    })
    .map_err(|e| e.to_string())?;
    if report.max_rel_error > GRAD_TOLERANCE {
        return Err(format!(
            "objective seed {seed}: rel err {:.3e} at {:?}",
            report.max_rel_error, report.worst
        ));
    }
    Ok((report.max_rel_error, report.checked, report.excluded.len()))
}

fn criterion_gradients() -> Verdict {
    let mut worst_op = 0.0f64;
    let mut worst_obj = 0.0f64;
    let mut coords = 0;
    let mut kinks = 0;
    for seed in 0..GRAD_SEEDS {
        match check_elementary(seed) {
            Ok(w) => worst_op = worst_op.max(w),
            Err(e) => return Verdict::new(false, e),
        }
        match check_objective(seed, l2x_core::sampling::DEFAULT_TEMPERATURE) {
            Ok((w, n, excluded)) => {
                worst_obj = worst_obj.max(w);
                coords += n;
                kinks += excluded;
            }
            Err(e) => return Verdict::new(false, e),
        }
    }
    Verdict::new(
        true,
        format!(
            "{GRAD_SEEDS} seeds, {} ops max rel err {worst_op:.2e}, objective max rel err {worst_obj:.2e} over {coords} coordinates ({kinks} on kinks)",
            op_cases().len()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_concrete() -> Verdict {
    let mut rng = rng_from_seed(77);
    let temperatures = [0.01, 0.1, 0.5, 1.0, 5.0];
    let mut max_simplex = 0.0f64;
    let mut max_shift = 0.0f64;
    for draw in 0..1000 {
        let d = rng.random_range(2..=20);
        let lw = Tensor::vector((0..d).map(|_| rng.random_range(-5.0..5.0)).collect());
        let noise = sample_gumbel(&mut rng, 1, d);
        let gumbel = Tensor::vector(noise.row(0).to_vec());
        let shift = rng.random_range(-50.0..50.0);
        let shifted = lw.map(|v| v + shift);
        let perturbed: Vec<f64> = lw.data().iter().zip(gumbel.data()).map(|(a, b)| a + b).collect();
        let expected = argmax(&perturbed);
        for &t in &temperatures {
            let c = concrete_vector(&lw, &gumbel, t).unwrap();
            max_simplex = max_simplex.max((c.sum() - 1.0).abs());
            if c.data().iter().any(|&v| v < 0.0) {
                return Verdict::new(false, format!("draw {draw}: negative entry at tau {t}"));
            }
            let s = concrete_vector(&shifted, &gumbel, t).unwrap();
            let diff = c.data().iter().zip(s.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            max_shift = max_shift.max(diff);
            if argmax(c.data()) != expected {
                return Verdict::new(false, format!("draw {draw}: argmax moved at tau {t}"));
            }
        }
    }

    let mut max_active = 0usize;
    for draw in 0..1000 {
        let d = 10;
        let k = rng.random_range(1..=5);
        let lw = Tensor::vector((0..d).map(|_| rng.random_range(-3.0..3.0)).collect());
        let noise = sample_gumbel(&mut rng, k, d);
        let mask = relaxed_subset_mask(&lw, &noise, &SamplerConfig::new(d, k, 0.01).unwrap()).unwrap();
        let active = mask.as_slice().iter().filter(|&&v| v > 0.5).count();
        if active > k {
            return Verdict::new(false, format!("draw {draw}: {active} active entries with k = {k}"));
        }
        max_active = max_active.max(active);
    }

    let passed = max_simplex <= 1e-9 && max_shift <= 1e-12;
    Verdict::new(
        passed,
        format!("simplex err {max_simplex:.1e}, shift err {max_shift:.1e}, argmax stable over {temperatures:?}, active <= k on 1000 masks"),
    )
}

// ---------------------------------------------------------------- 3, 4

fn oracle_config() -> OracleConfig {
    OracleConfig {
        joints: 100,
        seed: ORACLE_SEED,
        ..OracleConfig::default()
    }
}

fn criterion_selection(s: &OracleSummary) -> Verdict {
    let passed = s.selection_failures.is_empty() && s.max_selection_gap <= 1e-10;
    let mut detail = format!(
        "{} joints, {} rules enumerated, max gap {:.1e}",
        s.joints, s.rules_enumerated, s.max_selection_gap
    );
    if let Some(f) = s.selection_failures.first() {
        detail.push_str(&format!("; {} failures, first: {f}", s.selection_failures.len()));
    }
    Verdict::new(passed, detail)
}

fn criterion_bound(s: &OracleSummary) -> Verdict {
    let passed = s.bound_failures.is_empty() && s.max_exact_gap <= 1e-12 && s.min_gap >= -1e-12 && s.min_perturbed_gap > 0.0;
    let mut detail = format!(
        "exact-q gap {:.1e}, min gap {:.2e}, min perturbed gap {:.2e}, gap vs KL {:.1e}",
        s.max_exact_gap, s.min_gap, s.min_perturbed_gap, s.max_kl_mismatch
    );
    if let Some(f) = s.bound_failures.first() {
        detail.push_str(&format!("; {} failures, first: {f}", s.bound_failures.len()));
    }
    Verdict::new(passed, detail)
}

// ---------------------------------------------------------------- 5 to 8

fn median_of(report: &BenchmarkReport, method: &str) -> f64 {
    report.method(method).map_or(f64::NAN, |m| m.median_rank.median)
}

fn criterion_median(report: &BenchmarkReport, bound: f64) -> Verdict {
    let m = median_of(report, "l2x");
    Verdict::new(
        m <= bound,
        format!(
            "{} median of per-sample median ranks {m} (bound {bound}, optimum {}), classifier acc {:.3} (Bayes {:.3})",
            report.dataset,
            report.method("l2x").map_or(f64::NAN, |s| s.optimal_median),
            report.classifier.valid_accuracy,
            report.classifier.bayes_accuracy
        ),
    )
}

fn criterion_baselines(reports: &[&BenchmarkReport]) -> Verdict {
    let mut passed = true;
    let mut parts = Vec::new();
    for r in reports {
        let l2x = median_of(r, "l2x");
        let mut cmp = Vec::new();
        for b in ["saliency", "taylor", "taylor_abs"] {
            let m = median_of(r, b);
            passed &= l2x <= m + 0.5;
            cmp.push(format!("{b} {m}"));
        }
        parts.push(format!("{}: l2x {l2x} vs {}", r.dataset, cmp.join(", ")));
    }
    Verdict::new(passed, parts.join("; "))
}

fn criterion_post_hoc(report: &BenchmarkReport) -> Verdict {
    let l2x = report.method("l2x").map_or(f64::NAN, |m| m.post_hoc_accuracy);
    let truth = report.ground_truth_post_hoc_accuracy;
    Verdict::new(
        (l2x - truth).abs() <= 0.05,
        format!("{} post-hoc accuracy l2x {l2x:.4} vs true features {truth:.4}", report.dataset),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_explain_cost(outcomes: &BTreeMap<DatasetKind, BenchmarkOutcome>) -> Verdict {
    let mut passed = true;
    let mut parts = Vec::new();
    for (kind, o) in outcomes {
        let evals = o.report.method("l2x").map_or(u64::MAX, |m| m.classifier_evaluations);
        let x = design_matrix(&o.valid).unwrap();
        let before = o.classifier.evaluations();
        let t = Instant::now();
        let (expl, _) = explain_all(Method::L2x, Source::L2x(&o.explainer), &x, o.report.k, 1).unwrap();
        let secs = t.elapsed().as_secs_f64();
        let during = o.classifier.evaluations() - before;
        passed &= evals == 0 && during == 0 && secs < 10.0 && expl.len() == x.rows();
        parts.push(format!("{kind}: {} samples in {secs:.3} s, {evals}+{during} classifier evals", expl.len()));
    }
    Verdict::new(passed, parts.join("; "))
}

// ---------------------------------------------------------------- 10

fn compare_dirs(a: &Path, b: &Path, files: &[&str]) -> Result<usize, String> {
    for f in files {
        let x = std::fs::read(a.join(f)).map_err(|e| format!("{}: {e}", a.join(f).display()))?;
        let y = std::fs::read(b.join(f)).map_err(|e| format!("{}: {e}", b.join(f).display()))?;
        if x != y {
            return Err(format!("{} differs between runs", b.join(f).display()));
        }
    }
    Ok(files.len())
}

fn criterion_determinism(root: &Path, oracle_first: &OracleSummary) -> Verdict {
    let mut compared = 0;
    for kind in DatasetKind::ALL {
        let second = root.join("run_b").join(kind.as_str());
        let outcome = match run_benchmark(&BenchmarkConfig::new(kind, BENCH_SEED)) {
            Ok(o) => o,
            Err(e) => return Verdict::new(false, format!("{kind} rerun: {e}")),
        };
        if let Err(e) = write_benchmark(&second, &outcome, false) {
            return Verdict::new(false, e.to_string());
        }
        match compare_dirs(&root.join("run_a").join(kind.as_str()), &second, &METRIC_FILES) {
            Ok(n) => compared += n,
            Err(e) => return Verdict::new(false, e),
        }
    }
    let oracle_second = run_oracle_suite(&oracle_config()).unwrap();
    let a = serde_json::to_vec(oracle_first).unwrap();
    let b = serde_json::to_vec(&oracle_second).unwrap();
    Verdict::new(a == b, format!("{compared} metric files byte-identical across reruns, oracle summary identical: {}", a == b))
}

// ----------------------------------------------------------------

fn run_benchmarks(root: &Path) -> Result<BTreeMap<DatasetKind, BenchmarkOutcome>, String> {
    let mut out = BTreeMap::new();
    for kind in DatasetKind::ALL {
        let t = Instant::now();
        let outcome = run_benchmark(&BenchmarkConfig::new(kind, BENCH_SEED)).map_err(|e| format!("{kind}: {e}"))?;
        write_benchmark(&root.join("run_a").join(kind.as_str()), &outcome, false).map_err(|e| e.to_string())?;
        println!("  benchmark {kind} finished in {:.0} s", t.elapsed().as_secs_f64());
        out.insert(kind, outcome);
    }
    Ok(out)
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |ids: &[u32]| selected.is_empty() || ids.iter().any(|i| selected.contains(i));
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut lines = Vec::new();
    let mut all_passed = true;
    let mut record = |id: u32, name: &str, v: Verdict, secs: f64| {
        let l = line(id, name, &v, secs);
        println!("{l}");
        all_passed &= v.passed;
        lines.push(l);
    };

    if wants(&[1]) {
        let t = Instant::now();
        let v = criterion_gradients();
        record(1, "gradient checks", v, t.elapsed().as_secs_f64());
    }
    if wants(&[2]) {
        let t = Instant::now();
        let v = criterion_concrete();
        record(2, "concrete relaxation properties", v, t.elapsed().as_secs_f64());
    }
    let mut oracle = None;
    if wants(&[3, 4, 10]) {
        let t = Instant::now();
        let s = run_oracle_suite(&oracle_config()).expect("oracle suite runs");
        let secs = t.elapsed().as_secs_f64();
        if wants(&[3]) {
            record(3, "optimal selection rule on finite joints", criterion_selection(&s), secs);
        }
        if wants(&[4]) {
            record(4, "variational bound and its equality case", criterion_bound(&s), secs);
        }
        oracle = Some(s);
    }
    if wants(&[5, 6, 7, 8, 9, 10]) {
        let t = Instant::now();
        match run_benchmarks(&root) {
            Ok(outcomes) => {
                let secs = t.elapsed().as_secs_f64();
                let r = |k: DatasetKind| &outcomes[&k].report;
                if wants(&[5]) {
                    record(5, "xor median rank", criterion_median(r(DatasetKind::Xor), 2.0), secs);
                }
                if wants(&[6]) {
                    record(6, "orange skin median rank", criterion_median(r(DatasetKind::OrangeSkin), 3.0), secs);
                }
                if wants(&[7]) {
                    let v = criterion_baselines(&[r(DatasetKind::NonlinearAdditive), r(DatasetKind::Switch)]);
                    record(7, "l2x against gradient baselines", v, secs);
                }
                if wants(&[8]) {
                    record(8, "orange skin post-hoc accuracy", criterion_post_hoc(r(DatasetKind::OrangeSkin)), secs);
                }
                if wants(&[9]) {
                    let t = Instant::now();
                    let v = criterion_explain_cost(&outcomes);
                    record(9, "explanation cost", v, t.elapsed().as_secs_f64());
                }
                if wants(&[10]) {
                    let t = Instant::now();
                    let oracle = oracle.as_ref().expect("oracle ran");
                    let v = criterion_determinism(&root, oracle);
                    record(10, "byte-identical metric files", v, t.elapsed().as_secs_f64());
                }
            }
            Err(e) => {
                for (id, name) in [(5, "xor median rank"), (6, "orange skin median rank"), (7, "l2x against gradient baselines"), (8, "orange skin post-hoc accuracy"), (9, "explanation cost"), (10, "byte-identical metric files")] {
                    if wants(&[id]) {
                        record(id, name, Verdict::new(false, format!("benchmark failed: {e}")), 0.0);
                    }
                }
            }
        }
    }

    println!("\nsummary");
    for l in &lines {
        println!("{l}");
    }
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
