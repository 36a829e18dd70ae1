use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use l2x_core::explainers::Method;
use l2x_core::metrics::{median_rank, post_hoc_accuracy};
use l2x_core::models::DEFAULT_HIDDEN;
use l2x_core::sampling::{FeatureSet, DEFAULT_TEMPERATURE};
use l2x_core::synthetic::{design_matrix, generate, labels, DatasetKind, GeneratorConfig};
use l2x_core::training::{accuracy, ClassifierConfig, TrainConfig, DEFAULT_LEARNING_RATE};

use l2x::error::exit;
use l2x::model_file::{self, Role};
use l2x::oracle_suite::{run_oracle_suite, OracleConfig};
use l2x::pipeline::{
    self, evaluate_methods, explain_all, BenchmarkConfig, Source, DEFAULT_BATCH_SIZE,
    DEFAULT_CLASSIFIER_EPOCHS, DEFAULT_L2X_EPOCHS, DEFAULT_N_TRAIN, DEFAULT_N_VALID,
};
use l2x::report::{self, BenchmarkReport, ClassifierSummary, EvaluationReport, TimingReport, REPORT_SCHEMA};
use l2x::{config_file, dataset, explanations, Error, Result};

/// Instancewise feature selection: synthetic benchmarks, training,
/// explanation and evaluation.
#[derive(Debug, Parser)]
#[command(name = "l2x", version, args_override_self = true)]
struct Cli {
    /// Worker threads for explanation fan-out (default 1).
    #[arg(long, global = true, env = "L2X_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic dataset and write it as CSV.
    Generate(GenerateArgs),
    /// Train the classifier to be explained.
    TrainModel(TrainModelArgs),
    /// Train the explainer and variational network against a classifier.
    TrainExplainer(TrainExplainerArgs),
    /// Explain every sample of a dataset, writing JSON lines.
    Explain(ExplainArgs),
    /// Score an explanation file: median rank and optional post-hoc accuracy.
    Evaluate(EvaluateArgs),
    /// Run L2X and the gradient baselines on one dataset and write reports.
    Benchmark(BenchmarkArgs),
    /// Check the selection-rule and variational-bound identities on random
    /// finite joints.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    dataset: DatasetKind,
    #[arg(long, default_value_t = DEFAULT_N_TRAIN)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Coefficient of the sine term in the additive logit.
    #[arg(long, default_value_t = 100.0)]
    sin_scale: f64,
}

#[derive(Debug, Args)]
struct TrainModelArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training curve CSV (epoch,objective,wall_ms).
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CLASSIFIER_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    learning_rate: f64,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainExplainerArgs {
    #[arg(long)]
    data: PathBuf,
    /// Classifier checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Receives explainer.l2xm, variational.l2xm and l2x_curve.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Features to select; defaults to the size of the first truth set.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_L2X_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    learning_rate: f64,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = 1)]
    noise_draws: usize,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    data: PathBuf,
    /// l2x, saliency or taylor.
    #[arg(long)]
    method: Method,
    /// Rank Taylor scores by magnitude.
    #[arg(long)]
    abs: bool,
    /// Classifier checkpoint (gradient methods).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Explainer checkpoint (l2x).
    #[arg(long)]
    explainer: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    explanations: PathBuf,
    /// Classifier checkpoint; enables post-hoc accuracy.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-sample median ranks CSV (method,dataset,median_rank).
    #[arg(long)]
    ranks: Option<PathBuf>,
    /// Dataset label for the ranks CSV.
    #[arg(long, default_value = "data")]
    dataset_name: String,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long)]
    dataset: DatasetKind,
    /// Generate data and train every network instead of loading artifacts.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Validation CSV (without --all).
    #[arg(long, required_unless_present = "all")]
    data: Option<PathBuf>,
    /// Classifier checkpoint (without --all).
    #[arg(long, required_unless_present = "all")]
    model: Option<PathBuf>,
    /// Explainer checkpoint (without --all).
    #[arg(long, required_unless_present = "all")]
    explainer: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_N_TRAIN)]
    n_train: usize,
    #[arg(long, default_value_t = DEFAULT_N_VALID)]
    n_valid: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_CLASSIFIER_EPOCHS)]
    classifier_epochs: usize,
    #[arg(long, default_value_t = DEFAULT_L2X_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    learning_rate: f64,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = 1)]
    noise_draws: usize,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = 100.0)]
    sin_scale: f64,
    /// Comma-separated subset of l2x,saliency,taylor,taylor_abs.
    #[arg(long, value_delimiter = ',', default_value = "l2x,saliency,taylor,taylor_abs")]
    methods: Vec<Method>,
    /// Also write explanations_<method>.jsonl.
    #[arg(long)]
    save_explanations: bool,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 100)]
    joints: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    max_features: usize,
    #[arg(long, default_value_t = 3)]
    max_classes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_k(samples: &[l2x_core::synthetic::LabeledSample], k: Option<usize>) -> usize {
    k.unwrap_or_else(|| samples[0].truth.len())
}

fn need(path: &Option<PathBuf>, flag: &str, method: Method) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::Usage(format!("--method {method} needs {flag}")))
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let config = GeneratorConfig {
        additive_sin_scale: a.sin_scale,
    };
    let samples = generate(a.dataset, a.n, a.seed, &config)?;
    dataset::write_dataset(&a.out, &samples)?;
    let positive = samples.iter().filter(|s| s.y == 1).count();
    println!(
        "wrote {} {} samples to {} ({:.1}% label 1)",
        samples.len(),
        a.dataset,
        a.out.display(),
        100.0 * positive as f64 / samples.len() as f64
    );
    Ok(())
}

fn cmd_train_model(a: &TrainModelArgs) -> Result<()> {
    let samples = dataset::read_dataset(&a.data)?;
    let x = design_matrix(&samples)?;
    let y = labels(&samples);
    let classes = y.iter().max().map_or(2, |&m| (m + 1).max(2));
    if a.epochs == 0 {
        eprintln!("warning: --epochs 0 writes an untrained checkpoint");
    }
    let config = ClassifierConfig {
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
    };
    let spec = pipeline::classifier_spec(x.last_dim(), a.hidden, classes)?;
    let (classifier, curve) = pipeline::fit_classifier(&x, &y, spec, config)?;
    model_file::save(&a.out, Role::Classifier, classifier.mlp())?;
    if let Some(path) = &a.curve {
        report::write_curve(path, &curve)?;
    }
    println!(
        "trained classifier for {} epochs, training accuracy {:.4}; wrote {}",
        a.epochs,
        accuracy(&classifier, &x, &y)?,
        a.out.display()
    );
    Ok(())
}

fn cmd_train_explainer(a: &TrainExplainerArgs) -> Result<()> {
    let samples = dataset::read_dataset(&a.data)?;
    let classifier = model_file::load_classifier(&a.model)?;
    let x = design_matrix(&samples)?;
    if a.epochs == 0 {
        eprintln!("warning: --epochs 0 writes untrained checkpoints");
    }
    let config = TrainConfig {
        learning_rate: a.learning_rate,
        temperature: a.temperature,
        batch_size: a.batch_size,
        epochs: a.epochs,
        k: default_k(&samples, a.k),
        seed: a.seed,
        noise_draws: a.noise_draws,
    };
    config.validate(x.last_dim())?;
    let (explainer, variational, curve) = pipeline::fit_l2x(&classifier, &x, a.hidden, config)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    model_file::save(&a.out_dir.join("explainer.l2xm"), Role::Explainer, explainer.mlp())?;
    model_file::save(&a.out_dir.join("variational.l2xm"), Role::Variational, variational.mlp())?;
    report::write_curve(&a.out_dir.join("l2x_curve.csv"), &curve)?;
    let last = curve.last().map_or(f64::NAN, |p| p.objective);
    println!(
        "trained explainer (k = {}) for {} epochs, final objective {last:.5}; wrote {}",
        config.k,
        a.epochs,
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_explain(a: &ExplainArgs, threads: usize) -> Result<()> {
    let samples = dataset::read_dataset(&a.data)?;
    let x = design_matrix(&samples)?;
    let k = default_k(&samples, a.k);
    let method = match (a.method, a.abs) {
        (Method::Taylor, true) => Method::TaylorAbs,
        (m, true) if m != Method::TaylorAbs => {
            return Err(Error::Usage("--abs only applies to --method taylor".into()));
        }
        (Method::GroundTruth, _) => return Err(Error::Usage("ground_truth is not an explanation method".into())),
        (m, _) => m,
    };
    let (expl, total_ns) = if method == Method::L2x {
        let explainer = model_file::load_explainer(&need(&a.explainer, "--explainer", method)?)?;
        explain_all(method, Source::L2x(&explainer), &x, k, threads)?
    } else {
        let classifier = model_file::load_classifier(&need(&a.model, "--model", method)?)?;
        explain_all(method, Source::Gradient(&classifier), &x, k, threads)?
    };
    explanations::write_explanations(&a.out, &expl)?;
    println!(
        "explained {} samples with {method} (k = {k}) in {:.1} ms; wrote {}",
        expl.len(),
        total_ns as f64 / 1e6,
        a.out.display()
    );
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let samples = dataset::read_dataset(&a.data)?;
    let expl = explanations::read_explanations(&a.explanations)?;
    if expl.len() != samples.len() {
        return Err(l2x_core::Error::Data(format!(
            "{} explanations for {} samples",
            expl.len(),
            samples.len()
        ))
        .into());
    }
    let truths: Vec<FeatureSet> = samples.iter().map(|s| s.truth.clone()).collect();
    let ranks = median_rank(&expl, &truths)?;
    let method = expl[0].method;
    let post_hoc = match &a.model {
        Some(path) => {
            let classifier = model_file::load_classifier(path)?;
            let selections: Vec<FeatureSet> = expl.iter().map(|e| e.selected.clone()).collect();
            Some(post_hoc_accuracy(&classifier, &design_matrix(&samples)?, &selections, method)?.accuracy)
        }
        None => None,
    };
    let report = EvaluationReport {
        schema: REPORT_SCHEMA,
        method: method.as_str().to_owned(),
        n: expl.len(),
        k: expl[0].selected.len(),
        median_rank: ranks.summary.into(),
        optimal_median: ranks.optimal_median,
        post_hoc_accuracy: post_hoc,
    };
    report::write_json(&a.out, &report)?;
    if let Some(path) = &a.ranks {
        report::write_median_ranks(path, &a.dataset_name, &[(report.method.clone(), ranks.per_sample)])?;
    }
    println!(
        "{method}: summary median rank {} (optimal {}){}",
        report.median_rank.median,
        report.optimal_median,
        post_hoc.map_or(String::new(), |p| format!(", post-hoc accuracy {p:.4}"))
    );
    Ok(())
}

fn print_report(report: &BenchmarkReport, out: &Path) {
    println!("{} (k = {}, n_valid = {}):", report.dataset, report.k, report.n_valid);
    for m in &report.methods {
        println!(
            "  {:<12} median rank {:>5} (optimal {}), post-hoc {:.4}",
            m.method, m.median_rank.median, m.optimal_median, m.post_hoc_accuracy
        );
    }
    println!("  ground-truth post-hoc {:.4}", report.ground_truth_post_hoc_accuracy);
    println!("wrote {}", out.display());
}

fn cmd_benchmark(a: &BenchmarkArgs, threads: usize) -> Result<()> {
    let config = BenchmarkConfig {
        dataset: a.dataset,
        seed: a.seed,
        n_train: a.n_train,
        n_valid: a.n_valid,
        k: a.k,
        hidden: a.hidden,
        classifier_epochs: a.classifier_epochs,
        l2x_epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        temperature: a.temperature,
        noise_draws: a.noise_draws,
        generator: GeneratorConfig {
            additive_sin_scale: a.sin_scale,
        },
        threads,
        methods: a.methods.clone(),
    };
    config.validate()?;
    if a.all {
        if a.epochs == 0 || a.classifier_epochs == 0 {
            eprintln!("warning: zero epochs leaves a network untrained");
        }
        let outcome = pipeline::run_benchmark(&config)?;
        pipeline::write_benchmark(&a.out, &outcome, a.save_explanations)?;
        print_report(&outcome.report, &a.out);
        return Ok(());
    }

    let data = a.data.as_deref().expect("required by clap");
    let valid = dataset::read_dataset(data)?;
    let classifier = model_file::load_classifier(a.model.as_deref().expect("required by clap"))?;
    let explainer = model_file::load_explainer(a.explainer.as_deref().expect("required by clap"))?;
    let k = default_k(&valid, a.k);
    let eval = evaluate_methods(&classifier, &explainer, &valid, k, &config.methods, threads)?;
    let xv = design_matrix(&valid)?;
    let report = BenchmarkReport {
        schema: REPORT_SCHEMA,
        dataset: a.dataset.as_str().to_owned(),
        seed: a.seed,
        d: xv.last_dim(),
        k,
        n_train: 0,
        n_valid: valid.len(),
        settings: config.settings(),
        classifier: ClassifierSummary {
            train_loss: Vec::new(),
            valid_accuracy: accuracy(&classifier, &xv, &labels(&valid))?,
            bayes_accuracy: pipeline::bayes_accuracy(&valid),
        },
        l2x_objective: Vec::new(),
        ground_truth_post_hoc_accuracy: eval.ground_truth_post_hoc_accuracy,
        methods: eval.summaries,
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    report::write_json(&a.out.join("report.json"), &report)?;
    report::write_median_ranks(&a.out.join("median_ranks.csv"), &report.dataset, &eval.per_sample_ranks)?;
    report::write_box_stats(&a.out.join("box_stats.csv"), &report)?;
    report::write_json(
        &a.out.join("timing.json"),
        &TimingReport {
            dataset: report.dataset.clone(),
            threads,
            classifier_train_ms: 0.0,
            l2x_train_ms: 0.0,
            methods: eval.timings,
        },
    )?;
    if a.save_explanations {
        for (method, expl) in &eval.explanations {
            explanations::write_explanations(&a.out.join(format!("explanations_{method}.jsonl")), expl)?;
        }
    }
    print_report(&report, &a.out);
    Ok(())
}

fn cmd_oracle(a: &OracleArgs) -> Result<()> {
    let summary = run_oracle_suite(&OracleConfig {
        joints: a.joints,
        seed: a.seed,
        max_features: a.max_features,
        max_classes: a.max_classes,
        ..OracleConfig::default()
    })?;
    if let Some(path) = &a.out {
        report::write_json(path, &summary)?;
    }
    println!(
        "{} joints, {} selection rules enumerated; max selection gap {:.3e}, max gap at exact q {:.3e}, min gap {:.3e}",
        summary.joints,
        summary.rules_enumerated,
        summary.max_selection_gap,
        summary.max_exact_gap,
        summary.min_gap
    );
    if summary.passed() {
        Ok(())
    } else {
        for f in summary.failures() {
            eprintln!("  {f}");
        }
        Err(l2x_core::Error::Contract(format!("{} oracle checks failed", summary.failures().count())).into())
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or(1);
    if threads == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::TrainModel(a) => cmd_train_model(a),
        Command::TrainExplainer(a) => cmd_train_explainer(a),
        Command::Explain(a) => cmd_explain(a, threads),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Benchmark(a) => cmd_benchmark(a, threads),
        Command::Oracle(a) => cmd_oracle(a),
    }
}

fn main() -> ExitCode {
    let argv = match config_file::expand(std::env::args().collect()) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
