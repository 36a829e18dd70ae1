//! Stages shared by the CLI commands and the full benchmark run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use l2x_core::explainers::{
    explain_l2x_batch, explain_saliency_batch, explain_taylor_batch, Explanation, Method,
};
use l2x_core::metrics::{median_rank, post_hoc_accuracy};
use l2x_core::models::{Classifier, Explainer, Head, MlpSpec, VariationalNet, DEFAULT_HIDDEN};
use l2x_core::rng::SeedStreams;
use l2x_core::sampling::FeatureSet;
use l2x_core::synthetic::{design_matrix, generate, labels, DatasetKind, GeneratorConfig, LabeledSample};
use l2x_core::training::{
    accuracy, init_l2x_networks, ClassifierConfig, ClassifierTrainer, L2xTrainer, TrainConfig,
    DEFAULT_LEARNING_RATE,
};
use l2x_core::sampling::DEFAULT_TEMPERATURE;
use l2x_core::Tensor;

use crate::error::{Error, Result};
use crate::model_file::{self, Role};
use crate::report::{
    self, BenchmarkReport, ClassifierSummary, CurvePoint, MethodSummary, MethodTiming, Settings,
    TimingReport, REPORT_SCHEMA,
};

/// Hidden layers of the classifier, explainer and variational network.
pub const CLASSIFIER_LAYERS: usize = 3;
pub const EXPLAINER_LAYERS: usize = 2;
pub const VARIATIONAL_LAYERS: usize = 3;

pub const DEFAULT_CLASSIFIER_EPOCHS: usize = 5;
pub const DEFAULT_L2X_EPOCHS: usize = 10;
pub const DEFAULT_BATCH_SIZE: usize = 1000;
pub const DEFAULT_N_TRAIN: usize = 100_000;
pub const DEFAULT_N_VALID: usize = 10_000;

/// Rows per explanation chunk; also the unit of work handed to threads.
const CHUNK: usize = 1000;

pub fn classifier_spec(d: usize, hidden: usize, classes: usize) -> Result<MlpSpec> {
    Ok(MlpSpec::uniform(d, hidden, CLASSIFIER_LAYERS, classes, Head::Softmax)?)
}

pub fn explainer_spec(d: usize, hidden: usize) -> Result<MlpSpec> {
    Ok(MlpSpec::uniform(d, hidden, EXPLAINER_LAYERS, d, Head::Linear)?)
}

pub fn variational_spec(d: usize, hidden: usize, classes: usize) -> Result<MlpSpec> {
    Ok(MlpSpec::uniform(d, hidden, VARIATIONAL_LAYERS, classes, Head::Softmax)?)
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Trains a classifier on hard labels, recording one curve point per epoch.
pub fn fit_classifier(
    x: &Tensor,
    y: &[usize],
    spec: MlpSpec,
    config: ClassifierConfig,
) -> Result<(Classifier, Vec<CurvePoint>)> {
    let mut trainer = ClassifierTrainer::new(x, y, spec, config)?;
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let objective = trainer.run_epoch()?;
        curve.push(CurvePoint {
            epoch,
            objective,
            wall_ms: ms_since(start),
        });
    }
    Ok((trainer.into_classifier(), curve))
}

/// Trains the explainer and variational network against a frozen classifier.
pub fn fit_l2x(
    classifier: &Classifier,
    x: &Tensor,
    hidden: usize,
    config: TrainConfig,
) -> Result<(Explainer, VariationalNet, Vec<CurvePoint>)> {
    let d = x.last_dim();
    let (explainer, variational) = init_l2x_networks(
        explainer_spec(d, hidden)?,
        variational_spec(d, hidden, classifier.num_classes())?,
        config.seed,
    )?;
    let mut trainer = L2xTrainer::new(classifier, x, explainer, variational, config)?;
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let objective = trainer.run_epoch()?;
        curve.push(CurvePoint {
            epoch,
            objective,
            wall_ms: ms_since(start),
        });
    }
    let (explainer, variational) = trainer.into_parts();
    Ok((explainer, variational, curve))
}

/// The network an explanation method needs.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    L2x(&'a Explainer),
    Gradient(&'a Classifier),
}

fn explain_chunk(method: Method, source: Source<'_>, x: &Tensor, k: usize, first_id: usize) -> Result<Vec<Explanation>> {
    match (method, source) {
        (Method::L2x, Source::L2x(e)) => Ok(explain_l2x_batch(e, x, k, first_id)?),
        (Method::Saliency, Source::Gradient(c)) => Ok(explain_saliency_batch(c, x, k, first_id)?),
        (Method::Taylor, Source::Gradient(c)) => Ok(explain_taylor_batch(c, x, k, first_id, false)?),
        (Method::TaylorAbs, Source::Gradient(c)) => Ok(explain_taylor_batch(c, x, k, first_id, true)?),
        (m, _) => Err(Error::Usage(format!("method {m} cannot run on the given network"))),
    }
}

fn rows(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let d = x.last_dim();
    Ok(Tensor::matrix(end - start, d, x.data()[start * d..end * d].to_vec())?)
}

/// Explains every row of `x`, fanning fixed-size chunks out over `threads`
/// workers. Output order and values do not depend on the thread count.
/// Each explanation's `elapsed_ns` is its share of its chunk's wall time.
pub fn explain_all(method: Method, source: Source<'_>, x: &Tensor, k: usize, threads: usize) -> Result<(Vec<Explanation>, u64)> {
    let n = x.rows();
    let chunks: Vec<(usize, usize)> = (0..n).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(n))).collect();
    let run = |&(start, end): &(usize, usize)| -> Result<Vec<Explanation>> {
        let t = Instant::now();
        let mut out = explain_chunk(method, source, &rows(x, start, end)?, k, start)?;
        let share = t.elapsed().as_nanos() as u64 / (end - start) as u64;
        out.iter_mut().for_each(|e| e.elapsed_ns = share);
        Ok(out)
    };
    let start = Instant::now();
    let threads = threads.max(1).min(chunks.len().max(1));
    let results: Vec<Result<Vec<Explanation>>> = if threads == 1 {
        chunks.iter().map(run).collect()
    } else {
        let mut slots: Vec<Option<Result<Vec<Explanation>>>> = (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let chunks = &chunks;
                    let run = &run;
                    scope.spawn(move || {
                        (w..chunks.len())
                            .step_by(threads)
                            .map(|i| (i, run(&chunks[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("explanation worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk assigned")).collect()
    };
    let total = start.elapsed().as_nanos() as u64;
    let mut out = Vec::with_capacity(n);
    for r in results {
        out.extend(r?);
    }
    Ok((out, total))
}

/// Fraction of validation samples on which the Bayes decision is correct
/// in expectation, computed from the exact class-1 probability.
pub fn bayes_accuracy(samples: &[LabeledSample]) -> f64 {
    samples.iter().map(|s| s.p.max(1.0 - s.p)).sum::<f64>() / samples.len() as f64
}

/// Metrics of every method on one validation set.
#[derive(Debug, Clone)]
pub struct MethodEvaluation {
    pub summaries: Vec<MethodSummary>,
    pub timings: Vec<MethodTiming>,
    pub per_sample_ranks: Vec<(String, Vec<f64>)>,
    pub explanations: Vec<(Method, Vec<Explanation>)>,
    pub ground_truth_post_hoc_accuracy: f64,
}

/// Runs each method on `valid`, scoring median ranks against the true
/// features and post-hoc accuracy against the classifier.
pub fn evaluate_methods(
    classifier: &Classifier,
    explainer: &Explainer,
    valid: &[LabeledSample],
    k: usize,
    methods: &[Method],
    threads: usize,
) -> Result<MethodEvaluation> {
    let xv = design_matrix(valid)?;
    let truths: Vec<FeatureSet> = valid.iter().map(|s| s.truth.clone()).collect();
    let mut eval = MethodEvaluation {
        summaries: Vec::new(),
        timings: Vec::new(),
        per_sample_ranks: Vec::new(),
        explanations: Vec::new(),
        ground_truth_post_hoc_accuracy: 0.0,
    };
    for &method in methods {
        let source = if method == Method::L2x {
            Source::L2x(explainer)
        } else {
            Source::Gradient(classifier)
        };
        let before = classifier.evaluations();
        let (expl, total_ns) = explain_all(method, source, &xv, k, threads)?;
        let evaluations = classifier.evaluations() - before;
        let ranks = median_rank(&expl, &truths)?;
        let selections: Vec<FeatureSet> = expl.iter().map(|e| e.selected.clone()).collect();
        let post_hoc = post_hoc_accuracy(classifier, &xv, &selections, method)?;
        eval.summaries.push(MethodSummary {
            method: method.as_str().to_owned(),
            median_rank: ranks.summary.into(),
            optimal_median: ranks.optimal_median,
            post_hoc_accuracy: post_hoc.accuracy,
            classifier_evaluations: evaluations,
        });
        eval.timings.push(MethodTiming {
            method: method.as_str().to_owned(),
            samples: expl.len(),
            total_ns,
            per_sample_ns: total_ns as f64 / expl.len() as f64,
        });
        eval.per_sample_ranks.push((method.as_str().to_owned(), ranks.per_sample));
        eval.explanations.push((method, expl));
    }
    eval.ground_truth_post_hoc_accuracy = post_hoc_accuracy(classifier, &xv, &truths, Method::GroundTruth)?.accuracy;
    Ok(eval)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub dataset: DatasetKind,
    pub seed: u64,
    pub n_train: usize,
    pub n_valid: usize,
    /// Defaults to the number of true features.
    pub k: Option<usize>,
    pub hidden: usize,
    pub classifier_epochs: usize,
    pub l2x_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub noise_draws: usize,
    pub generator: GeneratorConfig,
    pub threads: usize,
    pub methods: Vec<Method>,
}

impl BenchmarkConfig {
    pub fn new(dataset: DatasetKind, seed: u64) -> Self {
        Self {
            dataset,
            seed,
            n_train: DEFAULT_N_TRAIN,
            n_valid: DEFAULT_N_VALID,
            k: None,
            hidden: DEFAULT_HIDDEN,
            classifier_epochs: DEFAULT_CLASSIFIER_EPOCHS,
            l2x_epochs: DEFAULT_L2X_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            temperature: DEFAULT_TEMPERATURE,
            noise_draws: 1,
            generator: GeneratorConfig::default(),
            threads: 1,
            methods: vec![Method::L2x, Method::Saliency, Method::Taylor, Method::TaylorAbs],
        }
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or_else(|| self.dataset.num_true_features())
    }

    /// Checks every knob before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_valid == 0 {
            return Err(Error::Usage("sample counts must be positive".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Usage("hidden width must be positive".into()));
        }
        if self.methods.contains(&Method::GroundTruth) {
            return Err(Error::Usage("ground_truth is always reported; it is not a method to run".into()));
        }
        self.l2x_config(0).validate(l2x_core::synthetic::DIM)?;
        Ok(())
    }

    fn l2x_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            temperature: self.temperature,
            batch_size: self.batch_size,
            epochs: self.l2x_epochs,
            k: self.k(),
            seed,
            noise_draws: self.noise_draws,
        }
    }

    pub fn settings(&self) -> Settings {
        Settings {
            hidden: self.hidden,
            classifier_epochs: self.classifier_epochs,
            l2x_epochs: self.l2x_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            temperature: self.temperature,
            noise_draws: self.noise_draws,
            additive_sin_scale: self.generator.additive_sin_scale,
        }
    }
}

/// Everything a benchmark run produces.
#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub report: BenchmarkReport,
    pub timing: TimingReport,
    pub per_sample_ranks: Vec<(String, Vec<f64>)>,
    pub classifier: Classifier,
    pub explainer: Explainer,
    pub variational: VariationalNet,
    pub classifier_curve: Vec<CurvePoint>,
    pub l2x_curve: Vec<CurvePoint>,
    pub explanations: Vec<(Method, Vec<Explanation>)>,
    pub valid: Vec<LabeledSample>,
}

/// Data generation, classifier training, L2X training, then every method on
/// the validation set.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkOutcome> {
    config.validate()?;
    let streams = SeedStreams::new(config.seed);
    let train = generate(config.dataset, config.n_train, streams.seed("data/train"), &config.generator)?;
    let valid = generate(config.dataset, config.n_valid, streams.seed("data/valid"), &config.generator)?;
    let x = design_matrix(&train)?;
    let y = labels(&train);
    let xv = design_matrix(&valid)?;
    let yv = labels(&valid);
    let d = x.last_dim();
    let classes = 2;

    let t = Instant::now();
    let classifier_config = ClassifierConfig {
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        epochs: config.classifier_epochs,
        seed: streams.seed("classifier"),
    };
    let (classifier, classifier_curve) = fit_classifier(&x, &y, classifier_spec(d, config.hidden, classes)?, classifier_config)?;
    let classifier_train_ms = ms_since(t);

    let t = Instant::now();
    let (explainer, variational, l2x_curve) =
        fit_l2x(&classifier, &x, config.hidden, config.l2x_config(streams.seed("l2x")))?;
    let l2x_train_ms = ms_since(t);

    let k = config.k();
    let eval = evaluate_methods(&classifier, &explainer, &valid, k, &config.methods, config.threads)?;

    let report = BenchmarkReport {
        schema: REPORT_SCHEMA,
        dataset: config.dataset.as_str().to_owned(),
        seed: config.seed,
        d,
        k,
        n_train: config.n_train,
        n_valid: config.n_valid,
        settings: config.settings(),
        classifier: ClassifierSummary {
            train_loss: classifier_curve.iter().map(|p| p.objective).collect(),
            valid_accuracy: accuracy(&classifier, &xv, &yv)?,
            bayes_accuracy: bayes_accuracy(&valid),
        },
        l2x_objective: l2x_curve.iter().map(|p| p.objective).collect(),
        ground_truth_post_hoc_accuracy: eval.ground_truth_post_hoc_accuracy,
        methods: eval.summaries,
    };
    let timing = TimingReport {
        dataset: config.dataset.as_str().to_owned(),
        threads: config.threads,
        classifier_train_ms,
        l2x_train_ms,
        methods: eval.timings,
    };
    Ok(BenchmarkOutcome {
        report,
        timing,
        per_sample_ranks: eval.per_sample_ranks,
        classifier,
        explainer,
        variational,
        classifier_curve,
        l2x_curve,
        explanations: eval.explanations,
        valid,
    })
}

/// Files whose bytes are fully determined by the configuration and seed.
pub const METRIC_FILES: [&str; 6] = [
    "report.json",
    "median_ranks.csv",
    "box_stats.csv",
    "classifier.l2xm",
    "explainer.l2xm",
    "variational.l2xm",
];

/// Writes the outcome into `dir`; returns the paths written.
pub fn write_benchmark(dir: &Path, outcome: &BenchmarkOutcome, with_explanations: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = |name: &str| dir.join(name);
    let mut written = Vec::new();
    report::write_json(&p("report.json"), &outcome.report)?;
    report::write_median_ranks(&p("median_ranks.csv"), &outcome.report.dataset, &outcome.per_sample_ranks)?;
    report::write_box_stats(&p("box_stats.csv"), &outcome.report)?;
    model_file::save(&p("classifier.l2xm"), Role::Classifier, outcome.classifier.mlp())?;
    model_file::save(&p("explainer.l2xm"), Role::Explainer, outcome.explainer.mlp())?;
    model_file::save(&p("variational.l2xm"), Role::Variational, outcome.variational.mlp())?;
    written.extend(METRIC_FILES.iter().map(|n| p(n)));
    report::write_json(&p("timing.json"), &outcome.timing)?;
    report::write_curve(&p("classifier_curve.csv"), &outcome.classifier_curve)?;
    report::write_curve(&p("l2x_curve.csv"), &outcome.l2x_curve)?;
    written.extend(["timing.json", "classifier_curve.csv", "l2x_curve.csv"].map(p));
    if with_explanations {
        for (method, expl) in &outcome.explanations {
            let path = p(&format!("explanations_{method}.jsonl"));
            crate::explanations::write_explanations(&path, expl)?;
            written.push(path);
        }
    }
    Ok(written)
}
