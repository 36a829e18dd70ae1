//! RMSprop, the variational objective and the two training loops.
//!
//! The L2X objective for a batch is
//! `mean_b Σ_y P_m(y | x_b) · log g(V_b ⊙ x_b)_y`, where `V_b` is the
//! relaxed k-subset mask drawn from the explainer's scores for `x_b`. It is
//! maximized jointly over the explainer and the variational net; the
//! classifier only supplies the soft targets and is never updated.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::autodiff::{Graph, ParameterGradients, ParameterSet, Var};
use crate::error::{Error, Result};
use crate::models::{Classifier, Explainer, Mlp, MlpSpec, VariationalNet};
use crate::rng::{Rng, SeedStreams};
use crate::sampling::{relaxed_mask_on_graph, sample_gumbel, GumbelNoise, SamplerConfig};
use crate::tensor::Tensor;

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-7;

/// RMSprop: `acc ← ρ·acc + (1−ρ)·g²`, `p ← p − η·g / (√acc + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    accumulators: Vec<Tensor>,
}

impl RmsPropState {
    pub fn new(params: &ParameterSet, learning_rate: f64) -> Self {
        Self::with_hyperparameters(params, learning_rate, DEFAULT_RHO, DEFAULT_EPSILON)
    }

    pub fn with_hyperparameters(params: &ParameterSet, learning_rate: f64, rho: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            rho,
            epsilon,
            accumulators: params.iter().map(|(_, t)| Tensor::zeros_like(t)).collect(),
        }
    }

    pub fn accumulators(&self) -> &[Tensor] {
        &self.accumulators
    }

    /// One descent step on `params` using `grads` (matched by name and shape).
    pub fn update(&mut self, params: &mut ParameterSet, grads: &ParameterGradients) -> Result<()> {
        if params.len() != self.accumulators.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, got {}",
                self.accumulators.len(),
                params.len()
            )));
        }
        let (lr, rho, eps) = (self.learning_rate, self.rho, self.epsilon);
        for ((name, p), acc) in params.iter_mut().zip(&mut self.accumulators) {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Contract(format!("no gradient for {name:?}")))?;
            if g.shape() != p.shape() || acc.shape() != p.shape() {
                return Err(Error::Contract(format!(
                    "shape mismatch for {name:?}: param {:?}, grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            for ((pv, av), &gv) in p.data_mut().iter_mut().zip(acc.data_mut()).zip(g.data()) {
                *av = rho * *av + (1.0 - rho) * gv * gv;
                *pv -= lr * gv / (libm::sqrt(*av) + eps);
            }
        }
        Ok(())
    }
}

/// Knobs for the joint explainer / variational training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub k: usize,
    pub seed: u64,
    /// Independent noise matrices per example per step.
    pub noise_draws: usize,
}

impl TrainConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            temperature: crate::sampling::DEFAULT_TEMPERATURE,
            batch_size: 1000,
            epochs: 10,
            k,
            seed,
            noise_draws: 1,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        SamplerConfig::new(d, self.k, self.temperature)?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.noise_draws == 0 {
            return Err(Error::Parameter("batch size and noise draws must be positive".into()));
        }
        Ok(())
    }
}

/// Monte Carlo estimate of the objective on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveEstimate {
    pub value: f64,
    pub batch_size: usize,
    pub noise_seed: Option<u64>,
}

fn onehot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = alloc::vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Data(format!("label {y} out of range for {classes} classes")));
        }
        data[i * classes + y] = 1.0;
    }
    Tensor::matrix(labels.len(), classes, data)
}

/// `mean_b Σ_y targets[b, y] · log max(softmax(logits)[b, y], floor)`.
fn expected_log_likelihood(g: &mut Graph, logits: Var, targets: &Tensor) -> Result<Var> {
    let probs = g.softmax(logits, 1.0)?;
    let floored = g.clamp_min(probs, PROB_FLOOR);
    let logp = g.log(floored)?;
    let t = g.constant(targets.clone());
    let weighted = g.mul(logp, t)?;
    let total = g.sum(weighted, None)?;
    Ok(g.scale(total, 1.0 / targets.rows() as f64))
}

/// Records the objective for one batch on `g` and returns its scalar node.
///
/// `targets` holds `P_m(· | x)` per row; `noise[b]` is the `k × d` Gumbel
/// matrix for row `b`.
#[allow(clippy::too_many_arguments)]
pub fn objective_on_graph(
    g: &mut Graph,
    x: &Tensor,
    targets: &Tensor,
    explainer: &Explainer,
    explainer_vars: &[Var],
    variational: &VariationalNet,
    variational_vars: &[Var],
    noise: &[GumbelNoise],
    temperature: f64,
) -> Result<Var> {
    if targets.last_dim() != variational.num_classes() {
        return Err(Error::Contract(format!(
            "targets have {} classes, variational net has {}",
            targets.last_dim(),
            variational.num_classes()
        )));
    }
    let xv = g.constant(x.clone());
    let scores = explainer.scores_on_graph(g, xv, explainer_vars)?;
    let mask = relaxed_mask_on_graph(g, scores, noise, temperature)?;
    let masked = g.mul(mask, xv)?;
    let logits = variational.logits_on_graph(g, masked, variational_vars)?;
    expected_log_likelihood(g, logits, targets)
}

/// Evaluates the objective on a batch with fixed noise (no gradients).
pub fn l2x_objective(
    x: &Tensor,
    classifier: &Classifier,
    explainer: &Explainer,
    variational: &VariationalNet,
    noise: &[GumbelNoise],
    temperature: f64,
    k: usize,
) -> Result<ObjectiveEstimate> {
    if classifier.num_classes() != variational.num_classes() {
        return Err(Error::Contract(format!(
            "classifier has {} classes, variational net has {}",
            classifier.num_classes(),
            variational.num_classes()
        )));
    }
    if let Some(n) = noise.iter().find(|n| n.rows() != k) {
        return Err(Error::Contract(format!("noise has {} rows but k = {k}", n.rows())));
    }
    let targets = classifier.predict(x)?;
    let mut g = Graph::new();
    let ev = explainer.mlp().params().bind(&mut g);
    let vv = variational.mlp().params().bind(&mut g);
    let root = objective_on_graph(&mut g, x, &targets, explainer, &ev, variational, &vv, noise, temperature)?;
    Ok(ObjectiveEstimate {
        value: g.value(root).data()[0],
        batch_size: x.rows(),
        noise_seed: noise.first().and_then(GumbelNoise::seed),
    })
}

fn gather_rows(src: &Tensor, idx: &[usize]) -> Tensor {
    let w = src.last_dim();
    let mut data = Vec::with_capacity(idx.len() * w);
    for &i in idx {
        data.extend_from_slice(src.row(i));
    }
    Tensor::matrix(idx.len(), w, data).expect("non-empty batch")
}

/// Shuffled minibatch index lists for one epoch.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Joint minibatch ascent on the objective over explainer and variational
/// parameters. Drive it one epoch at a time with [`L2xTrainer::run_epoch`].
#[derive(Debug)]
pub struct L2xTrainer<'a> {
    x: &'a Tensor,
    targets: Tensor,
    explainer: Explainer,
    variational: VariationalNet,
    explainer_opt: RmsPropState,
    variational_opt: RmsPropState,
    config: TrainConfig,
    shuffle_rng: Rng,
    noise_rng: Rng,
    step: usize,
}

impl<'a> L2xTrainer<'a> {
    /// Queries the frozen classifier once for the soft targets of `x`.
    pub fn new(
        classifier: &Classifier,
        x: &'a Tensor,
        explainer: Explainer,
        variational: VariationalNet,
        config: TrainConfig,
    ) -> Result<Self> {
        let d = x.last_dim();
        config.validate(d)?;
        if explainer.input_dim() != d || variational.mlp().spec().input_dim() != d {
            return Err(Error::dim("l2x training", &[d], &[explainer.input_dim()]));
        }
        if classifier.num_classes() != variational.num_classes() {
            return Err(Error::Contract(format!(
                "classifier has {} classes, variational net has {}",
                classifier.num_classes(),
                variational.num_classes()
            )));
        }
        let targets = classifier.predict(x)?;
        let streams = SeedStreams::new(config.seed);
        Ok(Self {
            x,
            targets,
            explainer_opt: RmsPropState::new(explainer.mlp().params(), config.learning_rate),
            variational_opt: RmsPropState::new(variational.mlp().params(), config.learning_rate),
            explainer,
            variational,
            config,
            shuffle_rng: streams.rng("shuffle"),
            noise_rng: streams.rng("noise"),
            step: 0,
        })
    }

    pub fn explainer(&self) -> &Explainer {
        &self.explainer
    }

    pub fn variational(&self) -> &VariationalNet {
        &self.variational
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// One pass over the data; returns the mean batch objective.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let batches = epoch_batches(self.x.rows(), self.config.batch_size, &mut self.shuffle_rng);
        let d = self.x.last_dim();
        let mut total = 0.0;
        for idx in &batches {
            let xb = gather_rows(self.x, idx);
            let tb = gather_rows(&self.targets, idx);

            let mut g = Graph::new();
            let ev = self.explainer.mlp().params().bind(&mut g);
            let vv = self.variational.mlp().params().bind(&mut g);
            let mut draws = Vec::with_capacity(self.config.noise_draws);
            for _ in 0..self.config.noise_draws {
                let noise: Vec<GumbelNoise> = (0..idx.len())
                    .map(|_| sample_gumbel(&mut self.noise_rng, self.config.k, d))
                    .collect();
                let obj = objective_on_graph(
                    &mut g,
                    &xb,
                    &tb,
                    &self.explainer,
                    &ev,
                    &self.variational,
                    &vv,
                    &noise,
                    self.config.temperature,
                )?;
                draws.push(obj);
            }
            let mut objective = draws[0];
            for &o in &draws[1..] {
                objective = g.add(objective, o)?;
            }
            let objective = g.scale(objective, 1.0 / draws.len() as f64);
            let value = g.value(objective).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    step: self.step,
                    value,
                });
            }
            // minimize the negated objective
            let loss = g.neg(objective);
            let grads = g.backward(loss)?;
            let ge = grads.for_bound(self.explainer.mlp().params(), &ev);
            let gv = grads.for_bound(self.variational.mlp().params(), &vv);
            self.explainer_opt.update(self.explainer.mlp_mut().params_mut(), &ge)?;
            self.variational_opt.update(self.variational.mlp_mut().params_mut(), &gv)?;
            self.step += 1;
            total += value;
        }
        Ok(total / batches.len() as f64)
    }

    pub fn into_parts(self) -> (Explainer, VariationalNet) {
        (self.explainer, self.variational)
    }
}

/// Result of [`train_l2x`].
#[derive(Debug, Clone)]
pub struct L2xOutcome {
    pub explainer: Explainer,
    pub variational: VariationalNet,
    /// Mean training objective per epoch.
    pub curve: Vec<f64>,
}

/// Initializes both networks from the `init` stream and trains them.
pub fn init_l2x_networks(
    explainer_spec: MlpSpec,
    variational_spec: MlpSpec,
    seed: u64,
) -> Result<(Explainer, VariationalNet)> {
    let mut rng = SeedStreams::new(seed).rng("init");
    let explainer = Explainer::new(Mlp::init(explainer_spec, &mut rng)?)?;
    let variational = VariationalNet::new(Mlp::init(variational_spec, &mut rng)?)?;
    Ok((explainer, variational))
}

pub fn train_l2x(
    classifier: &Classifier,
    x: &Tensor,
    explainer_spec: MlpSpec,
    variational_spec: MlpSpec,
    config: TrainConfig,
) -> Result<L2xOutcome> {
    if config.k > x.last_dim() {
        return Err(Error::Parameter(format!("k = {} exceeds d = {}", config.k, x.last_dim())));
    }
    let (explainer, variational) = init_l2x_networks(explainer_spec, variational_spec, config.seed)?;
    let mut trainer = L2xTrainer::new(classifier, x, explainer, variational, config)?;
    let mut curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        curve.push(trainer.run_epoch()?);
    }
    let (explainer, variational) = trainer.into_parts();
    Ok(L2xOutcome {
        explainer,
        variational,
        curve,
    })
}

/// Knobs for fitting the classifier to hard labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl ClassifierConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: 1000,
            epochs: 10,
            seed,
        }
    }
}

/// Minibatch cross-entropy training of a classifier.
#[derive(Debug)]
pub struct ClassifierTrainer<'a> {
    x: &'a Tensor,
    labels: &'a [usize],
    classifier: Classifier,
    opt: RmsPropState,
    config: ClassifierConfig,
    shuffle_rng: Rng,
    step: usize,
}

impl<'a> ClassifierTrainer<'a> {
    pub fn new(x: &'a Tensor, labels: &'a [usize], spec: MlpSpec, config: ClassifierConfig) -> Result<Self> {
        if labels.is_empty() || x.rows() == 0 {
            return Err(Error::Data("cannot train on an empty dataset".into()));
        }
        if labels.len() != x.rows() {
            return Err(Error::Data(format!("{} labels for {} rows", labels.len(), x.rows())));
        }
        if config.batch_size == 0 || !(config.learning_rate > 0.0) {
            return Err(Error::Parameter("batch size and learning rate must be positive".into()));
        }
        let streams = SeedStreams::new(config.seed);
        let classifier = Classifier::new(Mlp::init(spec, &mut streams.rng("init"))?)?;
        Ok(Self {
            x,
            labels,
            opt: RmsPropState::new(classifier.mlp().params(), config.learning_rate),
            classifier,
            config,
            shuffle_rng: streams.rng("shuffle"),
            step: 0,
        })
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    /// One pass over the data; returns the mean batch cross-entropy.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let classes = self.classifier.num_classes();
        let batches = epoch_batches(self.x.rows(), self.config.batch_size, &mut self.shuffle_rng);
        let mut total = 0.0;
        for idx in &batches {
            let xb = gather_rows(self.x, idx);
            let yb: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
            let targets = onehot(&yb, classes)?;
            let mut g = Graph::new();
            let vars = self.classifier.mlp().params().bind(&mut g);
            let xv = g.constant(xb);
            let logits = self.classifier.mlp().logits_on_graph(&mut g, xv, &vars)?;
            let ll = expected_log_likelihood(&mut g, logits, &targets)?;
            let loss = g.neg(ll);
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    step: self.step,
                    value,
                });
            }
            let grads = g.backward(loss)?.parameters();
            self.opt.update(self.classifier.mlp_mut().params_mut(), &grads)?;
            self.step += 1;
            total += value;
        }
        Ok(total / batches.len() as f64)
    }

    pub fn into_classifier(self) -> Classifier {
        self.classifier
    }
}

/// Trains for `config.epochs` and returns the classifier with its loss curve.
pub fn train_classifier(
    x: &Tensor,
    labels: &[usize],
    spec: MlpSpec,
    config: ClassifierConfig,
) -> Result<(Classifier, Vec<f64>)> {
    let mut trainer = ClassifierTrainer::new(x, labels, spec, config)?;
    let mut curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        curve.push(trainer.run_epoch()?);
    }
    Ok((trainer.into_classifier(), curve))
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn accuracy(classifier: &Classifier, x: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.len() != x.rows() || labels.is_empty() {
        return Err(Error::Data(format!("{} labels for {} rows", labels.len(), x.rows())));
    }
    let p = classifier.predict(x)?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| crate::tensor::argmax(p.row(i)) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}
