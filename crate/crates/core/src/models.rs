//! The three networks involved: the classifier being explained, the explainer
//! producing per-feature log-weights, and the variational approximator that
//! predicts the classifier's output from a masked input.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;

use crate::autodiff::{Graph, ParameterSet, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sampling::{FeatureSet, RelaxedMask};
use crate::tensor::{self, Tensor};

/// Hidden width used for all three networks by default.
pub const DEFAULT_HIDDEN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Rows of the output are class distributions.
    Softmax,
    /// Raw scores.
    Linear,
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::Softmax => "softmax-classifier",
            Head::Linear => "linear-scores",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "softmax-classifier" => Some(Head::Softmax),
            "linear-scores" => Some(Head::Linear),
            _ => None,
        }
    }
}

/// Fully connected ReLU network layout: `widths[0]` inputs, hidden widths,
/// `widths.last()` outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, head: Head) -> Result<Self> {
        let spec = Self { widths, head };
        spec.validate()?;
        Ok(spec)
    }

    /// `input → hidden × layers → output`.
    pub fn uniform(input: usize, hidden: usize, layers: usize, output: usize, head: Head) -> Result<Self> {
        let mut widths = alloc::vec![input];
        widths.extend(core::iter::repeat(hidden).take(layers));
        widths.push(output);
        Self::new(widths, head)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Parameter(format!(
                "an MLP needs at least one hidden layer, got widths {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Parameter(format!("zero width in {:?}", self.widths)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Parameter names and shapes in binding order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, w) in self.widths.windows(2).enumerate() {
            out.push((format!("dense{i}.weight"), alloc::vec![w[0], w[1]]));
            out.push((format!("dense{i}.bias"), alloc::vec![w[1]]));
        }
        out
    }
}

/// An MLP: layout plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: ParameterSet,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = ParameterSet::new();
        for (name, shape) in spec.parameter_shapes() {
            let n: usize = shape.iter().product();
            let data = if shape.len() == 2 {
                let bound = libm::sqrt(6.0 / (shape[0] + shape[1]) as f64);
                (0..n).map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound).collect()
            } else {
                alloc::vec![0.0; n]
            };
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = ParameterSet::new();
        for (name, shape) in spec.parameter_shapes() {
            params.insert(name, Tensor::zeros(&shape))?;
        }
        Ok(Self { spec, params })
    }

    /// Assembles a network from loaded parameters, checking names and shapes.
    pub fn from_parts(spec: MlpSpec, params: ParameterSet) -> Result<Self> {
        spec.validate()?;
        let expected = spec.parameter_shapes();
        if expected.len() != params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), (got_name, got)) in expected.iter().zip(params.iter()) {
            if name != got_name || shape.as_slice() != got.shape() {
                return Err(Error::Contract(format!(
                    "parameter {got_name:?} {:?} does not match {name:?} {shape:?}",
                    got.shape()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        match *shape {
            [_, w] if w == self.spec.input_dim() => Ok(()),
            _ => Err(Error::dim("mlp input", shape, &[0, self.spec.input_dim()])),
        }
    }

    /// Pre-head outputs recorded on `g`; `vars` come from `params().bind(g)`.
    pub fn logits_on_graph(&self, g: &mut Graph, x: Var, vars: &[Var]) -> Result<Var> {
        self.check_input(g.value(x).shape())?;
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} bound vars for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        let mut h = x;
        let last = self.spec.num_layers() - 1;
        for (layer, pair) in vars.chunks_exact(2).enumerate() {
            let z = g.matmul(h, pair[0])?;
            h = g.add_bias(z, pair[1])?;
            if layer < last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Tape-free forward pass; bitwise identical to [`Mlp::logits_on_graph`].
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let mut h: Option<Tensor> = None;
        let last = self.spec.num_layers() - 1;
        let mut it = self.params.iter();
        for layer in 0..=last {
            let (_, w) = it.next().expect("weight");
            let (_, b) = it.next().expect("bias");
            let z = tensor::matmul(h.as_ref().unwrap_or(x), w)?;
            let mut out = tensor::add_bias(&z, b)?;
            if layer < last {
                out = out.map(tensor::relu);
            }
            h = Some(out);
        }
        Ok(h.expect("at least one layer"))
    }

    fn head_output(&self, x: &Tensor) -> Result<Tensor> {
        let logits = self.logits(x)?;
        match self.spec.head {
            Head::Softmax => tensor::softmax(&logits, 1.0),
            Head::Linear => Ok(logits),
        }
    }
}

fn require_head(mlp: &Mlp, head: Head, role: &str) -> Result<()> {
    if mlp.spec.head != head {
        return Err(Error::Contract(format!(
            "{role} needs a {} head, got {}",
            head.as_str(),
            mlp.spec.head.as_str()
        )));
    }
    Ok(())
}

/// The model being explained, `P_m(y | x)`.
///
/// Counts every forward evaluation so callers can verify that an
/// explanation method never queried it.
#[derive(Debug)]
pub struct Classifier {
    mlp: Mlp,
    evaluations: AtomicU64,
}

impl Clone for Classifier {
    fn clone(&self) -> Self {
        Self {
            mlp: self.mlp.clone(),
            evaluations: AtomicU64::new(self.evaluations()),
        }
    }
}

impl PartialEq for Classifier {
    fn eq(&self, other: &Self) -> bool {
        self.mlp == other.mlp
    }
}

impl Classifier {
    pub fn new(mlp: Mlp) -> Result<Self> {
        require_head(&mlp, Head::Softmax, "classifier")?;
        Ok(Self {
            mlp,
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub(crate) fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn num_classes(&self) -> usize {
        self.mlp.spec.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.spec.input_dim()
    }

    /// Number of input rows evaluated so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    fn count(&self, rows: usize) {
        self.evaluations.fetch_add(rows as u64, Ordering::Relaxed);
    }

    /// Class probabilities, one row per input row.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let out = self.mlp.head_output(x)?;
        self.count(x.rows());
        Ok(out)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let out = self.mlp.logits(x)?;
        self.count(x.rows());
        Ok(out)
    }

    pub fn logits_on_graph(&self, g: &mut Graph, x: Var, vars: &[Var]) -> Result<Var> {
        let out = self.mlp.logits_on_graph(g, x, vars)?;
        self.count(g.value(x).rows());
        Ok(out)
    }
}

/// Maps an input to `d` importance scores, read as unnormalized log-weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Explainer {
    mlp: Mlp,
}

impl Explainer {
    pub fn new(mlp: Mlp) -> Result<Self> {
        require_head(&mlp, Head::Linear, "explainer")?;
        if mlp.spec.input_dim() != mlp.spec.output_dim() {
            return Err(Error::Contract(format!(
                "explainer must map R^d to R^d, got {:?}",
                mlp.spec.widths
            )));
        }
        Ok(Self { mlp })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub(crate) fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.spec.input_dim()
    }

    pub fn scores(&self, x: &Tensor) -> Result<Tensor> {
        self.mlp.logits(x)
    }

    pub fn scores_on_graph(&self, g: &mut Graph, x: Var, vars: &[Var]) -> Result<Var> {
        self.mlp.logits_on_graph(g, x, vars)
    }
}

/// Approximates the classifier's output given only the masked input.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalNet {
    mlp: Mlp,
}

impl VariationalNet {
    pub fn new(mlp: Mlp) -> Result<Self> {
        require_head(&mlp, Head::Softmax, "variational net")?;
        Ok(Self { mlp })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub(crate) fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn num_classes(&self) -> usize {
        self.mlp.spec.output_dim()
    }

    pub fn predict(&self, x_masked: &Tensor) -> Result<Tensor> {
        self.mlp.head_output(x_masked)
    }

    pub fn logits_on_graph(&self, g: &mut Graph, x: Var, vars: &[Var]) -> Result<Var> {
        self.mlp.logits_on_graph(g, x, vars)
    }
}

/// Which subset to keep when masking an input.
#[derive(Debug, Clone, Copy)]
pub enum Mask<'a> {
    Hard(&'a FeatureSet),
    Relaxed(&'a RelaxedMask),
}

/// Zeroes features outside a hard subset, or multiplies by a relaxed mask.
pub fn mask_input(x: &[f64], mask: Mask<'_>) -> Result<Vec<f64>> {
    let d = x.len();
    match mask {
        Mask::Hard(set) => {
            if let Some(bad) = set.iter().find(|&i| i >= d) {
                return Err(Error::dim("mask_input", &[d], &[bad + 1]));
            }
            Ok(x.iter()
                .enumerate()
                .map(|(i, &v)| if set.contains(i) { v } else { 0.0 })
                .collect())
        }
        Mask::Relaxed(v) => {
            if v.as_slice().len() != d {
                return Err(Error::dim("mask_input", &[d], v.values().shape()));
            }
            Ok(x.iter().zip(v.as_slice()).map(|(a, b)| a * b).collect())
        }
    }
}

/// Applies [`mask_input`] with a hard subset to every row of `x`.
pub fn mask_rows(x: &Tensor, sets: &[FeatureSet]) -> Result<Tensor> {
    if sets.len() != x.rows() {
        return Err(Error::Data(format!("{} masks for {} rows", sets.len(), x.rows())));
    }
    let d = x.last_dim();
    let mut data = Vec::with_capacity(x.len());
    for (i, set) in sets.iter().enumerate() {
        data.extend(mask_input(x.row(i), Mask::Hard(set))?);
    }
    Tensor::matrix(x.rows(), d, data)
}
