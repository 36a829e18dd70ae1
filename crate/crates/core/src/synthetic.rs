//! The four synthetic benchmarks: XOR, orange skin, nonlinear additive and
//! feature switching. All have `d = 10` standard-normal inputs (the first
//! coordinate of `switch` comes from a ±3 mixture) and a binary response with
//! `P(Y = 1 | x) = σ(logit(x))`.
//!
//! Feature indices are zero-based here: the one-based "features 1, 2" of XOR
//! are indices `{0, 1}`.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::sampling::FeatureSet;
use crate::tensor::{sigmoid, Tensor};

pub const DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DatasetKind {
    Xor,
    OrangeSkin,
    NonlinearAdditive,
    Switch,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [
        DatasetKind::Xor,
        DatasetKind::OrangeSkin,
        DatasetKind::NonlinearAdditive,
        DatasetKind::Switch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Xor => "xor",
            DatasetKind::OrangeSkin => "orange_skin",
            DatasetKind::NonlinearAdditive => "nonlinear_additive",
            DatasetKind::Switch => "switch",
        }
    }

    /// Number of ground-truth features, which is also the `k` used to explain.
    pub fn num_true_features(self) -> usize {
        match self {
            DatasetKind::Xor => 2,
            DatasetKind::OrangeSkin | DatasetKind::NonlinearAdditive => 4,
            DatasetKind::Switch => 5,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "xor" => Ok(DatasetKind::Xor),
            "orange_skin" | "orange" => Ok(DatasetKind::OrangeSkin),
            "nonlinear_additive" | "additive" => Ok(DatasetKind::NonlinearAdditive),
            "switch" => Ok(DatasetKind::Switch),
            _ => Err(Error::Parameter(format!(
                "unknown dataset {s:?} (expected xor, orange_skin, nonlinear_additive or switch)"
            ))),
        }
    }
}

/// Mixture component that generated `x[0]` in the switch dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SwitchComponent {
    /// Centered at +3: orange-skin logit on indices 1..=4.
    Plus,
    /// Centered at −3: additive logit on indices 5..=8.
    Minus,
}

impl SwitchComponent {
    pub fn truth(self) -> FeatureSet {
        let idx = match self {
            SwitchComponent::Plus => alloc::vec![0, 1, 2, 3, 4],
            SwitchComponent::Minus => alloc::vec![0, 5, 6, 7, 8],
        };
        FeatureSet::new(idx, DIM).expect("static indices")
    }

    /// Recovers the component from a switch truth set.
    pub fn from_truth(truth: &FeatureSet) -> Option<Self> {
        [SwitchComponent::Plus, SwitchComponent::Minus]
            .into_iter()
            .find(|c| &c.truth() == truth)
    }
}

/// Generator knobs. `additive_sin_scale` is the coefficient of the
/// `sin(2·x)` term in the additive logit (100 as published).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub additive_sin_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            additive_sin_scale: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    /// Exact `P(Y = 1 | x)`.
    pub p: f64,
    pub y: usize,
    pub truth: FeatureSet,
    pub component: Option<SwitchComponent>,
}

fn orange_skin_logit(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() - 4.0
}

fn additive_logit(x: &[f64], sin_scale: f64) -> f64 {
    -sin_scale * libm::sin(2.0 * x[0]) + 2.0 * libm::fabs(x[1]) + x[2] + libm::exp(-x[3])
}

pub fn logit(
    kind: DatasetKind,
    x: &[f64],
    component: Option<SwitchComponent>,
    config: &GeneratorConfig,
) -> Result<f64> {
    if x.len() != DIM {
        return Err(Error::dim("logit", &[x.len()], &[DIM]));
    }
    Ok(match kind {
        DatasetKind::Xor => x[0] * x[1],
        DatasetKind::OrangeSkin => orange_skin_logit(&x[..4]),
        DatasetKind::NonlinearAdditive => additive_logit(&x[..4], config.additive_sin_scale),
        DatasetKind::Switch => match component {
            Some(SwitchComponent::Plus) => orange_skin_logit(&x[1..5]),
            Some(SwitchComponent::Minus) => additive_logit(&x[5..9], config.additive_sin_scale),
            None => {
                return Err(Error::Contract(
                    "switch probabilities need the mixture component".into(),
                ))
            }
        },
    })
}

pub fn exact_probability(
    kind: DatasetKind,
    x: &[f64],
    component: Option<SwitchComponent>,
    config: &GeneratorConfig,
) -> Result<f64> {
    logit(kind, x, component, config).map(sigmoid)
}

pub fn truth_for(kind: DatasetKind, component: Option<SwitchComponent>) -> Result<FeatureSet> {
    let idx = match kind {
        DatasetKind::Xor => alloc::vec![0, 1],
        DatasetKind::OrangeSkin | DatasetKind::NonlinearAdditive => alloc::vec![0, 1, 2, 3],
        DatasetKind::Switch => {
            return component
                .map(SwitchComponent::truth)
                .ok_or_else(|| Error::Contract("switch truth needs the mixture component".into()))
        }
    };
    FeatureSet::new(idx, DIM)
}

/// Draws `n` labeled samples deterministically from `seed`.
pub fn generate(kind: DatasetKind, n: usize, seed: u64, config: &GeneratorConfig) -> Result<Vec<LabeledSample>> {
    if n == 0 {
        return Err(Error::Parameter("sample count must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x: Vec<f64> = (0..DIM).map(|_| rng.sample(StandardNormal)).collect();
        let component = if kind == DatasetKind::Switch {
            let c = if rng.random_bool(0.5) {
                SwitchComponent::Plus
            } else {
                SwitchComponent::Minus
            };
            x[0] += if c == SwitchComponent::Plus { 3.0 } else { -3.0 };
            Some(c)
        } else {
            None
        };
        let p = exact_probability(kind, &x, component, config)?;
        let y = usize::from(rng.random::<f64>() < p);
        out.push(LabeledSample {
            x,
            p,
            y,
            truth: truth_for(kind, component)?,
            component,
        });
    }
    Ok(out)
}

/// Stacks the inputs of `samples` into an `n × d` matrix.
pub fn design_matrix(samples: &[LabeledSample]) -> Result<Tensor> {
    Tensor::from_rows(&samples.iter().map(|s| s.x.as_slice()).collect::<Vec<_>>())
}

pub fn labels(samples: &[LabeledSample]) -> Vec<usize> {
    samples.iter().map(|s| s.y).collect()
}
