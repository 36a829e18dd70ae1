//! Per-sample explanations: L2X top-k selection and the gradient baselines.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::models::{Classifier, Explainer};
use crate::sampling::{hard_top_k, FeatureSet};
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    L2x,
    /// `|∂ logit_c / ∂ x_i|` for the predicted class `c`.
    Saliency,
    /// `x_i · ∂ logit_c / ∂ x_i`, signed.
    Taylor,
    /// `|x_i · ∂ logit_c / ∂ x_i|`.
    TaylorAbs,
    /// The known true features; a reference, not an explainer.
    GroundTruth,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::L2x => "l2x",
            Method::Saliency => "saliency",
            Method::Taylor => "taylor",
            Method::TaylorAbs => "taylor_abs",
            Method::GroundTruth => "ground_truth",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2x" => Ok(Method::L2x),
            "saliency" => Ok(Method::Saliency),
            "taylor" => Ok(Method::Taylor),
            "taylor_abs" => Ok(Method::TaylorAbs),
            "ground_truth" => Ok(Method::GroundTruth),
            _ => Err(Error::Parameter(alloc::format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub id: usize,
    pub method: Method,
    pub scores: Vec<f64>,
    pub selected: FeatureSet,
    /// Wall time spent producing this explanation; filled in by callers that
    /// own a clock, 0 otherwise.
    pub elapsed_ns: u64,
}

fn check_k(k: usize, d: usize) -> Result<()> {
    if k == 0 || k > d {
        return Err(Error::Parameter(alloc::format!("k must satisfy 1 <= k <= d, got k={k}, d={d}")));
    }
    Ok(())
}

fn package(method: Method, scores: &Tensor, k: usize, first_id: usize) -> Result<Vec<Explanation>> {
    (0..scores.rows())
        .map(|r| {
            let row = scores.row(r);
            Ok(Explanation {
                id: first_id + r,
                method,
                scores: row.to_vec(),
                selected: hard_top_k(row, k)?,
                elapsed_ns: 0,
            })
        })
        .collect()
}

/// One explainer forward pass for the whole batch; never touches the classifier.
pub fn explain_l2x_batch(explainer: &Explainer, x: &Tensor, k: usize, first_id: usize) -> Result<Vec<Explanation>> {
    check_k(k, explainer.input_dim())?;
    let scores = explainer.scores(x)?;
    package(Method::L2x, &scores, k, first_id)
}

pub fn explain_l2x(explainer: &Explainer, x: &[f64], k: usize, id: usize) -> Result<Explanation> {
    let x = Tensor::matrix(1, x.len(), x.to_vec())?;
    Ok(explain_l2x_batch(explainer, &x, k, id)?.remove(0))
}

/// Gradient of the predicted-class logit with respect to each input row.
///
/// Rows do not interact in the network, so one backward pass over
/// `Σ_b logit[b, c_b]` yields every per-row gradient at once.
pub fn logit_gradients(classifier: &Classifier, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars: Vec<_> = classifier
        .mlp()
        .params()
        .iter()
        .map(|(_, t)| g.constant(t.clone()))
        .collect();
    let xv = g.input(x.clone());
    let logits = classifier.logits_on_graph(&mut g, xv, &vars)?;
    let lv = g.value(logits);
    let c = lv.last_dim();
    let mut pick = alloc::vec![0.0; lv.len()];
    for r in 0..lv.rows() {
        pick[r * c + argmax(lv.row(r))] = 1.0;
    }
    let pick = g.constant(Tensor::new(lv.shape().to_vec(), pick)?);
    let selected = g.mul(logits, pick)?;
    let root = g.sum(selected, None)?;
    Ok(g.backward(root)?.wrt(xv))
}

pub fn explain_saliency_batch(classifier: &Classifier, x: &Tensor, k: usize, first_id: usize) -> Result<Vec<Explanation>> {
    check_k(k, classifier.input_dim())?;
    let grads = logit_gradients(classifier, x)?;
    package(Method::Saliency, &grads.map(libm::fabs), k, first_id)
}

/// Taylor scores; `absolute` ranks by magnitude instead of signed value.
pub fn explain_taylor_batch(
    classifier: &Classifier,
    x: &Tensor,
    k: usize,
    first_id: usize,
    absolute: bool,
) -> Result<Vec<Explanation>> {
    check_k(k, classifier.input_dim())?;
    let grads = logit_gradients(classifier, x)?;
    let mut scores = x.zip_map(&grads, |xi, gi| xi * gi);
    let method = if absolute {
        scores = scores.map(libm::fabs);
        Method::TaylorAbs
    } else {
        Method::Taylor
    };
    package(method, &scores, k, first_id)
}

pub fn explain_saliency(classifier: &Classifier, x: &[f64], k: usize, id: usize) -> Result<Explanation> {
    let x = Tensor::matrix(1, x.len(), x.to_vec())?;
    Ok(explain_saliency_batch(classifier, &x, k, id)?.remove(0))
}

pub fn explain_taylor(classifier: &Classifier, x: &[f64], k: usize, id: usize, absolute: bool) -> Result<Explanation> {
    let x = Tensor::matrix(1, x.len(), x.to_vec())?;
    Ok(explain_taylor_batch(classifier, &x, k, id, absolute)?.remove(0))
}
