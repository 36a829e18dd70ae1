//! Continuous relaxation of drawing `k` of `d` features.
//!
//! Each of `k` independent Concrete vectors is a temperature softmax of the
//! Gumbel-perturbed log-weights; the relaxed mask is their elementwise
//! maximum. At low temperature each Concrete vector is close to one-hot, so
//! the mask approximates a subset of at most `k` features.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::tensor::Tensor;

/// Temperature used throughout training unless overridden.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// Uniform draws are clamped into `[UNIFORM_CLAMP, 1 - UNIFORM_CLAMP]`.
pub const UNIFORM_CLAMP: f64 = 1e-12;

/// A sorted set of distinct, zero-based feature indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FeatureSet(Vec<usize>);

impl FeatureSet {
    /// Builds a set, rejecting duplicates and indices `>= d`.
    pub fn new(mut indices: Vec<usize>, d: usize) -> Result<Self> {
        indices.sort_unstable();
        if let Some(&bad) = indices.iter().find(|&&i| i >= d) {
            return Err(Error::Data(format!("feature index {bad} out of range for d={d}")));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Data(format!("duplicate feature index in {indices:?}")));
        }
        Ok(Self(indices))
    }

    pub fn full(d: usize) -> Self {
        Self((0..d).collect())
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn is_subset(&self, other: &FeatureSet) -> bool {
        self.iter().all(|i| other.contains(i))
    }

    /// 0/1 indicator of length `d`.
    pub fn indicator(&self, d: usize) -> Vec<f64> {
        let mut v = alloc::vec![0.0; d];
        for i in self.iter() {
            v[i] = 1.0;
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub d: usize,
    pub k: usize,
    pub temperature: f64,
}

impl SamplerConfig {
    pub fn new(d: usize, k: usize, temperature: f64) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::Parameter(format!("k must satisfy 1 <= k <= d, got k={k}, d={d}")));
        }
        if !(temperature > 0.0) {
            return Err(Error::Parameter(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self { d, k, temperature })
    }
}

/// A `rows × cols` matrix of Gumbel(0, 1) draws.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelNoise {
    values: Tensor,
    seed: Option<u64>,
}

impl GumbelNoise {
    /// Wraps precomputed draws (each row feeds one Concrete vector).
    pub fn from_tensor(values: Tensor) -> Result<Self> {
        values.require_matrix("gumbel noise")?;
        Ok(Self { values, seed: None })
    }

    /// Draws from a fresh generator seeded with `seed`.
    pub fn from_seed(seed: u64, rows: usize, cols: usize) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut noise = sample_gumbel(&mut rng, rows, cols);
        noise.seed = Some(seed);
        noise
    }

    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        self.values.row(j)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

/// `-ln(-ln u)` with `u` clamped away from 0 and 1.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    -libm::log(-libm::log(u))
}

pub fn sample_gumbel(rng: &mut Rng, rows: usize, cols: usize) -> GumbelNoise {
    assert!(rows >= 1 && cols >= 1, "noise matrix must be non-empty");
    let data = (0..rows * cols)
        .map(|_| gumbel_from_uniform(rng.random::<f64>()))
        .collect();
    GumbelNoise {
        values: Tensor::matrix(rows, cols, data).expect("shape"),
        seed: None,
    }
}

/// Concrete vector on the tape: `softmax((log_weights + gumbel) / τ)`.
pub fn concrete_on_graph(g: &mut Graph, log_weights: Var, gumbel: Var, temperature: f64) -> Result<Var> {
    let perturbed = g.add(log_weights, gumbel)?;
    g.softmax(perturbed, temperature)
}

/// Batched relaxed mask on the tape.
///
/// `log_weights` is `batch × d`; `noise[b]` is the `k × d` noise for row `b`.
/// Returns the `batch × d` elementwise maximum over the `k` Concrete vectors.
pub fn relaxed_mask_on_graph(
    g: &mut Graph,
    log_weights: Var,
    noise: &[GumbelNoise],
    temperature: f64,
) -> Result<Var> {
    let shape = g.value(log_weights).shape().to_vec();
    let (batch, d) = match *shape.as_slice() {
        [b, d] => (b, d),
        _ => return Err(Error::dim("relaxed_mask", &shape, &[0, 0])),
    };
    if noise.len() != batch {
        return Err(Error::Contract(format!(
            "{} noise matrices for a batch of {batch}",
            noise.len()
        )));
    }
    let k = noise.first().map(GumbelNoise::rows).unwrap_or(0);
    if k == 0 {
        return Err(Error::Contract("noise must have at least one row".into()));
    }
    if let Some(bad) = noise.iter().find(|n| n.rows() != k || n.cols() != d) {
        return Err(Error::dim("relaxed_mask", &[k, d], bad.values.shape()));
    }

    let mut mask: Option<Var> = None;
    for j in 0..k {
        let mut rows = Vec::with_capacity(batch * d);
        for n in noise {
            rows.extend_from_slice(n.row(j));
        }
        let gumbel = g.constant(Tensor::matrix(batch, d, rows)?);
        let concrete = concrete_on_graph(g, log_weights, gumbel, temperature)?;
        mask = Some(match mask {
            None => concrete,
            Some(m) => g.max(m, concrete)?,
        });
    }
    Ok(mask.expect("k >= 1"))
}

pub fn concrete_vector(log_weights: &Tensor, gumbel_row: &Tensor, temperature: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let lw = g.constant(log_weights.clone());
    let gr = g.constant(gumbel_row.clone());
    let c = concrete_on_graph(&mut g, lw, gr, temperature)?;
    Ok(g.value(c).clone())
}

/// The relaxed k-hot vector V for a single example.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedMask {
    values: Tensor,
    config: SamplerConfig,
}

impl RelaxedMask {
    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.data()
    }
}

/// Elementwise maximum of `k = noise.rows()` Concrete vectors sharing
/// `log_weights` (length `d`).
pub fn relaxed_subset_mask(
    log_weights: &Tensor,
    noise: &GumbelNoise,
    config: &SamplerConfig,
) -> Result<RelaxedMask> {
    if noise.rows() != config.k {
        return Err(Error::Contract(format!(
            "noise has {} rows but k = {}",
            noise.rows(),
            config.k
        )));
    }
    if log_weights.len() != config.d {
        return Err(Error::dim("relaxed_subset_mask", log_weights.shape(), &[config.d]));
    }
    let mut g = Graph::new();
    let lw = g.constant(log_weights.clone().reshape(alloc::vec![1, config.d])?);
    let v = relaxed_mask_on_graph(&mut g, lw, core::slice::from_ref(noise), config.temperature)?;
    Ok(RelaxedMask {
        values: g.value(v).clone().reshape(alloc::vec![config.d])?,
        config: *config,
    })
}

/// Indices of the `k` largest scores, ties broken toward the lower index.
pub fn hard_top_k(scores: &[f64], k: usize) -> Result<FeatureSet> {
    let d = scores.len();
    if k == 0 || k > d {
        return Err(Error::Parameter(format!("k must satisfy 1 <= k <= d, got k={k}, d={d}")));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    FeatureSet::new(order, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::vec;

    #[test]
    fn gumbel_formula_points() {
        assert_abs_diff_eq!(gumbel_from_uniform(0.5), -libm::log(libm::log(2.0)), epsilon = 1e-15);
        assert_abs_diff_eq!(gumbel_from_uniform(0.5), 0.366_512_920_581_664_3, epsilon = 1e-12);
        let at_clamp = gumbel_from_uniform(0.0);
        assert_abs_diff_eq!(at_clamp, -libm::log(27.631_021_115_928_547), epsilon = 1e-12);
        assert_abs_diff_eq!(at_clamp, -3.3190, epsilon = 1e-4);
        assert!(gumbel_from_uniform(1.0).is_finite());
    }

    #[test]
    fn gumbel_mean_is_euler_mascheroni() {
        let noise = GumbelNoise::from_seed(11, 1000, 1000);
        let mean = noise.values().sum() / 1e6;
        assert!((mean - 0.577_215_664_9).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn noise_is_reproducible() {
        assert_eq!(GumbelNoise::from_seed(3, 2, 5), GumbelNoise::from_seed(3, 2, 5));
        assert_ne!(GumbelNoise::from_seed(3, 2, 5), GumbelNoise::from_seed(4, 2, 5));
    }

    #[test]
    fn concrete_uniform_without_noise() {
        let c = concrete_vector(&Tensor::vector(vec![0.3; 4]), &Tensor::vector(vec![0.0; 4]), 0.7).unwrap();
        for &v in c.data() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn concrete_reference_values() {
        // e/(e+2) and 1/(e+2), computed by hand
        let c = concrete_vector(&Tensor::vector(vec![1.0, 0.0, 0.0]), &Tensor::vector(vec![0.0; 3]), 1.0).unwrap();
        let e = core::f64::consts::E;
        assert_abs_diff_eq!(c.data()[0], e / (e + 2.0), epsilon = 1e-15);
        assert_abs_diff_eq!(c.data()[0], 0.5761, epsilon = 1e-4);
        assert_abs_diff_eq!(c.data()[1], 0.2119, epsilon = 1e-4);
        assert_abs_diff_eq!(c.data()[2], 0.2119, epsilon = 1e-4);
    }

    #[test]
    fn concrete_low_temperature_is_one_hot() {
        let lw = Tensor::vector(vec![0.2, -0.4, 0.1]);
        let g = Tensor::vector(vec![0.05, 0.9, 0.3]);
        let c = concrete_vector(&lw, &g, 1e-4).unwrap();
        assert!(c.data()[1] > 0.999);
    }

    #[test]
    fn concrete_rejects_non_positive_temperature() {
        let v = Tensor::vector(vec![0.0; 2]);
        assert!(matches!(concrete_vector(&v, &v, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn single_row_mask_is_the_concrete_vector() {
        let lw = Tensor::vector(vec![0.5, -1.0, 2.0, 0.0]);
        let noise = GumbelNoise::from_seed(5, 1, 4);
        let cfg = SamplerConfig::new(4, 1, 0.3).unwrap();
        let mask = relaxed_subset_mask(&lw, &noise, &cfg).unwrap();
        let row = Tensor::vector(noise.row(0).to_vec());
        assert_eq!(mask.values(), &concrete_vector(&lw, &row, 0.3).unwrap());
    }

    #[test]
    fn full_k_low_temperature_covers_everything() {
        // row j strongly favours feature j
        let d = 4;
        let mut data = vec![0.0; d * d];
        for j in 0..d {
            data[j * d + j] = 10.0;
        }
        let noise = GumbelNoise::from_tensor(Tensor::matrix(d, d, data).unwrap()).unwrap();
        let cfg = SamplerConfig::new(d, d, 1e-4).unwrap();
        let mask = relaxed_subset_mask(&Tensor::vector(vec![0.0; d]), &noise, &cfg).unwrap();
        assert!(mask.as_slice().iter().all(|&v| v > 0.999));
    }

    #[test]
    fn mask_row_count_must_match_k() {
        let cfg = SamplerConfig::new(5, 2, 0.1).unwrap();
        let noise = GumbelNoise::from_seed(1, 3, 5);
        let lw = Tensor::vector(vec![0.0; 5]);
        assert!(matches!(relaxed_subset_mask(&lw, &noise, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn at_most_k_entries_above_half() {
        let cfg = SamplerConfig::new(5, 2, 0.1).unwrap();
        let lw = Tensor::vector(vec![0.3, -0.2, 1.0, 0.0, 0.5]);
        for seed in 0..1000 {
            let noise = GumbelNoise::from_seed(seed, 2, 5);
            let mask = relaxed_subset_mask(&lw, &noise, &cfg).unwrap();
            let active = mask.as_slice().iter().filter(|&&v| v > 0.5).count();
            assert!(active <= 2, "seed {seed}: {active}");
            // strict (0, 1) in exact arithmetic; at low temperature the top entry rounds to 1.0
            assert!(mask.as_slice().iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn sampler_config_validation() {
        assert!(SamplerConfig::new(5, 0, 0.1).is_err());
        assert!(SamplerConfig::new(5, 6, 0.1).is_err());
        assert!(SamplerConfig::new(5, 2, 0.0).is_err());
        assert!(SamplerConfig::new(5, 5, 0.1).is_ok());
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(hard_top_k(&[0.1, 0.9, 0.5], 2).unwrap().as_slice(), &[1, 2]);
        assert_eq!(hard_top_k(&[0.7; 4], 2).unwrap().as_slice(), &[0, 1]);
        assert_eq!(hard_top_k(&[3.0, 1.0, 2.0], 3).unwrap(), FeatureSet::full(3));
        assert!(matches!(hard_top_k(&[1.0, 2.0], 3), Err(Error::Parameter(_))));
        assert!(matches!(hard_top_k(&[1.0, 2.0], 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn feature_set_validation() {
        assert!(FeatureSet::new(vec![0, 3], 3).is_err());
        assert!(FeatureSet::new(vec![1, 1], 3).is_err());
        let s = FeatureSet::new(vec![2, 0], 3).unwrap();
        assert_eq!(s.as_slice(), &[0, 2]);
        assert_eq!(s.indicator(3), vec![1.0, 0.0, 1.0]);
    }
}
