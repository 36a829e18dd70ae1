//! Randomized checks on exactly enumerable joints: the optimal selection
//! rule and the tightness of the variational bound.

use l2x_core::oracle::{
    brute_force_best_subset, exact_conditional, expected_kl, jensen_gap, subsets_of_size, DiscreteJoint,
    DEFAULT_RULE_CAP,
};
use l2x_core::rng::SeedStreams;
use l2x_core::sampling::FeatureSet;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub joints: usize,
    pub seed: u64,
    pub max_features: usize,
    pub max_classes: usize,
    pub rule_cap: u64,
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            joints: 100,
            seed: 0,
            max_features: 6,
            max_classes: 3,
            rule_cap: DEFAULT_RULE_CAP,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub joints: usize,
    pub rules_enumerated: u64,
    /// Largest `|value(per-input minimizers) − enumerated optimum|`.
    pub max_selection_gap: f64,
    /// Largest `|gap|` when q is the exact conditional.
    pub max_exact_gap: f64,
    /// Smallest gap over perturbed and random q.
    pub min_gap: f64,
    /// Smallest gap when one row of the exact conditional is perturbed.
    pub min_perturbed_gap: f64,
    /// Largest `|gap − expected KL|`.
    pub max_kl_mismatch: f64,
    /// Violations of the optimal-selection-rule characterization.
    pub selection_failures: Vec<String>,
    /// Violations of the variational bound or its equality case.
    pub bound_failures: Vec<String>,
}

impl OracleSummary {
    pub fn passed(&self) -> bool {
        self.selection_failures.is_empty() && self.bound_failures.is_empty()
    }

    pub fn failures(&self) -> impl Iterator<Item = &String> {
        self.selection_failures.iter().chain(&self.bound_failures)
    }
}

fn simplex_row(rng: &mut l2x_core::rng::Rng, c: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1))
}

pub fn run_oracle_suite(config: &OracleConfig) -> Result<OracleSummary> {
    let mut rng = SeedStreams::new(config.seed).rng("oracle");
    let mut summary = OracleSummary {
        joints: config.joints,
        rules_enumerated: 0,
        max_selection_gap: 0.0,
        max_exact_gap: 0.0,
        min_gap: f64::INFINITY,
        min_perturbed_gap: f64::INFINITY,
        max_kl_mismatch: 0.0,
        selection_failures: Vec::new(),
        bound_failures: Vec::new(),
    };
    let max_d = config.max_features.max(2);
    for j in 0..config.joints {
        let d = rng.random_range(2..=max_d);
        let c = rng.random_range(2..=config.max_classes.max(2));
        let k = rng.random_range(1..=d);
        let per_rule = binomial(d, k);
        let mut support = rng.random_range(2..=4usize.min(1 << d));
        while support > 1 && per_rule.checked_pow(support as u32).map_or(true, |n| n > config.rule_cap) {
            support -= 1;
        }
        let joint = DiscreteJoint::random(&mut rng, d, c, support)?;

        match brute_force_best_subset(&joint, k, config.rule_cap, config.tolerance) {
            Ok(best) => {
                summary.rules_enumerated += best.rules_enumerated;
                let gap = (best.per_input_information - best.enumerated_information).abs();
                summary.max_selection_gap = summary.max_selection_gap.max(gap);
                if best.enumerated_information < best.fixed_information - config.tolerance {
                    summary.selection_failures.push(format!("joint {j}: a fixed subset beats every rule"));
                }
            }
            Err(e) => summary.selection_failures.push(format!("joint {j} (d={d}, k={k}, support={support}): {e}")),
        }

        // Jensen checks on every subset size, including the empty set.
        let size = rng.random_range(0..=d);
        let subsets = subsets_of_size(d, size);
        let s: FeatureSet = subsets[rng.random_range(0..subsets.len())].clone();
        let exact = exact_conditional(&joint, &s)?;
        let g0 = jensen_gap(&joint, &s, &exact)?;
        summary.max_exact_gap = summary.max_exact_gap.max(g0.abs());
        if g0.abs() > 1e-12 {
            summary.bound_failures.push(format!("joint {j}: gap {g0} at the exact conditional"));
        }

        let keys: Vec<Vec<u32>> = exact.keys().map(<[u32]>::to_vec).collect();
        let mut perturbed = exact.clone();
        let key = &keys[rng.random_range(0..keys.len())];
        let row = exact.get(key).expect("key from table").to_vec();
        let eps = 1e-2;
        let mut bumped = row.clone();
        bumped[rng.random_range(0..c)] += eps;
        let total: f64 = bumped.iter().sum();
        perturbed.set(key, bumped.into_iter().map(|v| v / total).collect())?;

        let mut random = exact.clone();
        for key in &keys {
            random.set(key, simplex_row(&mut rng, c))?;
        }

        for (label, q) in [("perturbed", &perturbed), ("random", &random)] {
            let gap = jensen_gap(&joint, &s, q)?;
            let kl = expected_kl(&joint, &s, q)?;
            summary.min_gap = summary.min_gap.min(gap);
            summary.max_kl_mismatch = summary.max_kl_mismatch.max((gap - kl).abs());
            if gap < -1e-12 {
                summary.bound_failures.push(format!("joint {j}: negative gap {gap} for {label} q"));
            }
            if (gap - kl).abs() > 1e-12 {
                summary.bound_failures.push(format!("joint {j}: gap {gap} differs from expected KL {kl}"));
            }
        }
        let pg = jensen_gap(&joint, &s, &perturbed)?;
        summary.min_perturbed_gap = summary.min_perturbed_gap.min(pg);
        if pg <= 0.0 {
            summary.bound_failures.push(format!("joint {j}: perturbed q closes the gap ({pg})"));
        }
    }
    Ok(summary)
}
