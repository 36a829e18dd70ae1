//! Exact computations on finite joints `(X, Y)`: mutual information of a
//! feature subset, the optimal per-input selection rule, and the gap of the
//! variational lower bound. Logarithms are natural, so information is in nats.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sampling::FeatureSet;

const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// A finite distribution over inputs with the model's conditional `P(Y | x)`
/// at each input.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    xs: Vec<Vec<u32>>,
    px: Vec<f64>,
    py: Vec<Vec<f64>>,
}

fn on_simplex(row: &[f64]) -> bool {
    row.iter().all(|&v| v.is_finite() && v >= 0.0) && libm::fabs(row.iter().sum::<f64>() - 1.0) <= SIMPLEX_TOLERANCE
}

impl DiscreteJoint {
    /// `px` must be strictly positive: every listed input is in the support.
    pub fn new(xs: Vec<Vec<u32>>, px: Vec<f64>, py: Vec<Vec<f64>>) -> Result<Self> {
        if xs.is_empty() || xs.len() != px.len() || xs.len() != py.len() {
            return Err(Error::Data(format!(
                "alphabet of {} inputs with {} probabilities and {} conditionals",
                xs.len(),
                px.len(),
                py.len()
            )));
        }
        let d = xs[0].len();
        let c = py[0].len();
        if d == 0 || c == 0 {
            return Err(Error::Data("inputs and outputs need at least one dimension".into()));
        }
        if let Some(bad) = xs.iter().position(|x| x.len() != d) {
            return Err(Error::Data(format!("input {bad} has {} features, expected {d}", xs[bad].len())));
        }
        let mut seen = xs.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != xs.len() {
            return Err(Error::Data("input alphabet has duplicates".into()));
        }
        if px.iter().any(|&p| !(p > 0.0 && p.is_finite())) || !on_simplex(&px) {
            return Err(Error::Data("p(x) must be positive and sum to 1".into()));
        }
        if let Some(bad) = py.iter().position(|row| row.len() != c || !on_simplex(row)) {
            return Err(Error::Data(format!("conditional row {bad} is not on the {c}-class simplex")));
        }
        Ok(Self { xs, px, py })
    }

    /// A random joint over `support` distinct binary vectors of length `d`
    /// with `c` classes.
    pub fn random(rng: &mut Rng, d: usize, c: usize, support: usize) -> Result<Self> {
        if d == 0 || d > 20 || c == 0 || support == 0 || support > (1usize << d) {
            return Err(Error::Parameter(format!(
                "cannot draw {support} distinct binary inputs of length {d} with {c} classes"
            )));
        }
        let mut codes: Vec<u32> = (0..1u32 << d).collect();
        codes.shuffle(rng);
        let xs = codes[..support]
            .iter()
            .map(|&code| (0..d).map(|i| (code >> i) & 1).collect())
            .collect();
        let px = normalized(rng, support);
        let py = (0..support).map(|_| normalized(rng, c)).collect();
        Self::new(xs, px, py)
    }

    pub fn num_features(&self) -> usize {
        self.xs[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.py[0].len()
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<u32>] {
        &self.xs
    }

    pub fn input_probabilities(&self) -> &[f64] {
        &self.px
    }

    pub fn conditionals(&self) -> &[Vec<f64>] {
        &self.py
    }

    /// Marginal `P(Y)`.
    pub fn label_marginal(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.num_classes()];
        for (p, row) in self.px.iter().zip(&self.py) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += p * v;
            }
        }
        out
    }

    fn check_subset(&self, subset: &FeatureSet) -> Result<()> {
        match subset.iter().find(|&i| i >= self.num_features()) {
            Some(bad) => Err(Error::Parameter(format!(
                "feature {bad} out of range for d={}",
                self.num_features()
            ))),
            None => Ok(()),
        }
    }
}

fn normalized(rng: &mut Rng, n: usize) -> Vec<f64> {
    // Exponential weights give a uniform draw on the simplex; the floor keeps
    // every entry positive.
    let w: Vec<f64> = (0..n)
        .map(|_| -libm::log(rng.random::<f64>().max(1e-300)) + 1e-3)
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn project(x: &[u32], subset: &FeatureSet) -> Vec<u32> {
    subset.iter().map(|i| x[i]).collect()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * libm::log(v)).sum::<f64>()
}

/// `P(Y | X_S = x_S)` for every observed `x_S`, with the mass `P(X_S = x_S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    subset: FeatureSet,
    rows: BTreeMap<Vec<u32>, Vec<f64>>,
    mass: BTreeMap<Vec<u32>, f64>,
}

impl ConditionalTable {
    pub fn subset(&self) -> &FeatureSet {
        &self.subset
    }

    pub fn get(&self, key: &[u32]) -> Option<&[f64]> {
        self.rows.get(key).map(Vec::as_slice)
    }

    /// Replaces one row; the table is revalidated when it is used.
    pub fn set(&mut self, key: &[u32], row: Vec<f64>) -> Result<()> {
        match self.rows.get_mut(key) {
            Some(slot) => {
                *slot = row;
                Ok(())
            }
            None => Err(Error::Data(format!("no row for x_S = {key:?}"))),
        }
    }

    pub fn mass(&self, key: &[u32]) -> Option<f64> {
        self.mass.get(key).copied()
    }

    pub fn keys(&self) -> impl Iterator<Item = &[u32]> {
        self.rows.keys().map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn exact_conditional(joint: &DiscreteJoint, subset: &FeatureSet) -> Result<ConditionalTable> {
    joint.check_subset(subset)?;
    let c = joint.num_classes();
    let mut rows: BTreeMap<Vec<u32>, Vec<f64>> = BTreeMap::new();
    let mut mass: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for ((x, &p), py) in joint.xs.iter().zip(&joint.px).zip(&joint.py) {
        let key = project(x, subset);
        let row = rows.entry(key.clone()).or_insert_with(|| alloc::vec![0.0; c]);
        for (r, v) in row.iter_mut().zip(py) {
            *r += p * v;
        }
        *mass.entry(key).or_insert(0.0) += p;
    }
    for (key, row) in rows.iter_mut() {
        let m = mass[key];
        row.iter_mut().for_each(|v| *v /= m);
    }
    Ok(ConditionalTable {
        subset: subset.clone(),
        rows,
        mass,
    })
}

/// `I(X_S; Y) = H(Y) − H(Y | X_S)`.
pub fn exact_mutual_information(joint: &DiscreteJoint, subset: &FeatureSet) -> Result<f64> {
    let table = exact_conditional(joint, subset)?;
    let conditional: f64 = table
        .rows
        .iter()
        .map(|(key, row)| table.mass[key] * entropy(row))
        .sum();
    Ok(entropy(&joint.label_marginal()) - conditional)
}

/// `E_m[−log P(Y | x_S) | x]` for one input of the alphabet.
pub fn expected_code_length(joint: &DiscreteJoint, table: &ConditionalTable, index: usize) -> f64 {
    let key = project(&joint.xs[index], &table.subset);
    let q = &table.rows[&key];
    -joint.py[index]
        .iter()
        .zip(q)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &qv)| p * libm::log(qv))
        .sum::<f64>()
}

/// Information captured by a per-input selection rule,
/// `H(Y) + Σ_x p(x) Σ_y P(y|x) log P(y | x_{S(x)})`. For a constant rule this
/// is `I(X_S; Y)`.
pub fn rule_information(joint: &DiscreteJoint, rule: &[FeatureSet]) -> Result<f64> {
    if rule.len() != joint.len() {
        return Err(Error::Data(format!("rule has {} entries for {} inputs", rule.len(), joint.len())));
    }
    let mut tables: BTreeMap<&FeatureSet, ConditionalTable> = BTreeMap::new();
    let mut total = entropy(&joint.label_marginal());
    for (i, s) in rule.iter().enumerate() {
        if !tables.contains_key(s) {
            tables.insert(s, exact_conditional(joint, s)?);
        }
        total -= joint.px[i] * expected_code_length(joint, &tables[s], i);
    }
    Ok(total)
}

/// All size-`k` subsets of `0..d` in lexicographic order.
pub fn subsets_of_size(d: usize, k: usize) -> Vec<FeatureSet> {
    let mut out = Vec::new();
    if k > d {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(FeatureSet::new(idx.clone(), d).expect("strictly increasing"));
        let Some(pos) = (0..k).rev().find(|&i| idx[i] < d - k + i) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestSubset {
    /// The single subset with the largest `I(X_S; Y)`; lowest in
    /// lexicographic order on ties.
    pub fixed: FeatureSet,
    pub fixed_information: f64,
    /// Per-input minimizers of the expected code length.
    pub per_input: Vec<FeatureSet>,
    pub per_input_information: f64,
    /// Best value over every deterministic rule, found by enumeration.
    pub enumerated_information: f64,
    pub rules_enumerated: u64,
}

/// Default limit on the number of deterministic rules enumerated.
pub const DEFAULT_RULE_CAP: u64 = 2_000_000;

/// Enumerates every deterministic selection rule `x ↦ S(x)` with `|S| = k`
/// and checks it against the per-input code-length minimizers:
/// the minimizers attain the enumerated optimum, and every rule attaining the
/// optimum picks a code-length minimizer at every input. Any violation beyond
/// `tolerance` is a contract error.
pub fn brute_force_best_subset(joint: &DiscreteJoint, k: usize, cap: u64, tolerance: f64) -> Result<BestSubset> {
    let d = joint.num_features();
    if k == 0 || k > d {
        return Err(Error::Parameter(format!("k must satisfy 1 <= k <= d, got k={k}, d={d}")));
    }
    let subsets = subsets_of_size(d, k);
    let m = joint.len();
    let rules = (subsets.len() as u64)
        .checked_pow(m as u32)
        .filter(|&n| n <= cap)
        .ok_or_else(|| {
            Error::Resource(format!(
                "{} subsets over {m} inputs exceed the cap of {cap} rules",
                subsets.len()
            ))
        })?;

    let tables = subsets
        .iter()
        .map(|s| exact_conditional(joint, s))
        .collect::<Result<Vec<_>>>()?;
    // cost[x][s] = p(x) · E[−log P(Y | x_s) | x]
    let cost: Vec<Vec<f64>> = (0..m)
        .map(|i| tables.iter().map(|t| joint.px[i] * expected_code_length(joint, t, i)).collect())
        .collect();
    let per_input_choice: Vec<usize> = cost
        .iter()
        .map(|row| (0..row.len()).fold(0, |best, s| if row[s] < row[best] { s } else { best }))
        .collect();
    let hy = entropy(&joint.label_marginal());

    let mut choice = alloc::vec![0usize; m];
    let mut best = f64::NEG_INFINITY;
    let mut optimal_rules: Vec<Vec<usize>> = Vec::new();
    for _ in 0..rules {
        let value = hy - (0..m).map(|i| cost[i][choice[i]]).sum::<f64>();
        if value > best + tolerance {
            best = value;
            optimal_rules.clear();
        }
        if value >= best - tolerance {
            best = best.max(value);
            optimal_rules.push(choice.clone());
        }
        for digit in choice.iter_mut() {
            *digit += 1;
            if *digit < subsets.len() {
                break;
            }
            *digit = 0;
        }
    }
    optimal_rules.retain(|r| hy - (0..m).map(|i| cost[i][r[i]]).sum::<f64>() >= best - tolerance);

    let per_input: Vec<FeatureSet> = per_input_choice.iter().map(|&s| subsets[s].clone()).collect();
    let per_input_information = rule_information(joint, &per_input)?;
    if libm::fabs(per_input_information - best) > tolerance {
        return Err(Error::Contract(format!(
            "per-input minimizers reach {per_input_information}, enumeration reaches {best}"
        )));
    }
    for rule in &optimal_rules {
        for i in 0..m {
            let chosen = cost[i][rule[i]];
            let minimum = cost[i][per_input_choice[i]];
            if chosen - minimum > tolerance {
                return Err(Error::Contract(format!(
                    "an optimal rule picks {:?} at input {i}, costing {chosen} against the minimum {minimum}",
                    subsets[rule[i]]
                )));
            }
        }
    }

    let mut fixed = 0;
    let mut fixed_information = f64::NEG_INFINITY;
    for (s, subset) in subsets.iter().enumerate() {
        let mi = exact_mutual_information(joint, subset)?;
        if mi > fixed_information + tolerance {
            fixed = s;
            fixed_information = mi;
        }
    }
    Ok(BestSubset {
        fixed: subsets[fixed].clone(),
        fixed_information,
        per_input,
        per_input_information,
        enumerated_information: best,
        rules_enumerated: rules,
    })
}

fn check_variational(joint: &DiscreteJoint, subset: &FeatureSet, q: &ConditionalTable) -> Result<ConditionalTable> {
    if q.subset != *subset {
        return Err(Error::Data(format!("table is for {:?}, not {:?}", q.subset, subset)));
    }
    let exact = exact_conditional(joint, subset)?;
    for key in exact.rows.keys() {
        match q.rows.get(key) {
            Some(row) if row.len() == joint.num_classes() && on_simplex(row) => {}
            Some(_) => return Err(Error::Data(format!("q row for {key:?} is not on the simplex"))),
            None => return Err(Error::Data(format!("q has no row for {key:?}"))),
        }
    }
    Ok(exact)
}

/// `E[log Q(Y | X_S)]` under the joint.
pub fn variational_objective_exact(joint: &DiscreteJoint, subset: &FeatureSet, q: &ConditionalTable) -> Result<f64> {
    check_variational(joint, subset, q)?;
    let mut total = 0.0;
    for ((x, &p), py) in joint.xs.iter().zip(&joint.px).zip(&joint.py) {
        let row = &q.rows[&project(x, subset)];
        for (&pv, &qv) in py.iter().zip(row) {
            if pv > 0.0 {
                total += p * pv * libm::log(qv);
            }
        }
    }
    Ok(total)
}

/// `E[log P(Y | X_S)] − E[log Q(Y | X_S)]`, the slack of the variational bound.
pub fn jensen_gap(joint: &DiscreteJoint, subset: &FeatureSet, q: &ConditionalTable) -> Result<f64> {
    let exact = check_variational(joint, subset, q)?;
    let tight = variational_objective_exact(joint, subset, &exact)?;
    Ok(tight - variational_objective_exact(joint, subset, q)?)
}

/// `Σ_{x_S} P(x_S) KL(P(· | x_S) ‖ Q(· | x_S))`, computed directly from the
/// grouped conditionals.
pub fn expected_kl(joint: &DiscreteJoint, subset: &FeatureSet, q: &ConditionalTable) -> Result<f64> {
    let exact = check_variational(joint, subset, q)?;
    let mut total = 0.0;
    for (key, p_row) in &exact.rows {
        let q_row = &q.rows[key];
        let kl: f64 = p_row
            .iter()
            .zip(q_row)
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &qv)| p * (libm::log(p) - libm::log(qv)))
            .sum();
        total += exact.mass[key] * kl;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use std::vec;

    fn set(idx: &[usize], d: usize) -> FeatureSet {
        FeatureSet::new(idx.to_vec(), d).unwrap()
    }

    fn binary_inputs(d: usize) -> Vec<Vec<u32>> {
        (0..1u32 << d).map(|c| (0..d).map(|i| (c >> i) & 1).collect()).collect()
    }

    /// Independent double sum over the full joint:
    /// Σ_{x,y} p(x) P(y|x) log(P(x_S, y) / (P(x_S) P(y))).
    fn double_sum_mi(joint: &DiscreteJoint, s: &FeatureSet) -> f64 {
        let xs = joint.inputs();
        let px = joint.input_probabilities();
        let py = joint.conditionals();
        let c = joint.num_classes();
        let mut total = 0.0;
        for a in 0..xs.len() {
            for y in 0..c {
                let pxy = px[a] * py[a][y];
                if pxy == 0.0 {
                    continue;
                }
                let mut p_s_y = 0.0;
                let mut p_s = 0.0;
                let mut p_y = 0.0;
                for b in 0..xs.len() {
                    let same = s.iter().all(|i| xs[a][i] == xs[b][i]);
                    if same {
                        p_s_y += px[b] * py[b][y];
                        p_s += px[b];
                    }
                    p_y += px[b] * py[b][y];
                }
                total += pxy * libm::log(p_s_y / (p_s * p_y));
            }
        }
        total
    }

    #[test]
    fn validation() {
        assert!(DiscreteJoint::new(vec![vec![0], vec![1]], vec![0.5, 0.5], vec![vec![1.0], vec![1.0]]).is_ok());
        assert!(DiscreteJoint::new(vec![vec![0], vec![0]], vec![0.5, 0.5], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(DiscreteJoint::new(vec![vec![0], vec![1]], vec![0.6, 0.5], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(DiscreteJoint::new(vec![vec![0], vec![1]], vec![1.0, 0.0], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(DiscreteJoint::new(vec![vec![0], vec![1]], vec![0.5, 0.5], vec![vec![0.7], vec![1.0]]).is_err());
    }

    #[test]
    fn independent_label_has_zero_information() {
        let xs = binary_inputs(2);
        let joint = DiscreteJoint::new(xs, vec![0.25; 4], vec![vec![0.3, 0.7]; 4]).unwrap();
        let mi = exact_mutual_information(&joint, &FeatureSet::full(2)).unwrap();
        assert!(mi.abs() < 1e-12);
    }

    #[test]
    fn identity_channel_carries_log_two() {
        let joint = DiscreteJoint::new(vec![vec![0], vec![1]], vec![0.5, 0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(exact_mutual_information(&joint, &set(&[0], 1)).unwrap(), libm::log(2.0), epsilon = 1e-15);
        assert_abs_diff_eq!(exact_mutual_information(&joint, &FeatureSet::empty()).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn out_of_range_subset() {
        let joint = DiscreteJoint::new(vec![vec![0], vec![1]], vec![0.5, 0.5], vec![vec![1.0], vec![1.0]]).unwrap();
        assert!(matches!(
            exact_mutual_information(&joint, &set(&[2], 3)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn matches_double_summation() {
        let mut rng = rng_from_seed(31);
        for _ in 0..20 {
            let joint = DiscreteJoint::random(&mut rng, 3, 2, 8).unwrap();
            for s in subsets_of_size(3, 2) {
                let a = exact_mutual_information(&joint, &s).unwrap();
                assert!((a - double_sum_mi(&joint, &s)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn subsets_enumerate_binomially() {
        assert_eq!(subsets_of_size(5, 2).len(), 10);
        assert_eq!(subsets_of_size(6, 3).len(), 20);
        assert_eq!(subsets_of_size(3, 3), vec![FeatureSet::full(3)]);
        assert_eq!(subsets_of_size(3, 1)[2].as_slice(), &[2]);
        assert!(subsets_of_size(2, 3).is_empty());
    }

    fn noisy_xor(noise: f64) -> DiscreteJoint {
        let xs = binary_inputs(4);
        let py = xs
            .iter()
            .map(|x| {
                let y = (x[0] ^ x[1]) as usize;
                let mut row = vec![noise, noise];
                row[y] = 1.0 - noise;
                row
            })
            .collect();
        DiscreteJoint::new(xs, vec![1.0 / 16.0; 16], py).unwrap()
    }

    #[test]
    fn xor_joint_selects_first_two_features() {
        let joint = noisy_xor(0.1);
        let best = brute_force_best_subset(&joint, 2, DEFAULT_RULE_CAP, 1e-10);
        // 6^16 rules is far over any cap
        assert!(matches!(best, Err(Error::Resource(_))));
        let mut top = (f64::NEG_INFINITY, FeatureSet::empty());
        for s in subsets_of_size(4, 2) {
            let mi = exact_mutual_information(&joint, &s).unwrap();
            if mi > top.0 + 1e-12 {
                top = (mi, s);
            }
        }
        assert_eq!(top.1.as_slice(), &[0, 1]);
    }

    #[test]
    fn brute_force_agrees_on_small_joint() {
        // XOR on a 4-point support with two distractors that copy x0 and x1 noisily.
        let xs = vec![vec![0, 0, 1, 0], vec![0, 1, 0, 0], vec![1, 0, 1, 1], vec![1, 1, 0, 1]];
        let py = vec![vec![0.9, 0.1], vec![0.1, 0.9], vec![0.1, 0.9], vec![0.9, 0.1]];
        let joint = DiscreteJoint::new(xs, vec![0.25; 4], py).unwrap();
        let best = brute_force_best_subset(&joint, 2, DEFAULT_RULE_CAP, 1e-10).unwrap();
        assert_eq!(best.rules_enumerated, 6u64.pow(4));
        assert_abs_diff_eq!(best.per_input_information, best.enumerated_information, epsilon = 1e-10);
        assert!(best.enumerated_information >= best.fixed_information - 1e-12);
        let full = exact_mutual_information(&joint, &FeatureSet::full(4)).unwrap();
        assert!(best.fixed_information <= full + 1e-12);
    }

    #[test]
    fn k_equal_d_gives_full_information() {
        let mut rng = rng_from_seed(3);
        let joint = DiscreteJoint::random(&mut rng, 3, 3, 5).unwrap();
        let best = brute_force_best_subset(&joint, 3, DEFAULT_RULE_CAP, 1e-10).unwrap();
        let full = exact_mutual_information(&joint, &FeatureSet::full(3)).unwrap();
        assert_abs_diff_eq!(best.fixed_information, full, epsilon = 1e-12);
        assert_abs_diff_eq!(best.enumerated_information, full, epsilon = 1e-12);
    }

    #[test]
    fn rule_information_of_constant_rule_is_mutual_information() {
        let mut rng = rng_from_seed(5);
        let joint = DiscreteJoint::random(&mut rng, 4, 2, 10).unwrap();
        let s = set(&[1, 3], 4);
        let rule = vec![s.clone(); joint.len()];
        assert_abs_diff_eq!(
            rule_information(&joint, &rule).unwrap(),
            exact_mutual_information(&joint, &s).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn jensen_gap_zero_at_exact_conditional() {
        let mut rng = rng_from_seed(9);
        let joint = DiscreteJoint::random(&mut rng, 3, 3, 6).unwrap();
        let s = set(&[0, 2], 3);
        let exact = exact_conditional(&joint, &s).unwrap();
        assert!(jensen_gap(&joint, &s, &exact).unwrap().abs() < 1e-12);
        // E[log P(Y|X_S)] = −H(Y|X_S) = I − H(Y)
        let hy = entropy(&joint.label_marginal());
        let mi = exact_mutual_information(&joint, &s).unwrap();
        assert_abs_diff_eq!(variational_objective_exact(&joint, &s, &exact).unwrap(), mi - hy, epsilon = 1e-12);
    }

    #[test]
    fn perturbed_row_opens_the_gap() {
        let mut rng = rng_from_seed(10);
        let joint = DiscreteJoint::random(&mut rng, 3, 2, 8).unwrap();
        let s = set(&[1], 3);
        let mut q = exact_conditional(&joint, &s).unwrap();
        let key: Vec<u32> = q.keys().next().unwrap().to_vec();
        let row = q.get(&key).unwrap().to_vec();
        let eps = 1e-3;
        let bumped = vec![row[0] + eps, row[1]];
        let total: f64 = bumped.iter().sum();
        q.set(&key, bumped.iter().map(|v| v / total).collect()).unwrap();
        let gap = jensen_gap(&joint, &s, &q).unwrap();
        assert!(gap > 0.0);
        assert_abs_diff_eq!(gap, expected_kl(&joint, &s, &q).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn invalid_q_is_a_data_error() {
        let mut rng = rng_from_seed(11);
        let joint = DiscreteJoint::random(&mut rng, 2, 2, 4).unwrap();
        let s = set(&[0], 2);
        let mut q = exact_conditional(&joint, &s).unwrap();
        q.set(&[0], vec![0.5, 0.6]).unwrap();
        assert!(matches!(jensen_gap(&joint, &s, &q), Err(Error::Data(_))));
        let other = exact_conditional(&joint, &set(&[1], 2)).unwrap();
        assert!(matches!(jensen_gap(&joint, &s, &other), Err(Error::Data(_))));
    }
}
