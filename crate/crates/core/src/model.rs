//! Model definition: coordinates, proportions `γ_i`, subset weights `a_J`,
//! the subset functionals `α`, `γ`, `𝒫_A`, and the irreducibility conditions.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::Chain;
use crate::subset::{Subset, MAX_COORDS};

/// Normalization tolerance for `Σ γ_i` and `Σ a_J`.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("model needs at least one coordinate")]
    NoCoordinates,
    #[error("N_TOO_LARGE: n = {0} exceeds the cap of {MAX_COORDS}")]
    NTooLarge(usize),
    #[error("gamma has {got} entries, expected n = {expected}")]
    GammaLength { expected: usize, got: usize },
    #[error("gamma_{coord} = {value} must be positive")]
    NonPositiveGamma { coord: usize, value: f64 },
    #[error("weight for {set:?} is negative ({value})")]
    NegativeWeight { set: Vec<usize>, value: f64 },
    #[error("set {set:?} has labels outside 1..={n}")]
    LabelOutOfRange { set: Vec<usize>, n: usize },
    #[error("set {0} listed more than once")]
    DuplicateSet(Subset),
    #[error("EMPTY_SET_WEIGHT: the empty set carries weight {0}")]
    EmptySetWeight(f64),
    #[error("NON_NORMALIZED: sum of {quantity} is {sum}")]
    NonNormalized { quantity: &'static str, sum: f64 },
    #[error("UNCOVERED_COORDINATE: coordinate {0} lies in no positive-weight set")]
    UncoveredCoordinate(usize),
    #[error("cannot parse number {0:?}")]
    BadNumber(String),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model: {}", join_errors(.0))]
    Invalid(Vec<ValidationError>),
    #[error("UNKNOWN_MODEL: {0}")]
    UnknownModel(String),
    #[error("CHAIN_MISMATCH: chain runs from {first} to {last}, expected {{}} to {full}")]
    ChainMismatch { first: Subset, last: Subset, full: Subset },
    #[error("model file: {0}")]
    Parse(#[from] serde_json::Error),
}

fn join_errors(errs: &[ValidationError]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

/// A number in a model file: either a JSON number, or a string holding a
/// decimal or an exact ratio `p/q` (the ratio is rounded once, at division).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Float(f64),
    Text(String),
}

impl Number {
    pub fn value(&self) -> Result<f64, ValidationError> {
        match self {
            Number::Float(x) => Ok(*x),
            Number::Text(t) => parse_number_text(t),
        }
    }
}

impl From<f64> for Number {
    fn from(x: f64) -> Self {
        Number::Float(x)
    }
}

fn parse_number_text(t: &str) -> Result<f64, ValidationError> {
    let bad = || ValidationError::BadNumber(t.to_string());
    match t.split_once('/') {
        Some((p, q)) => {
            let p: i64 = p.trim().parse().map_err(|_| bad())?;
            let q: i64 = q.trim().parse().map_err(|_| bad())?;
            if q == 0 {
                return Err(bad());
            }
            Ok(p as f64 / q as f64)
        }
        None => t.trim().parse().map_err(|_| bad()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub set: Vec<usize>,
    pub value: Number,
}

/// Unvalidated model as read from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDraft {
    pub n: usize,
    pub gamma: Vec<Number>,
    pub a: Vec<WeightEntry>,
    #[serde(default)]
    pub renormalize: bool,
}

impl ModelDraft {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Convenience constructor from floats with 1-based label lists.
    pub fn new(gamma: &[f64], a: &[(&[usize], f64)]) -> Self {
        ModelDraft {
            n: gamma.len(),
            gamma: gamma.iter().map(|&g| Number::Float(g)).collect(),
            a: a.iter().map(|(set, v)| WeightEntry { set: set.to_vec(), value: Number::Float(*v) }).collect(),
            renormalize: false,
        }
    }

    pub fn renormalized(mut self) -> Self {
        self.renormalize = true;
        self
    }
}

/// A validated nonhierarchical GREM instance.
///
/// Holds the positive-weight family `𝒫` plus lattice tables over all `2^n`
/// subsets: `α(A)` (by a subset-sum transform) and `|𝒫_A|` (exact integer
/// counts, used to detect `𝒫_A = 𝒫_B` without floating-point comparison).
#[derive(Debug, Clone)]
pub struct ModelSpec {
    n: usize,
    gamma: Vec<f64>,
    weights: Vec<(Subset, f64)>,
    renormalized: bool,
    alpha_table: Vec<f64>,
    count_table: Vec<u32>,
}

impl PartialEq for ModelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.gamma == other.gamma && self.weights == other.weights
    }
}

/// Values of the subset functionals at one subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetFunctionals {
    pub alpha: f64,
    pub gamma: f64,
    pub family: Vec<Subset>,
}

impl ModelSpec {
    pub fn validate(raw: &ModelDraft) -> Result<ModelSpec, ModelError> {
        validate_model(raw)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn full(&self) -> Subset {
        Subset::full(self.n)
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// `𝒫` with its weights, ordered by mask.
    pub fn weights(&self) -> &[(Subset, f64)] {
        &self.weights
    }

    pub fn weight(&self, j: Subset) -> f64 {
        self.weights.binary_search_by_key(&j, |(s, _)| *s).map(|k| self.weights[k].1).unwrap_or(0.0)
    }

    /// Whether validation rescaled the inputs.
    pub fn was_renormalized(&self) -> bool {
        self.renormalized
    }

    /// `α(A) = Σ_{J ∈ 𝒫_A} a_J`.
    pub fn alpha(&self, a: Subset) -> f64 {
        self.alpha_table[a.mask() as usize]
    }

    /// `γ(A) = Σ_{i ∈ A} γ_i`, summed in increasing coordinate order.
    pub fn gamma_of(&self, a: Subset) -> f64 {
        a.indices().map(|i| self.gamma[i]).sum()
    }

    /// `|𝒫_A|`.
    pub fn family_count(&self, a: Subset) -> u32 {
        self.count_table[a.mask() as usize]
    }

    /// `𝒫_A = {J ⊆ A : a_J > 0}`.
    pub fn family(&self, a: Subset) -> Vec<Subset> {
        self.weights.iter().map(|(j, _)| *j).filter(|j| j.is_subset_of(a)).collect()
    }

    /// `α(A) − α(B)` for `B ⊆ A`; exactly zero when `𝒫_A = 𝒫_B`.
    pub fn alpha_increment(&self, b: Subset, a: Subset) -> f64 {
        debug_assert!(b.is_subset_of(a));
        if self.family_count(a) == self.family_count(b) {
            0.0
        } else {
            (self.alpha(a) - self.alpha(b)).max(0.0)
        }
    }

    /// `γ(A) − γ(B)` for `B ⊆ A`.
    pub fn gamma_increment(&self, b: Subset, a: Subset) -> f64 {
        self.gamma_of(a.difference(b))
    }

    pub fn functionals(&self, a: Subset) -> SubsetFunctionals {
        subset_functionals(self, a)
    }

    /// Relabels coordinates: coordinate index `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> ModelSpec {
        assert_eq!(perm.len(), self.n);
        let mut gamma = vec![0.0; self.n];
        for (i, &g) in self.gamma.iter().enumerate() {
            gamma[perm[i]] = g;
        }
        let weights = self.weights.iter().map(|&(j, w)| (j.permuted(perm), w)).collect();
        ModelSpec::assemble(self.n, gamma, weights, self.renormalized)
    }

    /// Back to the file representation.
    pub fn to_draft(&self) -> ModelDraft {
        ModelDraft {
            n: self.n,
            gamma: self.gamma.iter().map(|&g| Number::Float(g)).collect(),
            a: self.weights.iter().map(|(j, w)| WeightEntry { set: j.labels(), value: Number::Float(*w) }).collect(),
            renormalize: false,
        }
    }

    fn assemble(n: usize, gamma: Vec<f64>, mut weights: Vec<(Subset, f64)>, renormalized: bool) -> Self {
        weights.sort_by_key(|(j, _)| *j);
        let size = 1usize << n;
        let mut alpha_table = vec![0.0; size];
        let mut count_table = vec![0u32; size];
        for &(j, w) in &weights {
            alpha_table[j.mask() as usize] += w;
            count_table[j.mask() as usize] += 1;
        }
        // Subset-sum (zeta) transform over the lattice.
        for bit in 0..n {
            let b = 1usize << bit;
            for m in 0..size {
                if m & b != 0 {
                    alpha_table[m] += alpha_table[m ^ b];
                    count_table[m] += count_table[m ^ b];
                }
            }
        }
        ModelSpec { n, gamma, weights, renormalized, alpha_table, count_table }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} gamma={:?} a=[", self.n, self.gamma)?;
        for (k, (j, w)) in self.weights.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{j}:{w}")?;
        }
        f.write_str("]")
    }
}

/// Validates a draft, collecting every problem found.
pub fn validate_model(raw: &ModelDraft) -> Result<ModelSpec, ModelError> {
    let mut errs = Vec::new();
    let n = raw.n;
    if n == 0 {
        return Err(ModelError::Invalid(vec![ValidationError::NoCoordinates]));
    }
    if n > MAX_COORDS {
        return Err(ModelError::Invalid(vec![ValidationError::NTooLarge(n)]));
    }
    if raw.gamma.len() != n {
        errs.push(ValidationError::GammaLength { expected: n, got: raw.gamma.len() });
    }

    let mut gamma = Vec::with_capacity(n);
    for (i, g) in raw.gamma.iter().enumerate() {
        match g.value() {
            Ok(v) if v > 0.0 && v.is_finite() => gamma.push(v),
            Ok(v) => errs.push(ValidationError::NonPositiveGamma { coord: i + 1, value: v }),
            Err(e) => errs.push(e),
        }
    }

    let full = Subset::full(n);
    let mut seen = BTreeSet::new();
    let mut weights = Vec::new();
    for entry in &raw.a {
        let set = match Subset::from_labels(entry.set.iter().copied()) {
            Some(s) if s.is_subset_of(full) => s,
            _ => {
                errs.push(ValidationError::LabelOutOfRange { set: entry.set.clone(), n });
                continue;
            }
        };
        if !seen.insert(set) {
            errs.push(ValidationError::DuplicateSet(set));
            continue;
        }
        let v = match entry.value.value() {
            Ok(v) => v,
            Err(e) => {
                errs.push(e);
                continue;
            }
        };
        if !(v >= 0.0) || !v.is_finite() {
            errs.push(ValidationError::NegativeWeight { set: entry.set.clone(), value: v });
        } else if set.is_empty() {
            if v != 0.0 {
                errs.push(ValidationError::EmptySetWeight(v));
            }
        } else if v > 0.0 {
            weights.push((set, v));
        }
    }
    if !errs.is_empty() {
        return Err(ModelError::Invalid(errs));
    }

    let covered = weights.iter().fold(Subset::EMPTY, |acc, (j, _)| acc.union(*j));
    for i in full.difference(covered).indices() {
        errs.push(ValidationError::UncoveredCoordinate(i + 1));
    }

    let gamma_sum: f64 = gamma.iter().sum();
    let weight_sum: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut renormalized = false;
    if raw.renormalize {
        if gamma_sum != 1.0 {
            gamma.iter_mut().for_each(|g| *g /= gamma_sum);
            renormalized = true;
        }
        if weight_sum != 1.0 && weight_sum > 0.0 {
            weights.iter_mut().for_each(|(_, w)| *w /= weight_sum);
            renormalized = true;
        }
    } else {
        if (gamma_sum - 1.0).abs() > NORMALIZATION_TOL {
            errs.push(ValidationError::NonNormalized { quantity: "gamma", sum: gamma_sum });
        }
        if (weight_sum - 1.0).abs() > NORMALIZATION_TOL {
            errs.push(ValidationError::NonNormalized { quantity: "a", sum: weight_sum });
        }
    }
    if !errs.is_empty() {
        return Err(ModelError::Invalid(errs));
    }

    let mut spec = ModelSpec::assemble(n, gamma, weights, renormalized);
    if renormalized {
        close_sums_exactly(&mut spec);
    }
    Ok(spec)
}

/// After rescaling, push the residual rounding error of `γ(I)` and `α(I)`
/// into the largest entry so both evaluate to exactly 1.
fn close_sums_exactly(spec: &mut ModelSpec) {
    let full = spec.full();
    for _ in 0..4 {
        let g = spec.gamma_of(full);
        if g == 1.0 {
            break;
        }
        let k = argmax(spec.gamma.iter().copied());
        spec.gamma[k] += 1.0 - g;
    }
    // Rounding of the correction itself can leave an ulp; step entries until
    // the left-to-right sum lands on 1.
    'search: for k in 0..spec.gamma.len() {
        let orig = spec.gamma[k];
        for _ in 0..8 {
            let g = spec.gamma_of(full);
            if g == 1.0 {
                break 'search;
            }
            spec.gamma[k] = if g < 1.0 { spec.gamma[k].next_up() } else { spec.gamma[k].next_down() };
        }
        spec.gamma[k] = orig;
    }
    for _ in 0..4 {
        let a = spec.alpha(full);
        if a == 1.0 {
            break;
        }
        let k = argmax(spec.weights.iter().map(|(_, w)| *w));
        spec.weights[k].1 += 1.0 - a;
        *spec = ModelSpec::assemble(spec.n, spec.gamma.clone(), spec.weights.clone(), true);
    }
    // The zeta sums can still land one ulp off; pin the top and keep monotone.
    let top = full.mask() as usize;
    spec.alpha_table[top] = 1.0;
    for v in &mut spec.alpha_table {
        *v = v.min(1.0);
    }
}

fn argmax(it: impl Iterator<Item = f64>) -> usize {
    it.enumerate().fold((0, f64::NEG_INFINITY), |best, (k, v)| if v > best.1 { (k, v) } else { best }).0
}

/// `α(A)`, `γ(A)` and `𝒫_A`.
pub fn subset_functionals(spec: &ModelSpec, a: Subset) -> SubsetFunctionals {
    SubsetFunctionals { alpha: spec.alpha(a), gamma: spec.gamma_of(a), family: spec.family(a) }
}

/// Which existential in condition **c** found no witness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConditionCFailure {
    /// `𝒫_{A_j} ∖ 𝒫_{A ∪ A_{j−1}}` is empty.
    NoOuterSet,
    /// No `J` outside and `J′` inside meet outside `A_{j−1}`.
    NoLinkingPair,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "condition")]
pub enum IrreducibilityWitness {
    #[serde(rename = "c")]
    C { level: usize, subset: Subset, failure: ConditionCFailure },
    /// No `s ∈ A_{j−1} ∖ A_{j−2}` lies in a set of `𝒫_{A_j} ∖ 𝒫_{A_{j−1}}`.
    #[serde(rename = "c_prime")]
    CPrime { level: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrreducibilityReport {
    pub condition_c: bool,
    pub condition_c_prime: bool,
    pub witnesses: Vec<IrreducibilityWitness>,
}

impl IrreducibilityReport {
    pub fn is_irreducible(&self) -> bool {
        self.condition_c && self.condition_c_prime
    }
}

/// Checks conditions **c** and **c′** along `chain`.
///
/// Condition **c** quantifies over strict `A ⊊ A_j ∖ A_{j−1}` that carry
/// weight, i.e. `𝒫_{A ∪ A_{j−1}} ∖ 𝒫_{A_{j−1}} ≠ ∅`; for the other subsets the
/// inner set `J′` cannot exist and the condition would fail vacuously.
pub fn check_irreducibility(spec: &ModelSpec, chain: &Chain) -> Result<IrreducibilityReport, ModelError> {
    let sets = chain.sets();
    let first = sets[0];
    let last = *sets.last().expect("chain has at least two sets");
    if !first.is_empty() || last != spec.full() {
        return Err(ModelError::ChainMismatch { first, last, full: spec.full() });
    }

    let mut witnesses = Vec::new();
    for j in 1..sets.len() {
        let (prev, cur) = (sets[j - 1], sets[j]);
        let layer = cur.difference(prev);
        for a in layer.proper_nonempty_subsets() {
            let lower = a.union(prev);
            let inner: Vec<Subset> = spec.family(lower).into_iter().filter(|jj| !jj.is_subset_of(prev)).collect();
            if inner.is_empty() {
                continue;
            }
            let outer: Vec<Subset> = spec.family(cur).into_iter().filter(|jj| !jj.is_subset_of(lower)).collect();
            let failure = if outer.is_empty() {
                Some(ConditionCFailure::NoOuterSet)
            } else if !outer.iter().any(|o| inner.iter().any(|i| !o.intersection(*i).difference(prev).is_empty())) {
                Some(ConditionCFailure::NoLinkingPair)
            } else {
                None
            };
            if let Some(failure) = failure {
                witnesses.push(IrreducibilityWitness::C { level: j, subset: a, failure });
            }
        }
    }
    let c_ok = witnesses.is_empty();

    for j in 2..sets.len() {
        let below = sets[j - 1].difference(sets[j - 2]);
        let linked = spec
            .family(sets[j])
            .into_iter()
            .filter(|jj| !jj.is_subset_of(sets[j - 1]))
            .any(|jj| !jj.intersection(below).is_empty());
        if !linked {
            witnesses.push(IrreducibilityWitness::CPrime { level: j });
        }
    }
    let c_prime_ok = !witnesses.iter().any(|w| matches!(w, IrreducibilityWitness::CPrime { .. }));

    Ok(IrreducibilityReport { condition_c: c_ok, condition_c_prime: c_prime_ok, witnesses })
}
