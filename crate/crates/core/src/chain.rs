//! The hierarchical skeleton hidden in a nonhierarchical model: the optimal
//! chain, its phase temperatures, critical subsets, free energies and the
//! coalescent times.

use serde::Serialize;
use thiserror::Error;

use crate::model::ModelSpec;
use crate::subset::Subset;

/// Default relative tolerance for ρ comparisons.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Largest `n` accepted by [`exhaustive_min_chain`].
pub const EXHAUSTIVE_MAX_N: usize = 8;
/// Default number of points on a β grid.
pub const DEFAULT_GRID_POINTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("invalid chain: {0}")]
    Invalid(String),
    #[error("BAD_PAIR: {b} is not a strict subset of {a}")]
    BadPair { b: Subset, a: Subset },
    #[error("NONMONOTONE_BETA at level {level}: {beta} does not exceed {previous}")]
    NonmonotoneBeta { level: usize, previous: f64, beta: f64 },
    #[error("union of minimizers at level {level} has rho {rho}, minimum is {beta}")]
    UnionNotMinimal { level: usize, rho: f64, beta: f64 },
    #[error("NO_FINITE_RHO above {0}")]
    NoFiniteRho(Subset),
    #[error("ZERO_LEVEL_WEIGHT at level {0}")]
    ZeroLevelWeight(usize),
    #[error("TOO_MANY_CHAINS: n = {0} exceeds {EXHAUSTIVE_MAX_N}")]
    TooManyChains(usize),
}

/// `∅ = A_0 ⊊ A_1 ⊊ … ⊊ A_K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Chain {
    sets: Vec<Subset>,
}

impl Chain {
    pub fn new(sets: Vec<Subset>) -> Result<Chain, ChainError> {
        if sets.len() < 2 {
            return Err(ChainError::Invalid("a chain needs at least two sets".into()));
        }
        if !sets[0].is_empty() {
            return Err(ChainError::Invalid(format!("chain starts at {} instead of {{}}", sets[0])));
        }
        for w in sets.windows(2) {
            if !w[0].is_strict_subset_of(w[1]) {
                return Err(ChainError::Invalid(format!("{} is not strictly inside {}", w[0], w[1])));
            }
        }
        Ok(Chain { sets })
    }

    /// The one-level chain `(∅, I)`.
    pub fn trivial(n: usize) -> Chain {
        Chain { sets: vec![Subset::EMPTY, Subset::full(n)] }
    }

    pub fn sets(&self) -> &[Subset] {
        &self.sets
    }

    /// Number of levels `K`.
    pub fn depth(&self) -> usize {
        self.sets.len() - 1
    }

    pub fn set(&self, j: usize) -> Subset {
        self.sets[j]
    }

    pub fn top(&self) -> Subset {
        self.sets[self.depth()]
    }

    /// `A_j ∖ A_{j−1}`.
    pub fn layer(&self, j: usize) -> Subset {
        self.sets[j].difference(self.sets[j - 1])
    }

    /// Smallest `j` with `J ⊆ A_j`, i.e. the level whose energy contains `X^J`.
    pub fn level_of(&self, j: Subset) -> Option<usize> {
        self.sets.iter().position(|a| j.is_subset_of(*a))
    }

    pub fn contains_set(&self, a: Subset) -> bool {
        self.sets.contains(&a)
    }
}

impl std::fmt::Display for Chain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("(")?;
        for (k, s) in self.sets.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{s}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Level {
    /// `Δ_j = α(A_j) − α(A_{j−1})`.
    pub delta: f64,
    /// `G_j = γ(A_j) − γ(A_{j−1})`.
    pub g: f64,
    /// `ρ(A_{j−1}, A_j)`; the phase temperature for solver chains.
    pub beta: f64,
}

/// Per-level data, index 0 holding level 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LevelData {
    pub levels: Vec<Level>,
}

impl LevelData {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.beta).collect()
    }

    /// `β_j` for 1-based `j`.
    pub fn beta(&self, j: usize) -> f64 {
        self.levels[j - 1].beta
    }

    pub fn level(&self, j: usize) -> &Level {
        &self.levels[j - 1]
    }
}

fn rho_from(dg: f64, da: f64) -> f64 {
    if da <= 0.0 {
        f64::INFINITY
    } else {
        (2.0 * std::f64::consts::LN_2 * dg / da).sqrt()
    }
}

/// `ρ(B, A) = sqrt(2 ln2 (γ(A)−γ(B)) / (α(A)−α(B)))`, infinite when `𝒫_A = 𝒫_B`.
pub fn rho(spec: &ModelSpec, b: Subset, a: Subset) -> Result<f64, ChainError> {
    if !b.is_strict_subset_of(a) {
        return Err(ChainError::BadPair { b, a });
    }
    Ok(rho_unchecked(spec, b, a))
}

fn rho_unchecked(spec: &ModelSpec, b: Subset, a: Subset) -> f64 {
    rho_from(spec.gamma_increment(b, a), spec.alpha_increment(b, a))
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    x <= target * (1.0 + tol)
}

/// Runs the ρ recursion from `∅`, taking at each level the union of all
/// minimizers within relative `tol`.
pub fn build_chain(spec: &ModelSpec, tol: f64) -> Result<(Chain, LevelData), ChainError> {
    let full = spec.full();
    let mut sets = vec![Subset::EMPTY];
    let mut levels: Vec<Level> = Vec::new();
    let mut prev = Subset::EMPTY;
    while prev != full {
        let rest = full.difference(prev);
        let mut best = f64::INFINITY;
        for s in rest.subsets().skip(1) {
            best = best.min(rho_unchecked(spec, prev, prev.union(s)));
        }
        if !best.is_finite() {
            return Err(ChainError::NoFiniteRho(prev));
        }
        let next = rest
            .subsets()
            .skip(1)
            .map(|s| prev.union(s))
            .filter(|a| within(rho_unchecked(spec, prev, *a), best, tol))
            .fold(prev, Subset::union);
        let level = levels.len() + 1;
        let r = rho_unchecked(spec, prev, next);
        if !within(r, best, tol) {
            return Err(ChainError::UnionNotMinimal { level, rho: r, beta: best });
        }
        if let Some(last) = levels.last() {
            if best <= last.beta * (1.0 + tol) {
                return Err(ChainError::NonmonotoneBeta { level, previous: last.beta, beta: best });
            }
        }
        levels.push(Level { delta: spec.alpha_increment(prev, next), g: spec.gamma_increment(prev, next), beta: best });
        sets.push(next);
        prev = next;
    }
    Ok((Chain { sets }, LevelData { levels }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalSubset {
    pub subset: Subset,
    /// `α̂_j(A) = α(A ∪ A_{j−1}) − α(A_{j−1})`.
    pub alpha_hat: f64,
    /// `Δ_j − α̂_j(A)`.
    pub alpha_hat_c: f64,
    /// `𝒫_{A ∪ A_{j−1}} ∖ 𝒫_{A_{j−1}}`.
    pub family: Vec<Subset>,
    /// `(𝒫_{A_j} ∖ 𝒫_{A_{j−1}}) ∖ family`.
    pub family_c: Vec<Subset>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalReport {
    /// Index 0 holds level 1.
    pub levels: Vec<Vec<CriticalSubset>>,
}

impl CriticalReport {
    pub fn at(&self, j: usize) -> &[CriticalSubset] {
        &self.levels[j - 1]
    }

    pub fn is_empty(&self) -> bool {
        self.levels.iter().all(Vec::is_empty)
    }
}

/// Level-`j` energy sets `𝒫_{A_j} ∖ 𝒫_{A_{j−1}}`.
pub fn level_family(spec: &ModelSpec, chain: &Chain, j: usize) -> Vec<Subset> {
    let prev = chain.set(j - 1);
    spec.family(chain.set(j)).into_iter().filter(|jj| !jj.is_subset_of(prev)).collect()
}

/// Strict `A ⊊ A_j ∖ A_{j−1}` carrying weight whose ρ ties `β_j` within `tol`.
pub fn find_critical_subsets(spec: &ModelSpec, chain: &Chain, levels: &LevelData, tol: f64) -> CriticalReport {
    let mut out = Vec::with_capacity(chain.depth());
    for j in 1..=chain.depth() {
        let prev = chain.set(j - 1);
        let beta = levels.beta(j);
        let delta = levels.level(j).delta;
        let all = level_family(spec, chain, j);
        let mut found = Vec::new();
        for a in chain.layer(j).proper_nonempty_subsets() {
            let lower = a.union(prev);
            let alpha_hat = spec.alpha_increment(prev, lower);
            if alpha_hat <= 0.0 {
                continue;
            }
            let r = rho_from(spec.gamma_increment(prev, lower), alpha_hat);
            if (r - beta).abs() <= tol * beta {
                let (family, family_c): (Vec<_>, Vec<_>) = all.iter().partition(|jj| jj.is_subset_of(lower));
                found.push(CriticalSubset { subset: a, alpha_hat, alpha_hat_c: delta - alpha_hat, family, family_c });
            }
        }
        out.push(found);
    }
    CriticalReport { levels: out }
}

/// Level data of an arbitrary chain; levels may carry `Δ = 0`.
pub fn chain_levels(spec: &ModelSpec, chain: &Chain) -> LevelData {
    let levels = chain
        .sets()
        .windows(2)
        .map(|w| {
            let delta = spec.alpha_increment(w[0], w[1]);
            let g = spec.gamma_increment(w[0], w[1]);
            Level { delta, g, beta: rho_from(g, delta) }
        })
        .collect();
    LevelData { levels }
}

/// Coarse-grained GREM weights `â_{A_j}` and `G_j` of a chain.
pub fn coarse_grain(spec: &ModelSpec, chain: &Chain) -> Result<LevelData, ChainError> {
    let data = chain_levels(spec, chain);
    if let Some(k) = data.levels.iter().position(|l| l.delta == 0.0) {
        return Err(ChainError::ZeroLevelWeight(k + 1));
    }
    Ok(data)
}

/// Merged levels of the GREM with the given levels: the ρ recursion
/// restricted to the cumulative level sets. A trailing stretch with no
/// weight is dropped.
pub fn concavify(levels: &LevelData) -> Vec<Level> {
    let k = levels.depth();
    let mut cum_d = vec![0.0; k + 1];
    let mut cum_g = vec![0.0; k + 1];
    for (i, l) in levels.levels.iter().enumerate() {
        cum_d[i + 1] = cum_d[i] + l.delta;
        cum_g[i + 1] = cum_g[i] + l.g;
    }
    let mut merged = Vec::new();
    let mut i = 0;
    while i < k {
        let mut best = f64::INFINITY;
        let mut arg = None;
        for m in i + 1..=k {
            if levels.levels[i..m].iter().all(|l| l.delta == 0.0) {
                continue;
            }
            let r = rho_from(cum_g[m] - cum_g[i], cum_d[m] - cum_d[i]);
            if r < best * (1.0 - DEFAULT_TOL) || arg.is_none() {
                best = r;
                arg = Some(m);
            } else if within(r, best, DEFAULT_TOL) {
                arg = Some(m);
            }
        }
        let Some(m) = arg else { break };
        merged.push(Level {
            delta: levels.levels[i..m].iter().map(|l| l.delta).sum(),
            g: levels.levels[i..m].iter().map(|l| l.g).sum(),
            beta: best,
        });
        i = m;
    }
    merged
}

/// Free energy of the GREM built on `levels`:
/// `Σ_l β²Δ_l/2` over levels with `β ≤ β_l`, `ββ_lΔ_l − G_l ln2` otherwise.
pub fn free_energy_chain(levels: &LevelData, beta: f64) -> f64 {
    free_energy_merged(&concavify(levels), beta)
}

fn free_energy_merged(merged: &[Level], beta: f64) -> f64 {
    merged
        .iter()
        .map(|l| {
            if beta <= l.beta {
                beta * beta * l.delta / 2.0
            } else {
                beta * l.beta * l.delta - l.g * std::f64::consts::LN_2
            }
        })
        .sum()
}

/// `f(β)` of a model, through its solver chain.
pub fn free_energy(spec: &ModelSpec, beta: f64) -> Result<f64, ChainError> {
    let (_, levels) = build_chain(spec, DEFAULT_TOL)?;
    Ok(free_energy_chain(&levels, beta))
}

/// `points` equispaced values covering `[0, 3β_K]`.
pub fn default_beta_grid(levels: &LevelData, points: usize) -> Vec<f64> {
    let top = 3.0 * levels.levels.last().map_or(1.0, |l| l.beta);
    (0..points).map(|k| top * k as f64 / (points - 1).max(1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExhaustiveMinimum {
    pub grid: Vec<f64>,
    /// `min_S f(β, S)` per grid point.
    pub minima: Vec<f64>,
    /// First chain (shorter first, then by masks) within 1e-12 of each minimum.
    pub argmins: Vec<Chain>,
    /// First chain within 1e-12 of the minimum at every grid point, if any.
    pub uniform: Option<Chain>,
}

/// Absolute slack under which two chain free energies count as tied.
pub const EXHAUSTIVE_TIE: f64 = 1e-12;

/// Calls `visit` on every chain ending at `I`, ordered by depth and then
/// lexicographically by the masks of `A_1, A_2, …`.
pub fn for_each_chain(n: usize, mut visit: impl FnMut(&[Subset])) {
    fn rec(full: Subset, remaining_levels: usize, sets: &mut Vec<Subset>, visit: &mut dyn FnMut(&[Subset])) {
        let prev = *sets.last().unwrap();
        let rest = full.difference(prev);
        if remaining_levels == 1 {
            sets.push(full);
            visit(sets);
            sets.pop();
            return;
        }
        for s in rest.proper_nonempty_subsets() {
            if rest.len() - s.len() < remaining_levels - 1 {
                continue;
            }
            sets.push(prev.union(s));
            rec(full, remaining_levels - 1, sets, visit);
            sets.pop();
        }
    }
    let full = Subset::full(n);
    for depth in 1..=n {
        let mut sets = vec![Subset::EMPTY];
        rec(full, depth, &mut sets, &mut visit);
    }
}

/// Minimum of `f(β, S)` over every chain `S`, by enumeration of ordered set
/// partitions of `I`.
pub fn exhaustive_min_chain(spec: &ModelSpec, grid: &[f64]) -> Result<ExhaustiveMinimum, ChainError> {
    let n = spec.n();
    if n > EXHAUSTIVE_MAX_N {
        return Err(ChainError::TooManyChains(n));
    }
    let eval = |sets: &[Subset]| -> Vec<f64> {
        let merged = concavify(&chain_levels(spec, &Chain { sets: sets.to_vec() }));
        grid.iter().map(|&b| free_energy_merged(&merged, b)).collect()
    };

    let mut minima = vec![f64::INFINITY; grid.len()];
    for_each_chain(n, |sets| {
        for (m, v) in minima.iter_mut().zip(eval(sets)) {
            *m = m.min(v);
        }
    });

    let mut argmins: Vec<Option<Chain>> = vec![None; grid.len()];
    let mut uniform = None;
    for_each_chain(n, |sets| {
        if uniform.is_some() && argmins.iter().all(Option::is_some) {
            return;
        }
        let values = eval(sets);
        let mut all = true;
        for ((slot, &v), &m) in argmins.iter_mut().zip(&values).zip(&minima) {
            let tied = v <= m + EXHAUSTIVE_TIE;
            all &= tied;
            if tied && slot.is_none() {
                *slot = Some(Chain { sets: sets.to_vec() });
            }
        }
        if all && uniform.is_none() {
            uniform = Some(Chain { sets: sets.to_vec() });
        }
    });

    Ok(ExhaustiveMinimum {
        grid: grid.to_vec(),
        minima,
        argmins: argmins.into_iter().map(|c| c.expect("every grid point has a minimizer")).collect(),
        uniform,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseDiagram {
    pub beta: f64,
    /// `m = max{j : β_j < β}`.
    pub regime: usize,
    /// `x_j = β_j / β`.
    pub x: Vec<f64>,
    /// `t_0 = 0, …, t_K = ∞`; empty when `β ≤ β_1`.
    pub times: Vec<f64>,
}

pub fn phase_points(levels: &LevelData, beta: f64) -> PhaseDiagram {
    let betas = levels.betas();
    let k = betas.len();
    let regime = betas.iter().filter(|&&b| b < beta).count();
    let x: Vec<f64> = betas.iter().map(|b| b / beta).collect();
    let times = if regime == 0 {
        Vec::new()
    } else {
        (0..=k)
            .map(|j| match j {
                0 => 0.0,
                j if j == k => f64::INFINITY,
                // x_K / x_{K−j} with β cancelled, so times do not depend on β.
                j => (betas[k - 1] / betas[k - 1 - j]).ln(),
            })
            .collect()
    };
    PhaseDiagram { beta, regime, x, times }
}
