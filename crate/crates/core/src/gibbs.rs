//! Exact finite-N Gibbs measures by full enumeration, their marginals along
//! the chain, overlaps and distances, ultrametricity statistics, marked
//! pair measures and the layer partition functions.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chain::{Chain, LevelData};
use crate::field::{Centering, FieldError, FieldRealization, Packing, SizeParams};
use crate::model::ModelSpec;
use crate::rng::{domain, uniform_at};
use crate::subset::Subset;

/// Default Gibbs-mass coverage of the marked pair measure.
pub const DEFAULT_COVERAGE: f64 = 0.999;

const CHUNK: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GibbsError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("REGIME_MISMATCH: beta = {beta} is not inside (beta_{m}, beta_{next}) = ({lo}, {hi})", next = .m + 1)]
    RegimeMismatch { beta: f64, m: usize, lo: f64, hi: f64 },
    #[error("level {m} outside 1..={k}")]
    BadLevel { m: usize, k: usize },
}

/// Gibbs weights over the configurations of a coordinate subset.
#[derive(Debug, Clone)]
pub struct GibbsTable {
    pub beta: f64,
    pub n_spins: u32,
    pub packing: Packing,
    /// Indexed by the packed configuration over `packing.coords()`.
    pub weights: Vec<f64>,
    /// `f_N(β) = N⁻¹ log(2^{−N} Σ_σ e^{βX_σ})`; carried over unchanged by marginals.
    pub log_partition: f64,
}

/// Normalizes `exp(β e_σ)` in place, after subtracting the maximum so no
/// term overflows. Returns `log Σ exp(β e_σ)`.
fn softmax_in_place(values: &mut [f64], beta: f64) -> f64 {
    if beta == 0.0 {
        let w = 1.0 / values.len() as f64;
        values.iter_mut().for_each(|v| *v = w);
        return (values.len() as f64).ln();
    }
    let max = values
        .par_chunks(CHUNK)
        .map(|c| c.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x)))
        .reduce(|| f64::NEG_INFINITY, f64::max);
    values.par_chunks_mut(CHUNK).for_each(|c| c.iter_mut().for_each(|v| *v = (beta * (*v - max)).exp()));
    // Chunk sums combined in chunk order, independent of the thread count.
    let partial: Vec<f64> = values.par_chunks(CHUNK).map(|c| c.iter().sum::<f64>()).collect();
    let total: f64 = partial.iter().sum();
    values.par_chunks_mut(CHUNK).for_each(|c| c.iter_mut().for_each(|v| *v /= total));
    beta * max + total.ln()
}

/// Gibbs table from precomputed energies `e_σ = X_σ − shift`.
pub fn gibbs_from_energies(mut energies: Vec<f64>, shift: f64, beta: f64, size: &SizeParams) -> GibbsTable {
    let n = size.n_spins() as f64;
    let log_sum = softmax_in_place(&mut energies, beta);
    GibbsTable {
        beta,
        n_spins: size.n_spins(),
        packing: size.packing(Subset::full(size.n_coords())),
        weights: energies,
        log_partition: (log_sum + beta * shift) / n - std::f64::consts::LN_2,
    }
}

/// `𝒢_{β,N}(σ) ∝ exp(β(X_σ − a_N))` over all configurations.
pub fn gibbs_table(real: &FieldRealization, centering: &Centering, beta: f64) -> Result<GibbsTable, GibbsError> {
    real.size().check_enumerable()?;
    let mut e = real.all_energies();
    let a = centering.a_n;
    e.par_chunks_mut(CHUNK).for_each(|c| c.iter_mut().for_each(|x| *x -= a));
    Ok(gibbs_from_energies(e, a, beta, real.size()))
}

impl GibbsTable {
    pub fn coords(&self) -> Subset {
        self.packing.coords()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Direct marginal onto `coords ⊆ self.coords()`.
    pub fn marginal(&self, size: &SizeParams, coords: Subset) -> GibbsTable {
        let target = size.packing(coords);
        let mut out = vec![0.0; target.len()];
        for (tau, &w) in self.weights.iter().enumerate() {
            out[target.project(self.packing.embed(tau as u64)) as usize] += w;
        }
        GibbsTable {
            beta: self.beta,
            n_spins: self.n_spins,
            packing: target,
            weights: out,
            log_partition: self.log_partition,
        }
    }

    /// Packed configurations ordered by decreasing weight (ties by index).
    pub fn ranked(&self) -> Vec<u64> {
        let mut idx: Vec<u64> = (0..self.weights.len() as u64).collect();
        idx.sort_by(|&a, &b| self.weights[b as usize].total_cmp(&self.weights[a as usize]).then(a.cmp(&b)));
        idx
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

/// `𝒢^{(m)}`: marginal onto `A_m`, reached by summing out one chain layer at
/// a time from the top, so that composing marginals reproduces the direct
/// result exactly.
pub fn marginal_gibbs(
    table: &GibbsTable,
    size: &SizeParams,
    chain: &Chain,
    m: usize,
) -> Result<GibbsTable, GibbsError> {
    let k = chain.depth();
    if m > k {
        return Err(GibbsError::BadLevel { m, k });
    }
    let start = chain.sets().iter().position(|&a| a == table.coords()).ok_or(GibbsError::BadLevel { m, k })?;
    if m > start {
        return Err(GibbsError::BadLevel { m, k: start });
    }
    let mut cur = table.clone();
    for level in (m..start).rev() {
        cur = cur.marginal(size, chain.set(level));
    }
    Ok(cur)
}

/// `q(σ, τ)` and `d(σ, τ) = sqrt(2N(1 − α(q)))`.
pub fn overlap_and_distance(spec: &ModelSpec, size: &SizeParams, sigma: u64, tau: u64) -> (Subset, f64) {
    let q = size.agreement(sigma, tau);
    (q, distance_for(spec, size, q))
}

pub fn distance_for(spec: &ModelSpec, size: &SizeParams, q: Subset) -> f64 {
    (2.0 * size.n_spins() as f64 * (1.0 - spec.alpha(q))).max(0.0).sqrt()
}

/// `count` independent draws from the table, by inverse CDF on
/// counter-based uniforms.
pub fn draw_configs(table: &GibbsTable, count: usize, seed: u64) -> Vec<u64> {
    let mut us: Vec<(f64, usize)> = (0..count).map(|i| (uniform_at(seed, domain::GIBBS_DRAWS, i as u64), i)).collect();
    us.sort_by(|a, b| a.0.total_cmp(&b.0));
    let last_positive = table.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    let total = table.total();
    let mut out = vec![0u64; count];
    let mut cum = 0.0;
    let mut idx = 0usize;
    for (u, slot) in us {
        let target = u * total;
        while idx < last_positive && cum + table.weights[idx] <= target {
            cum += table.weights[idx];
            idx += 1;
        }
        out[slot] = idx as u64;
    }
    out
}

/// True iff the three distances are not ultrametric: the two smallest
/// values of `α(q)` over the three pairs differ.
pub fn is_ultrametric_violation(alphas: [f64; 3]) -> bool {
    let mut a = alphas;
    a.sort_by(f64::total_cmp);
    a[0] != a[1]
}

/// The inequality `d(x,z) ≤ max(d(x,y), d(y,z))` in all three orientations.
pub fn distances_ultrametric(d_ab: f64, d_ac: f64, d_bc: f64) -> bool {
    d_ac <= d_ab.max(d_bc) && d_ab <= d_ac.max(d_bc) && d_bc <= d_ab.max(d_ac)
}

pub fn triple_violates(spec: &ModelSpec, size: &SizeParams, a: u64, b: u64, c: u64) -> bool {
    is_ultrametric_violation([
        spec.alpha(size.agreement(a, b)),
        spec.alpha(size.agreement(a, c)),
        spec.alpha(size.agreement(b, c)),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UltrametricReport {
    pub beta: f64,
    #[serde(rename = "N")]
    pub n_spins: u32,
    pub triples: usize,
    pub violations: usize,
    pub fraction: f64,
    pub se: f64,
    pub seed: u64,
}

/// Fraction of i.i.d. Gibbs triples violating the ultrametric inequality.
pub fn ultrametric_stats(
    table: &GibbsTable,
    spec: &ModelSpec,
    size: &SizeParams,
    triples: usize,
    seed: u64,
) -> UltrametricReport {
    let draws = draw_configs(table, 3 * triples, seed);
    let violations = draws.chunks_exact(3).filter(|t| triple_violates(spec, size, t[0], t[1], t[2])).count();
    let p = violations as f64 / triples.max(1) as f64;
    UltrametricReport {
        beta: table.beta,
        n_spins: size.n_spins(),
        triples,
        violations,
        fraction: p,
        se: (p * (1.0 - p) / triples.max(1) as f64).sqrt(),
        seed,
    }
}

/// Exact violation probability for three independent uniform configurations,
/// from the per-coordinate agreement patterns.
pub fn uniform_violation_probability(spec: &ModelSpec, size: &SizeParams) -> f64 {
    // Patterns: all equal, only (ab), only (ac), only (bc), all distinct.
    let n = spec.n();
    let probs: Vec<[f64; 5]> = (0..n)
        .map(|i| {
            let m = (1u64 << size.bits(i)) as f64;
            let pair = (1.0 / m) * (1.0 - 1.0 / m);
            [1.0 / (m * m), pair, pair, pair, (1.0 - 1.0 / m) * (1.0 - 2.0 / m)]
        })
        .collect();
    let mut total = 0.0;
    let mut pattern = vec![0usize; n];
    loop {
        let mut p = 1.0;
        let (mut ab, mut ac, mut bc) = (Subset::EMPTY, Subset::EMPTY, Subset::EMPTY);
        for (i, &k) in pattern.iter().enumerate() {
            p *= probs[i][k];
            let s = Subset::singleton(i);
            match k {
                0 => {
                    ab = ab.union(s);
                    ac = ac.union(s);
                    bc = bc.union(s);
                }
                1 => ab = ab.union(s),
                2 => ac = ac.union(s),
                3 => bc = bc.union(s),
                _ => {}
            }
        }
        if p > 0.0 && is_ultrametric_violation([spec.alpha(ab), spec.alpha(ac), spec.alpha(bc)]) {
            total += p;
        }
        let mut i = 0;
        while i < n && pattern[i] == 4 {
            pattern[i] = 0;
            i += 1;
        }
        if i == n {
            break;
        }
        pattern[i] += 1;
    }
    total
}

/// Some `k` and `s ∈ A_k ∖ A_{k−1}` with `σ_s = τ_s` but `σ_{A_k} ≠ τ_{A_k}`.
pub fn is_nonultrametric_couple(size: &SizeParams, chain: &Chain, sigma: u64, tau: u64) -> Option<(usize, usize)> {
    let q = size.agreement(sigma, tau);
    (1..=chain.depth()).find_map(|k| {
        if chain.set(k).is_subset_of(q) {
            return None;
        }
        chain.layer(k).intersection(q).indices().next().map(|s| (k, s + 1))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairAtom {
    pub w1: f64,
    pub w2: f64,
    pub mark: Subset,
}

/// Finite marked pair measure: one atom per unordered pair of distinct
/// configurations in a Gibbs-mass prefix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkedPairMeasure {
    pub atoms: Vec<PairAtom>,
    pub coverage: f64,
}

impl MarkedPairMeasure {
    /// Builds the atoms of the weighted points `(w_i, label_i)`, with `mark`
    /// giving the overlap of two labels.
    pub fn from_points<L>(points: &[(f64, L)], coverage: f64, mark: impl Fn(&L, &L) -> Subset) -> Self {
        let mut atoms = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
        for (i, (wi, li)) in points.iter().enumerate() {
            for (wj, lj) in &points[i + 1..] {
                atoms.push(PairAtom { w1: *wi, w2: *wj, mark: mark(li, lj) });
            }
        }
        MarkedPairMeasure { atoms, coverage }
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.w1 * a.w2).sum()
    }
}

/// Pairs among the smallest heaviest-first prefix of configurations whose
/// Gibbs mass reaches `coverage_target`.
pub fn marked_pair_measure(table: &GibbsTable, size: &SizeParams, coverage_target: f64) -> MarkedPairMeasure {
    let ranked = table.ranked();
    let mut mass = 0.0;
    let mut points = Vec::new();
    for s in ranked {
        if mass >= coverage_target {
            break;
        }
        let w = table.weights[s as usize];
        mass += w;
        points.push((w, table.packing.embed(s)));
    }
    MarkedPairMeasure::from_points(&points, mass, |a, b| size.agreement(*a, *b))
}

/// Mass of unordered distinct pairs by exact overlap, over the whole space:
/// `F(S) = Σ_τ 𝒢_S(τ)²` counts ordered pairs agreeing on `S`, and Möbius
/// inversion over supersets isolates each exact overlap.
pub fn exact_mark_masses(table: &GibbsTable, size: &SizeParams, n: usize) -> Vec<(Subset, f64)> {
    let full = Subset::full(n);
    let mut f: Vec<f64> = full.subsets().map(|s| table.marginal(size, s).weights.iter().map(|w| w * w).sum()).collect();
    // Superset Möbius transform: f[T] = Σ_{S ⊇ T} (−1)^{|S∖T|} F(S).
    for bit in 0..n {
        let b = 1usize << bit;
        for t in 0..f.len() {
            if t & b == 0 {
                f[t] -= f[t | b];
            }
        }
    }
    f[full.mask() as usize] -= table.sum_of_squares();
    full.subsets().map(|s| (s, f[s.mask() as usize] / 2.0)).collect()
}

/// `log(Z_σ / E Z_σ)` for the tail below `A_m`, with
/// `Z_σ = Σ_τ exp(β Σ_{j>m} X_{(σ,τ)(1..j)})` as a plain sum over tail
/// configurations and `E Z_σ = exp(Σ_{j>m} [β² Δ_j N/2 + G_j N ln2])`.
pub fn layer_fluctuation(
    real: &FieldRealization,
    chain: &Chain,
    levels: &LevelData,
    m: usize,
    beta: f64,
    sigma_prefix: u64,
) -> Result<f64, GibbsError> {
    let k = chain.depth();
    if m > k {
        return Err(GibbsError::BadLevel { m, k });
    }
    let lo = if m == 0 { 0.0 } else { levels.beta(m) };
    let hi = if m == k { f64::INFINITY } else { levels.beta(m + 1) };
    if !(beta > lo && beta < hi) {
        return Err(GibbsError::RegimeMismatch { beta, m, lo, hi });
    }
    let size = real.size();
    let n = size.n_spins() as f64;
    let head = size.packing(chain.set(m)).embed(sigma_prefix);
    let tail = size.packing(chain.top().difference(chain.set(m)));
    let tables: Vec<_> = real.tables().iter().filter(|t| chain.level_of(t.set).unwrap() > m).collect();
    let mut e: Vec<f64> = (0..tail.len() as u64)
        .map(|t| {
            let s = head | tail.embed(t);
            tables.iter().map(|tb| tb.values[tb.packing.project(s) as usize]).sum()
        })
        .collect();
    let log_z = softmax_in_place(&mut e, beta);
    let log_ez: f64 =
        levels.levels[m..].iter().map(|l| beta * beta * l.delta * n / 2.0 + l.g * n * std::f64::consts::LN_2).sum();
    Ok(log_z - log_ez)
}
