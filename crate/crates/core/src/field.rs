//! Finite-N disorder: the Gaussian tables `X^J_{σ_J}`, energies, the
//! centerings `a_{N,j}(A)` and `a_N^m`, extremal points and the thinning
//! filters.
//!
//! A configuration is a packed `u64`: coordinate `i` occupies `γ_i N` bits,
//! coordinates laid out in increasing order from the low end. Projections
//! onto a subset `J` use the same layout restricted to `J`, so `σ_J` is
//! again a packed index into the table of `J`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chain::{Chain, CriticalReport, CriticalSubset, LevelData};
use crate::model::ModelSpec;
use crate::rng::{domain, gaussian_at};
use crate::subset::Subset;

/// Largest enumerable configuration space, in bits.
pub const MAX_ENUM_BITS: u32 = 28;
/// Tolerance on the integrality of `γ_i N`.
pub const INTEGRALITY_TOL: f64 = 1e-9;
/// Default floor of the extremal window, relative to `a_N`.
pub const DEFAULT_WINDOW_FLOOR: f64 = -10.0;

const CHUNK: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "code", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FieldError {
    #[error("INVALID_N: N = {n_spins} makes gamma_i * N non-integral for {offending:?} (coordinate, gamma_i * N)")]
    InvalidN { n_spins: u32, offending: Vec<(usize, f64)> },
    #[error("SIZE_GUARD: 2^{bits} configurations exceed the 2^{MAX_ENUM_BITS} enumeration bound")]
    SizeGuard { bits: u32 },
    #[error("DEGENERATE_T1: thinning conditions for {a} and {b} at level {level} cannot hold together")]
    DegenerateT1 { level: usize, a: Subset, b: Subset },
    #[error("configuration {0:#x} out of range")]
    BadConfig(u64),
}

/// Bit layout of the configurations over a subset of coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Packing {
    coords: Subset,
    bits: u32,
    /// Maximal runs of adjacent coordinates: (source shift, width mask, target shift).
    runs: Vec<(u32, u64, u32)>,
}

impl Packing {
    pub fn coords(&self) -> Subset {
        self.coords
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Number of configurations over these coordinates.
    pub fn len(&self) -> usize {
        1usize << self.bits
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `σ ↦ σ_J` from the full layout.
    #[inline]
    pub fn project(&self, sigma: u64) -> u64 {
        let mut out = 0;
        for &(src, mask, dst) in &self.runs {
            out |= ((sigma >> src) & mask) << dst;
        }
        out
    }

    /// Places a projected configuration back at its full-layout positions,
    /// with zeros elsewhere.
    #[inline]
    pub fn embed(&self, tau: u64) -> u64 {
        let mut out = 0;
        for &(src, mask, dst) in &self.runs {
            out |= ((tau >> dst) & mask) << src;
        }
        out
    }

    /// Full-layout bit mask of these coordinates.
    pub fn full_mask(&self) -> u64 {
        self.runs.iter().fold(0, |m, &(src, mask, _)| m | (mask << src))
    }
}

/// `N` and the per-coordinate bit widths `γ_i N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeParams {
    n_spins: u32,
    bits: Vec<u32>,
    #[serde(skip)]
    offsets: Vec<u32>,
}

impl SizeParams {
    pub fn new(spec: &ModelSpec, n_spins: u32) -> Result<SizeParams, FieldError> {
        let mut bits = Vec::with_capacity(spec.n());
        let mut offending = Vec::new();
        for (i, &g) in spec.gamma().iter().enumerate() {
            let x = g * n_spins as f64;
            let r = x.round();
            if (x - r).abs() > INTEGRALITY_TOL * n_spins.max(1) as f64 {
                offending.push((i + 1, x));
            }
            bits.push(r as u32);
        }
        if !offending.is_empty() || bits.iter().sum::<u32>() != n_spins {
            return Err(FieldError::InvalidN { n_spins, offending });
        }
        let offsets = bits
            .iter()
            .scan(0, |acc, &b| {
                let o = *acc;
                *acc += b;
                Some(o)
            })
            .collect();
        Ok(SizeParams { n_spins, bits, offsets })
    }

    pub fn n_spins(&self) -> u32 {
        self.n_spins
    }

    pub fn n_coords(&self) -> usize {
        self.bits.len()
    }

    /// `γ_i N` for 0-based coordinate `i`.
    pub fn bits(&self, i: usize) -> u32 {
        self.bits[i]
    }

    pub fn bits_of(&self, a: Subset) -> u32 {
        a.indices().map(|i| self.bits[i]).sum()
    }

    pub fn check_enumerable(&self) -> Result<(), FieldError> {
        if self.n_spins > MAX_ENUM_BITS {
            Err(FieldError::SizeGuard { bits: self.n_spins })
        } else {
            Ok(())
        }
    }

    /// Number of full configurations `2^N`.
    pub fn num_configs(&self) -> usize {
        1usize << self.n_spins
    }

    pub fn packing(&self, coords: Subset) -> Packing {
        let mut runs: Vec<(u32, u64, u32)> = Vec::new();
        let mut dst = 0;
        for i in coords.indices() {
            let (src, w) = (self.offsets[i], self.bits[i]);
            if w == 0 {
                continue;
            }
            match runs.last_mut() {
                Some((s, mask, d)) if *s + mask.count_ones() == src && *d + mask.count_ones() == dst => {
                    *mask = (*mask << w) | ((1 << w) - 1);
                }
                _ => runs.push((src, (1u64 << w) - 1, dst)),
            }
            dst += w;
        }
        Packing { coords, bits: dst, runs }
    }

    /// Value of coordinate `i` (0-based) in `σ`.
    pub fn coord(&self, sigma: u64, i: usize) -> u64 {
        (sigma >> self.offsets[i]) & ((1u64 << self.bits[i]) - 1)
    }

    pub fn pack(&self, coords: &[u64]) -> Result<u64, FieldError> {
        let mut sigma = 0;
        for (i, &c) in coords.iter().enumerate() {
            if i >= self.bits.len() || c >> self.bits[i] != 0 {
                return Err(FieldError::BadConfig(c));
            }
            sigma |= c << self.offsets[i];
        }
        Ok(sigma)
    }

    pub fn unpack(&self, sigma: u64) -> Vec<u64> {
        (0..self.bits.len()).map(|i| self.coord(sigma, i)).collect()
    }

    /// `q(σ, τ) = {i : σ_i = τ_i}`.
    pub fn agreement(&self, sigma: u64, tau: u64) -> Subset {
        let diff = sigma ^ tau;
        (0..self.bits.len())
            .filter(|&i| (diff >> self.offsets[i]) & ((1u64 << self.bits[i]) - 1) == 0)
            .fold(Subset::EMPTY, |s, i| s.union(Subset::singleton(i)))
    }
}

#[derive(Debug, Clone)]
pub struct FieldTable {
    pub set: Subset,
    pub packing: Packing,
    pub values: Vec<f64>,
}

/// One disorder sample: a table of `X^J` for every `J ∈ 𝒫`.
#[derive(Debug, Clone)]
pub struct FieldRealization {
    size: SizeParams,
    seed: u64,
    tables: Vec<FieldTable>,
}

/// Stream carrying the entries of the table of `J`.
pub fn field_stream(j: Subset) -> u64 {
    domain::FIELD | j.mask() as u64
}

/// Entry `index` of the table of `J`: `sqrt(a_J N) Φ⁻¹(U)` with `U` the
/// counter-based uniform `(seed, J, index)`.
#[inline]
pub fn field_entry(seed: u64, j: Subset, weight: f64, n_spins: u32, index: u64) -> f64 {
    (weight * n_spins as f64).sqrt() * gaussian_at(seed, field_stream(j), index)
}

/// Draws the tables for `(spec, N, seed)`.
pub fn sample_field(spec: &ModelSpec, size: &SizeParams, seed: u64) -> Result<FieldRealization, FieldError> {
    size.check_enumerable()?;
    let tables = spec
        .weights()
        .iter()
        .map(|&(j, w)| {
            let packing = size.packing(j);
            let values = (0..packing.len())
                .into_par_iter()
                .with_min_len(CHUNK)
                .map(|k| field_entry(seed, j, w, size.n_spins(), k as u64))
                .collect();
            FieldTable { set: j, packing, values }
        })
        .collect();
    Ok(FieldRealization { size: size.clone(), seed, tables })
}

/// `X_σ` without building tables; agrees bit-for-bit with the tabulated value.
pub fn energy_at(spec: &ModelSpec, size: &SizeParams, seed: u64, sigma: u64) -> f64 {
    spec.weights().iter().map(|&(j, w)| field_entry(seed, j, w, size.n_spins(), size.packing(j).project(sigma))).sum()
}

impl FieldRealization {
    pub fn size(&self) -> &SizeParams {
        &self.size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tables(&self) -> &[FieldTable] {
        &self.tables
    }

    pub fn table(&self, j: Subset) -> Option<&FieldTable> {
        self.tables.iter().find(|t| t.set == j)
    }

    /// `X^J_{σ_J}`.
    pub fn component(&self, j: Subset, sigma: u64) -> f64 {
        let t = self.table(j).expect("J carries weight");
        t.values[t.packing.project(sigma) as usize]
    }

    /// `X_σ`, summed over `𝒫` in mask order.
    #[inline]
    pub fn energy(&self, sigma: u64) -> f64 {
        self.tables.iter().map(|t| t.values[t.packing.project(sigma) as usize]).sum()
    }

    /// `X_σ` for every configuration, indexed by packed `σ`.
    pub fn all_energies(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.size.num_configs()];
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = (c * CHUNK) as u64;
            for (k, e) in chunk.iter_mut().enumerate() {
                *e = self.energy(base + k as u64);
            }
        });
        out
    }

    /// Level energies `X_{σ(1..j)}`; entry `j−1` sums the tables of level `j`.
    pub fn level_energies(&self, chain: &Chain, sigma: u64) -> Vec<f64> {
        let mut out = vec![0.0; chain.depth()];
        for t in &self.tables {
            let j = chain.level_of(t.set).expect("chain ends at I");
            out[j - 1] += t.values[t.packing.project(sigma) as usize];
        }
        out
    }

    /// Copy with every table entry set to zero.
    pub fn zeroed(&self) -> FieldRealization {
        let mut z = self.clone();
        for t in &mut z.tables {
            t.values.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }
}

/// `a_{N,j}(A) = β_j α̂ N − ln N / (2β_j) − ln(β_j sqrt(2π α̂)) / β_j`.
pub fn level_centering(beta_j: f64, alpha_hat: f64, n_spins: u32) -> f64 {
    let n = n_spins as f64;
    beta_j * alpha_hat * n
        - n.ln() / (2.0 * beta_j)
        - (beta_j * (2.0 * std::f64::consts::PI * alpha_hat).sqrt()).ln() / beta_j
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Centering {
    pub n_spins: u32,
    /// `a_{N,j}`, index 0 holding level 1.
    pub levels: Vec<f64>,
    /// `a_{N,j}(A)` for every nonempty `A ⊆ A_j ∖ A_{j−1}` with `α̂_j(A) > 0`.
    pub subsets: Vec<Vec<(Subset, f64)>>,
    /// `a_N = Σ_j a_{N,j}`.
    pub a_n: f64,
    /// Regime `m` of the query β, if one was given.
    pub regime: Option<usize>,
    /// `a_N^m`; equals `a_N` without a query β.
    pub a_n_m: f64,
}

pub fn compute_centering(
    spec: &ModelSpec,
    chain: &Chain,
    levels: &LevelData,
    size: &SizeParams,
    beta: Option<f64>,
) -> Centering {
    let n_spins = size.n_spins();
    let k = chain.depth();
    let per_level: Vec<f64> =
        (1..=k).map(|j| level_centering(levels.beta(j), levels.level(j).delta, n_spins)).collect();
    let subsets = (1..=k)
        .map(|j| {
            let prev = chain.set(j - 1);
            chain
                .layer(j)
                .subsets()
                .skip(1)
                .filter_map(|a| {
                    let ah = spec.alpha_increment(prev, a.union(prev));
                    (ah > 0.0).then(|| (a, level_centering(levels.beta(j), ah, n_spins)))
                })
                .collect()
        })
        .collect();
    let a_n: f64 = per_level.iter().sum();
    let (regime, a_n_m) = match beta {
        None => (None, a_n),
        Some(b) => {
            let m = levels.betas().iter().filter(|&&bj| bj < b).count();
            let n = n_spins as f64;
            let low: f64 = per_level[..m].iter().sum();
            let high: f64 =
                levels.levels[m..].iter().map(|l| b * l.delta * n / 2.0 + l.g * n * std::f64::consts::LN_2 / b).sum();
            (Some(m), low + high)
        }
    };
    Centering { n_spins, levels: per_level, subsets, a_n, regime, a_n_m }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    /// `X_σ`.
    pub total: f64,
    /// `X_{σ(1..j)}` per level.
    pub level: Vec<f64>,
    /// `X_{σ(1..j)} − a_{N,j}`.
    pub centered: Vec<f64>,
    /// `X̂_j = Σ_{l ≤ j}` centered level energies.
    pub partial: Vec<f64>,
}

pub fn energies(real: &FieldRealization, chain: &Chain, centering: &Centering, sigma: u64) -> EnergyBreakdown {
    let level = real.level_energies(chain, sigma);
    let centered: Vec<f64> = level.iter().zip(&centering.levels).map(|(x, a)| x - a).collect();
    let partial = centered
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c;
            Some(*acc)
        })
        .collect();
    EnergyBreakdown { total: real.energy(sigma), level, centered, partial }
}

/// Half-open window `[lo, hi)` on `X_σ − a_N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Self {
        Window { lo, hi }
    }

    pub fn above(lo: f64) -> Self {
        Window { lo, hi: f64::INFINITY }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x < self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremalPoint {
    pub sigma: u64,
    /// `X̂_K = X_σ − a_N`.
    pub value: f64,
    /// `X̂_j` per level.
    pub partials: Vec<f64>,
}

/// Configurations with `X_σ − a_N` in `window`, sorted by decreasing value.
pub fn extremal_points(
    real: &FieldRealization,
    chain: &Chain,
    centering: &Centering,
    window: Window,
) -> Vec<ExtremalPoint> {
    if !(window.lo < window.hi) {
        return Vec::new();
    }
    let total = real.size().num_configs();
    let mut found: Vec<(u64, f64)> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .flat_map_iter(|c| {
            let start = (c * CHUNK) as u64;
            let end = ((c + 1) * CHUNK).min(total) as u64;
            (start..end).filter_map(|s| {
                let v = real.energy(s) - centering.a_n;
                window.contains(v).then_some((s, v))
            })
        })
        .collect();
    found.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    found
        .into_iter()
        .map(|(sigma, value)| ExtremalPoint { sigma, value, partials: energies(real, chain, centering, sigma).partial })
        .collect()
}

/// Count of configurations with `X_σ − a_N` in `window`, without storing them.
pub fn count_in_window(real: &FieldRealization, centering: &Centering, window: Window) -> usize {
    let total = real.size().num_configs();
    (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = (c * CHUNK) as u64;
            let end = ((c + 1) * CHUNK).min(total) as u64;
            (start..end).filter(|&s| window.contains(real.energy(s) - centering.a_n)).count()
        })
        .sum()
}

/// Coefficients of the T1 statistic of a critical subset, over the level family.
fn t1_coefficients(c: &CriticalSubset) -> Vec<(Subset, f64)> {
    let mut v: Vec<(Subset, f64)> = c
        .family
        .iter()
        .map(|&j| (j, 1.0 / c.alpha_hat))
        .chain(c.family_c.iter().map(|&j| (j, -1.0 / c.alpha_hat_c)))
        .collect();
    v.sort_by_key(|e| e.0);
    v
}

/// `Σ_{𝒫̂} X^J / α̂ − Σ_{𝒫̂^c} X^J / α̂^c`.
pub fn t1_statistic(real: &FieldRealization, c: &CriticalSubset, sigma: u64) -> f64 {
    t1_coefficients(c).iter().map(|&(j, k)| k * real.component(j, sigma)).sum()
}

/// Standard deviation of the T1 statistic over the disorder.
pub fn t1_statistic_sd(spec: &ModelSpec, c: &CriticalSubset, n_spins: u32) -> f64 {
    let var: f64 = t1_coefficients(c).iter().map(|&(j, k)| k * k * spec.weight(j)).sum();
    (var * n_spins as f64).sqrt()
}

/// Two critical subsets whose T1 statistics are negative multiples of each
/// other, which makes their T1 conditions jointly unsatisfiable for ε1 > 0.
/// Other joint infeasibilities are not detected.
pub fn t1_degeneracy(criticals: &CriticalReport, level: usize) -> Option<FieldError> {
    let crit = criticals.at(level);
    for (x, a) in crit.iter().enumerate() {
        for b in &crit[x + 1..] {
            let (ca, cb) = (t1_coefficients(a), t1_coefficients(b));
            if ca.len() != cb.len() || ca.iter().zip(&cb).any(|(p, q)| p.0 != q.0) {
                continue;
            }
            let ratio = cb[0].1 / ca[0].1;
            if ratio < 0.0 && ca.iter().zip(&cb).all(|(p, q)| (q.1 - ratio * p.1).abs() <= 1e-12 * q.1.abs()) {
                return Some(FieldError::DegenerateT1 { level, a: a.subset, b: b.subset });
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThinningResult {
    /// T1 per critical subset of the level.
    pub t1: Vec<(Subset, bool)>,
    /// T2 per strict nonempty `A` of the layer with `α̂ > 0`.
    pub t2: Vec<(Subset, bool)>,
    /// Set when the level's T1 conditions cannot all hold.
    pub degenerate: Option<FieldError>,
}

/// The T1/T2 thinning conditions of configuration `σ` at level `k`.
#[allow(clippy::too_many_arguments)]
pub fn thinning_filter(
    spec: &ModelSpec,
    real: &FieldRealization,
    chain: &Chain,
    levels: &LevelData,
    criticals: &CriticalReport,
    k: usize,
    eps1: f64,
    eps2: f64,
    sigma: u64,
) -> ThinningResult {
    let n = real.size().n_spins() as f64;
    let t1 = criticals.at(k).iter().map(|c| (c.subset, t1_statistic(real, c, sigma) <= -eps1 * n.sqrt())).collect();
    let prev = chain.set(k - 1);
    let family = crate::chain::level_family(spec, chain, k);
    let beta = levels.beta(k);
    let t2 = chain
        .layer(k)
        .proper_nonempty_subsets()
        .filter_map(|a| {
            let lower = a.union(prev);
            let ah = spec.alpha_increment(prev, lower);
            if ah <= 0.0 {
                return None;
            }
            let x: f64 = family.iter().filter(|j| j.is_subset_of(lower)).map(|&j| real.component(j, sigma)).sum();
            Some((a, x <= beta * ah * (1.0 + eps2) * n))
        })
        .collect();
    ThinningResult { t1, t2, degenerate: t1_degeneracy(criticals, k) }
}
