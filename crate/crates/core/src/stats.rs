//! Comparisons between finite-N samples and their predicted limits.

use rand::seq::SliceRandom;
use serde::Serialize;
use thiserror::Error;

use crate::cascade::CascadeSample;
use crate::chain::{Chain, LevelData};
use crate::field::{compute_centering, extremal_points, sample_field, SizeParams, Window};
use crate::gibbs::{gibbs_from_energies, ultrametric_stats, MarkedPairMeasure, UltrametricReport};
use crate::model::ModelSpec;
use crate::rng::{domain, split_seed, CounterRng};
use crate::subset::Subset;

/// Two-sided acceptance threshold in standard errors.
pub const Z_PASS: f64 = 3.0;
pub const MIN_POISSON_REPLICAS: usize = 100;
/// Two-sided tail of `Z_PASS` standard errors, the matching p-value cutoff.
pub const P_PASS: f64 = 0.0027;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("{got} replicas, at least {need} needed")]
    TooFewReplicas { got: usize, need: usize },
    #[error("empty sample")]
    EmptySample,
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub test: String,
    pub statistic: f64,
    pub expected: f64,
    pub se: f64,
    pub z: f64,
    pub pass: bool,
    pub replicas: usize,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ComparisonReport {
    pub fn z_test(test: &str, statistic: f64, expected: f64, se: f64, replicas: usize, seeds: Vec<u64>) -> Self {
        let z = if se > 0.0 {
            (statistic - expected) / se
        } else if statistic == expected {
            0.0
        } else {
            f64::INFINITY.copysign(statistic - expected)
        };
        ComparisonReport {
            test: test.to_string(),
            statistic,
            expected,
            se,
            z,
            pass: z.abs() < Z_PASS,
            replicas,
            seeds,
            note: None,
        }
    }

    /// A permutation test: the statistic is the distance, `se` and `z` are
    /// undefined and the test passes when the p-value exceeds `P_PASS`.
    pub fn permutation(test: &str, ks: &KsResult, replicas: usize, seeds: Vec<u64>) -> Self {
        ComparisonReport {
            test: test.to_string(),
            statistic: ks.statistic,
            expected: 0.0,
            se: f64::NAN,
            z: f64::NAN,
            pass: ks.p_value > P_PASS,
            replicas,
            seeds,
            note: Some(format!("permutation p = {} over {} shuffles", ks.p_value, ks.permutations)),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Summary CSV with columns `test,statistic,expected,se,z,pass`.
pub fn summary_csv(reports: &[ComparisonReport]) -> String {
    let mut out = String::from("test,statistic,expected,se,z,pass\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.test,
            r.statistic,
            r.expected,
            r.se,
            r.z,
            if r.pass { "PASS" } else { "FAIL" }
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoissonCountReport {
    pub replicas: usize,
    pub expected_mean: f64,
    pub mean: f64,
    pub variance: f64,
    /// `s² / mean`; 1 for Poisson counts.
    pub dispersion: f64,
    pub z_mean: f64,
    pub z_variance: f64,
    pub pass: bool,
}

/// Mean and variance of window counts against Poisson(μ), using
/// `Var(mean) = μ/n` and `Var(s²) ≈ (μ + 2μ²)/n`.
pub fn poisson_count_test(counts: &[u64], expected_mean: f64) -> Result<PoissonCountReport, StatsError> {
    let n = counts.len();
    if n < MIN_POISSON_REPLICAS {
        return Err(StatsError::TooFewReplicas { got: n, need: MIN_POISSON_REPLICAS });
    }
    let nf = n as f64;
    let mean = counts.iter().sum::<u64>() as f64 / nf;
    let variance = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let mu = expected_mean;
    let z_mean = (mean - mu) / (mu / nf).sqrt();
    let z_variance = (variance - mu) / ((mu + 2.0 * mu * mu) / nf).sqrt();
    Ok(PoissonCountReport {
        replicas: n,
        expected_mean: mu,
        mean,
        variance,
        dispersion: if mean > 0.0 { variance / mean } else { f64::NAN },
        z_mean,
        z_variance,
        pass: z_mean.abs() < Z_PASS && z_variance.abs() < Z_PASS,
    })
}

/// Poisson(μ) counts from exponential arrivals on counter-based streams.
pub fn synthetic_poisson(mu: f64, count: usize, seed: u64) -> Vec<u64> {
    let mut rng = CounterRng::new(seed, domain::SYNTHETIC);
    (0..count)
        .map(|_| {
            let mut t = rng.exponential();
            let mut k = 0;
            while t < mu {
                k += 1;
                t += rng.exponential();
            }
            k
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
    pub seed: u64,
}

/// `sup_x |F_a(x) − F_b(x)|` of the two empirical distributions.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Two-sample KS distance with a permutation p-value from seeded shuffles.
pub fn ks_distance(a: &[f64], b: &[f64], permutations: usize, seed: u64) -> Result<KsResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let statistic = ks_statistic(a, b);
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut rng = CounterRng::new(seed, domain::PERMUTATION);
    let mut exceed = 0usize;
    for _ in 0..permutations {
        pooled.shuffle(&mut rng);
        let (pa, pb) = pooled.split_at(a.len());
        if ks_statistic(pa, pb) >= statistic {
            exceed += 1;
        }
    }
    Ok(KsResult { statistic, p_value: (exceed + 1) as f64 / (permutations + 1) as f64, permutations, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkMassReport {
    pub by_chain_set: Vec<(Subset, f64)>,
    pub off_chain: f64,
    pub total: f64,
    /// `off_chain / total`.
    pub off_chain_fraction: f64,
}

/// Atom mass `w·w′` aggregated by mark.
pub fn mark_mass_report(pairs: &MarkedPairMeasure, chain: &Chain) -> MarkMassReport {
    mark_mass_from(pairs.atoms.iter().map(|a| (a.mark, a.w1 * a.w2)), chain)
}

/// Same aggregation from precomputed `(mark, mass)` entries.
pub fn mark_mass_from(entries: impl IntoIterator<Item = (Subset, f64)>, chain: &Chain) -> MarkMassReport {
    let mut by_chain_set: Vec<(Subset, f64)> = chain.sets().iter().map(|&a| (a, 0.0)).collect();
    let mut off_chain = 0.0;
    for (mark, mass) in entries {
        match by_chain_set.iter_mut().find(|(a, _)| *a == mark) {
            Some(slot) => slot.1 += mass,
            None => off_chain += mass,
        }
    }
    let total = off_chain + by_chain_set.iter().map(|e| e.1).sum::<f64>();
    MarkMassReport { by_chain_set, off_chain, total, off_chain_fraction: off_chain / total }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbePoint {
    #[serde(rename = "N")]
    pub n_spins: u32,
    pub probability: f64,
    pub se: f64,
    pub replicas: usize,
    pub seed: u64,
}

/// Over disorder replicas, the fraction in which two distinct
/// configurations with `X_σ − a_N` in `window` have overlap exactly
/// `target`.
#[allow(clippy::too_many_arguments)]
pub fn structure_probe(
    spec: &ModelSpec,
    chain: &Chain,
    levels: &LevelData,
    sizes: &[u32],
    window: Window,
    target: Subset,
    replicas: usize,
    seed: u64,
) -> Result<Vec<ProbePoint>, StatsError> {
    let mut out = Vec::with_capacity(sizes.len());
    for (g, &n) in sizes.iter().enumerate() {
        let size = SizeParams::new(spec, n)?;
        let centering = compute_centering(spec, chain, levels, &size, None);
        let grid_seed = split_seed(seed, g as u64);
        let mut hits = 0usize;
        for r in 0..replicas {
            let real = sample_field(spec, &size, split_seed(grid_seed, r as u64))?;
            let pts = extremal_points(&real, chain, &centering, window);
            let found = pts
                .iter()
                .enumerate()
                .any(|(i, a)| pts[i + 1..].iter().any(|b| size.agreement(a.sigma, b.sigma) == target));
            hits += found as usize;
        }
        let p = hits as f64 / replicas as f64;
        out.push(ProbePoint {
            n_spins: n,
            probability: p,
            se: (p * (1.0 - p) / replicas as f64).sqrt(),
            replicas,
            seed: grid_seed,
        });
    }
    Ok(out)
}

/// The probe on a cascade sample: some pair of leaves with `y` in `window`
/// whose tree overlap is `target`.
pub fn cascade_structure_probe(sample: &CascadeSample, chain: &Chain, window: Window, target: Subset) -> bool {
    let idx: Vec<usize> = (0..sample.leaves.len()).filter(|&i| window.contains(sample.leaves[i].y)).collect();
    idx.iter().enumerate().any(|(k, &a)| idx[k + 1..].iter().any(|&b| sample.mark(chain, a, b) == target))
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

/// `Σ w^k`.
pub fn power_sum(w: &[f64], k: u32) -> f64 {
    w.iter().map(|x| x.powi(k as i32)).sum()
}

/// Difference of two replica means at `Z_PASS` joint standard errors.
pub fn compare_means(test: &str, empirical: &[f64], oracle: &[f64]) -> ComparisonReport {
    let (me, se_e) = mean_and_se(empirical);
    let (mo, se_o) = mean_and_se(oracle);
    ComparisonReport::z_test(test, me, mo, (se_e * se_e + se_o * se_o).sqrt(), empirical.len(), Vec::new())
}

/// `E Σ w^k` of two replica collections, compared at `Z_PASS` joint standard errors.
pub fn moment_check(empirical: &[Vec<f64>], oracle: &[Vec<f64>], orders: &[u32]) -> Vec<ComparisonReport> {
    orders
        .iter()
        .map(|&k| {
            let e: Vec<f64> = empirical.iter().map(|w| power_sum(w, k)).collect();
            let o: Vec<f64> = oracle.iter().map(|w| power_sum(w, k)).collect();
            compare_means(&format!("moment_sum_w{k}"), &e, &o)
        })
        .collect()
}

/// Per disorder replica of one system size: the recentered maximum
/// `max_σ X_σ − a_N` and the Gibbs power sums `Σ w²`, `Σ w³` at `beta`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaSummary {
    pub seed: u64,
    pub max_recentered: f64,
    pub sum_w2: f64,
    pub sum_w3: f64,
}

pub fn replica_summaries(
    spec: &ModelSpec,
    chain: &Chain,
    levels: &LevelData,
    n_spins: u32,
    beta: f64,
    replicas: usize,
    seed: u64,
) -> Result<Vec<ReplicaSummary>, StatsError> {
    let size = SizeParams::new(spec, n_spins)?;
    let centering = compute_centering(spec, chain, levels, &size, None);
    (0..replicas)
        .map(|r| {
            let s = split_seed(seed, r as u64);
            let real = sample_field(spec, &size, s)?;
            let energies = real.all_energies();
            let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let table = gibbs_from_energies(energies, centering.a_n, beta, &size);
            Ok(ReplicaSummary {
                seed: s,
                max_recentered: max - centering.a_n,
                sum_w2: power_sum(&table.weights, 2),
                sum_w3: power_sum(&table.weights, 3),
            })
        })
        .collect()
}

/// Ultrametric violations pooled over `replicas` disorder samples with
/// `triples` Gibbs triples each.
#[allow(clippy::too_many_arguments)]
pub fn ultrametric_batch(
    spec: &ModelSpec,
    chain: &Chain,
    levels: &LevelData,
    n_spins: u32,
    beta: f64,
    replicas: usize,
    triples: usize,
    seed: u64,
) -> Result<UltrametricReport, StatsError> {
    let size = SizeParams::new(spec, n_spins)?;
    let centering = compute_centering(spec, chain, levels, &size, None);
    let mut violations = 0;
    for r in 0..replicas {
        let s = split_seed(seed, r as u64);
        let real = sample_field(spec, &size, s)?;
        let table = gibbs_from_energies(real.all_energies(), centering.a_n, beta, &size);
        violations += ultrametric_stats(&table, spec, &size, triples, split_seed(s, 1)).violations;
    }
    let total = replicas * triples;
    let p = violations as f64 / total.max(1) as f64;
    Ok(UltrametricReport {
        beta,
        n_spins,
        triples: total,
        violations,
        fraction: p,
        se: (p * (1.0 - p) / total.max(1) as f64).sqrt(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{sample_cascade, sample_pd, CascadeSpec};
    use crate::gibbs::PairAtom;

    #[test]
    fn poisson_self_calibration() {
        let runs = 200;
        let passes =
            (0..runs).filter(|&s| poisson_count_test(&synthetic_poisson(1.0, 10_000, s), 1.0).unwrap().pass).count();
        // Each run passes with probability about 0.995.
        assert!(passes as f64 >= 0.97 * runs as f64, "{passes}");
        let zeros = poisson_count_test(&vec![0; 10_000], 1.0).unwrap();
        assert!(!zeros.pass && zeros.z_mean.abs() > 10.0);
        assert!(poisson_count_test(&[1; 50], 1.0).is_err());
    }

    #[test]
    fn ks_extremes() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_distance(&a, &a, 50, 1).unwrap().statistic, 0.0);
        let r = ks_distance(&a, &[10.0, 11.0], 200, 1).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert_eq!(ks_distance(&a, &[10.0, 11.0], 200, 1).unwrap(), r);
        assert!(ks_distance(&[], &a, 10, 1).is_err());
        let x: Vec<f64> = (0..400).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..400).map(|i| i as f64 + 200.0).collect();
        assert!(ks_distance(&x, &y, 200, 2).unwrap().p_value < 0.01);
    }

    #[test]
    fn mark_masses_from_cascade_are_on_chain() {
        let chain = Chain::new(vec![Subset::EMPTY, Subset::from_labels([1]).unwrap(), Subset::full(2)]).unwrap();
        let cs = CascadeSpec::with_expected_points(&[1.0, 2.0], &[1.0, 1.0], 6.0).unwrap();
        let s = sample_cascade(&cs, 3).unwrap();
        let w = s.normalized_weights(4.0);
        let points: Vec<(f64, usize)> = w.iter().copied().zip(0..).collect();
        let pm = MarkedPairMeasure::from_points(&points, 1.0, |&a, &b| s.mark(&chain, a, b));
        let r = mark_mass_report(&pm, &chain);
        assert_eq!(r.off_chain, 0.0);
        assert!(!cascade_structure_probe(&s, &chain, Window::new(-1e9, 1e9), Subset::from_labels([2]).unwrap()));
    }

    #[test]
    fn mark_mass_aggregation() {
        let chain = Chain::trivial(2);
        let pm = MarkedPairMeasure {
            atoms: vec![
                PairAtom { w1: 0.5, w2: 0.2, mark: Subset::EMPTY },
                PairAtom { w1: 0.5, w2: 0.3, mark: Subset::from_labels([1]).unwrap() },
            ],
            coverage: 1.0,
        };
        let r = mark_mass_report(&pm, &chain);
        assert_eq!(r.by_chain_set[0], (Subset::EMPTY, 0.1));
        assert_eq!(r.off_chain, 0.15);
    }

    #[test]
    fn moments() {
        let a: Vec<Vec<f64>> = (0..2000).map(|s| sample_pd(0.5, 1e-6, s).unwrap()).collect();
        let b: Vec<Vec<f64>> = (5000..7000).map(|s| sample_pd(0.5, 1e-6, s).unwrap()).collect();
        assert!(moment_check(&a, &b, &[2, 3]).iter().all(|r| r.pass));
        let ones = vec![vec![1.0]; 10];
        let r = moment_check(&ones, &b, &[2]);
        assert_eq!(r[0].statistic, 1.0);
    }

    #[test]
    fn summary_format() {
        let r = ComparisonReport::z_test("x", 1.0, 1.0, 0.1, 10, vec![1]);
        assert_eq!(summary_csv(&[r]), "test,statistic,expected,se,z,pass\nx,1,1,0.1,0,PASS\n");
    }
}
