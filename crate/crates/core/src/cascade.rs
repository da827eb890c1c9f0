//! Limit objects: the critical constants `C_l`, Ruelle cascades with level
//! densities `C_l β_l e^{−β_l t}`, their tree overlaps and normalized
//! weights, Poisson–Dirichlet weights and Brownian bridge orthant
//! probabilities.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chain::{level_family, Chain, CriticalReport};
use crate::gibbs::MarkedPairMeasure;
use crate::model::ModelSpec;
use crate::rng::{domain, gaussian_at, split_seed, CounterRng};
use crate::subset::Subset;

/// Expected points per branch above the default floor.
pub const DEFAULT_POINTS_PER_BRANCH: f64 = 50.0;
pub const DEFAULT_BRANCH_CAP: usize = 10_000;
/// Largest acceptable estimated fraction of Gibbs mass below the floors.
pub const MAX_TAIL_MASS: f64 = 1e-3;
/// Minimum Monte Carlo size for the critical constants.
pub const MIN_CONSTANT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CascadeError {
    #[error("DEGENERATE_CONSTANT: C_{level} estimated {estimate} with standard error {se}")]
    DegenerateConstant { level: usize, estimate: f64, se: f64 },
    #[error("CAP_EXCEEDED: a level-{level} branch produced more than {cap} points; raise the floor")]
    CapExceeded { level: usize, cap: usize },
    #[error("POOR_TRUNCATION: estimated tail mass {tail} exceeds {MAX_TAIL_MASS}")]
    PoorTruncation { tail: f64 },
    #[error("invalid cascade parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantEstimate {
    pub level: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub se: f64,
    pub samples: usize,
    pub seed: u64,
}

/// `C_l = P[Y_A/α̂(A) − Y^c_A/α̂^c(A) ≤ 0 for every critical A]`, with
/// independent `Y_J ~ N(0, a_J)` over the level family; exactly 1 for levels
/// without critical subsets.
pub fn estimate_critical_constants(
    spec: &ModelSpec,
    chain: &Chain,
    criticals: &CriticalReport,
    samples: usize,
    seed: u64,
) -> Result<Vec<ConstantEstimate>, CascadeError> {
    let mut out = Vec::with_capacity(chain.depth());
    for level in 1..=chain.depth() {
        let crit = criticals.at(level);
        if crit.is_empty() {
            out.push(ConstantEstimate { level, c: 1.0, se: 0.0, samples: 0, seed });
            continue;
        }
        if samples < MIN_CONSTANT_SAMPLES {
            return Err(CascadeError::Invalid(format!("{samples} samples, at least {MIN_CONSTANT_SAMPLES} needed")));
        }
        let family = level_family(spec, chain, level);
        let sd: Vec<f64> = family.iter().map(|&j| spec.weight(j).sqrt()).collect();
        // Coefficient rows, one per critical subset.
        let rows: Vec<Vec<f64>> = crit
            .iter()
            .map(|c| {
                family
                    .iter()
                    .map(|j| if c.family.contains(j) { 1.0 / c.alpha_hat } else { -1.0 / c.alpha_hat_c })
                    .collect()
            })
            .collect();
        let stream = domain::CONSTANTS | level as u64;
        let width = family.len() as u64;
        let hits: usize = (0..samples)
            .into_par_iter()
            .with_min_len(4096)
            .filter(|&s| {
                let y: Vec<f64> =
                    (0..width).map(|k| sd[k as usize] * gaussian_at(seed, stream, s as u64 * width + k)).collect();
                rows.iter().all(|r| r.iter().zip(&y).map(|(c, v)| c * v).sum::<f64>() <= 0.0)
            })
            .count();
        let p = hits as f64 / samples as f64;
        let se = (p * (1.0 - p) / samples as f64).sqrt();
        if p - 5.0 * se <= 0.0 {
            return Err(CascadeError::DegenerateConstant { level, estimate: p, se });
        }
        out.push(ConstantEstimate { level, c: p, se, samples, seed });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeSpec {
    pub betas: Vec<f64>,
    pub constants: Vec<f64>,
    /// Per-level truncation: only points `u ≥ floor_l` are generated.
    pub floors: Vec<f64>,
    pub branch_cap: usize,
}

impl CascadeSpec {
    /// Floors placed so each branch expects `points_per_branch` points.
    pub fn with_expected_points(
        betas: &[f64],
        constants: &[f64],
        points_per_branch: f64,
    ) -> Result<Self, CascadeError> {
        if betas.len() != constants.len() || betas.is_empty() {
            return Err(CascadeError::Invalid("betas and constants must have the same nonzero length".into()));
        }
        for (l, &c) in constants.iter().enumerate() {
            if !(c > 0.0 && c <= 1.0) {
                return Err(CascadeError::DegenerateConstant { level: l + 1, estimate: c, se: 0.0 });
            }
        }
        let floors = betas.iter().zip(constants).map(|(b, c)| -(points_per_branch / c).ln() / b).collect();
        Ok(CascadeSpec { betas: betas.to_vec(), constants: constants.to_vec(), floors, branch_cap: DEFAULT_BRANCH_CAP })
    }

    pub fn new(betas: &[f64], constants: &[f64]) -> Result<Self, CascadeError> {
        Self::with_expected_points(betas, constants, DEFAULT_POINTS_PER_BRANCH)
    }

    pub fn depth(&self) -> usize {
        self.betas.len()
    }

    /// Expected number of points per level-`l` branch, `C_l e^{−β_l floor_l}`.
    pub fn expected_points(&self, l: usize) -> f64 {
        self.constants[l - 1] * (-self.betas[l - 1] * self.floors[l - 1]).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeLeaf {
    /// Multi-index `(i_1, …, i_K)`, 0-based ranks within each branch.
    pub path: Vec<u32>,
    /// `u^l` along the path.
    pub levels: Vec<f64>,
    /// `y = Σ_l u^l`.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeSample {
    pub spec: CascadeSpec,
    pub seed: u64,
    /// Leaves in lexicographic multi-index order.
    pub leaves: Vec<CascadeLeaf>,
    /// Number of realized nodes per level (level 0 is the root).
    pub nodes_per_level: Vec<usize>,
}

/// Points `(ln C − ln Γ_i)/β ≥ floor` of one branch, in decreasing order.
fn branch_points(key: u64, beta: f64, c: f64, floor: f64, cap: usize, level: usize) -> Result<Vec<f64>, CascadeError> {
    let mut rng = CounterRng::new(key, domain::CASCADE);
    let ln_c = c.ln();
    let mut gamma = 0.0;
    let mut out = Vec::new();
    loop {
        gamma += rng.exponential();
        let u = (ln_c - gamma.ln()) / beta;
        if u < floor {
            return Ok(out);
        }
        if out.len() == cap {
            return Err(CascadeError::CapExceeded { level, cap });
        }
        out.push(u);
    }
}

/// Samples the truncated cascade. Branch `i` below a node with key `k`
/// draws from key `split_seed(k, i)`, so every branch is reproducible on its
/// own and lowering a floor only appends points.
pub fn sample_cascade(cspec: &CascadeSpec, seed: u64) -> Result<CascadeSample, CascadeError> {
    let k = cspec.depth();
    if cspec.branch_cap == 0 || cspec.floors.iter().any(|f| !f.is_finite()) {
        return Err(CascadeError::Invalid("floors must be finite and branch_cap positive".into()));
    }
    let mut nodes_per_level = vec![0usize; k + 1];
    nodes_per_level[0] = 1;
    let mut leaves = Vec::new();
    let mut stack: Vec<(u64, Vec<u32>, Vec<f64>)> = vec![(seed, Vec::new(), Vec::new())];
    // Depth-first, children pushed in reverse so leaves come out in order.
    while let Some((key, path, levels)) = stack.pop() {
        let l = path.len();
        if l == k {
            let y = levels.iter().sum();
            leaves.push(CascadeLeaf { path, levels, y });
            continue;
        }
        let pts = branch_points(key, cspec.betas[l], cspec.constants[l], cspec.floors[l], cspec.branch_cap, l + 1)?;
        nodes_per_level[l + 1] += pts.len();
        for (i, u) in pts.into_iter().enumerate().rev() {
            let mut p = path.clone();
            p.push(i as u32);
            let mut v = levels.clone();
            v.push(u);
            stack.push((split_seed(key, i as u64), p, v));
        }
    }
    Ok(CascadeSample { spec: cspec.clone(), seed, leaves, nodes_per_level })
}

/// `m = max{l : i_1..i_l = i′_1..i′_l}`.
pub fn tree_overlap_level(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

impl CascadeSample {
    /// Chain set `A_m` marking the pair of leaves `a`, `b`.
    pub fn mark(&self, chain: &Chain, a: usize, b: usize) -> Subset {
        chain.set(tree_overlap_level(&self.leaves[a].path, &self.leaves[b].path))
    }

    /// Adds `shift[l]` to every level-`l` point.
    pub fn shifted(&self, shift: &[f64]) -> CascadeSample {
        let mut s = self.clone();
        for leaf in &mut s.leaves {
            for (u, d) in leaf.levels.iter_mut().zip(shift) {
                *u += d;
            }
            leaf.y = leaf.levels.iter().sum();
        }
        s
    }

    /// `e^{βy} / Σ e^{βy}` in leaf order.
    pub fn normalized_weights(&self, beta: f64) -> Vec<f64> {
        let max = self.leaves.iter().map(|l| l.y).fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = self.leaves.iter().map(|l| (beta * (l.y - max)).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        w
    }

    /// Estimated fraction of `Σ e^{βy}` lost below the floors. Each level
    /// contributes, per realized parent, the expected mass of the missing
    /// points `C_l β_l e^{(β−β_l) f_l} / (β − β_l)` times the mean realized
    /// subtree factor of that level.
    pub fn tail_mass_estimate(&self, beta: f64) -> f64 {
        let k = self.spec.depth();
        if self.leaves.is_empty() {
            return 1.0;
        }
        let mut kept = 0.0;
        let mut missing = 0.0;
        // Subtree factors: for every realized level-l node, Σ over its leaves
        // of e^{β(y − s_l)}, with s_l the prefix sum down to the node.
        for l in 1..=k {
            let (bl, c, f) = (self.spec.betas[l - 1], self.spec.constants[l - 1], self.spec.floors[l - 1]);
            if beta <= bl {
                return f64::INFINITY;
            }
            let m_l = c * bl * ((beta - bl) * f).exp() / (beta - bl);
            let mut factors: Vec<(Vec<u32>, f64, f64)> = Vec::new();
            for leaf in &self.leaves {
                let prefix = &leaf.path[..l];
                let s_l: f64 = leaf.levels[..l].iter().sum();
                let t = (beta * (leaf.y - s_l)).exp();
                match factors.last_mut() {
                    Some((p, _, acc)) if p.as_slice() == prefix => *acc += t,
                    _ => factors.push((prefix.to_vec(), s_l - leaf.levels[l - 1], t)),
                }
            }
            let mean_factor = factors.iter().map(|f| f.2).sum::<f64>() / factors.len() as f64;
            // Parents are the level-(l−1) nodes with at least one leaf below.
            let mut parents: Vec<(Vec<u32>, f64)> = Vec::new();
            for (p, s_parent, _) in &factors {
                let pp = p[..l - 1].to_vec();
                if parents.last().map(|x| &x.0) != Some(&pp) {
                    parents.push((pp, *s_parent));
                }
            }
            missing += parents.iter().map(|(_, s)| (beta * s).exp()).sum::<f64>() * m_l * mean_factor;
            if l == k {
                kept = self.leaves.iter().map(|leaf| (beta * leaf.y).exp()).sum();
            }
        }
        missing / (kept + missing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitLaw {
    /// Normalized weights in leaf order.
    pub weights: Vec<f64>,
    pub pairs: MarkedPairMeasure,
    pub tail_mass: f64,
}

/// Normalized cascade weights at `β` with their tree-overlap marked pairs,
/// restricted to the heaviest leaves covering `coverage` of the mass.
pub fn cascade_to_limit_law(
    sample: &CascadeSample,
    chain: &Chain,
    beta: f64,
    coverage: f64,
) -> Result<LimitLaw, CascadeError> {
    let tail_mass = sample.tail_mass_estimate(beta);
    if !(tail_mass <= MAX_TAIL_MASS) {
        return Err(CascadeError::PoorTruncation { tail: tail_mass });
    }
    let weights = sample.normalized_weights(beta);
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut points = Vec::new();
    for i in order {
        if mass >= coverage {
            break;
        }
        mass += weights[i];
        points.push((weights[i], i));
    }
    let pairs = MarkedPairMeasure::from_points(&points, mass, |&a, &b| sample.mark(chain, a, b));
    Ok(LimitLaw { weights, pairs, tail_mass })
}

/// Top point of a one-level cascade with parameters `(β, C)`, `count` times.
pub fn sample_cascade_max(beta: f64, c: f64, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = CounterRng::new(seed, domain::CASCADE);
    (0..count).map(|_| (c.ln() - rng.exponential().ln()) / beta).collect()
}

/// Poisson–Dirichlet weights: atoms `t_i = Γ_i^{−1/x}` of a PPP with density
/// `x t^{−x−1} dt`, kept while `t_i ≥ floor · t_1`, normalized, in decreasing
/// order. The floor is relative so the largest atom is always kept.
pub fn sample_pd(x: f64, floor: f64, seed: u64) -> Result<Vec<f64>, CascadeError> {
    if !(x > 0.0 && x < 1.0) || !(floor > 0.0) {
        return Err(CascadeError::Invalid(format!(
            "PD needs 0 < x < 1 and a positive floor, got x = {x}, floor = {floor}"
        )));
    }
    let mut rng = CounterRng::new(seed, domain::PD);
    let mut gamma = rng.exponential();
    let limit = gamma * floor.powf(-x);
    let mut t = Vec::new();
    while gamma <= limit {
        t.push(gamma.powf(-1.0 / x));
        gamma += rng.exponential();
    }
    let total: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= total);
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub p: f64,
    pub se: f64,
    pub samples: usize,
}

impl Estimate {
    fn from_hits(hits: usize, samples: usize) -> Self {
        let p = hits as f64 / samples as f64;
        Estimate { p, se: (p * (1.0 - p) / samples as f64).sqrt(), samples }
    }
}

/// `P[B(s_1) ≤ 0, …, B(s_j) ≤ 0]` for a standard Brownian bridge on `[0, 1]`,
/// simulated through its Markov transitions.
pub fn bridge_orthant(times: &[f64], samples: usize, seed: u64) -> Result<Estimate, CascadeError> {
    let mut s: Vec<f64> = times.to_vec();
    if s.is_empty() || s.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(CascadeError::Invalid("bridge times must lie in (0, 1)".into()));
    }
    s.sort_by(f64::total_cmp);
    s.dedup();
    let hits = (0..samples)
        .into_par_iter()
        .with_min_len(4096)
        .filter(|&i| {
            let (mut b, mut prev) = (0.0, 0.0);
            s.iter().enumerate().all(|(k, &t)| {
                let mean = b * (1.0 - t) / (1.0 - prev);
                let var = (t - prev) * (1.0 - t) / (1.0 - prev);
                b = mean + var.sqrt() * gaussian_at(seed, domain::BRIDGE, (i * s.len() + k) as u64);
                prev = t;
                b <= 0.0
            })
        })
        .count();
    Ok(Estimate::from_hits(hits, samples))
}

/// `P[Z ≤ 0]` for `Z ~ N(0, Σ)`, by Cholesky factor and i.i.d. normals.
pub fn gaussian_orthant(cov: &[Vec<f64>], samples: usize, seed: u64) -> Estimate {
    let d = cov.len();
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j { (cov[i][i] - s).max(0.0).sqrt() } else { (cov[i][j] - s) / l[j][j] };
        }
    }
    let stream = domain::BRIDGE | 1 << 31;
    let hits = (0..samples)
        .into_par_iter()
        .with_min_len(4096)
        .filter(|&n| {
            let z: Vec<f64> = (0..d).map(|k| gaussian_at(seed, stream, (n * d + k) as u64)).collect();
            (0..d).all(|i| (0..=i).map(|k| l[i][k] * z[k]).sum::<f64>() <= 0.0)
        })
        .count();
    Estimate::from_hits(hits, samples)
}
