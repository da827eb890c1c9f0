//! Pilot runs behind the calibrated bounds in `nhgrem_validation`.
//!
//! `cargo run --release -p nhgrem-validation --example calibrate -- <ultrametric|limit|probe|poisson>`

use std::time::Instant;

use nhgrem::cascade::{sample_cascade_max, sample_pd};
use nhgrem::chain::DEFAULT_TOL;
use nhgrem::field::{compute_centering, count_in_window, sample_field, SizeParams, Window};
use nhgrem::rng::split_seed;
use nhgrem::stats::{
    compare_means, ks_distance, poisson_count_test, power_sum, replica_summaries, structure_probe, ultrametric_batch,
};
use nhgrem::{build_chain, builtin_model, Subset};
use nhgrem_validation::{limit_law, poisson as pois, probe as pr, ultrametric as um, PILOT_SEED};

fn ultrametric() {
    let spec = builtin_model("paradigmatic").unwrap().spec;
    let (chain, levels) = build_chain(&spec, DEFAULT_TOL).unwrap();
    let beta = 2.0 * levels.beta(1);
    for batch in 0..3 {
        let seed = split_seed(PILOT_SEED, batch);
        for n in um::SIZES {
            let t = Instant::now();
            let r = ultrametric_batch(
                &spec,
                &chain,
                &levels,
                n,
                beta,
                um::REPLICAS,
                um::TRIPLES,
                split_seed(seed, n as u64),
            )
            .unwrap();
            println!("batch {batch} N={n} fraction={:.5} se={:.5} ({:.1?})", r.fraction, r.se, t.elapsed());
        }
    }
}

fn limit() {
    let spec = builtin_model("REM").unwrap().spec;
    let (chain, levels) = build_chain(&spec, DEFAULT_TOL).unwrap();
    let beta = 2.0 * levels.beta(1);
    let reference = sample_cascade_max(levels.beta(1), 1.0, 20_000, PILOT_SEED);
    let pd: Vec<f64> = (0..2000)
        .map(|r| power_sum(&sample_pd(0.5, limit_law::PD_FLOOR, split_seed(PILOT_SEED ^ 1, r)).unwrap(), 2))
        .collect();
    println!("PD E sum w2 = {:.4}", pd.iter().sum::<f64>() / pd.len() as f64);
    for n in limit_law::SIZES {
        let t = Instant::now();
        let s = replica_summaries(&spec, &chain, &levels, n, beta, 1000, split_seed(PILOT_SEED, n as u64)).unwrap();
        let max: Vec<f64> = s.iter().map(|r| r.max_recentered).collect();
        let ks = ks_distance(&max, &reference, 0, 0).unwrap();
        let w2: Vec<f64> = s.iter().map(|r| r.sum_w2).collect();
        let cmp = compare_means("w2", &w2, &pd);
        println!(
            "N={n} ks={:.4} w2={:.4} diff={:.4} se={:.4} ({:.1?})",
            ks.statistic,
            cmp.statistic,
            cmp.statistic - cmp.expected,
            cmp.se,
            t.elapsed()
        );
    }
}

fn probe() {
    for name in ["M1", "M3"] {
        let spec = builtin_model(name).unwrap().spec;
        let (chain, levels) = build_chain(&spec, DEFAULT_TOL).unwrap();
        let t = Instant::now();
        let window = Window::new(pr::WINDOW.0, pr::WINDOW.1);
        let target = Subset::from_labels([1]).unwrap();
        let pts =
            structure_probe(&spec, &chain, &levels, &pr::SIZES, window, target, pr::REPLICAS, PILOT_SEED).unwrap();
        for p in pts {
            println!("{name} N={} p={:.4} se={:.4}", p.n_spins, p.probability, p.se);
        }
        println!("{name} {:.1?}", t.elapsed());
    }
}

fn poisson() {
    let spec = builtin_model("REM").unwrap().spec;
    let (chain, levels) = build_chain(&spec, DEFAULT_TOL).unwrap();
    let size = SizeParams::new(&spec, pois::N).unwrap();
    let centering = compute_centering(&spec, &chain, &levels, &size, None);
    let t = Instant::now();
    let counts: Vec<u64> = (0..pois::REPLICAS as u64)
        .map(|r| {
            let real = sample_field(&spec, &size, split_seed(PILOT_SEED, r)).unwrap();
            count_in_window(&real, &centering, Window::above(0.0)) as u64
        })
        .collect();
    println!("{:?} ({:.1?})", poisson_count_test(&counts, 1.0).unwrap(), t.elapsed());
}

fn main() {
    match std::env::args().nth(1).as_deref() {
        Some("ultrametric") => ultrametric(),
        Some("limit") => limit(),
        Some("probe") => probe(),
        Some("poisson") => poisson(),
        _ => eprintln!("usage: calibrate <ultrametric|limit|probe|poisson>"),
    }
}
