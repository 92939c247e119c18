use mooclet_core::sim::*;
use mooclet_core::{BetaPrior, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const MEANS: [f64; 2] = [0.7, 0.3];

fn seeds() -> Vec<u64> {
    (1..=50).collect()
}

fn config(policy: SimPolicy, horizon: usize) -> SimConfig {
    SimConfig {
        model: LearnerModel::bernoulli(200, &MEANS),
        policy,
        horizon,
        seeds: seeds(),
        window: 500,
    }
}

fn thompson() -> SimPolicy {
    SimPolicy::Thompson {
        prior: BetaPrior::default(),
    }
}

/// Stand-alone Bernoulli Thompson sampler, no engine involved.
/// Returns (best-arm share over the last `tail` steps, expected regret).
fn oracle_thompson(means: &[f64], horizon: usize, tail: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ac1e);
    let mut ab = vec![(1.0, 1.0); means.len()];
    let best = if means[0] >= means[1] { 0 } else { 1 };
    let (mut hits, mut regret) = (0usize, 0.0);
    for t in 0..horizon {
        let mut arm = 0;
        let mut top = f64::NEG_INFINITY;
        for (i, (a, b)) in ab.iter().enumerate() {
            let theta = Beta::new(*a, *b).unwrap().sample(&mut rng);
            if theta > top {
                top = theta;
                arm = i;
            }
        }
        if rng.random::<f64>() < means[arm] {
            ab[arm].0 += 1.0;
        } else {
            ab[arm].1 += 1.0;
        }
        regret += means[best] - means[arm];
        if t >= horizon - tail && arm == best {
            hits += 1;
        }
    }
    (hits as f64 / tail as f64, regret)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn thompson_converges_like_the_oracle() {
    let reports = run_seeds(&config(thompson(), 2_000), &seeds()).unwrap();
    let engine_share = mean(reports.iter().map(|r| r.final_best_share));
    let oracle: Vec<(f64, f64)> = seeds()
        .iter()
        .map(|s| oracle_thompson(&MEANS, 2_000, 500, *s))
        .collect();
    let oracle_share = mean(oracle.iter().map(|o| o.0));
    assert!(oracle_share >= 0.80, "oracle share {oracle_share}");
    assert!(engine_share >= 0.80, "engine share {engine_share}");
    // both are 50-seed means of the same process
    assert!(
        (engine_share - oracle_share).abs() < 0.05,
        "engine {engine_share} vs oracle {oracle_share}"
    );
    let engine_regret = mean(reports.iter().map(|r| r.total_regret));
    let oracle_regret = mean(oracle.iter().map(|o| o.1));
    assert!(
        (engine_regret - oracle_regret).abs() < 0.5 * oracle_regret.max(5.0),
        "engine {engine_regret} vs oracle {oracle_regret}"
    );
}

#[test]
fn thompson_regret_beats_uniform_on_paired_seeds() {
    let entries = [
        ComparisonEntry {
            label: "thompson".into(),
            policy: thompson(),
            seeds: None,
        },
        ComparisonEntry {
            label: "uniform".into(),
            policy: SimPolicy::Uniform,
            seeds: Some(seeds()),
        },
    ];
    let table = compare_policies(&config(SimPolicy::Uniform, 2_000), &entries).unwrap();
    let (ts, un) = (&table.rows[0], &table.rows[1]);
    // uniform's expected regret is horizon * gap / 2 = 400
    assert!((un.mean_regret - 400.0).abs() < 20.0, "{}", un.mean_regret);
    assert!(ts.mean_regret < 0.5 * un.mean_regret, "{} vs {}", ts.mean_regret, un.mean_regret);
}

#[test]
fn contextual_learns_each_segment() {
    let cfg = SimConfig {
        model: LearnerModel {
            population: 200,
            means: Vec::new(),
            segments: vec![
                Segment {
                    value: "a".into(),
                    means: vec![0.7, 0.3],
                },
                Segment {
                    value: "b".into(),
                    means: vec![0.3, 0.7],
                },
            ],
        },
        policy: SimPolicy::Contextual {
            prior: BetaPrior::default(),
        },
        horizon: 4_000,
        seeds: Vec::new(),
        window: 500,
    };
    let reports = run_seeds(&cfg, &(1..=10).collect::<Vec<_>>()).unwrap();
    for seg in 0..2 {
        let share = mean(reports.iter().map(|r| r.segments[seg].final_quarter_best_share));
        assert!(share >= 0.75, "segment {seg}: {share}");
        assert!(reports.iter().all(|r| r.segments[seg].assignments == 2_000));
        assert_eq!(reports[0].segments[seg].best_arm, seg);
    }
    // a context-blind policy cannot beat one half on this model
    let blind = run_simulation(&SimConfig { policy: thompson(), ..cfg }, 1).unwrap();
    let blind_share = mean(blind.segments.iter().map(|s| s.final_quarter_best_share));
    assert!(blind_share < 0.75, "{blind_share}");
}

#[test]
fn uniform_counts_pass_chi_square() {
    let cfg = SimConfig {
        model: LearnerModel::bernoulli(50, &[0.5, 0.5, 0.5]),
        ..config(SimPolicy::Uniform, 6_000)
    };
    let r = run_simulation(&cfg, 11).unwrap();
    let expected = 2_000.0;
    let stat: f64 = r
        .counts
        .iter()
        .map(|c| (*c as f64 - expected).powi(2) / expected)
        .sum();
    let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi2 {stat} >= {critical}");
    assert_eq!(r.total_regret, 0.0);
}

#[test]
fn pinned_and_best_pinned_regret() {
    let worst = run_simulation(&config(SimPolicy::Pinned { arm: 1 }, 1_000), 4).unwrap();
    assert_eq!(worst.counts, [0, 1_000]);
    assert!((worst.total_regret - 1_000.0 * 0.4).abs() < 1e-9);
    let best = run_simulation(&config(SimPolicy::Pinned { arm: 0 }, 1_000), 4).unwrap();
    let ts = run_simulation(&config(thompson(), 1_000), 4).unwrap();
    assert_eq!(best.total_regret, 0.0);
    assert!(ts.total_regret > 0.0);
}

#[test]
fn report_reconciles_with_engine_log() {
    let engine = mooclet_core::Engine::new(mooclet_core::EngineConfig::deterministic(8));
    let cfg = config(thompson(), 700);
    let r = run_simulation_on(&mut &engine, &cfg, 8).unwrap();
    let log = engine.assignments_for(r.mooclet);
    assert_eq!(log.len(), 700);
    for (i, v) in r.versions.iter().enumerate() {
        let n = log.iter().filter(|rec| rec.version == *v).count() as u64;
        assert_eq!(n, r.counts[i]);
    }
    let stats = engine.stats(r.mooclet).unwrap();
    assert_eq!(
        stats.versions.iter().map(|v| v.assignments).collect::<Vec<_>>(),
        r.counts
    );
    assert!(r.cumulative_regret.windows(2).all(|w| w[1] >= w[0]));
    assert!(r.total_regret <= 700.0 * 0.4 + 1e-9);
    assert_eq!(r.counts_over_time.last().unwrap(), &r.counts);
}

#[test]
fn fixed_seed_gives_byte_identical_reports() {
    let cfg = config(thompson(), 1_000);
    let a = run_simulation(&cfg, 42).unwrap();
    let b = run_simulation(&cfg, 42).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.trace_csv(), b.trace_csv());
    let c = run_simulation(&cfg, 43).unwrap();
    assert_ne!(a.trace_csv(), c.trace_csv());
}

#[test]
fn identical_policies_compare_identically() {
    let cfg = SimConfig {
        seeds: vec![3, 5, 7],
        ..config(thompson(), 500)
    };
    let entry = |label: &str| ComparisonEntry {
        label: label.into(),
        policy: thompson(),
        seeds: None,
    };
    let t = compare_policies(&cfg, &[entry("x"), entry("y")]).unwrap();
    assert_eq!(t.rows[0].regret_per_seed, t.rows[1].regret_per_seed);
    assert!(matches!(
        compare_policies(&SimConfig { seeds: vec![], ..cfg }, &[entry("x")]),
        Err(Error::Validation(_))
    ));
}

#[test]
fn config_round_trips_through_toml() {
    let text = r#"
horizon = 2000
seeds = [1, 2, 3]

[model]
population = 100
means = [0.7, 0.3]

[policy]
kind = "thompson"
alpha = 1.0
beta = 1.0
"#;
    let cfg: SimConfig = toml::from_str(text).unwrap();
    assert_eq!(cfg.window, 500);
    assert_eq!(cfg.policy, thompson());
    let back: SimConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
}
