use proptest::prelude::*;
use tangle_core::measures::{conservation_report, Measures};
use tangle_core::model::ModelParams;
use tangle_core::qbd;
use tangle_core::sim::{self, SimConfig};
use tangle_core::sojourn::{self, SojournOptions, Uniformized};
use tangle_core::stats;

fn small_params() -> impl Strategy<Value = ModelParams> {
    (0.2f64..4.0, 0.2f64..3.0, 0.1f64..2.0, 2usize..=6)
        .prop_map(|(l, m, a, c)| ModelParams::new(l, m, a, c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rg_matches_direct_solve(p in small_params()) {
        let st = qbd::stationary(&p, 1e-12).unwrap();
        let oracle = qbd::direct_solve_oracle(&p, (2 * st.truncation).max(200)).unwrap();
        prop_assert!(qbd::max_gap(&st, &oracle) < 1e-9);
    }

    #[test]
    fn stationary_invariants(p in small_params()) {
        let st = qbd::stationary(&p, 1e-12).unwrap();
        prop_assert!((st.total_mass() - 1.0).abs() < 1e-10);
        prop_assert!(st.pi.iter().flatten().all(|&v| v >= 0.0));
        let report = conservation_report(&st, &p, None);
        prop_assert!(report.relative_gap < 1e-8);
        prop_assert!(report.balance_gap() < 1e-8);
    }

    #[test]
    fn littles_law_and_two_routes(p in small_params()) {
        let st = qbd::stationary(&p, 1e-12).unwrap();
        let theta = sojourn::pasta_initial(&st, &p);
        let linear = sojourn::mean_sojourn_linear(&p, &theta, SojournOptions::default()).unwrap();
        let rg = sojourn::mean_sojourn_rg(&p, &theta, SojournOptions::at_level(linear.truncation)).unwrap();
        prop_assert!((linear.mean - rg.mean).abs() / linear.mean < 1e-9);
        let gap = conservation_report(&st, &p, Some(linear.mean)).little_gap().unwrap();
        prop_assert!(gap < 1e-6, "Little gap {}", gap);
    }

    #[test]
    fn mean_sojourn_decreases_when_connecting_faster(p in small_params(), factor in 1.2f64..3.0) {
        let faster = ModelParams::new(p.lambda, p.mu * factor, p.alpha, p.capacity).unwrap();
        let wait = |q: &ModelParams| {
            let st = qbd::stationary(q, 1e-12).unwrap();
            let theta = sojourn::pasta_initial(&st, q);
            sojourn::mean_sojourn_linear(q, &theta, SojournOptions::default()).unwrap().mean
        };
        prop_assert!(wait(&faster) < wait(&p));
    }
}

#[test]
fn simulation_matches_analytic_at_second_point() {
    let p = ModelParams::new(1.5, 0.8, 0.7, 4).unwrap();
    let st = qbd::stationary(&p, 1e-12).unwrap();
    let m = Measures::compute(&st, &p);
    let theta = sojourn::pasta_initial(&st, &p);
    let mean = sojourn::mean_sojourn_linear(&p, &theta, SojournOptions::default()).unwrap();

    let mut config = SimConfig::new(p, 4e4, 5e2, 12, 99);
    config.tagged_count = 400;
    let result = sim::simulate_tagged(&config).unwrap();
    for (est, value) in [
        (result.mean_internal, m.e_na),
        (result.mean_boundary, m.e_nb),
        (result.th_estimate, m.th),
    ] {
        assert!(est.covers(value, 0.99), "z {}", est.z_score(value));
    }
    let wait = result.sojourn_estimate().unwrap();
    assert!(wait.covers(mean.mean, 0.99), "z {}", wait.z_score(mean.mean));

    let samples = &result.sojourn_samples;
    let t_max = samples.iter().copied().fold(0.0, f64::max);
    let u = Uniformized::new(&p, &theta, mean.truncation, t_max).unwrap();
    let d = stats::ks_distance(samples, |t| u.cdf(t));
    assert!(d < stats::ks_critical(0.01, samples.len(), None), "KS {d}");
}

/// Tagging every arrival or a thin random subset samples the same law.
#[test]
fn tag_sampling_rate_does_not_change_sojourn_law() {
    let p = ModelParams::new(2.0, 1.0, 0.5, 5).unwrap();
    let mut dense = SimConfig::new(p, 2e4, 5e2, 4, 5);
    dense.tagged_count = 2_000;
    dense.tag_probability = Some(1.0);
    let mut sparse = SimConfig::new(p, 4e4, 5e2, 4, 6);
    sparse.tagged_count = 2_000;
    let a = sim::simulate_tagged(&dense).unwrap().sojourn_samples;
    let b = sim::simulate_tagged(&sparse).unwrap().sojourn_samples;
    // Consecutive dense tags are correlated; the critical value uses the
    // sparse sample count only to stay conservative.
    let d = stats::ks_two_sample(&a, &b);
    assert!(d < stats::ks_critical(0.01, b.len(), Some(b.len())), "KS {d}");
}
