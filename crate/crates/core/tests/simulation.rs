use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zrplab::graph::SiteGraph;
use zrplab::measure::SimplexPoint;
use zrplab::simulate::*;
use zrplab::zrp::{jump_factor, ZrpModel};

fn complete(k: usize, r: f64) -> SiteGraph<f64> {
    SiteGraph::complete(k, r).unwrap()
}

#[test]
fn condensed_holding_time_has_rate_g_of_n() {
    let n = 30;
    let m = ZrpModel::new(complete(2, 1.0), 2.0, n).unwrap();
    let sampler = ZrpSampler::new(&m);
    let rate = jump_factor::<f64>(n, 2.0);
    assert!((sampler.holding_rate(&[n as u32, 0]) - rate).abs() < 1e-14);
    let runs = 10_000;
    let mut sum = 0.0;
    for t in 0..runs {
        let mut rng = trial_rng(3, n, t);
        let mut eta = [n as u32, 0];
        sum += sampler.step(&mut eta, &mut rng);
    }
    let mean = sum / runs as f64;
    let sigma = 1.0 / rate / (runs as f64).sqrt();
    assert!((mean - 1.0 / rate).abs() < 3.0 * sigma, "mean {mean} vs {}", 1.0 / rate);
}

#[test]
fn long_run_occupation_matches_stationary_measure() {
    let m = ZrpModel::new(complete(3, 1.0), 2.0, 8).unwrap();
    let s = m.enumerate().unwrap();
    let sampler = ZrpSampler::new(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut occ = vec![0.0; s.len()];
    let mut eta = vec![3, 3, 2];
    for _ in 0..10_000_000 {
        let i = s.index_of(&eta).unwrap();
        let mut next = eta.clone();
        let dt = sampler.step(&mut next, &mut rng);
        occ[i] += dt;
        eta = next;
    }
    let total: f64 = occ.iter().sum();
    let tv: f64 = occ.iter().zip(s.stationary().unwrap().weights()).map(|(o, r)| (o / total - r).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.02, "tv {tv}");
}

#[test]
fn balanced_start_reaches_a_well() {
    let m = ZrpModel::new(complete(3, 1.0), 2.0, 20).unwrap();
    let ell = m.default_well_radius() as u32;
    let stop = move |eta: &[u32]| eta.iter().any(|&v| v >= 20 - ell);
    let tr = simulate_zrp(&m, &balanced_configuration(20, 3), &stop, f64::INFINITY, DEFAULT_EVENT_CAP, 4, false).unwrap();
    assert!(!tr.truncated && tr.final_time() > 0.0);
}

#[test]
fn truncation_is_flagged() {
    let m = ZrpModel::new(complete(2, 1.0), 2.0, 20).unwrap();
    let tr = simulate_zrp(&m, &[10, 10], &|_| false, 1e9, 100, 4, true).unwrap();
    assert!(tr.truncated);
    assert_eq!(tr.times.len(), 101);
}

#[test]
fn doubling_rates_halves_times() {
    let ladder = [10, 20, 40];
    let a = condensation_time_scaling(&complete(2, 1.0), 2.0, &ladder, 200, 1).unwrap();
    let b = condensation_time_scaling(&complete(2, 2.0), 2.0, &ladder, 200, 1).unwrap();
    for (x, y) in a.samples.iter().zip(&b.samples) {
        assert!((x.mean / y.mean - 2.0).abs() < 1e-9);
    }
    assert!((a.exponent - b.exponent).abs() < 1e-9);
}

#[test]
fn exponent_interval_shrinks_with_trials() {
    let ladder = [10, 20, 40];
    let a = condensation_time_scaling(&complete(2, 1.0), 2.0, &ladder, 100, 5).unwrap();
    let b = condensation_time_scaling(&complete(2, 1.0), 2.0, &ladder, 1600, 5).unwrap();
    let ratio = a.std_err / b.std_err;
    assert!(ratio > 2.5 && ratio < 6.0, "ratio {ratio}");
}

#[test]
fn symmetric_transitions_agree() {
    let g = complete(2, 1.0);
    let ab = transition_time_scaling(&g, 2.0, 0, &[10, 15, 20], 800, 8).unwrap();
    let ba = transition_time_scaling(&g, 2.0, 1, &[10, 15, 20], 800, 9).unwrap();
    for (x, y) in ab.fit.samples.iter().zip(&ba.fit.samples) {
        let se = (x.std_err.powi(2) + y.std_err.powi(2)).sqrt();
        assert!((x.mean - y.mean).abs() < 3.0 * se);
    }
}

#[test]
fn vertex_start_is_absorbed_for_both_engines() {
    let g = complete(2, 1.0);
    let xi = SimplexPoint::vertex(2, 0);
    let rows = d0_diagnostic(&g, 2.0, &xi, &[80], &D0Options { horizon: 0.01, paths: 1000, dt: 1e-6, seed: 1 }).unwrap();
    assert_eq!(rows[0].diffusion.absorbed, 1.0);
    // the particle system makes short excursions but stays macroscopically condensed
    assert!(rows[0].zrp.absorbed > 0.9 && rows[0].mean_discrepancy < 0.05, "{:?}", rows[0]);
}

#[test]
fn time_step_guard() {
    let g = complete(2, 1.0);
    let xi = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
    assert!(simulate_diffusion(&g, 2.0, &xi, 1.0, DiffusionOptions::with_dt(1e-3), 0).is_err());
}
