use zrplab::gamma::*;
use zrplab::graph::SiteGraph;
use zrplab::measure::SimplexPoint;
use zrplab::rate::{chain_rate, limiting_chain, GammaConvention, PolyBump};
use zrplab::zrp::ModelFamily;

fn family(g: SiteGraph<f64>, ladder: Vec<usize>) -> ModelFamily<f64> {
    ModelFamily::new(g, 2.0, ladder).unwrap()
}

fn normalizations(seq: &RecoverySequence<f64>) -> Vec<f64> {
    seq.steps.iter().map(|s| s.diagnostic("normalization").unwrap()).collect()
}

#[test]
fn expansion_table_for_two_sites() {
    let fam = family(SiteGraph::complete(2, 1.0).unwrap(), vec![20, 40, 80, 160]);
    let bump = PolyBump::new(2, 0.1).unwrap();
    let targets = vec![
        Target::UniformVertices,
        Target::Vertex(0),
        Target::VertexMix(vec![0.7, 0.3]),
        Target::Face { sites: vec![0, 1], density: &bump },
    ];
    let reports = expansion_table(&fam, &targets, ExpansionOptions::default()).unwrap();
    assert_eq!(reports.len(), 4 * Scale::ALL.len());
    for r in &reports {
        assert!(r.passed, "{} {:?}: rows {:?} target {}", r.measure_id, r.scale, r.rows, r.target);
    }
    let vertex = reports.iter().find(|r| r.measure_id == "vertex_0" && r.scale == Scale::Metastable).unwrap();
    let lc = limiting_chain(fam.graph(), 2.0, GammaConvention::Series).unwrap();
    assert!((vertex.target - lc.chain.rate(0, 1)).abs() < 1e-12);
    // weak convergence of the push-forwards toward the target
    for r in reports.iter().filter(|r| r.scale == Scale::Metastable) {
        assert!(r.weak_distances.last().unwrap() < &r.weak_distances[0], "{}: {:?}", r.measure_id, r.weak_distances);
    }
}

#[test]
fn gamma_liminf_sanity_at_ladder_top() {
    let fam = family(SiteGraph::complete(2, 1.0).unwrap(), vec![20, 40, 80, 160]);
    let reports = expansion_table(&fam, &[Target::VertexMix(vec![0.6, 0.4])], ExpansionOptions::default()).unwrap();
    let r = reports.iter().find(|r| r.scale == Scale::Metastable).unwrap();
    assert!(r.rows.last().unwrap().1 >= 0.6 * r.target);
}

#[test]
fn interior_point_on_three_sites() {
    let fam = family(SiteGraph::complete(3, 1.0).unwrap(), vec![100, 200, 400]);
    let xi = SimplexPoint::new(vec![0.3, 0.3, 0.4]).unwrap();
    let seq = bump_recovery(&fam, &xi, RadiusRule { exponent: 0.75 }, Scale::SubDiffusive).unwrap();
    let v = seq.scaled_rates(Scale::SubDiffusive, 2.0);
    assert!(v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
    // rescaled ball mass stays within fixed positive bounds
    let m: Vec<f64> = seq.steps.iter().map(|s| s.diagnostic("ball_mass").unwrap()).collect();
    let (lo, hi) = m.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
    assert!(lo > 0.0 && hi / lo < 3.0, "{m:?}");
}

#[test]
fn bump_rejects_radius_below_scale() {
    let fam = family(SiteGraph::complete(2, 1.0).unwrap(), vec![100, 200]);
    let xi = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
    assert!(bump_recovery(&fam, &xi, RadiusRule { exponent: 0.75 }, Scale::Diffusive).is_err());
}

#[test]
fn tilted_recovery_on_a_nonreversible_cycle() {
    let g = SiteGraph::directed_cycle(3, 2.0, 0.5).unwrap();
    let fam = family(g.clone(), vec![8, 12, 16]);
    let mu = [0.5, 0.3, 0.2];
    let seq = tilted_recovery(&fam, &mu, DEFAULT_TILT_LAMBDA).unwrap();
    for s in &seq.steps {
        assert!(s.diagnostic("stationarity_residual").unwrap() < 1e-9);
        assert!(s.rate >= 0.0);
    }
    let lc = limiting_chain(&g, 2.0, GammaConvention::Series).unwrap();
    let j = chain_rate(&lc.chain, &mu).unwrap().value;
    let top = *seq.scaled_rates(Scale::Metastable, 2.0).last().unwrap();
    assert!(top > 0.3 * j && top < 3.0 * j, "{top} vs {j}");
}

#[test]
fn face_recovery_on_three_sites_respects_the_boundary() {
    // a proper face needs sum(B) / N below the bump margin, which the default
    // cutoff exponent reaches only at astronomically large N
    let fam = ModelFamily::new(SiteGraph::complete(3, 1.0).unwrap(), 4.0, vec![80, 160, 320]).unwrap();
    let bump = PolyBump::new(2, 0.2).unwrap();
    assert!(wn_recovery(&fam, &[0, 1], &bump, None).is_err());
    let seq = wn_recovery(&fam, &[0, 1], &bump, Some(0.55)).unwrap();
    for s in &seq.steps {
        let pf = &s.pushforward;
        let off: f64 = pf.points().iter().zip(pf.weights()).filter(|(p, _)| p.coords()[2] > 0.2).map(|(_, w)| w).sum();
        assert!(off < 1e-12);
    }
    let grid = zrplab::rate::SimplexGrid::new(2, 800).unwrap();
    let target = zrplab::rate::lambda_norm_sq(4.0, &bump, &grid).unwrap();
    let gaps: Vec<f64> = normalizations(&seq).iter().map(|v| (v / target - 1.0).abs()).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

#[test]
fn cutoff_profile() {
    let g = default_cutoff_exponent(2.0f64);
    let knee = 100f64.powf(1.0 - g);
    assert_eq!(cutoff(100, g, knee * 0.5), 1.0);
    assert!((cutoff(100, g, knee * 1.5) - 0.5).abs() < 1e-12);
    assert_eq!(cutoff(100, g, knee * 2.5), 0.0);
    assert!(2.0 * g < (1.0 - g) * (2.0 - 1.0));
}
