use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;
use zrplab::gamma::{expansion_table, ExpansionOptions, RadiusRule, Target};
use zrplab::graph::SiteGraph;
use zrplab::linalg::DenseMatrix;
use zrplab::measure::SimplexPoint;
use zrplab::metastability::{capacity, capacity_1d_exact, mean_jump_rates, resolvent_check};
use zrplab::rate::{gamma_alpha, limiting_chain, rate_reversible, rate_variational, GammaConvention, PolyBump, VariationalOptions};
use zrplab::simulate::{
    balanced_configuration, condensation_time_scaling, d0_diagnostic, diffusion_drift, simulate_diffusion, simulate_zrp,
    transition_time_scaling, D0Options, DiffusionOptions, ScalingFit,
};
use zrplab::zrp::{ModelFamily, ZrpModel};
use zrplab::DiscreteMeasure64;

use crate::output::{num, ArtifactWriter};
use crate::scenario::Scenario;
use crate::CliError;

/// Outcome of a task that ran to completion.
pub struct Verdict {
    pub passed: bool,
    pub summary: String,
}

impl Verdict {
    fn ok(summary: impl Into<String>) -> Self {
        Self { passed: true, summary: summary.into() }
    }
}

pub fn run(s: &Scenario, w: &mut ArtifactWriter) -> Result<Verdict, CliError> {
    match s.task.as_str() {
        "stationary" => stationary(s, w),
        "reduced-chain" => reduced_chain(s, w),
        "jump-rates" => jump_rates(s, w),
        "resolvent" => resolvent(s, w),
        "gamma-expansion" => gamma_expansion(s, w),
        "condensation-time" => condensation(s, w),
        "transition-time" => transition(s, w),
        "zrp-trajectory" => zrp_trajectory(s, w),
        "diffusion" => diffusion(s, w),
        "d0" => d0(s, w),
        "selftest" => selftest(s, w),
        other => Err(CliError::UnknownTask(other.to_string())),
    }
}

fn model(s: &Scenario, n: usize) -> Result<ZrpModel<f64>, CliError> {
    Ok(ZrpModel::new(s.graph()?, s.alpha, n)?)
}

fn stationary(s: &Scenario, w: &mut ArtifactWriter) -> Result<Verdict, CliError> {
    let radius: Option<usize> = s.param("well_radius")?;
    let write_measures = s.param_or("write_measures", true)?;
    let g = s.graph()?;
    let k = g.kappa();
    let gam = gamma_alpha(s.alpha, GammaConvention::Series);
    let z_s = k as f64 * gam.powi(k as i32 - 1);
    let mut table = Vec::new();
    let mut wells_rows = Vec::new();
    for &n in &s.ladder {
        let space = model(s, n)?.enumerate()?;
        let rho = space.stationary()?;
        let wells = match radius {
            Some(r) => space.wells_with_radius(r)?,
            None => space.wells()?,
        };
        let z = space.partition_function()?;
        table.push(vec![n.to_string(), num(z), num(z_s), num((z - z_s).abs()), wells.radius().to_string(), num(rho.mass_of(wells.valley()))]);
        for x in 0..k {
            wells_rows.push(vec![n.to_string(), x.to_string(), num(rho.mass_of(wells.members(x)))]);
        }
        if write_measures {
            let mut header: Vec<String> = vec!["index".into()];
            header.extend((0..k).map(|x| format!("eta{x}")));
            header.push("rho".into());
            let rows: Vec<Vec<String>> = (0..space.len())
                .map(|i| {
                    let mut r = vec![i.to_string()];
                    r.extend(space.counts(i).iter().map(|c| c.to_string()));
                    r.push(num(rho.weights()[i]));
                    r
                })
                .collect();
            let h: Vec<&str> = header.iter().map(String::as_str).collect();
            w.csv(&format!("stationary_N{n}.csv"), &h, &rows)?;
        }
    }
    w.csv("partition.csv", &["N", "Z_N", "Z_S", "abs_err", "well_radius", "valley_mass"], &table)?;
    w.csv("wells.csv", &["N", "site", "mass"], &wells_rows)?;
    Ok(Verdict::ok(format!("{} ladder points", s.ladder.len())))
}

fn reduced_chain(s: &Scenario, w: &mut ArtifactWriter) -> Result<Verdict, CliError> {
    let conv: GammaConvention = s.param_or("convention", GammaConvention::Series)?;
    let g = s.graph()?;
    let lc = limiting_chain(&g, s.alpha, conv)?;
    let k = g.kappa();
    let mut rows = Vec::new();
    for x in 0..k {
        for y in 0..k {
            if x != y {
                rows.push(vec![x.to_string(), y.to_string(), num(g.rate(x, y)), num(lc.chain.rate(x, y))]);
            }
        }
    }
    w.csv("reduced_chain.csv", &["x", "y", "r", "R"], &rows)?;
    let z_s = k as f64 * lc.gamma.powi(k as i32 - 1);
    w.json("constants.json", &json!({ "convention": conv, "gamma": lc.gamma, "i_alpha": lc.i_alpha, "z_s": z_s }))?;
    Ok(Verdict::ok(format!("Gamma = {}, I_alpha = {}", lc.gamma, lc.i_alpha)))
}

fn jump_rates(s: &Scenario, w: &mut ArtifactWriter) -> Result<Verdict, CliError> {
    let radius: Option<usize> = s.param("well_radius")?;
    let mut rows = Vec::new();
    for &n in &s.ladder {
        let space = model(s, n)?.enumerate()?;
        let wells = match radius {
            Some(r) => space.wells_with_radius(r)?,
            None => space.wells()?,
        };
        let jr = mean_jump_rates(&space, &wells)?;
        let k = space.kappa();
        for x in 0..k {
            for y in 0..k {
                if x != y {
                    rows.push(vec![
                        n.to_string(),
                        x.to_string(),
                        y.to_string(),
                        num(jr.rates[(x, y)]),
                        num(jr.accelerated[(x, y)]),
                        num(jr.target[(x, y)]),
                        num(jr.exit_rates[x]),
                    ]);
                }
            }
        }
    }
    w.csv("jump_rates.csv", &["N", "x", "y", "rate", "accelerated", "target", "exit_rate"], &rows)?;
    Ok(Verdict::ok(format!("{} rows", rows.len())))
}

fn resolvent(s: &Scenario, w: &mut ArtifactWriter) -> Result<Verdict, CliError> {
    let lambda = s.param_or("lambda", 1.0)?;
    let k = s.graph()?.kappa();
    let g: Vec<f64> = s.param("g")?.unwrap_or_else(|| (0..k).map(|x| if x == 0 { 1.0 } else { 0.0 }).collect());
    let max_dev: Option<f64> = s.param("max_deviation")?;
    let r = resolvent_check(&model(s, s.ladder[0])?, &s.ladder, &g, lambda)?;
    let mut rows = Vec::new();
    for row in &r.rows {
        for x in 0..k {
            rows.push(vec![
                row.n.to_string(),
                x.to_string(),
                num(row.oscillation[x]),
                num(row.well_averages[x]),
                num(r.reduced[x]),
                num(row.deviation),
                num(row.backward_error),
            ]);
        }
    }
    w.csv("resolvent.csv", &["N", "site", "oscillation", "well_average", "reduced", "deviation", "backward_error"], &rows)?;
    let osc = r.max_oscillation();
    let decreasing = osc.windows(2).all(|p| p[1] < p[0]);
    let dev = r.rows.last().map_or(0.0, |x| x.deviation);
    let passed = decreasing && max_dev.is_none_or(|m| dev < m);
    Ok(Verdict { passed, summary: format!("oscillation {osc:?}, deviation {dev}") })
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum TargetSpec {
    UniformVertices,
    Vertex { site: usize },
    VertexMix { masses: Vec<f64> },
    Face { sites: Vec<usize>, threshold: Option<f64> },
    Point { coords: Vec<f64> },
}

fn default_targets(k: usize) -> Vec<TargetSpec> {
    let total = (k * (k + 1) / 2) as f64;
    vec![
        TargetSpec::UniformVertices,
        TargetSpec::Vertex { site: 0 },
        TargetSpec::VertexMix { masses: (0..k).map(|x| (k - x) as f64 / total).collect() },
        TargetSpec::Face { sites: (0..k).collect(), threshold: None },
    ]
}

fn gamma_expansion(s: &Scenario, w: &mut ArtifactWriter) -> Result<Verdict, CliError> {
    let g = s.graph()?;
    let k = g.kappa();
    let specs: Vec<TargetSpec> = s.param("targets")?.unwrap_or_else(|| default_targets(k));
    let mut opts = ExpansionOptions::<f64>::default();
    opts.lambda = s.param_or("lambda", opts.lambda)?;
    opts.bump_radius = RadiusRule { exponent: s.param_or("bump_exponent", opts.bump_radius.exponent)? };
    opts.grid_divisions = s.param_or("grid_divisions", opts.grid_divisions)?;
    opts.tolerance = s.param_or("tolerance", opts.tolerance)?;
    let bumps: Vec<Option<PolyBump<f64>>> = specs
        .iter()
        .map(|t| match t {
            TargetSpec::Face { sites, threshold } => {
                let d = sites.len();
                let thr = threshold.unwrap_or(0.4 / (d as f64).powi(d as i32));
                PolyBump::new(d, thr).map(Some)
            }
            _ => Ok(None),
        })
        .collect::<Result<_, _>>()?;
    let targets: Vec<Target<'_, f64>> = specs
        .iter()
        .zip(&bumps)
        .map(|(t, b)| {
            Ok(match t {
                TargetSpec::UniformVertices => Target::UniformVertices,
                TargetSpec::Vertex { site } => Target::Vertex(*site),
                TargetSpec::VertexMix { masses } => Target::VertexMix(masses.clone()),
                TargetSpec::Face { sites, .. } => Target::Face { sites: sites.clone(), density: b.as_ref().expect("bump built") },
                TargetSpec::Point { coords } => Target::Point(SimplexPoint::new(coords.clone())?),
            })
        })
        .collect::<Result<_, CliError>>()?;
    let family = ModelFamily::new(g, s.alpha, s.ladder.clone())?;
    let reports = expansion_table(&family, &targets, opts)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for r in &reports {
        for &(n, v) in &r.rows {
            rows.push(vec![
                r.measure_id.clone(),
                r.scale.label().to_string(),
                n.to_string(),
                num(v),
                num(r.extrapolated.value),
                num(r.target),
                num(r.rel_err),
            ]);
        }
        summary.push(json!({
            "measure_id": r.measure_id,
            "scale": r.scale,
            "provenance": r.provenance,
            "target": r.target,
            "extrapolated": r.extrapolated.value,
            "error_bar": r.extrapolated.error_bar,
            "fitted_exponent": r.extrapolated.exponent,
            "rel_err": r.rel_err,
            "weak_distances": r.weak_distances,
            "passed": r.passed,
        }));
    }
    w.csv("gamma_expansion.csv", &["measure_id", "scale", "N", "value", "extrapolated", "target", "rel_err"], &rows)?;
    w.json("gamma_reports.json", &summary)?;
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| format!("{}/{}", r.measure_id, r.scale.label())).collect();
    Ok(Verdict {
        passed: failed.is_empty(),
        summary: if failed.is_empty() { format!("{} cells passed", reports.len()) } else { format!("failed cells: {}", failed.join(", ")) },
    })
}

fn scaling_outputs(s: &Scenario, w: &mut ArtifactWriter, stem: &str, fit: &ScalingFit, extra: serde_json::Value) -> Result<(), CliError> {
    w.csv_body(&format!("{stem}.csv"), &fit.to_csv())?;
    w.json(
        &format!("{stem}.json"),
        &json!({
            "seed": s.seed,
            "model_hash": s.model_hash()?,
            "scenario_sha256": s.hash(),
            "exponent": fit.exponent,
            "std_err": fit.std_err,
            "ci": [fit.ci.0, fit.ci.1],
            "log_prefactor": fit.log_prefactor,
            "samples": fit.samples,
            "extra": extra,
        }),
    )
}

fn interval(v: Option<Vec<f64>>) -> Result<Option<(f64, f64)>, CliError> {
    match v {
        None => Ok(None),
        Some(v) if v.len() == 2 && v[0] <= v[1] => Ok(Some((v[0], v[1]))),
        Some(v) => Err(CliError::Config(format!("expected interval [lo, hi], got {v:?}"))),
    }
}

fn condensation(s: &Scenario, w: &mut ArtifactWriter) -> Result<Verdict, CliError> {
    let trials = s.param_or("trials", 400usize)?;
    let expected = interval(s.param("expected")?)?;
    let fit = condensation_time_scaling(&s.graph()?, s.alpha, &s.ladder, trials, s.seed)?;
    scaling_outputs(s, w, "condensation_scaling", &fit, json!({ "target_radius": "floor(N/10)" }))?;
    let passed = expected.is_none_or(|(lo, hi)| (lo..=hi).contains(&fit.exponent));
    Ok(Verdict { passed, summary: format!("exponent {:.4} [{:.4}, {:.4}]", fit.exponent, fit.ci.0, fit.ci.1) })
}

fn transition(s: &Scenario, w: &mut ArtifactWriter) -> Result<Verdict, CliError> {
    let trials = s.param_or("trials", 400usize)?;
    let from = s.param_or("from", 0usize)?;
    let expected = interval(s.param("expected")?)?;
    let tol: Option<f64> = s.param("rate_tolerance")?;
    let t = transition_time_scaling(&s.graph()?, s.alpha, from, &s.ladder, trials, s.seed)?;
    let top = *t.rescaled_rates.last().expect("non-empty ladder");
    let gap = (top - t.target_rate).abs() / t.target_rate;
    scaling_outputs(
        s,
        w,
        "transition_scaling",
        &t.fit,
        json!({ "from": from, "rescaled_rates": t.rescaled_rates, "target_rate": t.target_rate, "relative_gap": gap }),
    )?;
    let passed = expected.is_none_or(|(lo, hi)| (lo..=hi).contains(&t.fit.exponent)) && tol.is_none_or(|x| gap < x);
    Ok(Verdict {
        passed,
        summary: format!("exponent {:.4} [{:.4}, {:.4}]; rescaled rate {top:.4} vs {:.4}", t.fit.exponent, t.fit.ci.0, t.fit.ci.1, t.target_rate),
    })
}

fn zrp_trajectory(s: &Scenario, w: &mut ArtifactWriter) -> Result<Verdict, CliError> {
    let n = *s.ladder.last().expect("non-empty ladder");
    let m = model(s, n)?;
    let start: Vec<u32> = s.param("start")?.unwrap_or_else(|| balanced_configuration(n, m.kappa()));
    let horizon = s.param_or("horizon", 1000.0)?;
    let cap = s.param_or("event_cap", 10_000_000u64)?;
    let thin = s.param_or("thin", 1usize)?;
    let tr = simulate_zrp(&m, &start, &|_| false, horizon, cap, s.seed, true)?;
    w.csv_body(&format!("zrp_trajectory_N{n}.csv"), &tr.to_csv(thin))?;
    w.json(
        &format!("zrp_trajectory_N{n}.json"),
        &json!({ "seed": s.seed, "model_hash": s.model_hash()?, "model": tr.model, "events": tr.times.len() - 1, "final_time": tr.final_time(), "event_cap_hit": (tr.times.len() - 1) as u64 >= cap }),
    )?;
    Ok(Verdict::ok(format!("{} events", tr.times.len() - 1)))
}

fn start_point(s: &Scenario, k: usize) -> Result<SimplexPoint<f64>, CliError> {
    let c: Vec<f64> = s.param("start")?.unwrap_or_else(|| vec![1.0 / k as f64; k]);
    Ok(SimplexPoint::new(c)?)
}

fn diffusion(s: &Scenario, w: &mut ArtifactWriter) -> Result<Verdict, CliError> {
    let g = s.graph()?;
    let xi = start_point(s, g.kappa())?;
    let horizon = s.param_or("horizon", 0.1)?;
    let mut opts = DiffusionOptions::with_dt(s.param_or("dt", 1e-5)?);
    opts.record = true;
    let thin = s.param_or("thin", 100usize)?;
    let tr = simulate_diffusion(&g, s.alpha, &xi, horizon, opts, s.seed)?;
    w.csv_body("diffusion_path.csv", &tr.to_csv(thin))?;
    w.json(
        "diffusion_path.json",
        &json!({ "seed": s.seed, "model_hash": s.model_hash()?, "model": tr.model, "dt": opts.dt, "absorption_threshold": opts.absorption_threshold(), "halving_cap_hit": tr.truncated }),
    )?;
    Ok(Verdict::ok(format!("{} steps", tr.times.len() - 1)))
}

fn d0(s: &Scenario, w: &mut ArtifactWriter) -> Result<Verdict, CliError> {
    let g = s.graph()?;
    let xi = start_point(s, g.kappa())?;
    let opts = D0Options {
        horizon: s.param_or("horizon", 0.05)?,
        paths: s.param_or("paths", 20000usize)?,
        dt: s.param_or("dt", 5e-6)?,
        seed: s.seed,
    };
    let max_disc: Option<f64> = s.param("max_discrepancy")?;
    let rows = d0_diagnostic(&g, s.alpha, &xi, &s.ladder, &opts)?;
    let mut out = Vec::new();
    for r in &rows {
        for x in 0..g.kappa() {
            out.push(vec![
                r.n.to_string(),
                x.to_string(),
                num(r.zrp.mean[x]),
                num(r.diffusion.mean[x]),
                num(r.zrp.variance[x]),
                num(r.diffusion.variance[x]),
                num(r.zrp.absorbed),
                num(r.diffusion.absorbed),
            ]);
        }
    }
    w.csv(
        "d0.csv",
        &["N", "site", "zrp_mean", "diffusion_mean", "zrp_variance", "diffusion_variance", "zrp_absorbed", "diffusion_absorbed"],
        &out,
    )?;
    w.json(
        "d0.json",
        &json!({
            "seed": s.seed,
            "model_hash": s.model_hash()?,
            "absorption_threshold": DiffusionOptions::with_dt(opts.dt).absorption_threshold(),
            "rows": rows,
        }),
    )?;
    let md: Vec<f64> = rows.iter().map(|r| r.mean_discrepancy).collect();
    let passed = md.windows(2).all(|p| p[1] < p[0]) && max_disc.is_none_or(|m| md.last().is_some_and(|&v| v < m));
    Ok(Verdict { passed, summary: format!("mean discrepancy {md:?}") })
}

fn random_symmetric_graph(rng: &mut ChaCha8Rng, k: usize) -> SiteGraph<f64> {
    loop {
        let mut r = DenseMatrix::zeros(k, k);
        for x in 0..k {
            for y in x + 1..k {
                if rng.random::<f64>() < 0.7 {
                    let v = rng.random_range(0.1..3.0);
                    r[(x, y)] = v;
                    r[(y, x)] = v;
                }
            }
        }
        if let Ok(g) = SiteGraph::from_matrix(r) {
            return g;
        }
    }
}

fn check_trace(rng: &mut ChaCha8Rng) -> Result<f64, CliError> {
    let mut worst = 0.0f64;
    for i in 0..20 {
        let k = 2 + i % 5;
        let g = random_symmetric_graph(rng, k);
        let l = g.generator();
        for mask in 1usize..(1 << k) {
            let a: Vec<usize> = (0..k).filter(|x| mask >> x & 1 == 1).collect();
            if a.len() < 2 {
                continue;
            }
            let u = g.harmonic_extension(&a)?;
            let sandwich = u.matmul(&l)?.matmul(&u.transpose())?;
            worst = worst.max(sandwich.max_abs_diff(&g.trace_generator(&a)?));
        }
    }
    Ok(worst)
}

fn check_capacity() -> Result<f64, CliError> {
    let mut worst = 0.0f64;
    for n in [5, 17, 30] {
        let space = ZrpModel::new(SiteGraph::<f64>::complete(2, 1.0)?, 2.0, n)?.enumerate()?;
        for m in 1..n as u32 {
            let eta = [m, n as u32 - m];
            let exact = capacity_1d_exact(&space, &eta, 0)?;
            let generic = capacity(&space, &[space.index_of(&eta)?], &[space.condensed(1)])?;
            worst = worst.max((exact - generic).abs() / generic);
        }
    }
    Ok(worst)
}

fn check_rates(rng: &mut ChaCha8Rng) -> Result<f64, CliError> {
    let mut worst = 0.0f64;
    for n in 2..6 {
        let space = ZrpModel::new(SiteGraph::<f64>::complete(3, 1.0)?, 2.0, n)?.enumerate()?;
        let nu = DiscreteMeasure64::from_unnormalized((0..space.len()).map(|_| rng.random::<f64>()).collect())?;
        let a = rate_reversible(&space, &nu)?;
        let b = rate_variational(space.generator(), &nu, VariationalOptions::default())?.value;
        worst = worst.max((a - b).abs() / a.max(1.0));
    }
    Ok(worst)
}

fn check_symmetry() -> Result<f64, CliError> {
    let space = ZrpModel::new(SiteGraph::<f64>::complete(3, 1.0)?, 2.5, 12)?.enumerate()?;
    let rho = space.stationary()?.weights().to_vec();
    let mut worst = 0.0f64;
    for i in 0..space.len() {
        let c = space.counts(i);
        let j = space.index_of(&[c[1], c[2], c[0]])?;
        worst = worst.max((rho[i] - rho[j]).abs() / rho[i]);
    }
    Ok(worst)
}

fn check_partition() -> Result<bool, CliError> {
    let target = 2.0 * gamma_alpha(2.0, GammaConvention::Series);
    let errs: Vec<f64> = [25, 50, 100]
        .iter()
        .map(|&n| Ok((ZrpModel::new(SiteGraph::<f64>::complete(2, 1.0)?, 2.0, n)?.enumerate()?.partition_function()? - target).abs()))
        .collect::<Result<_, CliError>>()?;
    Ok(errs.windows(2).all(|p| p[1] < p[0]))
}

fn check_drift() -> Result<f64, CliError> {
    let b = diffusion_drift(&SiteGraph::<f64>::complete(2, 1.0)?, 2.0, &SimplexPoint::new(vec![0.25, 0.75])?)?;
    Ok((b[0] + 16.0 / 3.0).abs().max((b[1] - 16.0 / 3.0).abs()))
}

fn check_determinism() -> Result<bool, CliError> {
    let m = ZrpModel::new(SiteGraph::<f64>::complete(3, 1.0)?, 2.0, 9)?;
    let a = simulate_zrp(&m, &[3, 3, 3], &|_| false, 100.0, 100_000, 42, true)?;
    let b = simulate_zrp(&m, &[3, 3, 3], &|_| false, 100.0, 100_000, 42, true)?;
    Ok(a.times == b.times && a.states == b.states)
}

fn selftest(s: &Scenario, w: &mut ArtifactWriter) -> Result<Verdict, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let checks: Vec<(&str, bool, String)> = vec![
        {
            let v = check_trace(&mut rng)?;
            ("trace_identity", v < 1e-10, format!("{v:e}"))
        },
        {
            let v = check_capacity()?;
            ("capacity_closed_form", v < 1e-10, format!("{v:e}"))
        },
        {
            let v = check_rates(&mut rng)?;
            ("rate_formulas_agree", v < 1e-6, format!("{v:e}"))
        },
        {
            let v = check_symmetry()?;
            ("stationary_symmetry", v < 1e-12, format!("{v:e}"))
        },
        {
            let ok = check_partition()?;
            ("partition_function_monotone", ok, ok.to_string())
        },
        {
            let v = check_drift()?;
            ("drift_example", v < 1e-12, format!("{v:e}"))
        },
        {
            let ok = check_determinism()?;
            ("seeded_determinism", ok, ok.to_string())
        },
    ];
    let rows: Vec<Vec<String>> = checks.iter().map(|(n, ok, v)| vec![n.to_string(), ok.to_string(), v.clone()]).collect();
    w.csv("selftest.csv", &["check", "passed", "value"], &rows)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Ok(Verdict {
        passed: failed.is_empty(),
        summary: if failed.is_empty() { format!("{} checks passed", checks.len()) } else { format!("failed: {}", failed.join(", ")) },
    })
}
