//! Monte Carlo engines: exact continuous-time simulation of the zero-range
//! process, Euler-Maruyama for the limiting diffusion and time-scale fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SiteGraph;
use crate::linalg::DenseMatrix;
use crate::measure::SimplexPoint;
use crate::rate::{limiting_chain, GammaConvention};
use crate::real::Real;
use crate::zrp::{jump_factor, ZrpModel};

/// Default cap on jump events per trajectory.
pub const DEFAULT_EVENT_CAP: u64 = 200_000_000;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for trajectory `trial` of the run labelled `n` under `seed`.
pub fn trial_rng(seed: u64, n: usize, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ splitmix(n as u64));
    rng.set_stream(trial);
    rng
}

/// State recorded along a path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathState {
    Configuration(Vec<u32>),
    Point(Vec<f64>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PathState>,
    pub seed: u64,
    pub model: String,
    /// The stopping rule was not met within the event cap or horizon.
    pub truncated: bool,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// CSV body `t,s0,s1,...`, keeping every `thin`-th state and the last.
    pub fn to_csv(&self, thin: usize) -> String {
        let thin = thin.max(1);
        let mut out = String::new();
        let k = match self.states.first() {
            Some(PathState::Configuration(c)) => c.len(),
            Some(PathState::Point(p)) => p.len(),
            None => 0,
        };
        out.push('t');
        for x in 0..k {
            out.push_str(&format!(",s{x}"));
        }
        out.push('\n');
        let last = self.times.len().saturating_sub(1);
        for (i, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            if i % thin != 0 && i != last {
                continue;
            }
            out.push_str(&format!("{t}"));
            match s {
                PathState::Configuration(c) => c.iter().for_each(|v| out.push_str(&format!(",{v}"))),
                PathState::Point(p) => p.iter().for_each(|v| out.push_str(&format!(",{v}"))),
            }
            out.push('\n');
        }
        out
    }
}

/// Exact jump-chain sampler for one model.
#[derive(Clone, Debug)]
pub struct ZrpSampler {
    kappa: usize,
    n: usize,
    rates: Vec<f64>,
    out: Vec<f64>,
    g: Vec<f64>,
}

impl ZrpSampler {
    pub fn new<T: Real>(model: &ZrpModel<T>) -> Self {
        let k = model.kappa();
        let rates: Vec<f64> = (0..k * k).map(|i| model.graph().rate(i / k, i % k).as_f64()).collect();
        let out = (0..k).map(|x| (0..k).map(|y| rates[x * k + y]).sum()).collect();
        let g = (0..=model.n()).map(|m| jump_factor::<T>(m, model.alpha()).as_f64()).collect();
        Self { kappa: k, n: model.n(), rates, out, g }
    }

    pub fn holding_rate(&self, eta: &[u32]) -> f64 {
        (0..self.kappa).filter(|&x| eta[x] > 0).map(|x| self.g[eta[x] as usize] * self.out[x]).sum()
    }

    /// Performs one jump in place and returns the holding time before it.
    pub fn step<R: Rng>(&self, eta: &mut [u32], rng: &mut R) -> f64 {
        let total = self.holding_rate(eta);
        let hold: f64 = Exp1.sample(rng);
        let mut u = rng.random::<f64>() * total;
        let k = self.kappa;
        let mut from = k - 1;
        for x in 0..k {
            if eta[x] == 0 {
                continue;
            }
            let w = self.g[eta[x] as usize] * self.out[x];
            if u < w {
                from = x;
                break;
            }
            u -= w;
            from = x;
        }
        let mut v = rng.random::<f64>() * self.out[from];
        let mut to = k - 1;
        for y in 0..k {
            let r = self.rates[from * k + y];
            if r <= 0.0 {
                continue;
            }
            to = y;
            if v < r {
                break;
            }
            v -= r;
        }
        eta[from] -= 1;
        eta[to] += 1;
        hold / total
    }

    fn check(&self, eta: &[u32]) -> Result<()> {
        if eta.len() != self.kappa || eta.iter().map(|&v| v as usize).sum::<usize>() != self.n {
            return Err(Error::InvalidConfiguration(format!("{eta:?} is not a configuration of {} particles on {} sites", self.n, self.kappa)));
        }
        Ok(())
    }
}

fn describe<T: Real>(model: &ZrpModel<T>) -> String {
    format!("zrp kappa={} alpha={} N={}", model.kappa(), model.alpha(), model.n())
}

/// Simulates from `eta0` until `stop` holds, the horizon `t_max` is passed
/// or `event_cap` jumps were made. With `record` false only the first and
/// last states are kept.
pub fn simulate_zrp<T: Real>(
    model: &ZrpModel<T>,
    eta0: &[u32],
    stop: &dyn Fn(&[u32]) -> bool,
    t_max: f64,
    event_cap: u64,
    seed: u64,
    record: bool,
) -> Result<Trajectory> {
    let sampler = ZrpSampler::new(model);
    sampler.check(eta0)?;
    let mut rng = trial_rng(seed, model.n(), 0);
    let mut eta = eta0.to_vec();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![PathState::Configuration(eta.clone())];
    let mut events = 0;
    let mut truncated = false;
    while !stop(&eta) {
        if events >= event_cap {
            truncated = true;
            break;
        }
        let mut next = eta.clone();
        let dt = sampler.step(&mut next, &mut rng);
        if t + dt > t_max {
            truncated = true;
            break;
        }
        eta = next;
        t += dt;
        events += 1;
        if record {
            times.push(t);
            states.push(PathState::Configuration(eta.clone()));
        }
    }
    if !record && events > 0 {
        times.push(t);
        states.push(PathState::Configuration(eta));
    }
    Ok(Trajectory { times, states, seed, model: describe(model), truncated })
}

/// Hitting time of `stop` from `eta0` for one trial, `None` if censored.
pub fn hitting_time<R: Rng>(
    sampler: &ZrpSampler,
    eta0: &[u32],
    stop: &dyn Fn(&[u32]) -> bool,
    event_cap: u64,
    rng: &mut R,
) -> Option<f64> {
    let mut eta = eta0.to_vec();
    let mut t = 0.0;
    let mut events = 0;
    while !stop(&eta) {
        if events >= event_cap {
            return None;
        }
        t += sampler.step(&mut eta, rng);
        events += 1;
    }
    Some(t)
}

/// Mean hitting time at one `N`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HittingSample {
    pub n: usize,
    pub mean: f64,
    pub std_err: f64,
    pub trials: usize,
    pub censored: usize,
}

/// Power-law fit `mean ~ C N^exponent`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingFit {
    pub samples: Vec<HittingSample>,
    pub exponent: f64,
    pub std_err: f64,
    /// 95% interval for the exponent.
    pub ci: (f64, f64),
    pub log_prefactor: f64,
}

impl ScalingFit {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("N,mean,stderr,trials\n");
        for p in &self.samples {
            s.push_str(&format!("{},{},{},{}\n", p.n, p.mean, p.std_err, p.trials));
        }
        s
    }
}

/// Weighted least squares of `log mean` on `log N` with weights from the
/// delta-method variance `(se / mean)^2`.
pub fn fit_power_law(samples: Vec<HittingSample>) -> Result<ScalingFit> {
    if samples.len() < 3 {
        return Err(Error::InvalidParameter("a scaling fit needs at least three ladder points".into()));
    }
    if let Some(s) = samples.iter().find(|s| !(s.mean > 0.0) || !(s.std_err > 0.0)) {
        return Err(Error::Simulation(format!("non-positive mean or standard error at N = {}", s.n)));
    }
    let pts: Vec<(f64, f64, f64)> =
        samples.iter().map(|s| ((s.n as f64).ln(), s.mean.ln(), (s.mean / s.std_err).powi(2))).collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let se = (1.0 / sxx).sqrt();
    Ok(ScalingFit {
        samples,
        exponent: slope,
        std_err: se,
        ci: (slope - 1.96 * se, slope + 1.96 * se),
        log_prefactor: my - slope * mx,
    })
}

fn sample_hitting<T: Real>(
    model: &ZrpModel<T>,
    eta0: &[u32],
    stop: &(dyn Fn(&[u32]) -> bool + Sync),
    trials: usize,
    seed: u64,
) -> Result<HittingSample> {
    if trials < 2 {
        return Err(Error::InvalidParameter("at least two trials are needed for a standard error".into()));
    }
    let sampler = ZrpSampler::new(model);
    sampler.check(eta0)?;
    let times: Vec<Option<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|tr| {
            let mut rng = trial_rng(seed, model.n(), tr);
            hitting_time(&sampler, eta0, stop, DEFAULT_EVENT_CAP, &mut rng)
        })
        .collect();
    let ok: Vec<f64> = times.iter().flatten().copied().collect();
    let censored = trials - ok.len();
    if ok.len() < 2 || censored * 10 > trials {
        return Err(Error::Simulation(format!("{censored} of {trials} trials censored at N = {}", model.n())));
    }
    let m = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / m;
    let var = ok.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(HittingSample { n: model.n(), mean, std_err: (var / m).sqrt(), trials: ok.len(), censored })
}

/// Most balanced configuration, surplus particles on the lowest sites.
pub fn balanced_configuration(n: usize, kappa: usize) -> Vec<u32> {
    (0..kappa).map(|x| (n / kappa + usize::from(x < n % kappa)) as u32).collect()
}

/// Radius of the condensation target `{max_x eta_x >= N - ell}` used by
/// [`condensation_time_scaling`].
pub fn condensation_radius(n: usize) -> usize {
    n / 10
}

/// Mean time for the most balanced configuration to put all but
/// `condensation_radius(N)` particles on one site.
pub fn condensation_time_scaling<T: Real>(
    graph: &SiteGraph<T>,
    alpha: T,
    ladder: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ScalingFit> {
    let samples = ladder
        .iter()
        .map(|&n| {
            let model = ZrpModel::new(graph.clone(), alpha, n)?;
            let thr = (n - condensation_radius(n)) as u32;
            let stop = move |eta: &[u32]| eta.iter().any(|&v| v >= thr);
            sample_hitting(&model, &balanced_configuration(n, graph.kappa()), &stop, trials, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    fit_power_law(samples)
}

/// Transition fit together with the reduced-chain comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionFit {
    pub fit: ScalingFit,
    pub from: usize,
    /// `N^(1+alpha) / mean` at each ladder point.
    pub rescaled_rates: Vec<f64>,
    /// `sum_{y != x} R(x, y)`.
    pub target_rate: f64,
}

/// Mean time for the configuration condensed at `from` to reach a well of
/// another site (default well radius).
pub fn transition_time_scaling<T: Real>(
    graph: &SiteGraph<T>,
    alpha: T,
    from: usize,
    ladder: &[usize],
    trials: usize,
    seed: u64,
) -> Result<TransitionFit> {
    let k = graph.kappa();
    if from >= k {
        return Err(Error::InvalidSiteSet(format!("site {from} out of range")));
    }
    let samples = ladder
        .iter()
        .map(|&n| {
            let model = ZrpModel::new(graph.clone(), alpha, n)?;
            let ell = model.default_well_radius();
            if 2 * ell >= n {
                return Err(Error::InvalidParameter(format!("wells overlap at N = {n}")));
            }
            let thr = (n - ell) as u32;
            let stop = move |eta: &[u32]| eta.iter().enumerate().any(|(y, &v)| y != from && v >= thr);
            let mut eta0 = vec![0; k];
            eta0[from] = n as u32;
            sample_hitting(&model, &eta0, &stop, trials, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let lc = limiting_chain(graph, alpha, GammaConvention::Series)?;
    let target_rate = (0..k).filter(|&y| y != from).map(|y| lc.chain.rate(from, y).as_f64()).sum();
    let a = alpha.as_f64();
    let rescaled_rates = samples.iter().map(|s| (s.n as f64).powf(1.0 + a) / s.mean).collect();
    Ok(TransitionFit { fit: fit_power_law(samples)?, from, rescaled_rates, target_rate })
}

/// Rates of the trace process on each active set, indexed by bit mask, as
/// full `kappa x kappa` matrices vanishing outside the set.
#[derive(Clone, Debug)]
struct ActiveRates {
    kappa: usize,
    rates: Vec<Option<DenseMatrix<f64>>>,
    /// Harmonic extension onto each set, as `kappa x kappa`.
    projection: Vec<Option<DenseMatrix<f64>>>,
}

impl ActiveRates {
    fn new<T: Real>(graph: &SiteGraph<T>) -> Result<Self> {
        let k = graph.kappa();
        if k > 12 {
            return Err(Error::InvalidParameter("diffusion engine supports at most 12 sites".into()));
        }
        let mut rates = vec![None; 1 << k];
        let mut projection = vec![None; 1 << k];
        for mask in 1usize..(1 << k) {
            let a: Vec<usize> = (0..k).filter(|x| mask >> x & 1 == 1).collect();
            let u = graph.harmonic_extension(&a)?;
            let mut p = DenseMatrix::zeros(k, k);
            for (i, &x) in a.iter().enumerate() {
                for z in 0..k {
                    p[(x, z)] = u[(i, z)].as_f64();
                }
            }
            projection[mask] = Some(p);
            if a.len() < 2 {
                continue;
            }
            let tr = if a.len() == k { graph.clone() } else { graph.trace_rates(&a)? };
            let mut r = DenseMatrix::zeros(k, k);
            for (i, &x) in a.iter().enumerate() {
                for (j, &y) in a.iter().enumerate() {
                    if i != j {
                        r[(x, y)] = tr.rate(i, j).as_f64();
                    }
                }
            }
            rates[mask] = Some(r);
        }
        Ok(Self { kappa: k, rates, projection })
    }
}

fn mask_of(xi: &[f64]) -> usize {
    xi.iter().enumerate().filter(|(_, &v)| v > 0.0).fold(0, |m, (x, _)| m | 1 << x)
}

/// Drift of the limiting diffusion at `xi` on the face of its positive
/// coordinates.
pub fn diffusion_drift<T: Real>(graph: &SiteGraph<T>, alpha: T, xi: &SimplexPoint<T>) -> Result<Vec<T>> {
    let k = graph.kappa();
    if xi.dim() != k {
        return Err(Error::DimensionMismatch { expected: k, got: xi.dim() });
    }
    let act = ActiveRates::new(graph)?;
    let x: Vec<f64> = xi.coords().iter().map(|v| v.as_f64()).collect();
    Ok(drift(&act, alpha.as_f64(), &x, mask_of(&x)).into_iter().map(T::c).collect())
}

fn drift(act: &ActiveRates, alpha: f64, xi: &[f64], mask: usize) -> Vec<f64> {
    let k = act.kappa;
    let mut b = vec![0.0; k];
    let Some(r) = &act.rates[mask] else {
        return b;
    };
    for x in 0..k {
        if mask >> x & 1 == 0 {
            continue;
        }
        let inv = alpha / xi[x];
        for y in 0..k {
            let v = r[(x, y)];
            if v > 0.0 {
                b[y] += inv * v;
                b[x] -= inv * v;
            }
        }
    }
    b
}

/// Options of the Euler-Maruyama engine.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DiffusionOptions {
    pub dt: f64,
    /// Maximal number of successive halvings of a rejected step.
    pub max_halvings: u32,
    /// Keep every state (otherwise first and last only).
    pub record: bool,
}

impl DiffusionOptions {
    pub fn with_dt(dt: f64) -> Self {
        Self { dt, max_halvings: 30, record: false }
    }

    /// Coordinates at or below this are absorbed.
    pub fn absorption_threshold(&self) -> f64 {
        self.dt.powf(0.6)
    }
}

fn absorb(act: &ActiveRates, xi: &mut [f64], mask: &mut usize, thr: f64) {
    let k = act.kappa;
    loop {
        if mask.count_ones() < 2 {
            for (x, v) in xi.iter_mut().enumerate() {
                *v = if *mask >> x & 1 == 1 { 1.0 } else { 0.0 };
            }
            return;
        }
        let Some(x) = (0..k).filter(|&x| *mask >> x & 1 == 1 && xi[x] <= thr).min_by(|&a, &b| xi[a].total_cmp(&xi[b])) else {
            return;
        };
        let rest = *mask & !(1 << x);
        let p = act.projection[rest].as_ref().expect("every non-empty set has a projection");
        let old = xi.to_vec();
        for y in 0..k {
            xi[y] = if rest >> y & 1 == 1 { (0..k).map(|z| p[(y, z)] * old[z]).sum() } else { 0.0 };
        }
        *mask = rest;
    }
}

fn diffusion_path<R: Rng>(
    act: &ActiveRates,
    alpha: f64,
    start: &[f64],
    t_end: f64,
    opts: &DiffusionOptions,
    rng: &mut R,
    mut on_step: impl FnMut(f64, &[f64]),
) -> bool {
    let k = act.kappa;
    let thr = opts.absorption_threshold();
    let mut xi = start.to_vec();
    let mut mask = mask_of(&xi);
    absorb(act, &mut xi, &mut mask, thr);
    let mut t = 0.0;
    let mut clamped = false;
    let mut trial = vec![0.0; k];
    while t < t_end {
        if mask.count_ones() < 2 {
            break;
        }
        let r = act.rates[mask].as_ref().expect("active set with two sites has rates");
        let b = drift(act, alpha, &xi, mask);
        let mut h = opts.dt.min(t_end - t);
        let mut halvings = 0;
        loop {
            trial.copy_from_slice(&xi);
            let sq = h.sqrt();
            for x in 0..k {
                trial[x] += b[x] * h;
            }
            for x in 0..k {
                for y in x + 1..k {
                    let s = r[(x, y)] + r[(y, x)];
                    if s > 0.0 {
                        let z: f64 = StandardNormal.sample(rng);
                        let d = (s).sqrt() * sq * z;
                        trial[y] += d;
                        trial[x] -= d;
                    }
                }
            }
            if trial.iter().all(|&v| v >= -sq) || halvings >= opts.max_halvings {
                if halvings >= opts.max_halvings {
                    clamped = true;
                }
                break;
            }
            h *= 0.5;
            halvings += 1;
        }
        for x in 0..k {
            if mask >> x & 1 == 0 {
                trial[x] = 0.0;
            }
        }
        xi.copy_from_slice(&trial);
        absorb(act, &mut xi, &mut mask, thr);
        t += h;
        on_step(t, &xi);
    }
    clamped
}

/// One path of the limiting diffusion from `xi0` up to time `t_end`.
pub fn simulate_diffusion<T: Real>(
    graph: &SiteGraph<T>,
    alpha: T,
    xi0: &SimplexPoint<T>,
    t_end: f64,
    opts: DiffusionOptions,
    seed: u64,
) -> Result<Trajectory> {
    check_diffusion(graph, xi0, t_end, &opts)?;
    let act = ActiveRates::new(graph)?;
    let start: Vec<f64> = xi0.coords().iter().map(|v| v.as_f64()).collect();
    let mut rng = trial_rng(seed, 0, 0);
    let mut times = vec![0.0];
    let mut states = vec![PathState::Point(start.clone())];
    let mut last = (0.0, start.clone());
    let clamped = diffusion_path(&act, alpha.as_f64(), &start, t_end, &opts, &mut rng, |t, xi| {
        if opts.record {
            times.push(t);
            states.push(PathState::Point(xi.to_vec()));
        }
        last = (t, xi.to_vec());
    });
    if !opts.record && last.0 > 0.0 {
        times.push(last.0);
        states.push(PathState::Point(last.1));
    }
    Ok(Trajectory {
        times,
        states,
        seed,
        model: format!("diffusion kappa={} alpha={} dt={}", graph.kappa(), alpha, opts.dt),
        truncated: clamped,
    })
}

fn check_diffusion<T: Real>(graph: &SiteGraph<T>, xi0: &SimplexPoint<T>, t_end: f64, opts: &DiffusionOptions) -> Result<()> {
    graph.check_uniform()?;
    if xi0.dim() != graph.kappa() {
        return Err(Error::DimensionMismatch { expected: graph.kappa(), got: xi0.dim() });
    }
    if !(t_end > 0.0) || !(opts.dt > 0.0) || opts.dt > 1e-4 * t_end {
        return Err(Error::InvalidParameter(format!("time step {} must be positive and at most 1e-4 times the horizon {t_end}", opts.dt)));
    }
    Ok(())
}

/// Marginal statistics of an ensemble at a fixed time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Fraction of paths with some coordinate at or below the absorption level.
    pub absorbed: f64,
    pub paths: usize,
}

fn ensemble_stats(points: &[Vec<f64>], eps: f64) -> EnsembleStats {
    let k = points[0].len();
    let m = points.len() as f64;
    let mean: Vec<f64> = (0..k).map(|x| points.iter().map(|p| p[x]).sum::<f64>() / m).collect();
    let variance = (0..k).map(|x| points.iter().map(|p| (p[x] - mean[x]).powi(2)).sum::<f64>() / (m - 1.0)).collect();
    let absorbed = points.iter().filter(|p| p.iter().any(|&v| v <= eps)).count() as f64 / m;
    EnsembleStats { mean, variance, absorbed, paths: points.len() }
}

/// Terminal points at `t_end` of `paths` independent diffusion paths.
pub fn diffusion_ensemble<T: Real>(
    graph: &SiteGraph<T>,
    alpha: T,
    xi0: &SimplexPoint<T>,
    t_end: f64,
    opts: DiffusionOptions,
    paths: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_diffusion(graph, xi0, t_end, &opts)?;
    let act = ActiveRates::new(graph)?;
    let start: Vec<f64> = xi0.coords().iter().map(|v| v.as_f64()).collect();
    let a = alpha.as_f64();
    Ok((0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = trial_rng(seed, usize::MAX, p);
            let mut last = start.clone();
            diffusion_path(&act, a, &start, t_end, &opts, &mut rng, |_, xi| last.copy_from_slice(xi));
            last
        })
        .collect())
}

/// Rescaled zero-range positions `eta(N^2 t) / N` of `paths` paths.
pub fn zrp_ensemble<T: Real>(model: &ZrpModel<T>, eta0: &[u32], t: f64, paths: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sampler = ZrpSampler::new(model);
    sampler.check(eta0)?;
    let n = model.n() as f64;
    let horizon = t * n * n;
    Ok((0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = trial_rng(seed, model.n(), p);
            let mut eta = eta0.to_vec();
            let mut s = 0.0;
            loop {
                let mut next = eta.clone();
                let dt = sampler.step(&mut next, &mut rng);
                if s + dt > horizon {
                    break;
                }
                s += dt;
                eta = next;
            }
            eta.iter().map(|&v| v as f64 / n).collect()
        })
        .collect())
}

/// Nearest configuration to `N xi` (largest-remainder rounding).
pub fn nearest_configuration<T: Real>(n: usize, xi: &SimplexPoint<T>) -> Vec<u32> {
    let raw: Vec<f64> = xi.coords().iter().map(|v| v.as_f64() * n as f64).collect();
    let mut eta: Vec<u32> = raw.iter().map(|v| v.floor() as u32).collect();
    let mut left = n - eta.iter().map(|&v| v as usize).sum::<usize>();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for x in order {
        if left == 0 {
            break;
        }
        eta[x] += 1;
        left -= 1;
    }
    eta
}

/// One ladder point of the diffusive comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct D0Row {
    pub n: usize,
    pub zrp: EnsembleStats,
    pub diffusion: EnsembleStats,
    /// `max_x |E xi_N(t)_x - E xi(t)_x|`.
    pub mean_discrepancy: f64,
    pub variance_discrepancy: f64,
    pub absorbed_discrepancy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct D0Options {
    pub horizon: f64,
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Compares marginals at time `horizon` of the rescaled zero-range process
/// with those of the limiting diffusion from the same start.
pub fn d0_diagnostic<T: Real>(
    graph: &SiteGraph<T>,
    alpha: T,
    xi0: &SimplexPoint<T>,
    ladder: &[usize],
    opts: &D0Options,
) -> Result<Vec<D0Row>> {
    let dopts = DiffusionOptions::with_dt(opts.dt);
    let diff = diffusion_ensemble(graph, alpha, xi0, opts.horizon, dopts, opts.paths, opts.seed)?;
    let dstats = ensemble_stats(&diff, 0.0);
    ladder
        .iter()
        .map(|&n| {
            let model = ZrpModel::new(graph.clone(), alpha, n)?;
            let pts = zrp_ensemble(&model, &nearest_configuration(n, xi0), opts.horizon, opts.paths, opts.seed)?;
            // a site holding at most a well radius of particles counts as emptied
            let z = ensemble_stats(&pts, model.default_well_radius() as f64 / n as f64);
            let md = z.mean.iter().zip(&dstats.mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let vd = z.variance.iter().zip(&dstats.variance).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let ad = (z.absorbed - dstats.absorbed).abs();
            Ok(D0Row { n, zrp: z, diffusion: dstats.clone(), mean_discrepancy: md, variance_discrepancy: vd, absorbed_discrepancy: ad })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(k: usize) -> SiteGraph<f64> {
        SiteGraph::complete(k, 1.0).unwrap()
    }

    #[test]
    fn seeded_runs_are_identical() {
        let m = ZrpModel::new(graph(3), 2.0, 12).unwrap();
        let stop = |_: &[u32]| false;
        let a = simulate_zrp(&m, &[4, 4, 4], &stop, 50.0, 10_000, 7, true).unwrap();
        let b = simulate_zrp(&m, &[4, 4, 4], &stop, 50.0, 10_000, 7, true).unwrap();
        assert_eq!(a.times, b.times);
        assert_eq!(a.states, b.states);
        assert!(a.times.windows(2).all(|w| w[1] > w[0]));
        for s in &a.states {
            let PathState::Configuration(c) = s else { panic!() };
            assert_eq!(c.iter().sum::<u32>(), 12);
        }
    }

    #[test]
    fn drift_examples() {
        let g = graph(2);
        let b = diffusion_drift(&g, 2.0, &SimplexPoint::new(vec![0.25, 0.75]).unwrap()).unwrap();
        assert!((b[0] + 16.0 / 3.0).abs() < 1e-12 && (b[1] - 16.0 / 3.0).abs() < 1e-12);
        let b = diffusion_drift(&g, 2.0, &SimplexPoint::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert!(b.iter().all(|v: &f64| v.abs() < 1e-12));
    }

    #[test]
    fn face_switch_uses_trace_rates() {
        let act = ActiveRates::new(&graph(3)).unwrap();
        let r = act.rates[0b011].as_ref().unwrap();
        assert!((r[(0, 1)] - 1.5).abs() < 1e-12 && r[(0, 2)] == 0.0);
    }

    #[test]
    fn absorption_is_permanent_and_mass_preserving() {
        let g = graph(3);
        let mut opts = DiffusionOptions::with_dt(1e-5);
        opts.record = true;
        for seed in 0..20 {
            let tr = simulate_diffusion(&g, 2.0, &SimplexPoint::new(vec![0.2, 0.3, 0.5]).unwrap(), 0.2, opts, seed).unwrap();
            let mut dead = 0usize;
            for s in &tr.states {
                let PathState::Point(p) = s else { panic!() };
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let now = mask_of(p);
                assert_eq!(now & dead, 0, "absorbed coordinate revived");
                dead |= !now & 0b111;
            }
        }
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let s = [10usize, 20, 40]
            .iter()
            .map(|&n| HittingSample { n, mean: 3.0 * (n as f64).powi(2), std_err: 0.01 * (n as f64).powi(2), trials: 100, censored: 0 })
            .collect();
        let f = fit_power_law(s).unwrap();
        assert!((f.exponent - 2.0).abs() < 1e-12 && f.ci.0 < 2.0 && f.ci.1 > 2.0);
    }

    #[test]
    fn nearest_configuration_conserves_particles() {
        let xi = SimplexPoint::new(vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert_eq!(nearest_configuration(20, &xi), vec![7, 7, 6]);
    }
}
