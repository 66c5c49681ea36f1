//! Potential theory of the zero-range process on its configuration space:
//! capacities, resolvent equations, mean jump rates between wells and
//! hitting times.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{backward_error, solve_sparse, DenseMatrix};
use crate::measure::DiscreteMeasure;
use crate::rate::{limiting_chain, GammaConvention};
use crate::real::{pairwise_sum, Real};
use crate::zrp::{ConfigSpace, Wells, ZrpModel};

fn solve_tol<T: Real>() -> T {
    T::tol(1e-10)
}

/// Dirichlet form of the process with respect to its stationary measure.
pub fn dirichlet_form<T: Real>(space: &ConfigSpace<T>, f: &[T], h: &[T]) -> Result<T> {
    let rho = space.stationary()?.weights();
    let q = space.generator();
    let rows: Vec<T> = (0..space.len())
        .into_par_iter()
        .map(|i| {
            let mut s = T::zero();
            for (j, v) in q.row(i) {
                if j != i {
                    s += v * (f[j] - f[i]) * (h[j] - h[i]);
                }
            }
            rho[i] * s
        })
        .collect();
    Ok(pairwise_sum(&rows) / T::c(2.0))
}

fn sorted_disjoint(a: &[usize], b: &[usize], len: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    a.dedup();
    b.sort_unstable();
    b.dedup();
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidSiteSet("both sets must be non-empty".into()));
    }
    if a.iter().chain(&b).any(|&i| i >= len) {
        return Err(Error::InvalidSiteSet("state index out of range".into()));
    }
    if a.iter().any(|i| b.binary_search(i).is_ok()) {
        return Err(Error::InvalidSiteSet("sets must be disjoint".into()));
    }
    Ok((a, b))
}

/// Equilibrium potential on configurations: 1 on `a`, 0 on `b`, harmonic
/// elsewhere.
pub fn equilibrium_potential<T: Real>(space: &ConfigSpace<T>, a: &[usize], b: &[usize]) -> Result<Vec<T>> {
    let n = space.len();
    let (a, b) = sorted_disjoint(a, b, n)?;
    let mut mark = vec![0u8; n];
    for &i in &a {
        mark[i] = 1;
    }
    for &i in &b {
        mark[i] = 2;
    }
    let free: Vec<usize> = (0..n).filter(|&i| mark[i] == 0).collect();
    let mut f = vec![T::zero(); n];
    for &i in &a {
        f[i] = T::one();
    }
    if free.is_empty() {
        return Ok(f);
    }
    let q = space.generator();
    let m = q.principal(&free).shifted(T::zero(), -T::one());
    let rhs: Vec<T> = free
        .iter()
        .map(|&i| q.row(i).filter(|&(j, _)| mark[j] == 1).map(|(_, v)| v).sum())
        .collect();
    let sol = solve_sparse(&m, &rhs, solve_tol())?;
    for (k, &i) in free.iter().enumerate() {
        f[i] = sol[k];
    }
    Ok(f)
}

/// Capacity between disjoint sets of configurations.
pub fn capacity<T: Real>(space: &ConfigSpace<T>, a: &[usize], b: &[usize]) -> Result<T> {
    let f = equilibrium_potential(space, a, b)?;
    dirichlet_form(space, &f, &f)
}

/// Closed-form capacity for two sites between `eta` and the configuration
/// with every particle on the site other than `x`.
pub fn capacity_1d_exact<T: Real>(space: &ConfigSpace<T>, eta: &[u32], x: usize) -> Result<T> {
    let model = space.model();
    if model.kappa() != 2 {
        return Err(Error::InvalidParameter("closed-form capacity needs exactly two sites".into()));
    }
    if x > 1 {
        return Err(Error::InvalidSiteSet(format!("site {x} out of range")));
    }
    space.index_of(eta)?;
    let n = model.n();
    let m = eta[x] as usize;
    if m == 0 {
        return Err(Error::InvalidConfiguration("site is already empty".into()));
    }
    let alpha = model.alpha();
    let r = model.graph().rate(0, 1);
    let log_z = space.log_partition_function()?;
    let log_na = alpha * T::of(n).ln();
    // sum_{i=0}^{m-1} a(i) a(N-1-i), scaled by a(N-1) to stay in range
    let top = crate::zrp::log_stickiness(n - 1, alpha);
    let terms: Vec<T> = (0..m)
        .map(|i| {
            (crate::zrp::log_stickiness(i, alpha) + crate::zrp::log_stickiness(n - 1 - i, alpha) - top).exp()
        })
        .collect();
    let log_resist = log_z - log_na - r.ln() + top + pairwise_sum(&terms).ln();
    Ok((-log_resist).exp())
}

/// Mean hitting times of `target` from every configuration.
pub fn hitting_time_stats<T: Real>(space: &ConfigSpace<T>, target: &[usize]) -> Result<Vec<T>> {
    let n = space.len();
    let mut in_target = vec![false; n];
    for &i in target {
        if i >= n {
            return Err(Error::InvalidSiteSet("state index out of range".into()));
        }
        in_target[i] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !in_target[i]).collect();
    if free.len() == n {
        return Err(Error::InvalidSiteSet("empty target".into()));
    }
    let m = space.generator().principal(&free).shifted(T::zero(), -T::one());
    let sol = solve_sparse(&m, &vec![T::one(); free.len()], solve_tol())?;
    let mut t = vec![T::zero(); n];
    for (k, &i) in free.iter().enumerate() {
        t[i] = sol[k];
    }
    Ok(t)
}

/// Mean hitting time from `start` through the capacity representation
/// `E[tau_B] = sum rho h / Cap`, valid for reversible dynamics.
pub fn hitting_time_via_capacity<T: Real>(space: &ConfigSpace<T>, start: usize, target: &[usize]) -> Result<T> {
    space.model().graph().check_reversible()?;
    let h = equilibrium_potential(space, &[start], target)?;
    let cap = dirichlet_form(space, &h, &h)?;
    Ok(space.stationary()?.expect(&h) / cap)
}

/// One rung of a resolvent ladder.
#[derive(Clone, Debug)]
pub struct ResolventRow<T> {
    pub n: usize,
    pub lambda: T,
    /// Oscillation `max - min` of the solution over each well.
    pub oscillation: Vec<T>,
    /// `max_x sup_{E^x} |F_N - f(x)|`.
    pub deviation: T,
    /// Stationary averages of the solution over each well.
    pub well_averages: Vec<T>,
    pub backward_error: T,
}

#[derive(Clone, Debug)]
pub struct ResolventReport<T> {
    /// Solution of the reduced resolvent equation on sites.
    pub reduced: Vec<T>,
    pub rows: Vec<ResolventRow<T>>,
}

impl<T: Real> ResolventReport<T> {
    pub fn max_oscillation(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.oscillation.iter().copied().fold(T::zero(), T::max)).collect()
    }
}

/// Solves `(lambda - N^(1+alpha) L_N) H = k`.
pub fn solve_resolvent<T: Real>(space: &ConfigSpace<T>, lambda: T, k: &[T]) -> Result<(Vec<T>, T)> {
    if !(lambda > T::zero()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let m = space.generator().shifted(lambda, -space.model().metastable_scale());
    let h = solve_sparse(&m, k, solve_tol())?;
    let be = backward_error(&m, &h, k);
    Ok((h, be))
}

/// Solves the accelerated resolvent equation along a ladder of `N` with
/// right-hand side `sum_x g(x) 1_{E^x}` and compares with the reduced chain.
pub fn resolvent_check<T: Real>(
    model: &ZrpModel<T>,
    ladder: &[usize],
    g: &[T],
    lambda: T,
) -> Result<ResolventReport<T>> {
    let k = model.kappa();
    if g.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: g.len() });
    }
    let lc = limiting_chain(model.graph(), model.alpha(), GammaConvention::Series)?;
    let mut a = lc.chain.generator();
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = -a[(i, j)];
        }
        a[(i, i)] += lambda;
    }
    let reduced = a.solve(g)?;
    let rows = ladder
        .iter()
        .map(|&n| {
            let space = model.with_n(n)?.enumerate()?;
            let wells = space.wells()?;
            let rhs: Vec<T> = (0..space.len()).map(|i| wells.well_of(i).map_or(T::zero(), |x| g[x])).collect();
            let (f, be) = solve_resolvent(&space, lambda, &rhs)?;
            let rho = space.stationary()?;
            let mut osc = Vec::with_capacity(k);
            let mut avg = Vec::with_capacity(k);
            let mut dev = T::zero();
            for x in 0..k {
                let mem = wells.members(x);
                let (lo, hi) = mem.iter().fold((T::infinity(), T::neg_infinity()), |(l, h), &i| (l.min(f[i]), h.max(f[i])));
                osc.push(hi - lo);
                let mass = rho.mass_of(mem);
                let s: T = mem.iter().map(|&i| rho.weights()[i] * f[i]).sum();
                avg.push(s / mass);
                dev = dev.max((hi - reduced[x]).abs()).max((lo - reduced[x]).abs());
            }
            Ok(ResolventRow { n, lambda, oscillation: osc, deviation: dev, well_averages: avg, backward_error: be })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResolventReport { reduced, rows })
}

/// Mean jump rates between wells with their accelerated values.
#[derive(Clone, Debug)]
pub struct JumpRates<T> {
    pub n: usize,
    /// `r_N(x, y)`: stationary average over `E^x` of the rate of leaving and
    /// reaching `E^y` before any other well.
    pub rates: DenseMatrix<T>,
    /// `N^(1+alpha) r_N(x, y)`.
    pub accelerated: DenseMatrix<T>,
    /// Reduced chain rates `R(x, y)`.
    pub target: DenseMatrix<T>,
    /// Exit rate of each well computed in a single solve, for comparison
    /// with the row sums of `rates`.
    pub exit_rates: Vec<T>,
}

fn escape_flux<T: Real>(space: &ConfigSpace<T>, from: &[usize], p: &[T]) -> Result<T> {
    let rho = space.stationary()?.weights();
    let q = space.generator();
    let mass: T = from.iter().map(|&i| rho[i]).sum();
    let flux: Vec<T> = from
        .iter()
        .map(|&i| rho[i] * q.row(i).filter(|&(j, _)| j != i).map(|(j, v)| v * p[j]).sum::<T>())
        .collect();
    Ok(pairwise_sum(&flux) / mass)
}

pub fn mean_jump_rates<T: Real>(space: &ConfigSpace<T>, wells: &Wells) -> Result<JumpRates<T>> {
    let model = space.model();
    let k = model.kappa();
    let lc = limiting_chain(model.graph(), model.alpha(), GammaConvention::Series)?;
    let potentials: Vec<Vec<T>> = (0..k)
        .map(|y| equilibrium_potential(space, wells.members(y), &wells.others(y)))
        .collect::<Result<_>>()?;
    let mut rates = DenseMatrix::zeros(k, k);
    let mut accelerated = DenseMatrix::zeros(k, k);
    let mut target = DenseMatrix::zeros(k, k);
    let scale = model.metastable_scale();
    let mut exit_rates = Vec::with_capacity(k);
    for x in 0..k {
        for y in 0..k {
            if x == y {
                continue;
            }
            let r = escape_flux(space, wells.members(x), &potentials[y])?;
            rates[(x, y)] = r;
            accelerated[(x, y)] = r * scale;
            target[(x, y)] = lc.chain.rate(x, y);
        }
        let q = equilibrium_potential(space, &wells.others(x), wells.members(x))?;
        exit_rates.push(escape_flux(space, wells.members(x), &q)?);
    }
    Ok(JumpRates { n: space.n(), rates, accelerated, target, exit_rates })
}

/// Ratio `Cap(E^x, other wells) / Cap(condensed at x, eta)` maximised over up
/// to `samples` configurations `eta` spread through `E^x`. Small values mean
/// each well is visited as a whole before the process leaves it.
pub fn well_capacity_ratio<T: Real>(space: &ConfigSpace<T>, wells: &Wells, samples: usize) -> Result<Vec<T>> {
    let k = space.kappa();
    (0..k)
        .map(|x| {
            let mem = wells.members(x);
            let cap_out = capacity(space, mem, &wells.others(x))?;
            let c = space.condensed(x);
            let pool: Vec<usize> = mem.iter().copied().filter(|&i| i != c).collect();
            if pool.is_empty() {
                return Ok(T::zero());
            }
            let step = (pool.len() / samples.max(1)).max(1);
            let mut worst = T::zero();
            for &eta in pool.iter().step_by(step).take(samples.max(1)) {
                let cap_in = capacity(space, &[c], &[eta])?;
                worst = worst.max(cap_out / cap_in);
            }
            Ok(worst)
        })
        .collect()
}

/// One point of a sequence checked against the metastable compactness
/// condition: bounded accelerated rate should force the mass outside the
/// wells to vanish.
#[derive(Clone, Debug)]
pub struct CompactnessRow<T> {
    pub n: usize,
    pub accelerated_rate: T,
    pub valley_mass: T,
}

pub fn compactness_diagnostic<T: Real>(
    seq: &[(&ConfigSpace<T>, &DiscreteMeasure<T>)],
    rate: impl Fn(&ConfigSpace<T>, &DiscreteMeasure<T>) -> Result<T>,
) -> Result<Vec<CompactnessRow<T>>> {
    seq.iter()
        .map(|(space, nu)| {
            let wells = space.wells()?;
            Ok(CompactnessRow {
                n: space.n(),
                accelerated_rate: rate(space, nu)? * space.model().metastable_scale(),
                valley_mass: nu.mass_of(wells.valley()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SiteGraph;

    fn space(kappa: usize, n: usize) -> ConfigSpace<f64> {
        ZrpModel::new(SiteGraph::complete(kappa, 1.0).unwrap(), 2.0, n).unwrap().enumerate().unwrap()
    }

    #[test]
    fn closed_form_capacity_matches_solver() {
        let s = space(2, 30);
        for m in [1u32, 5, 17, 30] {
            let eta = [m, 30 - m];
            let exact = capacity_1d_exact(&s, &eta, 0).unwrap();
            let i = s.index_of(&eta).unwrap();
            let num = capacity(&s, &[i], &[s.condensed(1)]).unwrap();
            assert!((exact - num).abs() < 1e-10 * num, "m={m}: {exact} vs {num}");
        }
    }

    #[test]
    fn hitting_time_representations_agree() {
        let s = space(3, 10);
        let target = [s.condensed(2)];
        let t = hitting_time_stats(&s, &target).unwrap();
        let start = s.most_balanced();
        let via = hitting_time_via_capacity(&s, start, &target).unwrap();
        assert!((t[start] - via).abs() < 1e-9 * via);
    }

    #[test]
    fn exit_rate_is_sum_of_jump_rates() {
        let s = space(3, 20);
        let w = s.wells().unwrap();
        let j = mean_jump_rates(&s, &w).unwrap();
        for x in 0..3 {
            let row: f64 = (0..3).filter(|&y| y != x).map(|y| j.rates[(x, y)]).sum();
            assert!((row - j.exit_rates[x]).abs() < 1e-10 * row);
        }
    }

    #[test]
    fn resolvent_respects_maximum_principle() {
        let m = ZrpModel::new(SiteGraph::complete(2, 1.0).unwrap(), 2.0, 20).unwrap();
        let rep = resolvent_check(&m, &[20], &[1.0, 0.0], 1.0).unwrap();
        let s = m.enumerate().unwrap();
        let w = s.wells().unwrap();
        let rhs: Vec<f64> = (0..s.len()).map(|i| if w.well_of(i) == Some(0) { 1.0 } else { 0.0 }).collect();
        let (f, _) = solve_resolvent(&s, 1.0, &rhs).unwrap();
        assert!(f.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        assert!(rep.rows[0].backward_error < 1e-10);
    }
}
