//! The condensing zero-range process on a finite site graph: configuration
//! space enumeration, generator, stationary measure and metastable wells.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::SiteGraph;
use crate::linalg::CsrMatrix;
use crate::measure::{DiscreteMeasure, SimplexMeasure, SimplexPoint};
use crate::real::{log_sum_exp, Real};

/// Default cap on the number of enumerated configurations.
pub const DEFAULT_STATE_CAP: u128 = 50_000_000;
/// Environment variable overriding [`DEFAULT_STATE_CAP`].
pub const STATE_CAP_ENV: &str = "ZRPLAB_CAP_STATES";

pub fn default_state_cap() -> u128 {
    std::env::var(STATE_CAP_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_STATE_CAP)
}

/// `log a(n)` with `a(0) = 1`, `a(n) = n^alpha`.
pub fn log_stickiness<T: Real>(n: usize, alpha: T) -> T {
    if n == 0 {
        T::zero()
    } else {
        alpha * T::of(n).ln()
    }
}

pub fn stickiness<T: Real>(n: usize, alpha: T) -> T {
    log_stickiness(n, alpha).exp()
}

/// Jump factor `g(n) = a(n) / a(n-1)`, with `g(0) = 1` by convention.
pub fn jump_factor<T: Real>(n: usize, alpha: T) -> T {
    if n <= 1 {
        T::one()
    } else {
        (T::of(n) / T::of(n - 1)).powf(alpha)
    }
}

pub fn binomial(n: u128, k: u128) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.checked_mul(n - i)? / (i + 1);
    }
    Some(r)
}

/// Number of configurations of `n` particles on `kappa` sites.
pub fn state_count(n: usize, kappa: usize) -> Option<u128> {
    binomial((n + kappa - 1) as u128, (kappa - 1) as u128)
}

/// Zero-range process with stickiness exponent `alpha > 1` and `n` particles.
#[derive(Clone, Debug)]
pub struct ZrpModel<T> {
    graph: SiteGraph<T>,
    alpha: T,
    n: usize,
}

impl<T: Real> ZrpModel<T> {
    pub fn new(graph: SiteGraph<T>, alpha: T, n: usize) -> Result<Self> {
        if !(alpha > T::one()) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must exceed 1, got {alpha}")));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("need at least one particle".into()));
        }
        Ok(Self { graph, alpha, n })
    }

    pub fn graph(&self) -> &SiteGraph<T> {
        &self.graph
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kappa(&self) -> usize {
        self.graph.kappa()
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.graph.clone(), self.alpha, n)
    }

    /// Metastable time scale `N^(1+alpha)`.
    pub fn metastable_scale(&self) -> T {
        T::of(self.n).powf(T::one() + self.alpha)
    }

    pub fn state_count(&self) -> Option<u128> {
        state_count(self.n, self.kappa())
    }

    pub fn enumerate(&self) -> Result<ConfigSpace<T>> {
        self.enumerate_with_cap(default_state_cap())
    }

    pub fn enumerate_with_cap(&self, cap: u128) -> Result<ConfigSpace<T>> {
        let states = self.state_count().unwrap_or(u128::MAX);
        if states > cap {
            return Err(Error::TooManyStates { states, cap });
        }
        ConfigSpace::build(self.clone(), states as usize)
    }

    /// Well radius `floor(N^(1/(2(kappa-1))))`.
    pub fn default_well_radius(&self) -> usize {
        let e = 1.0 / (2.0 * (self.kappa() as f64 - 1.0));
        ((self.n as f64).powf(e) + 1e-12).floor() as usize
    }

    /// Total jump rate out of `eta`.
    pub fn holding_rate(&self, eta: &[u32]) -> T {
        let k = self.kappa();
        let mut s = T::zero();
        for x in 0..k {
            if eta[x] == 0 {
                continue;
            }
            let g = jump_factor(eta[x] as usize, self.alpha);
            for y in 0..k {
                s += g * self.graph.rate(x, y);
            }
        }
        s
    }
}

/// A graph and exponent together with a ladder of particle numbers.
#[derive(Clone, Debug)]
pub struct ModelFamily<T> {
    graph: SiteGraph<T>,
    alpha: T,
    ladder: Vec<usize>,
}

impl<T: Real> ModelFamily<T> {
    /// The ladder must be non-empty and strictly increasing.
    pub fn new(graph: SiteGraph<T>, alpha: T, ladder: Vec<usize>) -> Result<Self> {
        if ladder.is_empty() || ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(format!("ladder {ladder:?} must be non-empty and strictly increasing")));
        }
        ZrpModel::new(graph.clone(), alpha, ladder[0])?;
        Ok(Self { graph, alpha, ladder })
    }

    pub fn graph(&self) -> &SiteGraph<T> {
        &self.graph
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn ladder(&self) -> &[usize] {
        &self.ladder
    }

    pub fn kappa(&self) -> usize {
        self.graph.kappa()
    }

    pub fn model(&self, n: usize) -> Result<ZrpModel<T>> {
        ZrpModel::new(self.graph.clone(), self.alpha, n)
    }
}

/// Enumerated configuration space with generator and stationary measure.
///
/// States are numbered in colexicographic order of the stars-and-bars
/// encoding; for two sites the index equals the occupation of site 0.
#[derive(Clone, Debug)]
pub struct ConfigSpace<T> {
    model: ZrpModel<T>,
    configs: Vec<u32>,
    binom: Vec<Vec<u64>>,
    generator: CsrMatrix<T>,
    rho: Option<DiscreteMeasure<T>>,
    log_z: Option<T>,
}

fn counts_from_bars(bars: &[usize], n: usize, kappa: usize, out: &mut [u32]) {
    let top = n + kappa - 1;
    let mut prev: isize = -1;
    for j in 0..kappa - 1 {
        out[j] = (bars[j] as isize - prev - 1) as u32;
        prev = bars[j] as isize;
    }
    out[kappa - 1] = (top as isize - prev - 1) as u32;
}

impl<T: Real> ConfigSpace<T> {
    fn build(model: ZrpModel<T>, states: usize) -> Result<Self> {
        let k = model.kappa();
        let n = model.n;
        let m = n + k - 1;
        let binom: Vec<Vec<u64>> = (0..=m)
            .map(|i| (0..k).map(|j| binomial(i as u128, j as u128).unwrap_or(0) as u64).collect())
            .collect();

        let mut configs = vec![0u32; states * k];
        let mut bars: Vec<usize> = (0..k - 1).collect();
        for s in 0..states {
            counts_from_bars(&bars, n, k, &mut configs[s * k..(s + 1) * k]);
            if s + 1 == states {
                break;
            }
            let mut j = 0;
            loop {
                let limit = if j + 1 < k - 1 { bars[j + 1] } else { m };
                if bars[j] + 1 < limit {
                    bars[j] += 1;
                    for (i, b) in bars.iter_mut().enumerate().take(j) {
                        *b = i;
                    }
                    break;
                }
                j += 1;
            }
        }

        let mut space = Self {
            model,
            configs,
            binom,
            generator: CsrMatrix::from_triplets(0, 0, Vec::new()),
            rho: None,
            log_z: None,
        };
        space.generator = space.assemble_generator();
        if space.model.graph.is_uniform() {
            let alpha = space.model.alpha;
            let log_w: Vec<T> = (0..states)
                .into_par_iter()
                .map(|i| -space.counts(i).iter().map(|&c| log_stickiness(c as usize, alpha)).sum::<T>())
                .collect();
            space.log_z = Some(alpha * T::of(n).ln() + log_sum_exp(&log_w));
            space.rho = Some(DiscreteMeasure::from_log_weights(&log_w)?);
        }
        Ok(space)
    }

    fn assemble_generator(&self) -> CsrMatrix<T> {
        let k = self.kappa();
        let alpha = self.model.alpha;
        let g: Vec<T> = (0..=self.model.n).map(|c| jump_factor(c, alpha)).collect();
        let graph = &self.model.graph;
        let rows: Vec<Vec<(usize, T)>> = (0..self.len())
            .into_par_iter()
            .map(|i| {
                let mut eta = self.counts(i).to_vec();
                let mut row = Vec::with_capacity(k * (k - 1) + 1);
                let mut out = T::zero();
                for x in 0..k {
                    if eta[x] == 0 {
                        continue;
                    }
                    for y in 0..k {
                        let r = graph.rate(x, y);
                        if x == y || r == T::zero() {
                            continue;
                        }
                        let q = g[eta[x] as usize] * r;
                        eta[x] -= 1;
                        eta[y] += 1;
                        row.push((self.rank_unchecked(&eta), q));
                        eta[x] += 1;
                        eta[y] -= 1;
                        out += q;
                    }
                }
                row.push((i, -out));
                row.sort_by_key(|e| e.0);
                row
            })
            .collect();
        CsrMatrix::from_sorted_rows(self.len(), rows)
    }

    fn rank_unchecked(&self, eta: &[u32]) -> usize {
        let mut r = 0u64;
        let mut s = 0usize;
        for j in 0..self.kappa() - 1 {
            s += eta[j] as usize;
            r += self.binom[s + j][j + 1];
        }
        r as usize
    }

    pub fn model(&self) -> &ZrpModel<T> {
        &self.model
    }

    pub fn kappa(&self) -> usize {
        self.model.kappa()
    }

    pub fn n(&self) -> usize {
        self.model.n
    }

    pub fn len(&self) -> usize {
        self.configs.len() / self.kappa()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn counts(&self, i: usize) -> &[u32] {
        let k = self.kappa();
        &self.configs[i * k..(i + 1) * k]
    }

    /// Index of a configuration.
    pub fn index_of(&self, eta: &[u32]) -> Result<usize> {
        if eta.len() != self.kappa() {
            return Err(Error::DimensionMismatch { expected: self.kappa(), got: eta.len() });
        }
        let total: usize = eta.iter().map(|&c| c as usize).sum();
        if total != self.n() {
            return Err(Error::InvalidConfiguration(format!("{total} particles, expected {}", self.n())));
        }
        Ok(self.rank_unchecked(eta))
    }

    /// Configuration with every particle at `x`.
    pub fn condensed(&self, x: usize) -> usize {
        let mut eta = vec![0u32; self.kappa()];
        eta[x] = self.n() as u32;
        self.rank_unchecked(&eta)
    }

    /// Most balanced configuration (ties broken towards low sites).
    pub fn most_balanced(&self) -> usize {
        let k = self.kappa();
        let (q, r) = (self.n() / k, self.n() % k);
        let eta: Vec<u32> = (0..k).map(|x| (q + usize::from(x < r)) as u32).collect();
        self.rank_unchecked(&eta)
    }

    pub fn generator(&self) -> &CsrMatrix<T> {
        &self.generator
    }

    /// Stationary measure; errors for graphs without uniform stationary measure.
    pub fn stationary(&self) -> Result<&DiscreteMeasure<T>> {
        match &self.rho {
            Some(r) => Ok(r),
            None => {
                self.model.graph.check_uniform()?;
                unreachable!("uniform graphs always carry a stationary measure")
            }
        }
    }

    /// `log Z_{S,N}` with `Z_{S,N} = N^alpha sum_eta 1/a(eta)`.
    pub fn log_partition_function(&self) -> Result<T> {
        self.stationary()?;
        Ok(self.log_z.expect("set with rho"))
    }

    pub fn partition_function(&self) -> Result<T> {
        Ok(self.log_partition_function()?.exp())
    }

    /// `eta / N` as a simplex point.
    pub fn embed(&self, i: usize) -> SimplexPoint<T> {
        let n = T::of(self.n());
        let c = self.counts(i).iter().map(|&v| T::of(v as usize) / n).collect();
        SimplexPoint::new(c).expect("empirical density lies in the simplex")
    }

    /// Push-forward of a measure on configurations to the simplex.
    pub fn push_forward(&self, nu: &DiscreteMeasure<T>) -> Result<SimplexMeasure<T>> {
        if nu.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: nu.len() });
        }
        let mut pts = Vec::new();
        let mut w = Vec::new();
        for (i, &p) in nu.weights().iter().enumerate() {
            if p > T::zero() {
                pts.push(self.embed(i));
                w.push(p);
            }
        }
        let s: T = w.iter().copied().sum();
        for v in &mut w {
            *v /= s;
        }
        SimplexMeasure::new(pts, w)
    }

    /// Wells with the default radius.
    pub fn wells(&self) -> Result<Wells> {
        self.wells_with_radius(self.model.default_well_radius())
    }

    /// Wells `E^x = {eta_x >= N - radius}`; requires `2 radius < N` so that
    /// wells are disjoint.
    pub fn wells_with_radius(&self, radius: usize) -> Result<Wells> {
        if 2 * radius >= self.n() {
            return Err(Error::InvalidParameter(format!(
                "well radius {radius} must be below N/2 = {}",
                self.n() as f64 / 2.0
            )));
        }
        let k = self.kappa();
        let thr = (self.n() - radius) as u32;
        let mut of_state = vec![None; self.len()];
        let mut members = vec![Vec::new(); k];
        let mut valley = Vec::new();
        for i in 0..self.len() {
            match self.counts(i).iter().position(|&c| c >= thr) {
                Some(x) => {
                    of_state[i] = Some(x);
                    members[x].push(i);
                }
                None => valley.push(i),
            }
        }
        Ok(Wells { radius, of_state, members, valley })
    }
}

/// Metastable wells `E^x` and the remaining set `Delta`.
#[derive(Clone, Debug)]
pub struct Wells {
    radius: usize,
    of_state: Vec<Option<usize>>,
    members: Vec<Vec<usize>>,
    valley: Vec<usize>,
}

impl Wells {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn well_of(&self, i: usize) -> Option<usize> {
        self.of_state[i]
    }

    pub fn members(&self, x: usize) -> &[usize] {
        &self.members[x]
    }

    /// States in no well.
    pub fn valley(&self) -> &[usize] {
        &self.valley
    }

    pub fn count(&self) -> usize {
        self.members.len()
    }

    /// Union of all wells except `x`.
    pub fn others(&self, x: usize) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.count()).filter(|&y| y != x).flat_map(|y| self.members[y].iter().copied()).collect();
        v.sort_unstable();
        v
    }

    /// Union of all wells.
    pub fn union(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.members.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(kappa: usize, n: usize) -> ConfigSpace<f64> {
        ZrpModel::new(SiteGraph::complete(kappa, 1.0).unwrap(), 2.0, n).unwrap().enumerate().unwrap()
    }

    #[test]
    fn enumeration_is_a_bijection() {
        for (k, n) in [(2, 7), (3, 6), (4, 5), (5, 3)] {
            let s = space(k, n);
            assert_eq!(s.len() as u128, state_count(n, k).unwrap());
            for i in 0..s.len() {
                assert_eq!(s.index_of(s.counts(i)).unwrap(), i);
                assert_eq!(s.counts(i).iter().sum::<u32>() as usize, n);
            }
        }
    }

    #[test]
    fn two_site_index_is_occupation_of_site_zero() {
        let s = space(2, 9);
        for i in 0..s.len() {
            assert_eq!(s.counts(i)[0] as usize, i);
        }
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let s = space(3, 8);
        for i in 0..s.len() {
            let t: f64 = s.generator().row(i).map(|(_, v)| v).sum();
            assert!(t.abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_is_invariant() {
        let g = SiteGraph::directed_cycle(3, 2.0, 0.5).unwrap();
        let s = ZrpModel::new(g, 1.5, 7).unwrap().enumerate().unwrap();
        let rho = s.stationary().unwrap();
        let flow = s.generator().vec_mul(rho.weights());
        assert!(flow.iter().all(|v: &f64| v.abs() < 1e-14));
    }

    #[test]
    fn non_uniform_graph_has_no_closed_form_stationary() {
        let m = crate::linalg::DenseMatrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let g = SiteGraph::from_matrix(m).unwrap();
        let s = ZrpModel::new(g, 2.0, 4).unwrap().enumerate().unwrap();
        assert!(matches!(s.stationary(), Err(Error::NotUniform { .. })));
    }

    #[test]
    fn wells_are_disjoint_and_validated() {
        let s = space(3, 20);
        let w = s.wells().unwrap();
        assert_eq!(w.radius(), 2);
        assert_eq!(w.members(0).len(), 6);
        assert!(s.wells_with_radius(10).is_err());
    }

    #[test]
    fn state_cap_enforced() {
        let m = ZrpModel::new(SiteGraph::<f64>::complete(4, 1.0).unwrap(), 2.0, 100).unwrap();
        assert!(matches!(m.enumerate_with_cap(1000), Err(Error::TooManyStates { .. })));
    }

    #[test]
    fn jump_factor_matches_ratio() {
        for n in 1..10 {
            let r = stickiness::<f64>(n, 2.5) / stickiness::<f64>(n - 1, 2.5);
            assert!((jump_factor::<f64>(n, 2.5) - r).abs() < 1e-12 * r);
        }
    }
}
