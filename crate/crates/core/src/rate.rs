//! Level-two (Donsker-Varadhan) rate functions at finite `N`, the reduced
//! Markov chain on sites and the limiting functionals on the simplex.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SiteGraph;
use crate::linalg::{CsrMatrix, DenseMatrix};
use crate::measure::{DiscreteMeasure, SimplexMeasure};
use crate::real::{pairwise_sum, Real};
use crate::zrp::ConfigSpace;

/// Value of a rate function together with its certificate.
#[derive(Clone, Debug)]
pub struct RateValue<T> {
    /// `+inf` when the measure is outside the effective domain.
    pub value: T,
    /// Maximiser `u = e^h` of the variational formula, if computed.
    pub optimizer: Option<Vec<T>>,
    /// Max-norm of the gradient at the returned point.
    pub residual: T,
    pub iterations: usize,
}

impl<T: Real> RateValue<T> {
    pub fn exact(value: T) -> Self {
        Self { value, optimizer: None, residual: T::zero(), iterations: 0 }
    }

    pub fn infinite() -> Self {
        Self::exact(T::infinity())
    }
}

/// Dirichlet-form expression of the rate function of a generator `q`
/// reversible with respect to `pi`.
pub fn dirichlet_rate<T: Real>(q: &CsrMatrix<T>, pi: &[T], nu: &[T]) -> Result<T> {
    let n = q.n_rows();
    if pi.len() != n || nu.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: nu.len() });
    }
    let root: Vec<T> = nu
        .iter()
        .zip(pi)
        .map(|(&a, &p)| if a == T::zero() { T::zero() } else { (a / p).sqrt() })
        .collect();
    let rows: Vec<T> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = T::zero();
            for (j, v) in q.row(i) {
                if j > i {
                    let d = root[i] - root[j];
                    s += pi[i] * v * d * d;
                }
            }
            s
        })
        .collect();
    Ok(pairwise_sum(&rows))
}

/// Rate function of the zero-range process on a reversible graph, in closed
/// form.
pub fn rate_reversible<T: Real>(space: &ConfigSpace<T>, nu: &DiscreteMeasure<T>) -> Result<T> {
    space.model().graph().check_reversible()?;
    let rho = space.stationary()?;
    dirichlet_rate(space.generator(), rho.weights(), nu.weights())
}

/// Options for [`rate_variational`].
#[derive(Clone, Copy, Debug)]
pub struct VariationalOptions<T> {
    /// Stop once the gradient max-norm, relative to the total exit rate, is
    /// below this.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for VariationalOptions<T> {
    fn default() -> Self {
        Self { tol: T::tol(1e-10), max_iter: 100_000 }
    }
}

/// Largest state space handled by [`rate_variational`] (dense Newton steps).
pub const VARIATIONAL_MAX_STATES: usize = 4000;

/// Rate function `sup_{u>0} -sum nu (Lu)/u` by damped Newton ascent on the
/// concave objective in `h = log u`.
pub fn rate_variational<T: Real>(
    q: &CsrMatrix<T>,
    nu: &DiscreteMeasure<T>,
    opts: VariationalOptions<T>,
) -> Result<RateValue<T>> {
    let n = q.n_rows();
    if nu.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: nu.len() });
    }
    if n > VARIATIONAL_MAX_STATES {
        return Err(Error::InvalidParameter(format!("{n} states exceed the variational solver limit")));
    }
    let w = nu.weights();
    let mut edges: Vec<(usize, usize, T)> = Vec::new();
    let mut base = T::zero();
    for x in 0..n {
        if w[x] == T::zero() {
            continue;
        }
        for (y, v) in q.row(x) {
            if y != x && v > T::zero() {
                edges.push((x, y, w[x] * v));
                base += w[x] * v;
            }
        }
    }
    if edges.is_empty() {
        return Ok(RateValue { value: T::zero(), optimizer: Some(vec![T::one(); n]), residual: T::zero(), iterations: 0 });
    }
    let scale = base.max(T::min_positive_value());
    let objective = |h: &[T]| -> T {
        let s: Vec<T> = edges.iter().map(|&(x, y, c)| c * (h[y] - h[x]).exp()).collect();
        base - pairwise_sum(&s)
    };
    let gradient = |h: &[T]| -> Vec<T> {
        let mut g = vec![T::zero(); n];
        for &(x, y, c) in &edges {
            let e = c * (h[y] - h[x]).exp();
            g[x] += e;
            g[y] -= e;
        }
        g
    };
    let gnorm = |g: &[T]| g.iter().fold(T::zero(), |m, &v| m.max(v.abs()));

    let mut h = vec![T::zero(); n];
    let mut f = objective(&h);
    let mut g = gradient(&h);
    let tol = opts.tol * scale;
    let mut it = 0;
    let mut best = gnorm(&g);
    let mut stalled = 0;
    while gnorm(&g) > tol {
        if it >= opts.max_iter {
            return Err(Error::NoConvergence { iterations: it, residual: (gnorm(&g) / scale).as_f64() });
        }
        it += 1;
        let mu = gnorm(&g).min(scale) + scale * T::c(1e-14);
        let mut lap = DenseMatrix::zeros(n, n);
        for &(x, y, c) in &edges {
            let e = c * (h[y] - h[x]).exp();
            lap[(x, x)] += e;
            lap[(y, y)] += e;
            lap[(x, y)] -= e;
            lap[(y, x)] -= e;
        }
        for i in 0..n {
            lap[(i, i)] += mu;
        }
        let d = lap.solve(&g)?;
        let slope: T = g.iter().zip(&d).map(|(&a, &b)| a * b).sum();
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<T> = h.iter().zip(&d).map(|(&a, &b)| a + t * b).collect();
            let ft = objective(&trial);
            if ft.is_finite() && ft >= f + T::c(1e-4) * t * slope {
                h = trial;
                f = ft;
                accepted = true;
                break;
            }
            t = t * T::c(0.5);
        }
        if !accepted {
            break;
        }
        let h0 = h[0];
        for v in &mut h {
            *v -= h0;
        }
        g = gradient(&h);
        // near the optimum the objective no longer resolves the step
        if gnorm(&g) < best {
            best = gnorm(&g);
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 50 {
                break;
            }
        }
    }
    let res = gnorm(&g);
    if res > tol * T::c(1e3) {
        return Err(Error::NoConvergence { iterations: it, residual: (res / scale).as_f64() });
    }
    let hmax = h.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(RateValue {
        value: f.max(T::zero()),
        optimizer: Some(h.iter().map(|&v| (v - hmax).exp()).collect()),
        residual: res,
        iterations: it,
    })
}

/// Rate function of a two-state chain with symmetric rate `r` at `(p, 1-p)`.
pub fn two_state_rate<T: Real>(r: T, p: T) -> T {
    r * (T::one() - T::c(2.0) * (p * (T::one() - p)).sqrt())
}

/// Which series defines the constant `Gamma(alpha)` in the reduced chain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaConvention {
    /// `sum_{j>=0} 1/a(j) = 1 + zeta(alpha)`, the normalisation of the
    /// stationary measure.
    #[default]
    Series,
    /// `1 + zeta(alpha + 1)`.
    Shifted,
}

/// Riemann zeta for `s > 1` by Euler-Maclaurin summation.
pub fn zeta<T: Real>(s: T) -> T {
    let m = 32usize;
    let mut sum = T::zero();
    for k in 1..m {
        sum += T::of(k).powf(-s);
    }
    let mm = T::of(m);
    sum += mm.powf(T::one() - s) / (s - T::one()) + mm.powf(-s) / T::c(2.0);
    // Bernoulli corrections B_{2k}/(2k)! * s(s+1)...(s+2k-2) * M^{1-s-2k}
    let coeffs = [1.0 / 12.0, -1.0 / 720.0, 1.0 / 30240.0, -1.0 / 1209600.0, 1.0 / 47900160.0];
    let mut rising = s;
    for (k, &c) in coeffs.iter().enumerate() {
        let p = 2 * k + 1;
        sum += T::c(c) * rising * mm.powf(T::one() - s - T::of(p + 1));
        rising = rising * (s + T::of(p)) * (s + T::of(p + 1));
    }
    sum
}

pub fn gamma_alpha<T: Real>(alpha: T, conv: GammaConvention) -> T {
    match conv {
        GammaConvention::Series => T::one() + zeta(alpha),
        GammaConvention::Shifted => T::one() + zeta(alpha + T::one()),
    }
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn adaptive_simpson<T: Real>(f: &dyn Fn(T) -> T, a: T, b: T, tol: T) -> T {
    fn rec<T: Real>(f: &dyn Fn(T) -> T, a: T, b: T, fa: T, fm: T, fb: T, whole: T, tol: T, depth: u32) -> T {
        let two = T::c(2.0);
        let m = (a + b) / two;
        let lm = (a + m) / two;
        let rm = (m + b) / two;
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / T::c(6.0) * (fa + T::c(4.0) * flm + fm);
        let right = (b - m) / T::c(6.0) * (fm + T::c(4.0) * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= T::c(15.0) * tol {
            return left + right + delta / T::c(15.0);
        }
        rec(f, a, m, fa, flm, fm, left, tol / two, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / two, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let m = (a + b) / T::c(2.0);
    let fm = f(m);
    let whole = (b - a) / T::c(6.0) * (fa + T::c(4.0) * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `I_alpha = int_0^1 u^alpha (1-u)^alpha du`.
pub fn beta_integral<T: Real>(alpha: T) -> T {
    let f = move |u: T| u.powf(alpha) * (T::one() - u).powf(alpha);
    let half = adaptive_simpson(&f, T::zero(), T::c(0.5), T::tol(1e-15));
    half * T::c(2.0)
}

/// Reduced chain on sites driving the metastable dynamics.
#[derive(Clone, Debug)]
pub struct LimitingChain<T> {
    pub chain: SiteGraph<T>,
    pub gamma: T,
    pub i_alpha: T,
}

/// Rates `R(x,y) = kappa Cap_S(x,y) / (Gamma(alpha) I_alpha)`.
pub fn limiting_chain<T: Real>(graph: &SiteGraph<T>, alpha: T, conv: GammaConvention) -> Result<LimitingChain<T>> {
    graph.check_uniform()?;
    if !(alpha > T::one()) {
        return Err(Error::InvalidParameter(format!("alpha must exceed 1, got {alpha}")));
    }
    let k = graph.kappa();
    let gamma = gamma_alpha(alpha, conv);
    let i_alpha = beta_integral(alpha);
    let mut r = DenseMatrix::zeros(k, k);
    for x in 0..k {
        for y in 0..k {
            if x != y {
                r[(x, y)] = T::of(k) * graph.capacity(&[x], &[y])? / (gamma * i_alpha);
            }
        }
    }
    Ok(LimitingChain { chain: SiteGraph::new(graph.names().to_vec(), r)?, gamma, i_alpha })
}

pub fn dense_to_csr<T: Real>(m: &DenseMatrix<T>) -> CsrMatrix<T> {
    let mut t = Vec::new();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if m[(i, j)] != T::zero() {
                t.push((i, j, m[(i, j)]));
            }
        }
    }
    CsrMatrix::from_triplets(m.rows(), m.cols(), t)
}

/// Rate function of a site chain at a probability vector on sites.
pub fn chain_rate<T: Real>(chain: &SiteGraph<T>, mu: &[T]) -> Result<RateValue<T>> {
    let nu = DiscreteMeasure::new(mu.to_vec())?;
    let q = dense_to_csr(&chain.generator());
    if chain.is_reversible() {
        let pi = vec![T::one() / T::of(chain.kappa()); chain.kappa()];
        return Ok(RateValue::exact(dirichlet_rate(&q, &pi, nu.weights())?));
    }
    rate_variational(&q, &nu, VariationalOptions::default())
}

/// Metastable limit functional: the reduced chain's rate function at the
/// vertex masses of `mu`, or `+inf` if `mu` charges anything but vertices.
pub fn rate_j<T: Real>(chain: &LimitingChain<T>, mu: &SimplexMeasure<T>) -> Result<RateValue<T>> {
    match mu.vertex_masses() {
        Some(m) => chain_rate(&chain.chain, &m),
        None => Ok(RateValue::infinite()),
    }
}

/// Midpoint cells of a uniform subdivision of the simplex over `dim` sites,
/// carrying the uniform probability measure.
///
/// Cells touching the boundary face `sum = 1` of the coordinate chart are
/// dropped, so the total weight is `1 - O(mesh)`; integrands must vanish
/// within `(dim - 1) * mesh` of the boundary.
#[derive(Clone, Debug)]
pub struct SimplexGrid<T> {
    dim: usize,
    divisions: usize,
    points: Vec<Vec<T>>,
    weights: Vec<T>,
}

impl<T: Real> SimplexGrid<T> {
    pub fn new(dim: usize, divisions: usize) -> Result<Self> {
        if dim == 0 || divisions == 0 {
            return Err(Error::InvalidParameter("grid needs positive dimension and divisions".into()));
        }
        let m = divisions;
        let free = dim - 1;
        let mut fact = 1usize;
        for i in 2..=free {
            fact *= i;
        }
        let w = T::of(fact) / T::of(m).powi(free as i32);
        let mut points = Vec::new();
        let mut idx = vec![0usize; free];
        let hm = T::of(m);
        loop {
            let used: usize = idx.iter().map(|i| i + 1).sum();
            if used <= m {
                let mut p: Vec<T> = idx.iter().map(|&i| (T::of(i) + T::c(0.5)) / hm).collect();
                let s: T = p.iter().copied().sum();
                p.push(T::one() - s);
                points.push(p);
            }
            let mut k = 0;
            loop {
                if k == free {
                    let n = points.len();
                    return Ok(Self { dim, divisions, points, weights: vec![w; n] });
                }
                idx[k] += 1;
                let used: usize = idx.iter().map(|i| i + 1).sum();
                if used <= m {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mesh(&self) -> T {
        T::one() / T::of(self.divisions)
    }

    pub fn divisions(&self) -> usize {
        self.divisions
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn total_weight(&self) -> T {
        pairwise_sum(&self.weights)
    }

    /// Rejects test functions whose support reaches the dropped cells.
    pub fn check_margin(&self, margin: T) -> Result<()> {
        let need = self.mesh() * T::of((self.dim.max(3) - 1).max(2));
        if !(margin > need) {
            return Err(Error::GridTooCoarse { mesh: self.mesh().as_f64(), margin: margin.as_f64() });
        }
        Ok(())
    }

    /// Integral against the uniform probability measure.
    pub fn integrate(&self, f: impl Fn(&[T]) -> T + Sync) -> T {
        let terms: Vec<T> = self.points.par_iter().zip(&self.weights).map(|(p, &w)| w * f(p)).collect();
        pairwise_sum(&terms)
    }
}

/// Smooth function on the simplex over a face `A`, given on `R^A`.
pub trait TestFunction<T: Real>: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, xi: &[T]) -> T;
    fn gradient(&self, xi: &[T], grad: &mut [T]);
    /// The function vanishes whenever some coordinate is at most this.
    fn margin(&self) -> T;
}

/// `amplitude * (prod_x xi_x - threshold)_+^3`.
#[derive(Clone, Debug)]
pub struct PolyBump<T> {
    pub dim: usize,
    pub threshold: T,
    pub amplitude: T,
}

impl<T: Real> PolyBump<T> {
    pub fn new(dim: usize, threshold: T) -> Result<Self> {
        if dim < 2 || !(threshold > T::zero()) || threshold >= T::one() / T::of(dim).powi(dim as i32) {
            return Err(Error::InvalidParameter(format!("bump threshold {threshold} outside (0, dim^-dim)")));
        }
        Ok(Self { dim, threshold, amplitude: T::one() })
    }

    pub fn scaled(mut self, c: T) -> Self {
        self.amplitude = self.amplitude * c;
        self
    }
}

impl<T: Real> TestFunction<T> for PolyBump<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, xi: &[T]) -> T {
        let p: T = xi.iter().copied().fold(T::one(), |a, b| a * b);
        let d = p - self.threshold;
        if d > T::zero() {
            self.amplitude * d * d * d
        } else {
            T::zero()
        }
    }

    fn gradient(&self, xi: &[T], grad: &mut [T]) {
        let p: T = xi.iter().copied().fold(T::one(), |a, b| a * b);
        let d = p - self.threshold;
        for (k, g) in grad.iter_mut().enumerate() {
            *g = if d > T::zero() {
                let others: T = xi.iter().enumerate().filter(|&(j, _)| j != k).fold(T::one(), |a, (_, &b)| a * b);
                self.amplitude * T::c(3.0) * d * d * others
            } else {
                T::zero()
            };
        }
    }

    fn margin(&self) -> T {
        if self.dim == 2 {
            (T::one() - (T::one() - T::c(4.0) * self.threshold).sqrt()) / T::c(2.0)
        } else {
            self.threshold
        }
    }
}

/// Density of `pi_A = prod xi^alpha` with respect to the reference measure.
fn inverse_pi<T: Real>(alpha: T, xi: &[T]) -> T {
    let lp: T = xi.iter().map(|&x| x.ln()).sum();
    (-alpha * lp).exp()
}

/// `int v^2 d lambda_A` by midpoint quadrature.
pub fn lambda_norm_sq<T: Real>(alpha: T, v: &dyn TestFunction<T>, grid: &SimplexGrid<T>) -> Result<T> {
    check_face(v, grid)?;
    Ok(grid.integrate(|p| {
        let f = v.value(p);
        if f == T::zero() {
            T::zero()
        } else {
            f * f * inverse_pi(alpha, p)
        }
    }))
}

fn check_face<T: Real>(v: &dyn TestFunction<T>, grid: &SimplexGrid<T>) -> Result<()> {
    if v.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: v.dim() });
    }
    grid.check_margin(v.margin())
}

/// Energy `Q^A(v)` together with the same integral in its second form.
#[derive(Clone, Debug)]
pub struct EnergyReport<T> {
    pub value: T,
    /// The integrand written with the unprojected graph rates and `gamma_A`.
    pub projected_form: T,
    pub max_pointwise_gap: T,
    pub mesh: T,
}

/// Diffusive energy of `v` on the face `a` by midpoint quadrature.
pub fn energy_qa<T: Real>(
    graph: &SiteGraph<T>,
    alpha: T,
    a: &[usize],
    v: &dyn TestFunction<T>,
    grid: &SimplexGrid<T>,
) -> Result<EnergyReport<T>> {
    graph.check_reversible()?;
    let a = graph.site_set(a)?;
    if a.len() < 2 {
        return Err(Error::InvalidSiteSet("energy needs a face with at least two sites".into()));
    }
    if a.len() != v.dim() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: v.dim() });
    }
    check_face(v, grid)?;
    let trace = if a.len() == graph.kappa() { graph.clone() } else { graph.trace_rates(&a)? };
    let u = graph.harmonic_extension(&a)?;
    let k = graph.kappa();
    let d = a.len();
    let mut pairs = Vec::new();
    for x in 0..k {
        for y in x + 1..k {
            let r = graph.rate(x, y);
            if r > T::zero() {
                let dir: Vec<T> = (0..d).map(|i| u[(i, x)] - u[(i, y)]).collect();
                pairs.push((r, dir));
            }
        }
    }
    let terms: Vec<(T, T, T)> = grid
        .points()
        .par_iter()
        .zip(grid.weights())
        .map(|(p, &w)| {
            let mut g = vec![T::zero(); d];
            v.gradient(p, &mut g);
            if g.iter().all(|&c| c == T::zero()) {
                return (T::zero(), T::zero(), T::zero());
            }
            let mut t1 = T::zero();
            for x in 0..d {
                for y in 0..d {
                    if x != y {
                        let dd = g[x] - g[y];
                        t1 += trace.rate(x, y) / T::c(2.0) * dd * dd;
                    }
                }
            }
            let mut t2 = T::zero();
            for (r, dir) in &pairs {
                let dd: T = dir.iter().zip(&g).map(|(&a, &b)| a * b).sum();
                t2 += *r * dd * dd;
            }
            let dens = w * inverse_pi(alpha, p);
            let gap = (t1 - t2).abs() / (T::one() + t1.abs());
            (t1 * dens, t2 * dens, gap)
        })
        .collect();
    let value = pairwise_sum(&terms.iter().map(|t| t.0).collect::<Vec<_>>());
    let projected_form = pairwise_sum(&terms.iter().map(|t| t.1).collect::<Vec<_>>());
    let max_pointwise_gap = terms.iter().map(|t| t.2).fold(T::zero(), T::max);
    Ok(EnergyReport { value, projected_form, max_pointwise_gap, mesh: grid.mesh() })
}

/// Energy at `divisions` and `2 * divisions` with the second-order
/// Richardson estimate.
#[derive(Clone, Debug)]
pub struct EnergyRichardson<T> {
    pub coarse: T,
    pub fine: T,
    pub extrapolated: T,
}

pub fn energy_richardson<T: Real>(
    graph: &SiteGraph<T>,
    alpha: T,
    a: &[usize],
    v: &dyn TestFunction<T>,
    divisions: usize,
) -> Result<EnergyRichardson<T>> {
    let g1 = SimplexGrid::new(v.dim(), divisions)?;
    let g2 = SimplexGrid::new(v.dim(), 2 * divisions)?;
    let coarse = energy_qa(graph, alpha, a, v, &g1)?.value;
    let fine = energy_qa(graph, alpha, a, v, &g2)?.value;
    Ok(EnergyRichardson { coarse, fine, extrapolated: (T::c(4.0) * fine - coarse) / T::c(3.0) })
}

/// Part of a measure carried by the interior of a face, as
/// `weight * f^2 d lambda_A` with `int f^2 d lambda_A = 1`.
pub struct FaceComponent<'a, T> {
    pub sites: Vec<usize>,
    pub weight: T,
    pub root_density: &'a dyn TestFunction<T>,
}

/// Diffusive limit functional for measures with smooth face densities.
pub fn rate_k<T: Real>(
    graph: &SiteGraph<T>,
    alpha: T,
    components: &[FaceComponent<'_, T>],
    divisions: usize,
) -> Result<T> {
    let total: T = components.iter().map(|c| c.weight).sum();
    if (total - T::one()).abs() > T::tol(1e-9) && total > T::one() {
        return Err(Error::InvalidMeasure(format!("face weights sum to {total}")));
    }
    let mut k = T::zero();
    for c in components {
        if c.sites.len() < 2 || c.weight == T::zero() {
            continue;
        }
        let grid = SimplexGrid::new(c.sites.len(), divisions)?;
        let norm = lambda_norm_sq(alpha, c.root_density, &grid)?;
        if (norm - T::one()).abs() > T::c(0.01) {
            return Err(Error::InvalidMeasure(format!("face density has lambda-mass {norm}, expected 1")));
        }
        k += c.weight * energy_qa(graph, alpha, &c.sites, c.root_density, &grid)?.value;
    }
    Ok(k)
}
