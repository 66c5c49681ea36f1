//! Finite site graphs: the underlying random walk of the zero-range process,
//! its potential theory, harmonic extensions and trace processes.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::real::Real;

/// Irreducible continuous-time random walk on `kappa` labelled sites.
#[derive(Clone, Debug)]
pub struct SiteGraph<T> {
    names: Vec<String>,
    rates: DenseMatrix<T>,
}

/// A site given either by index or by name in a graph file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum SiteRef {
    Index(usize),
    Name(String),
}

/// On-disk form: `{"sites": [..], "rates": [[from, to, rate], ..]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphSpec {
    pub sites: Vec<String>,
    pub rates: Vec<(SiteRef, SiteRef, f64)>,
}

impl<T: Real> SiteGraph<T> {
    /// Builds a graph from a `kappa x kappa` rate matrix. Diagonal entries are
    /// ignored; off-diagonal entries must be finite and non-negative.
    pub fn new(names: Vec<String>, rates: DenseMatrix<T>) -> Result<Self> {
        let k = names.len();
        if k < 2 {
            return Err(Error::InvalidGraph("need at least two sites".into()));
        }
        if rates.rows() != k || rates.cols() != k {
            return Err(Error::DimensionMismatch { expected: k, got: rates.rows() });
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(Error::InvalidGraph(format!("duplicate site name {n}")));
            }
        }
        let mut r = rates;
        for x in 0..k {
            r[(x, x)] = T::zero();
            for y in 0..k {
                let v = r[(x, y)];
                if !v.is_finite() || v < T::zero() {
                    return Err(Error::InvalidGraph(format!("rate r({x},{y}) = {v} is not a non-negative number")));
                }
            }
        }
        let g = Self { names, rates: r };
        g.check_irreducible()?;
        Ok(g)
    }

    pub fn from_matrix(rates: DenseMatrix<T>) -> Result<Self> {
        let names = (0..rates.rows()).map(|i| i.to_string()).collect();
        Self::new(names, rates)
    }

    /// Complete graph with every rate equal to `rate`.
    pub fn complete(kappa: usize, rate: T) -> Result<Self> {
        let mut m = DenseMatrix::zeros(kappa, kappa);
        for x in 0..kappa {
            for y in 0..kappa {
                if x != y {
                    m[(x, y)] = rate;
                }
            }
        }
        Self::from_matrix(m)
    }

    /// Symmetric nearest-neighbour cycle.
    pub fn cycle(kappa: usize, rate: T) -> Result<Self> {
        let mut m = DenseMatrix::zeros(kappa, kappa);
        for x in 0..kappa {
            let y = (x + 1) % kappa;
            if x != y {
                m[(x, y)] = rate;
                m[(y, x)] = rate;
            }
        }
        Self::from_matrix(m)
    }

    /// Cycle with clockwise rate `p` and anticlockwise rate `q`.
    pub fn directed_cycle(kappa: usize, p: T, q: T) -> Result<Self> {
        let mut m = DenseMatrix::zeros(kappa, kappa);
        for x in 0..kappa {
            m[(x, (x + 1) % kappa)] += p;
            m[((x + 1) % kappa, x)] += q;
        }
        Self::from_matrix(m)
    }

    /// Symmetric path `0 - 1 - ... - (kappa-1)`.
    pub fn path(kappa: usize, rate: T) -> Result<Self> {
        let mut m = DenseMatrix::zeros(kappa, kappa);
        for x in 0..kappa.saturating_sub(1) {
            m[(x, x + 1)] = rate;
            m[(x + 1, x)] = rate;
        }
        Self::from_matrix(m)
    }

    pub fn from_spec(spec: &GraphSpec) -> Result<Self> {
        let k = spec.sites.len();
        let index: HashMap<&str, usize> = spec.sites.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let resolve = |s: &SiteRef| -> Result<usize> {
            match s {
                SiteRef::Index(i) if *i < k => Ok(*i),
                SiteRef::Index(i) => Err(Error::InvalidGraph(format!("site index {i} out of range"))),
                SiteRef::Name(n) => index
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidGraph(format!("unknown site {n}"))),
            }
        };
        let mut m = DenseMatrix::zeros(k, k);
        for (from, to, rate) in &spec.rates {
            let (x, y) = (resolve(from)?, resolve(to)?);
            if x == y {
                return Err(Error::InvalidGraph(format!("self loop at site {x}")));
            }
            m[(x, y)] += T::c(*rate);
        }
        Self::new(spec.sites.clone(), m)
    }

    pub fn to_spec(&self) -> GraphSpec {
        let mut rates = Vec::new();
        for x in 0..self.kappa() {
            for y in 0..self.kappa() {
                let r = self.rate(x, y);
                if x != y && r > T::zero() {
                    rates.push((SiteRef::Name(self.names[x].clone()), SiteRef::Name(self.names[y].clone()), r.as_f64()));
                }
            }
        }
        GraphSpec { sites: self.names.clone(), rates }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_spec(&serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("graph spec serialises")
    }

    pub fn kappa(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn rate(&self, x: usize, y: usize) -> T {
        self.rates[(x, y)]
    }

    pub fn rate_matrix(&self) -> &DenseMatrix<T> {
        &self.rates
    }

    /// Generator matrix `L(x,y) = r(x,y)`, `L(x,x) = -sum_y r(x,y)`.
    pub fn generator(&self) -> DenseMatrix<T> {
        let k = self.kappa();
        let mut l = self.rates.clone();
        for x in 0..k {
            let out: T = (0..k).map(|y| self.rate(x, y)).sum();
            l[(x, x)] = -out;
        }
        l
    }

    fn scale(&self) -> T {
        let mut s = T::zero();
        for x in 0..self.kappa() {
            for y in 0..self.kappa() {
                s = s.max(self.rate(x, y));
            }
        }
        s
    }

    fn check_irreducible(&self) -> Result<()> {
        let k = self.kappa();
        for forward in [true, false] {
            let mut seen = vec![false; k];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(x) = stack.pop() {
                for y in 0..k {
                    let r = if forward { self.rate(x, y) } else { self.rate(y, x) };
                    if r > T::zero() && !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
            if let Some(y) = seen.iter().position(|s| !s) {
                return Err(Error::InvalidGraph(format!("not irreducible: site {y} unreachable")));
            }
        }
        Ok(())
    }

    /// Checks that the uniform measure is stationary, i.e. every site has equal
    /// in- and out-rates.
    pub fn check_uniform(&self) -> Result<()> {
        let k = self.kappa();
        let tol = T::tol(1e-12) * self.scale() * T::of(k);
        for x in 0..k {
            let inflow: T = (0..k).map(|y| self.rate(y, x)).sum();
            let outflow: T = (0..k).map(|y| self.rate(x, y)).sum();
            if (inflow - outflow).abs() > tol {
                return Err(Error::NotUniform { site: x, excess: (inflow - outflow).as_f64() });
            }
        }
        Ok(())
    }

    pub fn is_uniform(&self) -> bool {
        self.check_uniform().is_ok()
    }

    /// Reversibility with respect to the uniform measure, i.e. symmetric rates.
    pub fn check_reversible(&self) -> Result<()> {
        let k = self.kappa();
        let tol = T::tol(1e-12) * self.scale();
        for x in 0..k {
            for y in x + 1..k {
                let (a, b) = (self.rate(x, y), self.rate(y, x));
                if (a - b).abs() > tol {
                    return Err(Error::NotReversible { x, y, rxy: a.as_f64(), ryx: b.as_f64() });
                }
            }
        }
        Ok(())
    }

    pub fn is_reversible(&self) -> bool {
        self.check_reversible().is_ok()
    }

    /// Walk with rates `r*(x,y) = r(y,x)`, the adjoint in `L^2(uniform)`.
    pub fn adjoint(&self) -> Self {
        Self { names: self.names.clone(), rates: self.rates.transpose() }
    }

    /// Applies the generator to a function on sites.
    pub fn apply_generator(&self, f: &[T]) -> Result<Vec<T>> {
        self.check_len(f)?;
        let k = self.kappa();
        Ok((0..k)
            .map(|x| (0..k).map(|y| self.rate(x, y) * (f[y] - f[x])).sum())
            .collect())
    }

    /// Dirichlet form `1/2 sum m(x) r(x,y) (f(y)-f(x)) (h(y)-h(x))` with the
    /// uniform probability `m`.
    pub fn dirichlet_form(&self, f: &[T], h: &[T]) -> Result<T> {
        self.check_len(f)?;
        self.check_len(h)?;
        let k = self.kappa();
        let m = T::one() / T::of(k);
        let mut s = T::zero();
        for x in 0..k {
            for y in 0..k {
                s += self.rate(x, y) * (f[y] - f[x]) * (h[y] - h[x]);
            }
        }
        Ok(s * m / T::c(2.0))
    }

    fn check_len(&self, f: &[T]) -> Result<()> {
        if f.len() != self.kappa() {
            return Err(Error::DimensionMismatch { expected: self.kappa(), got: f.len() });
        }
        Ok(())
    }

    /// Sorted, de-duplicated site set, validated against this graph.
    pub fn site_set(&self, sites: &[usize]) -> Result<Vec<usize>> {
        let mut s = sites.to_vec();
        s.sort_unstable();
        s.dedup();
        if let Some(&x) = s.iter().find(|&&x| x >= self.kappa()) {
            return Err(Error::InvalidSiteSet(format!("site {x} out of range")));
        }
        Ok(s)
    }

    fn complement(&self, a: &[usize]) -> Vec<usize> {
        (0..self.kappa()).filter(|x| !a.contains(x)).collect()
    }

    /// Equilibrium potential: harmonic off `a ∪ b`, 1 on `a`, 0 on `b`.
    pub fn equilibrium_potential(&self, a: &[usize], b: &[usize]) -> Result<Vec<T>> {
        let a = self.site_set(a)?;
        let b = self.site_set(b)?;
        if a.is_empty() || b.is_empty() {
            return Err(Error::InvalidSiteSet("both sets must be non-empty".into()));
        }
        if a.iter().any(|x| b.contains(x)) {
            return Err(Error::InvalidSiteSet("sets must be disjoint".into()));
        }
        let mut f = vec![T::zero(); self.kappa()];
        for &x in &a {
            f[x] = T::one();
        }
        let free: Vec<usize> = (0..self.kappa()).filter(|x| !a.contains(x) && !b.contains(x)).collect();
        if free.is_empty() {
            return Ok(f);
        }
        let l = self.generator();
        let lff = l.select(&free, &free);
        let rhs: Vec<T> = free
            .iter()
            .map(|&z| -a.iter().map(|&x| l[(z, x)]).sum::<T>())
            .collect();
        let sol = lff.solve(&rhs)?;
        for (i, &z) in free.iter().enumerate() {
            f[z] = sol[i];
        }
        Ok(f)
    }

    /// Capacity between disjoint non-empty site sets.
    pub fn capacity(&self, a: &[usize], b: &[usize]) -> Result<T> {
        let f = self.equilibrium_potential(a, b)?;
        self.dirichlet_form(&f, &f)
    }

    /// Harmonic extension matrix `u` with `u[(i, z)]` the probability that the
    /// walk from `z` first enters `a` at `a[i]`.
    pub fn harmonic_extension(&self, a: &[usize]) -> Result<DenseMatrix<T>> {
        let a = self.site_set(a)?;
        if a.is_empty() {
            return Err(Error::InvalidSiteSet("empty set".into()));
        }
        let b = self.complement(&a);
        let mut u = DenseMatrix::zeros(a.len(), self.kappa());
        for (i, &x) in a.iter().enumerate() {
            u[(i, x)] = T::one();
        }
        if b.is_empty() {
            return Ok(u);
        }
        let l = self.generator();
        let lu = l.select(&b, &b).lu()?;
        for (i, &x) in a.iter().enumerate() {
            let rhs: Vec<T> = b.iter().map(|&z| -l[(z, x)]).collect();
            let col = lu.solve(&rhs)?;
            for (j, &z) in b.iter().enumerate() {
                u[(i, z)] = col[j];
            }
        }
        Ok(u)
    }

    /// Projection `gamma_A` from the simplex on all sites to the simplex on `a`.
    pub fn gamma_projection(&self, a: &[usize], xi: &[T]) -> Result<Vec<T>> {
        self.check_len(xi)?;
        let u = self.harmonic_extension(a)?;
        u.mul_vec(xi)
    }

    /// Generator of the trace process on `a` (Schur complement).
    pub fn trace_generator(&self, a: &[usize]) -> Result<DenseMatrix<T>> {
        let a = self.site_set(a)?;
        let b = self.complement(&a);
        let l = self.generator();
        let mut la = l.select(&a, &a);
        if b.is_empty() {
            return Ok(la);
        }
        let lab = l.select(&a, &b);
        let lbb = l.select(&b, &b).lu()?;
        for j in 0..a.len() {
            let rhs: Vec<T> = b.iter().map(|&z| l[(z, a[j])]).collect();
            let col = lbb.solve(&rhs)?;
            for i in 0..a.len() {
                let corr: T = (0..b.len()).map(|k| lab[(i, k)] * col[k]).sum();
                la[(i, j)] -= corr;
            }
        }
        Ok(la)
    }

    /// Jump rates of the trace process on `a`, as a graph on those sites.
    pub fn trace_rates(&self, a: &[usize]) -> Result<Self> {
        let a = self.site_set(a)?;
        if a.len() < 2 {
            return Err(Error::InvalidSiteSet("trace needs at least two sites".into()));
        }
        let la = self.trace_generator(&a)?;
        let mut r = DenseMatrix::zeros(a.len(), a.len());
        for i in 0..a.len() {
            for j in 0..a.len() {
                if i != j {
                    r[(i, j)] = la[(i, j)].max(T::zero());
                }
            }
        }
        let names = a.iter().map(|&x| self.names[x].clone()).collect();
        Self::new(names, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn trace_of_complete_three() {
        let g = SiteGraph::<f64>::complete(3, 1.0).unwrap();
        let t = g.trace_rates(&[0, 1]).unwrap();
        assert!(close(t.rate(0, 1), 1.5, 1e-14));
        assert!(close(t.rate(1, 0), 1.5, 1e-14));
    }

    #[test]
    fn trace_of_path_endpoints() {
        let g = SiteGraph::<f64>::path(4, 1.0).unwrap();
        let t = g.trace_rates(&[0, 3]).unwrap();
        assert!(close(t.rate(0, 1), 1.0 / 3.0, 1e-14));
    }

    #[test]
    fn capacity_of_two_sites() {
        let g = SiteGraph::<f64>::complete(2, 1.0).unwrap();
        assert!(close(g.capacity(&[0], &[1]).unwrap(), 0.5, 1e-15));
        let p = SiteGraph::<f64>::path(4, 1.0).unwrap();
        // series conductances 1/4 each (uniform mass 1/4): effective 1/12
        assert!(close(p.capacity(&[0], &[3]).unwrap(), 1.0 / 12.0, 1e-14));
    }

    #[test]
    fn uniform_and_reversible_flags() {
        let c = SiteGraph::<f64>::directed_cycle(4, 2.0, 1.0).unwrap();
        assert!(c.is_uniform());
        assert!(!c.is_reversible());
        let m = DenseMatrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let g = SiteGraph::<f64>::from_matrix(m).unwrap();
        assert!(matches!(g.check_uniform(), Err(Error::NotUniform { .. })));
    }

    #[test]
    fn reducible_graph_rejected() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(SiteGraph::<f64>::from_matrix(m).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = r#"{"sites":["a","b","c"],"rates":[["a","b",1.0],["b","a",1.0],[1,2,0.5],[2,1,0.5]]}"#;
        let g = SiteGraph::<f64>::from_json_str(s).unwrap();
        assert_eq!(g.rate(1, 2), 0.5);
        let h = SiteGraph::<f64>::from_json_str(&g.to_json()).unwrap();
        assert_eq!(h.rate_matrix(), g.rate_matrix());
    }

    #[test]
    fn f32_capacity() {
        let g = SiteGraph::<f32>::complete(3, 1.0).unwrap();
        let c = g.capacity(&[0], &[1]).unwrap();
        // effective conductance 3/2 times m = 1/3
        assert!((c - 0.5).abs() < 1e-6);
    }
}
