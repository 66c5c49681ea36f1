//! Probability measures on finite state spaces and on the simplex.

use crate::error::{Error, Result};
use crate::real::{pairwise_sum, Real};

/// Probability vector over an indexed finite space.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure<T> {
    weights: Vec<T>,
}

impl<T: Real> DiscreteMeasure<T> {
    /// Accepts non-negative weights summing to one within `1e-9`.
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("empty support".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= T::zero()) || !w.is_finite()) {
            return Err(Error::InvalidMeasure(format!("weight {w} is not a non-negative number")));
        }
        let s = pairwise_sum(&weights);
        if (s - T::one()).abs() > T::tol(1e-9) {
            return Err(Error::InvalidMeasure(format!("weights sum to {s}")));
        }
        Ok(Self { weights })
    }

    /// Normalises non-negative weights with positive total mass.
    pub fn from_unnormalized(mut weights: Vec<T>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w >= T::zero()) || !w.is_finite()) {
            return Err(Error::InvalidMeasure(format!("weight {w} is not a non-negative number")));
        }
        let s = pairwise_sum(&weights);
        if !(s > T::zero()) {
            return Err(Error::InvalidMeasure("zero total mass".into()));
        }
        for w in &mut weights {
            *w /= s;
        }
        Ok(Self { weights })
    }

    /// Normalises `exp(log_weights)` without overflow.
    pub fn from_log_weights(log_w: &[T]) -> Result<Self> {
        let lz = crate::real::log_sum_exp(log_w);
        if !lz.is_finite() {
            return Err(Error::InvalidMeasure("log weights not normalisable".into()));
        }
        Self::from_unnormalized(log_w.iter().map(|&l| (l - lz).exp()).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_unnormalized(vec![T::one(); n])
    }

    pub fn dirac(n: usize, i: usize) -> Result<Self> {
        if i >= n {
            return Err(Error::InvalidMeasure(format!("atom {i} outside support of size {n}")));
        }
        let mut w = vec![T::zero(); n];
        w[i] = T::one();
        Ok(Self { weights: w })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn mass_of(&self, idx: &[usize]) -> T {
        idx.iter().map(|&i| self.weights[i]).sum()
    }

    pub fn expect(&self, f: &[T]) -> T {
        let terms: Vec<T> = self.weights.iter().zip(f).map(|(&w, &v)| w * v).collect();
        pairwise_sum(&terms)
    }

    pub fn total_variation(&self, other: &Self) -> Result<T> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: other.len() });
        }
        let d: Vec<T> = self.weights.iter().zip(&other.weights).map(|(&a, &b)| (a - b).abs()).collect();
        Ok(pairwise_sum(&d) / T::c(2.0))
    }

    /// Conditioned measure on `idx`.
    pub fn condition(&self, idx: &[usize]) -> Result<Self> {
        let mut w = vec![T::zero(); self.len()];
        for &i in idx {
            w[i] = self.weights[i];
        }
        Self::from_unnormalized(w)
    }
}

/// Point of the simplex over `kappa` sites.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexPoint<T> {
    coords: Vec<T>,
}

impl<T: Real> SimplexPoint<T> {
    pub fn new(coords: Vec<T>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidMeasure("empty simplex point".into()));
        }
        if coords.iter().any(|c| !(*c >= T::zero()) || !c.is_finite()) {
            return Err(Error::InvalidMeasure("negative simplex coordinate".into()));
        }
        let s: T = coords.iter().copied().sum();
        if (s - T::one()).abs() > T::tol(1e-9) {
            return Err(Error::InvalidMeasure(format!("simplex coordinates sum to {s}")));
        }
        Ok(Self { coords })
    }

    pub fn vertex(kappa: usize, x: usize) -> Self {
        let mut c = vec![T::zero(); kappa];
        c[x] = T::one();
        Self { coords: c }
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn l1_distance(&self, other: &Self) -> T {
        self.coords.iter().zip(&other.coords).map(|(&a, &b)| (a - b).abs()).sum()
    }

    /// Index of the vertex this point equals, if any.
    pub fn as_vertex(&self) -> Option<usize> {
        let i = self.coords.iter().position(|&c| c == T::one())?;
        Some(i)
    }
}

/// Finitely supported probability measure on the simplex.
#[derive(Clone, Debug)]
pub struct SimplexMeasure<T> {
    points: Vec<SimplexPoint<T>>,
    weights: Vec<T>,
}

impl<T: Real> SimplexMeasure<T> {
    pub fn new(points: Vec<SimplexPoint<T>>, weights: Vec<T>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), got: weights.len() });
        }
        let d = points.first().map(|p| p.dim()).unwrap_or(0);
        if points.iter().any(|p| p.dim() != d) {
            return Err(Error::InvalidMeasure("points of different dimension".into()));
        }
        let w = DiscreteMeasure::new(weights)?;
        Ok(Self { points, weights: w.weights })
    }

    /// Measure `sum_x mu(x) delta_{vertex x}`.
    pub fn on_vertices(mu: &[T]) -> Result<Self> {
        let k = mu.len();
        Self::new((0..k).map(|x| SimplexPoint::vertex(k, x)).collect(), mu.to_vec())
    }

    pub fn points(&self) -> &[SimplexPoint<T>] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn integrate(&self, f: impl Fn(&[T]) -> T) -> T {
        let terms: Vec<T> = self.points.iter().zip(&self.weights).map(|(p, &w)| w * f(p.coords())).collect();
        pairwise_sum(&terms)
    }

    /// Vertex masses if the measure is carried by vertices, else `None`.
    pub fn vertex_masses(&self) -> Option<Vec<T>> {
        let k = self.points.first()?.dim();
        let mut m = vec![T::zero(); k];
        for (p, &w) in self.points.iter().zip(&self.weights) {
            if w == T::zero() {
                continue;
            }
            m[p.as_vertex()?] += w;
        }
        Some(m)
    }
}
