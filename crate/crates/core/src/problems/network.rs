//! Stochastic network utility problem.
//!
//! `min E[−Σ_i k_i log(1 + x_i)] + ‖Ax‖²` over `{x ≥ 0, Ax ≤ C}` with
//! `k_i ~ Uni(0.2, 1)` and a 0/1 link-user adjacency matrix `A`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{domain, invalid, Result};
use crate::problems::projection::CapacityPolytope;
use crate::sa_core::{GradientSample, Point};
use crate::scalar::{dot, Scalar};
use crate::smoothing::{PlainOracle, SubgradientIntegrand, ValueIntegrand};

pub const K_LOW: f64 = 0.2;
pub const K_HIGH: f64 = 1.0;

/// Base capacity profile `C₃` over nine links.
pub const C3: [f64; 9] = [0.10, 0.15, 0.20, 0.10, 0.15, 0.20, 0.20, 0.15, 0.25];

/// Capacity profile `C₁ = 2 C₃`, `C₂ = C₃/0.75` or `C₃`.
pub fn capacity_profile(level: u8) -> Result<Vec<f64>> {
    let scale = match level {
        1 => 2.0,
        2 => 1.0 / 0.75,
        3 => 1.0,
        _ => return Err(invalid(format!("capacity level must be 1, 2 or 3, got {level}"))),
    };
    Ok(C3.iter().map(|c| c * scale).collect())
}

/// `∇F(x, k) = (−k_i/(1 + x_i))_i + 2AᵀAx`.
pub fn network_gradient<T: Scalar>(x: &[T], k: &[T], rows: &[Vec<T>]) -> Result<GradientSample<T>> {
    if k.len() != x.len() || rows.iter().any(|r| r.len() != x.len()) {
        return Err(invalid("network gradient dimension mismatch"));
    }
    if let Some(i) = x.iter().position(|&c| !(c > -T::one())) {
        return Err(domain(format!("x[{i}] = {} is not above -1", x[i])));
    }
    let mut g: Vec<T> = x.iter().zip(k).map(|(&xi, &ki)| -ki / (T::one() + xi)).collect();
    for row in rows {
        let load = T::lit(2.0) * dot(row, x);
        for (gi, &a) in g.iter_mut().zip(row) {
            *gi = *gi + load * a;
        }
    }
    GradientSample::new(g)
}

/// `F(x, k) = −Σ_i k_i log(1 + x_i) + ‖Ax‖²`.
pub fn network_objective<T: Scalar>(x: &[T], k: &[T], rows: &[Vec<T>]) -> Result<T> {
    if let Some(i) = x.iter().position(|&c| !(c > -T::one())) {
        return Err(domain(format!("x[{i}] = {} is not above -1", x[i])));
    }
    let utility = x
        .iter()
        .zip(k)
        .fold(T::zero(), |acc, (&xi, &ki)| acc + ki * xi.ln_1p());
    let congestion = rows.iter().fold(T::zero(), |acc, r| {
        let load = dot(r, x);
        acc + load * load
    });
    Ok(congestion - utility)
}

/// Network instance.
#[derive(Debug, Clone)]
pub struct NetworkProblem<T> {
    pub n: usize,
    /// Link-user adjacency, one row per link.
    pub rows: Vec<Vec<T>>,
    pub capacity: Vec<T>,
}

impl<T: Scalar> NetworkProblem<T> {
    pub fn new(rows: Vec<Vec<T>>, capacity: Vec<T>) -> Result<Self> {
        let polytope = CapacityPolytope::new(rows.clone(), capacity.clone())?;
        let n = rows[0].len();
        if (0..n).any(|i| polytope.rows.iter().all(|r| r[i] == T::zero())) {
            return Err(invalid("every user must traverse at least one link"));
        }
        Ok(Self { n, rows, capacity })
    }

    /// Random 0/1 adjacency with every link and every user covered.
    pub fn generate<R: Rng + ?Sized>(n: usize, capacity: Vec<T>, rng: &mut R) -> Result<Self> {
        if n == 0 || capacity.is_empty() {
            return Err(invalid("need at least one user and one link"));
        }
        let links = capacity.len();
        let mut rows: Vec<Vec<T>> = (0..links)
            .map(|_| {
                (0..n)
                    .map(|_| if rng.random::<bool>() { T::one() } else { T::zero() })
                    .collect()
            })
            .collect();
        for row in rows.iter_mut() {
            if row.iter().all(|&a| a == T::zero()) {
                row[rng.random_range(0..n)] = T::one();
            }
        }
        for i in 0..n {
            if rows.iter().all(|r| r[i] == T::zero()) {
                rows[rng.random_range(0..links)][i] = T::one();
            }
        }
        Self::new(rows, capacity)
    }

    pub fn links(&self) -> usize {
        self.rows.len()
    }

    pub fn polytope(&self) -> CapacityPolytope<T> {
        CapacityPolytope { rows: self.rows.clone(), capacity: self.capacity.clone() }
    }

    /// Per-user upper bound `min_{l : A_{li} = 1} C_l` implied by `Ax ≤ C`.
    pub fn upper_bounds(&self) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                self.rows
                    .iter()
                    .zip(&self.capacity)
                    .filter(|(r, _)| r[i] > T::zero())
                    .map(|(r, &c)| c / r[i])
                    .fold(T::infinity(), T::min)
            })
            .collect()
    }

    /// `Σ_i ub_i²`, bounding the squared diameter of the feasible set.
    pub fn diameter_sq(&self) -> T {
        self.upper_bounds().iter().fold(T::zero(), |a, &u| a + u * u)
    }

    fn gram_eigenvalues(&self) -> (f64, f64) {
        let a = DMatrix::from_fn(self.links(), self.n, |l, i| self.rows[l][i].as_f64());
        let gram = a.transpose() * &a * 2.0;
        let eig = SymmetricEigen::new(gram).eigenvalues;
        (eig.min(), eig.max())
    }

    /// `k_min/(1 + x_max)² + λ_min(2AᵀA)⁺`.
    pub fn strong_convexity(&self) -> T {
        let x_max = self
            .upper_bounds()
            .iter()
            .fold(T::zero(), |m, &u| m.max(u))
            .as_f64();
        let (lmin, _) = self.gram_eigenvalues();
        T::lit(K_LOW / (1.0 + x_max).powi(2) + lmin.max(0.0))
    }

    /// `k_max + λ_max(2AᵀA)`.
    pub fn lipschitz(&self) -> T {
        let (_, lmax) = self.gram_eigenvalues();
        T::lit(K_HIGH + lmax)
    }

    pub fn origin(&self) -> Point<T> {
        Point::zeros(self.n)
    }

    pub fn oracle(&self) -> PlainOracle<NetworkProblem<T>> {
        PlainOracle { inner: self.clone() }
    }
}

impl<T: Scalar> SubgradientIntegrand<T> for NetworkProblem<T> {
    type Sample = Vec<T>;

    fn dim(&self) -> usize {
        self.n
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let (lo, hi) = (T::lit(K_LOW), T::lit(K_HIGH));
        (0..self.n).map(|_| lo + (hi - lo) * T::sample_unit(rng)).collect()
    }

    fn subgradient(&self, u: &[T], k: &Vec<T>) -> Result<Vec<T>> {
        Ok(network_gradient(u, k, &self.rows)?.into_vec())
    }
}

impl<T: Scalar> ValueIntegrand<T> for NetworkProblem<T> {
    fn value(&self, u: &[T], k: &Vec<T>) -> Result<T> {
        network_objective(u, k, &self.rows)
    }
}
