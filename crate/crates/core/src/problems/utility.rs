//! Stochastic utility problem.
//!
//! `min_{x ∈ simplex} E[φ(Σ_i (i/n + ξ_i) x_i)] + (η/2)‖x‖²` with
//! `φ(t) = max_j {v_j + s_j t}` and `ξ ~ N(0, I)`.

use rand::Rng;
use statrs::function::erf::erfc;

use crate::error::{invalid, Result};
use crate::problems::projection::Simplex;
use crate::sa_core::Point;
use crate::scalar::{dot, norm_sq, Scalar};
use crate::smoothing::{smoothing_lipschitz, SmoothedOracle, SubgradientIntegrand, ValueIntegrand};

/// Default number of linear pieces in `φ`.
pub const DEFAULT_PIECES: usize = 10;

/// Segment of the upper envelope of `φ`: line `v + s t` active on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    v: f64,
    s: f64,
    lo: f64,
    hi: f64,
}

fn upper_envelope(v: &[f64], s: &[f64]) -> Vec<Segment> {
    let mut lines: Vec<(f64, f64)> = v.iter().copied().zip(s.iter().copied()).collect();
    // Ascending slope; for equal slopes only the largest intercept matters.
    lines.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.partial_cmp(&a.0).unwrap()));
    lines.dedup_by(|later, earlier| later.1 == earlier.1);
    let cross = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0) / (b.1 - a.1);
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for line in lines {
        while hull.len() >= 2 {
            let l1 = hull[hull.len() - 2];
            let l2 = hull[hull.len() - 1];
            if cross(l1, line) <= cross(l1, l2) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(line);
    }
    let mut out = Vec::with_capacity(hull.len());
    let mut lo = f64::NEG_INFINITY;
    for (j, &(v, s)) in hull.iter().enumerate() {
        let hi = if j + 1 < hull.len() { cross((v, s), hull[j + 1]) } else { f64::INFINITY };
        out.push(Segment { v, s, lo, hi });
        lo = hi;
    }
    out
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// The utility problem instance.
#[derive(Debug, Clone)]
pub struct UtilityProblem<T> {
    pub n: usize,
    pub v: Vec<T>,
    pub s: Vec<T>,
    pub eta: T,
    pub epsilon: T,
    /// Truncation level for the `φ` part of sampled subgradients.
    pub c_phi: T,
    envelope: Vec<Segment>,
}

impl<T: Scalar> UtilityProblem<T> {
    pub fn new(n: usize, v: Vec<T>, s: Vec<T>, eta: T, epsilon: T, c_phi: T) -> Result<Self> {
        if n == 0 {
            return Err(invalid("utility problem needs n >= 1"));
        }
        if v.is_empty() || v.len() != s.len() {
            return Err(invalid("need the same positive number of intercepts and slopes"));
        }
        let unit = |c: &T| *c >= T::zero() && *c <= T::one();
        if !v.iter().all(unit) || !s.iter().all(unit) {
            return Err(invalid("piece intercepts and slopes must lie in [0, 1]"));
        }
        if !(eta > T::zero()) || !(epsilon > T::zero()) || !(c_phi > T::zero()) {
            return Err(invalid("eta, epsilon and the truncation level must be positive"));
        }
        let vf: Vec<f64> = v.iter().map(|c| c.as_f64()).collect();
        let sf: Vec<f64> = s.iter().map(|c| c.as_f64()).collect();
        let envelope = upper_envelope(&vf, &sf);
        Ok(Self { n, v, s, eta, epsilon, c_phi, envelope })
    }

    /// Draws `pieces` intercepts (sorted descending) and slopes (sorted
    /// ascending) uniformly from `[0, 1]`, then sets the truncation level
    /// from a `pilot_draws` pilot at the barycenter.
    pub fn generate<R: Rng + ?Sized>(
        n: usize,
        pieces: usize,
        eta: T,
        epsilon: T,
        pilot_draws: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if pieces == 0 {
            return Err(invalid("need at least one piece"));
        }
        let mut v: Vec<T> = (0..pieces).map(|_| T::sample_unit(rng)).collect();
        let mut s: Vec<T> = (0..pieces).map(|_| T::sample_unit(rng)).collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut problem = Self::new(n, v, s, eta, epsilon, T::one())?;
        problem.c_phi = problem.estimate_truncation(pilot_draws, rng)?;
        Ok(problem)
    }

    /// `1.25 ×` the 99.9th percentile of `‖s_{i*}(a + ξ)‖` over `draws`
    /// samples at the barycenter.
    pub fn estimate_truncation<R: Rng + ?Sized>(&self, draws: usize, rng: &mut R) -> Result<T> {
        if draws < 1000 {
            return Err(invalid("truncation pilot needs at least 1000 draws"));
        }
        let x = vec![T::one() / T::from_usize_lossy(self.n); self.n];
        let mut norms: Vec<T> = (0..draws)
            .map(|_| {
                let xi = self.draw(rng);
                let coeff = self.coefficients(&xi);
                let piece = self.active_piece(dot(&coeff, &x));
                self.s[piece] * norm_sq(&coeff).sqrt()
            })
            .collect();
        norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((draws as f64) * 0.999).ceil() as usize - 1;
        let level = norms[idx.min(draws - 1)] * T::lit(1.25);
        if level > T::zero() {
            Ok(level)
        } else {
            Ok(T::one())
        }
    }

    pub fn pieces(&self) -> usize {
        self.v.len()
    }

    /// `φ(t) = max_j {v_j + s_j t}`.
    pub fn phi(&self, t: T) -> T {
        self.v
            .iter()
            .zip(&self.s)
            .map(|(&v, &s)| v + s * t)
            .fold(T::neg_infinity(), T::max)
    }

    /// Index of the first maximizing piece at `t`.
    pub fn active_piece(&self, t: T) -> usize {
        let mut best = 0;
        let mut best_value = T::neg_infinity();
        for (j, (&v, &s)) in self.v.iter().zip(&self.s).enumerate() {
            let value = v + s * t;
            if value > best_value {
                best = j;
                best_value = value;
            }
        }
        best
    }

    /// Coefficients `i/n + ξ_i`, `i = 1..n`.
    pub fn coefficients(&self, xi: &[T]) -> Vec<T> {
        let n = T::from_usize_lossy(self.n);
        xi.iter()
            .enumerate()
            .map(|(i, &e)| T::from_usize_lossy(i + 1) / n + e)
            .collect()
    }

    fn mean_coefficients(&self) -> Vec<f64> {
        (1..=self.n).map(|i| i as f64 / self.n as f64).collect()
    }

    /// Declared bound on sampled subgradients over the ε-enlarged simplex.
    pub fn subgradient_norm_bound(&self) -> T {
        self.c_phi + self.eta * (T::one() + self.epsilon)
    }

    /// Lipschitz constant of the smoothed regularized gradient.
    pub fn lipschitz(&self) -> Result<T> {
        Ok(smoothing_lipschitz(self.n, self.c_phi, self.epsilon)? + self.eta)
    }

    pub fn projection(&self) -> Simplex {
        Simplex::new(self.n)
    }

    pub fn barycenter(&self) -> Point<T> {
        Point::from_vec_unchecked(vec![T::one() / T::from_usize_lossy(self.n); self.n])
    }

    /// Oracle for the smoothed regularized problem.
    pub fn oracle(&self) -> Result<SmoothedOracle<UtilityProblem<T>, T>> {
        SmoothedOracle::new(self.clone(), self.epsilon)
    }

    /// The integrand averaged over `ξ` in closed form.
    pub fn expected(&self) -> ExpectedUtility<'_, T> {
        ExpectedUtility { problem: self }
    }

    /// `E_ξ φ(Σ(i/n + ξ_i) u_i)` and its gradient in `u`.
    ///
    /// With `t ~ N(a·u, ‖u‖²)` each envelope segment contributes
    /// `(v + sμ)(Φ(β) − Φ(α)) + sσ(ϕ(α) − ϕ(β))`.
    pub fn expected_phi(&self, u: &[T]) -> (f64, Vec<f64>) {
        let a = self.mean_coefficients();
        let uf: Vec<f64> = u.iter().map(|c| c.as_f64()).collect();
        let mu: f64 = a.iter().zip(&uf).map(|(x, y)| x * y).sum();
        let sigma = uf.iter().map(|c| c * c).sum::<f64>().sqrt();
        if sigma < 1e-300 {
            let piece = self
                .envelope
                .iter()
                .find(|seg| mu <= seg.hi)
                .unwrap_or_else(|| self.envelope.last().unwrap());
            return (piece.v + piece.s * mu, a.iter().map(|c| piece.s * c).collect());
        }
        let mut value = 0.0;
        let mut h_mu = 0.0;
        let mut h_sigma = 0.0;
        for seg in &self.envelope {
            let alpha = (seg.lo - mu) / sigma;
            let beta = (seg.hi - mu) / sigma;
            if beta < -40.0 || alpha > 40.0 {
                continue;
            }
            let mass = std_normal_cdf(beta) - std_normal_cdf(alpha);
            let density = std_normal_pdf(alpha) - std_normal_pdf(beta);
            value += (seg.v + seg.s * mu) * mass + seg.s * sigma * density;
            h_mu += seg.s * mass;
            h_sigma += seg.s * density;
        }
        let grad = a
            .iter()
            .zip(&uf)
            .map(|(&ai, &ui)| h_mu * ai + h_sigma * ui / sigma)
            .collect();
        (value, grad)
    }
}

impl<T: Scalar> SubgradientIntegrand<T> for UtilityProblem<T> {
    type Sample = Vec<T>;

    fn dim(&self) -> usize {
        self.n
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        (0..self.n).map(|_| T::sample_normal(rng)).collect()
    }

    /// `s_{i*}(a + ξ)`, truncated to norm `c_phi`, plus `η u`.
    fn subgradient(&self, u: &[T], xi: &Vec<T>) -> Result<Vec<T>> {
        if u.len() != self.n || xi.len() != self.n {
            return Err(invalid("utility subgradient dimension mismatch"));
        }
        let coeff = self.coefficients(xi);
        let piece = self.active_piece(dot(&coeff, u));
        let mut scale = self.s[piece];
        let norm = scale * norm_sq(&coeff).sqrt();
        if norm > self.c_phi {
            scale = scale * self.c_phi / norm;
        }
        Ok(coeff
            .iter()
            .zip(u)
            .map(|(&c, &ui)| scale * c + self.eta * ui)
            .collect())
    }

    fn subgradient_bound(&self) -> Option<T> {
        Some(self.subgradient_norm_bound())
    }
}

impl<T: Scalar> ValueIntegrand<T> for UtilityProblem<T> {
    fn value(&self, u: &[T], xi: &Vec<T>) -> Result<T> {
        let t = dot(&self.coefficients(xi), u);
        Ok(self.phi(t) + self.eta * norm_sq(u) / T::lit(2.0))
    }
}

/// `f(u) = E_ξ φ(Σ(i/n + ξ_i)u_i) + (η/2)‖u‖²`, evaluated exactly.
#[derive(Debug, Clone, Copy)]
pub struct ExpectedUtility<'a, T> {
    problem: &'a UtilityProblem<T>,
}

impl<T: Scalar> SubgradientIntegrand<T> for ExpectedUtility<'_, T> {
    type Sample = ();

    fn dim(&self) -> usize {
        self.problem.n
    }

    fn draw<R: Rng + ?Sized>(&self, _rng: &mut R) {}

    fn subgradient(&self, u: &[T], _sample: &()) -> Result<Vec<T>> {
        let (_, grad) = self.problem.expected_phi(u);
        Ok(grad
            .iter()
            .zip(u)
            .map(|(&g, &ui)| T::lit(g) + self.problem.eta * ui)
            .collect())
    }
}

impl<T: Scalar> ValueIntegrand<T> for ExpectedUtility<'_, T> {
    fn value(&self, u: &[T], _sample: &()) -> Result<T> {
        let (value, _) = self.problem.expected_phi(u);
        Ok(T::lit(value) + self.problem.eta * norm_sq(u) / T::lit(2.0))
    }
}
