//! Regularized bilinear matrix game.
//!
//! `min_x max_y xᵀAy + (η/2)‖x‖² − (η/2)‖y‖²` over two unit simplices with
//! `A_{ij} = (i + j − 1)/(2n − 1)`. Gradients are sampled by drawing a
//! column index with probabilities proportional to the (shifted) weights of
//! the opposing strategy.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::problems::projection::SimplexPair;
use crate::sa_core::{GradientSample, SaddlePoint};
use crate::scalar::{norm_sq, Scalar};
use crate::smoothing::{SmoothedOracle, SubgradientIntegrand};

/// Bilinear game instance.
#[derive(Debug, Clone)]
pub struct BimatrixProblem<T> {
    pub n: usize,
    pub eta: T,
    pub epsilon: T,
}

impl<T: Scalar> BimatrixProblem<T> {
    pub fn new(n: usize, eta: T, epsilon: T) -> Result<Self> {
        if n < 2 {
            return Err(invalid("bimatrix game needs n >= 2"));
        }
        if !(eta > T::zero()) || !(epsilon > T::zero()) {
            return Err(invalid("eta and epsilon must be positive"));
        }
        Ok(Self { n, eta, epsilon })
    }

    /// `A_{ij}` with zero-based indices.
    pub fn entry(&self, i: usize, j: usize) -> T {
        T::from_usize_lossy(i + j + 1) / T::from_usize_lossy(2 * self.n - 1)
    }

    /// Row-major copy of `A`.
    pub fn matrix(&self) -> Vec<Vec<T>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.entry(i, j)).collect())
            .collect()
    }

    /// `Aᵀp` in `O(n)`: `(Σ_i i p_i + (j − 1) Σ_i p_i)/(2n − 1)` (one-based).
    pub fn apply_transpose(&self, p: &[T]) -> Vec<T> {
        let total = p.iter().fold(T::zero(), |a, &b| a + b);
        let moment = p
            .iter()
            .enumerate()
            .fold(T::zero(), |a, (i, &b)| a + T::from_usize_lossy(i + 1) * b);
        let denom = T::from_usize_lossy(2 * self.n - 1);
        (0..self.n)
            .map(|j| (moment + T::from_usize_lossy(j) * total) / denom)
            .collect()
    }

    /// Exact regularized operator `(Aᵀy + ηx, −Ax + ηy)`.
    pub fn exact_operator(&self, x: &[T], y: &[T]) -> (Vec<T>, Vec<T>) {
        // A is symmetric, so Ax = Aᵀx.
        let gx = self
            .apply_transpose(y)
            .into_iter()
            .zip(x)
            .map(|(a, &xi)| a + self.eta * xi)
            .collect();
        let gy = self
            .apply_transpose(x)
            .into_iter()
            .zip(y)
            .map(|(a, &yi)| -a + self.eta * yi)
            .collect();
        (gx, gy)
    }

    /// Largest singular value of `A`.
    pub fn spectral_norm(&self) -> f64 {
        let a = DMatrix::from_fn(self.n, self.n, |i, j| self.entry(i, j).as_f64());
        a.singular_values().max()
    }

    /// Lipschitz constant `√(η² + σ_max(A)²)` of the regularized operator.
    pub fn lipschitz(&self) -> T {
        let s = self.spectral_norm();
        T::lit((self.eta.as_f64().powi(2) + s * s).sqrt())
    }

    /// Largest sampled-operator norm over the ε-enlarged simplex pair.
    pub fn subgradient_norm_bound(&self) -> T {
        let last_column: Vec<T> = (0..self.n).map(|i| self.entry(i, self.n - 1)).collect();
        let column = norm_sq(&last_column).sqrt();
        T::SQRT_2() * column + self.eta * (T::SQRT_2() + self.epsilon)
    }

    /// Squared diameter of the simplex pair.
    pub fn diameter_sq(&self) -> T {
        T::lit(4.0)
    }

    pub fn projection(&self) -> SimplexPair {
        SimplexPair { n: self.n }
    }

    /// Unregularized equilibrium `x* = e₁`, `y* = e_n`, stacked.
    pub fn vertex_solution(&self) -> Vec<T> {
        let mut z = vec![T::zero(); 2 * self.n];
        z[0] = T::one();
        z[2 * self.n - 1] = T::one();
        z
    }

    pub fn integrand(&self) -> BimatrixIntegrand<T> {
        BimatrixIntegrand { problem: self.clone() }
    }

    /// Smoothed oracle over the stacked `2n`-dimensional vector.
    pub fn oracle(&self) -> Result<SmoothedOracle<BimatrixIntegrand<T>, T>> {
        SmoothedOracle::new(self.integrand(), self.epsilon)
    }

    /// One sampled `(gx, gy)` at a feasible pair, without smoothing.
    pub fn sample_operator<R: Rng + ?Sized>(
        &self,
        state: &SaddlePoint<T>,
        rng: &mut R,
    ) -> Result<(GradientSample<T>, GradientSample<T>)> {
        let integrand = self.integrand();
        let draw = integrand.draw(rng);
        let g = integrand.subgradient(&state.stacked(), &draw)?;
        Ok((
            GradientSample::new(g[..self.n].to_vec())?,
            GradientSample::new(g[self.n..].to_vec())?,
        ))
    }
}

/// Sampling weights `(u_q − min(0, u))/Σ_j (u_j − min(0, u))`.
pub fn index_weights<T: Scalar>(u: &[T]) -> Vec<T> {
    let shift = u.iter().fold(T::zero(), |m, &c| m.min(c));
    let shifted: Vec<T> = u.iter().map(|&c| c - shift).collect();
    let total = shifted.iter().fold(T::zero(), |a, &b| a + b);
    if total > T::zero() {
        shifted.into_iter().map(|c| c / total).collect()
    } else {
        vec![T::one() / T::from_usize_lossy(u.len()); u.len()]
    }
}

/// Index drawn by inverting the cumulative weights at `r ∈ [0, 1)`.
pub fn sample_index<T: Scalar>(u: &[T], r: T) -> usize {
    let weights = index_weights(u);
    let mut acc = T::zero();
    let mut last_positive = 0;
    for (q, &w) in weights.iter().enumerate() {
        if w > T::zero() {
            last_positive = q;
            acc = acc + w;
            if r < acc {
                return q;
            }
        }
    }
    last_positive
}

/// Sampled operator of the bilinear game on stacked `u = (x, y)`.
///
/// The sample is a pair of uniforms selecting `l(y)` and `l(x)`; the output
/// is `(A_{·,l(y)} + ηx, −A_{l(x),·} + ηy)`.
#[derive(Debug, Clone)]
pub struct BimatrixIntegrand<T> {
    problem: BimatrixProblem<T>,
}

impl<T: Scalar> SubgradientIntegrand<T> for BimatrixIntegrand<T> {
    type Sample = (T, T);

    fn dim(&self) -> usize {
        2 * self.problem.n
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (T, T) {
        (T::sample_unit(rng), T::sample_unit(rng))
    }

    fn subgradient(&self, u: &[T], sample: &(T, T)) -> Result<Vec<T>> {
        let n = self.problem.n;
        if u.len() != 2 * n {
            return Err(invalid("bimatrix operator dimension mismatch"));
        }
        let (x, y) = u.split_at(n);
        let col = sample_index(y, sample.0);
        let row = sample_index(x, sample.1);
        let eta = self.problem.eta;
        let mut g = Vec::with_capacity(2 * n);
        g.extend((0..n).map(|i| self.problem.entry(i, col) + eta * x[i]));
        g.extend((0..n).map(|j| -self.problem.entry(row, j) + eta * y[j]));
        Ok(g)
    }

    fn subgradient_bound(&self) -> Option<T> {
        Some(self.problem.subgradient_norm_bound())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sa_core::{saddle_step, Point};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matrix_symmetry_and_range() {
        let p = BimatrixProblem::<f64>::new(7, 0.01, 0.2).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(p.entry(i, j), p.entry(j, i));
                assert!(p.entry(i, j) > 0.0 && p.entry(i, j) <= 1.0);
            }
        }
        assert_eq!(p.entry(6, 6), 1.0);
    }

    #[test]
    fn transpose_product_matches_dense() {
        let p = BimatrixProblem::<f64>::new(5, 0.01, 0.2).unwrap();
        let v = [0.3, -0.1, 0.5, 0.2, 0.7];
        let dense: Vec<f64> = (0..5).map(|j| (0..5).map(|i| p.entry(i, j) * v[i]).sum()).collect();
        for (a, b) in p.apply_transpose(&v).iter().zip(dense) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn vertex_strategy_selects_its_column() {
        let p = BimatrixProblem::<f64>::new(4, 0.01, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let state = SaddlePoint::new(
            Point::new(vec![0.25; 4]).unwrap(),
            Point::new(vec![0.0, 0.0, 1.0, 0.0]).unwrap(),
        );
        for _ in 0..50 {
            let (gx, _) = p.sample_operator(&state, &mut rng).unwrap();
            for i in 0..4 {
                assert!((gx[i] - p.entry(i, 2) - 0.01 * 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn weights_on_simplex_are_the_strategy() {
        assert_eq!(index_weights(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(sample_index(&[0.2, 0.3, 0.5], 0.0), 0);
        assert_eq!(sample_index(&[0.2, 0.3, 0.5], 0.49), 1);
        assert_eq!(sample_index(&[0.2, 0.3, 0.5], 0.999), 2);
        assert_eq!(sample_index(&[0.0, 1.0, 0.0], 0.9999), 1);
    }

    #[test]
    fn exact_step_moves_toward_equilibrium() {
        let p = BimatrixProblem::<f64>::new(2, 0.01, 0.2).unwrap();
        let state = SaddlePoint::<f64>::barycenter(2);
        let (gx, gy) = p.exact_operator(&state.x, &state.y);
        let next = saddle_step(&state, &gx, &gy, 1.0).unwrap();
        assert!(next.x[0] > 0.5);
        assert!(next.y[1] > 0.5);
    }

    #[test]
    fn operator_is_strongly_monotone() {
        let p = BimatrixProblem::<f64>::new(6, 0.05, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let random_simplex = |rng: &mut ChaCha8Rng| {
            let w: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|c| c / s).collect::<Vec<_>>()
        };
        for _ in 0..200 {
            let (x1, y1, x2, y2) = (
                random_simplex(&mut rng),
                random_simplex(&mut rng),
                random_simplex(&mut rng),
                random_simplex(&mut rng),
            );
            let (a1, b1) = p.exact_operator(&x1, &y1);
            let (a2, b2) = p.exact_operator(&x2, &y2);
            let mut inner = 0.0;
            let mut dist = 0.0;
            for i in 0..6 {
                inner += (a1[i] - a2[i]) * (x1[i] - x2[i]) + (b1[i] - b2[i]) * (y1[i] - y2[i]);
                dist += (x1[i] - x2[i]).powi(2) + (y1[i] - y2[i]).powi(2);
            }
            assert!(inner >= 0.05 * dist - 1e-12);
        }
    }
}
