//! Local randomized smoothing over a uniform ε-ball.
//!
//! A nonsmooth integrand `F(u, ξ)` is replaced by `f̂(x) = E[F(x + z, ξ)]`
//! with `z` uniform on the ball of radius `ε`. The smoothed function has a
//! Lipschitz gradient with constant `κ · n!!/(n−1)!! · C/ε`, where `C`
//! bounds the subgradients on the ε-enlarged set and `κ = 2/π` for even `n`,
//! `κ = 1` for odd `n`.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};
use crate::sa_core::{GradientSample, Point, StochasticOracle};
use crate::scalar::{norm_sq, Scalar};

/// Uniform distribution on the Euclidean ball of radius `epsilon` in `R^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallDistribution<T> {
    pub n: usize,
    pub epsilon: T,
}

impl<T: Scalar> BallDistribution<T> {
    pub fn new(n: usize, epsilon: T) -> Result<Self> {
        if n == 0 {
            return Err(invalid("ball dimension must be at least 1"));
        }
        if !(epsilon > T::zero()) || !epsilon.is_finite() {
            return Err(invalid(format!("ball radius must be positive, got {epsilon}")));
        }
        Ok(Self { n, epsilon })
    }

    /// Normalized Gaussian direction scaled by `ε U^{1/n}`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut z: Vec<T> = (0..self.n).map(|_| T::sample_normal(rng)).collect();
        let mut norm = norm_sq(&z).sqrt();
        while !(norm > T::zero()) {
            z.iter_mut().for_each(|c| *c = T::sample_normal(rng));
            norm = norm_sq(&z).sqrt();
        }
        let u = T::sample_unit(rng);
        let radius = self.epsilon * u.powf(T::one() / T::from_usize_lossy(self.n));
        let scale = radius / norm;
        z.iter_mut().for_each(|c| *c = *c * scale);
        // Guard against rounding pushing the norm a hair past ε.
        let len = norm_sq(&z).sqrt();
        if len > self.epsilon {
            let shrink = self.epsilon / len;
            z.iter_mut().for_each(|c| *c = *c * shrink);
        }
        z
    }
}

/// One draw from the uniform ε-ball in `R^n`.
pub fn sample_ball<T: Scalar, R: Rng + ?Sized>(n: usize, epsilon: T, rng: &mut R) -> Result<Vec<T>> {
    Ok(BallDistribution::new(n, epsilon)?.sample(rng))
}

const DIRECT_FACTORIAL_LIMIT: usize = 150;

/// `n!! = n (n−2) (n−4) …`, with `0!! = 1`. Overflows to infinity for very
/// large `n`; use [`ln_double_factorial`] there.
pub fn double_factorial(n: usize) -> f64 {
    (1..=n).rev().step_by(2).fold(1.0, |acc, k| acc * k as f64)
}

/// `ln(n!!)`.
pub fn ln_double_factorial(n: usize) -> f64 {
    if n <= DIRECT_FACTORIAL_LIMIT {
        return double_factorial(n).ln();
    }
    let k = (n / 2) as f64;
    if n % 2 == 0 {
        // (2k)!! = 2^k k!
        k * std::f64::consts::LN_2 + ln_gamma(k + 1.0)
    } else {
        // (2k+1)!! = (2k+1)! / (2^k k!)
        ln_gamma(2.0 * k + 2.0) - k * std::f64::consts::LN_2 - ln_gamma(k + 1.0)
    }
}

/// `n!!/(n−1)!!`.
pub fn double_factorial_ratio(n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if n <= DIRECT_FACTORIAL_LIMIT {
        double_factorial(n) / double_factorial(n - 1)
    } else {
        (ln_double_factorial(n) - ln_double_factorial(n - 1)).exp()
    }
}

/// Volume `c_n = π^{n/2}/Γ(n/2 + 1)` of the unit ball in `R^n`.
///
/// Uses `π^k/k!` for `n = 2k` and `2(2π)^k/n!!` for `n = 2k + 1` while those
/// stay representable, log-gamma beyond.
pub fn ball_volume_coeff(n: usize) -> f64 {
    use std::f64::consts::PI;
    if n <= DIRECT_FACTORIAL_LIMIT {
        let k = (n / 2) as i32;
        if n % 2 == 0 {
            PI.powi(k) / (1..=k).fold(1.0, |acc, j| acc * j as f64)
        } else {
            2.0 * (2.0 * PI).powi(k) / double_factorial(n)
        }
    } else {
        let half = n as f64 / 2.0;
        (half * PI.ln() - ln_gamma(half + 1.0)).exp()
    }
}

/// `κ` of the smoothing constant: `2/π` for even `n`, `1` for odd `n`.
pub fn kappa(n: usize) -> f64 {
    if n % 2 == 0 {
        std::f64::consts::FRAC_2_PI
    } else {
        1.0
    }
}

/// Lipschitz constant `κ · n!!/(n−1)!! · C/ε` of `∇f̂`.
pub fn smoothing_lipschitz<T: Scalar>(n: usize, c: T, epsilon: T) -> Result<T> {
    if n == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !(c > T::zero()) || !(epsilon > T::zero()) {
        return Err(invalid("C and epsilon must be positive"));
    }
    Ok(T::lit(kappa(n) * double_factorial_ratio(n)) * c / epsilon)
}

/// A nonsmooth integrand `F(u, ξ)` with a subgradient selection.
pub trait SubgradientIntegrand<T: Scalar> {
    /// One realization of the problem randomness `ξ`.
    type Sample;

    fn dim(&self) -> usize;

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Sample;

    /// An element of `∂_u F(u, ξ)`.
    fn subgradient(&self, u: &[T], sample: &Self::Sample) -> Result<Vec<T>>;

    /// Norm bound `C` on [`subgradient`](Self::subgradient) over the
    /// ε-enlarged feasible set.
    fn subgradient_bound(&self) -> Option<T> {
        None
    }
}

/// An integrand whose value can be evaluated.
pub trait ValueIntegrand<T: Scalar>: SubgradientIntegrand<T> {
    fn value(&self, u: &[T], sample: &Self::Sample) -> Result<T>;
}

fn clip_to<T: Scalar>(mut g: Vec<T>, bound: Option<T>) -> Vec<T> {
    if let Some(c) = bound {
        let norm = norm_sq(&g).sqrt();
        if norm > c {
            let scale = c / norm;
            g.iter_mut().for_each(|v| *v = *v * scale);
        }
    }
    g
}

/// Oracle for `∇f̂`: draws `ξ`, then `z` from the ball, and returns a
/// subgradient of `F(·, ξ)` at `x + z`.
#[derive(Debug, Clone)]
pub struct SmoothedOracle<I, T> {
    pub inner: I,
    pub ball: BallDistribution<T>,
}

impl<T: Scalar, I: SubgradientIntegrand<T>> SmoothedOracle<I, T> {
    pub fn new(inner: I, epsilon: T) -> Result<Self> {
        let ball = BallDistribution::new(inner.dim(), epsilon)?;
        Ok(Self { inner, ball })
    }

    pub fn epsilon(&self) -> T {
        self.ball.epsilon
    }
}

impl<T: Scalar, I: SubgradientIntegrand<T>> StochasticOracle<T> for SmoothedOracle<I, T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sample<R: Rng + ?Sized>(&self, x: &[T], rng: &mut R) -> Result<GradientSample<T>> {
        let xi = self.inner.draw(rng);
        let z = self.ball.sample(rng);
        let u: Vec<T> = x.iter().zip(&z).map(|(&a, &b)| a + b).collect();
        let g = self.inner.subgradient(&u, &xi)?;
        GradientSample::new(clip_to(g, self.inner.subgradient_bound()))
    }

    fn subgradient_bound(&self) -> Option<T> {
        self.inner.subgradient_bound()
    }
}

/// Oracle that samples `ξ` and evaluates the integrand at `x` itself, for
/// problems that are already smooth.
#[derive(Debug, Clone)]
pub struct PlainOracle<I> {
    pub inner: I,
}

impl<T: Scalar, I: SubgradientIntegrand<T>> StochasticOracle<T> for PlainOracle<I> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sample<R: Rng + ?Sized>(&self, x: &[T], rng: &mut R) -> Result<GradientSample<T>> {
        let xi = self.inner.draw(rng);
        GradientSample::new(self.inner.subgradient(x, &xi)?)
    }

    fn subgradient_bound(&self) -> Option<T> {
        self.inner.subgradient_bound()
    }
}

/// One smoothed subgradient at `x`.
pub fn smoothed_subgradient<T, I, R>(
    oracle: &SmoothedOracle<I, T>,
    x: &Point<T>,
    rng: &mut R,
) -> Result<GradientSample<T>>
where
    T: Scalar,
    I: SubgradientIntegrand<T>,
    R: Rng + ?Sized,
{
    oracle.sample(x, rng)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEstimate<T> {
    pub mean: T,
    pub std_error: T,
    pub samples: usize,
}

/// Estimates `f̂(x)` by averaging `F(x + z_i, ξ_i)` over `m` draws.
pub fn smoothed_value_estimate<T, I, R>(
    integrand: &I,
    epsilon: T,
    x: &[T],
    m: usize,
    rng: &mut R,
) -> Result<ValueEstimate<T>>
where
    T: Scalar,
    I: ValueIntegrand<T>,
    R: Rng + ?Sized,
{
    if m == 0 {
        return Err(invalid("value estimate needs at least one sample"));
    }
    if x.len() != integrand.dim() {
        return Err(invalid("point dimension does not match the integrand"));
    }
    let ball = BallDistribution::new(integrand.dim(), epsilon)?;
    let mut mean = T::zero();
    let mut m2 = T::zero();
    let mut u = vec![T::zero(); x.len()];
    for i in 0..m {
        let xi = integrand.draw(rng);
        let z = ball.sample(rng);
        for ((ui, &a), &b) in u.iter_mut().zip(x).zip(&z) {
            *ui = a + b;
        }
        let v = integrand.value(&u, &xi)?;
        let delta = v - mean;
        mean = mean + delta / T::from_usize_lossy(i + 1);
        m2 = m2 + delta * (v - mean);
    }
    let std_error = if m > 1 {
        (m2 / T::from_usize_lossy(m - 1) / T::from_usize_lossy(m)).sqrt()
    } else {
        T::zero()
    };
    Ok(ValueEstimate { mean, std_error, samples: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    struct Linear(Vec<f64>);

    impl SubgradientIntegrand<f64> for Linear {
        type Sample = ();
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn draw<R: Rng + ?Sized>(&self, _rng: &mut R) {}
        fn subgradient(&self, _u: &[f64], _s: &()) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    struct Abs;

    impl SubgradientIntegrand<f64> for Abs {
        type Sample = ();
        fn dim(&self) -> usize {
            1
        }
        fn draw<R: Rng + ?Sized>(&self, _rng: &mut R) {}
        fn subgradient(&self, u: &[f64], _s: &()) -> Result<Vec<f64>> {
            Ok(vec![if u[0] >= 0.0 { 1.0 } else { -1.0 }])
        }
        fn subgradient_bound(&self) -> Option<f64> {
            Some(1.0)
        }
    }

    impl ValueIntegrand<f64> for Abs {
        fn value(&self, u: &[f64], _s: &()) -> Result<f64> {
            Ok(u[0].abs())
        }
    }

    struct Constant;

    impl SubgradientIntegrand<f64> for Constant {
        type Sample = ();
        fn dim(&self) -> usize {
            3
        }
        fn draw<R: Rng + ?Sized>(&self, _rng: &mut R) {}
        fn subgradient(&self, _u: &[f64], _s: &()) -> Result<Vec<f64>> {
            Ok(vec![0.0; 3])
        }
    }

    impl ValueIntegrand<f64> for Constant {
        fn value(&self, _u: &[f64], _s: &()) -> Result<f64> {
            Ok(2.5)
        }
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1usize, 2, 5, 40] {
            let ball = BallDistribution::<f64>::new(n, 0.3).unwrap();
            for _ in 0..20_000 {
                assert!(norm_sq(&ball.sample(&mut rng)).sqrt() <= 0.3);
            }
        }
    }

    #[test]
    fn one_dimensional_second_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ball = BallDistribution::<f64>::new(1, 2.0).unwrap();
        let m = 200_000;
        let samples: Vec<f64> = (0..m).map(|_| ball.sample(&mut rng)[0].powi(2)).collect();
        let mean = samples.iter().sum::<f64>() / m as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!((mean - 4.0 / 3.0).abs() < 4.0 * se);
    }

    #[test]
    fn ball_volume_small_dimensions() {
        assert_relative_eq!(ball_volume_coeff(1), 2.0, epsilon = 1e-15);
        assert_relative_eq!(ball_volume_coeff(2), PI, epsilon = 1e-15);
        assert_relative_eq!(ball_volume_coeff(3), 4.0 * PI / 3.0, epsilon = 1e-15);
        let via_gamma = (100.0 * PI.ln() - ln_gamma(101.0)).exp();
        assert_relative_eq!(ball_volume_coeff(200), via_gamma, max_relative = 1e-10);
    }

    #[test]
    fn lipschitz_values() {
        assert_relative_eq!(smoothing_lipschitz(2, 1.0, 0.5).unwrap(), 8.0 / PI, epsilon = 1e-14);
        assert_relative_eq!(smoothing_lipschitz(3, 1.0, 1.0).unwrap(), 1.5, epsilon = 1e-15);
        assert!(smoothing_lipschitz(0, 1.0, 1.0).is_err());
    }

    #[test]
    fn log_double_factorial_matches_direct_product() {
        for n in [140usize, 149, 150] {
            assert_relative_eq!(ln_double_factorial(n), double_factorial(n).ln(), max_relative = 1e-14);
        }
        let direct = double_factorial(151) / double_factorial(150);
        assert_relative_eq!(double_factorial_ratio(151), direct, max_relative = 1e-12);
    }

    #[test]
    fn growth_rate_limit_is_sqrt_two_over_pi() {
        // Wallis: κ n!!/(n−1)!! ~ sqrt(2n/π) for both parities.
        for n in [4000usize, 4001] {
            let r = kappa(n) * double_factorial_ratio(n) / (n as f64).sqrt();
            assert_relative_eq!(r, (2.0 / PI).sqrt(), max_relative = 2e-4);
        }
    }

    #[test]
    fn linear_function_smoothing_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let oracle = SmoothedOracle::new(Linear(vec![1.0, -2.0]), 0.5).unwrap();
        let x = Point::new(vec![0.1, 0.2]).unwrap();
        for _ in 0..100 {
            let g = smoothed_subgradient(&oracle, &x, &mut rng).unwrap();
            assert_eq!(g.as_slice(), &[1.0, -2.0]);
        }
    }

    #[test]
    fn smoothed_abs_gradient_vanishes_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let oracle = SmoothedOracle::new(Abs, 1.0).unwrap();
        let x = Point::new(vec![0.0]).unwrap();
        let m = 1_000_000;
        let sum: f64 = (0..m).map(|_| oracle.sample(&x, &mut rng).unwrap()[0]).sum();
        // Each draw is ±1, so σ/√m = 1/√m.
        assert!((sum / m as f64).abs() < 3.0 / (m as f64).sqrt());
    }

    #[test]
    fn value_estimates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = smoothed_value_estimate(&Constant, 0.5, &[0.0; 3], 100, &mut rng).unwrap();
        assert_eq!(c.mean, 2.5);
        assert_eq!(c.std_error, 0.0);
        let est = smoothed_value_estimate(&Abs, 1.0, &[0.0], 200_000, &mut rng).unwrap();
        assert!((est.mean - 0.5).abs() < 3.0 * est.std_error);
    }
}
