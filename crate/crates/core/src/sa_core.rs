//! Projected stochastic gradient engine.
//!
//! One iteration is `x_{k+1} = Π(x_k − γ_k g_k)` where `g_k` is a sampled
//! (sub)gradient at `x_k`. Saddle-point problems run through the same engine
//! by stacking `z = (x, y)` and sampling the monotone operator
//! `(∇_x L, −∇_y L)`, so descent on `z` is descent in `x` and ascent in `y`.

use std::ops::Deref;

use rand::Rng;

use crate::error::{invalid, Result, SaError};
use crate::problems::project_simplex;
use crate::scalar::{dist_sq, Scalar};

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<T>(Vec<T>);

        impl<T: Scalar> $name<T> {
            /// Wraps `coords`, rejecting non-finite entries.
            pub fn new(coords: Vec<T>) -> Result<Self> {
                if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
                    return Err(invalid(format!(
                        concat!(stringify!($name), " coordinate {} is not finite"),
                        i
                    )));
                }
                Ok(Self(coords))
            }

            #[allow(dead_code)]
            pub(crate) fn from_vec_unchecked(coords: Vec<T>) -> Self {
                Self(coords)
            }

            pub fn zeros(dim: usize) -> Self {
                Self(vec![T::zero(); dim])
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn as_slice(&self) -> &[T] {
                &self.0
            }

            pub fn into_vec(self) -> Vec<T> {
                self.0
            }

            pub fn norm(&self) -> T {
                crate::scalar::norm_sq(&self.0).sqrt()
            }
        }

        impl<T> Deref for $name<T> {
            type Target = [T];

            fn deref(&self) -> &[T] {
                &self.0
            }
        }
    };
}

real_vector!(
    /// A point in the decision space.
    Point
);

real_vector!(
    /// A sampled gradient or subgradient direction.
    GradientSample
);

/// Per-iteration record of a run.
///
/// Record `k` holds the stepsize used in step `k` and the squared distance
/// of the iterate *before* that step to the reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaRunRecord<T> {
    pub iteration: usize,
    pub gamma: T,
    pub squared_error: T,
    /// Theoretical bound on the expected squared error at this iterate, when
    /// the steplength scheme provides one.
    pub bound: Option<T>,
}

/// Result of [`run_sa`].
#[derive(Debug, Clone)]
pub struct SaRun<T> {
    pub records: Vec<SaRunRecord<T>>,
    /// Squared error after the final step.
    pub terminal_squared_error: T,
    pub final_point: Point<T>,
    /// Set when the policy hit its stepsize floor.
    pub clamped: bool,
}

/// A pair of mixed strategies on two unit simplices.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddlePoint<T> {
    pub x: Point<T>,
    pub y: Point<T>,
}

impl<T: Scalar> SaddlePoint<T> {
    pub fn new(x: Point<T>, y: Point<T>) -> Self {
        Self { x, y }
    }

    /// Uniform mixed strategies for both players.
    pub fn barycenter(n: usize) -> Self {
        let w = T::one() / T::from_usize_lossy(n);
        Self {
            x: Point::from_vec_unchecked(vec![w; n]),
            y: Point::from_vec_unchecked(vec![w; n]),
        }
    }

    /// Concatenation `z = (x, y)`.
    pub fn stacked(&self) -> Point<T> {
        let mut z = self.x.as_slice().to_vec();
        z.extend_from_slice(&self.y);
        Point::from_vec_unchecked(z)
    }

    pub fn from_stacked(z: &[T]) -> Result<Self> {
        if z.len() % 2 != 0 {
            return Err(invalid("stacked saddle vector must have even length"));
        }
        let n = z.len() / 2;
        Ok(Self {
            x: Point::new(z[..n].to_vec())?,
            y: Point::new(z[n..].to_vec())?,
        })
    }
}

/// Euclidean projection onto a closed convex set.
pub trait Projection<T: Scalar> {
    fn dim(&self) -> usize;

    fn project(&self, v: &[T]) -> Result<Point<T>>;

    /// Feasibility test with absolute tolerance `tol`.
    fn contains(&self, x: &[T], tol: T) -> bool;
}

/// The identity map (unconstrained problems).
#[derive(Debug, Clone, Copy)]
pub struct Identity {
    pub dim: usize,
}

impl<T: Scalar> Projection<T> for Identity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn project(&self, v: &[T]) -> Result<Point<T>> {
        Point::new(v.to_vec())
    }

    fn contains(&self, x: &[T], _tol: T) -> bool {
        x.len() == self.dim && x.iter().all(|c| c.is_finite())
    }
}

/// Source of sampled (sub)gradients, driven by a caller-owned RNG stream.
pub trait StochasticOracle<T: Scalar> {
    fn dim(&self) -> usize;

    fn sample<R: Rng + ?Sized>(&self, x: &[T], rng: &mut R) -> Result<GradientSample<T>>;

    /// Norm bound `C` on every emitted direction, when the oracle has one.
    fn subgradient_bound(&self) -> Option<T> {
        None
    }
}

impl<T: Scalar, O: StochasticOracle<T> + ?Sized> StochasticOracle<T> for &O {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn sample<R: Rng + ?Sized>(&self, x: &[T], rng: &mut R) -> Result<GradientSample<T>> {
        (**self).sample(x, rng)
    }

    fn subgradient_bound(&self) -> Option<T> {
        (**self).subgradient_bound()
    }
}

/// Stateful producer of the stepsize sequence `γ_0, γ_1, …`.
pub trait SteplengthPolicy<T: Scalar> {
    /// Stepsize for the current iteration; advances the internal counter.
    fn next_gamma(&mut self) -> Result<T>;

    /// Whether the sequence has been clamped at its numerical floor.
    fn is_clamped(&self) -> bool {
        false
    }
}

/// A single projected step `proj(x − γ g)`.
pub fn sa_step<T: Scalar, P: Projection<T> + ?Sized>(
    x: &[T],
    g: &[T],
    gamma: T,
    proj: &P,
) -> Result<Point<T>> {
    if x.len() != g.len() {
        return Err(invalid(format!(
            "point has dimension {} but gradient has {}",
            x.len(),
            g.len()
        )));
    }
    if !(gamma > T::zero()) || !gamma.is_finite() {
        return Err(invalid(format!("stepsize must be positive and finite, got {gamma}")));
    }
    if x.iter().chain(g).any(|c| !c.is_finite()) {
        return Err(invalid("non-finite coordinate in sa_step input"));
    }
    let candidate: Vec<T> = x.iter().zip(g).map(|(&xi, &gi)| xi - gamma * gi).collect();
    proj.project(&candidate)
}

/// One step of the saddle-point scheme.
///
/// `gx` is the sampled x-gradient and `gy` the y-block of the sampled
/// monotone operator, i.e. the *negated* ascent direction, so the update is
/// `x' = Π_X(x − γ gx)`, `y' = Π_Y(y − γ gy)`.
pub fn saddle_step<T: Scalar>(
    state: &SaddlePoint<T>,
    gx: &[T],
    gy: &[T],
    gamma: T,
) -> Result<SaddlePoint<T>> {
    if state.x.dim() != gx.len() || state.y.dim() != gy.len() {
        return Err(invalid("saddle step dimension mismatch"));
    }
    if !(gamma > T::zero()) || !gamma.is_finite() {
        return Err(invalid(format!("stepsize must be positive and finite, got {gamma}")));
    }
    let step = |p: &[T], g: &[T]| -> Vec<T> {
        p.iter().zip(g).map(|(&a, &b)| a - gamma * b).collect()
    };
    Ok(SaddlePoint {
        x: project_simplex(&step(&state.x, gx))?,
        y: project_simplex(&step(&state.y, gy))?,
    })
}

const FEASIBILITY_TOL: f64 = 1e-8;

/// Runs `iterations` projected stochastic gradient steps from `x0`.
///
/// Returns one record per step plus the error after the last step. Every
/// iterate is checked against the projection's target set.
pub fn run_sa<T, O, P, S, R>(
    oracle: &O,
    proj: &P,
    policy: &mut S,
    x0: Point<T>,
    iterations: usize,
    reference: &[T],
    rng: &mut R,
) -> Result<SaRun<T>>
where
    T: Scalar,
    O: StochasticOracle<T> + ?Sized,
    P: Projection<T> + ?Sized,
    S: SteplengthPolicy<T> + ?Sized,
    R: Rng + ?Sized,
{
    if iterations == 0 {
        return Err(invalid("iteration budget must be at least 1"));
    }
    if reference.len() != x0.dim() || oracle.dim() != x0.dim() || proj.dim() != x0.dim() {
        return Err(invalid("x0, reference, oracle and projection dimensions disagree"));
    }
    let tol = T::lit(FEASIBILITY_TOL);
    if !proj.contains(&x0, tol) {
        return Err(invalid("x0 is not feasible"));
    }

    let mut x = x0;
    let mut records = Vec::with_capacity(iterations);
    for k in 0..iterations {
        let gamma = policy.next_gamma()?;
        if !(gamma > T::zero()) || !gamma.is_finite() {
            return Err(SaError::PolicyFailure {
                iteration: k,
                reason: format!("non-positive stepsize {gamma}"),
            });
        }
        records.push(SaRunRecord {
            iteration: k,
            gamma,
            squared_error: dist_sq(&x, reference),
            bound: None,
        });
        let g = oracle.sample(&x, rng)?;
        x = sa_step(&x, &g, gamma, proj)?;
        if !proj.contains(&x, tol) {
            let residual = proj
                .project(&x)
                .map(|p| dist_sq(&x, &p).sqrt().as_f64())
                .unwrap_or(f64::NAN);
            return Err(SaError::Numerical {
                reason: format!("iterate {} left the feasible set", k + 1),
                residual,
            });
        }
    }
    Ok(SaRun {
        records,
        terminal_squared_error: dist_sq(&x, reference),
        final_point: x,
        clamped: policy.is_clamped(),
    })
}

/// Pilot estimate of the noise second moment `ν² ≥ E‖w‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate<T> {
    /// Largest per-probe estimate of `E‖g − E g‖²`.
    pub raw_max: T,
    pub safety_factor: T,
    /// `raw_max · safety_factor`.
    pub nu2: T,
}

/// Estimates `ν²` by sampling `samples` oracle outputs at each probe point,
/// taking the largest empirical `E‖g − ḡ‖²` and inflating it by
/// `safety_factor`.
pub fn estimate_noise_second_moment<T, O, R>(
    oracle: &O,
    probes: &[Point<T>],
    samples: usize,
    safety_factor: T,
    rng: &mut R,
) -> Result<NoiseEstimate<T>>
where
    T: Scalar,
    O: StochasticOracle<T> + ?Sized,
    R: Rng + ?Sized,
{
    if samples < 2 || probes.is_empty() {
        return Err(invalid("noise pilot needs at least one probe and two samples"));
    }
    let dim = oracle.dim();
    let mut raw_max = T::zero();
    for probe in probes {
        // Welford accumulation per coordinate.
        let mut mean = vec![T::zero(); dim];
        let mut m2 = vec![T::zero(); dim];
        for s in 0..samples {
            let g = oracle.sample(probe, rng)?;
            let count = T::from_usize_lossy(s + 1);
            for ((mu, acc), &gi) in mean.iter_mut().zip(m2.iter_mut()).zip(g.iter()) {
                let delta = gi - *mu;
                *mu = *mu + delta / count;
                *acc = *acc + delta * (gi - *mu);
            }
        }
        let denom = T::from_usize_lossy(samples - 1);
        let second_moment = m2.iter().fold(T::zero(), |a, &b| a + b) / denom;
        raw_max = raw_max.max(second_moment);
    }
    Ok(NoiseEstimate {
        raw_max,
        safety_factor,
        nu2: raw_max * safety_factor,
    })
}
