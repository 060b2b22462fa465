//! Sample-average reference solutions.
//!
//! A fixed sample turns each benchmark into a deterministic monotone
//! variational inequality `0 ∈ F_M(z) + N_X(z)`, which is solved by a
//! projected extragradient method with backtracking. Convergence is certified
//! by the natural residual `‖z − Π(z − F_M(z))‖`.

use log::warn;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::problems::bimatrix::{index_weights, BimatrixProblem};
use crate::problems::network::NetworkProblem;
use crate::problems::projection::{project_capacity, project_simplex, SimplexPair};
use crate::problems::utility::UtilityProblem;
use crate::sa_core::{Point, Projection};
use crate::scalar::{dist_sq, Scalar};
use crate::smoothing::{BallDistribution, SubgradientIntegrand};

/// Smallest admissible sample size.
pub const MIN_SAMPLE_SIZE: usize = 1000;
/// Default sample size.
pub const DEFAULT_SAMPLE_SIZE: usize = 100_000;

/// Draws per parallel work unit; partial sums are combined in order so the
/// result does not depend on thread scheduling.
const CHUNK: usize = 512;

/// Deterministic operator built from a fixed sample.
pub trait SampleAverage<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    fn operator(&self, z: &[T]) -> Result<Vec<T>>;

    fn project(&self, v: &[T]) -> Result<Point<T>>;
}

/// A problem that can draw its own sample-average approximation.
pub trait ReferenceProblem<T: Scalar> {
    type Approximation: SampleAverage<T>;

    fn sample_average<R: Rng + ?Sized>(
        &self,
        sample_size: usize,
        rng: &mut R,
    ) -> Result<Self::Approximation>;

    fn reference_start(&self) -> Point<T>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Target natural residual.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 100_000, tolerance: 1e-8 }
    }
}

/// Reference point with its certificate.
#[derive(Debug, Clone)]
pub struct SaaReference<T> {
    pub point: Point<T>,
    pub residual: f64,
    pub iterations: usize,
    /// False when the budget ran out; `point` is then the best iterate seen.
    pub converged: bool,
    pub sample_size: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn step<T: Scalar>(z: &[T], g: &[T], s: T) -> Vec<T> {
    z.iter().zip(g).map(|(&a, &b)| a - s * b).collect()
}

/// Projected extragradient with backtracking for `0 ∈ F(z) + N_X(z)`.
pub fn solve_projected<T, F, P>(
    operator: F,
    project: P,
    z0: Point<T>,
    options: &SolverOptions,
) -> Result<SaaReference<T>>
where
    T: Scalar,
    F: Fn(&[T]) -> Result<Vec<T>>,
    P: Fn(&[T]) -> Result<Point<T>>,
{
    let mut z = project(&z0)?;
    let mut s = T::one();
    let mut best = (z.clone(), f64::INFINITY);
    for it in 0..options.max_iterations {
        let f = operator(&z)?;
        let natural = project(&step(&z, &f, T::one()))?;
        let residual = dist_sq(&z, &natural).as_f64().sqrt();
        if residual < best.1 {
            best = (z.clone(), residual);
        }
        if residual < options.tolerance {
            return Ok(SaaReference {
                point: z,
                residual,
                iterations: it,
                converged: true,
                sample_size: 0,
            });
        }
        let (zbar, fbar) = loop {
            let zbar = project(&step(&z, &f, s))?;
            let fbar = operator(&zbar)?;
            let df: Vec<f64> = fbar.iter().zip(&f).map(|(a, b)| (*a - *b).as_f64()).collect();
            let dz = dist_sq(&zbar, &z).as_f64().sqrt();
            if s.as_f64() * norm(&df) <= 0.9 * dz || dz == 0.0 {
                break (zbar, fbar);
            }
            s = s * T::lit(0.5);
            if !(s > T::zero()) {
                return Err(invalid("extragradient step underflowed"));
            }
        };
        let _ = zbar;
        z = project(&step(&z, &fbar, s))?;
        s = s * T::lit(1.2);
    }
    warn!(
        "reference solver stopped after {} iterations with residual {:.3e}",
        options.max_iterations, best.1
    );
    Ok(SaaReference {
        point: best.0,
        residual: best.1,
        iterations: options.max_iterations,
        converged: false,
        sample_size: 0,
    })
}

/// Draws the sample, then solves the sample-average problem.
pub fn saa_reference<T, P, R>(
    problem: &P,
    sample_size: usize,
    options: &SolverOptions,
    rng: &mut R,
) -> Result<SaaReference<T>>
where
    T: Scalar,
    P: ReferenceProblem<T>,
    R: Rng + ?Sized,
{
    if sample_size < MIN_SAMPLE_SIZE {
        return Err(invalid(format!(
            "sample size must be at least {MIN_SAMPLE_SIZE}, got {sample_size}"
        )));
    }
    let approx = problem.sample_average(sample_size, rng)?;
    let mut reference = solve_projected(
        |z| approx.operator(z),
        |v| approx.project(v),
        problem.reference_start(),
        options,
    )?;
    reference.sample_size = sample_size;
    Ok(reference)
}

fn antithetic_ball<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    epsilon: T,
    sample_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<T>>> {
    let ball = BallDistribution::new(n, epsilon)?;
    Ok((0..sample_size.div_ceil(2)).map(|_| ball.sample(rng)).collect())
}

/// Smoothed utility problem averaged over antithetic ball draws `±z_j`,
/// with the `ξ` expectation in closed form.
pub struct UtilitySaa<T> {
    problem: UtilityProblem<T>,
    draws: Vec<Vec<T>>,
}

impl<T: Scalar> SampleAverage<T> for UtilitySaa<T> {
    fn dim(&self) -> usize {
        self.problem.n
    }

    fn operator(&self, z: &[T]) -> Result<Vec<T>> {
        let n = self.problem.n;
        let zf: Vec<f64> = z.iter().map(|c| c.as_f64()).collect();
        let partials: Vec<Vec<f64>> = self
            .draws
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = vec![0.0; n];
                for d in chunk {
                    for sign in [1.0, -1.0] {
                        let u: Vec<T> =
                            zf.iter().zip(d).map(|(a, b)| T::lit(a + sign * b.as_f64())).collect();
                        let (_, g) = self.problem.expected_phi(&u);
                        acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    }
                }
                acc
            })
            .collect();
        let mut sum = vec![0.0; n];
        for part in &partials {
            sum.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
        let count = 2.0 * self.draws.len() as f64;
        Ok(sum
            .iter()
            .zip(z)
            .map(|(&s, &zi)| T::lit(s / count) + self.problem.eta * zi)
            .collect())
    }

    fn project(&self, v: &[T]) -> Result<Point<T>> {
        project_simplex(v)
    }
}

impl<T: Scalar> ReferenceProblem<T> for UtilityProblem<T> {
    type Approximation = UtilitySaa<T>;

    fn sample_average<R: Rng + ?Sized>(&self, sample_size: usize, rng: &mut R) -> Result<UtilitySaa<T>> {
        Ok(UtilitySaa {
            problem: self.clone(),
            draws: antithetic_ball(self.n, self.epsilon, sample_size, rng)?,
        })
    }

    fn reference_start(&self) -> Point<T> {
        self.barycenter()
    }
}

/// Smoothed bilinear game averaged over antithetic ball draws in `R^{2n}`.
///
/// Each draw enters only through the mean index `Σ_q q w_q` of the shifted
/// sampling weights, since `(Aᵀw)_j = (Σ_q q w_q + j − 1)/(2n − 1)` for
/// weights summing to one.
pub struct BimatrixSaa<T> {
    problem: BimatrixProblem<T>,
    draws: Vec<Vec<T>>,
}

fn mean_index<T: Scalar>(u: &[T]) -> f64 {
    index_weights(u)
        .iter()
        .enumerate()
        .map(|(q, w)| (q + 1) as f64 * w.as_f64())
        .sum()
}

impl<T: Scalar> SampleAverage<T> for BimatrixSaa<T> {
    fn dim(&self) -> usize {
        2 * self.problem.n
    }

    fn operator(&self, z: &[T]) -> Result<Vec<T>> {
        let n = self.problem.n;
        if z.len() != 2 * n {
            return Err(invalid("bimatrix reference dimension mismatch"));
        }
        let partials: Vec<(f64, f64)> = self
            .draws
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = (0.0, 0.0);
                for d in chunk {
                    for sign in [T::one(), -T::one()] {
                        let u: Vec<T> = z.iter().zip(d).map(|(&a, &b)| a + sign * b).collect();
                        acc.0 += mean_index(&u[..n]);
                        acc.1 += mean_index(&u[n..]);
                    }
                }
                acc
            })
            .collect();
        let (mx, my) = partials.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let count = 2.0 * self.draws.len() as f64;
        let (mx, my) = (mx / count, my / count);
        let denom = (2 * n - 1) as f64;
        let eta = self.problem.eta;
        let mut g = Vec::with_capacity(2 * n);
        g.extend((0..n).map(|j| T::lit((my + j as f64) / denom) + eta * z[j]));
        g.extend((0..n).map(|j| T::lit(-(mx + j as f64) / denom) + eta * z[n + j]));
        Ok(g)
    }

    fn project(&self, v: &[T]) -> Result<Point<T>> {
        SimplexPair { n: self.problem.n }.project(v)
    }
}

impl<T: Scalar> ReferenceProblem<T> for BimatrixProblem<T> {
    type Approximation = BimatrixSaa<T>;

    fn sample_average<R: Rng + ?Sized>(&self, sample_size: usize, rng: &mut R) -> Result<BimatrixSaa<T>> {
        Ok(BimatrixSaa {
            problem: self.clone(),
            draws: antithetic_ball(2 * self.n, self.epsilon, sample_size, rng)?,
        })
    }

    fn reference_start(&self) -> Point<T> {
        Point::from_vec_unchecked(vec![T::one() / T::from_usize_lossy(self.n); 2 * self.n])
    }
}

/// Network problem with `k` replaced by its sample mean.
pub struct NetworkSaa<T> {
    problem: NetworkProblem<T>,
    k_mean: Vec<T>,
}

impl<T: Scalar> SampleAverage<T> for NetworkSaa<T> {
    fn dim(&self) -> usize {
        self.problem.n
    }

    fn operator(&self, z: &[T]) -> Result<Vec<T>> {
        self.problem.subgradient(z, &self.k_mean)
    }

    fn project(&self, v: &[T]) -> Result<Point<T>> {
        project_capacity(v, &self.problem.rows, &self.problem.capacity)
    }
}

impl<T: Scalar> ReferenceProblem<T> for NetworkProblem<T> {
    type Approximation = NetworkSaa<T>;

    fn sample_average<R: Rng + ?Sized>(&self, sample_size: usize, rng: &mut R) -> Result<NetworkSaa<T>> {
        let mut k_mean = vec![T::zero(); self.n];
        for _ in 0..sample_size {
            let k = self.draw(rng);
            k_mean.iter_mut().zip(&k).for_each(|(m, &v)| *m = *m + v);
        }
        let count = T::from_usize_lossy(sample_size);
        k_mean.iter_mut().for_each(|m| *m = *m / count);
        Ok(NetworkSaa { problem: self.clone(), k_mean })
    }

    fn reference_start(&self) -> Point<T> {
        self.origin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::projection::Simplex;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_matches_closed_form() {
        // min ½‖x − c‖² over the simplex has solution Π(c).
        let c = [0.9, 0.4, -0.3, 0.1];
        let expected = project_simplex(&c).unwrap();
        let res = solve_projected(
            |z: &[f64]| Ok(z.iter().zip(&c).map(|(a, b)| a - b).collect()),
            |v: &[f64]| Simplex::new(4).project(v),
            Point::new(vec![0.25; 4]).unwrap(),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(res.converged);
        for (a, b) in res.point.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn unconstrained_quadratic_with_curvature() {
        let h = [4.0, 1.0, 0.25];
        let b = [1.0, -2.0, 0.5];
        let res = solve_projected(
            |z: &[f64]| Ok((0..3).map(|i| h[i] * z[i] - b[i]).collect()),
            |v: &[f64]| Point::new(v.to_vec()),
            Point::new(vec![0.0; 3]).unwrap(),
            &SolverOptions::default(),
        )
        .unwrap();
        for i in 0..3 {
            assert!((res.point[i] - b[i] / h[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn budget_exhaustion_returns_best_iterate() {
        let res = solve_projected(
            |z: &[f64]| Ok(z.iter().map(|a| a - 3.0).collect()),
            |v: &[f64]| Point::new(v.to_vec()),
            Point::new(vec![0.0]).unwrap(),
            &SolverOptions { max_iterations: 1, tolerance: 1e-12 },
        )
        .unwrap();
        assert!(!res.converged);
        assert!(res.residual.is_finite());
    }

    #[test]
    fn small_sample_rejected() {
        let p = BimatrixProblem::<f64>::new(3, 0.01, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(saa_reference(&p, 10, &SolverOptions::default(), &mut rng).is_err());
    }

    #[test]
    fn bimatrix_reference_is_the_vertex() {
        let p = BimatrixProblem::<f64>::new(6, 0.01, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = saa_reference(&p, 2000, &SolverOptions::default(), &mut rng).unwrap();
        assert!(r.converged);
        let target = p.vertex_solution();
        assert!(dist_sq(&r.point, &target) < 1e-12);
    }

    #[test]
    fn references_repeat_for_equal_seeds() {
        let p = BimatrixProblem::<f64>::new(4, 0.2, 0.2).unwrap();
        let a = saa_reference(&p, 2000, &SolverOptions::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = saa_reference(&p, 2000, &SolverOptions::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.point, b.point);
    }
}
