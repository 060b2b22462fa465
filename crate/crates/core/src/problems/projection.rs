//! Euclidean projections onto the feasible sets of the benchmark problems.

use crate::error::{invalid, Result, SaError};
use crate::sa_core::{Point, Projection};
use crate::scalar::{dot, norm_sq, Scalar};

/// Projection onto `{x ≥ 0, Σ x_i = 1}` by sort-and-threshold.
pub fn project_simplex<T: Scalar>(v: &[T]) -> Result<Point<T>> {
    if v.is_empty() {
        return Err(invalid("cannot project an empty vector onto the simplex"));
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err(invalid("non-finite coordinate in simplex projection"));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let mut cumsum = T::zero();
    let mut tau = T::zero();
    for (j, &u) in sorted.iter().enumerate() {
        cumsum = cumsum + u;
        let candidate = (cumsum - T::one()) / T::from_usize_lossy(j + 1);
        if u - candidate > T::zero() {
            tau = candidate;
        } else {
            break;
        }
    }
    Ok(Point::from_vec_unchecked(
        v.iter().map(|&c| (c - tau).max(T::zero())).collect(),
    ))
}

fn simplex_contains<T: Scalar>(x: &[T], tol: T) -> bool {
    let sum = x.iter().fold(T::zero(), |a, &b| a + b);
    x.iter().all(|&c| c.is_finite() && c >= -tol) && (sum - T::one()).abs() <= tol
}

/// The unit simplex in `R^n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Simplex {
    pub n: usize,
}

impl Simplex {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl<T: Scalar> Projection<T> for Simplex {
    fn dim(&self) -> usize {
        self.n
    }

    fn project(&self, v: &[T]) -> Result<Point<T>> {
        if v.len() != self.n {
            return Err(invalid(format!("expected dimension {}, got {}", self.n, v.len())));
        }
        project_simplex(v)
    }

    fn contains(&self, x: &[T], tol: T) -> bool {
        x.len() == self.n && simplex_contains(x, tol)
    }
}

/// Product of two unit simplices acting on the stacked vector `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimplexPair {
    pub n: usize,
}

impl<T: Scalar> Projection<T> for SimplexPair {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn project(&self, v: &[T]) -> Result<Point<T>> {
        if v.len() != 2 * self.n {
            return Err(invalid(format!("expected dimension {}, got {}", 2 * self.n, v.len())));
        }
        let mut out = project_simplex(&v[..self.n])?.into_vec();
        out.extend(project_simplex(&v[self.n..])?.into_vec());
        Ok(Point::from_vec_unchecked(out))
    }

    fn contains(&self, x: &[T], tol: T) -> bool {
        x.len() == 2 * self.n
            && simplex_contains(&x[..self.n], tol)
            && simplex_contains(&x[self.n..], tol)
    }
}

const DYKSTRA_MAX_CYCLES: usize = 200_000;

fn dykstra_tolerance<T: Scalar>() -> T {
    T::lit(1e-10).max(T::epsilon() * T::lit(100.0))
}

fn capacity_feasible<T: Scalar>(x: &[T], rows: &[Vec<T>], capacity: &[T], tol: T) -> bool {
    x.iter().all(|&c| c.is_finite() && c >= -tol)
        && rows.iter().zip(capacity).all(|(a, &c)| dot(a, x) <= c + tol)
}

/// Projection onto `{x ≥ 0, A x ≤ C}` by Dykstra's alternating projections
/// over the halfspaces `a_l·x ≤ C_l` and the nonnegative orthant.
///
/// `rows` holds the rows `a_l` of `A`. Stops when one full cycle moves the
/// iterate by less than `1e−10` (max norm) and the iterate violates no
/// constraint by more than that.
pub fn project_capacity<T: Scalar>(v: &[T], rows: &[Vec<T>], capacity: &[T]) -> Result<Point<T>> {
    if rows.len() != capacity.len() {
        return Err(invalid("capacity vector length must equal the number of rows"));
    }
    if rows.iter().any(|r| r.len() != v.len()) {
        return Err(invalid("constraint row length must equal the point dimension"));
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err(invalid("non-finite coordinate in capacity projection"));
    }
    if capacity.iter().any(|&c| c < T::zero()) {
        return Err(invalid("capacities must be nonnegative"));
    }
    if capacity_feasible(v, rows, capacity, T::zero()) {
        return Ok(Point::from_vec_unchecked(v.to_vec()));
    }
    let norms: Vec<T> = rows.iter().map(|r| norm_sq(r)).collect();
    let n = v.len();
    let tol = dykstra_tolerance::<T>();
    let mut x = v.to_vec();
    let mut increments = vec![vec![T::zero(); n]; rows.len() + 1];
    let mut y = vec![T::zero(); n];
    let mut change = T::infinity();
    for _ in 0..DYKSTRA_MAX_CYCLES {
        let start = x.clone();
        for (l, (a, &c)) in rows.iter().zip(capacity).enumerate() {
            let p = &mut increments[l];
            for i in 0..n {
                y[i] = x[i] + p[i];
            }
            let excess = dot(a, &y) - c;
            let shift = if excess > T::zero() && norms[l] > T::zero() {
                excess / norms[l]
            } else {
                T::zero()
            };
            for i in 0..n {
                x[i] = y[i] - shift * a[i];
                p[i] = y[i] - x[i];
            }
        }
        let p = &mut increments[rows.len()];
        for i in 0..n {
            y[i] = x[i] + p[i];
            x[i] = y[i].max(T::zero());
            p[i] = y[i] - x[i];
        }
        change = x
            .iter()
            .zip(&start)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        if change < tol && capacity_feasible(&x, rows, capacity, tol) {
            return Ok(Point::from_vec_unchecked(x));
        }
    }
    Err(SaError::Numerical {
        reason: "Dykstra projection did not converge".into(),
        residual: change.as_f64(),
    })
}

/// The capacity polytope `{x ≥ 0, A x ≤ C}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityPolytope<T> {
    pub rows: Vec<Vec<T>>,
    pub capacity: Vec<T>,
}

impl<T: Scalar> CapacityPolytope<T> {
    pub fn new(rows: Vec<Vec<T>>, capacity: Vec<T>) -> Result<Self> {
        if rows.is_empty() || rows.len() != capacity.len() {
            return Err(invalid("need one capacity per constraint row"));
        }
        let n = rows[0].len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(invalid("constraint rows must share a positive length"));
        }
        Ok(Self { rows, capacity })
    }
}

impl<T: Scalar> Projection<T> for CapacityPolytope<T> {
    fn dim(&self) -> usize {
        self.rows[0].len()
    }

    fn project(&self, v: &[T]) -> Result<Point<T>> {
        project_capacity(v, &self.rows, &self.capacity)
    }

    fn contains(&self, x: &[T], tol: T) -> bool {
        x.len() == self.dim() && capacity_feasible(x, &self.rows, &self.capacity, tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simplex_examples() {
        assert_eq!(project_simplex(&[0.5, 0.5]).unwrap().as_slice(), &[0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(project_simplex(&[0.0, 0.0]).unwrap().as_slice(), &[0.5, 0.5]);
        assert!(project_simplex::<f64>(&[]).is_err());
    }

    #[test]
    fn capacity_examples() {
        let rows = vec![vec![1.0]];
        assert_eq!(project_capacity(&[2.0], &rows, &[0.5]).unwrap().as_slice(), &[0.5]);
        assert_eq!(project_capacity(&[0.2], &rows, &[0.5]).unwrap().as_slice(), &[0.2]);
        assert_eq!(project_capacity(&[-1.0], &rows, &[0.5]).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn capacity_projection_of_corner_case() {
        // x1 + x2 ≤ 1 from (1, 1): projection is (0.5, 0.5).
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 1.0]];
        let p = project_capacity::<f64>(&[1.0, 1.0], &rows, &[1.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-9 && (p[1] - 0.5).abs() < 1e-9);
        // Orthant and halfspace both active.
        let p = project_capacity::<f64>(&[2.0, -3.0], &rows, &[1.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-9 && p[1].abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn simplex_projection_is_feasible_and_idempotent(v in prop::collection::vec(-5.0f64..5.0, 1..30)) {
            let p = project_simplex(&v).unwrap();
            prop_assert!(simplex_contains(&p, 1e-12));
            let q = project_simplex(&p).unwrap();
            for (a, b) in p.iter().zip(q.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn simplex_projection_satisfies_obtuse_angle(
            v in prop::collection::vec(-5.0f64..5.0, 3),
            w in prop::collection::vec(0.0f64..1.0, 3),
        ) {
            let p = project_simplex(&v).unwrap();
            let s: f64 = w.iter().sum();
            prop_assume!(s > 1e-6);
            let y: Vec<f64> = w.iter().map(|c| c / s).collect();
            let inner: f64 = (0..3).map(|i| (v[i] - p[i]) * (y[i] - p[i])).sum();
            prop_assert!(inner <= 1e-9);
        }
    }
}
