//! Closed-form error quantities behind the recursive and cascading schemes.
//!
//! With constant stepsize `γ ∈ (0, 2/L)` the expected squared error obeys
//! `E_{k+1} ≤ q(γ) E_k + γ²ν²` with contraction `q(γ) = 1 − ηγ(2 − γL)`,
//! which unrolls into a geometrically decaying *transient* term and a
//! *persistent* floor `γ²ν²/(1 − q(γ))`.

use crate::error::{config, domain, Result};
use crate::scalar::Scalar;
use crate::steplength::CsaRegime;

/// Problem constants entering the error bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams<T> {
    /// Strong-convexity modulus η.
    pub eta: T,
    /// Lipschitz constant L of the gradient.
    pub lipschitz: T,
    /// Noise second-moment bound ν².
    pub nu2: T,
    /// Initial error e₀ ≥ E‖x₀ − x*‖².
    pub e0: T,
    /// Squared diameter D² of the feasible set.
    pub d2: T,
}

impl<T: Scalar> BoundParams<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: T| v > T::zero() && v.is_finite();
        if !positive(self.eta) || !positive(self.lipschitz) || self.eta > self.lipschitz {
            return Err(config(format!(
                "need 0 < eta <= L, got eta={} L={}",
                self.eta, self.lipschitz
            )));
        }
        if !positive(self.nu2) || !positive(self.e0) || !positive(self.d2) {
            return Err(config("nu2, e0 and D^2 must be positive"));
        }
        Ok(())
    }
}

/// `1 − q(γ) = ηγ(2 − γL)`, evaluated without cancellation.
pub(crate) fn one_minus_q<T: Scalar>(gamma: T, eta: T, lipschitz: T) -> T {
    eta * gamma * (T::lit(2.0) - gamma * lipschitz)
}

fn check_step_domain<T: Scalar>(gamma: T, lipschitz: T) -> Result<()> {
    let upper = T::lit(2.0) / lipschitz;
    if !(gamma > T::zero() && gamma < upper) {
        return Err(domain(format!("stepsize {gamma} outside (0, 2/L) = (0, {upper})")));
    }
    Ok(())
}

/// Per-step contraction factor `q(γ) = 1 − ηγ(2 − γL)` for `γ ∈ (0, 2/L)`.
pub fn q_factor<T: Scalar>(gamma: T, eta: T, lipschitz: T) -> Result<T> {
    check_step_domain(gamma, lipschitz)?;
    Ok(T::one() - one_minus_q(gamma, eta, lipschitz))
}

/// `ln q(γ)` computed as `ln_1p(−(1 − q))`.
pub fn ln_q_factor<T: Scalar>(gamma: T, eta: T, lipschitz: T) -> Result<T> {
    check_step_domain(gamma, lipschitz)?;
    Ok((-one_minus_q(gamma, eta, lipschitz)).ln_1p())
}

/// One step of the worst-case error recursion
/// `e_k = (1 − ηγ_{k−1}) e_{k−1} + γ²_{k−1} ν²`.
pub fn e_k_recursion<T: Scalar>(e_prev: T, gamma_prev: T, eta: T, nu2: T) -> Result<T> {
    if e_prev < T::zero() || gamma_prev < T::zero() {
        return Err(domain("error and stepsize must be nonnegative"));
    }
    if !(eta * gamma_prev < T::one()) {
        return Err(domain(format!(
            "recursion needs eta*gamma < 1, got {}",
            eta * gamma_prev
        )));
    }
    Ok((T::one() - eta * gamma_prev) * e_prev + gamma_prev * gamma_prev * nu2)
}

/// `e_k(γ_0, …, γ_{k−1})` by folding [`e_k_recursion`] from `e0`.
pub fn e_k<T: Scalar>(gammas: &[T], e0: T, eta: T, nu2: T) -> Result<T> {
    gammas
        .iter()
        .try_fold(e0, |e, &g| e_k_recursion(e, g, eta, nu2))
}

/// Transient `q(γ)^k e₀` and persistent `γ²ν²/(1 − q(γ))` error terms at
/// constant stepsize.
pub fn transient_persistent<T: Scalar>(
    k: usize,
    gamma: T,
    params: &BoundParams<T>,
) -> Result<(T, T)> {
    let ln_q = ln_q_factor(gamma, params.eta, params.lipschitz)?;
    let transient = (T::from_usize_lossy(k) * ln_q).exp() * params.e0;
    Ok((transient, persistent_error(gamma, params.eta, params.lipschitz, params.nu2)))
}

/// Persistent error `γ²ν²/(1 − q(γ)) = γν²/(η(2 − γL))`.
pub fn persistent_error<T: Scalar>(gamma: T, eta: T, lipschitz: T, nu2: T) -> T {
    gamma * gamma * nu2 / one_minus_q(gamma, eta, lipschitz)
}

/// Per-iteration upper bound for a cascading schedule.
///
/// Iterate `k` inside regime `t` (which starts at `K̄_{t−1}`) is bounded by
/// `q_t^{k−K̄_{t−1}} 2^t Π_{j<t} q_j^{K_j} D² + γ_t²ν²/(1 − q_t)`. The
/// transient factor is accumulated in log space. Iterations past the last
/// regime in `schedule` are not covered, so the output may be shorter than
/// `iterations`.
pub fn csa_bound_trajectory<T: Scalar>(
    schedule: &[CsaRegime<T>],
    params: &BoundParams<T>,
    iterations: usize,
) -> Vec<T> {
    let ln2 = T::LN_2();
    let ln_d2 = params.d2.ln();
    let mut out = Vec::with_capacity(iterations);
    for regime in schedule {
        if out.len() >= iterations {
            break;
        }
        let persistent = persistent_error(regime.gamma, params.eta, params.lipschitz, params.nu2);
        let ln_entry =
            T::from_usize_lossy(regime.index) * ln2 + regime.ln_cumulative_product + ln_d2;
        let ln_q = regime.q.ln();
        let len = regime.length.min(iterations - out.len());
        for i in 0..len {
            let transient = (ln_entry + T::from_usize_lossy(i) * ln_q).exp();
            out.push(transient + persistent);
        }
    }
    out
}

/// Recursive-scheme bound `(2ν²/η) γ*_k` for each stepsize.
pub fn rsa_bound_trajectory<T: Scalar>(gammas: &[T], eta: T, nu2: T) -> Vec<T> {
    let scale = T::lit(2.0) * nu2 / eta;
    gammas.iter().map(|&g| scale * g).collect()
}

/// Nonsmooth recursive-scheme bound `(M²/η) γ*_k`.
pub fn rsa_nonsmooth_bound_trajectory<T: Scalar>(gammas: &[T], eta: T, m2: T) -> Vec<T> {
    let scale = m2 / eta;
    gammas.iter().map(|&g| scale * g).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> BoundParams<f64> {
        BoundParams { eta: 1.0, lipschitz: 2.0, nu2: 1.0, e0: 1.0, d2: 1.0 }
    }

    #[test]
    fn q_factor_hand_values() {
        assert_eq!(q_factor(0.5, 1.0, 2.0).unwrap(), 0.5);
        assert!(1.0 - q_factor(1e-12, 1.0, 2.0).unwrap() < 1e-11);
        for &(eta, l) in &[(0.3, 4.0), (1.0, 1.5), (0.01, 10.0)] {
            assert_relative_eq!(q_factor(1.0 / l, eta, l).unwrap(), 1.0 - eta / l, epsilon = 1e-15);
        }
    }

    #[test]
    fn q_factor_domain() {
        assert!(q_factor(0.0, 1.0, 2.0).is_err());
        assert!(q_factor(1.0, 1.0, 2.0).is_err());
        assert!(q_factor(-0.1, 1.0, 2.0).is_err());
    }

    #[test]
    fn e_k_recursion_hand_value() {
        assert_eq!(e_k_recursion(1.0, 0.25, 0.5, 1.0).unwrap(), 0.9375);
        assert_eq!(e_k_recursion(0.7, 0.0, 0.5, 1.0).unwrap(), 0.7);
        assert!(e_k_recursion(1.0, 2.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn transient_persistent_values() {
        let (t0, p) = transient_persistent(0, 0.5, &params()).unwrap();
        assert_eq!(t0, 1.0);
        assert_relative_eq!(p, 0.5, epsilon = 1e-15);
        // Simplified form γν²/(η(2 − γL)).
        assert_relative_eq!(p, 0.5 * 1.0 / (1.0 * (2.0 - 0.5 * 2.0)), epsilon = 1e-15);
    }

    #[test]
    fn persistent_is_increasing_on_grid() {
        let p = params();
        let upper = 2.0 / p.lipschitz;
        let grid: Vec<f64> = (1..1000).map(|i| upper * i as f64 / 1000.0).collect();
        let values: Vec<f64> = grid
            .iter()
            .map(|&g| transient_persistent(3, g, &p).unwrap().1)
            .collect();
        assert!(values.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn constant_step_sum_matches_direct_recursion() {
        let p = BoundParams { eta: 0.4, lipschitz: 3.0, nu2: 0.7, e0: 2.0, d2: 2.0 };
        let gamma = 0.3;
        let q: f64 = q_factor(gamma, p.eta, p.lipschitz).unwrap();
        let mut direct = p.e0;
        for k in 1..=200 {
            direct = q * direct + gamma * gamma * p.nu2;
            let (t, pers) = transient_persistent(k, gamma, &p).unwrap();
            // E_k = q^k e0 + γ²ν²(1 − q^k)/(1 − q) ≤ transient + persistent.
            let closed = t + pers * (1.0 - q.powi(k as i32));
            assert_relative_eq!(direct, closed, max_relative = 1e-12);
            assert!(direct <= t + pers);
        }
    }

    #[test]
    fn rsa_bound_values() {
        let b = rsa_bound_trajectory(&[0.25, 0.234375], 0.5, 1.0);
        assert_eq!(b, vec![1.0, 0.9375]);
        assert_eq!(rsa_nonsmooth_bound_trajectory(&[0.125], 1.0, 16.0), vec![2.0]);
    }

    #[test]
    fn works_in_single_precision() {
        let q: f32 = q_factor(0.5f32, 1.0, 2.0).unwrap();
        assert_eq!(q, 0.5);
        assert_eq!(e_k_recursion(1.0f32, 0.25, 0.5, 1.0).unwrap(), 0.9375);
    }
}
