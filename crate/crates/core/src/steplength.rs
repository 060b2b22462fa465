//! Steplength policies: harmonic (HSA), recursive (RSA) and cascading (CSA).
//!
//! The recursive scheme contracts the stepsize every iteration,
//! `γ_k = γ_{k−1}(1 − c γ_{k−1})`. With `c = η/2` and
//! `γ_0 = η e₀ / (2ν²)` it minimises the worst-case error recursion
//! `e_k = (1 − ηγ_{k−1}) e_{k−1} + γ²_{k−1} ν²` over `(0, 1/L]^k`.
//!
//! The cascading scheme keeps the stepsize constant while the transient
//! error still dominates the persistent one, then drops it by `θ`:
//!
//! * Phase I picks the smallest `ℓ` with `D² > γ²θ^{2ℓ}ν² / (1 − q(γθ^ℓ))`
//!   and sets `γ_0 = γθ^ℓ`.
//! * Regime `t` lasts `K_t = max{k ≥ 0 : q_t^k 2^t Π_{j<t} q_j^{K_j} D² > γ_t²ν²/(1 − q_t)}`
//!   iterations, with a minimum of one iteration when the set is `{0}` or
//!   empty.

use crate::bounds::{ln_q_factor, one_minus_q, persistent_error};
use crate::error::{config, domain, invalid, Result};
use crate::sa_core::SteplengthPolicy;
use crate::scalar::Scalar;

/// Smallest stepsize any policy emits; guards against flush-to-zero.
pub fn gamma_floor<T: Scalar>() -> T {
    T::min_positive_value().max(T::lit(1e-300))
}

/// Harmonic stepsize `α/k` for `k ≥ 1`.
pub fn hsa_gamma<T: Scalar>(k: usize, alpha: T) -> Result<T> {
    if k == 0 {
        return Err(invalid("harmonic stepsize is defined for k >= 1"));
    }
    if !(alpha > T::zero()) {
        return Err(invalid("alpha must be positive"));
    }
    Ok(alpha / T::from_usize_lossy(k))
}

/// Harmonic policy. Iteration 0 uses `α`, iteration `k ≥ 1` uses `α/k`.
#[derive(Debug, Clone)]
pub struct HsaPolicy<T> {
    pub alpha: T,
    k: usize,
}

impl<T: Scalar> HsaPolicy<T> {
    pub fn new(alpha: T) -> Result<Self> {
        if !(alpha > T::zero()) || !alpha.is_finite() {
            return Err(config("HSA alpha must be positive"));
        }
        Ok(Self { alpha, k: 0 })
    }
}

impl<T: Scalar> SteplengthPolicy<T> for HsaPolicy<T> {
    fn next_gamma(&mut self) -> Result<T> {
        let g = hsa_gamma(self.k.max(1), self.alpha)?;
        self.k += 1;
        Ok(g)
    }
}

/// Optimal initial stepsize `γ*_0 = η e₀ / (2ν²)`.
///
/// Requires `γ*_0 ≤ 1/L`. When that fails, any `β e₀` with `β < 1` gives a
/// sequence with the same optimality property; see [`rsa_e0_scale`].
pub fn rsa_init<T: Scalar>(eta: T, nu2: T, e0: T, lipschitz: T) -> Result<T> {
    if !(eta > T::zero()) || !(nu2 > T::zero()) || !(lipschitz > T::zero()) {
        return Err(config("eta, nu2 and L must be positive"));
    }
    if !(e0 > T::zero()) {
        return Err(config(format!("initial error e0 must be positive, got {e0}")));
    }
    let gamma0 = eta * e0 / (T::lit(2.0) * nu2);
    if gamma0 > T::one() / lipschitz {
        return Err(config(format!(
            "gamma0 = eta*e0/(2 nu2) = {gamma0} exceeds 1/L = {}; use a smaller e0 (scale by beta < 1)",
            T::one() / lipschitz
        )));
    }
    Ok(gamma0)
}

/// Largest factor `β ∈ (0, 1]` such that `rsa_init(η, ν², β e₀, L)` succeeds.
pub fn rsa_e0_scale<T: Scalar>(eta: T, nu2: T, e0: T, lipschitz: T) -> T {
    let limit = T::lit(2.0) * nu2 / (eta * lipschitz * e0);
    limit.min(T::one())
}

/// Generic recursion step `γ_prev (1 − c γ_prev)`, defined for
/// `0 < γ_prev < 1/c`.
pub fn rsa_next<T: Scalar>(gamma_prev: T, c: T) -> Result<T> {
    if !(c > T::zero()) {
        return Err(domain("contraction coefficient c must be positive"));
    }
    if !(gamma_prev > T::zero()) || !(c * gamma_prev < T::one()) {
        return Err(domain(format!(
            "stepsize {gamma_prev} outside (0, 1/c) = (0, {})",
            T::one() / c
        )));
    }
    Ok(gamma_prev * (T::one() - c * gamma_prev))
}

/// Initial stepsize `η D² / M²` of the nonsmooth recursive scheme; requires
/// `η D² / M² < 1/2`.
pub fn rsa_nonsmooth_init<T: Scalar>(eta: T, diameter: T, m: T) -> Result<T> {
    if !(eta > T::zero()) || !(diameter > T::zero()) || !(m > T::zero()) {
        return Err(config("eta, D and M must be positive"));
    }
    let gamma0 = eta * diameter * diameter / (m * m);
    if !(gamma0 < T::lit(0.5)) {
        return Err(config(format!("eta D^2 / M^2 = {gamma0} must be below 1/2")));
    }
    Ok(gamma0)
}

/// Recursive steplength policy `γ_k = γ_{k−1}(1 − c γ_{k−1})`.
#[derive(Debug, Clone)]
pub struct RsaPolicy<T> {
    pub gamma0: T,
    pub c: T,
    current: T,
    clamped: bool,
}

impl<T: Scalar> RsaPolicy<T> {
    /// Generic recursion with arbitrary `c > 0`, `0 < γ_0 < 1/c`.
    pub fn new(gamma0: T, c: T) -> Result<Self> {
        if !(c > T::zero()) || !(gamma0 > T::zero()) || !(c * gamma0 < T::one()) {
            return Err(config(format!("need c > 0 and 0 < gamma0 < 1/c, got gamma0={gamma0} c={c}")));
        }
        Ok(Self { gamma0, c, current: gamma0, clamped: false })
    }

    /// Optimal smooth scheme: `γ_0 = η e₀/(2ν²)`, `c = η/2`.
    pub fn optimal(eta: T, nu2: T, e0: T, lipschitz: T) -> Result<Self> {
        let gamma0 = rsa_init(eta, nu2, e0, lipschitz)?;
        Self::new(gamma0, eta / T::lit(2.0))
    }

    /// Nonsmooth scheme: `γ_0 = η D²/M²`, `c = η`.
    pub fn nonsmooth(eta: T, diameter: T, m: T) -> Result<Self> {
        let gamma0 = rsa_nonsmooth_init(eta, diameter, m)?;
        Self::new(gamma0, eta)
    }

    /// The stepsize the next call to `next_gamma` returns.
    pub fn current(&self) -> T {
        self.current
    }
}

impl<T: Scalar> SteplengthPolicy<T> for RsaPolicy<T> {
    fn next_gamma(&mut self) -> Result<T> {
        let gamma = self.current;
        let next = rsa_next(gamma, self.c)?;
        let floor = gamma_floor::<T>();
        if next < floor {
            self.clamped = true;
            self.current = floor;
        } else {
            self.current = next;
        }
        Ok(gamma)
    }

    fn is_clamped(&self) -> bool {
        self.clamped
    }
}

/// Parameters of the cascading scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsaParams<T> {
    /// Starting stepsize γ ∈ (0, 2/L), before Phase I reductions.
    pub gamma_init: T,
    /// Reduction factor θ ∈ (0, 1).
    pub theta: T,
    pub eta: T,
    pub lipschitz: T,
    pub nu2: T,
    /// Squared diameter D² of the feasible set.
    pub d2: T,
}

impl<T: Scalar> CsaParams<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: T| v > T::zero() && v.is_finite();
        if !positive(self.eta) || !positive(self.lipschitz) || self.eta > self.lipschitz {
            return Err(config(format!(
                "need 0 < eta <= L, got eta={} L={}",
                self.eta, self.lipschitz
            )));
        }
        if !positive(self.nu2) || !positive(self.d2) {
            return Err(config("nu2 and D^2 must be positive"));
        }
        if !(self.theta > T::zero() && self.theta < T::one()) {
            return Err(config(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        if !(self.gamma_init > T::zero() && self.gamma_init < T::lit(2.0) / self.lipschitz) {
            return Err(config(format!(
                "initial stepsize {} outside (0, 2/L)",
                self.gamma_init
            )));
        }
        Ok(())
    }

    fn persistent(&self, gamma: T) -> T {
        persistent_error(gamma, self.eta, self.lipschitz, self.nu2)
    }
}

/// Outcome of the initialization phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsaPhaseOne<T> {
    /// Number of θ-reductions applied to the initial stepsize.
    pub ell: usize,
    pub gamma0: T,
    pub q0: T,
    /// Length of regime 0.
    pub k0: usize,
}

/// One constant-stepsize regime of a cascading schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsaRegime<T> {
    /// Regime index t.
    pub index: usize,
    /// Global iteration at which the regime starts (`K̄_{t−1}`).
    pub start: usize,
    /// Number of iterations `K_t` in the regime.
    pub length: usize,
    pub gamma: T,
    pub q: T,
    /// `Σ_{j<t} K_j ln q_j`.
    pub ln_cumulative_product: T,
}

/// Mutable state of the cascading scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsaState<T> {
    pub t: usize,
    pub gamma_t: T,
    pub q_t: T,
    /// `K_t`, the length of the active regime.
    pub regime_length: usize,
    /// `Σ_{j<t} K_j ln q_j`, i.e. the log of `Π_{j<t} q_j^{K_j}`.
    pub ln_cumulative_product: T,
    pub iteration_in_regime: usize,
    /// Global index of the first iteration of the active regime.
    pub regime_start: usize,
    /// Set when the stepsize hit [`gamma_floor`].
    pub clamped: bool,
}

impl<T: Scalar> CsaState<T> {
    /// State at the start of regime 0, after Phase I.
    pub fn initial(params: &CsaParams<T>) -> Result<Self> {
        let phase = csa_phase1(params)?;
        Ok(Self {
            t: 0,
            gamma_t: phase.gamma0,
            q_t: phase.q0,
            regime_length: phase.k0,
            ln_cumulative_product: T::zero(),
            iteration_in_regime: 0,
            regime_start: 0,
            clamped: false,
        })
    }

    /// `Π_{j<t} q_j^{K_j}`, which may underflow to zero for large `t`.
    pub fn cumulative_product(&self) -> T {
        self.ln_cumulative_product.exp()
    }

    pub fn regime(&self) -> CsaRegime<T> {
        CsaRegime {
            index: self.t,
            start: self.regime_start,
            length: self.regime_length,
            gamma: self.gamma_t,
            q: self.q_t,
            ln_cumulative_product: self.ln_cumulative_product,
        }
    }

    fn advance(&mut self, params: &CsaParams<T>) -> Result<()> {
        self.ln_cumulative_product = self.ln_cumulative_product
            + T::from_usize_lossy(self.regime_length) * self.q_t.ln();
        self.regime_start = self.regime_start.saturating_add(self.regime_length);
        self.t += 1;
        let mut gamma = self.gamma_t * params.theta;
        let floor = gamma_floor::<T>();
        if gamma < floor {
            gamma = floor;
            self.clamped = true;
        }
        self.gamma_t = gamma;
        self.q_t = T::one() - one_minus_q(gamma, params.eta, params.lipschitz);
        self.iteration_in_regime = 0;
        self.regime_length = csa_regime_length(self, params);
        Ok(())
    }
}

/// `max{k ≥ 0 : k ln q + ln_entry > ln_persistent}`, or `None` when even
/// `k = 0` fails. Saturates at `usize::MAX` when `q` rounds to one.
pub fn raw_regime_length<T: Scalar>(ln_q: T, ln_entry: T, ln_persistent: T) -> Option<usize> {
    let holds = |k: usize| T::from_usize_lossy(k) * ln_q + ln_entry > ln_persistent;
    if !holds(0) {
        return None;
    }
    if !(ln_q < T::zero()) {
        return Some(usize::MAX);
    }
    let ratio = (ln_entry - ln_persistent) / (-ln_q);
    let estimate = ratio.ceil() - T::one();
    let mut k = match estimate.to_f64() {
        Some(v) if v >= 9.0e18 => return Some(usize::MAX),
        Some(v) if v > 0.0 => v as usize,
        _ => 0,
    };
    while k > 0 && !holds(k) {
        k -= 1;
    }
    while holds(k + 1) {
        k += 1;
    }
    Some(k)
}

/// Length `K_t` of the regime described by `state`.
///
/// Uses the entry level `2^t Π_{j<t} q_j^{K_j} D²` in log space. Regimes
/// are at least one iteration long.
pub fn csa_regime_length<T: Scalar>(state: &CsaState<T>, params: &CsaParams<T>) -> usize {
    let ln_entry =
        T::from_usize_lossy(state.t) * T::LN_2() + state.ln_cumulative_product + params.d2.ln();
    let ln_q = (-one_minus_q(state.gamma_t, params.eta, params.lipschitz)).ln_1p();
    let ln_persistent = params.persistent(state.gamma_t).ln();
    raw_regime_length(ln_q, ln_entry, ln_persistent)
        .unwrap_or(0)
        .max(1)
}

const MAX_PHASE_ONE_REDUCTIONS: usize = 100_000;

/// Initialization phase: finds `ℓ`, `γ_0 = γθ^ℓ` and `K_0`.
pub fn csa_phase1<T: Scalar>(params: &CsaParams<T>) -> Result<CsaPhaseOne<T>> {
    params.validate()?;
    let mut gamma = params.gamma_init;
    for ell in 0..MAX_PHASE_ONE_REDUCTIONS {
        if params.d2 > params.persistent(gamma) {
            let q0 = T::one() - one_minus_q(gamma, params.eta, params.lipschitz);
            let state = CsaState {
                t: 0,
                gamma_t: gamma,
                q_t: q0,
                regime_length: 0,
                ln_cumulative_product: T::zero(),
                iteration_in_regime: 0,
                regime_start: 0,
                clamped: false,
            };
            return Ok(CsaPhaseOne {
                ell,
                gamma0: gamma,
                q0,
                k0: csa_regime_length(&state, params),
            });
        }
        gamma = gamma * params.theta;
        if !(gamma > T::zero()) {
            break;
        }
    }
    Err(config("phase I could not bring the persistent error below D^2"))
}

/// Stepsize for global iteration `k` and the state for iteration `k + 1`.
pub fn csa_gamma<T: Scalar>(
    k: usize,
    state: &CsaState<T>,
    params: &CsaParams<T>,
) -> Result<(T, CsaState<T>)> {
    if state.regime_start.checked_add(state.iteration_in_regime) != Some(k) {
        return Err(invalid(format!(
            "cascading state is at iteration {} but k = {k}",
            state.regime_start + state.iteration_in_regime
        )));
    }
    let gamma = state.gamma_t;
    let mut next = *state;
    next.iteration_in_regime += 1;
    if next.iteration_in_regime >= next.regime_length {
        next.advance(params)?;
    }
    Ok((gamma, next))
}

/// Regimes covering the first `iterations` iterations (the last one may
/// extend beyond).
pub fn csa_schedule<T: Scalar>(params: &CsaParams<T>, iterations: usize) -> Result<Vec<CsaRegime<T>>> {
    let mut state = CsaState::initial(params)?;
    let mut out = vec![state.regime()];
    while state.regime_start.saturating_add(state.regime_length) < iterations {
        state.advance(params)?;
        out.push(state.regime());
    }
    Ok(out)
}

/// First `regimes` regimes of a cascading schedule, regardless of length.
pub fn csa_regimes<T: Scalar>(params: &CsaParams<T>, regimes: usize) -> Result<Vec<CsaRegime<T>>> {
    let mut state = CsaState::initial(params)?;
    let mut out = Vec::with_capacity(regimes);
    for _ in 0..regimes {
        out.push(state.regime());
        state.advance(params)?;
    }
    Ok(out)
}

/// Cascading steplength policy.
#[derive(Debug, Clone)]
pub struct CsaPolicy<T> {
    params: CsaParams<T>,
    state: CsaState<T>,
    k: usize,
}

impl<T: Scalar> CsaPolicy<T> {
    pub fn new(params: CsaParams<T>) -> Result<Self> {
        let state = CsaState::initial(&params)?;
        Ok(Self { params, state, k: 0 })
    }

    pub fn params(&self) -> &CsaParams<T> {
        &self.params
    }

    pub fn state(&self) -> &CsaState<T> {
        &self.state
    }
}

impl<T: Scalar> SteplengthPolicy<T> for CsaPolicy<T> {
    fn next_gamma(&mut self) -> Result<T> {
        let (gamma, next) = csa_gamma(self.k, &self.state, &self.params)?;
        self.state = next;
        self.k += 1;
        Ok(gamma)
    }

    fn is_clamped(&self) -> bool {
        self.state.clamped
    }
}

/// `ln q(γ)` re-exported for schedule diagnostics.
pub fn csa_ln_q<T: Scalar>(gamma: T, params: &CsaParams<T>) -> Result<T> {
    ln_q_factor(gamma, params.eta, params.lipschitz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base() -> CsaParams<f64> {
        CsaParams { gamma_init: 0.5, theta: 0.5, eta: 1.0, lipschitz: 2.0, nu2: 1.0, d2: 1.0 }
    }

    #[test]
    fn hsa_values() {
        assert_eq!(hsa_gamma(1, 1.0).unwrap(), 1.0);
        assert_eq!(hsa_gamma(4, 1.0).unwrap(), 0.25);
        assert_eq!(hsa_gamma(2, 0.5).unwrap(), 0.25);
        assert!(hsa_gamma(0, 1.0).is_err());
    }

    #[test]
    fn hsa_policy_uses_alpha_at_iteration_zero() {
        let mut p = HsaPolicy::new(0.5).unwrap();
        let g: Vec<f64> = (0..4).map(|_| p.next_gamma().unwrap()).collect();
        assert_eq!(g, vec![0.5, 0.5, 0.25, 0.5 / 3.0]);
    }

    #[test]
    fn rsa_init_values() {
        assert_eq!(rsa_init(0.5, 1.0, 1.0, 1.0).unwrap(), 0.25);
        assert_eq!(rsa_init(1.0, 1.0, 1.0, 2.0).unwrap(), 0.5);
        assert!(rsa_init(1.0, 0.5, 0.0, 2.0).is_err());
        let err = rsa_init(1.0, 1.0, 4.0, 2.0).unwrap_err();
        assert!(err.to_string().contains("smaller e0"));
    }

    #[test]
    fn rsa_e0_scale_reaches_boundary() {
        let beta = rsa_e0_scale(1.0, 1.0, 4.0, 2.0);
        assert_relative_eq!(rsa_init(1.0, 1.0, beta * 4.0, 2.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(rsa_e0_scale(1.0, 1.0, 0.5, 2.0), 1.0);
    }

    #[test]
    fn rsa_next_values() {
        assert_eq!(rsa_next(0.25, 0.25).unwrap(), 0.234375);
        let tiny = 1e-200;
        let next = rsa_next(tiny, 3.0).unwrap();
        assert!(next <= tiny && next > 0.0);
        assert!(rsa_next(4.0, 0.25).is_err());
        assert!(rsa_next(0.0, 0.25).is_err());
    }

    #[test]
    fn rsa_nonsmooth_values() {
        assert_relative_eq!(rsa_nonsmooth_init(1.0, 2f64.sqrt(), 4.0).unwrap(), 0.125, epsilon = 1e-15);
        assert!(rsa_nonsmooth_init(1.0, 1.0, 1.0).is_err());
        assert!(rsa_nonsmooth_init(2.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn rsa_policy_decays_for_a_million_steps() {
        let mut p = RsaPolicy::new(0.5, 0.5).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..1_000_000 {
            let g = p.next_gamma().unwrap();
            assert!(g > 0.0 && g < prev);
            prev = g;
        }
        assert!(!p.is_clamped());
        assert!(prev < 1e-5);
    }

    #[test]
    fn rsa_policy_clamps_at_floor() {
        let mut p = RsaPolicy::new(1e-300, 1e299).unwrap();
        for _ in 0..3 {
            assert!(p.next_gamma().unwrap() >= 1e-300);
        }
        assert!(p.is_clamped());
    }

    #[test]
    fn phase_one_without_reduction() {
        let phase = csa_phase1(&base()).unwrap();
        assert_eq!(phase.ell, 0);
        assert_eq!(phase.gamma0, 0.5);
    }

    #[test]
    fn phase_one_k0_worked_instance() {
        let params = CsaParams { gamma_init: 0.1, ..base() };
        let phase = csa_phase1(&params).unwrap();
        assert_eq!(phase.ell, 0);
        assert_relative_eq!(phase.q0, 0.82, epsilon = 1e-15);
        assert_eq!(phase.k0, 14);
    }

    #[test]
    fn phase_one_reduces_for_tiny_diameter() {
        let params = CsaParams { d2: 0.01, ..base() };
        let phase = csa_phase1(&params).unwrap();
        // Brute force over j.
        let mut j = 0;
        loop {
            let g = 0.5 * 0.5f64.powi(j);
            let q = 1.0 - g * (2.0 - 2.0 * g);
            if 0.01 > g * g / (1.0 - q) {
                break;
            }
            j += 1;
        }
        assert_eq!(phase.ell, j as usize);
        assert!(phase.ell > 0);
        assert_relative_eq!(phase.gamma0, 0.5 * 0.5f64.powi(j), epsilon = 1e-15);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(csa_phase1(&CsaParams { theta: 1.0, ..base() }).is_err());
        assert!(csa_phase1(&CsaParams { gamma_init: 1.0, ..base() }).is_err());
        assert!(csa_phase1(&CsaParams { eta: 3.0, ..base() }).is_err());
    }

    #[test]
    fn gamma_constant_within_regime_and_drops_by_theta() {
        let params = CsaParams { gamma_init: 0.1, ..base() };
        let mut policy = CsaPolicy::new(params).unwrap();
        let gammas: Vec<f64> = (0..200).map(|_| policy.next_gamma().unwrap()).collect();
        assert!(gammas[..14].iter().all(|&g| g == 0.1));
        assert_eq!(gammas[14], 0.05);
        assert!(gammas.windows(2).all(|w| w[1] <= w[0]));
        for w in gammas.windows(2) {
            assert!(w[1] == w[0] || w[1] == w[0] * 0.5);
        }
    }

    #[test]
    fn csa_gamma_rejects_inconsistent_k() {
        let params = base();
        let state = CsaState::initial(&params).unwrap();
        assert!(csa_gamma(3, &state, &params).is_err());
        assert!(csa_gamma(0, &state, &params).is_ok());
    }

    #[test]
    fn schedule_covers_requested_iterations() {
        let params = CsaParams { gamma_init: 0.1, ..base() };
        let sched = csa_schedule(&params, 1000).unwrap();
        let last = sched.last().unwrap();
        assert!(last.start + last.length >= 1000);
        for w in sched.windows(2) {
            assert_eq!(w[1].start, w[0].start + w[0].length);
            assert_relative_eq!(w[1].gamma, w[0].gamma * 0.5, epsilon = 1e-18);
        }
    }

    #[test]
    fn raw_regime_length_empty_and_saturating() {
        assert_eq!(raw_regime_length(-0.1f64, 0.0, 1.0), None);
        assert_eq!(raw_regime_length(0.0f64, 1.0, 0.0), Some(usize::MAX));
        assert_eq!(raw_regime_length(-1.0f64, 2.5, 0.0), Some(2));
    }
}
