//! The augmented absorbing-state process `S_k = [H_k, X_kᵀ]ᵀ`.
//!
//! `H_k` is the remaining horizon. A state is absorbing once the horizon has
//! run out or `X_k` has left the safe set; absorbing states map to themselves
//! and earn nothing. The binary reward pays exactly `1` at the unique step
//! whose horizon lies in `[0, Δt)`, so the undiscounted return of a path is the
//! product of the safety indicators along it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::sde::{draw_increment, euler_maruyama_in_place, smoothed_payoff, ControlSystem, StepBuffers};

/// Relative slack on horizon comparisons. Horizons are produced by repeated
/// subtraction of `dt`, so a horizon meant to be `k·dt` can land a few ulps on
/// either side of it.
const HORIZON_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    /// Remaining horizon in seconds.
    pub h: f64,
    pub x: Vec<f64>,
}

impl AugmentedState {
    pub fn new(h: f64, x: Vec<f64>) -> Self {
        Self { h, x }
    }

    /// Network input `[h, x₁, …, xₙ]`.
    pub fn to_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.x.len() + 1);
        v.push(self.h);
        v.extend_from_slice(&self.x);
        v
    }

    pub fn write_input(&self, out: &mut [f64]) {
        out[0] = self.h;
        out[1..].copy_from_slice(&self.x);
    }

    pub fn dim(&self) -> usize {
        self.x.len() + 1
    }
}

/// How per-step rewards are computed along a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardKind {
    /// `r(s) = 1[h ∈ [0,Δt)]·1[s ∉ S_abs]`.
    Binary,
    /// `r_ε(s) = r(s)·l_ε(x)`.
    Smoothed { eps: f64 },
    /// `r(s) + c·margin(x)`.
    Shaped { coeff: f64 },
}

/// One stored step `(s, a, r, s′, terminal)`; `terminal ⇔ s′ ∈ S_abs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: AugmentedState,
    pub action: usize,
    pub reward: f64,
    pub next: AugmentedState,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
    /// Undiscounted return `Σ r_k`.
    pub ret: f64,
    /// Some visited state left `C` while the horizon was still running.
    pub unsafe_flag: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// The augmented process for a system discretized with step `dt`.
#[derive(Debug)]
pub struct AugmentedMdp<'a, S: ?Sized> {
    pub system: &'a S,
    pub dt: f64,
}

impl<S: ?Sized> Clone for AugmentedMdp<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S: ?Sized> Copy for AugmentedMdp<'_, S> {}

impl<'a, S: ControlSystem + ?Sized> AugmentedMdp<'a, S> {
    pub fn new(system: &'a S, dt: f64) -> Self {
        assert!(dt > 0.0, "time step must be positive");
        Self { system, dt }
    }

    fn slack(&self) -> f64 {
        self.dt * HORIZON_SLACK
    }

    /// Horizon has expired: `h < 0`.
    pub fn horizon_expired(&self, h: f64) -> bool {
        h < -self.slack()
    }

    /// `h ∈ G = [0, Δt)`.
    pub fn in_final_window(&self, h: f64) -> bool {
        let tol = self.slack();
        h >= -tol && h < self.dt - tol
    }

    /// Number of grid steps `N(τ) = ⌊τ/Δt⌋`.
    pub fn horizon_steps(&self, tau: f64) -> usize {
        if tau < 0.0 {
            return 0;
        }
        (tau / self.dt + HORIZON_SLACK).floor() as usize
    }

    pub fn is_absorbing(&self, s: &AugmentedState) -> bool {
        self.horizon_expired(s.h) || !self.system.is_safe(&s.x)
    }

    /// One transition of the augmented dynamics; absorbing states are fixed
    /// points.
    pub fn step(&self, s: &AugmentedState, u: &[f64], dw: &[f64]) -> Result<AugmentedState> {
        let n = self.system.state_dim();
        if dw.len() != n {
            return Err(Error::DimensionMismatch { context: "noise increment", expected: n, actual: dw.len() });
        }
        if s.x.len() != n {
            return Err(Error::DimensionMismatch { context: "state", expected: n, actual: s.x.len() });
        }
        let mut next = s.clone();
        if !self.is_absorbing(s) {
            self.advance(&mut next, u, dw, &mut StepBuffers::new(n));
        }
        Ok(next)
    }

    /// Unchecked non-absorbing transition, in place.
    pub(crate) fn advance(&self, s: &mut AugmentedState, u: &[f64], dw: &[f64], buf: &mut StepBuffers) {
        s.h -= self.dt;
        euler_maruyama_in_place(self.system, &mut s.x, u, self.dt, dw, buf);
    }

    pub fn reward(&self, s: &AugmentedState) -> f64 {
        if self.in_final_window(s.h) && !self.is_absorbing(s) {
            1.0
        } else {
            0.0
        }
    }

    pub fn smoothed_reward(&self, s: &AugmentedState, eps: f64) -> f64 {
        let r = self.reward(s);
        if r == 0.0 {
            0.0
        } else {
            r * smoothed_payoff(self.system, &s.x, eps)
        }
    }

    pub fn shaped_reward(&self, s: &AugmentedState, coeff: f64) -> f64 {
        self.reward(s) + coeff * self.system.shaping_margin(&s.x)
    }

    pub fn reward_of(&self, kind: RewardKind, s: &AugmentedState) -> f64 {
        match kind {
            RewardKind::Binary => self.reward(s),
            RewardKind::Smoothed { eps } => self.smoothed_reward(s, eps),
            RewardKind::Shaped { coeff } => self.shaped_reward(s, coeff),
        }
    }

    /// `s′` left the safe set before the horizon ran out.
    pub fn is_unsafe_exit(&self, next: &AugmentedState) -> bool {
        !self.system.is_safe(&next.x) && !self.horizon_expired(next.h)
    }

    /// Runs `policy` (state ↦ action index) from `s0` until the first entry
    /// into the absorbing set, with binary rewards.
    pub fn rollout<P, R>(&self, policy: P, s0: &AugmentedState, rng: &mut R) -> Result<Trajectory>
    where
        P: FnMut(&AugmentedState) -> usize,
        R: Rng + ?Sized,
    {
        self.rollout_with(RewardKind::Binary, policy, s0, rng)
    }

    pub fn rollout_with<P, R>(
        &self,
        kind: RewardKind,
        mut policy: P,
        s0: &AugmentedState,
        rng: &mut R,
    ) -> Result<Trajectory>
    where
        P: FnMut(&AugmentedState) -> usize,
        R: Rng + ?Sized,
    {
        let n = self.system.state_dim();
        if s0.x.len() != n {
            return Err(Error::DimensionMismatch { context: "initial state", expected: n, actual: s0.x.len() });
        }
        if self.is_absorbing(s0) {
            return Err(Error::InvalidArgument("rollout must start from a non-absorbing state".into()));
        }
        let actions = self.system.actions();
        let mut buf = StepBuffers::new(n);
        let mut dw = vec![0.0; n];
        let mut steps = Vec::with_capacity(self.horizon_steps(s0.h) + 1);
        let mut ret = 0.0;
        let mut unsafe_flag = false;
        let mut s = s0.clone();
        loop {
            let a = policy(&s);
            let u = actions
                .get(a)
                .ok_or_else(|| Error::InvalidArgument(format!("policy returned action {a} of {}", actions.len())))?;
            let r = self.reward_of(kind, &s);
            draw_increment(rng, self.dt, &mut dw);
            let mut next = s.clone();
            self.advance(&mut next, u, &dw, &mut buf);
            let terminal = self.is_absorbing(&next);
            unsafe_flag |= self.is_unsafe_exit(&next);
            ret += r;
            steps.push(Transition { state: s, action: a, reward: r, next: next.clone(), terminal });
            if terminal {
                break;
            }
            s = next;
        }
        Ok(Trajectory { steps, ret, unsafe_flag })
    }
}
