use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::RewardKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingReward {
    /// `r`: pays 1 at the final horizon step of a safe path.
    Binary,
    /// `r_ε = r·l_ε`.
    Smoothed,
}

/// Every hyperparameter of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Outlook horizon `τ` over which the PDE is imposed.
    pub tau: f64,
    /// Horizon `τ_D ≤ τ` of the training episodes.
    pub tau_data: f64,
    pub dt: f64,
    /// `ε` of the smoothed payoff `l_ε`.
    pub eps_payoff: f64,
    /// PDE-residual weight `λ`.
    pub lambda: f64,
    /// Boundary-condition weight `μ`.
    pub mu: f64,
    /// Weight of the temporal-difference loss. Only experiments that isolate
    /// the physics terms set this to anything but 1.
    pub data_weight: f64,
    pub batch_data: usize,
    pub batch_pde: usize,
    pub batch_boundary: usize,
    pub episodes: usize,
    pub replay_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which `ε` decays linearly.
    pub epsilon_decay_fraction: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Target-network smoothing factor `η`.
    pub target_smoothing: f64,
    pub seed: u64,
    pub reward: TrainingReward,
    pub reward_shaping: bool,
    pub shaping_coeff: f64,
    pub hidden: Vec<usize>,
    /// Environment steps between gradient steps.
    pub update_every: usize,
    /// Episodes between intermediate checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            tau_data: 2.0,
            dt: 0.1,
            eps_payoff: 0.1,
            lambda: 1e-2,
            mu: 1.0,
            data_weight: 1.0,
            batch_data: 64,
            batch_pde: 64,
            batch_boundary: 64,
            episodes: 3000,
            replay_capacity: 100_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            learning_rate: 5e-4,
            optimizer: OptimizerKind::Adam,
            target_smoothing: 0.005,
            seed: 0,
            reward: TrainingReward::Binary,
            reward_shaping: false,
            shaping_coeff: 0.05,
            hidden: vec![32, 32, 32],
            update_every: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Returns the name of the first offending field alongside the message.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        fn bad(field: &'static str, msg: impl Into<String>) -> std::result::Result<(), (&'static str, String)> {
            Err((field, msg.into()))
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau", "must be positive");
        }
        if !(self.tau_data > 0.0 && self.tau_data <= self.tau) {
            return bad("tau_data", format!("must satisfy 0 < tau_data <= tau (tau = {})", self.tau));
        }
        if !(self.dt > 0.0 && self.dt <= self.tau) {
            return bad("dt", "must satisfy 0 < dt <= tau");
        }
        if !(self.eps_payoff > 0.0) {
            return bad("eps_payoff", "must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be non-negative");
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad("mu", "must be non-negative");
        }
        if !(self.data_weight >= 0.0 && self.data_weight.is_finite()) {
            return bad("data_weight", "must be non-negative");
        }
        for (field, v) in [
            ("batch_data", self.batch_data),
            ("batch_pde", self.batch_pde),
            ("batch_boundary", self.batch_boundary),
            ("replay_capacity", self.replay_capacity),
            ("update_every", self.update_every),
        ] {
            if v == 0 {
                return bad(field, "must be at least 1");
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=self.epsilon_start).contains(&self.epsilon_end) {
            return bad("epsilon_end", "need 0 <= epsilon_end <= epsilon_start <= 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return bad("epsilon_decay_fraction", "must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.target_smoothing > 0.0 && self.target_smoothing <= 1.0) {
            return bad("target_smoothing", "must lie in (0, 1]");
        }
        if self.reward_shaping && self.reward == TrainingReward::Smoothed {
            return bad("reward_shaping", "shaping applies to the binary reward only");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one non-empty hidden layer");
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        self.validate().map_err(|(field, msg)| Error::InvalidArgument(format!("train.{field}: {msg}")))
    }

    pub fn reward_kind(&self) -> RewardKind {
        match (self.reward, self.reward_shaping) {
            (TrainingReward::Binary, false) => RewardKind::Binary,
            (TrainingReward::Binary, true) => RewardKind::Shaped { coeff: self.shaping_coeff },
            (TrainingReward::Smoothed, _) => RewardKind::Smoothed { eps: self.eps_payoff },
        }
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over the first
    /// `epsilon_decay_fraction` of the episodes, constant afterwards.
    pub fn epsilon(&self, episode: usize) -> f64 {
        let horizon = self.epsilon_decay_fraction * self.episodes as f64;
        if horizon <= 0.0 {
            return self.epsilon_end;
        }
        let frac = (episode as f64 / horizon).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    pub fn layer_sizes(&self, state_dim: usize, actions: usize) -> Vec<usize> {
        let mut sizes = vec![state_dim + 1];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(actions);
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().check().unwrap();
    }

    #[test]
    fn rejects_inconsistent_horizons() {
        let cfg = TrainConfig { tau_data: 2.5, ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().0, "tau_data");
        let cfg = TrainConfig { batch_pde: 0, ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().0, "batch_pde");
        let cfg = TrainConfig { lambda: -1.0, ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().0, "lambda");
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig { episodes: 100, ..Default::default() };
        assert_eq!(cfg.epsilon(0), 1.0);
        assert!((cfg.epsilon(25) - 0.525).abs() < 1e-12);
        assert!((cfg.epsilon(50) - 0.05).abs() < 1e-12);
        assert!((cfg.epsilon(99) - 0.05).abs() < 1e-12);
    }
}
