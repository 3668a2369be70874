//! Deep Q-learning on the augmented MDP with optional physics terms.

pub mod config;
pub mod loss;
pub mod optim;
pub mod replay;
pub mod sampling;

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use config::{OptimizerKind, TrainConfig, TrainingReward};
pub use loss::{LossBreakdown, LossWeights, LossWorkspace};
pub use optim::Optimizer;
pub use replay::ReplayMemory;

use crate::error::{Error, Result};
use crate::mdp::{AugmentedMdp, AugmentedState, RewardKind, Transition};
use crate::net::{argmax, ForwardScratch, QNetwork, TargetNetwork};
use crate::rng::{stream_rng, streams, Rng};
use crate::sde::{draw_increment, ControlSystem, StepBuffers};

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub steps: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub epsilon: f64,
    /// Losses are averaged over the gradient steps taken during the episode.
    pub loss_total: f64,
    pub loss_data: f64,
    pub loss_pde: f64,
    pub loss_boundary: f64,
    /// Episodes so far (this one included) that left the safe set before
    /// their horizon ran out.
    pub cum_unsafe_events: usize,
    pub wall_ms: f64,
}

pub struct Trainer<'a, S: ?Sized> {
    sys: &'a S,
    cfg: TrainConfig,
    reward: RewardKind,
    net: QNetwork,
    target: TargetNetwork,
    opt: Optimizer,
    replay: ReplayMemory,
    rng: Rng,
    ws: LossWorkspace,
    grad: Vec<f64>,
    scratch: ForwardScratch,
    episode: usize,
    global_step: usize,
    cum_unsafe: usize,
}

impl<'a, S: ControlSystem + ?Sized> Trainer<'a, S> {
    /// Fresh Glorot-initialised network; the initialisation and the training
    /// randomness use separate streams of `cfg.seed`.
    pub fn new(sys: &'a S, cfg: TrainConfig) -> Result<Self> {
        cfg.check()?;
        let sizes = cfg.layer_sizes(sys.state_dim(), sys.num_actions());
        let net = QNetwork::glorot(&sizes, &mut stream_rng(cfg.seed, streams::INIT));
        Self::with_network(sys, cfg, net)
    }

    pub fn with_network(sys: &'a S, cfg: TrainConfig, net: QNetwork) -> Result<Self> {
        cfg.check()?;
        if net.input_dim() != sys.state_dim() + 1 || net.num_actions() != sys.num_actions() {
            return Err(Error::InvalidArgument(format!(
                "network {:?} does not fit a system with {} states and {} actions",
                net.sizes(),
                sys.state_dim(),
                sys.num_actions()
            )));
        }
        Ok(Self {
            sys,
            reward: cfg.reward_kind(),
            target: TargetNetwork::from_source(&net),
            opt: Optimizer::new(cfg.optimizer, cfg.learning_rate, net.num_params()),
            replay: ReplayMemory::new(cfg.replay_capacity),
            rng: stream_rng(cfg.seed, streams::TRAIN),
            ws: LossWorkspace::new(sys, &net),
            grad: vec![0.0; net.num_params()],
            scratch: ForwardScratch::new(&net),
            episode: 0,
            global_step: 0,
            cum_unsafe: 0,
            net,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn net(&self) -> &QNetwork {
        &self.net
    }

    pub fn target(&self) -> &QNetwork {
        self.target.net()
    }

    pub fn replay(&self) -> &ReplayMemory {
        &self.replay
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    pub fn cum_unsafe_events(&self) -> usize {
        self.cum_unsafe
    }

    fn mdp(&self) -> AugmentedMdp<'a, S> {
        AugmentedMdp::new(self.sys, self.cfg.dt)
    }

    fn loss_weights(&self) -> LossWeights {
        LossWeights { data: self.cfg.data_weight, lambda: self.cfg.lambda, mu: self.cfg.mu }
    }

    fn start_state(&mut self) -> AugmentedState {
        let mdp = self.mdp();
        loop {
            let s = sampling::sample_initial(self.sys, self.cfg.tau_data, &mut self.rng);
            if !mdp.is_absorbing(&s) {
                return s;
            }
        }
    }

    fn select_action(&mut self, s: &AugmentedState, epsilon: f64) -> usize {
        if self.rng.random::<f64>() < epsilon {
            self.rng.random_range(0..self.sys.num_actions())
        } else {
            argmax(self.net.forward_with(&s.to_input(), &mut self.scratch))
        }
    }

    /// One ε-greedy episode from `h = τ_D`, with a gradient step every
    /// `update_every` environment steps.
    pub fn run_episode(&mut self) -> Result<EpisodeMetrics> {
        let t0 = Instant::now();
        let mdp = self.mdp();
        let epsilon = self.cfg.epsilon(self.episode);
        let n = self.sys.state_dim();
        let mut buf = StepBuffers::new(n);
        let mut dw = vec![0.0; n];
        let mut s = self.start_state();
        let (mut steps, mut ret, mut unsafe_flag) = (0, 0.0, false);
        let mut losses = LossBreakdown::default();
        let mut updates = 0usize;
        loop {
            let a = self.select_action(&s, epsilon);
            let r = mdp.reward_of(self.reward, &s);
            draw_increment(&mut self.rng, self.cfg.dt, &mut dw);
            let mut next = s.clone();
            mdp.advance(&mut next, &self.sys.actions()[a], &dw, &mut buf);
            let terminal = mdp.is_absorbing(&next);
            unsafe_flag |= mdp.is_unsafe_exit(&next);
            ret += r;
            steps += 1;
            self.global_step += 1;
            self.replay.push(Transition { state: s, action: a, reward: r, next: next.clone(), terminal });
            if self.global_step.is_multiple_of(self.cfg.update_every) {
                let l = self.gradient_step()?;
                losses.total += l.total;
                losses.data += l.data;
                losses.pde += l.pde;
                losses.boundary += l.boundary;
                updates += 1;
            }
            if terminal {
                break;
            }
            s = next;
        }
        if unsafe_flag {
            self.cum_unsafe += 1;
        }
        let k = updates.max(1) as f64;
        let nan_if_none = |v: f64| if updates == 0 { f64::NAN } else { v / k };
        let m = EpisodeMetrics {
            episode: self.episode,
            steps,
            ret,
            epsilon,
            loss_total: nan_if_none(losses.total),
            loss_data: nan_if_none(losses.data),
            loss_pde: nan_if_none(losses.pde),
            loss_boundary: nan_if_none(losses.boundary),
            cum_unsafe_events: self.cum_unsafe,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        self.episode += 1;
        Ok(m)
    }

    /// Samples the three batches, takes one optimiser step on the combined
    /// loss and soft-updates the target network.
    pub fn gradient_step(&mut self) -> Result<LossBreakdown> {
        let cfg = &self.cfg;
        let batch = self.replay.sample(cfg.batch_data, &mut self.rng);
        let targets = loss::td_targets(self.target.net(), &batch);
        let pde = sampling::sample_pde_points(self.sys, cfg.tau, cfg.batch_pde, &mut self.rng);
        let bnd = sampling::sample_boundary_points(self.sys, cfg.tau, cfg.batch_boundary, &mut self.rng);
        let weights = self.loss_weights();
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let out = self.ws.evaluate(self.sys, &self.net, &batch, &targets, &pde, &bnd, weights, cfg.eps_payoff, &mut self.grad);
        if !out.is_finite() || self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                episode: self.episode,
                step: self.global_step,
                diagnostic: format!(
                    "loss total={} data={} pde={} boundary={}",
                    out.total, out.data, out.pde, out.boundary
                ),
            });
        }
        self.opt.step(self.net.params_mut(), &self.grad);
        self.target.soft_update(&self.net, self.cfg.target_smoothing)?;
        Ok(out)
    }

    /// Runs the remaining episodes, handing each row to `on_episode`.
    pub fn run<F>(&mut self, mut on_episode: F) -> Result<()>
    where
        F: FnMut(&EpisodeMetrics, &Self) -> Result<()>,
    {
        while self.episode < self.cfg.episodes {
            let m = self.run_episode()?;
            on_episode(&m, self)?;
        }
        Ok(())
    }

    pub fn into_network(self) -> QNetwork {
        self.net
    }
}

/// Trains from scratch and returns the final network with every episode's
/// metrics.
pub fn train<S: ControlSystem + ?Sized>(sys: &S, cfg: TrainConfig) -> Result<(QNetwork, Vec<EpisodeMetrics>)> {
    let mut trainer = Trainer::new(sys, cfg)?;
    let mut rows = Vec::with_capacity(trainer.cfg.episodes);
    trainer.run(|m, _| {
        rows.push(m.clone());
        Ok(())
    })?;
    Ok((trainer.into_network(), rows))
}
