//! Temporal-difference, PDE-residual and boundary losses with exact
//! parameter gradients.
//!
//! The PDE residual of head `a` at `s = [h, x]` is
//!
//! ```text
//! W_P = ∇Q·f̃ + ½ tr(σ̃σ̃ᵀ ∇²Q),   f̃ = [−1; f(x, u_a)],   σ̃ = [0; σ(x, u_a)]
//! ```
//!
//! which equals the first directional derivative of `Q` along `f̃` plus half
//! the sum of second directional derivatives along the columns of `σ̃`, so one
//! jet sweep with `1 + n` directions gives it without forming the Hessian.

use crate::error::{Error, Result};
use crate::mdp::{AugmentedState, Transition};
use crate::net::jet::JetTape;
use crate::net::{argmax, ForwardScratch, QNetwork};
use crate::sde::{smoothed_payoff, ControlSystem};

/// Mean-squared loss components and their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub data: f64,
    pub pde: f64,
    pub boundary: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.data.is_finite() && self.pde.is_finite() && self.boundary.is_finite()
    }
}

/// `L = w_D·L_D + λ·L_P + μ·L_B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub data: f64,
    pub lambda: f64,
    pub mu: f64,
}

/// `y = r` for terminal transitions, `r + maxₐ Q̂(s′, a)` otherwise.
pub fn td_targets(target: &QNetwork, batch: &[&Transition]) -> Vec<f64> {
    let mut scratch = ForwardScratch::new(target);
    let mut input = vec![0.0; target.input_dim()];
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                t.reward
            } else {
                t.next.write_input(&mut input);
                let q = target.forward_with(&input, &mut scratch);
                t.reward + q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect()
}

/// `mean (Q(s, a) − y)²`.
pub fn data_loss(net: &QNetwork, batch: &[&Transition], targets: &[f64]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("data_loss"));
    }
    if targets.len() != batch.len() {
        return Err(Error::DimensionMismatch { context: "targets", expected: batch.len(), actual: targets.len() });
    }
    let mut scratch = ForwardScratch::new(net);
    let mut input = vec![0.0; net.input_dim()];
    let sum: f64 = batch
        .iter()
        .zip(targets)
        .map(|(t, y)| {
            t.state.write_input(&mut input);
            let d = net.forward_with(&input, &mut scratch)[t.action] - y;
            d * d
        })
        .sum();
    Ok(sum / batch.len() as f64)
}

/// Writes the `(1 + n) × (1 + n)` direction block `[f̃; σ̃ columns]` for action `u`.
fn write_directions<S: ControlSystem + ?Sized>(sys: &S, x: &[f64], u: &[f64], sigma: &mut [f64], dirs: &mut [f64]) {
    let n = x.len();
    let d = n + 1;
    dirs.iter_mut().for_each(|v| *v = 0.0);
    dirs[0] = -1.0;
    sys.drift(x, u, &mut dirs[1..d]);
    sys.diffusion(x, u, sigma);
    for k in 0..n {
        for i in 0..n {
            dirs[(k + 1) * d + 1 + i] = sigma[i * n + k];
        }
    }
}

/// `W_P` for the given head, via directional jets.
pub fn pde_residual<S: ControlSystem + ?Sized>(sys: &S, net: &QNetwork, s: &AugmentedState, head: usize) -> f64 {
    let mut ws = LossWorkspace::new(sys, net);
    ws.pde_residual_at(sys, net, s, Some(head)).0
}

/// `W_P` assembled from the explicit input gradient and Hessian. Slower than
/// [`pde_residual`]; used to cross-check it.
pub fn pde_residual_hessian<S: ControlSystem + ?Sized>(
    sys: &S,
    net: &QNetwork,
    s: &AugmentedState,
    head: usize,
) -> Result<f64> {
    let n = sys.state_dim();
    let input = s.to_input();
    let g = net.input_gradient(&input, head)?;
    let hess = net.input_hessian(&input, head)?;
    let u = sys
        .actions()
        .get(head)
        .ok_or_else(|| Error::InvalidArgument(format!("head {head} has no action")))?;
    let mut f = vec![0.0; n];
    let mut sigma = vec![0.0; n * n];
    sys.drift(&s.x, u, &mut f);
    sys.diffusion(&s.x, u, &mut sigma);
    let mut w = -g[0];
    for i in 0..n {
        w += g[1 + i] * f[i];
    }
    // ½ Σᵢⱼ (σσᵀ)ᵢⱼ Hᵢⱼ over the state block.
    let mut tr = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a: f64 = (0..n).map(|k| sigma[i * n + k] * sigma[j * n + k]).sum();
            tr += a * hess[1 + i][1 + j];
        }
    }
    Ok(w + 0.5 * tr)
}

/// `mean W_P²` at the greedy action of each point.
pub fn pde_loss<S: ControlSystem + ?Sized>(sys: &S, net: &QNetwork, points: &[AugmentedState]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyBatch("pde_loss"));
    }
    let mut ws = LossWorkspace::new(sys, net);
    Ok(points.iter().map(|s| ws.pde_residual_at(sys, net, s, None).0.powi(2)).sum::<f64>() / points.len() as f64)
}

/// `W_B = maxₐ Q(s, a) − l_ε(x)`.
pub fn boundary_residual<S: ControlSystem + ?Sized>(sys: &S, net: &QNetwork, s: &AugmentedState, eps: f64) -> f64 {
    let q = net.forward(&s.to_input()).expect("boundary point has the network's input dimension");
    q[argmax(&q)] - smoothed_payoff(sys, &s.x, eps)
}

pub fn boundary_loss<S: ControlSystem + ?Sized>(
    sys: &S,
    net: &QNetwork,
    points: &[AugmentedState],
    eps: f64,
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyBatch("boundary_loss"));
    }
    Ok(points.iter().map(|s| boundary_residual(sys, net, s, eps).powi(2)).sum::<f64>() / points.len() as f64)
}

/// Reusable tapes and buffers for loss evaluation.
#[derive(Debug, Clone)]
pub struct LossWorkspace {
    plain: JetTape,
    jet: JetTape,
    scratch: ForwardScratch,
    input: Vec<f64>,
    dirs: Vec<f64>,
    sigma: Vec<f64>,
    adj_first: Vec<f64>,
    adj_second: Vec<f64>,
}

impl LossWorkspace {
    pub fn new<S: ControlSystem + ?Sized>(sys: &S, net: &QNetwork) -> Self {
        let n = sys.state_dim();
        assert_eq!(net.input_dim(), n + 1, "network input must be [h, x]");
        assert_eq!(net.num_actions(), sys.num_actions(), "one head per action");
        Self {
            plain: JetTape::new(net, 0),
            jet: JetTape::new(net, n + 1),
            scratch: ForwardScratch::new(net),
            input: vec![0.0; n + 1],
            dirs: vec![0.0; (n + 1) * (n + 1)],
            sigma: vec![0.0; n * n],
            adj_first: vec![0.0; n + 1],
            adj_second: vec![0.0; n + 1],
        }
    }

    /// Residual and the head it was taken at; `None` picks the greedy head.
    /// Leaves the jet tape primed for a backward sweep.
    fn pde_residual_at<S: ControlSystem + ?Sized>(
        &mut self,
        sys: &S,
        net: &QNetwork,
        s: &AugmentedState,
        head: Option<usize>,
    ) -> (f64, usize) {
        s.write_input(&mut self.input);
        let head = head.unwrap_or_else(|| argmax(net.forward_with(&self.input, &mut self.scratch)));
        let u = &sys.actions()[head];
        write_directions(sys, &s.x, u, &mut self.sigma, &mut self.dirs);
        self.jet.forward(net, &self.input, &self.dirs);
        let j = self.jet.head(head);
        let w = j.first[0] + 0.5 * j.second[1..].iter().sum::<f64>();
        (w, head)
    }

    /// Evaluates all three losses and accumulates `∂L/∂θ` into `grad`.
    /// Targets and greedy heads are treated as constants. Components with a
    /// zero weight are still evaluated but skip the backward sweep.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate<S: ControlSystem + ?Sized>(
        &mut self,
        sys: &S,
        net: &QNetwork,
        batch: &[&Transition],
        targets: &[f64],
        pde_points: &[AugmentedState],
        boundary_points: &[AugmentedState],
        weights: LossWeights,
        eps: f64,
        grad: &mut [f64],
    ) -> LossBreakdown {
        debug_assert_eq!(grad.len(), net.num_params());
        debug_assert_eq!(batch.len(), targets.len());
        let mut out = LossBreakdown::default();

        if !batch.is_empty() {
            let scale = 2.0 * weights.data / batch.len() as f64;
            let mut sum = 0.0;
            for (t, y) in batch.iter().zip(targets) {
                t.state.write_input(&mut self.input);
                self.plain.forward(net, &self.input, &[]);
                let d = self.plain.outputs()[t.action] - y;
                sum += d * d;
                if weights.data != 0.0 {
                    self.plain.backward_head(net, t.action, scale * d, &[], &[], grad);
                }
            }
            out.data = sum / batch.len() as f64;
        }

        if !pde_points.is_empty() {
            let scale = 2.0 * weights.lambda / pde_points.len() as f64;
            let mut sum = 0.0;
            for s in pde_points {
                let (w, head) = self.pde_residual_at(sys, net, s, None);
                sum += w * w;
                if weights.lambda != 0.0 {
                    let c = scale * w;
                    self.adj_first.iter_mut().for_each(|v| *v = 0.0);
                    self.adj_first[0] = c;
                    self.adj_second[0] = 0.0;
                    self.adj_second[1..].iter_mut().for_each(|v| *v = 0.5 * c);
                    self.jet.backward_head(net, head, 0.0, &self.adj_first, &self.adj_second, grad);
                }
            }
            out.pde = sum / pde_points.len() as f64;
        }

        if !boundary_points.is_empty() {
            let scale = 2.0 * weights.mu / boundary_points.len() as f64;
            let mut sum = 0.0;
            for s in boundary_points {
                s.write_input(&mut self.input);
                self.plain.forward(net, &self.input, &[]);
                let head = argmax(self.plain.outputs());
                let w = self.plain.outputs()[head] - smoothed_payoff(sys, &s.x, eps);
                sum += w * w;
                if weights.mu != 0.0 {
                    self.plain.backward_head(net, head, scale * w, &[], &[], grad);
                }
            }
            out.boundary = sum / boundary_points.len() as f64;
        }

        out.total = weights.data * out.data + weights.lambda * out.pde + weights.mu * out.boundary;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::sde::{Benchmark, Interval};

    fn net(seed: u64) -> QNetwork {
        QNetwork::glorot(&[3, 16, 16, 5], &mut stream_rng(seed, 1))
    }

    #[test]
    fn jet_and_hessian_residuals_agree() {
        let sys = Benchmark::new();
        let mut rng = stream_rng(11, 0);
        for seed in 0..5 {
            let q = net(seed);
            for s in crate::trainer::sampling::sample_pde_points(&sys, 2.0, 10, &mut rng) {
                for head in 0..5 {
                    let a = pde_residual(&sys, &q, &s, head);
                    let b = pde_residual_hessian(&sys, &q, &s, head).unwrap();
                    assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn residual_of_known_functions() {
        // Q = h on every head: ∂_h Q = 1, no x-dependence, so W_P = −1.
        let mut q = QNetwork::zeros(&[3, 5]);
        for a in 0..5 {
            q.params_mut()[a * 3] = 1.0;
        }
        let sys = Benchmark::new();
        let s = AugmentedState::new(0.7, vec![0.3, -0.2]);
        assert!((pde_residual(&sys, &q, &s, 2) + 1.0).abs() < 1e-14);
        // Q = x for the driftless interval: W_P = 0.
        let sys = Interval::new(1.0, 0.5);
        let q = QNetwork::from_parts(vec![2, 1], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(pde_residual(&sys, &q, &AugmentedState::new(1.0, vec![0.2]), 0), 0.0);
        // Q = x₁ on the benchmark at x = (1, 0) with u = 0: W_P = f₁ = −1.
        let mut q = QNetwork::zeros(&[3, 5]);
        for a in 0..5 {
            q.params_mut()[a * 3 + 1] = 1.0;
        }
        let s = AugmentedState::new(1.0, vec![1.0, 0.0]);
        assert!((pde_residual(&Benchmark::new(), &q, &s, 2) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let sys = Benchmark::new();
        let zero = QNetwork::zeros(&[3, 4, 5]);
        let face = AugmentedState::new(0.0, vec![0.3, 0.0]);
        assert_eq!(boundary_residual(&sys, &zero, &face, 0.1), -1.0);
        assert_eq!(boundary_residual(&sys, &zero, &AugmentedState::new(0.4, vec![0.3, 1.0]), 0.1), 0.0);
        let t = Transition { state: face.clone(), action: 0, reward: 0.0, next: face.clone(), terminal: true };
        assert_eq!(data_loss(&zero, &[&t, &t], &[1.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(data_loss(&zero, &[], &[]), Err(Error::EmptyBatch(_))));
        assert!(pde_loss(&sys, &zero, &[]).is_err());
        assert_eq!(pde_loss(&sys, &zero, std::slice::from_ref(&face)).unwrap(), 0.0);
        assert_eq!(boundary_loss(&sys, &zero, &[face], 0.1).unwrap(), 1.0);
    }

    #[test]
    fn constant_one_network_has_unit_boundary_residual_off_safe_set() {
        // Q ≡ 1 and l_ε = 0 on |x₂| = 1.
        let mut q = QNetwork::zeros(&[3, 4, 5]);
        let p = q.num_params();
        for a in 0..5 {
            q.params_mut()[p - 5 + a] = 1.0;
        }
        let sys = Benchmark::new();
        let s = AugmentedState::new(0.5, vec![0.0, 1.0]);
        assert_eq!(boundary_residual(&sys, &q, &s, 0.1), 1.0);
        assert_eq!(pde_residual(&sys, &q, &s, 0), 0.0);
    }

    #[test]
    fn workspace_matches_free_functions() {
        let sys = Benchmark::new();
        let q = net(3);
        let target = net(4);
        let mut rng = stream_rng(5, 0);
        let s0 = AugmentedState::new(1.0, vec![0.1, 0.2]);
        let mdp = crate::mdp::AugmentedMdp::new(&sys, 0.1);
        let traj = mdp.rollout(|_| 1, &s0, &mut rng).unwrap();
        let batch: Vec<&Transition> = traj.steps.iter().collect();
        let y = td_targets(&target, &batch);
        let pde = crate::trainer::sampling::sample_pde_points(&sys, 2.0, 16, &mut rng);
        let bnd = crate::trainer::sampling::sample_boundary_points(&sys, 2.0, 16, &mut rng);
        let mut ws = LossWorkspace::new(&sys, &q);
        let mut grad = vec![0.0; q.num_params()];
        let w = LossWeights { data: 1.0, lambda: 0.3, mu: 2.0 };
        let out = ws.evaluate(&sys, &q, &batch, &y, &pde, &bnd, w, 0.1, &mut grad);
        assert!((out.data - data_loss(&q, &batch, &y).unwrap()).abs() < 1e-14);
        assert!((out.pde - pde_loss(&sys, &q, &pde).unwrap()).abs() < 1e-14);
        assert!((out.boundary - boundary_loss(&sys, &q, &bnd, 0.1).unwrap()).abs() < 1e-14);
        assert!((out.total - (out.data + 0.3 * out.pde + 2.0 * out.boundary)).abs() < 1e-14);
    }

    #[test]
    fn terminal_targets_are_rewards() {
        let target = net(1);
        let s = AugmentedState::new(0.05, vec![0.0, 0.0]);
        let term = Transition { state: s.clone(), action: 0, reward: 1.0, next: s.clone(), terminal: true };
        let cont = Transition { terminal: false, ..term.clone() };
        let y = td_targets(&target, &[&term, &cont]);
        assert_eq!(y[0], 1.0);
        let q = target.forward(&s.to_input()).unwrap();
        assert_eq!(y[1], 1.0 + q.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
}
