//! Monte-Carlo and analytic oracles, grid error of a trained network, and the
//! nominal baseline controller.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{AugmentedMdp, AugmentedState};
use crate::net::{argmax, ForwardScratch, QNetwork};
use crate::rng::{stream_rng, streams};
use crate::sde::{draw_increment, Benchmark, ControlSystem, Interval, StepBuffers};
use crate::trainer::EpisodeMetrics;

/// Fraction of surviving paths and its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl McEstimate {
    pub fn from_count(successes: usize, n_paths: usize) -> Self {
        let mean = successes as f64 / n_paths as f64;
        Self { mean, std_error: (mean * (1.0 - mean) / n_paths as f64).sqrt(), n_paths }
    }
}

/// A state-feedback map from augmented states to action indices.
pub trait Policy {
    fn act(&mut self, s: &AugmentedState) -> usize;
}

impl<F: FnMut(&AugmentedState) -> usize> Policy for F {
    fn act(&mut self, s: &AugmentedState) -> usize {
        self(s)
    }
}

/// `argmaxₐ Q(s, a)` with reusable buffers.
pub struct GreedyPolicy<'a> {
    net: &'a QNetwork,
    scratch: ForwardScratch,
    input: Vec<f64>,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(net: &'a QNetwork) -> Self {
        Self { net, scratch: ForwardScratch::new(net), input: vec![0.0; net.input_dim()] }
    }
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, s: &AugmentedState) -> usize {
        s.write_input(&mut self.input);
        argmax(self.net.forward_with(&self.input, &mut self.scratch))
    }
}

/// Probability that the discretised path from `x0` stays in `C` at every grid
/// time up to `tau`, as the mean of the binary returns of `n_paths` rollouts.
pub fn mc_safety_probability<S, P, R>(
    sys: &S,
    policy: &mut P,
    x0: &[f64],
    tau: f64,
    dt: f64,
    n_paths: usize,
    rng: &mut R,
) -> Result<McEstimate>
where
    S: ControlSystem + ?Sized,
    P: Policy + ?Sized,
    R: rand::Rng + ?Sized,
{
    let n = sys.state_dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { context: "initial state", expected: n, actual: x0.len() });
    }
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
    }
    if !sys.is_safe(x0) {
        log::warn!("initial state {x0:?} lies outside the safe set; safety probability is 0");
        return Ok(McEstimate { mean: 0.0, std_error: 0.0, n_paths });
    }
    let mdp = AugmentedMdp::new(sys, dt);
    let actions = sys.actions();
    let mut buf = StepBuffers::new(n);
    let mut dw = vec![0.0; n];
    let mut successes = 0;
    for _ in 0..n_paths {
        let mut s = AugmentedState::new(tau, x0.to_vec());
        let mut ret = 0.0;
        while !mdp.is_absorbing(&s) {
            ret += mdp.reward(&s);
            draw_increment(rng, dt, &mut dw);
            // Every action leads to an absorbing state from the final window.
            if mdp.in_final_window(s.h) {
                break;
            }
            let a = policy.act(&s);
            mdp.advance(&mut s, &actions[a], &dw, &mut buf);
        }
        if ret > 0.0 {
            successes += 1;
        }
    }
    Ok(McEstimate::from_count(successes, n_paths))
}

/// `P(sup_{s≤t} |σW_s| < a)`, truncated to `terms` terms of the eigenfunction
/// series. The series converges slowly when `σ²t/a²` is small; at `t = 0`
/// it is only conditionally convergent, so that case returns 1 directly.
pub fn analytic_survival_1d(a: f64, t: f64, sigma: f64, terms: usize) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 0..terms {
        let m = (2 * k + 1) as f64;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / m * (-(m * m) * PI * PI * sigma * sigma * t / (8.0 * a * a)).exp();
    }
    4.0 / PI * sum
}

/// How exits between grid times are detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitoring {
    /// Only at the grid times, as in the MDP.
    Discrete,
    /// Additionally kills each step with the Brownian-bridge probability of
    /// having crossed a barrier between its endpoints, which estimates the
    /// continuously monitored survival probability without `√dt` bias.
    BrownianBridge,
}

/// Survival of the driftless interval system from 0 over `[0, tau]`.
pub fn mc_interval_survival<R: rand::Rng + ?Sized>(
    sys: &Interval,
    tau: f64,
    dt: f64,
    n_paths: usize,
    monitoring: Monitoring,
    rng: &mut R,
) -> McEstimate {
    let a = sys.halfwidth();
    let var = sys.sigma() * sys.sigma() * dt;
    let steps = AugmentedMdp::new(sys, dt).horizon_steps(tau);
    let mut dw = [0.0];
    let mut successes = 0;
    'paths: for _ in 0..n_paths {
        let mut x = 0.0f64;
        for _ in 0..steps {
            draw_increment(rng, dt, &mut dw);
            let y = x + sys.sigma() * dw[0];
            if y.abs() >= a {
                continue 'paths;
            }
            if monitoring == Monitoring::BrownianBridge {
                let upper = (-2.0 * (a - x) * (a - y) / var).exp();
                let lower = (-2.0 * (a + x) * (a + y) / var).exp();
                if rng.random::<f64>() < upper + lower {
                    continue 'paths;
                }
            }
            x = y;
        }
        successes += 1;
    }
    McEstimate::from_count(successes, n_paths)
}

/// `n` equally spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: Vec<f64>,
    /// `maxₐ Q([τ, x], a)` clamped to `[0, 1]`.
    pub prediction: f64,
    pub mc: McEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tau: f64,
    pub points: Vec<GridPoint>,
    pub mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Points per axis of the bounding box of `Ω_D`.
    pub per_axis: usize,
    pub tau: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Compares the network's value estimate with a Monte-Carlo evaluation of its
/// own greedy policy on a regular grid over the initial-state domain. Grid
/// point `i` (row-major, last axis fastest) draws from its own random stream.
pub fn grid_mse<S: ControlSystem + ?Sized>(sys: &S, net: &QNetwork, spec: GridSpec) -> Result<EvalReport> {
    let n = sys.state_dim();
    let dom = sys.init_domain();
    let (mut lo, mut hi) = (vec![f64::INFINITY; n], vec![f64::NEG_INFINITY; n]);
    for piece in dom.pieces() {
        for i in 0..n {
            lo[i] = lo[i].min(piece.lo[i]);
            hi[i] = hi[i].max(piece.hi[i]);
        }
    }
    let axes: Vec<Vec<f64>> = (0..n).map(|i| linspace(lo[i], hi[i], spec.per_axis)).collect();
    let total = spec.per_axis.pow(n as u32);
    let mut points = Vec::with_capacity(total);
    let mut policy = GreedyPolicy::new(net);
    let mut input = vec![0.0; n + 1];
    for idx in 0..total {
        let mut rem = idx;
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            x[i] = axes[i][rem % spec.per_axis];
            rem /= spec.per_axis;
        }
        input[0] = spec.tau;
        input[1..].copy_from_slice(&x);
        let q = net.forward(&input)?;
        let prediction = q[argmax(&q)].clamp(0.0, 1.0);
        let mc = if sys.is_safe(&x) {
            let mut rng = stream_rng(spec.seed, streams::GRID + idx as u64);
            mc_safety_probability(sys, &mut policy, &x, spec.tau, spec.dt, spec.n_paths, &mut rng)?
        } else {
            McEstimate { mean: 0.0, std_error: 0.0, n_paths: spec.n_paths }
        };
        points.push(GridPoint { x, prediction, mc });
    }
    let mse = points.iter().map(|p| (p.prediction - p.mc.mean).powi(2)).sum::<f64>() / points.len().max(1) as f64;
    Ok(EvalReport { tau: spec.tau, points, mse })
}

impl EvalReport {
    /// Per-point CSV `x1,x2,…,prediction,mc_mean,mc_se`, preceded by a
    /// `# config_hash:` comment line when a hash is given.
    pub fn write_csv<W: Write>(&self, out: W, config_hash: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(h) = config_hash {
            writeln!(out, "# config_hash: {h}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let n = self.points.first().map_or(0, |p| p.x.len());
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.extend(["prediction", "mc_mean", "mc_se"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for p in &self.points {
            let mut row: Vec<String> = p.x.iter().map(|v| v.to_string()).collect();
            row.push(p.prediction.to_string());
            row.push(p.mc.mean.to_string());
            row.push(p.mc.std_error.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?), config_hash)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Mean and sample standard deviation of repeated MSE measurements.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Final cumulative number of episodes that left the safe set early.
pub fn count_unsafe_events(rows: &[EpisodeMetrics]) -> usize {
    rows.last().map_or(0, |r| r.cum_unsafe_events)
}

/// Unsafe-event count after the first `episodes` episodes.
pub fn unsafe_events_at(rows: &[EpisodeMetrics], episodes: usize) -> usize {
    match episodes.min(rows.len()) {
        0 => 0,
        k => rows[k - 1].cum_unsafe_events,
    }
}

/// Safety probabilities of `policy` from each probe, probe `i` on its own stream.
pub fn probe_safety<S, P>(
    sys: &S,
    policy: &mut P,
    probes: &[Vec<f64>],
    tau: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<McEstimate>>
where
    S: ControlSystem + ?Sized,
    P: Policy + ?Sized,
{
    probes
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = stream_rng(seed, streams::PROBES + i as u64);
            mc_safety_probability(sys, policy, x, tau, dt, n_paths, &mut rng)
        })
        .collect()
}

/// LQR gain on the feedback-linearised benchmark: with `u = −x₁ − x₂ + v` the
/// model (dropping the stabilising `−x₁³`) is `ż₁ = −z₂, ż₂ = v`, and state
/// weight `I`, input weight `1` give `v = z₁ − √3·z₂`.
pub const NOMINAL_GAIN: [f64; 2] = [-1.0, 1.732_050_807_568_877_2];

/// Continuous nominal control before clamping and snapping.
pub fn nominal_control(x: &[f64]) -> f64 {
    let v = -(NOMINAL_GAIN[0] * x[0] + NOMINAL_GAIN[1] * x[1]);
    -x[0] - x[1] + v
}

/// Index of the action nearest to `u` (the lower one on ties).
pub fn nearest_action(actions: &[Vec<f64>], u: f64) -> usize {
    let mut best = 0;
    for (i, a) in actions.iter().enumerate() {
        if (a[0] - u).abs() < (actions[best][0] - u).abs() {
            best = i;
        }
    }
    best
}

/// Nominal controller of the benchmark as an action index.
pub fn nominal_action(sys: &Benchmark, x: &[f64]) -> usize {
    nearest_action(sys.actions(), nominal_control(x).clamp(-1.0, 1.0))
}

pub struct NominalPolicy<'a>(pub &'a Benchmark);

impl Policy for NominalPolicy<'_> {
    fn act(&mut self, s: &AugmentedState) -> usize {
        nominal_action(self.0, &s.x)
    }
}
