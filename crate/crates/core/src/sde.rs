//! Controlled SDE systems `dX = f(X,U) dt + σ(X,U) dW`, their explicit
//! Euler–Maruyama discretization, safe-set geometry and the smoothed payoff
//! `l_ε`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Axis-aligned box. An axis with `lo == hi` is pinned to that value.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "box bounds must share a dimension");
        assert!(lo.iter().zip(&hi).all(|(l, h)| l <= h), "box bounds must satisfy lo <= hi");
        Self { lo, hi }
    }

    /// Box `[-half_i, half_i]` on each axis.
    pub fn symmetric(half: &[f64]) -> Self {
        Self::new(half.iter().map(|h| -h).collect(), half.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Lebesgue measure over the non-pinned axes.
    fn free_measure(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if h > l { h - l } else { 1.0 })
            .product()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for ((o, l), h) in out.iter_mut().zip(&self.lo).zip(&self.hi) {
            *o = if h > l { rng.random_range(*l..=*h) } else { *l };
        }
    }
}

/// Finite union of boxes, sampled uniformly with respect to the free-axis
/// measure of each piece. Pieces are expected to share their pinned axes
/// (e.g. the two lateral faces `x₂ = ±1` of the benchmark).
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pieces: Vec<BoxRegion>,
    cumulative: Vec<f64>,
}

impl Region {
    pub fn new(pieces: Vec<BoxRegion>) -> Self {
        assert!(!pieces.is_empty(), "a region needs at least one box");
        let dim = pieces[0].dim();
        assert!(pieces.iter().all(|p| p.dim() == dim));
        let mut acc = 0.0;
        let cumulative = pieces
            .iter()
            .map(|p| {
                acc += p.free_measure();
                acc
            })
            .collect();
        Self { pieces, cumulative }
    }

    pub fn single(piece: BoxRegion) -> Self {
        Self::new(vec![piece])
    }

    pub fn pieces(&self) -> &[BoxRegion] {
        &self.pieces
    }

    pub fn dim(&self) -> usize {
        self.pieces[0].dim()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.pieces.iter().any(|p| p.contains(x))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let idx = if self.pieces.len() == 1 {
            0
        } else {
            let total = *self.cumulative.last().unwrap();
            let t = rng.random::<f64>() * total;
            self.cumulative.iter().position(|c| t < *c).unwrap_or(self.pieces.len() - 1)
        };
        self.pieces[idx].sample(rng, out);
    }
}

/// A controlled SDE together with its safe set `C` and sampling domains.
///
/// Implementations are immutable and shareable across threads. Diffusion
/// matrices are `n × n`, row-major.
pub trait ControlSystem: Send + Sync {
    fn state_dim(&self) -> usize;

    /// Discrete action set, one control vector per action index.
    fn actions(&self) -> &[Vec<f64>];

    fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]);

    fn diffusion(&self, x: &[f64], u: &[f64], out: &mut [f64]);

    /// `x ∈ C`.
    fn is_safe(&self, x: &[f64]) -> bool;

    /// Euclidean distance from `x` to `Cᶜ`; zero outside `C` and on `∂C`.
    ///
    /// The smoothed payoff assumes `dist(x, C_ε) = ε − dist(x, Cᶜ)` inside the
    /// `ε`-margin, which holds whenever `∂C` has reach at least `ε`.
    fn unsafe_distance(&self, x: &[f64]) -> f64;

    /// Initial-state domain `Ω_D`.
    fn init_domain(&self) -> &Region;

    /// Collocation domain `Ω_P ⊆ C` of the PDE residual.
    fn pde_domain(&self) -> &Region;

    /// Lateral boundary `Ω_B ⊆ ∂C`.
    fn boundary_domain(&self) -> &Region;

    /// Dense safety margin used by reward shaping.
    fn shaping_margin(&self, x: &[f64]) -> f64 {
        self.unsafe_distance(x)
    }

    fn num_actions(&self) -> usize {
        self.actions().len()
    }
}

/// Two-dimensional benchmark: `f(x,u) = [−x₁³ − x₂, x₁ + x₂ + u]`,
/// `σ = s·I₂` (default `s = 0.2`), `C = {1 − x₂² > 0}`.
#[derive(Debug, Clone)]
pub struct Benchmark {
    noise: f64,
    actions: Vec<Vec<f64>>,
    init_domain: Region,
    pde_domain: Region,
    boundary_domain: Region,
}

impl Benchmark {
    pub const DEFAULT_NOISE: f64 = 0.2;
    pub const CONTROLS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

    pub fn new() -> Self {
        Self::with_noise(Self::DEFAULT_NOISE)
    }

    pub fn with_noise(noise: f64) -> Self {
        Self {
            noise,
            actions: Self::CONTROLS.iter().map(|u| vec![*u]).collect(),
            init_domain: Region::single(BoxRegion::symmetric(&[1.5, 1.0])),
            pde_domain: Region::single(BoxRegion::symmetric(&[1.5, 0.9])),
            boundary_domain: Region::new(vec![
                BoxRegion::new(vec![-1.5, 1.0], vec![1.5, 1.0]),
                BoxRegion::new(vec![-1.5, -1.0], vec![1.5, -1.0]),
            ]),
        }
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }
}

impl Default for Benchmark {
    fn default() -> Self {
        Self::new()
    }
}

impl ControlSystem for Benchmark {
    fn state_dim(&self) -> usize {
        2
    }

    fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = -x[0] * x[0] * x[0] - x[1];
        out[1] = x[0] + x[1] + u[0];
    }

    fn diffusion(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[self.noise, 0.0, 0.0, self.noise]);
    }

    fn is_safe(&self, x: &[f64]) -> bool {
        1.0 - x[1] * x[1] > 0.0
    }

    fn unsafe_distance(&self, x: &[f64]) -> f64 {
        (1.0 - x[1].abs()).max(0.0)
    }

    fn init_domain(&self) -> &Region {
        &self.init_domain
    }

    fn pde_domain(&self) -> &Region {
        &self.pde_domain
    }

    fn boundary_domain(&self) -> &Region {
        &self.boundary_domain
    }

    fn shaping_margin(&self, x: &[f64]) -> f64 {
        1.0 - x[1] * x[1]
    }
}

/// Driftless scalar diffusion `dX = σ dW` on `C = (−a, a)` with a single
/// (null) action. Used as the analytic oracle system.
#[derive(Debug, Clone)]
pub struct Interval {
    halfwidth: f64,
    sigma: f64,
    actions: Vec<Vec<f64>>,
    init_domain: Region,
    pde_domain: Region,
    boundary_domain: Region,
}

impl Interval {
    pub fn new(halfwidth: f64, sigma: f64) -> Self {
        assert!(halfwidth > 0.0);
        Self {
            halfwidth,
            sigma,
            actions: vec![vec![0.0]],
            init_domain: Region::single(BoxRegion::symmetric(&[halfwidth])),
            pde_domain: Region::single(BoxRegion::symmetric(&[0.9 * halfwidth])),
            boundary_domain: Region::new(vec![
                BoxRegion::new(vec![halfwidth], vec![halfwidth]),
                BoxRegion::new(vec![-halfwidth], vec![-halfwidth]),
            ]),
        }
    }

    pub fn halfwidth(&self) -> f64 {
        self.halfwidth
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl ControlSystem for Interval {
    fn state_dim(&self) -> usize {
        1
    }

    fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    fn drift(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn diffusion(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = self.sigma;
    }

    fn is_safe(&self, x: &[f64]) -> bool {
        x[0].abs() < self.halfwidth
    }

    fn unsafe_distance(&self, x: &[f64]) -> f64 {
        (self.halfwidth - x[0].abs()).max(0.0)
    }

    fn init_domain(&self) -> &Region {
        &self.init_domain
    }

    fn pde_domain(&self) -> &Region {
        &self.pde_domain
    }

    fn boundary_domain(&self) -> &Region {
        &self.boundary_domain
    }
}

/// Reusable drift/diffusion buffers for [`euler_maruyama_in_place`].
#[derive(Debug, Clone)]
pub struct StepBuffers {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl StepBuffers {
    pub fn new(state_dim: usize) -> Self {
        Self {
            drift: vec![0.0; state_dim],
            diffusion: vec![0.0; state_dim * state_dim],
        }
    }
}

/// `x′ = x + f(x,u)·dt + σ(x,u)·dW` for a caller-drawn `dW ~ N(0, dt·I)`.
pub fn euler_maruyama_step<S: ControlSystem + ?Sized>(
    sys: &S,
    x: &[f64],
    u: &[f64],
    dt: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    let n = sys.state_dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch { context: "state", expected: n, actual: x.len() });
    }
    if dw.len() != n {
        return Err(Error::DimensionMismatch { context: "noise increment", expected: n, actual: dw.len() });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let mut out = x.to_vec();
    euler_maruyama_in_place(sys, &mut out, u, dt, dw, &mut StepBuffers::new(n));
    Ok(out)
}

/// Unchecked in-place variant of [`euler_maruyama_step`] for hot loops.
pub fn euler_maruyama_in_place<S: ControlSystem + ?Sized>(
    sys: &S,
    x: &mut [f64],
    u: &[f64],
    dt: f64,
    dw: &[f64],
    buf: &mut StepBuffers,
) {
    let n = x.len();
    sys.drift(x, u, &mut buf.drift);
    sys.diffusion(x, u, &mut buf.diffusion);
    for i in 0..n {
        let row = &buf.diffusion[i * n..(i + 1) * n];
        let noise: f64 = row.iter().zip(dw).map(|(s, w)| s * w).sum();
        x[i] += buf.drift[i] * dt + noise;
    }
}

/// Fills `out` with `N(0, dt)` draws.
pub fn draw_increment<R: Rng + ?Sized>(rng: &mut R, dt: f64, out: &mut [f64]) {
    let scale = dt.sqrt();
    for w in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *w = scale * z;
    }
}

/// `l_ε(x) = max{1 − dist(x, C_ε)/ε, 0}` with `C_ε = {x ∈ C : dist(x, Cᶜ) ≥ ε}`.
pub fn smoothed_payoff<S: ControlSystem + ?Sized>(sys: &S, x: &[f64], eps: f64) -> f64 {
    debug_assert!(eps > 0.0);
    if !sys.is_safe(x) {
        return 0.0;
    }
    (sys.unsafe_distance(x) / eps).clamp(0.0, 1.0)
}
