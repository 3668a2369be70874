//! The three sampling distributions of the training loop.

use rand::Rng;

use crate::mdp::AugmentedState;
use crate::sde::ControlSystem;

/// Episode start: `h = τ_D`, `x` uniform on `Ω_D`.
pub fn sample_initial<S, R>(sys: &S, tau_data: f64, rng: &mut R) -> AugmentedState
where
    S: ControlSystem + ?Sized,
    R: Rng + ?Sized,
{
    let mut x = vec![0.0; sys.state_dim()];
    sys.init_domain().sample(rng, &mut x);
    AugmentedState::new(tau_data, x)
}

/// PDE collocation points: `h` uniform on `[0, τ]`, `x` uniform on `Ω_P`.
pub fn sample_pde_points<S, R>(sys: &S, tau: f64, batch: usize, rng: &mut R) -> Vec<AugmentedState>
where
    S: ControlSystem + ?Sized,
    R: Rng + ?Sized,
{
    (0..batch)
        .map(|_| {
            let h = rng.random_range(0.0..=tau);
            let mut x = vec![0.0; sys.state_dim()];
            sys.pde_domain().sample(rng, &mut x);
            AugmentedState::new(h, x)
        })
        .collect()
}

/// Boundary points: with probability ½ on the initial face (`h = 0`,
/// `x ∈ Ω_P`), otherwise on the lateral boundary (`h ∈ [0, τ]`, `x ∈ Ω_B`).
pub fn sample_boundary_points<S, R>(sys: &S, tau: f64, batch: usize, rng: &mut R) -> Vec<AugmentedState>
where
    S: ControlSystem + ?Sized,
    R: Rng + ?Sized,
{
    (0..batch)
        .map(|_| {
            let mut x = vec![0.0; sys.state_dim()];
            if rng.random_bool(0.5) {
                sys.pde_domain().sample(rng, &mut x);
                AugmentedState::new(0.0, x)
            } else {
                let h = rng.random_range(0.0..=tau);
                sys.boundary_domain().sample(rng, &mut x);
                AugmentedState::new(h, x)
            }
        })
        .collect()
}
