mod common;

use pirl::mdp::AugmentedState;
use pirl::rng::stream_rng;
use pirl::sde::Benchmark;
use pirl::trainer::loss::{pde_residual, pde_residual_hessian};
use rand::Rng as _;

#[test]
fn derivatives_match_finite_differences_on_random_networks() {
    let mut rng = stream_rng(2024, 0);
    let (mut wp, mut wi, mut wh, mut ws) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![3];
        for _ in 0..depth {
            sizes.push(rng.random_range(2..=8));
        }
        sizes.push(rng.random_range(1..=5));
        let net = common::random_net(&sizes, 1.0, &mut rng);
        let (p, i, h, s) = common::autodiff_errors(&net, &mut rng);
        wp = wp.max(p);
        wi = wi.max(i);
        wh = wh.max(h);
        ws = ws.max(s);
    }
    assert!(wp < 1e-6, "parameter gradient {wp:e}");
    assert!(wi < 1e-6, "input gradient {wi:e}");
    assert!(wh < 1e-4, "input Hessian {wh:e}");
    assert!(ws <= 1e-12, "Hessian asymmetry {ws:e}");
}

#[test]
fn jet_residual_agrees_with_explicit_hessian_on_default_architecture() {
    let sys = Benchmark::new();
    let mut rng = stream_rng(5, 0);
    for _ in 0..20 {
        let net = common::random_net(&[3, 32, 32, 32, 5], 0.3, &mut rng);
        let s = AugmentedState::new(rng.random_range(0.0..2.0), vec![rng.random_range(-1.5..1.5), rng.random_range(-0.9..0.9)]);
        for head in 0..5 {
            let a = pde_residual(&sys, &net, &s, head);
            let b = pde_residual_hessian(&sys, &net, &s, head).unwrap();
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}
