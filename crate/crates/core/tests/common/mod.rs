#![allow(dead_code)]

use pirl::mdp::{AugmentedMdp, AugmentedState};
use pirl::net::QNetwork;
use pirl::rng::{stream_rng, Rng};
use pirl::sde::Benchmark;
use rand::Rng as _;
use rand_distr::StandardNormal;

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// Network with every weight and bias uniform on `[-scale, scale]`.
pub fn random_net(sizes: &[usize], scale: f64, rng: &mut Rng) -> QNetwork {
    let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let params = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
    QNetwork::from_parts(sizes.to_vec(), params).unwrap()
}

/// `Π_{k=0}^{N(τ)} 1[x_k ∈ C]` for the benchmark, simulated with a
/// hand-written Euler–Maruyama step that consumes `rng` exactly like a
/// rollout: two standard normals per step, one step per grid time.
pub fn indicator_product(x0: [f64; 2], tau: f64, dt: f64, actions: &[usize], rng: &mut Rng) -> u32 {
    const U: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let n_steps = (tau / dt + 1e-9).floor() as usize;
    let safe = |x: &[f64; 2]| 1.0 - x[1] * x[1] > 0.0;
    let mut x = x0;
    if !safe(&x) {
        return 0;
    }
    for k in 0..n_steps {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let (w1, w2) = (dt.sqrt() * z1, dt.sqrt() * z2);
        let f1 = -x[0] * x[0] * x[0] - x[1];
        let f2 = x[0] + x[1] + U[actions[k]];
        x = [x[0] + (f1 * dt + 0.2 * w1), x[1] + (f2 * dt + 0.2 * w2)];
        if !safe(&x) {
            return 0;
        }
    }
    1
}

/// Runs `count` rollouts of random open-loop policies from random starts in
/// `Ω_D` and returns how many had `G ≠ Π 1[x_k ∈ C]`, plus the number of
/// safe outcomes (to show both branches were exercised).
pub fn prop1_mismatches(count: usize, seed: u64) -> (usize, usize) {
    let sys = Benchmark::new();
    let dt = 0.1;
    let mdp = AugmentedMdp::new(&sys, dt);
    let mut setup = stream_rng(seed, 7);
    let (mut bad, mut safe) = (0, 0);
    for i in 0..count {
        let tau = [0.5, 1.0, 2.0][i % 3];
        let x0 = loop {
            let x = [setup.random_range(-1.5..=1.5), setup.random_range(-1.0..=1.0)];
            if 1.0 - x[1] * x[1] > 0.0 {
                break x;
            }
        };
        let actions: Vec<usize> = (0..=mdp.horizon_steps(tau)).map(|_| setup.random_range(0..5)).collect();
        let noise = stream_rng(seed, 1000 + i as u64);
        let mut k = 0;
        let traj = mdp
            .rollout(
                |_: &AugmentedState| {
                    k += 1;
                    actions[k - 1]
                },
                &AugmentedState::new(tau, x0.to_vec()),
                &mut noise.clone(),
            )
            .unwrap();
        let g = traj.ret;
        assert!(g == 0.0 || g == 1.0, "return {g} is not an indicator");
        let oracle = indicator_product(x0, tau, dt, &actions, &mut noise.clone());
        if g as u32 != oracle {
            bad += 1;
        }
        safe += oracle as usize;
    }
    (bad, safe)
}

/// Worst relative errors of one network's derivatives against central
/// differences: (parameter gradient, input gradient, input Hessian, Hessian
/// asymmetry).
pub fn autodiff_errors(net: &QNetwork, rng: &mut Rng) -> (f64, f64, f64, f64) {
    let d = net.input_dim();
    let a = net.num_actions();
    let s: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let adjoint: Vec<f64> = (0..a).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let head = rng.random_range(0..a);

    let loss = |n: &QNetwork| -> f64 { n.forward(&s).unwrap().iter().zip(&adjoint).map(|(q, w)| q * w).sum() };
    let g = net.param_gradient(&s, &adjoint).unwrap();
    let h = 1e-5;
    let mut probe = net.clone();
    let fd: Vec<f64> = (0..net.num_params())
        .map(|i| {
            let p0 = probe.params()[i];
            probe.params_mut()[i] = p0 + h;
            let up = loss(&probe);
            probe.params_mut()[i] = p0 - h;
            let dn = loss(&probe);
            probe.params_mut()[i] = p0;
            (up - dn) / (2.0 * h)
        })
        .collect();
    let e_param = rel_err(&g, &fd, 1e-8);

    let q = |x: &[f64]| net.forward(x).unwrap()[head];
    let gi = net.input_gradient(&s, head).unwrap();
    let fdi: Vec<f64> = (0..d)
        .map(|i| {
            let (mut up, mut dn) = (s.clone(), s.clone());
            up[i] += h;
            dn[i] -= h;
            (q(&up) - q(&dn)) / (2.0 * h)
        })
        .collect();
    let e_input = rel_err(&gi, &fdi, 1e-8);

    let hess = net.input_hessian(&s, head).unwrap();
    let hh = 1e-4;
    let mut flat = Vec::new();
    let mut fd_flat = Vec::new();
    let mut asym: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let at = |di: f64, dj: f64| {
                let mut x = s.clone();
                x[i] += di;
                x[j] += dj;
                q(&x)
            };
            let v = (at(hh, hh) - at(hh, -hh) - at(-hh, hh) + at(-hh, -hh)) / (4.0 * hh * hh);
            flat.push(hess[i][j]);
            fd_flat.push(v);
            asym = asym.max((hess[i][j] - hess[j][i]).abs());
        }
    }
    let e_hess = rel_err(&flat, &fd_flat, 1e-6);
    (e_param, e_input, e_hess, asym)
}
