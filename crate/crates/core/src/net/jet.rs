//! Second-order directional jets through the network and their reverse pass.
//!
//! For input directions `d₁…d_K` the forward sweep carries, per unit, the
//! value, the first directional derivatives `∂_{d_k}` and the pure second
//! directional derivatives `∂²_{d_k}`. Through `y = tanh z` with
//! `p = 1 − y²`, `q = −2yp`:
//!
//! ```text
//! ẏ_k = p·ż_k        ÿ_k = q·ż_k² + p·z̈_k
//! ```
//!
//! The backward sweep takes adjoints of the head's value, first and second
//! derivatives and returns `∂L/∂θ` exactly. With `K = 0` it is ordinary
//! backpropagation.

use super::{affine, QNetwork};

/// Value and directional derivatives of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadJet {
    pub value: f64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Forward cache and backward buffers for a fixed number of directions.
#[derive(Debug, Clone)]
pub struct JetTape {
    dirs: usize,
    sizes: Vec<usize>,
    // Level l holds the input of layer l; level L holds the network output.
    vals: Vec<Vec<f64>>,
    tans: Vec<Vec<f64>>,
    secs: Vec<Vec<f64>>,
    // Pre-activation tangents/seconds of layer l's output.
    ztan: Vec<Vec<f64>>,
    zsec: Vec<Vec<f64>>,
    // Adjoints of each level.
    gval: Vec<Vec<f64>>,
    gtan: Vec<Vec<f64>>,
    gsec: Vec<Vec<f64>>,
    dz: Vec<f64>,
    dzt: Vec<f64>,
    dzs: Vec<f64>,
}

impl JetTape {
    pub fn new(net: &QNetwork, dirs: usize) -> Self {
        let sizes = net.sizes().to_vec();
        let levels = |mult: usize| sizes.iter().map(|n| vec![0.0; n * mult]).collect::<Vec<_>>();
        let layer_outs = |mult: usize| sizes[1..].iter().map(|n| vec![0.0; n * mult]).collect::<Vec<_>>();
        let widest = *sizes.iter().max().unwrap();
        Self {
            dirs,
            vals: levels(1),
            tans: levels(dirs),
            secs: levels(dirs),
            ztan: layer_outs(dirs),
            zsec: layer_outs(dirs),
            gval: levels(1),
            gtan: levels(dirs),
            gsec: levels(dirs),
            dz: vec![0.0; widest],
            dzt: vec![0.0; widest * dirs],
            dzs: vec![0.0; widest * dirs],
            sizes,
        }
    }

    pub fn num_dirs(&self) -> usize {
        self.dirs
    }

    /// Forward sweep at `s` along the row-major `K × input_dim` directions.
    pub fn forward(&mut self, net: &QNetwork, s: &[f64], dirs: &[f64]) {
        debug_assert_eq!(net.sizes(), &self.sizes[..]);
        let k = self.dirs;
        let d = self.sizes[0];
        assert_eq!(dirs.len(), k * d, "direction block must be K × input_dim");
        self.vals[0].copy_from_slice(s);
        self.tans[0].copy_from_slice(dirs);
        self.secs[0].iter_mut().for_each(|v| *v = 0.0);

        let last = net.num_layers() - 1;
        for l in 0..=last {
            let layer = net.layer(l);
            let (nin, nout) = (layer.inputs, layer.outputs);
            let (lo, hi) = self.vals.split_at_mut(l + 1);
            affine(&layer, &lo[l], &mut hi[0]);
            let (tlo, thi) = self.tans.split_at_mut(l + 1);
            let (slo, shi) = self.secs.split_at_mut(l + 1);
            let (tin, sin) = (&tlo[l], &slo[l]);
            let zt = &mut self.ztan[l];
            let zs = &mut self.zsec[l];
            for kk in 0..k {
                let t_in = &tin[kk * nin..(kk + 1) * nin];
                let s_in = &sin[kk * nin..(kk + 1) * nin];
                for o in 0..nout {
                    let row = &layer.weights[o * nin..(o + 1) * nin];
                    let mut a = 0.0;
                    let mut b = 0.0;
                    for i in 0..nin {
                        a += row[i] * t_in[i];
                        b += row[i] * s_in[i];
                    }
                    zt[kk * nout + o] = a;
                    zs[kk * nout + o] = b;
                }
            }
            let (y, tout, sout) = (&mut hi[0], &mut thi[0], &mut shi[0]);
            if l < last {
                for o in 0..nout {
                    let yo = y[o].tanh();
                    y[o] = yo;
                    let p = 1.0 - yo * yo;
                    let q = -2.0 * yo * p;
                    for kk in 0..k {
                        let idx = kk * nout + o;
                        tout[idx] = p * zt[idx];
                        sout[idx] = q * zt[idx] * zt[idx] + p * zs[idx];
                    }
                }
            } else {
                tout.copy_from_slice(zt);
                sout.copy_from_slice(zs);
            }
        }
    }

    /// All outputs of the last forward sweep.
    pub fn outputs(&self) -> &[f64] {
        self.vals.last().unwrap()
    }

    pub fn head(&self, head: usize) -> HeadJet {
        let a = *self.sizes.last().unwrap();
        let l = self.sizes.len() - 1;
        HeadJet {
            value: self.vals[l][head],
            first: (0..self.dirs).map(|k| self.tans[l][k * a + head]).collect(),
            second: (0..self.dirs).map(|k| self.secs[l][k * a + head]).collect(),
        }
    }

    /// Adjoint of the network input after a backward sweep with `want_input`.
    pub fn input_adjoint(&self) -> &[f64] {
        &self.gval[0]
    }

    /// Reverse sweep for a loss whose adjoints involve a single head only.
    /// Accumulates into `grad`.
    pub fn backward_head(
        &mut self,
        net: &QNetwork,
        head: usize,
        adj_value: f64,
        adj_first: &[f64],
        adj_second: &[f64],
        grad: &mut [f64],
    ) {
        let a = *self.sizes.last().unwrap();
        let l = self.sizes.len() - 1;
        self.gval[l].iter_mut().for_each(|v| *v = 0.0);
        self.gtan[l].iter_mut().for_each(|v| *v = 0.0);
        self.gsec[l].iter_mut().for_each(|v| *v = 0.0);
        self.gval[l][head] = adj_value;
        for kk in 0..self.dirs {
            self.gtan[l][kk * a + head] = adj_first.get(kk).copied().unwrap_or(0.0);
            self.gsec[l][kk * a + head] = adj_second.get(kk).copied().unwrap_or(0.0);
        }
        self.sweep_back(net, grad, false);
    }

    /// Reverse sweep for general output adjoints (`K × actions` blocks for the
    /// derivative adjoints; empty slices mean zero). Accumulates into `grad`.
    pub fn backward(
        &mut self,
        net: &QNetwork,
        adj_value: &[f64],
        adj_first: &[f64],
        adj_second: &[f64],
        grad: &mut [f64],
        want_input: bool,
    ) {
        let l = self.sizes.len() - 1;
        self.gval[l].copy_from_slice(adj_value);
        fill_or_zero(&mut self.gtan[l], adj_first);
        fill_or_zero(&mut self.gsec[l], adj_second);
        self.sweep_back(net, grad, want_input);
    }

    fn sweep_back(&mut self, net: &QNetwork, grad: &mut [f64], want_input: bool) {
        let k = self.dirs;
        let last = net.num_layers() - 1;
        let mut offset = net.num_params();
        for l in (0..=last).rev() {
            let layer = net.layer(l);
            let (nin, nout) = (layer.inputs, layer.outputs);
            offset -= nin * nout + nout;

            let (gv, gt, gs) = (&self.gval[l + 1], &self.gtan[l + 1], &self.gsec[l + 1]);
            let (dz, dzt, dzs) = (&mut self.dz[..nout], &mut self.dzt[..k * nout], &mut self.dzs[..k * nout]);
            if l < last {
                let y = &self.vals[l + 1];
                let (zt, zs) = (&self.ztan[l], &self.zsec[l]);
                for o in 0..nout {
                    let yo = y[o];
                    let p = 1.0 - yo * yo;
                    let q = -2.0 * yo * p;
                    let mut pbar = 0.0;
                    let mut qbar = 0.0;
                    for kk in 0..k {
                        let idx = kk * nout + o;
                        dzt[idx] = p * gt[idx] + 2.0 * q * zt[idx] * gs[idx];
                        dzs[idx] = p * gs[idx];
                        pbar += gt[idx] * zt[idx] + gs[idx] * zs[idx];
                        qbar += gs[idx] * zt[idx] * zt[idx];
                    }
                    let ybar = gv[o] - 2.0 * yo * pbar + (6.0 * yo * yo - 2.0) * qbar;
                    dz[o] = ybar * p;
                }
            } else {
                dz.copy_from_slice(gv);
                dzt.copy_from_slice(gt);
                dzs.copy_from_slice(gs);
            }

            let (a_in, t_in, s_in) = (&self.vals[l], &self.tans[l], &self.secs[l]);
            let (gw, gb) = grad[offset..offset + nin * nout + nout].split_at_mut(nin * nout);
            let first_layer = l == 0;
            for o in 0..nout {
                let row = &mut gw[o * nin..(o + 1) * nin];
                let g = dz[o];
                if g != 0.0 {
                    for i in 0..nin {
                        row[i] += g * a_in[i];
                    }
                }
                for kk in 0..k {
                    let gt_o = dzt[kk * nout + o];
                    if gt_o != 0.0 {
                        let t = &t_in[kk * nin..(kk + 1) * nin];
                        for i in 0..nin {
                            row[i] += gt_o * t[i];
                        }
                    }
                    // second-order inputs are identically zero at the first layer
                    let gs_o = dzs[kk * nout + o];
                    if !first_layer && gs_o != 0.0 {
                        let s = &s_in[kk * nin..(kk + 1) * nin];
                        for i in 0..nin {
                            row[i] += gs_o * s[i];
                        }
                    }
                }
                gb[o] += g;
            }

            if l > 0 || want_input {
                let w = layer.weights;
                let (gv_in, gt_in, gs_in) = (&mut self.gval[l], &mut self.gtan[l], &mut self.gsec[l]);
                gv_in.iter_mut().for_each(|v| *v = 0.0);
                gt_in.iter_mut().for_each(|v| *v = 0.0);
                gs_in.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..nout {
                    let row = &w[o * nin..(o + 1) * nin];
                    let g = dz[o];
                    for i in 0..nin {
                        gv_in[i] += row[i] * g;
                    }
                    for kk in 0..k {
                        let (a, b) = (dzt[kk * nout + o], dzs[kk * nout + o]);
                        let gt_row = &mut gt_in[kk * nin..(kk + 1) * nin];
                        for i in 0..nin {
                            gt_row[i] += row[i] * a;
                        }
                        let gs_row = &mut gs_in[kk * nin..(kk + 1) * nin];
                        for i in 0..nin {
                            gs_row[i] += row[i] * b;
                        }
                    }
                }
            }
        }
    }
}

fn fill_or_zero(dst: &mut [f64], src: &[f64]) {
    if src.is_empty() {
        dst.iter_mut().for_each(|v| *v = 0.0);
    } else {
        dst.copy_from_slice(src);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn net(seed: u64) -> QNetwork {
        QNetwork::glorot(&[3, 6, 5, 4], &mut stream_rng(seed, 0))
    }

    #[test]
    fn zero_directions_reproduce_forward() {
        let n = net(1);
        let s = [0.4, -0.3, 0.9];
        let mut tape = JetTape::new(&n, 0);
        tape.forward(&n, &s, &[]);
        assert_eq!(tape.outputs(), &n.forward(&s).unwrap()[..]);
    }

    #[test]
    fn directional_derivatives_match_gradient_and_hessian() {
        for seed in 0..10 {
            let n = net(seed);
            let s = [0.7, 0.1 * seed as f64 - 0.5, -0.2];
            let dirs = [1.0, 0.5, -0.25, 0.0, 0.3, 0.8];
            let mut tape = JetTape::new(&n, 2);
            tape.forward(&n, &s, &dirs);
            for head in 0..4 {
                let jet = tape.head(head);
                let g = n.input_gradient(&s, head).unwrap();
                let h = n.input_hessian(&s, head).unwrap();
                for kk in 0..2 {
                    let d = &dirs[kk * 3..kk * 3 + 3];
                    let first: f64 = (0..3).map(|i| g[i] * d[i]).sum();
                    let second: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| d[i] * h[i][j] * d[j]).sum();
                    assert!((jet.first[kk] - first).abs() < 1e-12);
                    assert!((jet.second[kk] - second).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn jet_parameter_gradient_matches_central_differences() {
        let n = net(3);
        let s = [0.2, -0.6, 0.4];
        let dirs = [0.0, 0.2, 0.0, 0.0, 0.0, 0.2, -1.0, 0.5, 0.3];
        let head = 2;
        // L = 0.3·v + 1.7·first₂ − 0.4·second₀ + 0.9·second₁
        let loss = |net: &QNetwork| {
            let mut t = JetTape::new(net, 3);
            t.forward(net, &s, &dirs);
            let j = t.head(head);
            0.3 * j.value + 1.7 * j.first[2] - 0.4 * j.second[0] + 0.9 * j.second[1]
        };
        let mut tape = JetTape::new(&n, 3);
        tape.forward(&n, &s, &dirs);
        let mut grad = vec![0.0; n.num_params()];
        tape.backward_head(&n, head, 0.3, &[0.0, 0.0, 1.7], &[-0.4, 0.9, 0.0], &mut grad);

        let step = 1e-5;
        for p in 0..n.num_params() {
            let mut plus = n.clone();
            plus.params_mut()[p] += step;
            let mut minus = n.clone();
            minus.params_mut()[p] -= step;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
            let scale = fd.abs().max(grad[p].abs()).max(1e-3);
            assert!((fd - grad[p]).abs() / scale < 1e-6, "param {p}: fd {fd} vs {}", grad[p]);
        }
    }
}
