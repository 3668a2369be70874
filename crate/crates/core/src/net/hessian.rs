//! Full input Hessian by forward propagation of `(value, Jacobian, Hessian)`
//! through every unit. Independent of the jet machinery so the two can be
//! cross-checked.

use super::QNetwork;

pub(crate) fn input_hessian(net: &QNetwork, s: &[f64], head: usize) -> Vec<Vec<f64>> {
    let d = net.input_dim();
    let dd = d * d;
    let mut val = s.to_vec();
    // jac[i*d + j] = ∂a_i/∂s_j, hess[i*dd + j*d + k] = ∂²a_i/∂s_j∂s_k
    let mut jac = vec![0.0; d * d];
    for i in 0..d {
        jac[i * d + i] = 1.0;
    }
    let mut hess = vec![0.0; d * dd];

    let last = net.num_layers() - 1;
    for l in 0..=last {
        let layer = net.layer(l);
        let (nin, nout) = (layer.inputs, layer.outputs);
        let mut z = vec![0.0; nout];
        let mut zj = vec![0.0; nout * d];
        let mut zh = vec![0.0; nout * dd];
        for o in 0..nout {
            let row = &layer.weights[o * nin..(o + 1) * nin];
            z[o] = layer.bias[o];
            for i in 0..nin {
                let w = row[i];
                z[o] += w * val[i];
                for j in 0..d {
                    zj[o * d + j] += w * jac[i * d + j];
                }
                for m in 0..dd {
                    zh[o * dd + m] += w * hess[i * dd + m];
                }
            }
        }
        if l < last {
            for o in 0..nout {
                let y = z[o].tanh();
                let p = 1.0 - y * y;
                let q = -2.0 * y * p;
                z[o] = y;
                for j in 0..d {
                    for k in 0..d {
                        let m = o * dd + j * d + k;
                        zh[m] = q * zj[o * d + j] * zj[o * d + k] + p * zh[m];
                    }
                }
                for j in 0..d {
                    zj[o * d + j] *= p;
                }
            }
        }
        val = z;
        jac = zj;
        hess = zh;
    }

    (0..d).map(|j| hess[head * dd + j * d..head * dd + (j + 1) * d].to_vec()).collect()
}
