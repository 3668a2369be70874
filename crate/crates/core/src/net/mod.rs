//! Multi-head tanh perceptron `Q(s, ·; θ)` with exact derivatives.
//!
//! All parameters live in one flat `f64` vector. Layer `l` maps
//! `sizes[l] → sizes[l+1]` and stores its weights row-major (`out × in`)
//! followed by its biases. Hidden layers use `tanh`; the output layer is
//! affine with one head per discrete action.
//!
//! Derivatives come in two independent flavours:
//! - [`jet`]: second-order directional derivatives along a few input
//!   directions together with a reverse pass that differentiates any loss of
//!   those quantities with respect to `θ`. Plain backprop is the zero-direction
//!   case.
//! - [`hessian`]: forward propagation of the full input Jacobian and Hessian.

pub mod checkpoint;
pub mod hessian;
pub mod jet;

use rand::Rng;

use crate::error::{Error, Result};

pub use jet::{HeadJet, JetTape};

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Borrowed weights and biases of one layer.
#[derive(Debug, Clone, Copy)]
pub struct Layer<'a> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: &'a [f64],
    pub bias: &'a [f64],
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl QNetwork {
    /// `input → hidden… → actions` with every parameter zero.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|s| *s > 0), "invalid layer sizes {sizes:?}");
        Self { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)] }
    }

    /// Weights uniform on `±√(6/(fan_in + fan_out))`, biases zero.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-limit..=limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    /// Default architecture: `input → 32 → 32 → 32 → actions`.
    pub fn default_sizes(input: usize, actions: usize) -> Vec<usize> {
        vec![input, 32, 32, 32, actions]
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer sizes {sizes:?}")));
        }
        let expected = param_count(&sizes);
        if params.len() != expected {
            return Err(Error::DimensionMismatch { context: "parameter vector", expected, actual: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_actions(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.sizes[..=l])
    }

    pub fn layer(&self, l: usize) -> Layer<'_> {
        let (inputs, outputs) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.layer_offset(l);
        let wend = start + inputs * outputs;
        Layer {
            inputs,
            outputs,
            weights: &self.params[start..wend],
            bias: &self.params[wend..wend + outputs],
        }
    }

    fn check_input(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { context: "network input", expected: self.input_dim(), actual: s.len() });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.num_actions() {
            return Err(Error::InvalidArgument(format!("head {head} out of range ({} actions)", self.num_actions())));
        }
        Ok(())
    }

    /// All action values at `s`.
    pub fn forward(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_input(s)?;
        let mut scratch = ForwardScratch::new(self);
        Ok(self.forward_with(s, &mut scratch).to_vec())
    }

    /// Unchecked forward pass into reusable buffers.
    pub fn forward_with<'s>(&self, s: &[f64], scratch: &'s mut ForwardScratch) -> &'s [f64] {
        let last = self.num_layers() - 1;
        scratch.bufs[0].copy_from_slice(s);
        for l in 0..=last {
            let layer = self.layer(l);
            let (head, tail) = scratch.bufs.split_at_mut(l + 1);
            let (input, output) = (&head[l], &mut tail[0]);
            affine(&layer, input, output);
            if l < last {
                for v in output.iter_mut() {
                    *v = v.tanh();
                }
            }
        }
        &scratch.bufs[last + 1]
    }

    pub fn greedy_action(&self, s: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(s)?))
    }

    /// `∂/∂θ Σᵢ adjointᵢ·Qᵢ(s; θ)`.
    pub fn param_gradient(&self, s: &[f64], adjoint: &[f64]) -> Result<Vec<f64>> {
        self.check_input(s)?;
        if adjoint.len() != self.num_actions() {
            return Err(Error::DimensionMismatch { context: "output adjoint", expected: self.num_actions(), actual: adjoint.len() });
        }
        let mut grad = vec![0.0; self.num_params()];
        let mut tape = JetTape::new(self, 0);
        tape.forward(self, s, &[]);
        tape.backward(self, adjoint, &[], &[], &mut grad, false);
        Ok(grad)
    }

    /// `∇ₛ Q(s, head)`.
    pub fn input_gradient(&self, s: &[f64], head: usize) -> Result<Vec<f64>> {
        self.check_input(s)?;
        self.check_head(head)?;
        let mut adjoint = vec![0.0; self.num_actions()];
        adjoint[head] = 1.0;
        let mut tape = JetTape::new(self, 0);
        tape.forward(self, s, &[]);
        let mut unused = vec![0.0; self.num_params()];
        tape.backward(self, &adjoint, &[], &[], &mut unused, true);
        Ok(tape.input_adjoint().to_vec())
    }

    /// `∇²ₛ Q(s, head)` as a dense symmetric matrix.
    pub fn input_hessian(&self, s: &[f64], head: usize) -> Result<Vec<Vec<f64>>> {
        self.check_input(s)?;
        self.check_head(head)?;
        Ok(hessian::input_hessian(self, s, head))
    }
}

/// `out = W·input + b`.
#[inline]
pub(crate) fn affine(layer: &Layer<'_>, input: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().enumerate() {
        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
        *v = layer.bias[o] + dot(row, input);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Activation buffers for [`QNetwork::forward_with`].
#[derive(Debug, Clone)]
pub struct ForwardScratch {
    bufs: Vec<Vec<f64>>,
}

impl ForwardScratch {
    pub fn new(net: &QNetwork) -> Self {
        Self { bufs: net.sizes.iter().map(|n| vec![0.0; *n]).collect() }
    }
}

/// Slowly tracking copy `θ̂` of a Q-network.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNetwork(QNetwork);

impl TargetNetwork {
    pub fn from_source(source: &QNetwork) -> Self {
        Self(source.clone())
    }

    pub fn net(&self) -> &QNetwork {
        &self.0
    }

    /// `θ̂ ← η·θ + (1 − η)·θ̂`.
    pub fn soft_update(&mut self, source: &QNetwork, eta: f64) -> Result<()> {
        if source.sizes != self.0.sizes {
            return Err(Error::ShapeMismatch(self.0.sizes.clone(), source.sizes.clone()));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidArgument(format!("smoothing factor must lie in (0, 1], got {eta}")));
        }
        for (t, s) in self.0.params.iter_mut().zip(&source.params) {
            *t = eta * s + (1.0 - eta) * *t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn random_net(seed: u64, sizes: &[usize]) -> QNetwork {
        QNetwork::glorot(sizes, &mut stream_rng(seed, 0))
    }

    /// Straightforward second implementation used as an oracle.
    fn reference_forward(net: &QNetwork, s: &[f64]) -> Vec<f64> {
        let mut a = s.to_vec();
        for l in 0..net.num_layers() {
            let layer = net.layer(l);
            let mut z = vec![0.0; layer.outputs];
            for o in 0..layer.outputs {
                z[o] = layer.bias[o];
                for i in 0..layer.inputs {
                    z[o] += layer.weights[o * layer.inputs + i] * a[i];
                }
            }
            if l + 1 < net.num_layers() {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            a = z;
        }
        a
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(&[3, 32, 32, 32, 5]);
        assert_eq!(net.forward(&[0.4, -1.0, 2.0]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn constant_network_ignores_input() {
        // single hidden unit, input weights zero, arbitrary biases
        let sizes = vec![3, 1, 1];
        let params = vec![0.0, 0.0, 0.0, 0.7, 1.3, -0.2];
        let net = QNetwork::from_parts(sizes, params).unwrap();
        let a = net.forward(&[0.0, 0.0, 0.0]).unwrap();
        let b = net.forward(&[2.0, -5.0, 1.0]).unwrap();
        assert_eq!(a, b);
        assert!((a[0] - (1.3 * 0.7f64.tanh() - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn forward_matches_reference() {
        for seed in 0..20 {
            let net = random_net(seed, &[3, 32, 32, 32, 5]);
            let s = [0.3 * seed as f64 / 10.0, -0.7, 0.25];
            let fast = net.forward(&s).unwrap();
            let slow = reference_forward(&net, &s);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()));
            }
            assert_eq!(fast, net.forward(&s).unwrap());
        }
    }

    #[test]
    fn forward_rejects_non_finite_and_bad_dims() {
        let net = random_net(1, &[3, 4, 2]);
        assert!(matches!(net.forward(&[f64::NAN, 0.0, 0.0]), Err(Error::NonFinite(_))));
        assert!(matches!(net.forward(&[0.0, 0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(argmax(&[0.1, 0.3, 0.2, 0.0, 0.0]), 1);
        assert_eq!(argmax(&[0.5; 5]), 0);
        for seed in 0..20 {
            let net = random_net(seed, &[3, 8, 5]);
            let s = [1.0, 0.2, -0.3];
            let q = net.forward(&s).unwrap();
            let brute = (0..5).find(|i| (0..5).all(|j| q[*i] >= q[j])).unwrap();
            assert_eq!(net.greedy_action(&s).unwrap(), brute);
        }
    }

    #[test]
    fn single_affine_layer_gradient_is_input_pattern() {
        let net = random_net(3, &[3, 2]);
        let s = [0.5, -1.5, 2.0];
        let grad = net.param_gradient(&s, &[0.0, 1.0]).unwrap();
        // W row-major (2×3) then b (2)
        assert_eq!(grad, vec![0.0, 0.0, 0.0, 0.5, -1.5, 2.0, 0.0, 1.0]);
        let zero = net.param_gradient(&s, &[0.0, 0.0]).unwrap();
        assert!(zero.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn input_gradient_simple_cases() {
        let constant = QNetwork::from_parts(vec![3, 1, 1], vec![0.0, 0.0, 0.0, 0.7, 1.3, -0.2]).unwrap();
        assert_eq!(constant.input_gradient(&[1.0, 2.0, 3.0], 0).unwrap(), vec![0.0; 3]);

        let linear = QNetwork::from_parts(vec![3, 1], vec![0.3, -2.0, 5.0, 1.0]).unwrap();
        assert_eq!(linear.input_gradient(&[1.0, 2.0, 3.0], 0).unwrap(), vec![0.3, -2.0, 5.0]);
        assert!(linear.input_gradient(&[1.0, 2.0, 3.0], 1).is_err());
    }

    #[test]
    fn hessian_simple_cases() {
        let linear = QNetwork::from_parts(vec![3, 1], vec![0.3, -2.0, 5.0, 1.0]).unwrap();
        let h = linear.input_hessian(&[1.0, 2.0, 3.0], 0).unwrap();
        assert!(h.iter().flatten().all(|v| *v == 0.0));

        // Q(s) = tanh(s₁)
        let single = QNetwork::from_parts(vec![3, 1, 1], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        for s1 in [-1.3, 0.0, 0.4, 2.0] {
            let h = single.input_hessian(&[s1, 0.5, -0.5], 0).unwrap();
            let t = f64::tanh(s1);
            assert!((h[0][0] - (-2.0 * t * (1.0 - t * t))).abs() < 1e-15);
            assert_eq!(h[1][1], 0.0);
            assert_eq!(h[0][2], 0.0);
        }
    }

    #[test]
    fn soft_update_examples() {
        let source = random_net(4, &[3, 4, 2]);
        let mut target = TargetNetwork::from_source(&random_net(5, &[3, 4, 2]));
        target.soft_update(&source, 1.0).unwrap();
        assert_eq!(target.net(), &source);

        let theta = QNetwork::from_parts(vec![1, 1], vec![2.0, 2.0]).unwrap();
        let mut hat = TargetNetwork::from_source(&QNetwork::zeros(&[1, 1]));
        hat.soft_update(&theta, 0.5).unwrap();
        assert_eq!(hat.net().params(), &[1.0, 1.0]);
    }

    #[test]
    fn soft_update_decays_geometrically() {
        let source = random_net(6, &[3, 4, 2]);
        let mut target = TargetNetwork::from_source(&random_net(7, &[3, 4, 2]));
        let eta = 0.2;
        let dist = |t: &TargetNetwork| {
            t.net().params().iter().zip(source.params()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let mut prev = dist(&target);
        for _ in 0..20 {
            target.soft_update(&source, eta).unwrap();
            let now = dist(&target);
            assert!((now / prev - (1.0 - eta)).abs() < 1e-9);
            prev = now;
        }
    }

    #[test]
    fn soft_update_rejects_mismatch() {
        let mut target = TargetNetwork::from_source(&QNetwork::zeros(&[3, 4, 2]));
        assert!(matches!(
            target.soft_update(&QNetwork::zeros(&[3, 5, 2]), 0.5),
            Err(Error::ShapeMismatch(..))
        ));
        assert!(target.soft_update(&QNetwork::zeros(&[3, 4, 2]), 0.0).is_err());
    }
}
