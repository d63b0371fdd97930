//! Minimal feedforward networks with exact reverse-mode gradients and the
//! Adam optimizer.
//!
//! Batches are row-major (`batch x dim`). Only the three activations used by
//! the experiments exist: `relu`, `identity`, and a clamped `exp` for
//! variance heads. A network is mutated only through [`MlpNet::set_params_from`],
//! which bumps an internal version so a [`Trace`] from before the update can
//! no longer be fed to [`MlpNet::backward`].

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::numkit::{sample_gaussian, DenseMatrix, RngStream};

static NET_IDS: AtomicU64 = AtomicU64::new(1);

/// Clamp bounds for the `exp` head; the clamp is inactive at any solution
/// the experiments reach (variances live in roughly `[alpha, 1]`).
const EXP_CLAMP_LO: f64 = -20.0;
const EXP_CLAMP_HI: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    /// `exp(clamp(s, -20, 5))`; constant (zero derivative) outside the clamp.
    Exp,
}

impl Activation {
    #[inline]
    pub fn apply(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => pre,
            Activation::Relu => {
                if pre > 0.0 {
                    pre
                } else {
                    0.0
                }
            }
            Activation::Exp => pre.clamp(EXP_CLAMP_LO, EXP_CLAMP_HI).exp(),
        }
    }

    /// Derivative with respect to the pre-activation. The relu subgradient
    /// at exactly zero is zero.
    #[inline]
    pub fn deriv(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Exp => {
                if (EXP_CLAMP_LO..=EXP_CLAMP_HI).contains(&pre) {
                    pre.exp()
                } else {
                    0.0
                }
            }
        }
    }
}

/// One affine layer: `post = act(x W^T + b)` with `weight` stored `out x in`.
#[derive(Clone)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// A feedforward network. An empty layer list is a valid pass-through
/// (used by zero-hidden-layer encoder trunks).
#[derive(Clone)]
pub struct MlpNet {
    input_dim: usize,
    layers: Vec<Layer>,
    id: u64,
    version: u64,
}

/// Per-layer pre-activations and outputs retained by a forward pass.
pub struct Trace {
    net_id: u64,
    net_version: u64,
    input: DenseMatrix,
    pres: Vec<DenseMatrix>,
    posts: Vec<DenseMatrix>,
}

impl Trace {
    pub fn output(&self) -> &DenseMatrix {
        self.posts.last().unwrap_or(&self.input)
    }

    /// True when any relu or exp pre-activation sits within `tol` of its
    /// kink; finite-difference probes should resample in that case.
    pub fn near_activation_kink(&self, net: &MlpNet, tol: f64) -> bool {
        for (layer, pre) in net.layers.iter().zip(&self.pres) {
            match layer.activation {
                Activation::Identity => {}
                Activation::Relu => {
                    if pre.data().iter().any(|a| a.abs() < tol) {
                        return true;
                    }
                }
                Activation::Exp => {
                    if pre
                        .data()
                        .iter()
                        .any(|a| (a - EXP_CLAMP_LO).abs() < tol || (a - EXP_CLAMP_HI).abs() < tol)
                    {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Parameter gradients mirroring a network's layer shapes.
#[derive(Clone)]
pub struct Gradients {
    pub layers: Vec<(DenseMatrix, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNet) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| (DenseMatrix::zeros(l.weight.rows(), l.weight.cols()), vec![0.0; l.bias.len()]))
            .collect();
        Self { layers }
    }

    pub fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.add_assign_scaled(ow, s);
            for (bi, obi) in b.iter_mut().zip(ob) {
                *bi += s * obi;
            }
        }
    }

    /// Append all gradient entries, layer by layer, weights before biases.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in &self.layers {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
    }
}

impl MlpNet {
    /// Pass-through network with no layers.
    pub fn empty(input_dim: usize) -> Self {
        Self { input_dim, layers: Vec::new(), id: NET_IDS.fetch_add(1, Ordering::Relaxed), version: 0 }
    }

    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut dim = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.weight.cols() != dim {
                return Err(Error::DimMismatch {
                    op: "MlpNet::from_layers",
                    details: format!(
                        "layer {i} expects input dim {}, previous layer produces {dim}",
                        l.weight.cols()
                    ),
                });
            }
            if l.bias.len() != l.weight.rows() {
                return Err(Error::DimMismatch {
                    op: "MlpNet::from_layers",
                    details: format!("layer {i} bias length {} vs {} rows", l.bias.len(), l.weight.rows()),
                });
            }
            dim = l.weight.rows();
        }
        Ok(Self { input_dim, layers, id: NET_IDS.fetch_add(1, Ordering::Relaxed), version: 0 })
    }

    /// He initialization: weights `N(0, 2 / fan_in)`, biases zero.
    pub fn he_init(input_dim: usize, spec: &[(usize, Activation)], stream: &RngStream) -> Self {
        let mut layers = Vec::with_capacity(spec.len());
        let mut fan_in = input_dim;
        for (idx, &(out, act)) in spec.iter().enumerate() {
            let scale = (2.0 / fan_in as f64).sqrt();
            let weight =
                sample_gaussian(&stream.child(&format!("layer{idx}")), out, fan_in).scaled(scale);
            layers.push(Layer { weight, bias: vec![0.0; out], activation: act });
            fan_in = out;
        }
        Self { input_dim, layers, id: NET_IDS.fetch_add(1, Ordering::Relaxed), version: 0 }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.weight.rows())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<(Trace, DenseMatrix)> {
        if x.cols() != self.input_dim {
            return Err(Error::DimMismatch {
                op: "MlpNet::forward",
                details: format!("input has {} columns, first layer expects {}", x.cols(), self.input_dim),
            });
        }
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut posts = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for layer in &self.layers {
            let mut pre = cur.matmul_nt(&layer.weight);
            for i in 0..pre.rows() {
                for (j, b) in layer.bias.iter().enumerate() {
                    pre.set(i, j, pre.get(i, j) + b);
                }
            }
            let post = pre.map(|v| layer.activation.apply(v));
            pres.push(pre);
            posts.push(post);
            cur = posts.last().unwrap();
        }
        let output = cur.clone();
        let trace =
            Trace { net_id: self.id, net_version: self.version, input: x.clone(), pres, posts };
        Ok((trace, output))
    }

    /// Reverse pass. `grad_out` is the loss gradient with respect to the
    /// network output; returns parameter gradients and the gradient with
    /// respect to the input batch.
    pub fn backward(&self, trace: &Trace, grad_out: &DenseMatrix) -> Result<(Gradients, DenseMatrix)> {
        if trace.net_id != self.id || trace.net_version != self.version {
            return Err(Error::StaleTrace);
        }
        if grad_out.rows() != trace.input.rows() || grad_out.cols() != self.output_dim() {
            return Err(Error::DimMismatch {
                op: "MlpNet::backward",
                details: format!(
                    "grad_out is {}x{}, expected {}x{}",
                    grad_out.rows(),
                    grad_out.cols(),
                    trace.input.rows(),
                    self.output_dim()
                ),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut g = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let pre = &trace.pres[l];
            // d loss / d pre
            let mut g_pre = g;
            for (gp, p) in g_pre.data_mut().iter_mut().zip(pre.data()) {
                *gp *= layer.activation.deriv(*p);
            }
            let layer_in = if l == 0 { &trace.input } else { &trace.posts[l - 1] };
            let (dw, db) = &mut grads.layers[l];
            *dw = g_pre.matmul_tn(layer_in);
            for i in 0..g_pre.rows() {
                for (j, dbj) in db.iter_mut().enumerate() {
                    *dbj += g_pre.get(i, j);
                }
            }
            g = g_pre.matmul(&layer.weight);
        }
        Ok((grads, g))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.rows() * l.weight.cols() + l.bias.len()).sum()
    }

    /// Append all parameters, layer by layer, weights before biases (the
    /// same ordering as [`Gradients::flatten_into`]).
    pub fn copy_params_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
    }

    /// Overwrite all parameters from a flat slice; returns the number of
    /// entries consumed. Invalidates existing traces.
    pub fn set_params_from(&mut self, flat: &[f64]) -> usize {
        let mut off = 0;
        for l in &mut self.layers {
            let wlen = l.weight.rows() * l.weight.cols();
            l.weight.data_mut().copy_from_slice(&flat[off..off + wlen]);
            off += wlen;
            let blen = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + blen]);
            off += blen;
        }
        self.version += 1;
        off
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam over a flat parameter vector.
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub hyper: AdamParams,
}

impl AdamState {
    pub fn new(n_params: usize, hyper: AdamParams) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0, hyper }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `weight_decay` is the coefficient `c` of a `c * |params|^2`
    /// penalty, applied as an extra gradient `2 c * params`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], weight_decay: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len(), "adam state sized for {} params", self.m.len());
        self.step += 1;
        let AdamParams { lr, beta1, beta2, eps } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i] + 2.0 * weight_decay * params[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Central-difference gradient check for a scalar loss of the network
/// output. Returns the worst relative error over all parameters.
///
/// `loss` must return the loss value and its gradient with respect to the
/// network output. Callers are responsible for probe points away from
/// activation kinks (see [`Trace::near_activation_kink`]).
pub fn grad_check<F>(net: &mut MlpNet, loss: F, x: &DenseMatrix) -> Result<f64>
where
    F: Fn(&DenseMatrix) -> (f64, DenseMatrix),
{
    let h = 1e-5;
    let (trace, out) = net.forward(x)?;
    let (_, grad_out) = loss(&out);
    let (grads, _) = net.backward(&trace, &grad_out)?;
    let mut analytic = Vec::with_capacity(net.param_count());
    grads.flatten_into(&mut analytic);

    let mut params = Vec::with_capacity(net.param_count());
    net.copy_params_into(&mut params);

    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + h;
        net.set_params_from(&params);
        let plus = loss(&net.forward(x)?.1).0;
        params[i] = orig - h;
        net.set_params_from(&params);
        let minus = loss(&net.forward(x)?.1).0;
        params[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    net.set_params_from(&params);
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::sample_gaussian;

    fn single_layer(w: DenseMatrix, act: Activation) -> MlpNet {
        let bias = vec![0.0; w.rows()];
        MlpNet::from_layers(w.cols(), vec![Layer { weight: w, bias, activation: act }]).unwrap()
    }

    #[test]
    fn identity_layer_passes_input() {
        let net = single_layer(DenseMatrix::identity(4), Activation::Identity);
        let x = sample_gaussian(&RngStream::new(1, "dn/id"), 3, 4);
        let (_, out) = net.forward(&x).unwrap();
        assert!(out.sub(&x).max_abs() < 1e-15);
    }

    #[test]
    fn relu_kills_negative_preactivations() {
        let net = single_layer(DenseMatrix::identity(3), Activation::Relu);
        let x = DenseMatrix::from_vec(2, 3, vec![-1.0, -2.0, -0.5, -3.0, -0.1, -9.0]).unwrap();
        let (_, out) = net.forward(&x).unwrap();
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn exp_of_zero_is_one() {
        let net = single_layer(DenseMatrix::zeros(3, 2), Activation::Exp);
        let x = sample_gaussian(&RngStream::new(2, "dn/exp"), 4, 2);
        let (_, out) = net.forward(&x).unwrap();
        for v in out.data() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_grad_out_zero_grads() {
        let stream = RngStream::new(3, "dn/zero");
        let net = MlpNet::he_init(4, &[(5, Activation::Relu), (2, Activation::Identity)], &stream);
        let x = sample_gaussian(&stream.child("x"), 3, 4);
        let (trace, out) = net.forward(&x).unwrap();
        let (grads, gin) = net.backward(&trace, &DenseMatrix::zeros(out.rows(), out.cols())).unwrap();
        let mut flat = Vec::new();
        grads.flatten_into(&mut flat);
        assert!(flat.iter().all(|&g| g == 0.0));
        assert_eq!(gin.max_abs(), 0.0);
    }

    #[test]
    fn linear_layer_squared_loss_analytic_gradient() {
        // loss = |Wx - y|^2 summed over the batch; dW = 2 (Wx - y) x^T
        let stream = RngStream::new(4, "dn/lin");
        let w = sample_gaussian(&stream.child("w"), 3, 4);
        let net = single_layer(w.clone(), Activation::Identity);
        let x = sample_gaussian(&stream.child("x"), 1, 4);
        let y = sample_gaussian(&stream.child("y"), 1, 3);
        let (trace, out) = net.forward(&x).unwrap();
        let resid = out.sub(&y);
        let (grads, _) = net.backward(&trace, &resid.scaled(2.0)).unwrap();
        let expect = resid.matmul_tn(&x).scaled(2.0);
        assert!(grads.layers[0].0.sub(&expect).max_abs() < 1e-12);
    }

    #[test]
    fn three_layer_matches_finite_differences() {
        let stream = RngStream::new(5, "dn/fd");
        let mut net = MlpNet::he_init(
            6,
            &[(8, Activation::Relu), (8, Activation::Relu), (4, Activation::Identity)],
            &stream,
        );
        // probe away from relu kinks
        let mut x = sample_gaussian(&stream.child("x"), 5, 6);
        for k in 0..50 {
            let (trace, _) = net.forward(&x).unwrap();
            if !trace.near_activation_kink(&net, 1e-4) {
                break;
            }
            x = sample_gaussian(&stream.child(&format!("x{k}")), 5, 6);
        }
        let loss = |out: &DenseMatrix| {
            let v = out.data().iter().map(|o| o * o).sum::<f64>();
            (v, out.scaled(2.0))
        };
        let err = grad_check(&mut net, loss, &x).unwrap();
        assert!(err <= 1e-5, "max relative error {err}");
    }

    #[test]
    fn stale_trace_rejected() {
        let stream = RngStream::new(6, "dn/stale");
        let mut net = MlpNet::he_init(3, &[(2, Activation::Identity)], &stream);
        let x = sample_gaussian(&stream.child("x"), 2, 3);
        let (trace, out) = net.forward(&x).unwrap();
        let mut params = Vec::new();
        net.copy_params_into(&mut params);
        params[0] += 0.5;
        net.set_params_from(&params);
        match net.backward(&trace, &out) {
            Err(Error::StaleTrace) => {}
            _ => panic!("expected stale trace error"),
        }
    }

    #[test]
    fn dim_mismatch_names_layer() {
        let net = single_layer(DenseMatrix::zeros(2, 3), Activation::Identity);
        let x = DenseMatrix::zeros(1, 4);
        let msg = match net.forward(&x) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("expected dimension error"),
        };
        assert!(msg.contains("expects 3") || msg.contains("first layer"), "{msg}");
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let g = vec![0.0; 3];
        let mut adam = AdamState::new(3, AdamParams::default());
        adam.step(&mut p, &g, 0.0);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = vec![0.0, 0.0];
        let g = vec![1e3, -2e4];
        let hyper = AdamParams { lr: 0.01, ..AdamParams::default() };
        let mut adam = AdamState::new(2, hyper);
        adam.step(&mut p, &g, 0.0);
        assert!((p[0] + 0.01).abs() < 1e-6);
        assert!((p[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_weight_decay_shrinks_params() {
        let mut p = vec![2.0, -3.0];
        let g = vec![0.0, 0.0];
        let mut adam = AdamState::new(2, AdamParams { lr: 0.01, ..AdamParams::default() });
        for _ in 0..10 {
            let before: Vec<f64> = p.clone();
            adam.step(&mut p, &g, 5e-4);
            assert!(p[0].abs() < before[0].abs());
            assert!(p[1].abs() < before[1].abs());
            assert!(p[0] > 0.0 && p[1] < 0.0);
        }
    }

    #[test]
    fn he_init_variance_near_two_over_fan_in() {
        let stream = RngStream::new(7, "dn/he");
        let net = MlpNet::he_init(200, &[(150, Activation::Relu)], &stream);
        let w = &net.layers()[0].weight;
        let n = (w.rows() * w.cols()) as f64;
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / n;
        let want = 2.0 / 200.0;
        assert!((var - want).abs() < 0.2 * want, "var {var}, want {want}");
        assert!(net.layers()[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn forward_deterministic_and_batch_order_free() {
        let stream = RngStream::new(8, "dn/det");
        let net = MlpNet::he_init(4, &[(6, Activation::Relu), (3, Activation::Identity)], &stream);
        let x = sample_gaussian(&stream.child("x"), 4, 4);
        let (_, out1) = net.forward(&x).unwrap();
        let (_, out2) = net.forward(&x).unwrap();
        assert_eq!(out1, out2);
        // permute batch rows: per-sample outputs permute identically
        let perm = [2usize, 0, 3, 1];
        let xp = DenseMatrix::from_fn(4, 4, |i, j| x.get(perm[i], j));
        let (_, outp) = net.forward(&xp).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for j in 0..out1.cols() {
                assert_eq!(outp.get(i, j), out1.get(src, j));
            }
        }
    }
}
