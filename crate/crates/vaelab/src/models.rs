//! The three trainable objectives (VAE, AE-ℓ2, AE-ℓ1) and their shared
//! training loop.
//!
//! The decoder covariance is never a trained network: each diagonal element
//! is optimized out in closed form inside [`robust_data_loss`], whose
//! per-element variance is floored at `alpha`. With that substitution the
//! VAE objective implemented here is two times the negative evidence lower
//! bound plus a constant — an affine transform that leaves minimizers
//! untouched — so all claims about trained models are argmin-level claims.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

use crate::diffnet::{Activation, Gradients, MlpNet};
use crate::error::{Error, Result};
use crate::numkit::{DenseMatrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Vae,
    AeL2,
    AeL1,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Vae => "vae",
            ModelKind::AeL2 => "ae_l2",
            ModelKind::AeL1 => "ae_l1",
        }
    }
}

/// Encoder trunk + mean head (+ variance head for the VAE) + decoder mean.
///
/// The variance head shares the trunk with the mean head and ends in the
/// clamped `exp` activation, so its output is the diagonal of the encoder
/// covariance directly.
#[derive(Clone)]
pub struct GenerativeModel {
    pub trunk: MlpNet,
    pub mean_head: MlpNet,
    pub logvar_head: Option<MlpNet>,
    pub decoder: MlpNet,
    pub kind: ModelKind,
}

impl GenerativeModel {
    /// Fresh He-initialized model: `d -> enc_hidden.. -> latent` encoder and
    /// `latent -> dec_hidden.. -> d` decoder, all hidden layers relu.
    pub fn new(
        d: usize,
        enc_hidden: &[usize],
        latent: usize,
        dec_hidden: &[usize],
        kind: ModelKind,
        stream: &RngStream,
    ) -> Self {
        let trunk = if enc_hidden.is_empty() {
            MlpNet::empty(d)
        } else {
            let spec: Vec<(usize, Activation)> =
                enc_hidden.iter().map(|&h| (h, Activation::Relu)).collect();
            MlpNet::he_init(d, &spec, &stream.child("trunk"))
        };
        let trunk_out = trunk.output_dim();
        let mean_head =
            MlpNet::he_init(trunk_out, &[(latent, Activation::Identity)], &stream.child("mean"));
        let logvar_head = (kind == ModelKind::Vae).then(|| {
            MlpNet::he_init(trunk_out, &[(latent, Activation::Exp)], &stream.child("logvar"))
        });
        let mut dec_spec: Vec<(usize, Activation)> =
            dec_hidden.iter().map(|&h| (h, Activation::Relu)).collect();
        dec_spec.push((d, Activation::Identity));
        let decoder = MlpNet::he_init(latent, &dec_spec, &stream.child("decoder"));
        Self { trunk, mean_head, logvar_head, decoder, kind }
    }

    pub fn data_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_head.output_dim()
    }

    /// First decoder layer weight matrix; its columns correspond to latent
    /// dimensions and drive the pruning diagnostics.
    pub fn decoder_first_layer(&self) -> &DenseMatrix {
        &self.decoder.layers()[0].weight
    }

    fn nets(&self) -> Vec<&MlpNet> {
        let mut v = vec![&self.trunk, &self.mean_head];
        if let Some(lv) = &self.logvar_head {
            v.push(lv);
        }
        v.push(&self.decoder);
        v
    }

    pub fn param_count(&self) -> usize {
        self.nets().iter().map(|n| n.param_count()).sum()
    }

    /// Flat parameter vector in canonical order: trunk, mean head, variance
    /// head (VAE only), decoder; within a net, per layer, weights before
    /// biases.
    pub fn copy_params_into(&self, out: &mut Vec<f64>) {
        for net in self.nets() {
            net.copy_params_into(out);
        }
    }

    pub fn set_params_from(&mut self, flat: &[f64]) {
        let mut off = 0;
        off += self.trunk.set_params_from(&flat[off..]);
        off += self.mean_head.set_params_from(&flat[off..]);
        if let Some(lv) = &mut self.logvar_head {
            off += lv.set_params_from(&flat[off..]);
        }
        off += self.decoder.set_params_from(&flat[off..]);
        debug_assert_eq!(off, flat.len());
    }

    /// `(name, offset, len)` for every parameter tensor, in flat order.
    pub fn param_layout(&self) -> Vec<(String, usize, usize)> {
        let mut layout = Vec::new();
        let mut off = 0;
        let mut push_net = |name: &str, net: &MlpNet, off: &mut usize| {
            for (i, l) in net.layers().iter().enumerate() {
                let wlen = l.weight.rows() * l.weight.cols();
                layout.push((format!("{name}.l{i}.w"), *off, wlen));
                *off += wlen;
                layout.push((format!("{name}.l{i}.b"), *off, l.bias.len()));
                *off += l.bias.len();
            }
        };
        push_net("enc.trunk", &self.trunk, &mut off);
        push_net("enc.mean", &self.mean_head, &mut off);
        if let Some(lv) = &self.logvar_head {
            push_net("enc.logvar", lv, &mut off);
        }
        push_net("dec", &self.decoder, &mut off);
        layout
    }

    /// Latent means for a batch in rows (`batch x d` in, `batch x latent` out).
    pub fn encode_mean(&self, xb: &DenseMatrix) -> Result<DenseMatrix> {
        let (_, tout) = self.trunk.forward(xb)?;
        Ok(self.mean_head.forward(&tout)?.1)
    }

    /// Deterministic reconstruction `decoder(encoder mean)` for a batch in rows.
    pub fn reconstruct(&self, xb: &DenseMatrix) -> Result<DenseMatrix> {
        let mu = self.encode_mean(xb)?;
        Ok(self.decoder.forward(&mu)?.1)
    }

    /// Columnwise reconstruction of a `d x n` data matrix, chunked.
    pub fn reconstruct_columns(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let n = x.cols();
        let d = x.rows();
        let mut out = DenseMatrix::zeros(d, n);
        let xt = x.transpose();
        for start in (0..n).step_by(1024) {
            let end = (start + 1024).min(n);
            let chunk = DenseMatrix::from_fn(end - start, d, |i, j| xt.get(start + i, j));
            let recon = self.reconstruct(&chunk)?;
            for i in 0..end - start {
                for j in 0..d {
                    out.set(j, start + i, recon.get(i, j));
                }
            }
        }
        Ok(out)
    }

    /// Encoder variance diagonals for every column of a `d x n` matrix,
    /// returned `n x latent`. VAE models only.
    pub fn encoder_variances(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let lv = self.logvar_head.as_ref().ok_or_else(|| {
            Error::Precondition("encoder_variances: model has no variance head".into())
        })?;
        let n = x.cols();
        let d = x.rows();
        let k = self.latent_dim();
        let xt = x.transpose();
        let mut out = DenseMatrix::zeros(n, k);
        for start in (0..n).step_by(1024) {
            let end = (start + 1024).min(n);
            let chunk = DenseMatrix::from_fn(end - start, d, |i, j| xt.get(start + i, j));
            let (_, tout) = self.trunk.forward(&chunk)?;
            let (_, var) = lv.forward(&tout)?;
            for i in 0..end - start {
                for j in 0..k {
                    out.set(start + i, j, var.get(i, j));
                }
            }
        }
        Ok(out)
    }
}

/// Training hyperparameters shared by all three objectives.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Monte Carlo samples per datum for the VAE data term.
    pub tau: usize,
    /// Floor on decoder-covariance diagonals (and the candidate-solution
    /// latent covariance).
    pub alpha: f64,
    /// Weight decay coefficient on all parameters.
    pub c1: f64,
    /// Latent penalty weight, AE objectives only.
    pub c2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch: 100, lr: 1e-4, tau: 1, alpha: 1e-6, c1: 5e-4, c2: 1e3, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch < 1 || self.tau < 1 {
            return Err(Error::Precondition("epochs, batch and tau must be >= 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Precondition("alpha must be positive".into()));
        }
        if self.c1 < 0.0 || self.c2 < 0.0 {
            return Err(Error::Precondition("c1 and c2 must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-epoch record of a training run.
pub struct TrainHistory {
    /// Mean objective over the epoch's batches.
    pub objective: Vec<f64>,
    /// Reconstruction error against the clean reference, when one was given.
    pub nmse: Option<Vec<f64>>,
    pub wall_clock: Vec<f64>,
}

/// Floored minimizer of `c / g + ln g` over `g >= alpha`:
/// `max(c - alpha, 0) + alpha`.
#[inline]
pub fn xi_alpha(c: f64, alpha: f64) -> f64 {
    debug_assert!(c >= 0.0 && alpha > 0.0);
    (c - alpha).max(0.0) + alpha
}

/// Robust per-element data loss with the decoder variance optimized out:
/// `sum_j c_j / xi(c_j) + ln xi(c_j)` with `c_j = (x_j - mu_j)^2`.
///
/// Lower-bounded by `d * ln(alpha)` (perfect reconstruction) and
/// nondecreasing in every squared residual.
pub fn robust_data_loss(x: &[f64], mu: &[f64], alpha: f64) -> f64 {
    debug_assert_eq!(x.len(), mu.len());
    let mut total = 0.0;
    for (xj, mj) in x.iter().zip(mu) {
        let r = xj - mj;
        let xi = xi_alpha(r * r, alpha);
        total += r * r / xi + xi.ln();
    }
    total
}

/// Gradient of [`robust_data_loss`] with respect to `mu`, scaled by `scale`
/// and accumulated into `grad`. The derivative in each coordinate is
/// `-2 r / xi(c)`, continuous across `c = alpha`.
fn robust_data_grad(x: &[f64], mu: &[f64], alpha: f64, scale: f64, grad: &mut [f64]) {
    for j in 0..x.len() {
        let r = x[j] - mu[j];
        let xi = xi_alpha(r * r, alpha);
        grad[j] += scale * (-2.0 * r / xi);
    }
}

/// Exact KL divergence between `N(mu, diag(var))` and the standard normal:
/// `(sum var + |mu|^2 - k - sum ln var) / 2`. Nonnegative, zero iff
/// `mu = 0, var = 1`.
pub fn kl_diag_gaussian(mu: &[f64], var: &[f64]) -> f64 {
    debug_assert_eq!(mu.len(), var.len());
    debug_assert!(var.iter().all(|&v| v > 0.0));
    let k = mu.len() as f64;
    let trace: f64 = var.iter().sum();
    let sq: f64 = mu.iter().map(|m| m * m).sum();
    let logdet: f64 = var.iter().map(|v| v.ln()).sum();
    0.5 * (trace + sq - k - logdet)
}

/// Loss value and flat parameter gradients for one batch.
pub struct BatchEval {
    pub loss: f64,
    pub grads: Vec<f64>,
}

fn weight_decay_terms(model: &GenerativeModel, c1: f64, flat_grads: &mut [f64]) -> f64 {
    if c1 == 0.0 {
        return 0.0;
    }
    let mut params = Vec::with_capacity(flat_grads.len());
    model.copy_params_into(&mut params);
    let mut sq = 0.0;
    for (g, p) in flat_grads.iter_mut().zip(&params) {
        sq += p * p;
        *g += 2.0 * c1 * p;
    }
    c1 * sq
}

fn flatten_model_grads(
    model: &GenerativeModel,
    trunk: &Gradients,
    mean: &Gradients,
    logvar: Option<&Gradients>,
    decoder: &Gradients,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(model.param_count());
    trunk.flatten_into(&mut out);
    mean.flatten_into(&mut out);
    if let Some(lv) = logvar {
        lv.flatten_into(&mut out);
    }
    decoder.flatten_into(&mut out);
    out
}

/// Reparameterized VAE batch objective: mean over the batch of
/// `(1/tau) sum_t robust_data_loss(x, dec(z_t)) + 2 KL`, plus weight decay.
/// Gradients flow through the sampled `z_t = mu + sqrt(var) * eps`.
pub fn vae_batch_loss(
    model: &GenerativeModel,
    xb: &DenseMatrix,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BatchEval> {
    if model.kind != ModelKind::Vae {
        return Err(Error::Precondition("vae_batch_loss requires a VAE model".into()));
    }
    let lv_net = model.logvar_head.as_ref().expect("vae has a variance head");
    let b = xb.rows();
    let k = model.latent_dim();
    let scale = 1.0 / (cfg.tau as f64 * b as f64);

    let (t_trunk, tout) = model.trunk.forward(xb)?;
    let (t_mean, mu) = model.mean_head.forward(&tout)?;
    let (t_lv, var) = lv_net.forward(&tout)?;

    let mut dec_grads = Gradients::zeros_like(&model.decoder);
    let mut d_mu = DenseMatrix::zeros(b, k);
    let mut d_var = DenseMatrix::zeros(b, k);
    let mut data_term = 0.0;

    for _ in 0..cfg.tau {
        let eps = DenseMatrix::from_fn(b, k, |_, _| rng.sample(StandardNormal));
        let mut z = mu.clone();
        for i in 0..b {
            for j in 0..k {
                z.set(i, j, mu.get(i, j) + var.get(i, j).sqrt() * eps.get(i, j));
            }
        }
        let (t_dec, recon) = model.decoder.forward(&z)?;
        let mut g_recon = DenseMatrix::zeros(b, xb.cols());
        for i in 0..b {
            data_term += scale * robust_data_loss(xb.row(i), recon.row(i), cfg.alpha);
            robust_data_grad(xb.row(i), recon.row(i), cfg.alpha, scale, g_recon.row_mut(i));
        }
        let (gd, gz) = model.decoder.backward(&t_dec, &g_recon)?;
        dec_grads.add_scaled(&gd, 1.0);
        for i in 0..b {
            for j in 0..k {
                let g = gz.get(i, j);
                d_mu.set(i, j, d_mu.get(i, j) + g);
                let dvar = g * eps.get(i, j) / (2.0 * var.get(i, j).sqrt());
                d_var.set(i, j, d_var.get(i, j) + dvar);
            }
        }
    }

    // twice the exact KL, averaged over the batch
    let inv_b = 1.0 / b as f64;
    let mut kl_term = 0.0;
    for i in 0..b {
        kl_term += 2.0 * inv_b * kl_diag_gaussian(mu.row(i), var.row(i));
        for j in 0..k {
            d_mu.set(i, j, d_mu.get(i, j) + 2.0 * inv_b * mu.get(i, j));
            d_var.set(i, j, d_var.get(i, j) + inv_b * (1.0 - 1.0 / var.get(i, j)));
        }
    }

    let (g_mean, g_tout_mean) = model.mean_head.backward(&t_mean, &d_mu)?;
    let (g_lv, g_tout_lv) = lv_net.backward(&t_lv, &d_var)?;
    let (g_trunk, _) = model.trunk.backward(&t_trunk, &g_tout_mean.add(&g_tout_lv))?;

    let mut grads = flatten_model_grads(model, &g_trunk, &g_mean, Some(&g_lv), &dec_grads);
    let decay = weight_decay_terms(model, cfg.c1, &mut grads);
    Ok(BatchEval { loss: data_term + kl_term + decay, grads })
}

/// Deterministic AE batch objective: mean over the batch of
/// `robust_data_loss(x, dec(mu)) + c2 * P(mu)`, plus weight decay, with
/// `P` the squared norm (AE-ℓ2) or the ℓ1 norm (AE-ℓ1, subgradient 0 at 0).
pub fn ae_batch_loss(model: &GenerativeModel, xb: &DenseMatrix, cfg: &TrainConfig) -> Result<BatchEval> {
    let penalty_l1 = match model.kind {
        ModelKind::AeL1 => true,
        ModelKind::AeL2 => false,
        ModelKind::Vae => {
            return Err(Error::Precondition("ae_batch_loss requires an AE model".into()))
        }
    };
    let b = xb.rows();
    let k = model.latent_dim();
    let inv_b = 1.0 / b as f64;

    let (t_trunk, tout) = model.trunk.forward(xb)?;
    let (t_mean, mu) = model.mean_head.forward(&tout)?;
    let (t_dec, recon) = model.decoder.forward(&mu)?;

    let mut data_term = 0.0;
    let mut g_recon = DenseMatrix::zeros(b, xb.cols());
    for i in 0..b {
        data_term += inv_b * robust_data_loss(xb.row(i), recon.row(i), cfg.alpha);
        robust_data_grad(xb.row(i), recon.row(i), cfg.alpha, inv_b, g_recon.row_mut(i));
    }
    let (g_dec, gz) = model.decoder.backward(&t_dec, &g_recon)?;

    let mut d_mu = gz;
    let mut penalty = 0.0;
    for i in 0..b {
        for j in 0..k {
            let m = mu.get(i, j);
            if penalty_l1 {
                penalty += cfg.c2 * inv_b * m.abs();
                d_mu.set(i, j, d_mu.get(i, j) + cfg.c2 * inv_b * m.signum() * f64::from(m != 0.0));
            } else {
                penalty += cfg.c2 * inv_b * m * m;
                d_mu.set(i, j, d_mu.get(i, j) + 2.0 * cfg.c2 * inv_b * m);
            }
        }
    }

    let (g_mean, g_tout) = model.mean_head.backward(&t_mean, &d_mu)?;
    let (g_trunk, _) = model.trunk.backward(&t_trunk, &g_tout)?;

    let mut grads = flatten_model_grads(model, &g_trunk, &g_mean, None, &g_dec);
    let decay = weight_decay_terms(model, cfg.c1, &mut grads);
    Ok(BatchEval { loss: data_term + penalty + decay, grads })
}

/// Dispatch to the objective matching `model.kind`.
pub fn batch_loss(
    model: &GenerativeModel,
    xb: &DenseMatrix,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BatchEval> {
    match model.kind {
        ModelKind::Vae => vae_batch_loss(model, xb, cfg, rng),
        _ => ae_batch_loss(model, xb, cfg),
    }
}

/// Rows `idx` of `x^T`, i.e. the selected columns of a `d x n` matrix laid
/// out as a `|idx| x d` batch.
pub fn gather_columns(x: &DenseMatrix, idx: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(idx.len(), x.rows(), |b, j| x.get(j, idx[b]))
}

/// Train in place with Adam. Deterministic given `(cfg.seed, x)`: batches
/// are a seeded shuffle each epoch and all Monte Carlo noise comes from the
/// same stream. Aborts with location information if the objective ever goes
/// non-finite.
pub fn train(
    model: &mut GenerativeModel,
    x: &DenseMatrix,
    cfg: &TrainConfig,
    truth: Option<&DenseMatrix>,
) -> Result<TrainHistory> {
    use crate::diffnet::{AdamParams, AdamState};
    use rand::seq::SliceRandom;

    cfg.validate()?;
    if !x.is_finite_all() {
        return Err(Error::NonFinite("train: data"));
    }
    let n = x.cols();
    let mut rng = RngStream::new(cfg.seed, "train").rng();
    let mut params = Vec::with_capacity(model.param_count());
    model.copy_params_into(&mut params);
    let mut adam =
        AdamState::new(params.len(), AdamParams { lr: cfg.lr, ..AdamParams::default() });

    let mut history = TrainHistory {
        objective: Vec::with_capacity(cfg.epochs),
        nmse: truth.map(|_| Vec::with_capacity(cfg.epochs)),
        wall_clock: Vec::with_capacity(cfg.epochs),
    };
    let mut indices: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in indices.chunks(cfg.batch).enumerate() {
            let xb = gather_columns(x, chunk);
            let eval = batch_loss(model, &xb, cfg, &mut rng)?;
            if !eval.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_idx, value: eval.loss });
            }
            loss_sum += eval.loss * chunk.len() as f64;
            // weight decay already lives in the batch gradients
            adam.step(&mut params, &eval.grads, 0.0);
            model.set_params_from(&params);
        }
        history.objective.push(loss_sum / n as f64);
        if let Some(truth) = truth {
            let recon = model.reconstruct_columns(x)?;
            let err = crate::manifolds::nmse(truth, &recon)?;
            history.nmse.as_mut().unwrap().push(err);
        }
        history.wall_clock.push(started.elapsed().as_secs_f64());
    }
    Ok(history)
}

/// Draw a probe batch whose loss surface is smooth around the current
/// parameters: away from relu/exp kinks, from the robust-loss floor
/// `c = alpha`, and (for AE-ℓ1) from latent means at zero.
pub fn probe_batch(
    model: &GenerativeModel,
    cfg: &TrainConfig,
    batch: usize,
    stream: &RngStream,
) -> Result<DenseMatrix> {
    let d = model.data_dim();
    for attempt in 0..200 {
        let xb = crate::numkit::sample_gaussian(&stream.child(&format!("probe{attempt}")), batch, d);
        if batch_is_kink_free(model, &xb, cfg)? {
            return Ok(xb);
        }
    }
    Err(Error::Degenerate("probe_batch: no kink-free probe found in 200 draws".into()))
}

fn batch_is_kink_free(model: &GenerativeModel, xb: &DenseMatrix, cfg: &TrainConfig) -> Result<bool> {
    const KINK_TOL: f64 = 1e-4;
    let (t_trunk, tout) = model.trunk.forward(xb)?;
    if t_trunk.near_activation_kink(&model.trunk, KINK_TOL) {
        return Ok(false);
    }
    let (t_mean, mu) = model.mean_head.forward(&tout)?;
    if t_mean.near_activation_kink(&model.mean_head, KINK_TOL) {
        return Ok(false);
    }
    if model.kind == ModelKind::AeL1 && mu.data().iter().any(|m| m.abs() < KINK_TOL) {
        return Ok(false);
    }
    if let Some(lv) = &model.logvar_head {
        let (t_lv, _) = lv.forward(&tout)?;
        if t_lv.near_activation_kink(lv, KINK_TOL) {
            return Ok(false);
        }
    }
    let (t_dec, recon) = model.decoder.forward(&mu)?;
    if t_dec.near_activation_kink(&model.decoder, KINK_TOL) {
        return Ok(false);
    }
    // keep squared residuals clear of the variance floor; a 1e-5 parameter
    // step moves c by far less than 10% of alpha at these scales
    for i in 0..xb.rows() {
        for (xj, mj) in xb.row(i).iter().zip(recon.row(i)) {
            let c = (xj - mj) * (xj - mj);
            if c > cfg.alpha * 0.9 && c < cfg.alpha * 1.1 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Central-difference check of the full batch objective (data + KL/penalty
/// + weight decay) against the analytic gradients, with Monte Carlo noise
/// frozen by reseeding. Checks up to `per_tensor` randomly chosen entries of
/// every parameter tensor and returns the worst relative error.
pub fn model_grad_check(
    model: &mut GenerativeModel,
    xb: &DenseMatrix,
    cfg: &TrainConfig,
    noise_seed: u64,
    per_tensor: usize,
) -> Result<f64> {
    let h = 1e-5;
    let fresh_rng = || RngStream::new(noise_seed, "gradcheck").rng();

    let eval = batch_loss(model, xb, cfg, &mut fresh_rng())?;
    let mut params = Vec::with_capacity(model.param_count());
    model.copy_params_into(&mut params);

    let mut pick = RngStream::new(noise_seed, "gradcheck/pick").rng();
    let mut worst = 0.0f64;
    for (_, off, len) in model.param_layout() {
        let count = per_tensor.min(len);
        for c in 0..count {
            let i = if count == len { off + c } else { off + pick.gen_range(0..len) };
            let orig = params[i];
            params[i] = orig + h;
            model.set_params_from(&params);
            let plus = batch_loss(model, xb, cfg, &mut fresh_rng())?.loss;
            params[i] = orig - h;
            model.set_params_from(&params);
            let minus = batch_loss(model, xb, cfg, &mut fresh_rng())?.loss;
            params[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = eval.grads[i];
            let denom = (analytic.abs() + numeric.abs()).max(1e-8);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    model.set_params_from(&params);
    Ok(worst)
}
