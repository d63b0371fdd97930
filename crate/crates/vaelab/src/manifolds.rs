//! Ground-truth data pipeline: a frozen random nonlinear generator, a
//! trained inverse encoder certifying that the generator is invertible in
//! principle, sparse corruption, and the NMSE metric.

use rand::Rng;

use crate::diffnet::{Activation, AdamParams, AdamState, MlpNet};
use crate::error::{Error, Result};
use crate::numkit::{sample_gaussian, svd, DenseMatrix, RngStream};

/// Relative Frobenius residual the best rank-`2 kappa` approximation of a
/// generated `L` must exceed; below this a linear subspace of twice the
/// manifold dimension already explains the data and the draw is rejected as
/// effectively linear.
pub const LOWRANK_REJECT_THRESHOLD: f64 = 0.05;

const MAX_GENERATION_ATTEMPTS: usize = 10;

/// A synthetic nonlinear manifold with known latent codes.
pub struct GroundTruth {
    /// Frozen He-initialized generator `latent -> r1 -> r2 -> d`.
    pub generator: MlpNet,
    /// Trained inverse `d -> r2 -> r1 -> latent`, when fitted.
    pub inverse: Option<MlpNet>,
    /// Latent codes, `kappa x n`.
    pub z: DenseMatrix,
    /// Clean data `generator(z)`, `d x n`.
    pub l: DenseMatrix,
    pub kappa: usize,
    /// Mean squared latent reconstruction error on the training codes.
    pub inverse_error: Option<f64>,
    /// Same error on freshly drawn codes the inverse never saw.
    pub inverse_holdout_error: Option<f64>,
    pub inverse_ok: bool,
    /// Relative residual of the best rank-`2 kappa` approximation.
    pub lowrank_residual: f64,
    /// Seed that produced the accepted draw (>= the requested seed when
    /// earlier draws were rejected as too linear).
    pub seed_used: u64,
}

fn generator_output(generator: &MlpNet, z: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(generator.forward(&z.transpose())?.1.transpose())
}

fn lowrank_residual(l: &DenseMatrix, keep: usize) -> Result<f64> {
    let dec = svd(l)?;
    let tail: f64 = dec.s.iter().skip(keep).map(|s| s * s).sum();
    Ok(tail.max(0.0).sqrt() / l.frob_norm())
}

/// Draw a frozen generator and latent codes, rejecting draws whose output is
/// well-approximated by a low-rank matrix (those would not exercise the
/// nonlinear part of the problem). Retries with incremented seeds.
pub fn gen_ground_truth(
    kappa: usize,
    r1: usize,
    r2: usize,
    d: usize,
    n: usize,
    seed: u64,
) -> Result<GroundTruth> {
    if kappa >= d {
        return Err(Error::Precondition(format!(
            "gen_ground_truth: latent dim {kappa} must be smaller than data dim {d}"
        )));
    }
    let keep = (2 * kappa).min(d.min(n).saturating_sub(1));
    let mut residuals = Vec::new();
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let seed_used = seed + attempt as u64;
        let stream = RngStream::new(seed_used, "ground_truth");
        let generator = MlpNet::he_init(
            kappa,
            &[(r1, Activation::Relu), (r2, Activation::Relu), (d, Activation::Identity)],
            &stream.child("generator"),
        );
        let z = sample_gaussian(&stream.child("z"), kappa, n);
        let l = generator_output(&generator, &z)?;
        let residual = lowrank_residual(&l, keep)?;
        residuals.push(residual);
        if residual > LOWRANK_REJECT_THRESHOLD {
            return Ok(GroundTruth {
                generator,
                inverse: None,
                z,
                l,
                kappa,
                inverse_error: None,
                inverse_holdout_error: None,
                inverse_ok: false,
                lowrank_residual: residual,
                seed_used,
            });
        }
    }
    Err(Error::GroundTruthRejected {
        attempts: MAX_GENERATION_ATTEMPTS,
        rank: keep,
        residuals,
        threshold: LOWRANK_REJECT_THRESHOLD,
    })
}

/// Hyperparameters for fitting the inverse encoder.
#[derive(Clone, Copy, Debug)]
pub struct InverseFitConfig {
    pub max_epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Mean squared latent reconstruction error to reach.
    pub target: f64,
    pub seed: u64,
}

impl Default for InverseFitConfig {
    fn default() -> Self {
        Self { max_epochs: 500, batch: 100, lr: 1e-3, target: 1e-3, seed: 0 }
    }
}

fn latent_mse(net: &MlpNet, inputs: &DenseMatrix, targets: &DenseMatrix) -> Result<f64> {
    let (_, out) = net.forward(inputs)?;
    let n = inputs.rows() as f64;
    Ok(out.sub(targets).data().iter().map(|r| r * r).sum::<f64>() / n)
}

/// Train the inverse half with a plain squared loss while the generator
/// stays frozen, so the rank structure of `L` cannot drift. Success means a
/// mean squared latent reconstruction error at or below `cfg.target`; the
/// result is flagged rather than failed when the threshold is missed.
pub fn fit_inverse_encoder(gt: &mut GroundTruth, cfg: &InverseFitConfig) -> Result<()> {
    let d = gt.l.rows();
    let gen_layers = gt.generator.layers();
    let r1 = gen_layers[0].weight.rows();
    let r2 = gen_layers[1].weight.rows();
    let stream = RngStream::new(cfg.seed, "inverse_fit");
    let mut inverse = MlpNet::he_init(
        d,
        &[(r2, Activation::Relu), (r1, Activation::Relu), (gt.kappa, Activation::Identity)],
        &stream.child("init"),
    );

    let inputs = gt.l.transpose(); // n x d
    let targets = gt.z.transpose(); // n x kappa
    let n = inputs.rows();
    let mut rng = stream.child("shuffle").rng();
    let mut params = Vec::with_capacity(inverse.param_count());
    inverse.copy_params_into(&mut params);
    let mut adam = AdamState::new(params.len(), AdamParams { lr: cfg.lr, ..AdamParams::default() });
    let mut indices: Vec<usize> = (0..n).collect();

    let mut error = latent_mse(&inverse, &inputs, &targets)?;
    for _ in 0..cfg.max_epochs {
        if error <= cfg.target {
            break;
        }
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(cfg.batch) {
            let xb = DenseMatrix::from_fn(chunk.len(), d, |i, j| inputs.get(chunk[i], j));
            let yb = DenseMatrix::from_fn(chunk.len(), gt.kappa, |i, j| targets.get(chunk[i], j));
            let (trace, out) = inverse.forward(&xb)?;
            let g_out = out.sub(&yb).scaled(2.0 / chunk.len() as f64);
            let (grads, _) = inverse.backward(&trace, &g_out)?;
            let mut flat = Vec::with_capacity(params.len());
            grads.flatten_into(&mut flat);
            adam.step(&mut params, &flat, 0.0);
            inverse.set_params_from(&params);
        }
        error = latent_mse(&inverse, &inputs, &targets)?;
    }

    // certification on codes the inverse never trained on
    let hold_n = n.min(1000);
    let z_hold = sample_gaussian(&stream.child("holdout"), gt.kappa, hold_n);
    let l_hold = generator_output(&gt.generator, &z_hold)?;
    let holdout = latent_mse(&inverse, &l_hold.transpose(), &z_hold.transpose())?;

    gt.inverse_ok = error <= cfg.target;
    gt.inverse_error = Some(error);
    gt.inverse_holdout_error = Some(holdout);
    gt.inverse = Some(inverse);
    Ok(())
}

/// How replaced entries are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptionMode {
    /// Standard normal replacements.
    GaussianUnit,
    /// Uniform on `[0, 1]`; pair with data pre-scaled to `[0, 1]`.
    Uniform01,
}

/// Corrupted data with its ground-truth sparse component.
pub struct CorruptedData {
    /// `L` with masked entries replaced (not added to).
    pub x: DenseMatrix,
    /// `X - L`, supported on the mask.
    pub s_true: DenseMatrix,
    /// Row-major corruption mask.
    pub mask: Vec<bool>,
    pub nu: f64,
}

impl CorruptedData {
    pub fn masked(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.x.cols() + j]
    }

    pub fn mask_density(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

/// Replace a Bernoulli(`nu`) subset of entries with draws from `mode`.
pub fn corrupt(l: &DenseMatrix, nu: f64, mode: CorruptionMode, stream: &RngStream) -> CorruptedData {
    assert!((0.0..=1.0).contains(&nu), "corruption ratio must be in [0, 1]");
    let mut mask_rng = stream.child("mask").rng();
    let mut value_rng = stream.child("values").rng();
    let (rows, cols) = (l.rows(), l.cols());
    let mut mask = vec![false; rows * cols];
    let mut x = l.clone();
    let mut s_true = DenseMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            if mask_rng.gen::<f64>() < nu {
                mask[i * cols + j] = true;
                let v = match mode {
                    CorruptionMode::GaussianUnit => {
                        value_rng.sample::<f64, _>(rand_distr::StandardNormal)
                    }
                    CorruptionMode::Uniform01 => value_rng.gen::<f64>(),
                };
                x.set(i, j, v);
                s_true.set(i, j, v - l.get(i, j));
            }
        }
    }
    CorruptedData { x, s_true, mask, nu }
}

/// Normalized mean squared error `|l - lhat|_F^2 / |l|_F^2`.
pub fn nmse(l: &DenseMatrix, lhat: &DenseMatrix) -> Result<f64> {
    if l.rows() != lhat.rows() || l.cols() != lhat.cols() {
        return Err(Error::DimMismatch {
            op: "nmse",
            details: format!("{}x{} vs {}x{}", l.rows(), l.cols(), lhat.rows(), lhat.cols()),
        });
    }
    let denom = l.frob_norm();
    if denom == 0.0 {
        return Err(Error::Degenerate("nmse: reference matrix has zero norm".into()));
    }
    let diff = l.sub(lhat).frob_norm();
    Ok(diff * diff / (denom * denom))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_full_rank_and_deterministic() {
        let gt = gen_ground_truth(2, 64, 64, 100, 2000, 7).unwrap();
        let dec = svd(&gt.l).unwrap();
        assert_eq!(dec.s.len(), 100);
        assert!(dec.s.iter().all(|&s| s > 0.0), "numerically full rank");
        assert!(gt.lowrank_residual > LOWRANK_REJECT_THRESHOLD);

        let gt2 = gen_ground_truth(2, 64, 64, 100, 2000, 7).unwrap();
        assert_eq!(gt.l, gt2.l, "same seed, same data");
        // regenerate-and-compare: L is exactly generator(z)
        let regen = generator_output(&gt.generator, &gt.z).unwrap();
        assert_eq!(regen, gt.l);
    }

    #[test]
    fn degenerate_latent_dim_rejected() {
        assert!(matches!(
            gen_ground_truth(5, 8, 8, 5, 10, 0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn untrained_inverse_error_near_kappa() {
        let gt = gen_ground_truth(3, 16, 16, 12, 500, 11).unwrap();
        let stream = RngStream::new(1, "untrained");
        let inverse = MlpNet::he_init(
            12,
            &[(16, Activation::Relu), (16, Activation::Relu), (3, Activation::Identity)],
            &stream,
        );
        let err = latent_mse(&inverse, &gt.l.transpose(), &gt.z.transpose()).unwrap();
        // an untrained net predicts near zero against unit-variance targets
        assert!((err - 3.0).abs() < 1.5, "untrained error {err}");
    }

    #[test]
    fn inverse_fit_improves_and_is_deterministic() {
        let mut gt = gen_ground_truth(2, 16, 16, 10, 400, 13).unwrap();
        let cfg = InverseFitConfig { max_epochs: 40, ..InverseFitConfig::default() };
        fit_inverse_encoder(&mut gt, &cfg).unwrap();
        let first = gt.inverse_error.unwrap();
        assert!(first < 1.0, "training reduced the error: {first}");

        let mut gt2 = gen_ground_truth(2, 16, 16, 10, 400, 13).unwrap();
        fit_inverse_encoder(&mut gt2, &cfg).unwrap();
        assert_eq!(gt.inverse_error, gt2.inverse_error, "same seeds, same fit");
        assert!(gt2.inverse_holdout_error.is_some());
    }

    #[test]
    fn corrupt_zero_ratio_is_identity() {
        let l = sample_gaussian(&RngStream::new(3, "c0"), 6, 9);
        let c = corrupt(&l, 0.0, CorruptionMode::GaussianUnit, &RngStream::new(4, "c0"));
        assert_eq!(c.x, l);
        assert_eq!(c.s_true.max_abs(), 0.0);
        assert!(c.mask.iter().all(|&m| !m));
    }

    #[test]
    fn corrupt_full_ratio_replaces_everything() {
        let l = sample_gaussian(&RngStream::new(5, "c1"), 6, 9);
        let c = corrupt(&l, 1.0, CorruptionMode::GaussianUnit, &RngStream::new(6, "c1"));
        assert!(c.mask.iter().all(|&m| m));
        // replacement, not addition: X entries are the draws themselves,
        // independent of L
        let c2 = corrupt(&l.scaled(100.0), 1.0, CorruptionMode::GaussianUnit, &RngStream::new(6, "c1"));
        assert_eq!(c.x, c2.x);
    }

    #[test]
    fn corrupt_density_within_three_sigma() {
        let l = DenseMatrix::zeros(100, 1000);
        let c = corrupt(&l, 0.25, CorruptionMode::GaussianUnit, &RngStream::new(7, "dens"));
        let density = c.mask_density();
        assert!((0.2459..=0.2541).contains(&density), "density {density}");
    }

    #[test]
    fn corrupt_agrees_off_mask() {
        let l = sample_gaussian(&RngStream::new(8, "offmask"), 20, 30);
        let c = corrupt(&l, 0.3, CorruptionMode::Uniform01, &RngStream::new(9, "offmask"));
        for i in 0..20 {
            for j in 0..30 {
                if c.masked(i, j) {
                    assert!((0.0..1.0).contains(&c.x.get(i, j)));
                } else {
                    assert_eq!(c.x.get(i, j), l.get(i, j));
                    assert_eq!(c.s_true.get(i, j), 0.0);
                }
            }
        }
        // X = L + S (up to one rounding of the stored difference)
        assert!(l.add(&c.s_true).sub(&c.x).max_abs() < 1e-12);
    }

    #[test]
    fn nmse_trivials() {
        let l = sample_gaussian(&RngStream::new(10, "nmse"), 4, 5);
        assert_eq!(nmse(&l, &l).unwrap(), 0.0);
        assert!((nmse(&l, &DenseMatrix::zeros(4, 5)).unwrap() - 1.0).abs() < 1e-12);
        assert!((nmse(&l, &l.scaled(2.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(nmse(&DenseMatrix::zeros(2, 2), &l).is_err());
    }
}
