//! Theory-facing diagnostics over trained models and exact decompositions:
//! latent-dimension pruning from first-layer decoder columns, encoder
//! variance statistics, sparse-support recovery, the quantized candidate
//! objective and its log-alpha slope, and the piecewise-linear memorization
//! bound.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::GenerativeModel;
use crate::numkit::{DenseMatrix, RngStream};

/// Column-norm report of a first-layer decoder weight matrix.
#[derive(Clone, Debug)]
pub struct PruneReport {
    /// Column norms sorted descending (for sorted-norm curves).
    pub sorted_norms: Vec<f64>,
    /// `0.05 x max column norm`.
    pub threshold: f64,
    /// Columns at or above the threshold.
    pub nonzero: usize,
    /// All columns were zero; the count is meaningless.
    pub degenerate: bool,
}

/// Classify columns of `w1` as zero/nonzero relative to the largest column.
pub fn count_nonzero_columns(w1: &DenseMatrix) -> PruneReport {
    let mut norms = w1.col_norms();
    let max = norms.iter().cloned().fold(0.0f64, f64::max);
    if max == 0.0 {
        norms.sort_by(|a, b| b.partial_cmp(a).unwrap());
        return PruneReport { sorted_norms: norms, threshold: 0.0, nonzero: 0, degenerate: true };
    }
    let threshold = 0.05 * max;
    let nonzero = norms.iter().filter(|&&c| c >= threshold).count();
    norms.sort_by(|a, b| b.partial_cmp(a).unwrap());
    PruneReport { sorted_norms: norms, threshold, nonzero, degenerate: false }
}

/// Indices whose magnitude strictly exceeds `alpha`; `alpha = 0` recovers
/// the standard support.
pub fn supp_alpha(v: &[f64], alpha: f64) -> Vec<usize> {
    debug_assert!(alpha >= 0.0);
    v.iter().enumerate().filter(|(_, x)| x.abs() > alpha).map(|(i, _)| i).collect()
}

/// Histogram and summary statistics of encoder variance diagonals over a
/// dataset.
#[derive(Clone, Debug)]
pub struct SigmaZReport {
    /// 61 log-spaced edges spanning `[1e-8, 10]`.
    pub bin_edges: Vec<f64>,
    /// 60 counts; out-of-range entries clamp to the edge bins.
    pub counts: Vec<u64>,
    /// Per-dimension means of the variance diagonals, ascending.
    pub sorted_mean_diag: Vec<f64>,
    pub frac_below_0_1: f64,
    pub frac_above_0_9: f64,
    pub total_entries: u64,
}

pub const SIGMA_Z_BINS: usize = 60;
const SIGMA_Z_LOG_LO: f64 = -8.0;
const SIGMA_Z_LOG_HI: f64 = 1.0;

/// Evaluate the encoder on every column of `x` and summarize the variance
/// diagonals.
pub fn sigma_z_stats(model: &GenerativeModel, x: &DenseMatrix) -> Result<SigmaZReport> {
    let vars = model.encoder_variances(x)?;
    let n = vars.rows();
    let k = vars.cols();

    let bin_edges: Vec<f64> = (0..=SIGMA_Z_BINS)
        .map(|i| {
            10f64.powf(
                SIGMA_Z_LOG_LO
                    + (SIGMA_Z_LOG_HI - SIGMA_Z_LOG_LO) * i as f64 / SIGMA_Z_BINS as f64,
            )
        })
        .collect();
    let mut counts = vec![0u64; SIGMA_Z_BINS];
    let mut below = 0u64;
    let mut above = 0u64;
    for &v in vars.data() {
        if v < 0.1 {
            below += 1;
        }
        if v > 0.9 {
            above += 1;
        }
        let logv = v.max(1e-300).log10().clamp(SIGMA_Z_LOG_LO, SIGMA_Z_LOG_HI);
        let idx = (((logv - SIGMA_Z_LOG_LO) / (SIGMA_Z_LOG_HI - SIGMA_Z_LOG_LO))
            * SIGMA_Z_BINS as f64)
            .floor()
            .clamp(0.0, (SIGMA_Z_BINS - 1) as f64) as usize;
        counts[idx] += 1;
    }

    let mut mean_diag = vec![0.0; k];
    for i in 0..n {
        for (j, m) in mean_diag.iter_mut().enumerate() {
            *m += vars.get(i, j);
        }
    }
    mean_diag.iter_mut().for_each(|m| *m /= n as f64);
    mean_diag.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let total = (n * k) as u64;
    Ok(SigmaZReport {
        bin_edges,
        counts,
        sorted_mean_diag: mean_diag,
        frac_below_0_1: below as f64 / total as f64,
        frac_above_0_9: above as f64 / total as f64,
        total_entries: total,
    })
}

/// Mean sparse-support recovery of `supp_alpha(squared residuals)` against
/// the true support, per sample and aggregated.
#[derive(Clone, Debug)]
pub struct SupportRecovery {
    pub precision: f64,
    pub recall: f64,
    pub per_sample: Vec<(f64, f64)>,
}

/// `residual_sq` holds squared reconstruction residuals (the closed-form
/// decoder variance diagonal), one sample per column; `s_true` the true
/// sparse component.
pub fn support_recovery(residual_sq: &DenseMatrix, s_true: &DenseMatrix, alpha: f64) -> SupportRecovery {
    assert_eq!(residual_sq.rows(), s_true.rows());
    assert_eq!(residual_sq.cols(), s_true.cols());
    let d = residual_sq.rows();
    let n = residual_sq.cols();
    let mut per_sample = Vec::with_capacity(n);
    for i in 0..n {
        let mut hit = 0usize;
        let mut pred = 0usize;
        let mut truth = 0usize;
        for j in 0..d {
            let p = residual_sq.get(j, i) > alpha;
            let t = s_true.get(j, i) != 0.0;
            pred += p as usize;
            truth += t as usize;
            hit += (p && t) as usize;
        }
        let precision = if pred == 0 { 1.0 } else { hit as f64 / pred as f64 };
        let recall = if truth == 0 { 1.0 } else { hit as f64 / truth as f64 };
        per_sample.push((precision, recall));
    }
    let precision = per_sample.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let recall = per_sample.iter().map(|p| p.1).sum::<f64>() / n as f64;
    SupportRecovery { precision, recall, per_sample }
}

/// Squared residuals of the deterministic reconstruction, one sample per
/// column — the matrix [`support_recovery`] consumes for a trained model.
pub fn model_residual_sq(model: &GenerativeModel, x: &DenseMatrix) -> Result<DenseMatrix> {
    let recon = model.reconstruct_columns(x)?;
    Ok(DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
        let r = x.get(i, j) - recon.get(i, j);
        r * r
    }))
}

/// An exact low-rank-plus-sparse decomposition `X = Psi Pi + S` with known
/// per-sample coefficients.
pub struct ExactDecomposition {
    /// Basis, `d x kappa`.
    pub psi: DenseMatrix,
    /// Coefficients, `kappa x n` (one code per column).
    pub coeffs: DenseMatrix,
    /// Sparse component, `d x n`.
    pub sparse: DenseMatrix,
}

impl ExactDecomposition {
    pub fn x(&self) -> DenseMatrix {
        self.psi.matmul(&self.coeffs).add(&self.sparse)
    }
}

/// The quantized candidate solution built from an exact decomposition: each
/// sample's latent code is its coefficient vector, the latent covariance is
/// `alpha I`, and the decoder variance pattern is selected by
/// nearest-coefficient quantization of the sampled code.
pub struct CandidateSolution {
    pub alpha: f64,
    /// Per-sample diagonal variance patterns (`alpha` off the sparse
    /// support, `1` on it).
    pub lambda_diag: Vec<Vec<f64>>,
    /// Squared norms of the coefficient columns.
    pub coeff_sq_norms: Vec<f64>,
}

/// Validate feasibility and assemble the candidate: coefficient columns must
/// be distinct (the quantizer must be well-defined) and every nonzero sparse
/// entry must exceed `alpha` in magnitude so the thresholded residual
/// support equals the true support exactly.
pub fn build_candidate(dec: &ExactDecomposition, alpha: f64) -> Result<CandidateSolution> {
    let n = dec.coeffs.cols();
    let d = dec.sparse.rows();
    for i in 0..n {
        for j in i + 1..n {
            let mut dist = 0.0;
            for r in 0..dec.coeffs.rows() {
                let diff = dec.coeffs.get(r, i) - dec.coeffs.get(r, j);
                dist += diff * diff;
            }
            if dist == 0.0 {
                return Err(Error::CoefficientCollision { i, j });
            }
        }
    }
    let mut lambda_diag = Vec::with_capacity(n);
    for i in 0..n {
        let col: Vec<f64> = (0..d).map(|r| dec.sparse.get(r, i)).collect();
        let support = supp_alpha(&col, alpha);
        let standard: Vec<usize> =
            col.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(r, _)| r).collect();
        if support != standard {
            return Err(Error::SupportMismatch { sample: i });
        }
        let mut diag = vec![alpha; d];
        for r in standard {
            diag[r] = 1.0;
        }
        lambda_diag.push(diag);
    }
    let coeff_sq_norms =
        (0..n).map(|i| (0..dec.coeffs.rows()).map(|r| dec.coeffs.get(r, i).powi(2)).sum()).collect();
    Ok(CandidateSolution { alpha, lambda_diag, coeff_sq_norms })
}

/// Objective estimates per alpha and the fitted slope against `ln alpha`.
#[derive(Clone, Debug)]
pub struct SlopeScan {
    pub alphas: Vec<f64>,
    pub objectives: Vec<f64>,
    pub std_errs: Vec<f64>,
    /// Least-squares slope of objective vs `ln alpha`.
    pub slope: f64,
    pub slope_std_err: f64,
    /// `sum_i (d - kappa - nnz(s_i))`, the coefficient the candidate cost
    /// approaches.
    pub predicted_slope: f64,
}

/// Monte Carlo estimate of the candidate-solution objective at each alpha,
/// with the nearest-coefficient quantizer deciding the decoder variance
/// pattern per draw, plus the least-squares slope against `ln alpha`.
pub fn candidate_objective_scan(
    dec: &ExactDecomposition,
    alphas: &[f64],
    mc_samples: usize,
    stream: &RngStream,
) -> Result<SlopeScan> {
    if alphas.len() < 2 {
        return Err(Error::Precondition("candidate_objective_scan: need at least two alphas".into()));
    }
    let d = dec.sparse.rows();
    let n = dec.coeffs.cols();
    let kappa = dec.coeffs.rows();

    let nnz: Vec<usize> =
        (0..n).map(|i| (0..d).filter(|&r| dec.sparse.get(r, i) != 0.0).count()).collect();
    let predicted_slope: f64 =
        nnz.iter().map(|&z| d as f64 - kappa as f64 - z as f64).sum();

    let coeff_cols: Vec<Vec<f64>> = (0..n).map(|i| dec.coeffs.col(i)).collect();

    let mut objectives = Vec::with_capacity(alphas.len());
    let mut std_errs = Vec::with_capacity(alphas.len());
    for (ai, &alpha) in alphas.iter().enumerate() {
        let cand = build_candidate(dec, alpha)?;
        let sqrt_alpha = alpha.sqrt();
        let mut rng = stream.child(&format!("alpha{ai}")).rng();
        let mut total = 0.0;
        let mut var_total = 0.0;
        for i in 0..n {
            let s_col: Vec<f64> = (0..d).map(|r| dec.sparse.get(r, i)).collect();
            let pi_i = &coeff_cols[i];
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for t in 0..mc_samples {
                let eps: Vec<f64> = (0..kappa).map(|_| rng.sample(StandardNormal)).collect();
                // z = pi_i + sqrt(alpha) eps, quantized to the nearest code
                let mut best_j = 0usize;
                let mut best_dist = f64::INFINITY;
                for (j, pi_j) in coeff_cols.iter().enumerate() {
                    let mut dist = 0.0;
                    for r in 0..kappa {
                        let diff = pi_i[r] + sqrt_alpha * eps[r] - pi_j[r];
                        dist += diff * diff;
                    }
                    if dist < best_dist {
                        best_dist = dist;
                        best_j = j;
                    }
                }
                let diag = &cand.lambda_diag[best_j];
                let shift = dec.psi.mul_vec(&eps);
                let mut quad = 0.0;
                let mut logdet = 0.0;
                for r in 0..d {
                    let resid = s_col[r] - sqrt_alpha * shift[r];
                    quad += resid * resid / diag[r];
                    logdet += diag[r].ln();
                }
                let v = quad + logdet;
                // running mean/variance over draws
                let delta = v - mean;
                mean += delta / (t + 1) as f64;
                m2 += delta * (v - mean);
            }
            let per_draw_var = if mc_samples > 1 { m2 / (mc_samples - 1) as f64 } else { 0.0 };
            total += mean
                + kappa as f64 * alpha
                - kappa as f64 * alpha.ln()
                + cand.coeff_sq_norms[i];
            var_total += per_draw_var / mc_samples as f64;
        }
        objectives.push(total);
        std_errs.push(var_total.sqrt());
    }

    let (slope, slope_std_err) = weighted_slope(alphas, &objectives, &std_errs);
    Ok(SlopeScan {
        alphas: alphas.to_vec(),
        objectives,
        std_errs,
        slope,
        slope_std_err,
        predicted_slope,
    })
}

/// Ordinary least-squares slope of `y` against `ln alpha`, with the standard
/// error propagated from independent per-point errors.
fn weighted_slope(alphas: &[f64], y: &[f64], se: &[f64]) -> (f64, f64) {
    let t: Vec<f64> = alphas.iter().map(|a| a.ln()).collect();
    let tbar = t.iter().sum::<f64>() / t.len() as f64;
    let stt: f64 = t.iter().map(|ti| (ti - tbar) * (ti - tbar)).sum();
    let mut slope = 0.0;
    let mut var = 0.0;
    for k in 0..t.len() {
        let w = (t[k] - tbar) / stt;
        slope += w * y[k];
        var += w * w * se[k] * se[k];
    }
    (slope, var.sqrt())
}

/// Closed-form upper bound on the objective of the piecewise-linear
/// memorizing decoder: `sum_i [ eta / rho^2 + (d-1) ln alpha + alpha +
/// mu_i^2 ]` with `eta` the largest pairwise squared data distance and
/// `rho` half the smallest pairwise projection distance.
///
/// Unbounded below as `alpha -> 0`: the flexible decoder mean defeats the
/// latent regularizer.
pub fn memorization_bound(x: &DenseMatrix, a: &[f64], alpha: f64) -> Result<f64> {
    let d = x.rows();
    let n = x.cols();
    if a.len() != d {
        return Err(Error::DimMismatch {
            op: "memorization_bound",
            details: format!("projection has {} entries, data dim {d}", a.len()),
        });
    }
    if n < 2 {
        return Err(Error::Degenerate(
            "memorization_bound: pairwise quantities undefined for fewer than two samples".into(),
        ));
    }
    let mu: Vec<f64> = (0..n).map(|i| crate::numkit::dot(a, &x.col(i))).collect();
    let mut eta = 0.0f64;
    let mut min_gap = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let gap = (mu[i] - mu[j]).abs();
            if gap <= f64::EPSILON * mu[i].abs().max(mu[j].abs()).max(1.0) {
                return Err(Error::DuplicateProjection { i, j });
            }
            min_gap = min_gap.min(gap);
            let mut dist = 0.0;
            for r in 0..d {
                let diff = x.get(r, i) - x.get(r, j);
                dist += diff * diff;
            }
            eta = eta.max(dist);
        }
    }
    let rho = 0.5 * min_gap;
    let mu_sq: f64 = mu.iter().map(|m| m * m).sum();
    Ok(n as f64 * (eta / (rho * rho) + (d as f64 - 1.0) * alpha.ln() + alpha) + mu_sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::sample_gaussian;

    #[test]
    fn prune_report_rule() {
        // columns with norms 10, 4, 0.3
        let mut w1 = DenseMatrix::zeros(2, 3);
        w1.set(0, 0, 10.0);
        w1.set(1, 1, 4.0);
        w1.set(0, 2, 0.3);
        let rep = count_nonzero_columns(&w1);
        assert_eq!(rep.threshold, 0.5);
        assert_eq!(rep.nonzero, 2);
        assert!(!rep.degenerate);
        assert_eq!(rep.sorted_norms, vec![10.0, 4.0, 0.3]);

        let zero = count_nonzero_columns(&DenseMatrix::zeros(2, 3));
        assert_eq!(zero.nonzero, 0);
        assert!(zero.degenerate);
    }

    #[test]
    fn prune_count_permutation_invariant() {
        let stream = RngStream::new(91, "probes/perm");
        let w1 = sample_gaussian(&stream, 6, 5);
        let base = count_nonzero_columns(&w1).nonzero;
        let perm = [3usize, 0, 4, 1, 2];
        let permuted = DenseMatrix::from_fn(6, 5, |i, j| w1.get(i, perm[j]));
        assert_eq!(count_nonzero_columns(&permuted).nonzero, base);
    }

    #[test]
    fn supp_alpha_examples() {
        assert_eq!(supp_alpha(&[0.5, 0.01, -2.0], 0.1), vec![0, 2]);
        assert!(supp_alpha(&[0.0, 0.0], 0.3).is_empty());
        assert_eq!(supp_alpha(&[0.0, 3.0], 0.0), vec![1]);
    }

    #[test]
    fn supp_alpha_monotone() {
        let stream = RngStream::new(93, "probes/mono");
        let v = sample_gaussian(&stream, 1, 30);
        for pair in [(0.0, 0.1), (0.1, 0.5), (0.5, 2.0)] {
            let lo = supp_alpha(v.row(0), pair.0);
            let hi = supp_alpha(v.row(0), pair.1);
            assert!(hi.iter().all(|i| lo.contains(i)), "larger alpha shrinks the support");
        }
    }

    #[test]
    fn support_recovery_trivials() {
        // residuals exactly the sparse component, huge against alpha
        let mut s = DenseMatrix::zeros(4, 3);
        s.set(1, 0, 5.0);
        s.set(3, 2, -7.0);
        let resid_sq = s.map(|v| v * v);
        let rec = support_recovery(&resid_sq, &s, 1e-6);
        assert_eq!(rec.precision, 1.0);
        assert_eq!(rec.recall, 1.0);

        // zero residuals, nonempty truth: recall zero on those samples
        let zeros = DenseMatrix::zeros(4, 3);
        let rec = support_recovery(&zeros, &s, 1e-6);
        assert_eq!(rec.per_sample[0].1, 0.0);
        assert_eq!(rec.per_sample[2].1, 0.0);
        assert_eq!(rec.per_sample[1].1, 1.0, "empty truth counts as recalled");
    }

    fn toy_decomposition(
        d: usize,
        kappa: usize,
        n: usize,
        support_per_sample: usize,
        spread: f64,
        seed: u64,
    ) -> ExactDecomposition {
        let stream = RngStream::new(seed, "probes/toy");
        let psi = sample_gaussian(&stream.child("psi"), d, kappa);
        let coeffs = sample_gaussian(&stream.child("pi"), kappa, n).scaled(spread);
        let mut sparse = DenseMatrix::zeros(d, n);
        let mut rng = stream.child("s").rng();
        for i in 0..n {
            for _ in 0..support_per_sample {
                let r = rng.gen_range(0..d);
                let v: f64 = rng.sample(StandardNormal);
                sparse.set(r, i, 3.0 + v.abs());
            }
        }
        ExactDecomposition { psi, coeffs, sparse }
    }

    #[test]
    fn candidate_rejects_collisions_and_small_support() {
        let mut dec = toy_decomposition(6, 2, 5, 1, 4.0, 95);
        // duplicate codes
        let dup = dec.coeffs.col(0);
        dec.coeffs.set_col(1, &dup);
        assert!(matches!(build_candidate(&dec, 1e-3), Err(Error::CoefficientCollision { .. })));

        let mut dec = toy_decomposition(6, 2, 5, 1, 4.0, 96);
        dec.sparse.set(0, 2, 1e-4); // below alpha: thresholded support misses it
        assert!(matches!(build_candidate(&dec, 1e-3), Err(Error::SupportMismatch { sample: 2 })));
    }

    #[test]
    fn slope_scan_matches_prediction() {
        let dec = toy_decomposition(8, 2, 20, 1, 5.0, 97);
        let scan = candidate_objective_scan(
            &dec,
            &[1e-2, 1e-3, 1e-4],
            4000,
            &RngStream::new(5, "probes/scan"),
        )
        .unwrap();
        let rel = (scan.slope - scan.predicted_slope).abs() / scan.predicted_slope.abs();
        assert!(rel <= 0.1, "slope {} vs predicted {}", scan.slope, scan.predicted_slope);
    }

    #[test]
    fn slope_scan_flat_when_saturated() {
        // no sparse component and kappa = d: predicted coefficient zero
        let stream = RngStream::new(99, "probes/flat");
        let d = 5;
        let psi = sample_gaussian(&stream.child("psi"), d, d);
        let coeffs = sample_gaussian(&stream.child("pi"), d, 12).scaled(5.0);
        let dec = ExactDecomposition { psi, coeffs, sparse: DenseMatrix::zeros(d, 12) };
        let scan =
            candidate_objective_scan(&dec, &[1e-2, 1e-3, 1e-4], 3000, &stream.child("mc")).unwrap();
        assert_eq!(scan.predicted_slope, 0.0);
        assert!(
            scan.slope.abs() <= 3.0 * scan.slope_std_err + 0.5,
            "slope {} (se {})",
            scan.slope,
            scan.slope_std_err
        );
    }

    #[test]
    fn slope_scan_stable_under_more_samples() {
        let dec = toy_decomposition(8, 2, 15, 1, 5.0, 101);
        let stream = RngStream::new(7, "probes/stable");
        let a = candidate_objective_scan(&dec, &[1e-2, 1e-3, 1e-4], 3000, &stream).unwrap();
        let b = candidate_objective_scan(&dec, &[1e-2, 1e-3, 1e-4], 6000, &stream).unwrap();
        assert!(
            (a.slope - b.slope).abs() < 3.0 * a.slope_std_err.max(b.slope_std_err) * 3.0,
            "slopes {} vs {} (se {} / {})",
            a.slope,
            b.slope,
            a.slope_std_err,
            b.slope_std_err
        );
    }

    #[test]
    fn memorization_bound_behaviour() {
        let stream = RngStream::new(103, "probes/mem");
        let x = sample_gaussian(&stream.child("x"), 4, 10);
        let a: Vec<f64> = (0..4).map(|i| 0.3 + 0.2 * i as f64).collect();

        // strictly decreasing along shrinking alphas
        let alphas = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
        let bounds: Vec<f64> =
            alphas.iter().map(|&al| memorization_bound(&x, &a, al).unwrap()).collect();
        for w in bounds.windows(2) {
            assert!(w[1] < w[0], "bound must decrease as alpha shrinks: {bounds:?}");
        }

        // least-squares slope against ln alpha within 1% of n (d - 1)
        let (slope, _) = super::weighted_slope(&alphas, &bounds, &vec![0.0; alphas.len()]);
        let predicted = 10.0 * 3.0;
        assert!(
            (slope - predicted).abs() <= 0.01 * predicted,
            "slope {slope} vs n(d-1) = {predicted}"
        );

        // single sample: pairwise quantities undefined
        let one = DenseMatrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(memorization_bound(&one, &a, 1e-3), Err(Error::Degenerate(_))));

        // duplicated projections rejected
        let mut xx = x.clone();
        let col = xx.col(0);
        xx.set_col(1, &col);
        assert!(matches!(
            memorization_bound(&xx, &a, 1e-3),
            Err(Error::DuplicateProjection { .. })
        ));
    }
}
