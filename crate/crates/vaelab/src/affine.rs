//! Closed-form affine-decoder theory: the collapsed probabilistic-PCA
//! objectives, their optimal solutions, posterior moments, and the
//! rotation/permutation invariance suite.
//!
//! Two objective routes exist on purpose. `ppca_objective` is the collapsed
//! cost with a free (full) latent covariance; `ppca_objective_sep` is the
//! same cost under a diagonal latent covariance, which upper-bounds the
//! former by Hadamard's inequality with equality iff `W^T W` is diagonal.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numkit::{chol_logdet, chol_solve, sym_eigen, DenseMatrix, RngStream};

/// Affine decoder `mu_x = W z + b` with isotropic output variance `lambda`.
#[derive(Clone)]
pub struct AffineModel {
    pub w: DenseMatrix,
    pub b: Vec<f64>,
    pub lambda: f64,
}

impl AffineModel {
    pub fn new(w: DenseMatrix, b: Vec<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Precondition("AffineModel: lambda must be positive".into()));
        }
        if b.len() != w.rows() {
            return Err(Error::DimMismatch {
                op: "AffineModel::new",
                details: format!("b has {} entries, W has {} rows", b.len(), w.rows()),
            });
        }
        Ok(Self { w, b, lambda })
    }
}

/// `lambda I + W W^T`.
fn system_matrix(m: &AffineModel) -> DenseMatrix {
    let d = m.w.rows();
    let mut sys = m.w.matmul_nt(&m.w);
    for i in 0..d {
        sys.set(i, i, sys.get(i, i) + m.lambda);
    }
    sys
}

/// Collapsed objective with a free latent covariance:
/// `sum_i (x_i - b)^T (lambda I + W W^T)^{-1} (x_i - b) + n log|lambda I + W W^T|`,
/// evaluated through a Cholesky factorization.
pub fn ppca_objective(m: &AffineModel, x: &DenseMatrix) -> Result<f64> {
    let chol = system_matrix(m).cholesky()?;
    let n = x.cols();
    let mut quad = 0.0;
    let mut resid = vec![0.0; x.rows()];
    for i in 0..n {
        for (j, r) in resid.iter_mut().enumerate() {
            *r = x.get(j, i) - m.b[j];
        }
        let sol = chol_solve(&chol, &resid);
        quad += crate::numkit::dot(&resid, &sol);
    }
    Ok(quad + n as f64 * chol_logdet(&chol))
}

/// Collapsed objective with a diagonal latent covariance: the data term of
/// [`ppca_objective`] plus
/// `n [ sum_j log(lambda + |w_j|^2) + (d - kappa) log lambda ]`.
pub fn ppca_objective_sep(m: &AffineModel, x: &DenseMatrix) -> Result<f64> {
    let chol = system_matrix(m).cholesky()?;
    let n = x.cols();
    let mut quad = 0.0;
    let mut resid = vec![0.0; x.rows()];
    for i in 0..n {
        for (j, r) in resid.iter_mut().enumerate() {
            *r = x.get(j, i) - m.b[j];
        }
        let sol = chol_solve(&chol, &resid);
        quad += crate::numkit::dot(&resid, &sol);
    }
    Ok(quad + n as f64 * sep_logdet_bound(&m.w, m.lambda))
}

fn sep_logdet_bound(w: &DenseMatrix, lambda: f64) -> f64 {
    let d = w.rows() as f64;
    let kappa = w.cols() as f64;
    let cols: f64 = w.col_norms().iter().map(|c| (lambda + c * c).ln()).sum();
    cols + (d - kappa) * lambda.ln()
}

/// Left side of the Hadamard bound minus the right side:
/// `sum_j log(lambda + |w_j|^2) + (d - kappa) log lambda  -  log|lambda I + W W^T|`.
/// Nonnegative up to roundoff; zero iff `W^T W` is diagonal.
pub fn hadamard_gap(w: &DenseMatrix, lambda: f64) -> Result<f64> {
    let m = AffineModel::new(w.clone(), vec![0.0; w.rows()], lambda)?;
    let chol = system_matrix(&m).cholesky()?;
    Ok(sep_logdet_bound(w, lambda) - chol_logdet(&chol))
}

/// Sample covariance `(1/n) (X - b 1^T)(X - b 1^T)^T`.
pub fn sample_covariance(x: &DenseMatrix, b: &[f64]) -> DenseMatrix {
    let d = x.rows();
    let n = x.cols();
    let centered = DenseMatrix::from_fn(d, n, |i, j| x.get(i, j) - b[i]);
    centered.matmul_nt(&centered).scaled(1.0 / n as f64)
}

/// Closed-form optimum of the collapsed objective with `b` and `lambda`
/// fixed: columns are top eigenvectors of the sample covariance scaled by
/// `sqrt(max(sigma_j - lambda, 0))`, so eigendirections at or below `lambda`
/// produce exactly-zero columns.
pub fn ppca_optimal_w(x: &DenseMatrix, b: &[f64], lambda: f64, kappa: usize) -> Result<DenseMatrix> {
    if !(lambda > 0.0) {
        return Err(Error::Precondition("ppca_optimal_w: lambda must be positive".into()));
    }
    let cov = sample_covariance(x, b);
    let (vals, vecs) = sym_eigen(&cov)?;
    let d = x.rows();
    let mut w = DenseMatrix::zeros(d, kappa);
    for j in 0..kappa.min(d) {
        let gain = (vals[j] - lambda).max(0.0).sqrt();
        if gain > 0.0 {
            for i in 0..d {
                w.set(i, j, gain * vecs.get(i, j));
            }
        }
    }
    Ok(w)
}

/// Posterior moments of the collapsed model:
/// `mu_z = W^T (lambda I + W W^T)^{-1} (x - b)` and
/// `Sigma_z = (W^T W / lambda + I)^{-1}` (shared by every sample).
pub fn ppca_posterior(m: &AffineModel, x: &[f64]) -> Result<(Vec<f64>, DenseMatrix)> {
    if x.len() != m.w.rows() {
        return Err(Error::DimMismatch {
            op: "ppca_posterior",
            details: format!("x has {} entries, W has {} rows", x.len(), m.w.rows()),
        });
    }
    let chol = system_matrix(m).cholesky()?;
    let resid: Vec<f64> = x.iter().zip(&m.b).map(|(xi, bi)| xi - bi).collect();
    let mu = m.w.tr_mul_vec(&chol_solve(&chol, &resid));
    Ok((mu, posterior_covariance(m)?))
}

fn posterior_covariance(m: &AffineModel) -> Result<DenseMatrix> {
    let kappa = m.w.cols();
    let mut prec = m.w.matmul_tn(&m.w).scaled(1.0 / m.lambda);
    for i in 0..kappa {
        prec.set(i, i, prec.get(i, i) + 1.0);
    }
    let chol = prec.cholesky()?;
    let mut sigma = DenseMatrix::zeros(kappa, kappa);
    let mut e = vec![0.0; kappa];
    for j in 0..kappa {
        e[j] = 1.0;
        let col = chol_solve(&chol, &e);
        sigma.set_col(j, &col);
        e[j] = 0.0;
    }
    // symmetrize roundoff
    for i in 0..kappa {
        for j in 0..i {
            let v = 0.5 * (sigma.get(i, j) + sigma.get(j, i));
            sigma.set(i, j, v);
            sigma.set(j, i, v);
        }
    }
    Ok(sigma)
}

/// The un-collapsed objective evaluated at the closed-form posterior
/// moments, normalized by dropping the additive `n * kappa` constant the
/// collapse absorbs; at the optimal posterior this equals [`ppca_objective`]
/// exactly.
pub fn posterior_objective(m: &AffineModel, x: &DenseMatrix) -> Result<f64> {
    let sigma = posterior_covariance(m)?;
    let kappa = m.w.cols();
    let n = x.cols() as f64;
    let d = x.rows();

    let gram = m.w.matmul_tn(&m.w);
    let mut trace_sigma = 0.0;
    let mut trace_gram_sigma = 0.0;
    for i in 0..kappa {
        trace_sigma += sigma.get(i, i);
        for j in 0..kappa {
            trace_gram_sigma += sigma.get(i, j) * gram.get(j, i);
        }
    }
    let prec = {
        let mut p = gram.scaled(1.0 / m.lambda);
        for i in 0..kappa {
            p.set(i, i, p.get(i, i) + 1.0);
        }
        p
    };
    let logdet_sigma = -chol_logdet(&prec.cholesky()?);

    let per_sample_const = trace_gram_sigma / m.lambda
        + d as f64 * m.lambda.ln()
        + trace_sigma
        - logdet_sigma
        - kappa as f64; // the constant the collapse drops

    let mut total = n * per_sample_const;
    for i in 0..x.cols() {
        let col = x.col(i);
        let (mu, _) = ppca_posterior(m, &col)?;
        let recon = m.w.mul_vec(&mu);
        let mut fit = 0.0;
        for j in 0..d {
            let r = col[j] - recon[j] - m.b[j];
            fit += r * r;
        }
        total += fit / m.lambda + mu.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total)
}

fn objective_gradient(
    m: &AffineModel,
    scatter: &DenseMatrix,
    n: usize,
    separable: bool,
) -> Result<DenseMatrix> {
    let chol = system_matrix(m).cholesky()?;
    let d = m.w.rows();
    // M^{-1} and M^{-1} A M^{-1}
    let mut minv = DenseMatrix::zeros(d, d);
    let mut e = vec![0.0; d];
    for j in 0..d {
        e[j] = 1.0;
        minv.set_col(j, &chol_solve(&chol, &e));
        e[j] = 0.0;
    }
    let mam = minv.matmul(&scatter.matmul(&minv));
    let nf = n as f64;
    if separable {
        let mut grad = mam.matmul(&m.w).scaled(-2.0);
        let norms = m.w.col_norms();
        for j in 0..m.w.cols() {
            let denom = m.lambda + norms[j] * norms[j];
            for i in 0..d {
                grad.set(i, j, grad.get(i, j) + 2.0 * nf * m.w.get(i, j) / denom);
            }
        }
        Ok(grad)
    } else {
        Ok(minv.scaled(nf).sub(&mam).matmul(&m.w).scaled(2.0))
    }
}

/// Numeric minimizer used as the independent check on the closed form: Adam
/// warmup followed by backtracking gradient descent, best of `starts`
/// He-scaled random initializations. Returns `(W, objective value)`.
pub fn minimize_objective(
    x: &DenseMatrix,
    b: &[f64],
    lambda: f64,
    kappa: usize,
    starts: usize,
    iters: usize,
    stream: &RngStream,
) -> Result<(DenseMatrix, f64)> {
    minimize_impl(x, b, lambda, kappa, starts, iters, stream, false)
}

/// Same minimizer for the diagonal-covariance (separable) objective.
pub fn minimize_objective_sep(
    x: &DenseMatrix,
    b: &[f64],
    lambda: f64,
    kappa: usize,
    starts: usize,
    iters: usize,
    stream: &RngStream,
) -> Result<(DenseMatrix, f64)> {
    minimize_impl(x, b, lambda, kappa, starts, iters, stream, true)
}

#[allow(clippy::too_many_arguments)]
fn minimize_impl(
    x: &DenseMatrix,
    b: &[f64],
    lambda: f64,
    kappa: usize,
    starts: usize,
    iters: usize,
    stream: &RngStream,
    separable: bool,
) -> Result<(DenseMatrix, f64)> {
    use crate::diffnet::{AdamParams, AdamState};

    let d = x.rows();
    let n = x.cols();
    let centered = DenseMatrix::from_fn(d, n, |i, j| x.get(i, j) - b[i]);
    let scatter = centered.matmul_nt(&centered);

    let eval = |w: &DenseMatrix| -> Result<f64> {
        let m = AffineModel::new(w.clone(), b.to_vec(), lambda)?;
        if separable {
            ppca_objective_sep(&m, x)
        } else {
            ppca_objective(&m, x)
        }
    };
    let grad = |w: &DenseMatrix| -> Result<DenseMatrix> {
        let m = AffineModel::new(w.clone(), b.to_vec(), lambda)?;
        objective_gradient(&m, &scatter, n, separable)
    };

    let mut best: Option<(DenseMatrix, f64)> = None;
    for start in 0..starts {
        let scale = (1.0 / d as f64).sqrt();
        let mut w = crate::numkit::sample_gaussian(&stream.child(&format!("start{start}")), d, kappa)
            .scaled(scale);

        // Adam warmup
        let mut flat: Vec<f64> = w.data().to_vec();
        let mut adam =
            AdamState::new(flat.len(), AdamParams { lr: 0.02, ..AdamParams::default() });
        for _ in 0..iters {
            let g = grad(&w)?;
            adam.step(&mut flat, g.data(), 0.0);
            w = DenseMatrix::from_vec(d, kappa, flat.clone())
                .map_err(|_| Error::NonFinite("minimize: adam produced non-finite W"))?;
        }

        // backtracking gradient descent polish
        let mut f = eval(&w)?;
        let mut step = 1e-3;
        for _ in 0..iters {
            let g = grad(&w)?;
            let gnorm2 = g.data().iter().map(|v| v * v).sum::<f64>();
            if gnorm2.sqrt() < 1e-12 {
                break;
            }
            step *= 4.0;
            loop {
                let cand = {
                    let mut c = w.clone();
                    c.add_assign_scaled(&g, -step);
                    c
                };
                match eval(&cand) {
                    Ok(fc) if fc <= f - 0.5 * step * gnorm2 => {
                        w = cand;
                        f = fc;
                        break;
                    }
                    _ => {
                        step *= 0.5;
                        if step < 1e-18 {
                            break;
                        }
                    }
                }
            }
            if step < 1e-18 {
                break;
            }
        }
        if best.as_ref().map_or(true, |(_, fb)| f < *fb) {
            best = Some((w, f));
        }
    }
    Ok(best.expect("at least one start"))
}

/// Haar-ish random rotation via QR of a Gaussian matrix, determinant +1.
pub fn random_rotation(kappa: usize, stream: &RngStream) -> DenseMatrix {
    let g = crate::numkit::sample_gaussian(stream, kappa, kappa);
    let na = nalgebra::DMatrix::from_row_slice(kappa, kappa, g.data());
    let qr = na.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..kappa {
        if r[(j, j)] < 0.0 {
            for i in 0..kappa {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    if q.determinant() < 0.0 {
        for i in 0..kappa {
            q[(i, 0)] = -q[(i, 0)];
        }
    }
    DenseMatrix::from_fn(kappa, kappa, |i, j| q[(i, j)])
}

fn random_permutation(kappa: usize, rng: &mut impl Rng) -> DenseMatrix {
    let mut perm: Vec<usize> = (0..kappa).collect();
    perm.shuffle(rng);
    let mut p = DenseMatrix::zeros(kappa, kappa);
    for (i, &j) in perm.iter().enumerate() {
        p.set(i, j, 1.0);
    }
    p
}

/// Count of columns whose norm is at least `1e-6` times the largest column
/// norm (the closed-form zero-column threshold).
pub fn nonzero_columns_closed_form(w: &DenseMatrix) -> usize {
    let norms = w.col_norms();
    let max = norms.iter().cloned().fold(0.0f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    norms.iter().filter(|&&c| c >= 1e-6 * max).count()
}

/// Numerical rank via singular values above `1e-6` of the largest.
pub fn numerical_rank(w: &DenseMatrix) -> Result<usize> {
    let s = crate::numkit::svd(w)?.s;
    let max = s.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v >= 1e-6 * max).count())
}

/// Invariance properties of the two collapsed objectives around their
/// minimizers.
#[derive(Debug)]
pub struct InvarianceReport {
    /// Worst deviation of the free-covariance objective under random
    /// rotations of its minimizer.
    pub rotation_max_dev: f64,
    /// Worst deviation of the separable objective under random column
    /// permutations of its minimizer.
    pub permutation_max_dev: f64,
    /// Nonzero columns of the separable minimizer.
    pub sep_nonzero_columns: usize,
    /// Numerical rank of the free-covariance minimizer.
    pub dense_rank: usize,
    /// Separable minimizers can never need more columns than that rank.
    pub column_bound_ok: bool,
}

/// Exercise rotation invariance of the free-covariance objective at
/// `w_dense`, permutation invariance of the separable objective at `w_sep`,
/// and the column-sparsity bound relating the two minimizers.
pub fn invariance_suite(
    x: &DenseMatrix,
    b: &[f64],
    lambda: f64,
    w_dense: &DenseMatrix,
    w_sep: &DenseMatrix,
    trials: usize,
    stream: &RngStream,
) -> Result<InvarianceReport> {
    let base_dense = ppca_objective(&AffineModel::new(w_dense.clone(), b.to_vec(), lambda)?, x)?;
    let base_sep = ppca_objective_sep(&AffineModel::new(w_sep.clone(), b.to_vec(), lambda)?, x)?;

    let mut rotation_max_dev = 0.0f64;
    let mut permutation_max_dev = 0.0f64;
    let mut rng = stream.child("perm").rng();
    for t in 0..trials {
        let r = random_rotation(w_dense.cols(), &stream.child(&format!("rot{t}")));
        let rotated = w_dense.matmul(&r);
        let v = ppca_objective(&AffineModel::new(rotated, b.to_vec(), lambda)?, x)?;
        rotation_max_dev = rotation_max_dev.max((v - base_dense).abs());

        let p = random_permutation(w_sep.cols(), &mut rng);
        let permuted = w_sep.matmul(&p);
        let v = ppca_objective_sep(&AffineModel::new(permuted, b.to_vec(), lambda)?, x)?;
        permutation_max_dev = permutation_max_dev.max((v - base_sep).abs());
    }

    let sep_nonzero_columns = nonzero_columns_closed_form(w_sep);
    let dense_rank = numerical_rank(w_dense)?;
    Ok(InvarianceReport {
        rotation_max_dev,
        permutation_max_dev,
        sep_nonzero_columns,
        dense_rank,
        column_bound_ok: sep_nonzero_columns <= dense_rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{sample_gaussian, svd};

    /// Data matrix with exactly the requested sample-covariance eigenvalues.
    fn data_with_cov_eigs(eigs: &[f64], n: usize, stream: &RngStream) -> DenseMatrix {
        let d = eigs.len();
        let u = random_rotation(d, &stream.child("u"));
        // orthonormal columns in R^n via QR of a Gaussian
        let g = sample_gaussian(&stream.child("v"), n, d);
        let na = nalgebra::DMatrix::from_row_slice(n, d, g.data());
        let q = na.qr().q();
        let mut x = DenseMatrix::zeros(d, n);
        for i in 0..d {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += u.get(i, k) * (eigs[k] * n as f64).sqrt() * q[(j, k)];
                }
                x.set(i, j, acc);
            }
        }
        x
    }

    fn naive_objective(m: &AffineModel, x: &DenseMatrix) -> f64 {
        // independent route: dense inverse + eigenvalue log-det
        let sys = system_matrix(m);
        let na = nalgebra::DMatrix::from_row_slice(sys.rows(), sys.cols(), sys.data());
        let inv = na.clone().try_inverse().unwrap();
        let logdet: f64 = na.symmetric_eigen().eigenvalues.iter().map(|v| v.ln()).sum();
        let mut total = x.cols() as f64 * logdet;
        for i in 0..x.cols() {
            let r: Vec<f64> = (0..x.rows()).map(|j| x.get(j, i) - m.b[j]).collect();
            for a in 0..x.rows() {
                for b2 in 0..x.rows() {
                    total += r[a] * inv[(a, b2)] * r[b2];
                }
            }
        }
        total
    }

    #[test]
    fn objective_trivials() {
        let stream = RngStream::new(51, "affine/trivial");
        let x = sample_gaussian(&stream.child("x"), 4, 30);
        let zero_w = DenseMatrix::zeros(4, 2);
        let m = AffineModel::new(zero_w.clone(), vec![0.0; 4], 1.0).unwrap();
        let want: f64 = x.data().iter().map(|v| v * v).sum();
        assert!((ppca_objective(&m, &x).unwrap() - want).abs() < 1e-9 * want.abs());

        // b = sample mean, W = 0, general lambda
        let lambda = 0.37;
        let mean: Vec<f64> =
            (0..4).map(|j| (0..30).map(|i| x.get(j, i)).sum::<f64>() / 30.0).collect();
        let m2 = AffineModel::new(zero_w, mean.clone(), lambda).unwrap();
        let mut want2 = 30.0 * 4.0 * lambda.ln();
        for i in 0..30 {
            for j in 0..4 {
                let r = x.get(j, i) - mean[j];
                want2 += r * r / lambda;
            }
        }
        assert!((ppca_objective(&m2, &x).unwrap() - want2).abs() < 1e-9 * want2.abs());
    }

    #[test]
    fn objective_matches_naive_inverse() {
        let stream = RngStream::new(53, "affine/naive");
        let x = sample_gaussian(&stream.child("x"), 6, 40);
        let w = sample_gaussian(&stream.child("w"), 6, 3);
        let m = AffineModel::new(w, (0..6).map(|i| 0.1 * i as f64).collect(), 0.8).unwrap();
        let fast = ppca_objective(&m, &x).unwrap();
        let slow = naive_objective(&m, &x);
        assert!((fast - slow).abs() <= 1e-9 * slow.abs(), "{fast} vs {slow}");
    }

    #[test]
    fn separable_vs_free_objective() {
        let stream = RngStream::new(55, "affine/sep");
        let x = sample_gaussian(&stream.child("x"), 5, 25);
        // orthogonal columns: equality
        let mut w = DenseMatrix::zeros(5, 2);
        w.set(0, 0, 1.3);
        w.set(2, 1, -0.7);
        let m = AffineModel::new(w, vec![0.0; 5], 0.9).unwrap();
        let a = ppca_objective(&m, &x).unwrap();
        let b = ppca_objective_sep(&m, &x).unwrap();
        assert!((a - b).abs() < 1e-9, "orthogonal columns should tie: {a} vs {b}");

        // W = 0: also equality
        let m0 = AffineModel::new(DenseMatrix::zeros(5, 2), vec![0.0; 5], 0.9).unwrap();
        assert!(
            (ppca_objective(&m0, &x).unwrap() - ppca_objective_sep(&m0, &x).unwrap()).abs() < 1e-9
        );

        // random non-orthogonal W: strictly greater
        let w = sample_gaussian(&stream.child("w"), 5, 3);
        let m = AffineModel::new(w, vec![0.0; 5], 0.9).unwrap();
        let a = ppca_objective(&m, &x).unwrap();
        let b = ppca_objective_sep(&m, &x).unwrap();
        assert!(b > a + 1e-6, "separable bound should be strict: {b} vs {a}");
    }

    #[test]
    fn hadamard_gap_cases() {
        let stream = RngStream::new(57, "affine/hadamard");
        let mut w = DenseMatrix::zeros(4, 2);
        w.set(0, 0, 2.0);
        w.set(1, 1, 3.0);
        assert!(hadamard_gap(&w, 0.5).unwrap().abs() < 1e-10);

        let mut wi = DenseMatrix::zeros(4, 2);
        for i in 0..4 {
            wi.set(i, 0, 1.0 + i as f64);
            wi.set(i, 1, 1.0 + i as f64);
        }
        assert!(hadamard_gap(&wi, 0.5).unwrap() > 1e-3);

        assert!(hadamard_gap(&DenseMatrix::zeros(4, 2), 0.5).unwrap().abs() < 1e-12);

        for t in 0..50 {
            let w = sample_gaussian(&stream.child(&format!("w{t}")), 5, 3);
            assert!(hadamard_gap(&w, 0.3).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn optimal_w_soft_thresholds_eigenvalues() {
        let stream = RngStream::new(59, "affine/opt");
        let x = data_with_cov_eigs(&[5.0, 0.5], 40, &stream);
        let w = ppca_optimal_w(&x, &[0.0, 0.0], 1.0, 2).unwrap();
        let norms = w.col_norms();
        assert!((norms[0] * norms[0] - 4.0).abs() < 1e-8, "|w1|^2 = {}", norms[0] * norms[0]);
        assert_eq!(norms[1], 0.0, "second column exactly zero");

        // lambda above the top eigenvalue: W = 0
        let w0 = ppca_optimal_w(&x, &[0.0, 0.0], 6.0, 2).unwrap();
        assert_eq!(w0.max_abs(), 0.0);
    }

    #[test]
    fn optimal_w_recovers_covariance_as_lambda_vanishes() {
        let stream = RngStream::new(61, "affine/cov");
        let x = sample_gaussian(&stream.child("x"), 4, 300);
        let cov = sample_covariance(&x, &[0.0; 4]);
        let w = ppca_optimal_w(&x, &[0.0; 4], 1e-9, 4).unwrap();
        let approx = w.matmul_nt(&w);
        assert!(approx.sub(&cov).max_abs() < 1e-6);
    }

    #[test]
    fn posterior_trivials() {
        // W = 0: mu = 0, Sigma = I
        let m = AffineModel::new(DenseMatrix::zeros(3, 2), vec![0.0; 3], 0.7).unwrap();
        let (mu, sigma) = ppca_posterior(&m, &[1.0, -2.0, 0.5]).unwrap();
        assert!(mu.iter().all(|&v| v == 0.0));
        assert!(sigma.sub(&DenseMatrix::identity(2)).max_abs() < 1e-12);

        // orthonormal columns, lambda = 1: Sigma = I/2
        let mut w = DenseMatrix::zeros(3, 2);
        w.set(0, 0, 1.0);
        w.set(1, 1, 1.0);
        let m = AffineModel::new(w, vec![0.0; 3], 1.0).unwrap();
        let (_, sigma) = ppca_posterior(&m, &[0.3, 0.4, 0.5]).unwrap();
        assert!(sigma.sub(&DenseMatrix::identity(2).scaled(0.5)).max_abs() < 1e-12);
    }

    #[test]
    fn posterior_objective_matches_collapsed() {
        let stream = RngStream::new(63, "affine/post");
        let x = sample_gaussian(&stream.child("x"), 6, 50);
        let w = sample_gaussian(&stream.child("w"), 6, 3);
        let m = AffineModel::new(w, (0..6).map(|i| 0.05 * i as f64).collect(), 0.6).unwrap();
        let collapsed = ppca_objective(&m, &x).unwrap();
        let via_posterior = posterior_objective(&m, &x).unwrap();
        assert!(
            (collapsed - via_posterior).abs() <= 1e-8 * collapsed.abs().max(1.0),
            "{collapsed} vs {via_posterior}"
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let stream = RngStream::new(65, "affine/grad");
        let x = sample_gaussian(&stream.child("x"), 5, 30);
        let d = 5;
        let kappa = 3;
        let centered = x.clone();
        let scatter = centered.matmul_nt(&centered);
        for &separable in &[false, true] {
            let w = sample_gaussian(&stream.child(if separable { "ws" } else { "wf" }), d, kappa);
            let m = AffineModel::new(w.clone(), vec![0.0; d], 0.4).unwrap();
            let g = objective_gradient(&m, &scatter, x.cols(), separable).unwrap();
            let eval = |w: &DenseMatrix| {
                let m = AffineModel::new(w.clone(), vec![0.0; d], 0.4).unwrap();
                if separable {
                    ppca_objective_sep(&m, &x).unwrap()
                } else {
                    ppca_objective(&m, &x).unwrap()
                }
            };
            let h = 1e-6;
            for idx in [0usize, 4, 7, 13] {
                let mut wp = w.clone();
                wp.data_mut()[idx] += h;
                let mut wm = w.clone();
                wm.data_mut()[idx] -= h;
                let numeric = (eval(&wp) - eval(&wm)) / (2.0 * h);
                let analytic = g.data()[idx];
                assert!(
                    (numeric - analytic).abs() <= 1e-5 * (1.0 + analytic.abs()),
                    "{separable}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn minimizer_reaches_closed_form() {
        let stream = RngStream::new(67, "affine/minimize");
        let x = data_with_cov_eigs(&[4.0, 2.0, 0.3, 0.1], 60, &stream.child("data"));
        let lambda = 0.5;
        let w_star = ppca_optimal_w(&x, &[0.0; 4], lambda, 3).unwrap();
        let m = AffineModel::new(w_star, vec![0.0; 4], lambda).unwrap();
        let best_closed = ppca_objective(&m, &x).unwrap();
        let (_, best_numeric) =
            minimize_objective(&x, &[0.0; 4], lambda, 3, 5, 800, &stream.child("opt")).unwrap();
        assert!(
            (best_numeric - best_closed).abs() <= 1e-6 * best_closed.abs(),
            "numeric {best_numeric} vs closed {best_closed}"
        );
    }

    #[test]
    fn rotation_and_permutation_invariance() {
        let stream = RngStream::new(69, "affine/invariance");
        let x = data_with_cov_eigs(&[3.0, 1.5, 0.2, 0.05], 50, &stream.child("data"));
        let lambda = 0.4;
        let w_dense = ppca_optimal_w(&x, &[0.0; 4], lambda, 3).unwrap();
        let (w_sep, _) =
            minimize_objective_sep(&x, &[0.0; 4], lambda, 3, 4, 600, &stream.child("sep")).unwrap();
        let report =
            invariance_suite(&x, &[0.0; 4], lambda, &w_dense, &w_sep, 20, &stream.child("suite"))
                .unwrap();
        assert!(report.rotation_max_dev < 1e-8, "{report:?}");
        assert!(report.permutation_max_dev < 1e-10, "{report:?}");
        assert!(report.column_bound_ok, "{report:?}");
    }

    #[test]
    fn closed_form_beats_random_candidates() {
        let stream = RngStream::new(71, "affine/global");
        let x = sample_gaussian(&stream.child("x"), 5, 80);
        let lambda = 0.6;
        let w_star = ppca_optimal_w(&x, &[0.0; 5], lambda, 3).unwrap();
        let best = ppca_objective(&AffineModel::new(w_star, vec![0.0; 5], lambda).unwrap(), &x)
            .unwrap();
        for t in 0..100 {
            let w = sample_gaussian(&stream.child(&format!("cand{t}")), 5, 3);
            let v =
                ppca_objective(&AffineModel::new(w, vec![0.0; 5], lambda).unwrap(), &x).unwrap();
            assert!(v >= best - 1e-8, "random candidate beat the closed form: {v} < {best}");
        }
    }

    #[test]
    fn optimal_w_is_deterministic_and_ordered() {
        let stream = RngStream::new(73, "affine/det");
        let x = sample_gaussian(&stream.child("x"), 6, 90);
        let a = ppca_optimal_w(&x, &[0.0; 6], 0.3, 4).unwrap();
        let b = ppca_optimal_w(&x, &[0.0; 6], 0.3, 4).unwrap();
        assert_eq!(a, b);
        let s = svd(&a).unwrap().s;
        for w in s.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
    }
}
