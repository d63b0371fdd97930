//! Singular value decomposition and shrinkage operators.

use crate::error::{Error, Result};

use super::DenseMatrix;

const SVD_MAX_ITER: usize = 1024;

/// Thin SVD `M = U diag(s) V^T` with `k = min(rows, cols)`.
///
/// Singular values are nonincreasing and each column of `U` is signed so its
/// largest-magnitude entry is nonnegative, which makes downstream column
/// comparisons deterministic.
pub struct SvdResult {
    /// `rows x k`, orthonormal columns.
    pub u: DenseMatrix,
    /// Nonincreasing, nonnegative.
    pub s: Vec<f64>,
    /// `cols x k`, orthonormal columns.
    pub v: DenseMatrix,
}

impl SvdResult {
    /// `U diag(s) V^T`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let k = self.s.len();
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for j in 0..k {
                us.set(i, j, us.get(i, j) * self.s[j]);
            }
        }
        us.matmul_nt(&self.v)
    }

    /// Relative reconstruction residual `|U diag(s) V^T - m|_F / max(1, |m|_F)`.
    pub fn residual(&self, m: &DenseMatrix) -> f64 {
        self.reconstruct().sub(m).frob_norm() / m.frob_norm().max(1.0)
    }
}

pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::Precondition("svd: empty matrix".into()));
    }
    if !m.is_finite_all() {
        return Err(Error::NonFinite("svd input"));
    }
    let na = nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let svd = na
        .try_svd_unordered(true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(Error::SvdNonConvergence { iterations: SVD_MAX_ITER })?;
    let u_na = svd.u.expect("svd requested u");
    let vt_na = svd.v_t.expect("svd requested v_t");
    let k = svd.singular_values.len();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());

    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut u = DenseMatrix::zeros(m.rows(), k);
    let mut v = DenseMatrix::zeros(m.cols(), k);
    for (j, &src) in order.iter().enumerate() {
        // sign convention on U, matching flip applied to V
        let mut lead = 0.0f64;
        for i in 0..m.rows() {
            if u_na[(i, src)].abs() > lead.abs() {
                lead = u_na[(i, src)];
            }
        }
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m.rows() {
            u.set(i, j, sign * u_na[(i, src)]);
        }
        for i in 0..m.cols() {
            v.set(i, j, sign * vt_na[(src, i)]);
        }
    }
    Ok(SvdResult { u, s, v })
}

/// Proximal operator of the absolute value: `sign(x) * max(|x| - t, 0)`.
#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Singular value shrinkage: soft-threshold every singular value by `t`.
pub fn sv_shrink(m: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    let mut dec = svd(m)?;
    for s in dec.s.iter_mut() {
        *s = soft_threshold(*s, t);
    }
    Ok(dec.reconstruct())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{sample_gaussian, RngStream};

    fn ortho_defect(m: &DenseMatrix) -> f64 {
        let g = m.matmul_tn(m);
        let mut worst = 0.0f64;
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - want).abs());
            }
        }
        worst
    }

    #[test]
    fn identity_three() {
        let m = DenseMatrix::identity(3);
        let dec = svd(&m).unwrap();
        for s in &dec.s {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diag_three_one() {
        let m = DenseMatrix::from_diag(&[3.0, 1.0]);
        let dec = svd(&m).unwrap();
        assert!((dec.s[0] - 3.0).abs() < 1e-12);
        assert!((dec.s[1] - 1.0).abs() < 1e-12);
        // U = V = I under the sign convention
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dec.u.get(i, j) - want).abs() < 1e-12);
                assert!((dec.v.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_rect_reconstructs() {
        let m = sample_gaussian(&RngStream::new(5, "svd/rect"), 20, 15);
        let dec = svd(&m).unwrap();
        assert!(dec.residual(&m) <= 1e-10, "residual {}", dec.residual(&m));
        assert!(ortho_defect(&dec.u) <= 1e-10);
        assert!(ortho_defect(&dec.v) <= 1e-10);
        for w in dec.s.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(dec.s.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn large_random_roundtrip() {
        let m = sample_gaussian(&RngStream::new(6, "svd/large"), 200, 200);
        let dec = svd(&m).unwrap();
        assert!(dec.residual(&m) <= 1e-10, "residual {}", dec.residual(&m));
    }

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-4.0, 1.5), -2.5);
    }

    #[test]
    fn shrink_diag() {
        let m = DenseMatrix::from_diag(&[3.0, 1.0]);
        let out = sv_shrink(&m, 2.0).unwrap();
        assert!((out.get(0, 0) - 1.0).abs() < 1e-10);
        assert!(out.get(1, 1).abs() < 1e-10);
        assert!(out.get(0, 1).abs() < 1e-10);
    }

    #[test]
    fn shrink_zero_threshold_is_identity() {
        let m = sample_gaussian(&RngStream::new(9, "svd/t0"), 7, 5);
        let out = sv_shrink(&m, 0.0).unwrap();
        assert!(out.sub(&m).frob_norm() / m.frob_norm() < 1e-10);
    }

    #[test]
    fn shrink_rank_one_to_zero() {
        // outer product with spectral norm exactly 5
        let u = [0.6, 0.8];
        let v = [0.0, 1.0, 0.0];
        let m = DenseMatrix::from_fn(2, 3, |i, j| 5.0 * u[i] * v[j]);
        let out = sv_shrink(&m, 5.0).unwrap();
        assert!(out.max_abs() < 1e-10);
    }

    #[test]
    fn shrunk_singular_values_match() {
        let m = sample_gaussian(&RngStream::new(13, "svd/shrunk"), 9, 9);
        let t = 0.8;
        let out = sv_shrink(&m, t).unwrap();
        let s_in = svd(&m).unwrap().s;
        let s_out = svd(&out).unwrap().s;
        for (a, b) in s_in.iter().zip(&s_out) {
            assert!((soft_threshold(*a, t) - b).abs() < 1e-9);
        }
    }
}
