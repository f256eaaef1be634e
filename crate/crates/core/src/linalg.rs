//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Everything here is deterministic: SVDs come from nalgebra's pure-Rust
//! implementation (no BLAS/LAPACK), so results are bit-stable across runs,
//! thread counts, and machines with the same float semantics.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Thin SVD of `m` with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// Left singular vectors, rows(m) x min_dim.
    pub u: DMatrix<f64>,
    /// Singular values, descending.
    pub d: Vec<f64>,
    /// Transposed right singular vectors, min_dim x cols(m).
    pub vt: DMatrix<f64>,
}

impl ThinSvd {
    pub fn new(m: &DMatrix<f64>) -> Result<ThinSvd> {
        if !all_finite(m) {
            return Err(Error::NumericalFailure("non-finite input to SVD".into()));
        }
        if let Some(svd) = nalgebra::linalg::SVD::try_new(m.clone(), true, true, f64::EPSILON, 0) {
            let u = svd.u.expect("u requested");
            let vt = svd.v_t.expect("v_t requested");
            let d: Vec<f64> = svd.singular_values.iter().copied().collect();
            if reconstruction_defect(&u, &d, &vt, m) <= 1e-12 * (1.0 + m.norm()) {
                // nalgebra sorts descending; keep a defensive check out of
                // release builds.
                debug_assert!(d.windows(2).all(|w| w[0] >= w[1]));
                return Ok(ThinSvd { u, d, vt });
            }
        }
        // Bit-exactly rank-deficient inputs (outer products, duplicated
        // columns) can defeat the bidiagonal iteration: it may return
        // orthonormal factors whose product is not the input, with singular
        // values off by O(1). The Gram route survives that regime because the
        // symmetric eigensolver never sees the degenerate bidiagonal.
        gram_svd(m)
    }

    /// Count of singular values above `rank_tol * d_1`. Zero matrix -> 0.
    pub fn rank(&self, rank_tol: f64) -> usize {
        let d1 = self.d.first().copied().unwrap_or(0.0);
        if d1 <= 0.0 {
            return 0;
        }
        self.d.iter().filter(|&&di| di > rank_tol * d1).count()
    }

    /// Minimum-norm least-squares application: pinv(M) * rhs, cutting
    /// singular values at `rank_tol * d_1`.
    pub fn pinv_mul(&self, rhs: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
        let r = self.rank(rank_tol);
        let p = self.vt.ncols();
        let k = rhs.ncols();
        if r == 0 {
            return DMatrix::zeros(p, k);
        }
        // V_r * D_r^{-1} * U_r' * rhs
        let ur = self.u.columns(0, r);
        let mut t = ur.transpose() * rhs; // r x k
        for i in 0..r {
            let di = self.d[i];
            for j in 0..k {
                t[(i, j)] /= di;
            }
        }
        self.vt.rows(0, r).transpose() * t
    }
}

/// || U diag(d) V' - M ||_F, the backward error of a claimed factorization.
fn reconstruction_defect(u: &DMatrix<f64>, d: &[f64], vt: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    let mut ud = u.clone();
    for (c, &dc) in d.iter().enumerate() {
        ud.column_mut(c).scale_mut(dc);
    }
    (ud * vt - m).norm()
}

/// Thin SVD through the eigendecomposition of the Gram matrix of the shorter
/// side. Eigenvalues below lam_1 * eps * 16 * min_dim are squared noise and
/// are reported as exactly zero; their left vectors come from the
/// Gram-Schmidt completion, so `u` always has a full orthonormal column set.
fn gram_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    if m.nrows() < m.ncols() {
        let t = gram_svd(&m.transpose())?;
        return Ok(ThinSvd {
            u: t.vt.transpose(),
            d: t.d,
            vt: t.u.transpose(),
        });
    }
    let rows = m.nrows();
    let cols = m.ncols();
    let gram = m.transpose() * m;
    let eig = nalgebra::linalg::SymmetricEigen::try_new(gram, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let lam1 = eig.eigenvalues[order[0]].max(0.0);
    let lam_cut = lam1 * f64::EPSILON * 16.0 * cols as f64;

    // (sigma, left vector if resolvable, right vector); sigma re-sorted after
    // the fact because ||M q|| can disagree with the eigenvalue order at
    // roundoff level for near-ties.
    let mut trips: Vec<(f64, Option<DVector<f64>>, DVector<f64>)> = Vec::with_capacity(cols);
    for &idx in &order {
        let mut qc: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
        let lam = eig.eigenvalues[idx];
        if lam > lam_cut && lam1 > 0.0 {
            let mut uc = m * &qc;
            let sigma = uc.norm();
            if sigma > 0.0 {
                uc /= sigma;
                // Deterministic sign: largest-magnitude entry of u positive,
                // with q flipped alongside so the product is unchanged.
                let imax = (0..rows)
                    .max_by(|&a, &b| {
                        uc[a].abs().partial_cmp(&uc[b].abs()).unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .unwrap_or(0);
                if uc[imax] < 0.0 {
                    uc.neg_mut();
                    qc.neg_mut();
                }
                trips.push((sigma, Some(uc), qc));
                continue;
            }
        }
        let imax = (0..cols)
            .max_by(|&a, &b| {
                qc[a].abs().partial_cmp(&qc[b].abs()).unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(0);
        if qc[imax] < 0.0 {
            qc.neg_mut();
        }
        trips.push((0.0, None, qc));
    }
    trips.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let mut u = DMatrix::<f64>::zeros(rows, cols);
    let mut vt = DMatrix::<f64>::zeros(cols, cols);
    let mut d = vec![0.0f64; cols];
    for (c, (sigma, uc, qc)) in trips.iter().enumerate() {
        d[c] = *sigma;
        if let Some(uc) = uc {
            u.set_column(c, uc);
        }
        vt.row_mut(c).copy_from(&qc.transpose());
    }
    orthonormalize_columns(&mut u);
    debug_assert!(d.windows(2).all(|w| w[0] >= w[1]));
    Ok(ThinSvd { u, d, vt })
}

/// Largest singular value (operator norm); 0 for an all-zero matrix.
pub fn operator_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let sv = nalgebra::linalg::SVD::try_new(m.clone(), false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?
        .singular_values;
    Ok(sv.iter().copied().fold(0.0, f64::max))
}

/// Euclidean norms of the rows of `m`.
pub fn row_norms(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m.row(i).norm()).collect()
}

/// Sum of row norms: the group-sparsity norm ||M||_{2,1}.
pub fn l21_norm(m: &DMatrix<f64>) -> f64 {
    row_norms(m).iter().sum()
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Polar factor of an n x k matrix (k <= n): the orthonormal V maximizing
/// tr(W'V), i.e. U_w V_w' from the SVD W = U_w D_w V_w'.
///
/// SVD sign/column ambiguities in degenerate subspaces (tied or zero singular
/// values) are pinned down deterministically: each U_w column is flipped so
/// its largest-magnitude entry is positive (the matching V_w column flips
/// with it, leaving the product unchanged), and near-zero columns are
/// replaced through Gram-Schmidt against identity basis vectors so the output
/// always has orthonormal columns.
pub fn polar_factor(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = w.nrows();
    let k = w.ncols();
    if k > n {
        return Err(Error::InvalidInput(format!(
            "polar factor needs a tall matrix, got {n}x{k}"
        )));
    }
    if w.iter().all(|&v| v == 0.0) {
        // Any orthonormal V attains tr(W'V) = 0; pick coordinate columns.
        return Ok(DMatrix::identity(n, k));
    }
    let svd = ThinSvd::new(w)?;
    let mut u = svd.u;
    let mut vt = svd.vt;
    for c in 0..k {
        let col = u.column(c);
        let mut imax = 0usize;
        let mut vmax = 0.0f64;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > vmax {
                vmax = v.abs();
                imax = i;
            }
        }
        if u[(imax, c)] < 0.0 {
            for i in 0..n {
                u[(i, c)] = -u[(i, c)];
            }
            for j in 0..vt.ncols() {
                vt[(c, j)] = -vt[(c, j)];
            }
        }
    }
    orthonormalize_columns(&mut u);
    Ok(u * vt)
}

/// Modified Gram-Schmidt repair: guarantees orthonormal columns even when the
/// SVD produced degenerate directions. Collapsed columns are replaced by the
/// first identity basis vector with a nonzero orthogonal component.
fn orthonormalize_columns(u: &mut DMatrix<f64>) {
    let n = u.nrows();
    let k = u.ncols();
    for c in 0..k {
        for prev in 0..c {
            let dot = u.column(c).dot(&u.column(prev));
            for i in 0..n {
                let sub = dot * u[(i, prev)];
                u[(i, c)] -= sub;
            }
        }
        let mut norm = u.column(c).norm();
        if norm < 1e-8 {
            // Degenerate direction: substitute an identity vector orthogonal
            // to everything kept so far.
            'basis: for e in 0..n {
                for i in 0..n {
                    u[(i, c)] = if i == e { 1.0 } else { 0.0 };
                }
                for prev in 0..c {
                    let dot = u.column(c).dot(&u.column(prev));
                    for i in 0..n {
                        let sub = dot * u[(i, prev)];
                        u[(i, c)] -= sub;
                    }
                }
                norm = u.column(c).norm();
                if norm >= 1e-8 {
                    break 'basis;
                }
            }
        }
        for i in 0..n {
            u[(i, c)] /= norm;
        }
    }
}

/// Frobenius distance of V'V from the identity; the orthonormality defect.
pub fn orthonormality_defect(v: &DMatrix<f64>) -> f64 {
    let k = v.ncols();
    (v.transpose() * v - DMatrix::<f64>::identity(k, k)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn svd_sorted_descending_and_thin() {
        let m = mat(4, 3, &[1., 2., 3., 4., 5., 6., 7., 8., 10., 0.5, -1., 2.]);
        let s = ThinSvd::new(&m).unwrap();
        assert_eq!(s.u.shape(), (4, 3));
        assert_eq!(s.vt.shape(), (3, 3));
        assert!(s.d.windows(2).all(|w| w[0] >= w[1]));
        let rebuilt = &s.u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s.d.clone())) * &s.vt;
        assert!((rebuilt - m).norm() < 1e-10);
    }

    #[test]
    fn pinv_mul_min_norm() {
        // Rank-1 design: pinv solution must lie in the row space.
        let x = mat(3, 2, &[1., 2., 2., 4., 3., 6.]);
        let rhs = mat(3, 1, &[1., 2., 3.]);
        let s = ThinSvd::new(&x).unwrap();
        assert_eq!(s.rank(1e-8), 1);
        let b = s.pinv_mul(&rhs, 1e-8);
        // x * b is the projection of rhs onto col(x); residual orthogonal to col(x).
        let resid = &rhs - &x * &b;
        assert!((x.transpose() * resid).norm() < 1e-10);
        // Minimum-norm: b parallel to (1,2).
        assert!((b[(0, 0)] * 2.0 - b[(1, 0)]).abs() < 1e-12);
    }

    #[test]
    fn operator_norm_matches_svd() {
        let m = mat(2, 2, &[3., 0., 0., 4.]);
        assert!((operator_norm(&m).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(operator_norm(&DMatrix::zeros(3, 2)).unwrap(), 0.0);
    }

    #[test]
    fn thin_svd_exact_outer_products() {
        // Bit-exact rank-1 matrices (every column a multiple of the same
        // vector) are the known bad case for the bidiagonal iteration; the
        // result must still reconstruct the input and have orthonormal
        // factors.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for (rows, cols) in [(6, 4), (4, 6), (5, 5), (9, 2)] {
            let a = DMatrix::from_fn(rows, 1, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let b = DMatrix::from_fn(1, cols, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let w = &a * &b;
            let s = ThinSvd::new(&w).unwrap();
            let min_dim = rows.min(cols);
            assert_eq!(s.d.len(), min_dim);
            let rebuilt =
                &s.u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s.d.clone())) * &s.vt;
            assert!((rebuilt - &w).norm() <= 1e-10 * (1.0 + w.norm()));
            assert!(orthonormality_defect(&s.u) < 1e-10);
            assert!(orthonormality_defect(&s.vt.transpose()) < 1e-10);
            assert!((s.d[0] - a.norm() * b.norm()).abs() <= 1e-10 * a.norm() * b.norm());
            assert_eq!(s.rank(1e-8), 1);
        }
    }

    #[test]
    fn polar_factor_achieves_nuclear_norm_on_outer_product() {
        // tr(W' V) at the polar factor must equal the sum of singular values
        // even when W is exactly rank one.
        let a = mat(6, 1, &[0.3, -1.2, 0.5, 2.0, -0.7, 0.1]);
        let b = mat(1, 4, &[1.5, -0.4, 0.9, 2.2]);
        let w = &a * &b;
        let v = polar_factor(&w).unwrap();
        let achieved = (w.transpose() * &v).trace();
        let nuclear = a.norm() * b.norm();
        assert!((achieved - nuclear).abs() <= 1e-10 * nuclear);
        assert!(orthonormality_defect(&v) < 1e-10);
    }

    #[test]
    fn polar_factor_of_orthonormal_is_identity_map() {
        // W with orthonormal columns: polar factor is W itself.
        let w = mat(3, 2, &[1., 0., 0., 1., 0., 0.]);
        let v = polar_factor(&w).unwrap();
        assert!((v - w).norm() < 1e-12);
    }

    #[test]
    fn polar_factor_diag_embedded() {
        // Positive diagonal block: polar factor is the coordinate columns.
        let w = mat(4, 2, &[5., 0., 0., 0.25, 0., 0., 0., 0.]);
        let v = polar_factor(&w).unwrap();
        let expected = mat(4, 2, &[1., 0., 0., 1., 0., 0., 0., 0.]);
        assert!((v - expected).norm() < 1e-12);
    }

    #[test]
    fn polar_factor_zero_and_rank_deficient() {
        let v = polar_factor(&DMatrix::zeros(4, 2)).unwrap();
        assert!(orthonormality_defect(&v) < 1e-12);

        // Rank-1 W in a 4x3 slot: output must still be orthonormal.
        let w = mat(4, 3, &[1., 2., 3., 2., 4., 6., -1., -2., -3., 0., 0., 0.]);
        let v = polar_factor(&w).unwrap();
        assert!(orthonormality_defect(&v) < 1e-10);
    }

    #[test]
    fn polar_factor_maximizes_trace_monte_carlo() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let w = DMatrix::from_fn(5, 3, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let v = polar_factor(&w).unwrap();
        let best = (w.transpose() * &v).trace();
        let sum_sv: f64 = ThinSvd::new(&w).unwrap().d.iter().sum();
        assert!((best - sum_sv).abs() <= 1e-8 * sum_sv.max(1.0));
        for _ in 0..100 {
            let q0 = DMatrix::from_fn(5, 3, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let q = polar_factor(&q0).unwrap(); // random orthonormal candidate
            assert!((w.transpose() * q).trace() <= best + 1e-10);
        }
    }

    #[test]
    fn l21_and_row_norms() {
        let m = mat(2, 2, &[3., 4., 0., 0.]);
        assert_eq!(row_norms(&m), vec![5.0, 0.0]);
        assert_eq!(l21_norm(&m), 5.0);
    }
}
