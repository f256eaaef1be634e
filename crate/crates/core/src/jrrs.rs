//! Joint rank and row selection: the dimension-adaptive penalty
//!
//! ```text
//!   pen(B) = c sigma^2 r(B) { 2n + log(2e) |J(B)| + |J(B)| log(e p / |J(B)|) }
//! ```
//!
//! evaluated on (rank, support-size) pairs, penalty-based selection from a
//! candidate list, and exhaustive minimization of rss + pen over every
//! support and rank for small p.

use crate::error::{Error, Result};
use crate::rank_selection;
use crate::types::{
    CoefficientEstimate, FitConfig, FitReport, MethodTag, PenaltySpec, RegressionData,
};
use rayon::prelude::*;
use std::cmp::Ordering;
use std::f64::consts::E;

/// Largest p accepted by the exhaustive enumerator by default.
pub const DEFAULT_P_CAP: usize = 20;

/// Score audit record: total = rss + penalty at the recorded (rank, |J|).
#[derive(Debug, Clone)]
pub struct JrrsScore {
    pub rss: f64,
    pub penalty: f64,
    pub total: f64,
    pub r_used: usize,
    pub j_used: usize,
}

/// The penalty at rank r and support size j for an n-response, p-predictor
/// problem; zero iff r = 0.
pub fn jrrs_penalty(r: usize, j: usize, n: usize, p: usize, spec: &PenaltySpec) -> Result<f64> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput("need n >= 1 and p >= 1".into()));
    }
    if j > p {
        return Err(Error::InvalidInput(format!("support size {j} exceeds p = {p}")));
    }
    if j == 0 {
        if r > 0 {
            return Err(Error::InvalidInput(format!(
                "rank {r} is impossible with an empty support"
            )));
        }
        return Ok(0.0);
    }
    if r > j.min(n) {
        return Err(Error::InvalidInput(format!(
            "rank {r} exceeds min(|J|, n) = {}",
            j.min(n)
        )));
    }
    if r == 0 {
        return Ok(0.0);
    }
    let (rf, jf, nf, pf) = (r as f64, j as f64, n as f64, p as f64);
    Ok(spec.c * spec.sigma2 * rf * (2.0 * nf + (2.0 * E).ln() * jf + jf * (E * pf / jf).ln()))
}

fn score_estimate(
    est: &CoefficientEstimate,
    data: &RegressionData,
    spec: &PenaltySpec,
) -> Result<JrrsScore> {
    if est.b().nrows() != data.p() || est.b().ncols() != data.n() {
        return Err(Error::InvalidInput(format!(
            "candidate is {}x{} but data needs {}x{}",
            est.b().nrows(),
            est.b().ncols(),
            data.p(),
            data.n()
        )));
    }
    let rss = (data.y() - data.x() * est.b()).norm_squared();
    let j_used = est.support_size();
    // The recorded rank can exceed min(|J|, n) only in tolerance corner
    // cases (a row just below support_tol still contributing to the
    // numerical rank); clamp so the penalty stays defined.
    let r_used = est.rank().min(j_used.min(data.n()));
    let penalty = jrrs_penalty(r_used, j_used, data.n(), data.p(), spec)?;
    let total = rss + penalty;
    if !total.is_finite() {
        return Err(Error::NumericalFailure("non-finite selection score".into()));
    }
    Ok(JrrsScore { rss, penalty, total, r_used, j_used })
}

/// Winner of a penalty-based selection plus the full score list for audit.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub winner_index: usize,
    pub winner: CoefficientEstimate,
    pub scores: Vec<JrrsScore>,
}

/// Pick the candidate minimizing rss + penalty; ties break toward smaller
/// rank, then smaller support, then the earliest index.
pub fn select_from_candidates(
    candidates: &[CoefficientEstimate],
    data: &RegressionData,
    spec: &PenaltySpec,
) -> Result<SelectionOutcome> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("candidate list is empty".into()));
    }
    let scores: Vec<JrrsScore> = candidates
        .iter()
        .map(|est| score_estimate(est, data, spec))
        .collect::<Result<_>>()?;
    let mut winner_index = 0usize;
    for i in 1..scores.len() {
        let (a, b) = (&scores[i], &scores[winner_index]);
        let better = match a.total.partial_cmp(&b.total) {
            Some(Ordering::Less) => true,
            Some(Ordering::Greater) | None => false,
            Some(Ordering::Equal) => (a.r_used, a.j_used) < (b.r_used, b.j_used),
        };
        if better {
            winner_index = i;
        }
    }
    Ok(SelectionOutcome {
        winner_index,
        winner: candidates[winner_index].clone(),
        scores,
    })
}

fn next_combination(idx: &mut [usize], p: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < p - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// All supports of {0..p-1} ordered by cardinality, lexicographic within.
fn enumerate_supports(p: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for card in 1..=p {
        let mut idx: Vec<usize> = (0..card).collect();
        loop {
            out.push(idx.clone());
            if !next_combination(&mut idx, p) {
                break;
            }
        }
    }
    out
}

struct BestCell {
    total: f64,
    support: Vec<usize>,
    k: usize,
}

/// Minimize ||Y - XB||_F^2 + pen(B) exactly by sweeping every support J and
/// every rank 1 <= k <= min(|J|, n, rank(X_J)); for each cell the optimal B
/// is the rank-k least-squares fit restricted to J. Ties resolve to the
/// earliest cell in enumeration order (supports by cardinality then
/// lexicographic, k ascending). Refuses p > p_cap.
pub fn fit_jrrs_exhaustive(
    data: &RegressionData,
    spec: &PenaltySpec,
    p_cap: usize,
) -> Result<FitReport> {
    let p = data.p();
    if p > p_cap {
        return Err(Error::RefusedTooLarge(format!(
            "exhaustive search over 2^{p} supports refused (cap p <= {p_cap}); use the composed estimators instead"
        )));
    }
    let n = data.n();
    let y_norm_sq = data.y().norm_squared();

    let supports = enumerate_supports(p);
    // Each support is independent; evaluate concurrently and reduce in
    // enumeration order so the tie-break is deterministic.
    let per_support: Vec<Result<BestCell>> = supports
        .into_par_iter()
        .map(|support| {
            if support.is_empty() {
                return Ok(BestCell { total: y_norm_sq, support, k: 0 });
            }
            let restricted = data.restrict_columns(&support)?;
            let k_max = support.len().min(n).min(restricted.q());
            let mut best: Option<BestCell> = None;
            for k in 1..=k_max {
                let b_sub = rank_selection::rrr_core(&restricted, k)?;
                let rss = (restricted.y() - restricted.x() * &b_sub).norm_squared();
                let penalty = jrrs_penalty(k, support.len(), n, p, spec)?;
                let total = rss + penalty;
                if !total.is_finite() {
                    return Err(Error::NumericalFailure("non-finite enumeration score".into()));
                }
                if best.as_ref().map_or(true, |b| total < b.total) {
                    best = Some(BestCell { total, support: support.clone(), k });
                }
            }
            // k_max = 0 (zero design block) leaves only the unfitted cell,
            // which the empty support already covers at equal rss; skip it.
            Ok(best.unwrap_or(BestCell { total: y_norm_sq, support, k: 0 }))
        })
        .collect();

    let mut winner: Option<BestCell> = None;
    for cell in per_support {
        let cell = cell?;
        if winner.as_ref().map_or(true, |w| cell.total < w.total) {
            winner = Some(cell);
        }
    }
    let winner = winner.expect("at least the empty support was enumerated");

    let config = FitConfig::default();
    let estimate = if winner.k == 0 {
        CoefficientEstimate::zero(p, n, MethodTag::Jrrs1, config.support_tol, data.rank_tol())
    } else {
        rank_selection::rrr_fit(data, winner.k, Some(&winner.support))?.with_tag(MethodTag::Jrrs1)
    };
    Ok(FitReport {
        estimate,
        objective_trace: vec![winner.total],
        iterations: 0,
        converged: true,
        lambda_used: None,
        k_used: Some(winner.k),
        selection_score: Some(winner.total),
        warning: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ThinSvd;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
    }

    fn spec(c: f64, s2: f64) -> PenaltySpec {
        PenaltySpec::new(c, s2).unwrap()
    }

    #[test]
    fn penalty_zero_rank_is_zero() {
        let sp = spec(3.0, 1.0);
        assert_eq!(jrrs_penalty(0, 0, 5, 10, &sp).unwrap(), 0.0);
        assert_eq!(jrrs_penalty(0, 4, 5, 10, &sp).unwrap(), 0.0);
    }

    #[test]
    fn penalty_frozen_value() {
        // r=1, j=1, n=2, p=10, c=3, sigma2=1:
        // 3 * (4 + ln(2e) + ln(10e)) = 26.987196820661973
        let got = jrrs_penalty(1, 1, 2, 10, &spec(3.0, 1.0)).unwrap();
        assert!((got - 26.987196820661973).abs() < 1e-12, "{got}");
    }

    #[test]
    fn penalty_monotone_in_rank_and_support() {
        let sp = spec(3.0, 1.0);
        let (n, p) = (6usize, 12usize);
        for j in 1..=p {
            let mut prev = 0.0;
            for r in 1..=j.min(n) {
                let v = jrrs_penalty(r, j, n, p, &sp).unwrap();
                assert!(v > prev, "r = {r}, j = {j}");
                prev = v;
            }
        }
        for r in 1..=n {
            let mut prev = 0.0;
            for j in r..=p {
                let v = jrrs_penalty(r, j, n, p, &sp).unwrap();
                assert!(v > prev, "r = {r}, j = {j}");
                prev = v;
            }
        }
    }

    #[test]
    fn penalty_rejects_impossible_shapes() {
        let sp = spec(3.0, 1.0);
        assert!(jrrs_penalty(2, 1, 5, 10, &sp).is_err()); // r > |J|
        assert!(jrrs_penalty(3, 5, 2, 10, &sp).is_err()); // r > n
        assert!(jrrs_penalty(1, 0, 5, 10, &sp).is_err()); // rank without support
        assert!(jrrs_penalty(1, 11, 5, 10, &sp).is_err()); // |J| > p
    }

    #[test]
    fn penalty_superadditive_support_term() {
        // f(x) = x log(2e) + x log(ep/x) satisfies
        // f(x+y) >= x + y + x log(ep/x) + y log(ep/y).
        let p = 12usize;
        let f = |x: f64| x * (2.0 * E).ln() + x * (E * p as f64 / x).ln();
        for x in 1..=p {
            for y in 1..=(p - x).max(1) {
                if x + y > p {
                    continue;
                }
                let (xf, yf) = (x as f64, y as f64);
                let lhs = f(xf + yf);
                let rhs =
                    xf + yf + xf * (E * p as f64 / xf).ln() + yf * (E * p as f64 / yf).ln();
                assert!(lhs >= rhs - 1e-12, "x = {x}, y = {y}: {lhs} < {rhs}");
            }
        }
    }

    #[test]
    fn singleton_candidate_wins_by_default() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_mat(&mut rng, 8, 4);
        let y = rand_mat(&mut rng, 8, 3);
        let data = RegressionData::new(x, y, 1e-8).unwrap();
        let est = rank_selection::rrr_fit(&data, 2, None).unwrap();
        let out = select_from_candidates(std::slice::from_ref(&est), &data, &spec(3.0, 1.0)).unwrap();
        assert_eq!(out.winner_index, 0);
        assert_eq!(out.scores.len(), 1);
        assert!((out.winner.b() - est.b()).norm() == 0.0);
    }

    #[test]
    fn zero_beats_ols_on_pure_noise_with_large_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_mat(&mut rng, 10, 3);
        let y = rand_mat(&mut rng, 10, 2);
        let data = RegressionData::new(x.clone(), y.clone(), 1e-8).unwrap();
        let zero = CoefficientEstimate::zero(3, 2, MethodTag::OlsRestricted, 1e-8, 1e-8);
        let ols = rank_selection::rrr_fit(&data, data.q().min(data.n()), None).unwrap();
        let sp = spec(1000.0, 1.0);
        let out = select_from_candidates(&[zero, ols], &data, &sp).unwrap();
        // Check the inequality the selection rests on, then the selection.
        assert!(out.scores[0].total < out.scores[1].total);
        assert_eq!(out.winner_index, 0);
        assert_eq!(out.scores[0].penalty, 0.0);
        assert!((out.scores[0].rss - y.norm_squared()).abs() < 1e-10);
    }

    #[test]
    fn selection_invariant_under_permutation_and_duplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_mat(&mut rng, 10, 5);
        let y = rand_mat(&mut rng, 10, 4);
        let data = RegressionData::new(x, y, 1e-8).unwrap();
        let sp = spec(3.0, 0.05);
        let cands: Vec<_> = (1..=3)
            .map(|k| rank_selection::rrr_fit(&data, k, None).unwrap())
            .collect();
        let base = select_from_candidates(&cands, &data, &sp).unwrap();
        let reversed: Vec<_> = cands.iter().rev().cloned().collect();
        let rev = select_from_candidates(&reversed, &data, &sp).unwrap();
        assert_eq!(base.winner.b(), rev.winner.b());
        // Duplicating the winner keeps the earliest occurrence.
        let mut dup = vec![cands[base.winner_index].clone()];
        dup.extend(cands.iter().cloned());
        let out = select_from_candidates(&dup, &data, &sp).unwrap();
        assert_eq!(out.winner_index, 0);
    }

    #[test]
    fn exhaustive_pure_noise_returns_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_mat(&mut rng, 12, 4);
        let y = rand_mat(&mut rng, 12, 2);
        let data = RegressionData::new(x, y, 1e-8).unwrap();
        let report = fit_jrrs_exhaustive(&data, &spec(1000.0, 1.0), DEFAULT_P_CAP).unwrap();
        assert_eq!(report.estimate.rank(), 0);
        assert!(report.estimate.b().iter().all(|&v| v == 0.0));
        assert_eq!(report.selection_score, Some(data.y().norm_squared()));
    }

    #[test]
    fn exhaustive_recovers_planted_support_and_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_mat(&mut rng, 15, 6);
        let mut a = DMatrix::zeros(6, 4);
        let left = rand_mat(&mut rng, 2, 1);
        let right = rand_mat(&mut rng, 1, 4);
        let block = left * right * 3.0;
        a.row_mut(1).copy_from(&block.row(0));
        a.row_mut(4).copy_from(&block.row(1));
        let y = &x * &a;
        let data = RegressionData::new(x, y, 1e-8).unwrap();
        let report = fit_jrrs_exhaustive(&data, &spec(3.0, 1e-6), DEFAULT_P_CAP).unwrap();
        assert_eq!(report.estimate.support(), &[1, 4]);
        assert_eq!(report.estimate.rank(), 1);
        let rss = (data.y() - data.x() * report.estimate.b()).norm_squared();
        assert!(rss < 1e-16 * (1.0 + data.y().norm_squared()));
    }

    #[test]
    fn exhaustive_refuses_above_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_mat(&mut rng, 8, 5);
        let y = rand_mat(&mut rng, 8, 2);
        let data = RegressionData::new(x, y, 1e-8).unwrap();
        assert!(matches!(
            fit_jrrs_exhaustive(&data, &spec(3.0, 1.0), 4),
            Err(Error::RefusedTooLarge(_))
        ));
    }

    /// Independent enumerator: bitmask supports, projector built from a
    /// fresh SVD per support, rss from the Pythagoras + tail-of-spectrum
    /// identity instead of an explicit fit.
    fn oracle_exhaustive(
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        sp: &PenaltySpec,
    ) -> (Vec<usize>, usize, f64) {
        let p = x.ncols();
        let n = y.ncols();
        let y2 = y.norm_squared();
        let mut best: Option<(f64, usize, usize, Vec<usize>, usize)> = None; // total, r, j, support, k
        let mut consider = |total: f64, r: usize, j: usize, support: Vec<usize>, k: usize| {
            let better = match &best {
                None => true,
                Some((t, br, bj, _, _)) => {
                    total < *t || (total == *t && (r, j) < (*br, *bj))
                }
            };
            if better {
                best = Some((total, r, j, support, k));
            }
        };
        consider(y2, 0, 0, Vec::new(), 0);
        for mask in 1u32..(1 << p) {
            let support: Vec<usize> = (0..p).filter(|i| mask & (1 << i) != 0).collect();
            let j = support.len();
            let mut xj = DMatrix::zeros(x.nrows(), j);
            for (c, &col) in support.iter().enumerate() {
                xj.set_column(c, &x.column(col));
            }
            let svd = ThinSvd::new(&xj).unwrap();
            let qj = svd.rank(1e-8);
            if qj == 0 {
                continue;
            }
            let uq = svd.u.columns(0, qj);
            let py = &uq * (uq.transpose() * y);
            let d = ThinSvd::new(&py).unwrap().d;
            let py2 = py.norm_squared();
            for k in 1..=j.min(n).min(qj) {
                let tail: f64 = d[k..].iter().map(|v| v * v).sum();
                let rss = y2 - py2 + tail;
                let pen = jrrs_penalty(k, j, n, p, sp).unwrap();
                consider(rss + pen, k, j, support.clone(), k);
            }
        }
        let (total, _, _, support, k) = best.unwrap();
        (support, k, total)
    }

    #[test]
    fn exhaustive_matches_independent_enumerator() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for trial in 0..5 {
            let x = rand_mat(&mut rng, 10, 4);
            let y = rand_mat(&mut rng, 10, 2);
            let data = RegressionData::new(x.clone(), y.clone(), 1e-8).unwrap();
            let sp = spec(3.0, 0.02 + 0.05 * trial as f64);
            let report = fit_jrrs_exhaustive(&data, &sp, DEFAULT_P_CAP).unwrap();
            let (support, k, total) = oracle_exhaustive(&x, &y, &sp);
            assert_eq!(report.estimate.support(), &support[..], "trial {trial}");
            assert_eq!(report.k_used, Some(k), "trial {trial}");
            let got = report.selection_score.unwrap();
            assert!(
                (got - total).abs() <= 1e-8 * (1.0 + total.abs()),
                "trial {trial}: {got} vs {total}"
            );
        }
    }
}
