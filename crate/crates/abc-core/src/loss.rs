//! Soft nearest neighbor, the symmetric correspondence (InfoNCE) loss, the
//! double-augmentation variant, and analytic gradients for all of them.
//!
//! Everything is computed with per-row max subtraction / log-sum-exp so no
//! intermediate overflows, and every public entry point surfaces a
//! numerical error instead of returning NaN.

use crate::error::{CoreError, Result};
use crate::metric::{similarity, similarity_grad, EmbeddingSet, SimilarityMetric, Temperature};
use ndarray::{Array1, Array2, ArrayView1};

/// Soft nearest neighbor of `u` in the set `v`.
///
/// Returns `(u_tilde, alpha)` where `alpha_j = softmax_j(s(u, v_j) / tau)`
/// and `u_tilde = sum_j alpha_j v_j`. The weights sum to one and are all
/// strictly positive.
pub fn soft_nearest_neighbor(
    u: ArrayView1<'_, f64>,
    v: &EmbeddingSet,
    metric: SimilarityMetric,
    tau: Temperature,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if u.len() != v.dim() {
        return Err(CoreError::Contract(format!(
            "query dimension {} does not match set dimension {}",
            u.len(),
            v.dim()
        )));
    }
    if metric == SimilarityMetric::Cosine {
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < crate::metric::COSINE_NORM_EPS {
            return Err(CoreError::Domain(
                "cosine similarity is undefined for the zero query".to_string(),
            ));
        }
        for (j, row) in v.matrix().rows().into_iter().enumerate() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < crate::metric::COSINE_NORM_EPS {
                return Err(CoreError::Domain(format!(
                    "cosine similarity is undefined for the zero vector (row {j})"
                )));
            }
        }
    }
    let logits: Array1<f64> =
        Array1::from_shape_fn(v.len(), |j| similarity(u, v.row(j), metric) / tau.get());
    let alpha = stable_softmax(logits.view());
    let mut u_tilde: Array1<f64> = Array1::zeros(v.dim());
    for j in 0..v.len() {
        u_tilde = u_tilde + &(&v.row(j).to_owned() * alpha[j]);
    }
    if !u_tilde.iter().all(|x| x.is_finite()) {
        return Err(CoreError::Numerical(
            "soft nearest neighbor produced non-finite values".to_string(),
        ));
    }
    Ok((u_tilde, alpha))
}

/// Directional correspondence loss `L(U, V)`:
///
/// `-1/n * sum_i log( exp(s(u_i, t_i)/tau) / sum_j exp(s(u_j, t_i)/tau) )`
///
/// where `t_i` is the soft nearest neighbor of `u_i` in `V`. Every summand
/// is nonnegative; the value is exactly zero for `n = 1`.
pub fn correspondence_loss(
    u: &EmbeddingSet,
    v: &EmbeddingSet,
    metric: SimilarityMetric,
    tau: Temperature,
) -> Result<f64> {
    directional_loss(u, u, v, metric, tau)
}

/// The full symmetric loss `L(U, V) + L(V, U)`.
pub fn abc_loss(
    u: &EmbeddingSet,
    v: &EmbeddingSet,
    metric: SimilarityMetric,
    tau: Temperature,
) -> Result<f64> {
    Ok(correspondence_loss(u, v, metric, tau)? + correspondence_loss(v, u, metric, tau)?)
}

/// Double-augmentation variant: the soft nearest neighbor is found with the
/// first augmentation's embeddings and the correspondence is scored with
/// the second's. `u1`/`u2` (and `v1`/`v2`) must be row-aligned: the same
/// set elements under two independent transform draws.
pub fn abc_loss_double_aug(
    u1: &EmbeddingSet,
    u2: &EmbeddingSet,
    v1: &EmbeddingSet,
    v2: &EmbeddingSet,
    metric: SimilarityMetric,
    tau: Temperature,
) -> Result<f64> {
    check_aligned(u1, u2, "U")?;
    check_aligned(v1, v2, "V")?;
    Ok(directional_loss(u1, u2, v1, metric, tau)? + directional_loss(v1, v2, u1, metric, tau)?)
}

/// Gradients of [`abc_loss`] with respect to both embedding sets.
#[derive(Debug, Clone)]
pub struct AbcGrads {
    pub loss: f64,
    pub d_u: Array2<f64>,
    pub d_v: Array2<f64>,
}

/// Gradients of [`abc_loss_double_aug`] with respect to all four sets.
#[derive(Debug, Clone)]
pub struct DoubleAugGrads {
    pub loss: f64,
    pub d_u1: Array2<f64>,
    pub d_u2: Array2<f64>,
    pub d_v1: Array2<f64>,
    pub d_v2: Array2<f64>,
}

/// [`abc_loss`] together with its analytic gradient. Gradients flow through
/// the soft nearest neighbor everywhere it appears (numerator and
/// denominator, both directions).
pub fn abc_loss_grad(
    u: &EmbeddingSet,
    v: &EmbeddingSet,
    metric: SimilarityMetric,
    tau: Temperature,
) -> Result<AbcGrads> {
    let fwd = directional_loss_grad(u, u, v, metric, tau)?;
    let rev = directional_loss_grad(v, v, u, metric, tau)?;
    let d_u = &fwd.d_attend + &fwd.d_score + &rev.d_keys;
    let d_v = &fwd.d_keys + &rev.d_attend + &rev.d_score;
    Ok(AbcGrads {
        loss: fwd.loss + rev.loss,
        d_u,
        d_v,
    })
}

/// [`abc_loss_double_aug`] together with its analytic gradient.
pub fn abc_loss_double_aug_grad(
    u1: &EmbeddingSet,
    u2: &EmbeddingSet,
    v1: &EmbeddingSet,
    v2: &EmbeddingSet,
    metric: SimilarityMetric,
    tau: Temperature,
) -> Result<DoubleAugGrads> {
    check_aligned(u1, u2, "U")?;
    check_aligned(v1, v2, "V")?;
    let fwd = directional_loss_grad(u1, u2, v1, metric, tau)?;
    let rev = directional_loss_grad(v1, v2, u1, metric, tau)?;
    Ok(DoubleAugGrads {
        loss: fwd.loss + rev.loss,
        d_u1: &fwd.d_attend + &rev.d_keys,
        d_u2: fwd.d_score,
        d_v1: &fwd.d_keys + &rev.d_attend,
        d_v2: rev.d_score,
    })
}

fn check_aligned(a: &EmbeddingSet, b: &EmbeddingSet, which: &str) -> Result<()> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(CoreError::Contract(format!(
            "augmentation pair for set {which} is misaligned: {}x{} vs {}x{}",
            a.len(),
            a.dim(),
            b.len(),
            b.dim()
        )));
    }
    Ok(())
}

/// One direction of the loss with distinct roles:
/// `attend` rows form the soft nearest neighbors in `keys`, `score` rows are
/// ranked against those neighbors. Plain losses pass `attend == score`.
fn directional_loss(
    attend: &EmbeddingSet,
    score: &EmbeddingSet,
    keys: &EmbeddingSet,
    metric: SimilarityMetric,
    tau: Temperature,
) -> Result<f64> {
    let parts = directional_forward(attend, score, keys, metric, tau)?;
    Ok(parts.loss)
}

struct DirectionalForward {
    loss: f64,
    /// n x m attention weights (softmax rows).
    alpha: Array2<f64>,
    /// n x dim soft nearest neighbors.
    neighbors: Array2<f64>,
    /// beta[j][i] = softmax over j of s(score_j, t_i)/tau for fixed i.
    beta: Array2<f64>,
}

fn directional_forward(
    attend: &EmbeddingSet,
    score: &EmbeddingSet,
    keys: &EmbeddingSet,
    metric: SimilarityMetric,
    tau: Temperature,
) -> Result<DirectionalForward> {
    if attend.dim() != keys.dim() || score.dim() != keys.dim() {
        return Err(CoreError::Contract(format!(
            "embedding dimensions differ: attend {} / score {} / keys {}",
            attend.dim(),
            score.dim(),
            keys.dim()
        )));
    }
    if attend.len() != score.len() {
        return Err(CoreError::Contract(format!(
            "attend/score row counts differ: {} vs {}",
            attend.len(),
            score.len()
        )));
    }
    if metric == SimilarityMetric::Cosine {
        for set in [attend, score, keys] {
            for (j, row) in set.matrix().rows().into_iter().enumerate() {
                let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n < crate::metric::COSINE_NORM_EPS {
                    return Err(CoreError::Domain(format!(
                        "cosine similarity is undefined for the zero vector (row {j})"
                    )));
                }
            }
        }
    }
    let n = attend.len();
    let m = keys.len();
    let dim = keys.dim();
    let inv_tau = 1.0 / tau.get();

    let mut alpha = Array2::zeros((n, m));
    let mut neighbors = Array2::zeros((n, dim));
    for i in 0..n {
        let logits =
            Array1::from_shape_fn(m, |j| similarity(attend.row(i), keys.row(j), metric) * inv_tau);
        let a = stable_softmax(logits.view());
        for j in 0..m {
            alpha[[i, j]] = a[j];
            for d in 0..dim {
                neighbors[[i, d]] += a[j] * keys.matrix()[[j, d]];
            }
        }
    }

    // scores[j][i] = s(score_j, t_i)/tau; softmax over j for each column i.
    let mut scores = Array2::zeros((n, n));
    for j in 0..n {
        for i in 0..n {
            scores[[j, i]] = similarity(score.row(j), neighbors.row(i), metric) * inv_tau;
        }
    }
    let mut beta = Array2::zeros((n, n));
    let mut loss = 0.0;
    for i in 0..n {
        let col = scores.column(i);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = col.iter().map(|&x| (x - max).exp()).sum();
        let lse = max + sum_exp.ln();
        for j in 0..n {
            beta[[j, i]] = (scores[[j, i]] - lse).exp();
        }
        loss -= scores[[i, i]] - lse;
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(CoreError::Numerical(format!(
            "correspondence loss is non-finite ({loss})"
        )));
    }
    Ok(DirectionalForward {
        loss,
        alpha,
        neighbors,
        beta,
    })
}

struct DirectionalGrads {
    loss: f64,
    d_attend: Array2<f64>,
    d_score: Array2<f64>,
    d_keys: Array2<f64>,
}

fn directional_loss_grad(
    attend: &EmbeddingSet,
    score: &EmbeddingSet,
    keys: &EmbeddingSet,
    metric: SimilarityMetric,
    tau: Temperature,
) -> Result<DirectionalGrads> {
    let f = directional_forward(attend, score, keys, metric, tau)?;
    let n = attend.len();
    let m = keys.len();
    let dim = keys.dim();
    let inv_tau = 1.0 / tau.get();
    let inv_n = 1.0 / n as f64;

    let mut d_attend: Array2<f64> = Array2::zeros((n, dim));
    let mut d_score: Array2<f64> = Array2::zeros((n, dim));
    let mut d_keys: Array2<f64> = Array2::zeros((m, dim));
    let mut d_neighbors = Array2::<f64>::zeros((n, dim));

    // Through the InfoNCE scores: dL/dscores[j][i] = (beta[j][i] - delta_ji)/n.
    for i in 0..n {
        for j in 0..n {
            let mut g = f.beta[[j, i]] * inv_n;
            if i == j {
                g -= inv_n;
            }
            if g == 0.0 {
                continue;
            }
            let g = g * inv_tau;
            let (gs, gt) = similarity_grad(score.row(j), f.neighbors.row(i), metric);
            for d in 0..dim {
                d_score[[j, d]] += g * gs[d];
                d_neighbors[[i, d]] += g * gt[d];
            }
        }
    }

    // Through the soft nearest neighbors: t_i = sum_j alpha_ij k_j.
    for i in 0..n {
        // Direct term into the keys plus the softmax jacobian.
        let mut d_alpha = Array1::zeros(m);
        for j in 0..m {
            let mut dot = 0.0;
            for d in 0..dim {
                dot += d_neighbors[[i, d]] * keys.matrix()[[j, d]];
                d_keys[[j, d]] += f.alpha[[i, j]] * d_neighbors[[i, d]];
            }
            d_alpha[j] = dot;
        }
        let weighted: f64 = (0..m).map(|j| f.alpha[[i, j]] * d_alpha[j]).sum();
        for j in 0..m {
            let d_logit = f.alpha[[i, j]] * (d_alpha[j] - weighted);
            if d_logit == 0.0 {
                continue;
            }
            let g = d_logit * inv_tau;
            let (ga, gk) = similarity_grad(attend.row(i), keys.row(j), metric);
            for d in 0..dim {
                d_attend[[i, d]] += g * ga[d];
                d_keys[[j, d]] += g * gk[d];
            }
        }
    }

    for grad in [&d_attend, &d_score, &d_keys] {
        if !grad.iter().all(|x| x.is_finite()) {
            return Err(CoreError::Numerical(
                "loss gradient is non-finite".to_string(),
            ));
        }
    }
    Ok(DirectionalGrads {
        loss: f.loss,
        d_attend,
        d_score,
        d_keys,
    })
}

fn stable_softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Array1<f64> = logits.mapv(|x| (x - max).exp());
    let sum: f64 = exp.sum();
    exp.mapv(|x| x / sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tau(x: f64) -> Temperature {
        Temperature::new(x).unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> EmbeddingSet {
        let m = Array2::from_shape_fn((n, dim), |_| rng.gen_range(-2.0..2.0));
        EmbeddingSet::new(m).unwrap()
    }

    // ---- independent scalar oracles (no shared code with the kernels) ----

    fn sim_scalar(a: &[f64], b: &[f64], metric: SimilarityMetric) -> f64 {
        match metric {
            SimilarityMetric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                dot / (na * nb)
            }
            SimilarityMetric::NegativeEuclidean => {
                -a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            }
            SimilarityMetric::NegativeSquaredEuclidean => {
                -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            }
        }
    }

    fn soft_nn_scalar(
        u: &[f64],
        v: &[Vec<f64>],
        metric: SimilarityMetric,
        t: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let e: Vec<f64> = v.iter().map(|r| (sim_scalar(u, r, metric) / t).exp()).collect();
        let z: f64 = e.iter().sum();
        let alpha: Vec<f64> = e.iter().map(|x| x / z).collect();
        let dim = v[0].len();
        let mut tilde = vec![0.0; dim];
        for (j, row) in v.iter().enumerate() {
            for d in 0..dim {
                tilde[d] += alpha[j] * row[d];
            }
        }
        (tilde, alpha)
    }

    /// Direct evaluation of the directional loss with distinct attend/score
    /// roles; plain correspondence passes the same rows for both.
    fn directional_scalar(
        attend: &[Vec<f64>],
        score: &[Vec<f64>],
        keys: &[Vec<f64>],
        metric: SimilarityMetric,
        t: f64,
    ) -> f64 {
        let n = attend.len();
        let mut total = 0.0;
        for i in 0..n {
            let (tilde, _) = soft_nn_scalar(&attend[i], keys, metric, t);
            let num = (sim_scalar(&score[i], &tilde, metric) / t).exp();
            let den: f64 = (0..n)
                .map(|j| (sim_scalar(&score[j], &tilde, metric) / t).exp())
                .sum();
            total -= (num / den).ln();
        }
        total / n as f64
    }

    fn rows_of(set: &EmbeddingSet) -> Vec<Vec<f64>> {
        set.matrix().rows().into_iter().map(|r| r.to_vec()).collect()
    }

    // ---- soft nearest neighbor ----

    #[test]
    fn single_candidate_returns_it_exactly() {
        let v = EmbeddingSet::new(array![[3.0, -1.0]]).unwrap();
        let u = array![100.0, 100.0];
        let (tilde, alpha) =
            soft_nearest_neighbor(u.view(), &v, SimilarityMetric::NegativeEuclidean, tau(0.3))
                .unwrap();
        assert_eq!(alpha.to_vec(), vec![1.0]);
        assert_eq!(tilde.to_vec(), vec![3.0, -1.0]);
    }

    #[test]
    fn equidistant_candidates_give_uniform_weights_and_mean() {
        let v = EmbeddingSet::new(array![[-1.0], [1.0]]).unwrap();
        let u = array![0.0];
        let (tilde, alpha) = soft_nearest_neighbor(
            u.view(),
            &v,
            SimilarityMetric::NegativeSquaredEuclidean,
            tau(1.0),
        )
        .unwrap();
        assert_abs_diff_eq!(alpha[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(alpha[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(tilde[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn one_dimensional_example_matches_direct_evaluation() {
        let v = EmbeddingSet::new(array![[0.0], [1.0], [2.0]]).unwrap();
        let u = array![0.5];
        let (tilde, alpha) = soft_nearest_neighbor(
            u.view(),
            &v,
            SimilarityMetric::NegativeSquaredEuclidean,
            tau(1.0),
        )
        .unwrap();
        // Independent scalar evaluation.
        let (otilde, oalpha) = soft_nn_scalar(
            &[0.5],
            &[vec![0.0], vec![1.0], vec![2.0]],
            SimilarityMetric::NegativeSquaredEuclidean,
            1.0,
        );
        for j in 0..3 {
            assert_abs_diff_eq!(alpha[j], oalpha[j], epsilon = 1e-14);
        }
        assert_abs_diff_eq!(tilde[0], otilde[0], epsilon = 1e-14);
        // Frozen values.
        assert_abs_diff_eq!(alpha[0], 0.468, epsilon = 1e-3);
        assert_abs_diff_eq!(alpha[1], 0.468, epsilon = 1e-3);
        assert_abs_diff_eq!(alpha[2], 0.063, epsilon = 1e-3);
        assert_abs_diff_eq!(tilde[0], 0.595, epsilon = 1e-3);
    }

    #[test]
    fn weights_sum_to_one_and_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for metric in [
            SimilarityMetric::Cosine,
            SimilarityMetric::NegativeEuclidean,
            SimilarityMetric::NegativeSquaredEuclidean,
        ] {
            let v = random_set(&mut rng, 7, 4);
            let u = Array1::from_shape_fn(4, |_| rng.gen_range(-2.0..2.0));
            let (_, alpha) = soft_nearest_neighbor(u.view(), &v, metric, tau(0.7)).unwrap();
            assert_abs_diff_eq!(alpha.sum(), 1.0, epsilon = 1e-12);
            assert!(alpha.iter().all(|&a| a > 0.0));
        }
    }

    #[test]
    fn permuting_candidates_permutes_weights_and_preserves_neighbor() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_set(&mut rng, 5, 3);
        let u = Array1::from_shape_fn(3, |_| rng.gen_range(-1.0..1.0));
        let perm = [3usize, 0, 4, 1, 2];
        let permuted = EmbeddingSet::new(Array2::from_shape_fn((5, 3), |(i, d)| {
            v.matrix()[[perm[i], d]]
        }))
        .unwrap();
        let (t1, a1) =
            soft_nearest_neighbor(u.view(), &v, SimilarityMetric::NegativeEuclidean, tau(0.5))
                .unwrap();
        let (t2, a2) = soft_nearest_neighbor(
            u.view(),
            &permuted,
            SimilarityMetric::NegativeEuclidean,
            tau(0.5),
        )
        .unwrap();
        for d in 0..3 {
            assert_abs_diff_eq!(t1[d], t2[d], epsilon = 1e-12);
        }
        for i in 0..5 {
            assert_abs_diff_eq!(a2[i], a1[perm[i]], epsilon = 1e-12);
        }
    }

    // ---- correspondence loss ----

    #[test]
    fn single_element_loss_is_exactly_zero() {
        let u = EmbeddingSet::new(array![[0.3, -0.8]]).unwrap();
        let v = EmbeddingSet::new(array![[5.0, 2.0], [1.0, 1.0]]).unwrap();
        let l = correspondence_loss(&u, &v, SimilarityMetric::NegativeSquaredEuclidean, tau(1.0))
            .unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn identical_rows_give_log_n() {
        for n in [2usize, 3, 5] {
            let row = vec![0.2, -1.4, 0.7];
            let u = EmbeddingSet::from_rows(&vec![row.clone(); n]).unwrap();
            let v = EmbeddingSet::from_rows(&vec![row.clone(); n]).unwrap();
            let l =
                correspondence_loss(&u, &v, SimilarityMetric::NegativeSquaredEuclidean, tau(1.0))
                    .unwrap();
            assert_abs_diff_eq!(l, (n as f64).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn cosine_case_matches_scalar_oracle() {
        let norm = |x: f64, y: f64| {
            let n = (x * x + y * y).sqrt();
            vec![x / n, y / n]
        };
        let u_rows = vec![norm(1.0, 0.0), norm(0.0, 1.0)];
        let v_rows = vec![norm(0.9, 0.1), norm(0.1, 0.9)];
        let u = EmbeddingSet::from_rows(&u_rows).unwrap();
        let v = EmbeddingSet::from_rows(&v_rows).unwrap();
        let l = correspondence_loss(&u, &v, SimilarityMetric::Cosine, tau(0.1)).unwrap();
        let oracle = directional_scalar(&u_rows, &u_rows, &v_rows, SimilarityMetric::Cosine, 0.1);
        assert_abs_diff_eq!(l, oracle, epsilon = 1e-12);
    }

    #[test]
    fn random_cases_match_scalar_oracle_for_all_metrics() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for metric in [
            SimilarityMetric::Cosine,
            SimilarityMetric::NegativeEuclidean,
            SimilarityMetric::NegativeSquaredEuclidean,
        ] {
            for _ in 0..5 {
                let u = random_set(&mut rng, 4, 3);
                let v = random_set(&mut rng, 6, 3);
                let l = correspondence_loss(&u, &v, metric, tau(0.8)).unwrap();
                let oracle =
                    directional_scalar(&rows_of(&u), &rows_of(&u), &rows_of(&v), metric, 0.8);
                assert_abs_diff_eq!(l, oracle, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn loss_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let u = random_set(&mut rng, 5, 4);
            let v = random_set(&mut rng, 5, 4);
            let l = correspondence_loss(&u, &v, SimilarityMetric::NegativeEuclidean, tau(0.5))
                .unwrap();
            assert!(l >= 0.0, "loss {l} should be nonnegative");
        }
    }

    #[test]
    fn well_separated_bijection_drives_loss_to_zero_as_tau_shrinks() {
        // Embeddings spaced far apart with an exact match in the other set:
        // each softmax concentrates on the matching index.
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![10.0 * i as f64, 0.0]).collect();
        let u = EmbeddingSet::from_rows(&rows).unwrap();
        let v = EmbeddingSet::from_rows(&rows).unwrap();
        let l = abc_loss(&u, &v, SimilarityMetric::NegativeEuclidean, tau(1e-3)).unwrap();
        assert!(l.abs() < 1e-6, "expected near-zero loss, got {l}");
    }

    // ---- full symmetric loss ----

    #[test]
    fn identical_constant_sets_give_two_log_n() {
        for n in [2usize, 4, 8] {
            let rows = vec![vec![0.5, 0.5]; n];
            let u = EmbeddingSet::from_rows(&rows).unwrap();
            let v = EmbeddingSet::from_rows(&rows).unwrap();
            let l = abc_loss(&u, &v, SimilarityMetric::NegativeSquaredEuclidean, tau(1.0)).unwrap();
            assert_abs_diff_eq!(l, 2.0 * (n as f64).ln(), epsilon = 1e-9);
        }
    }

    #[test]
    fn swapping_sets_leaves_value_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let u = random_set(&mut rng, 5, 4);
        let v = random_set(&mut rng, 4, 4);
        let a = abc_loss(&u, &v, SimilarityMetric::NegativeEuclidean, tau(0.9)).unwrap();
        let b = abc_loss(&v, &u, SimilarityMetric::NegativeEuclidean, tau(0.9)).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn equals_sum_of_directional_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let u = random_set(&mut rng, 5, 4);
        let v = random_set(&mut rng, 4, 4);
        let metric = SimilarityMetric::NegativeSquaredEuclidean;
        let total = abc_loss(&u, &v, metric, tau(0.7)).unwrap();
        let parts = correspondence_loss(&u, &v, metric, tau(0.7)).unwrap()
            + correspondence_loss(&v, &u, metric, tau(0.7)).unwrap();
        assert_abs_diff_eq!(total, parts, epsilon = 1e-12);
    }

    #[test]
    fn joint_row_permutation_leaves_loss_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let u = random_set(&mut rng, 5, 3);
        let v = random_set(&mut rng, 5, 3);
        let perm = [4usize, 2, 0, 3, 1];
        let permute = |s: &EmbeddingSet| {
            EmbeddingSet::new(Array2::from_shape_fn((5, 3), |(i, d)| {
                s.matrix()[[perm[i], d]]
            }))
            .unwrap()
        };
        let metric = SimilarityMetric::NegativeEuclidean;
        let a = abc_loss(&u, &v, metric, tau(0.6)).unwrap();
        let b = abc_loss(&permute(&u), &permute(&v), metric, tau(0.6)).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }

    #[test]
    fn scale_and_temperature_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let u = random_set(&mut rng, 4, 3);
        let v = random_set(&mut rng, 5, 3);
        let c = 3.7;
        let scale = |s: &EmbeddingSet| EmbeddingSet::new(s.matrix() * c).unwrap();

        // Negative Euclidean: scaling embeddings by c and tau by c.
        let a = abc_loss(&u, &v, SimilarityMetric::NegativeEuclidean, tau(0.8)).unwrap();
        let b = abc_loss(
            &scale(&u),
            &scale(&v),
            SimilarityMetric::NegativeEuclidean,
            tau(0.8 * c),
        )
        .unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);

        // Negative squared Euclidean: scaling tau by c^2.
        let a = abc_loss(&u, &v, SimilarityMetric::NegativeSquaredEuclidean, tau(0.8)).unwrap();
        let b = abc_loss(
            &scale(&u),
            &scale(&v),
            SimilarityMetric::NegativeSquaredEuclidean,
            tau(0.8 * c * c),
        )
        .unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }

    // ---- double augmentation ----

    #[test]
    fn identity_transforms_reduce_to_plain_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for metric in [
            SimilarityMetric::Cosine,
            SimilarityMetric::NegativeEuclidean,
            SimilarityMetric::NegativeSquaredEuclidean,
        ] {
            let u = random_set(&mut rng, 4, 3);
            let v = random_set(&mut rng, 5, 3);
            let plain = abc_loss(&u, &v, metric, tau(0.4)).unwrap();
            let doubled = abc_loss_double_aug(&u, &u, &v, &v, metric, tau(0.4)).unwrap();
            assert_abs_diff_eq!(plain, doubled, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_element_double_aug_is_zero() {
        let u1 = EmbeddingSet::new(array![[1.0, 2.0]]).unwrap();
        let u2 = EmbeddingSet::new(array![[1.1, 2.1]]).unwrap();
        let v1 = EmbeddingSet::new(array![[0.0, 1.0]]).unwrap();
        let v2 = EmbeddingSet::new(array![[0.2, 0.8]]).unwrap();
        let l = abc_loss_double_aug(
            &u1,
            &u2,
            &v1,
            &v2,
            SimilarityMetric::NegativeSquaredEuclidean,
            tau(1.0),
        )
        .unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn double_aug_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for metric in [
            SimilarityMetric::Cosine,
            SimilarityMetric::NegativeEuclidean,
            SimilarityMetric::NegativeSquaredEuclidean,
        ] {
            let u1 = random_set(&mut rng, 4, 3);
            let u2 = random_set(&mut rng, 4, 3);
            let v1 = random_set(&mut rng, 5, 3);
            let v2 = random_set(&mut rng, 5, 3);
            let l = abc_loss_double_aug(&u1, &u2, &v1, &v2, metric, tau(0.6)).unwrap();
            let oracle = directional_scalar(
                &rows_of(&u1),
                &rows_of(&u2),
                &rows_of(&v1),
                metric,
                0.6,
            ) + directional_scalar(
                &rows_of(&v1),
                &rows_of(&v2),
                &rows_of(&u1),
                metric,
                0.6,
            );
            assert_abs_diff_eq!(l, oracle, epsilon = 1e-10);
        }
    }

    #[test]
    fn misaligned_pairs_are_contract_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let u1 = random_set(&mut rng, 4, 3);
        let u2 = random_set(&mut rng, 3, 3);
        let v = random_set(&mut rng, 5, 3);
        let err = abc_loss_double_aug(
            &u1,
            &u2,
            &v,
            &v,
            SimilarityMetric::NegativeEuclidean,
            tau(1.0),
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Contract(_)));
    }

    // ---- gradients agree with forward values ----

    #[test]
    fn grad_entry_points_report_same_loss_as_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let u = random_set(&mut rng, 4, 3);
        let v = random_set(&mut rng, 5, 3);
        let metric = SimilarityMetric::NegativeSquaredEuclidean;
        let g = abc_loss_grad(&u, &v, metric, tau(0.9)).unwrap();
        let f = abc_loss(&u, &v, metric, tau(0.9)).unwrap();
        assert_abs_diff_eq!(g.loss, f, epsilon = 1e-12);

        let u2 = random_set(&mut rng, 4, 3);
        let v2 = random_set(&mut rng, 5, 3);
        let g = abc_loss_double_aug_grad(&u, &u2, &v, &v2, metric, tau(0.9)).unwrap();
        let f = abc_loss_double_aug(&u, &u2, &v, &v2, metric, tau(0.9)).unwrap();
        assert_abs_diff_eq!(g.loss, f, epsilon = 1e-12);
    }
}
