//! Per-class nearest-neighbor retrieval over a labeled gallery.

use crate::error::{CoreError, Result};
use crate::metric::{similarity, SimilarityMetric};
use ndarray::{Array2, ArrayView1};
use std::collections::BTreeMap;

/// For every class present in the gallery, the gallery row index of the
/// most similar element. Ties break toward the lowest index.
pub fn retrieve_per_class(
    query: ArrayView1<'_, f64>,
    gallery: &Array2<f64>,
    labels: &[usize],
    metric: SimilarityMetric,
) -> Result<BTreeMap<usize, usize>> {
    if gallery.nrows() == 0 {
        return Err(CoreError::Contract("empty gallery".to_string()));
    }
    if labels.len() != gallery.nrows() {
        return Err(CoreError::Contract(format!(
            "{} labels for {} gallery rows",
            labels.len(),
            gallery.nrows()
        )));
    }
    let mut best: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (i, row) in gallery.rows().into_iter().enumerate() {
        let s = similarity(query, row, metric);
        match best.get(&labels[i]) {
            Some(&(_, s_best)) if s <= s_best => {}
            _ => {
                best.insert(labels[i], (i, s));
            }
        }
    }
    Ok(best.into_iter().map(|(class, (i, _))| (class, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn query_in_gallery_retrieves_itself() {
        let gallery = array![[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]];
        let labels = vec![0, 0, 1];
        let out = retrieve_per_class(
            gallery.row(1),
            &gallery,
            &labels,
            SimilarityMetric::NegativeEuclidean,
        )
        .unwrap();
        assert_eq!(out[&0], 1);
    }

    #[test]
    fn picks_the_more_similar_of_two() {
        let gallery = array![[0.9f64, 0.1], [0.1, 0.9]];
        let labels = vec![5, 5];
        let query = array![1.0, 0.0];
        let out = retrieve_per_class(
            query.view(),
            &gallery,
            &labels,
            SimilarityMetric::Cosine,
        )
        .unwrap();
        assert_eq!(out[&5], 0);
    }

    #[test]
    fn ties_break_to_the_lowest_index() {
        let gallery = array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        let labels = vec![2, 2, 2];
        let query = array![1.0, 0.0];
        let out = retrieve_per_class(
            query.view(),
            &gallery,
            &labels,
            SimilarityMetric::NegativeSquaredEuclidean,
        )
        .unwrap();
        assert_eq!(out[&2], 0);
    }

    #[test]
    fn random_gallery_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 60;
        let gallery = Array2::from_shape_fn((n, 5), |_| rng.gen_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let query = ndarray::Array1::from_shape_fn(5, |_| rng.gen_range(-1.0..1.0));
        for metric in [
            SimilarityMetric::Cosine,
            SimilarityMetric::NegativeEuclidean,
            SimilarityMetric::NegativeSquaredEuclidean,
        ] {
            let out = retrieve_per_class(query.view(), &gallery, &labels, metric).unwrap();
            // Independent brute-force scan per class.
            for class in 0..4 {
                let mut best: Option<(usize, f64)> = None;
                for i in 0..n {
                    if labels[i] != class {
                        continue;
                    }
                    let s = similarity(query.view(), gallery.row(i), metric);
                    if best.map_or(true, |(_, bs)| s > bs) {
                        best = Some((i, s));
                    }
                }
                assert_eq!(out[&class], best.unwrap().0, "class {class} under {metric:?}");
            }
        }
    }

    #[test]
    fn empty_gallery_is_an_error() {
        let gallery = Array2::<f64>::zeros((0, 3));
        let query = array![0.0, 0.0, 0.0];
        assert!(retrieve_per_class(
            query.view(),
            &gallery,
            &[],
            SimilarityMetric::NegativeEuclidean
        )
        .is_err());
    }
}
