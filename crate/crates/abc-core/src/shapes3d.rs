//! Optional reader for the public Shapes3D-style archive: an HDF5
//! container with `images` (`N x 64 x 64 x 3`, uint8) and `labels`
//! (`N x 6`, float) datasets. Exposed behind the same finite-dataset
//! interface as the procedural renderers.

use crate::dataset::FiniteDataset;
use crate::error::{CoreError, Result};
use crate::factor::{Activity, FactorDomain, FactorSpec, FactorValue, LatentCode};
use crate::observation::Observation;
use ndarray::{Array2, Array3, Array4};
use std::path::Path;

/// Canonical factor names of the six label columns.
pub const SHAPES3D_FACTORS: [&str; 6] = [
    "floor_hue",
    "wall_hue",
    "object_hue",
    "scale",
    "shape",
    "orientation",
];

/// Reads at most `max_items` records from the archive. Label columns are
/// quantized to their distinct values (the archive stores a discrete grid
/// as floats), and each column becomes a discrete factor with that
/// cardinality.
pub fn read_shapes3d(path: &Path, max_items: Option<usize>) -> Result<FiniteDataset> {
    let file = hdf5::File::open(path)?;
    let images_ds = file.dataset("images")?;
    let labels_ds = file.dataset("labels")?;
    let total = images_ds.shape()[0];
    let take = max_items.unwrap_or(total).min(total);

    let images: Array4<u8> = images_ds.read_slice(ndarray::s![..take, .., .., ..])?;
    let labels: Array2<f64> = labels_ds.read_slice(ndarray::s![..take, ..])?;
    if images.dim().1 != 64 || images.dim().2 != 64 || images.dim().3 != 3 {
        return Err(CoreError::Contract(format!(
            "expected 64x64x3 images, got {:?}",
            images.dim()
        )));
    }
    if labels.dim().1 != 6 {
        return Err(CoreError::Contract(format!(
            "expected 6 label columns, got {}",
            labels.dim().1
        )));
    }

    // Quantize each label column to its sorted distinct values.
    let mut column_values: Vec<Vec<f64>> = Vec::with_capacity(6);
    for j in 0..6 {
        let mut values: Vec<f64> = labels.column(j).to_vec();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        if values.len() < 2 {
            return Err(CoreError::Contract(format!(
                "label column {j} is constant; cannot form a factor"
            )));
        }
        column_values.push(values);
    }
    let spec = FactorSpec::new(
        SHAPES3D_FACTORS
            .iter()
            .zip(&column_values)
            .map(|(name, values)| {
                (
                    name.to_string(),
                    FactorDomain::Discrete {
                        cardinality: values.len(),
                    },
                )
            })
            .collect(),
    )?;

    let mut observations = Vec::with_capacity(take);
    for i in 0..take {
        let mut image = Array3::zeros((64, 64, 3));
        for y in 0..64 {
            for x in 0..64 {
                for c in 0..3 {
                    image[[y, x, c]] = images[[i, y, x, c]] as f64 / 255.0;
                }
            }
        }
        let values: Vec<FactorValue> = (0..6)
            .map(|j| {
                let raw = labels[[i, j]];
                let idx = column_values[j]
                    .iter()
                    .position(|v| (v - raw).abs() < 1e-9)
                    .expect("value came from this column");
                FactorValue::Discrete(idx)
            })
            .collect();
        let code = LatentCode {
            values,
            partition: vec![Activity::Active; 6],
        };
        observations.push(Observation::new(image, Some(code), "shapes3d")?);
    }
    Ok(FiniteDataset::from_observations(observations, Some(spec)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::curate_set;
    use crate::dataset::DataPool;
    use crate::factor::PartialAssignment;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Writes a small synthetic archive with the same layout as the public
    /// one and reads it back.
    #[test]
    fn round_trips_a_synthetic_archive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.h5");
        let n = 24;
        let mut images = Array4::<u8>::zeros((n, 64, 64, 3));
        let mut labels = Array2::<f64>::zeros((n, 6));
        for i in 0..n {
            for y in 0..64 {
                for x in 0..64 {
                    images[[i, y, x, 0]] = (i * 10) as u8;
                    images[[i, y, x, 1]] = (y * 2) as u8;
                }
            }
            labels[[i, 0]] = (i % 4) as f64 * 0.1; // floor hue grid
            labels[[i, 1]] = (i % 3) as f64 * 0.25;
            labels[[i, 2]] = ((i / 3) % 2) as f64;
            labels[[i, 3]] = 0.75 + (i % 2) as f64 * 0.25;
            labels[[i, 4]] = (i % 4) as f64;
            labels[[i, 5]] = -30.0 + (i % 3) as f64 * 30.0;
        }
        {
            let file = hdf5::File::create(&path).unwrap();
            file.new_dataset_builder()
                .with_data(&images)
                .create("images")
                .unwrap();
            file.new_dataset_builder()
                .with_data(&labels)
                .create("labels")
                .unwrap();
        }

        let dataset = read_shapes3d(&path, None).unwrap();
        assert_eq!(dataset.len(), n);
        let spec = dataset.spec.as_ref().unwrap();
        assert_eq!(spec.len(), 6);
        assert_eq!(
            spec.factors()[0].1,
            FactorDomain::Discrete { cardinality: 4 }
        );
        // Pixels scaled to [0, 1].
        let obs = &dataset.observations[2];
        assert!((obs.image[[0, 0, 0]] - 20.0 / 255.0).abs() < 1e-12);

        // The reader plugs into curation like any finite dataset.
        let pool = DataPool::Finite(dataset);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut assignment = PartialAssignment::new();
        assignment.insert("floor_hue".into(), FactorValue::Discrete(1));
        let set = curate_set(&pool, &assignment, 4, &mut rng).unwrap();
        for obs in &set.elements {
            let latent = obs.source_latent.as_ref().unwrap();
            assert_eq!(latent.value(0), &FactorValue::Discrete(1));
        }

        // Capped reads take a prefix.
        let limited = read_shapes3d(&path, Some(10)).unwrap();
        assert_eq!(limited.len(), 10);
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(read_shapes3d(Path::new("/nonexistent/archive.h5"), None).is_err());
    }
}
