//! IDX image/label ingestion (the de-facto MNIST byte layout): big-endian
//! magic, dimension sizes, then raw unsigned bytes.

use crate::dataset::FiniteDataset;
use crate::error::{CoreError, Result};
use crate::observation::Observation;
use ndarray::Array3;
use std::collections::BTreeMap;
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Result of ingesting an IDX image/label pair: observations grouped by
/// class label, with an optionally withheld class kept separate.
#[derive(Debug, Clone)]
pub struct IngestedDataset {
    pub dataset: FiniteDataset,
    /// `(label, observations)` for the withheld class, when requested.
    pub withheld: Option<(usize, Vec<Observation>)>,
    pub image_shape: (usize, usize),
}

/// Reads an IDX image file and its label file, scales pixels to `[0, 1]`,
/// and groups observations by class label. `withhold` removes one class
/// from the grouped dataset (it is returned separately).
pub fn ingest_idx_images(
    images_path: &Path,
    labels_path: &Path,
    withhold: Option<usize>,
) -> Result<IngestedDataset> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;
    let (images, rows, cols) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if images.len() != labels.len() {
        return Err(CoreError::Contract(format!(
            "image count {} does not match label count {}",
            images.len(),
            labels.len()
        )));
    }

    let mut observations = Vec::new();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut withheld_observations = Vec::new();
    for (raw, label) in images.into_iter().zip(labels) {
        let mut image = Array3::zeros((rows, cols, 1));
        for y in 0..rows {
            for x in 0..cols {
                image[[y, x, 0]] = raw[y * cols + x] as f64 / 255.0;
            }
        }
        let obs = Observation::new(image, None, "idx")?;
        if Some(label as usize) == withhold {
            withheld_observations.push(obs);
        } else {
            groups.entry(label as usize).or_default().push(observations.len());
            observations.push(obs);
        }
    }
    let dataset = FiniteDataset::from_observations(observations, None).with_groups("class", groups);
    Ok(IngestedDataset {
        dataset,
        withheld: withhold.map(|label| (label, withheld_observations)),
        image_shape: (rows, cols),
    })
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(CoreError::Parse {
            offset: bytes.len() as u64,
            message: format!("file truncated: wanted 4 bytes at offset {offset}"),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses a 3-dimensional `u8` IDX file into per-image byte rows.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<Vec<u8>>, usize, usize)> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(CoreError::Parse {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let pixel_count = rows
        .checked_mul(cols)
        .and_then(|p| p.checked_mul(count))
        .ok_or_else(|| CoreError::Parse {
            offset: 4,
            message: "dimension overflow".to_string(),
        })?;
    let expected = 16 + pixel_count;
    if bytes.len() < expected {
        return Err(CoreError::Parse {
            offset: bytes.len() as u64,
            message: format!("file truncated: expected {expected} bytes, got {}", bytes.len()),
        });
    }
    let per_image = rows * cols;
    let images = (0..count)
        .map(|i| bytes[16 + i * per_image..16 + (i + 1) * per_image].to_vec())
        .collect();
    Ok((images, rows, cols))
}

/// Parses a 1-dimensional `u8` IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(CoreError::Parse {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let count = read_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(CoreError::Parse {
            offset: bytes.len() as u64,
            message: format!("file truncated: expected {expected} bytes, got {}", bytes.len()),
        });
    }
    Ok(bytes[8..8 + count].to_vec())
}

/// Serializes observations back to the IDX pair layout (used by the CLI
/// ingest verb's round-trip checks and by tests).
pub fn write_idx_pair(
    images: &[(Vec<u8>, u8)],
    rows: usize,
    cols: usize,
) -> (Vec<u8>, Vec<u8>) {
    let mut image_bytes = Vec::with_capacity(16 + images.len() * rows * cols);
    image_bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    image_bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    let mut label_bytes = Vec::with_capacity(8 + images.len());
    label_bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    label_bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    for (pixels, label) in images {
        assert_eq!(pixels.len(), rows * cols);
        image_bytes.extend_from_slice(pixels);
        label_bytes.push(*label);
    }
    (image_bytes, label_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(pair: (Vec<u8>, Vec<u8>)) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images.idx");
        let labels = dir.path().join("labels.idx");
        std::fs::write(&images, pair.0).unwrap();
        std::fs::write(&labels, pair.1).unwrap();
        (dir, images, labels)
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let err = parse_idx_images(&[]).unwrap_err();
        match err {
            CoreError::Parse { offset, .. } => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn first_data_byte_maps_to_pixel_zero_zero() {
        // Direct byte-layout oracle: the 17th byte of the file (offset 16,
        // right after the 4-word header) is pixel (0, 0) of image 0.
        let mut pixels = vec![0u8; 4];
        pixels[0] = 255;
        let (image_bytes, label_bytes) = write_idx_pair(&[(pixels, 3)], 2, 2);
        assert_eq!(image_bytes[16], 255);
        let (_dir, images, labels) = write_temp((image_bytes, label_bytes));
        let ingested = ingest_idx_images(&images, &labels, None).unwrap();
        let obs = &ingested.dataset.observations[0];
        assert_eq!(obs.image[[0, 0, 0]], 1.0);
        assert_eq!(obs.image[[0, 1, 0]], 0.0);
    }

    #[test]
    fn groups_by_label_and_scales_pixels() {
        let images: Vec<(Vec<u8>, u8)> = (0..6u8)
            .map(|i| (vec![i * 40; 4], i % 3))
            .collect();
        let (ib, lb) = write_idx_pair(&images, 2, 2);
        let (_dir, images_path, labels_path) = write_temp((ib, lb));
        let ingested = ingest_idx_images(&images_path, &labels_path, None).unwrap();
        assert_eq!(ingested.dataset.len(), 6);
        assert_eq!(ingested.dataset.groups.len(), 3);
        assert_eq!(ingested.dataset.groups[&0], vec![0, 3]);
        let obs = &ingested.dataset.observations[5];
        assert!((obs.image[[0, 0, 0]] - 200.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn withholding_a_class_removes_it_from_groups() {
        let images: Vec<(Vec<u8>, u8)> = (0..9u8).map(|i| (vec![0; 4], i % 3)).collect();
        let (ib, lb) = write_idx_pair(&images, 2, 2);
        let (_dir, images_path, labels_path) = write_temp((ib, lb));
        let ingested = ingest_idx_images(&images_path, &labels_path, Some(2)).unwrap();
        assert_eq!(ingested.dataset.groups.len(), 2);
        assert!(!ingested.dataset.groups.contains_key(&2));
        let (label, withheld) = ingested.withheld.unwrap();
        assert_eq!(label, 2);
        assert_eq!(withheld.len(), 3);
    }

    #[test]
    fn bad_magic_is_rejected_with_offset_zero() {
        let mut bytes = vec![0u8; 32];
        bytes[3] = 0x99;
        let err = parse_idx_images(&bytes).unwrap_err();
        match err {
            CoreError::Parse { offset, message } => {
                assert_eq!(offset, 0);
                assert!(message.contains("magic"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_length() {
        let (mut ib, _) = write_idx_pair(&[(vec![7; 4], 0)], 2, 2);
        ib.truncate(18);
        let err = parse_idx_images(&ib).unwrap_err();
        assert!(matches!(err, CoreError::Parse { .. }));
    }

    #[test]
    fn label_count_mismatch_is_contract_error() {
        let (ib, _) = write_idx_pair(&[(vec![0; 4], 0), (vec![0; 4], 1)], 2, 2);
        let (_, lb) = write_idx_pair(&[(vec![0; 4], 0)], 2, 2);
        let (_dir, images_path, labels_path) = write_temp((ib, lb));
        let err = ingest_idx_images(&images_path, &labels_path, None).unwrap_err();
        assert!(matches!(err, CoreError::Contract(_)));
    }
}
