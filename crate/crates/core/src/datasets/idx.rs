//! IDX container parsing (big-endian magic + dimension header).

use std::path::Path;

use super::{CorpusSource, RawCorpus};
use crate::error::{FlstError, Result};
use crate::nn::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an unsigned-byte IDX payload and checks its magic number.
pub fn parse_idx(bytes: &[u8], expected_magic: u32, name: &str) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(FlstError::decode(name, "missing magic number"));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if magic != expected_magic {
        return Err(FlstError::decode(
            name,
            format!("magic 0x{:08x}, expected 0x{:08x}", magic, expected_magic),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(FlstError::decode(name, "truncated dimension header"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(FlstError::decode(
            name,
            format!(
                "payload holds {} bytes, header {:?} requires {}",
                payload.len(),
                dims,
                expected
            ),
        ));
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| FlstError::io(path, e))
}

/// Loads an image/label IDX pair; pixels are scaled to `[0, 1]` and flattened.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<RawCorpus> {
    let img_name = images.display().to_string();
    let lbl_name = labels.display().to_string();
    let img = parse_idx(&read(images)?, IDX_IMAGES_MAGIC, &img_name)?;
    let lbl = parse_idx(&read(labels)?, IDX_LABELS_MAGIC, &lbl_name)?;
    corpus_from_arrays(img, lbl, &img_name, &lbl_name)
}

pub(crate) fn corpus_from_arrays(
    img: IdxArray,
    lbl: IdxArray,
    img_name: &str,
    lbl_name: &str,
) -> Result<RawCorpus> {
    let count = img.dims[0];
    if lbl.dims[0] != count {
        return Err(FlstError::decode(
            lbl_name,
            format!(
                "{} labels for {} images in {}",
                lbl.dims[0], count, img_name
            ),
        ));
    }
    let pixels: usize = img.dims[1..].iter().product();
    let features = img.data.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lbl.data.iter().map(|&b| b as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&y| y > 9) {
        return Err(FlstError::decode(
            lbl_name,
            format!("label {} outside [0, 9]", bad),
        ));
    }
    Ok(RawCorpus {
        features: Matrix::from_vec(count, pixels, features)?,
        labels,
        class_count: 10,
        source: CorpusSource::Mnist,
        origin: None,
    })
}

/// Loads the standard four-file MNIST directory, concatenating the training and
/// test files (70 000 instances) and optionally taking a seeded subsample.
pub fn load_mnist_dir(dir: &Path, instances: Option<usize>, seed: u64) -> Result<RawCorpus> {
    let find = |stems: &[&str]| -> Result<std::path::PathBuf> {
        stems
            .iter()
            .map(|s| dir.join(s))
            .find(|p| p.exists())
            .ok_or_else(|| {
                FlstError::config(format!("none of {:?} found in {}", stems, dir.display()))
            })
    };
    let train = load_mnist_idx(
        &find(&["train-images-idx3-ubyte", "train-images.idx3-ubyte"])?,
        &find(&["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"])?,
    )?;
    let test = load_mnist_idx(
        &find(&["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"])?,
        &find(&["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"])?,
    )?;
    let mut labels = train.labels;
    labels.extend(test.labels);
    let corpus = RawCorpus {
        features: Matrix::vstack(&[&train.features, &test.features])?,
        labels,
        class_count: 10,
        source: CorpusSource::Mnist,
        origin: None,
    };
    match instances {
        Some(n) => corpus.subsample(n, seed),
        None => Ok(corpus),
    }
}
