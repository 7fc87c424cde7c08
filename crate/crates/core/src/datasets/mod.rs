//! Corpora and federation-shaped partitioning.

mod idx;
mod partition;
mod synthetic;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlstError, Result};
use crate::nn::{one_hot, Matrix};

pub use idx::{
    load_mnist_dir, load_mnist_idx, parse_idx, IdxArray, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use partition::{
    partition_and_split, FederatedSplit, NodeShards, PartitionPlan, PartitionScheme,
};
pub use synthetic::{gen_synthetic_tabular, SyntheticSpec};

/// Labelled instances with stable identifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub ids: Vec<u64>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        ids: Vec<u64>,
        class_count: usize,
    ) -> Result<Self> {
        let ds = Dataset {
            features,
            labels,
            ids,
            class_count,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.rows() != self.labels.len() || self.labels.len() != self.ids.len() {
            return Err(FlstError::shape(format!(
                "{} feature rows, {} labels, {} ids",
                self.features.rows(),
                self.labels.len(),
                self.ids.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.class_count) {
            return Err(FlstError::shape(format!(
                "label {} outside [0, {})",
                bad, self.class_count
            )));
        }
        let mut sorted = self.ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(FlstError::Validation("instance ids are not unique".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            class_count: self.class_count,
        }
    }

    pub fn targets(&self) -> Matrix {
        one_hot(&self.labels, self.class_count)
    }

    /// Concatenates datasets that share a feature space.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| FlstError::config("cannot concatenate zero datasets"))?;
        let mats: Vec<&Matrix> = parts.iter().map(|d| &d.features).collect();
        Ok(Dataset {
            features: Matrix::vstack(&mats)?,
            labels: parts
                .iter()
                .flat_map(|d| d.labels.iter().copied())
                .collect(),
            ids: parts.iter().flat_map(|d| d.ids.iter().copied()).collect(),
            class_count: first.class_count,
        })
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    Mnist,
    SyntheticTabular,
}

/// A whole corpus before splitting. `origin`, when present, names the node
/// portion each instance was generated for.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCorpus {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub source: CorpusSource,
    pub origin: Option<Vec<usize>>,
}

impl RawCorpus {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Seeded random subsample of `n` instances (order randomized).
    pub fn subsample(&self, n: usize, seed: u64) -> Result<RawCorpus> {
        if n > self.len() {
            return Err(FlstError::config(format!(
                "cannot take {} instances from a corpus of {}",
                n,
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n);
        Ok(RawCorpus {
            features: self.features.select_rows(&idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            source: self.source,
            origin: self
                .origin
                .as_ref()
                .map(|o| idx.iter().map(|&i| o[i]).collect()),
        })
    }

    /// Views the corpus as one dataset with ids equal to row positions.
    pub fn as_dataset(&self) -> Dataset {
        Dataset {
            features: self.features.clone(),
            labels: self.labels.clone(),
            ids: (0..self.len() as u64).collect(),
            class_count: self.class_count,
        }
    }

    /// Writes `f0..f{d-1},label` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| FlstError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header: Vec<String> = (0..self.feature_dim())
            .map(|j| format!("f{}", j))
            .chain(std::iter::once("label".to_string()))
            .collect();
        writeln!(w, "{}", header.join(",")).map_err(|e| FlstError::io(path, e))?;
        for (row, y) in self.features.row_iter().zip(&self.labels) {
            let mut line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            line.push(y.to_string());
            writeln!(w, "{}", line.join(",")).map_err(|e| FlstError::io(path, e))?;
        }
        w.flush().map_err(|e| FlstError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_rejects_duplicate_ids() {
        let f = Matrix::zeros(2, 1);
        assert!(Dataset::new(f, vec![0, 1], vec![5, 5], 2).is_err());
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let corpus = RawCorpus {
            features: Matrix::from_rows(&[[1.0, 2.5], [3.0, -1.0]]).unwrap(),
            labels: vec![1, 0],
            class_count: 2,
            source: CorpusSource::SyntheticTabular,
            origin: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        corpus.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text, "f0,f1,label\n1,2.5,1\n3,-1,0\n");
    }
}
