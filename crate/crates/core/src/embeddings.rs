//! Semantic vectors for action class names.
//!
//! Either loaded from a word-vector text file (one token per line followed by
//! d floats, the format GloVe distributions use) or synthesized as seeded
//! random unit vectors when no file is available. Multi-word class names like
//! "sit down" embed as the mean of their word vectors.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::tensor::init;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed vector line")]
    MalformedLine { path: String, line: usize },
    #[error("{path}:{line}: vector has {got} dims, expected {expected}")]
    InconsistentDims {
        path: String,
        line: usize,
        got: usize,
        expected: usize,
    },
    #[error("word {word:?} (from class {class:?}) not found in vector file")]
    MissingWord { word: String, class: String },
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
    #[error("embedding dimension must be ≥ 2, got {0}")]
    BadDimension(usize),
    #[error("class {0:?} not present in the embedding table")]
    UnknownClass(String),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

/// Where a table's vectors came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingSource {
    File(String),
    Synthetic { seed: u64 },
}

/// Immutable map from class name to a d-dimensional semantic vector.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
    pub source: EmbeddingSource,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, class: &str) -> Result<&[f64]> {
        self.vectors
            .get(class)
            .map(|v| v.as_slice())
            .ok_or_else(|| EmbedError::UnknownClass(class.to_string()))
    }

    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(|s| s.as_str())
    }

    /// Stack the embeddings of the given classes into a `len×d` tensor.
    pub fn embed_rows(&self, classes: &[&str]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(classes.len() * self.dim);
        for class in classes {
            data.extend_from_slice(self.get(class)?);
        }
        Ok(Tensor::from_parts(vec![classes.len(), self.dim], data))
    }

    /// Verify every configured class resolves; run at startup, not per step.
    pub fn check_total(&self, classes: &[String]) -> Result<()> {
        for class in classes {
            self.get(class)?;
        }
        Ok(())
    }

    /// Write the table in the word-vector text format (multi-word names keep
    /// their spaces replaced by underscores so each line has one token).
    pub fn export(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (name, vector) in &self.vectors {
            out.push_str(&name.replace(' ', "_"));
            for v in vector {
                out.push(' ');
                out.push_str(&format!("{v:?}"));
            }
            out.push('\n');
        }
        let mut file = fs::File::create(path).map_err(|source| EmbedError::File {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(out.as_bytes()).map_err(|source| EmbedError::File {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Load vectors for the given class names from a word-vector text file.
/// Multi-word class names embed as the mean of their word vectors.
pub fn load_vectors(path: &Path, class_names: &[String]) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|source| EmbedError::File {
        path: path.display().to_string(),
        source,
    })?;

    let mut wanted: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for class in class_names {
        for word in class.split_whitespace() {
            wanted.entry(word).or_default();
        }
    }

    let mut dim: Option<usize> = None;
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().ok_or(EmbedError::MalformedLine {
            path: path.display().to_string(),
            line: line_no + 1,
        })?;
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values = values.map_err(|_| EmbedError::MalformedLine {
            path: path.display().to_string(),
            line: line_no + 1,
        })?;
        if values.is_empty() {
            return Err(EmbedError::MalformedLine {
                path: path.display().to_string(),
                line: line_no + 1,
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(EmbedError::InconsistentDims {
                    path: path.display().to_string(),
                    line: line_no + 1,
                    got: values.len(),
                    expected: d,
                })
            }
            _ => {}
        }
        if let Some(slot) = wanted.get_mut(token) {
            *slot = values;
        }
    }
    let dim = dim.unwrap_or(0);
    if dim < 2 {
        return Err(EmbedError::BadDimension(dim));
    }

    let mut vectors = BTreeMap::new();
    for class in class_names {
        if vectors.contains_key(class) {
            return Err(EmbedError::DuplicateClass(class.clone()));
        }
        let words: Vec<&str> = class.split_whitespace().collect();
        let mut mean = vec![0.0; dim];
        for word in &words {
            let vector = wanted.get(word).filter(|v| !v.is_empty()).ok_or_else(|| {
                EmbedError::MissingWord {
                    word: word.to_string(),
                    class: class.clone(),
                }
            })?;
            for (m, v) in mean.iter_mut().zip(vector) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= words.len() as f64;
        }
        vectors.insert(class.clone(), mean);
    }
    Ok(EmbeddingTable {
        dim,
        vectors,
        source: EmbeddingSource::File(path.display().to_string()),
    })
}

/// Deterministic synthetic table: per class, a seeded random unit vector.
/// The seed stream depends only on (class name, d, seed).
pub fn pseudo_embed(class_names: &[String], dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if dim < 2 {
        return Err(EmbedError::BadDimension(dim));
    }
    let mut vectors = BTreeMap::new();
    for class in class_names {
        if vectors.contains_key(class) {
            return Err(EmbedError::DuplicateClass(class.clone()));
        }
        let mut rng = init::seeded_rng(seed ^ (dim as u64), class);
        let mut vector: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut vector {
            *v /= norm;
        }
        vectors.insert(class.clone(), vector);
    }
    Ok(EmbeddingTable {
        dim,
        vectors,
        source: EmbeddingSource::Synthetic { seed },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn write_file(lines: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.txt");
        fs::write(&path, lines).unwrap();
        (dir, path)
    }

    #[test]
    fn single_word_class_loads_verbatim() {
        let (_dir, path) = write_file("jump 1.0 2.0 3.0\nsit 0.5 0.25 -1.0\n");
        let table = load_vectors(&path, &names(&["jump"])).unwrap();
        assert_eq!(table.get("jump").unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(table.dim(), 3);
    }

    #[test]
    fn multi_word_class_is_mean_of_words() {
        let (_dir, path) = write_file("sit 1.0 2.0\ndown 3.0 6.0\n");
        let table = load_vectors(&path, &names(&["sit down"])).unwrap();
        assert_eq!(table.get("sit down").unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn unknown_word_errors_with_its_name() {
        let (_dir, path) = write_file("sit 1.0 2.0\n");
        let err = load_vectors(&path, &names(&["sit down"])).unwrap_err();
        match err {
            EmbedError::MissingWord { word, class } => {
                assert_eq!(word, "down");
                assert_eq!(class, "sit down");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn inconsistent_dims_rejected() {
        let (_dir, path) = write_file("a 1.0 2.0\nb 1.0 2.0 3.0\n");
        assert!(matches!(
            load_vectors(&path, &names(&["a"])),
            Err(EmbedError::InconsistentDims { line: 2, .. })
        ));
    }

    #[test]
    fn pseudo_embed_is_deterministic() {
        let a = pseudo_embed(&names(&["wave", "clap"]), 300, 9).unwrap();
        let b = pseudo_embed(&names(&["wave", "clap"]), 300, 9).unwrap();
        assert_eq!(a.get("wave").unwrap(), b.get("wave").unwrap());
        assert_eq!(a.get("clap").unwrap(), b.get("clap").unwrap());
    }

    #[test]
    fn pseudo_embed_unit_norm() {
        let table = pseudo_embed(&names(&["wave", "clap", "jump"]), 300, 3).unwrap();
        for class in ["wave", "clap", "jump"] {
            let norm: f64 = table.get(class).unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-12, "{class} norm {norm}");
        }
    }

    #[test]
    fn distinct_names_give_distinct_vectors() {
        let table = pseudo_embed(&names(&["walk", "run"]), 300, 5).unwrap();
        assert_ne!(table.get("walk").unwrap(), table.get("run").unwrap());
    }

    #[test]
    fn duplicate_class_names_rejected() {
        assert!(matches!(
            pseudo_embed(&names(&["hop", "hop"]), 8, 1),
            Err(EmbedError::DuplicateClass(_))
        ));
    }

    #[test]
    fn export_round_trips_through_loader() {
        let table = pseudo_embed(&names(&["wave", "clap"]), 16, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synth.txt");
        table.export(&path).unwrap();
        let back = load_vectors(&path, &names(&["wave", "clap"])).unwrap();
        for class in ["wave", "clap"] {
            let a = table.get(class).unwrap();
            let b = back.get(class).unwrap();
            assert_eq!(a, b, "{class}");
        }
    }

    #[test]
    fn embed_rows_stacks_in_order() {
        let table = pseudo_embed(&names(&["a2", "b2"]), 4, 2).unwrap();
        let rows = table.embed_rows(&["b2", "a2", "b2"]).unwrap();
        assert_eq!(rows.shape(), &[3, 4]);
        assert_eq!(&rows.data()[0..4], table.get("b2").unwrap());
        assert_eq!(&rows.data()[4..8], table.get("a2").unwrap());
        assert_eq!(&rows.data()[8..12], table.get("b2").unwrap());
    }
}
