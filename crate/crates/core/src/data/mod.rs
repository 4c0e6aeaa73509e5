//! Datasets, IDX ingestion, synthetic generators and client partitioners.

mod idx;
mod partition;
mod synth;

use std::path::PathBuf;

pub use idx::{load_idx, parse_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use partition::{partition_iid, partition_noniid, Partition};
pub use synth::{
    synth_sequences, synth_sequences_with_chain, synth_teacher, MarkovChain, TEACHER_BOUND,
};

use crate::error::{Error, Result};
use crate::nn::{Input, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    ImageClass,
    SeqNextToken,
    TeacherRegression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Input>,
    pub targets: Vec<Target>,
    pub kind: DatasetKind,
    /// Feature width per input (per step for sequences).
    pub input_dim: usize,
    pub out_dim: usize,
}

impl Dataset {
    pub fn new(
        inputs: Vec<Input>,
        targets: Vec<Target>,
        kind: DatasetKind,
        input_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::input(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        for t in &targets {
            match t {
                Target::Class(c) if *c >= out_dim => {
                    return Err(Error::input(format!(
                        "class {c} not below out_dim {out_dim}"
                    )))
                }
                Target::Values(v) if v.len() != out_dim => {
                    return Err(Error::input(format!(
                        "target of length {} for out_dim {out_dim}",
                        v.len()
                    )))
                }
                _ => {}
            }
        }
        Ok(Dataset {
            inputs,
            targets,
            kind,
            input_dim,
            out_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Class labels, or `None` for regression targets.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.targets
            .iter()
            .map(|t| match t {
                Target::Class(c) => Some(*c),
                Target::Values(_) => None,
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::input(format!(
                "index {bad} out of {} items",
                self.len()
            )));
        }
        Ok(Dataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
            kind: self.kind,
            input_dim: self.input_dim,
            out_dim: self.out_dim,
        })
    }

    /// Leading `n` items (all of them when `n >= len`).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx).expect("indices in range")
    }
}

/// Standard MNIST file names inside a directory.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// The 2,000/1,000 MNIST subset shipped with the repository.
pub fn bundled_mnist_dir() -> PathBuf {
    PathBuf::from(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../data/mnist-subset"
    ))
}

/// Loads `(train, test)` from a directory holding the four standard files.
pub fn load_mnist_dir(dir: &std::path::Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(&dir.join(MNIST_FILES[0]), &dir.join(MNIST_FILES[1]))?;
    let test = load_idx(&dir.join(MNIST_FILES[2]), &dir.join(MNIST_FILES[3]))?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_subset_shape() {
        let (train, test) = load_mnist_dir(&bundled_mnist_dir()).unwrap();
        assert_eq!((train.len(), test.len()), (2000, 1000));
        assert_eq!((train.input_dim, train.out_dim), (784, 10));
        let labels = train.labels().unwrap();
        for c in 0..10 {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), 200);
        }
        let Input::Vector(x) = &train.inputs[0] else {
            panic!()
        };
        assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(x.iter().any(|&v| v > 0.5));
    }

    #[test]
    fn subset_and_validation() {
        let d = Dataset::new(
            vec![Input::Vector(vec![1.0]), Input::Vector(vec![2.0])],
            vec![Target::Class(0), Target::Class(1)],
            DatasetKind::ImageClass,
            1,
            2,
        )
        .unwrap();
        let s = d.subset(&[1]).unwrap();
        assert_eq!(s.inputs, vec![Input::Vector(vec![2.0])]);
        assert!(d.subset(&[2]).is_err());
        assert!(Dataset::new(
            vec![Input::Vector(vec![1.0])],
            vec![Target::Class(2)],
            DatasetKind::ImageClass,
            1,
            2
        )
        .is_err());
    }
}
