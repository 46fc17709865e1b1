//! Datasets and the train-opt / train-ls / train-gr / test split.

mod idx;
mod sources;

pub use idx::{encode_idx, load_idx, parse_idx, IdxError, IdxTensor, MAGIC_IMAGES, MAGIC_LABELS};
pub use sources::{
    gen_teacher_data, load_csv, load_mnist, make_teacher, mnist_dataset, teacher_student_data, MnistFiles, TEACHER_HIDDEN,
    TEACHER_INPUT,
};

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Inputs and targets, one sample per row. Classification targets are one-hot.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Shape(format!(
                "{} input rows but {} target rows",
                x.nrows(),
                y.nrows()
            )));
        }
        Ok(Dataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_width(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.y.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
        }
    }

    pub fn concat(a: &Dataset, b: &Dataset) -> Result<Dataset> {
        if a.input_width() != b.input_width() || a.output_width() != b.output_width() {
            return Err(Error::Shape("cannot concatenate datasets of different widths".into()));
        }
        let (na, nb) = (a.len(), b.len());
        let x = DMatrix::from_fn(na + nb, a.input_width(), |i, j| {
            if i < na { a.x[(i, j)] } else { b.x[(i - na, j)] }
        });
        let y = DMatrix::from_fn(na + nb, a.output_width(), |i, j| {
            if i < na { a.y[(i, j)] } else { b.y[(i - na, j)] }
        });
        Ok(Dataset { x, y })
    }

    /// Mean squared norm of the targets: the MSE of the constant-zero predictor.
    pub fn target_second_moment(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.y.norm_squared() / self.len() as f64
    }
}

/// The three equal training parts plus the untouched test set.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train_opt: Dataset,
    pub train_ls: Dataset,
    pub train_gr: Dataset,
    pub test: Dataset,
    /// `train_opt` followed by `train_ls`.
    pub inter_train: Dataset,
}

/// Seeded shuffle, then a contiguous three-way split. The first `n % 3`
/// parts take one extra sample each.
pub fn split_dataset(train: &Dataset, test: Dataset, seed: u64) -> Result<DatasetSplits> {
    let n = train.len();
    if n < 3 {
        return Err(Error::EmptyDataset("need at least 3 training samples to split"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sizes: Vec<usize> = (0..3).map(|i| n / 3 + usize::from(i < n % 3)).collect();
    let mut parts = Vec::with_capacity(3);
    let mut at = 0;
    for s in sizes {
        parts.push(train.select(&order[at..at + s]));
        at += s;
    }
    let train_gr = parts.pop().expect("three parts");
    let train_ls = parts.pop().expect("three parts");
    let train_opt = parts.pop().expect("three parts");
    let inter_train = Dataset::concat(&train_opt, &train_ls)?;
    Ok(DatasetSplits {
        train_opt,
        train_ls,
        train_gr,
        test,
        inter_train,
    })
}
