use super::{load_idx, Dataset, IdxTensor, MAGIC_IMAGES, MAGIC_LABELS};
use crate::error::{Error, Result};
use crate::netdag::{forward, uniform_layer, Activation, DagNetwork};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub const TEACHER_INPUT: usize = 20;
pub const TEACHER_HIDDEN: usize = 50;

/// Regression teacher: `x(20) -> h1(50) -> h2(50) -> y(1)` plus a skip edge
/// `x -> h2`, selu hidden activations, uniform `±1/sqrt(fan_in)` weights.
pub fn make_teacher(seed: u64) -> DagNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = DagNetwork::empty(TEACHER_INPUT, 1);
    let (x, y) = (net.input(), net.output());
    let h2 = net
        .insert_node_before(y, TEACHER_HIDDEN, Activation::Selu)
        .expect("output exists");
    let h1 = net
        .insert_node_before(h2, TEACHER_HIDDEN, Activation::Selu)
        .expect("h2 exists");
    for (src, dst) in [(x, h1), (h1, h2), (x, h2), (h2, y)] {
        let (w, b) = uniform_layer(&mut rng, net.width(dst), net.width(src));
        net.add_edge(src, dst, w, b).expect("teacher topology is valid");
    }
    net
}

/// Inputs uniform on `[lo, hi]^d`, labels from the teacher's forward pass.
pub fn gen_teacher_data(teacher: &DagNetwork, n: usize, seed: u64, bounds: (f64, f64)) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset("teacher data needs at least one sample"));
    }
    let (lo, hi) = bounds;
    if !(lo < hi) {
        return Err(Error::Domain(format!("input bounds [{lo}, {hi}] are empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = teacher.input_width();
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            x[(i, j)] = rng.random_range(lo..hi);
        }
    }
    let (y, _) = forward(teacher, &x)?;
    Dataset::new(x, y)
}

/// Teacher, training and test data for one seed of the teacher-student
/// benchmark. Teacher weights, both samples and the split use distinct streams.
pub fn teacher_student_data(seed: u64, n_train: usize, n_test: usize, bound: f64) -> Result<(DagNetwork, Dataset, Dataset)> {
    let teacher = make_teacher(seed);
    let base = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let train = gen_teacher_data(&teacher, n_train, base ^ 0x74_7261_696e, (-bound, bound))?;
    let test = gen_teacher_data(&teacher, n_test, base ^ 0x7465_7374, (-bound, bound))?;
    Ok((teacher, train, test))
}

/// Expected MNIST file names inside a data directory.
pub struct MnistFiles;

impl MnistFiles {
    pub const TRAIN_IMAGES: &'static str = "train-images-idx3-ubyte";
    pub const TRAIN_LABELS: &'static str = "train-labels-idx1-ubyte";
    pub const TEST_IMAGES: &'static str = "t10k-images-idx3-ubyte";
    pub const TEST_LABELS: &'static str = "t10k-labels-idx1-ubyte";

    pub const ALL: [&'static str; 4] = [
        Self::TRAIN_IMAGES,
        Self::TRAIN_LABELS,
        Self::TEST_IMAGES,
        Self::TEST_LABELS,
    ];
}

/// Pixels scaled to `[0, 1]`, labels one-hot over 10 classes.
pub fn mnist_dataset(images: &IdxTensor, labels: &IdxTensor, limit: Option<usize>) -> Result<Dataset> {
    if images.dims.len() != 3 {
        return Err(super::IdxError::Rank {
            expected: 3,
            found: images.dims.len(),
        }
        .into());
    }
    if labels.dims.len() != 1 {
        return Err(super::IdxError::Rank {
            expected: 1,
            found: labels.dims.len(),
        }
        .into());
    }
    if images.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let n = limit.map_or(images.len(), |l| l.min(images.len()));
    let pixels = images.item_size();
    let x = DMatrix::from_fn(n, pixels, |i, j| images.item(i)[j] as f64 / 255.0);
    let mut y = DMatrix::zeros(n, 10);
    for i in 0..n {
        let label = labels.data[i] as usize;
        if label >= 10 {
            return Err(Error::Domain(format!("label {label} at index {i} is not a digit")));
        }
        y[(i, label)] = 1.0;
    }
    Dataset::new(x, y)
}

/// Load MNIST train/test from `dir`, keeping the first `subset` training images.
pub fn load_mnist(dir: &Path, subset: Option<usize>) -> Result<(Dataset, Dataset)> {
    let missing: Vec<&str> = MnistFiles::ALL
        .iter()
        .copied()
        .filter(|f| !dir.join(f).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingData(format!(
            "expected uncompressed MNIST files {} in {}",
            missing.join(", "),
            dir.display()
        )));
    }
    let read = |name: &str, magic: u32| -> Result<IdxTensor> {
        let t = load_idx(dir.join(name))?;
        let expected_rank = (magic & 0xff) as usize;
        if t.dims.len() != expected_rank {
            return Err(super::IdxError::Rank {
                expected: expected_rank,
                found: t.dims.len(),
            }
            .into());
        }
        Ok(t)
    };
    let train = mnist_dataset(
        &read(MnistFiles::TRAIN_IMAGES, MAGIC_IMAGES)?,
        &read(MnistFiles::TRAIN_LABELS, MAGIC_LABELS)?,
        subset,
    )?;
    let test = mnist_dataset(
        &read(MnistFiles::TEST_IMAGES, MAGIC_IMAGES)?,
        &read(MnistFiles::TEST_LABELS, MAGIC_LABELS)?,
        None,
    )?;
    Ok((train, test))
}

/// Comma-separated numeric table with a header row; the last `target_cols`
/// columns are targets.
pub fn load_csv(path: &Path, target_cols: usize) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let width = reader.headers()?.len();
    if target_cols == 0 || target_cols >= width {
        return Err(Error::Csv(format!(
            "{target_cols} target columns requested from a table with {width} columns"
        )));
    }
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Csv(format!("row {}, column {}: '{field}' is not a number", row + 2, col + 1))
            })?;
            values.push(v);
        }
    }
    let n = values.len() / width;
    if n == 0 {
        return Err(Error::EmptyDataset("csv file has no data rows"));
    }
    let all = DMatrix::from_row_slice(n, width, &values);
    let inputs = width - target_cols;
    Dataset::new(
        all.columns(0, inputs).into_owned(),
        all.columns(inputs, target_cols).into_owned(),
    )
}
