//! CIFAR-10 binary batches, two-class subsets and synthetic stand-ins.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{contract, Error, Result};
use crate::numerics::Mat64;

/// Bytes per CIFAR-10 record: one label byte and a 3×32×32 image.
pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const CIFAR_DIM: usize = 3072;

pub const CIFAR_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Samples with their original 0–9 labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub inputs: Mat64,
    pub labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }
}

/// Two-class dataset with labels in `{0, 1}`.
#[derive(Debug, Clone)]
pub struct BinaryDataset {
    inputs: Mat64,
    labels: Vec<u8>,
    classes: (u8, u8),
}

impl BinaryDataset {
    /// `classes` records the original identifiers mapped to labels 0 and 1.
    pub fn new(inputs: Mat64, labels: Vec<u8>, classes: (u8, u8)) -> Result<Self> {
        if labels.len() != inputs.rows() {
            contract!("{} labels for {} samples", labels.len(), inputs.rows());
        }
        if labels.iter().any(|&l| l > 1) {
            contract!("binary labels must be 0 or 1");
        }
        for (label, class) in [(0, classes.0), (1, classes.1)] {
            if !labels.contains(&label) {
                return Err(Error::EmptyClass { class });
            }
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn inputs(&self) -> &Mat64 {
        &self.inputs
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn classes(&self) -> (u8, u8) {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Inputs and labels of the given sample positions.
    pub fn gather(&self, indices: &[usize]) -> Result<(Mat64, Vec<u8>)> {
        let inputs = self.inputs.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((inputs, labels))
    }
}

/// Parses CIFAR-10 binary batch files, concatenating records in file order.
pub fn load_cifar10<P: AsRef<Path>>(paths: &[P]) -> Result<LabeledDataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!(
                    "{} bytes is not a multiple of the {CIFAR_RECORD_BYTES}-byte record size",
                    bytes.len()
                ),
            });
        }
        data.reserve(bytes.len() / CIFAR_RECORD_BYTES * CIFAR_DIM);
        for (r, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
            let label = record[0];
            if label > 9 {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("record {r} has label byte {label}"),
                });
            }
            labels.push(label);
            data.extend(record[1..].iter().map(|&p| f64::from(p) / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(Error::Data("no CIFAR-10 records found".into()));
    }
    let inputs = Mat64::from_vec(labels.len(), CIFAR_DIM, data)?;
    Ok(LabeledDataset { inputs, labels })
}

/// The five training batch files of an extracted `cifar-10-batches-bin` directory.
pub fn cifar_training_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let files: Vec<PathBuf> = (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .collect();
    if let Some(missing) = files.iter().find(|f| !f.is_file()) {
        return Err(Error::Data(format!(
            "CIFAR-10 training file {} not found",
            missing.display()
        )));
    }
    Ok(files)
}

/// Keeps samples of `class_a` (label 0) and `class_b` (label 1), preserving order.
pub fn select_binary(ds: &LabeledDataset, class_a: u8, class_b: u8) -> Result<BinaryDataset> {
    if class_a == class_b || class_a > 9 || class_b > 9 {
        contract!("class pair ({class_a}, {class_b}) must be two distinct ids in 0..=9");
    }
    let keep: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.labels[i] == class_a || ds.labels[i] == class_b)
        .collect();
    for class in [class_a, class_b] {
        if !keep.iter().any(|&i| ds.labels[i] == class) {
            return Err(Error::EmptyClass { class });
        }
    }
    let labels = keep
        .iter()
        .map(|&i| u8::from(ds.labels[i] == class_b))
        .collect();
    let inputs = ds.inputs.select_rows(&keep)?;
    BinaryDataset::new(inputs, labels, (class_a, class_b))
}

/// Parses a class pair: a named preset (`cat-dog`, `ship-truck`,
/// `airplane-automobile`), two class names, or two ids such as `3,5`.
pub fn parse_class_pair(s: &str) -> Option<(u8, u8)> {
    let id = |t: &str| -> Option<u8> {
        let t = t.trim();
        t.parse::<u8>()
            .ok()
            .filter(|&v| v <= 9)
            .or_else(|| CIFAR_CLASSES.iter().position(|&c| c == t).map(|p| p as u8))
    };
    let (a, b) = s.split_once(',').or_else(|| s.split_once('-'))?;
    let (a, b) = (id(a)?, id(b)?);
    (a != b).then_some((a, b))
}

/// Two Gaussian clouds at `±separation·u` for a fixed unit direction `u`,
/// affinely rescaled into `[0, 1]`. Samples alternate labels 0, 1, 0, 1, ...
pub fn make_synthetic(
    dim: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<BinaryDataset> {
    if dim < 2 || n_per_class < 1 {
        contract!("synthetic data needs dim >= 2 and at least one sample per class");
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        contract!("separation must be a finite non-negative number");
    }
    // Alternating signs keep u (nearly) orthogonal to the all-ones direction, so the
    // shift introduced by rescaling does not help or hurt a bias-free classifier.
    let scale = 1.0 / (dim as f64).sqrt();
    let direction: Vec<f64> = (0..dim)
        .map(|j| if j % 2 == 0 { scale } else { -scale })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * n_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let sign = if label == 0 { 1.0 } else { -1.0 };
        for u in &direction {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(sign * separation * u + noise);
        }
        labels.push(label);
    }
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let span = hi - lo;
    for x in &mut data {
        *x = ((*x - lo) / span).clamp(0.0, 1.0);
    }
    BinaryDataset::new(Mat64::from_vec(n, dim, data)?, labels, (0, 1))
}

/// Sample positions making up one mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

/// Endless, deterministic stream of full mini-batches.
///
/// Each epoch yields `n / b` batches; the trailing partial batch is dropped.
/// With shuffling on, every epoch draws a fresh permutation from one seeded generator.
#[derive(Debug, Clone)]
pub struct BatchStream {
    order: Vec<usize>,
    batch: usize,
    cursor: usize,
    rng: Option<ChaCha8Rng>,
}

impl BatchStream {
    pub fn batches_per_epoch(&self) -> usize {
        self.order.len() / self.batch
    }
}

impl Iterator for BatchStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor == 0 {
            if let Some(rng) = self.rng.as_mut() {
                self.order.shuffle(rng);
            }
        }
        let start = self.cursor * self.batch;
        let indices = self.order[start..start + self.batch].to_vec();
        self.cursor = (self.cursor + 1) % self.batches_per_epoch();
        Some(Batch { indices })
    }
}

/// Mini-batch stream over a dataset of `n` samples.
pub fn batches(n: usize, b: usize, seed: u64, shuffle: bool) -> Result<BatchStream> {
    if b == 0 || b > n {
        contract!("batch size {b} must be in 1..={n}");
    }
    Ok(BatchStream {
        order: (0..n).collect(),
        batch: b,
        cursor: 0,
        rng: shuffle.then(|| ChaCha8Rng::seed_from_u64(seed)),
    })
}
