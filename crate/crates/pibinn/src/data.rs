//! Synthetic compressed-sensing datasets: Gaussian sensing matrices,
//! Bernoulli-sparse signals, block-structured large-scale generation, image
//! patch / DCT pipelines, artifact contamination, and dataset persistence.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_f64_exact, write_f64, BinError};
use crate::linalg::{BlockDiagOperator, DenseMatrix, IndexSet, LinalgError, Operator};
use crate::physics::BlockStructure;
use crate::rng::CounterRng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("corrupt manifest at {path}: {detail}")]
    CorruptManifest { path: String, detail: String },
    #[error("manifest/binary shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Bin(#[from] BinError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad PGM image {path}: {detail}")]
    BadImage { path: String, detail: String },
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

// Fixed RNG stream ids so train/test/noise draws never collide and
// generation stays order-independent.
const STREAM_SENSING: u64 = 0;
const STREAM_TRAIN_SUPPORT: u64 = 1;
const STREAM_TRAIN_VALUE: u64 = 2;
const STREAM_TEST_SUPPORT: u64 = 3;
const STREAM_TEST_VALUE: u64 = 4;
const STREAM_TRAIN_NOISE: u64 = 5;
const STREAM_TEST_NOISE: u64 = 6;
const STREAM_PATCH: u64 = 7;
const STREAM_MEASURE_NOISE: u64 = 8;

/// One inverse-problem sample.
#[derive(Debug, Clone)]
pub struct CsInstance {
    pub y: Vec<f64>,
    pub x_opt: Vec<f64>,
    pub support: IndexSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub m: usize,
    pub n: usize,
    #[serde(default = "default_p")]
    pub p_nonzero: f64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fixed_support: Option<Vec<usize>>,
    #[serde(default)]
    pub structure: Option<BlockStructure>,
}

fn default_p() -> f64 {
    0.05
}

impl DatasetSpec {
    /// Reference benchmark: m=50, n=100, p=0.05, 4000 train / 1000 test,
    /// noiseless.
    pub fn synthetic_default(seed: u64) -> Self {
        Self {
            m: 50,
            n: 100,
            p_nonzero: 0.05,
            n_train: 4000,
            n_test: 1000,
            noise_std: 0.0,
            seed,
            fixed_support: None,
            structure: None,
        }
    }

    pub fn signal_len(&self) -> usize {
        match &self.structure {
            Some(s) => s.cols(),
            None => self.n,
        }
    }

    pub fn measurement_len(&self) -> usize {
        match &self.structure {
            Some(s) => s.rows(),
            None => self.m,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.p_nonzero > 0.0 && self.p_nonzero <= 1.0) {
            return Err(DataError::InvalidSpec("p_nonzero must be in (0, 1]".into()));
        }
        if self.m == 0 || self.n == 0 {
            return Err(DataError::InvalidSpec("m and n must be >= 1".into()));
        }
        if self.n_train == 0 {
            return Err(DataError::InvalidSpec("n_train must be >= 1".into()));
        }
        if self.noise_std < 0.0 {
            return Err(DataError::InvalidSpec("noise_std must be >= 0".into()));
        }
        if let Some(s) = &self.structure {
            if s.v != self.m || s.p != self.n {
                return Err(DataError::InvalidSpec(
                    "structure block dims must match (m, n)".into(),
                ));
            }
        }
        if let Some(sup) = &self.fixed_support {
            let n = self.signal_len();
            if sup.iter().any(|&i| i >= n) {
                return Err(DataError::InvalidSpec(
                    "fixed_support index out of range".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Sensing operator plus train/test measurements, ground truths (one sample
/// per column), and per-sample supports.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub a: Operator,
    pub train_y: DenseMatrix,
    pub train_x: DenseMatrix,
    pub test_y: DenseMatrix,
    pub test_x: DenseMatrix,
    pub train_support: Vec<Vec<usize>>,
    pub test_support: Vec<Vec<usize>>,
}

/// Gaussian sensing matrix with 𝒩(0, 1/m) entries, deterministic per seed.
pub fn gen_sensing(m: usize, n: usize, seed: u64) -> DenseMatrix {
    assert!(m >= 1 && n >= 1);
    let rng = CounterRng::new(seed, STREAM_SENSING);
    let std = (1.0 / m as f64).sqrt();
    let entries = (0..m * n)
        .map(|i| std * rng.normal(i as u64))
        .collect::<Vec<_>>();
    DenseMatrix::from_entries(m, n, entries).expect("finite gaussian entries")
}

/// Sparse signals as columns of an n×count matrix: each coordinate nonzero
/// independently with probability p (or exactly on `fixed_support` when
/// given), nonzero values standard normal.
pub fn gen_signals(
    n: usize,
    count: usize,
    p_nonzero: f64,
    fixed_support: Option<&[usize]>,
    seed: u64,
    support_stream: u64,
    value_stream: u64,
) -> (DenseMatrix, Vec<Vec<usize>>) {
    let rng_sup = CounterRng::new(seed, support_stream);
    let rng_val = CounterRng::new(seed, value_stream);
    let mut x = DenseMatrix::zeros(n, count);
    let mut supports = Vec::with_capacity(count);
    for j in 0..count {
        let mut support = Vec::new();
        match fixed_support {
            Some(s) => {
                for &i in s {
                    x.set(i, j, rng_val.normal((j * n + i) as u64));
                    support.push(i);
                }
                support.sort_unstable();
                support.dedup();
            }
            None => {
                for i in 0..n {
                    let idx = (j * n + i) as u64;
                    if rng_sup.uniform(idx) < p_nonzero {
                        x.set(i, j, rng_val.normal(idx));
                        support.push(i);
                    }
                }
            }
        }
        supports.push(support);
    }
    (x, supports)
}

/// y = A·x + σ·g for a single signal.
pub fn measure(a: &Operator, x_opt: &[f64], noise_std: f64, seed: u64) -> Result<Vec<f64>, DataError> {
    assert!(noise_std >= 0.0);
    let mut y = a.matvec(x_opt)?;
    if noise_std > 0.0 {
        let rng = CounterRng::new(seed, STREAM_MEASURE_NOISE);
        for (i, v) in y.iter_mut().enumerate() {
            *v += noise_std * rng.normal(i as u64);
        }
    }
    Ok(y)
}

fn measure_batch(
    a: &Operator,
    x: &DenseMatrix,
    noise_std: f64,
    seed: u64,
    noise_stream: u64,
) -> Result<DenseMatrix, DataError> {
    let mut y = a.matmul(x)?;
    if noise_std > 0.0 {
        let rng = CounterRng::new(seed, noise_stream);
        for (i, v) in y.entries_mut().iter_mut().enumerate() {
            *v += noise_std * rng.normal(i as u64);
        }
    }
    Ok(y)
}

/// Full synthetic dataset per the spec; with `structure` set, the sensing
/// operator is a block-diagonal repeat of one v×p Gaussian block and the
/// dense equivalent is never materialized.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let a = match &spec.structure {
        Some(s) => Operator::Block(BlockDiagOperator::new(
            gen_sensing(s.v, s.p, spec.seed),
            s.u,
        )),
        None => Operator::Dense(gen_sensing(spec.m, spec.n, spec.seed)),
    };
    let n_sig = spec.signal_len();
    let (train_x, train_support) = gen_signals(
        n_sig,
        spec.n_train,
        spec.p_nonzero,
        spec.fixed_support.as_deref(),
        spec.seed,
        STREAM_TRAIN_SUPPORT,
        STREAM_TRAIN_VALUE,
    );
    let (test_x, test_support) = gen_signals(
        n_sig,
        spec.n_test,
        spec.p_nonzero,
        spec.fixed_support.as_deref(),
        spec.seed,
        STREAM_TEST_SUPPORT,
        STREAM_TEST_VALUE,
    );
    let train_y = measure_batch(&a, &train_x, spec.noise_std, spec.seed, STREAM_TRAIN_NOISE)?;
    let test_y = measure_batch(&a, &test_x, spec.noise_std, spec.seed, STREAM_TEST_NOISE)?;
    Ok(Dataset {
        spec: spec.clone(),
        a,
        train_y,
        train_x,
        test_y,
        test_x,
        train_support,
        test_support,
    })
}

/// Block-structured dataset: one Gaussian v×p block repeated u times.
pub fn gen_block_dataset(structure: BlockStructure, spec: &DatasetSpec) -> Result<Dataset, DataError> {
    let mut spec = spec.clone();
    spec.structure = Some(structure);
    spec.m = structure.v;
    spec.n = structure.p;
    gen_dataset(&spec)
}

/// Grayscale image as pixel values normalized to [0, 1].
#[derive(Debug, Clone)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>, // row-major
}

/// Minimal PGM reader: binary P5 (maxval ≤ 255) and ASCII P2, with comments.
pub fn read_pgm(path: &Path) -> Result<GrayImage, DataError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let bad = |detail: &str| DataError::BadImage {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    // header tokens: magic, width, height, maxval — whitespace/comment
    // separated; the P5 raster starts one byte after the maxval token.
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if pos == start {
            return Err(bad("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let magic = tokens[0].as_str();
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let maxval: u32 = tokens[3].parse().map_err(|_| bad("bad maxval"))?;
    if width == 0 || height == 0 || maxval == 0 {
        return Err(bad("zero dimension or maxval"));
    }
    let count = width * height;
    let pixels: Vec<f64> = match magic {
        "P5" => {
            if maxval > 255 {
                return Err(bad("P5 maxval > 255 unsupported"));
            }
            let raster_start = pos + 1; // single whitespace after maxval
            if bytes.len() < raster_start + count {
                return Err(bad("truncated raster"));
            }
            bytes[raster_start..raster_start + count]
                .iter()
                .map(|&b| b as f64 / maxval as f64)
                .collect()
        }
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            let vals: Vec<f64> = text
                .lines()
                .flat_map(|l| l.split('#').next().unwrap_or("").split_whitespace())
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("bad P2 sample"))?;
            if vals.len() < count {
                return Err(bad("truncated raster"));
            }
            vals[..count].iter().map(|&v| v / maxval as f64).collect()
        }
        _ => return Err(bad("not a P5/P2 PGM")),
    };
    Ok(GrayImage {
        width,
        height,
        pixels,
    })
}

/// Random patches from a grayscale image: row-major flattened, pixel range
/// already in [0, 1], then zero-mean normalized.
pub fn extract_patches(
    image: &GrayImage,
    patch: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, DataError> {
    if image.width < patch || image.height < patch {
        return Err(DataError::InvalidSpec(format!(
            "image {}x{} smaller than patch {patch}",
            image.width, image.height
        )));
    }
    let rng = CounterRng::new(seed, STREAM_PATCH);
    let max_r = image.height - patch + 1;
    let max_c = image.width - patch + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let r = (rng.uniform(2 * k as u64) * max_r as f64) as usize % max_r;
        let c = (rng.uniform(2 * k as u64 + 1) * max_c as f64) as usize % max_c;
        let mut v = Vec::with_capacity(patch * patch);
        for i in 0..patch {
            for j in 0..patch {
                v.push(image.pixels[(r + i) * image.width + (c + j)]);
            }
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        for x in v.iter_mut() {
            *x -= mean;
        }
        out.push(v);
    }
    Ok(out)
}

/// DCT + Gaussian sensing pipeline: x_opt = D·patch (clean DCT
/// coefficients), y = Φ·D·(patch + σ·g).
pub fn dct_sense(
    patches: &[Vec<f64>],
    phi: &DenseMatrix,
    d: &DenseMatrix,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<CsInstance>, DataError> {
    let len = d.cols();
    if d.rows() != len || phi.cols() != len {
        return Err(DataError::ShapeMismatch(format!(
            "dct_sense: Φ {}x{}, D {}x{}, patch length {len}",
            phi.rows(),
            phi.cols(),
            d.rows(),
            d.cols()
        )));
    }
    let rng = CounterRng::new(seed, STREAM_MEASURE_NOISE);
    let mut out = Vec::with_capacity(patches.len());
    for (k, patch) in patches.iter().enumerate() {
        if patch.len() != len {
            return Err(DataError::ShapeMismatch(format!(
                "patch {k} has length {}, expected {len}",
                patch.len()
            )));
        }
        let x_opt = d.matvec(patch)?;
        let noisy: Vec<f64> = patch
            .iter()
            .enumerate()
            .map(|(i, &v)| v + noise_std * rng.normal((k * len + i) as u64))
            .collect();
        let y = phi.matvec(&d.matvec(&noisy)?)?;
        let support: Vec<usize> = x_opt
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > 1e-12)
            .map(|(i, _)| i)
            .collect();
        out.push(CsInstance {
            y,
            x_opt: x_opt.clone(),
            support: IndexSet::new(support, len)?,
        });
    }
    Ok(out)
}

/// x_n = x + κ·artifact.
pub fn contaminate(x_clean: &[f64], artifact: &[f64], kappa: f64) -> Vec<f64> {
    assert_eq!(x_clean.len(), artifact.len());
    x_clean
        .iter()
        .zip(artifact.iter())
        .map(|(x, n)| x + kappa * n)
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct SupportFile {
    train: Vec<Vec<usize>>,
    test: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    spec: DatasetSpec,
    sensing_file: String,
    y_file: String,
    x_file: String,
    support_file: String,
}

/// Directory layout: manifest.json + {A.bin|block.bin}, Y.bin, X.bin,
/// support.json. Binaries are flat little-endian f64, row-major, train
/// columns before test columns.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let sensing_file = match &ds.a {
        Operator::Dense(_) => "A.bin",
        Operator::Block(_) => "block.bin",
    };
    let manifest = DatasetManifest {
        spec: ds.spec.clone(),
        sensing_file: sensing_file.to_string(),
        y_file: "Y.bin".to_string(),
        x_file: "X.bin".to_string(),
        support_file: "support.json".to_string(),
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(|e| io_err(&manifest_path, e))?;

    match &ds.a {
        Operator::Dense(m) => write_f64(&dir.join(sensing_file), m.entries())?,
        Operator::Block(b) => write_f64(&dir.join(sensing_file), b.block.entries())?,
    }
    let mut y_all = ds.train_y.entries().to_vec();
    // stack train and test as two row-major blocks
    y_all.extend_from_slice(ds.test_y.entries());
    write_f64(&dir.join("Y.bin"), &y_all)?;
    let mut x_all = ds.train_x.entries().to_vec();
    x_all.extend_from_slice(ds.test_x.entries());
    write_f64(&dir.join("X.bin"), &x_all)?;

    let sup = SupportFile {
        train: ds.train_support.clone(),
        test: ds.test_support.clone(),
    };
    let sup_path = dir.join("support.json");
    fs::write(
        &sup_path,
        serde_json::to_string(&sup).expect("support serializes"),
    )
    .map_err(|e| io_err(&sup_path, e))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| DataError::CorruptManifest {
            path: manifest_path.display().to_string(),
            detail: e.to_string(),
        })?;
    let spec = manifest.spec;
    spec.validate()
        .map_err(|e| DataError::ShapeMismatch(format!("manifest spec invalid: {e}")))?;

    let a = match &spec.structure {
        Some(s) => {
            let entries = read_f64_exact(&dir.join(&manifest.sensing_file), s.v * s.p)?;
            Operator::Block(BlockDiagOperator::new(
                DenseMatrix::from_entries(s.v, s.p, entries)?,
                s.u,
            ))
        }
        None => {
            let entries = read_f64_exact(&dir.join(&manifest.sensing_file), spec.m * spec.n)?;
            Operator::Dense(DenseMatrix::from_entries(spec.m, spec.n, entries)?)
        }
    };
    let m_len = spec.measurement_len();
    let n_len = spec.signal_len();
    let y_all = read_f64_exact(
        &dir.join(&manifest.y_file),
        m_len * (spec.n_train + spec.n_test),
    )?;
    let x_all = read_f64_exact(
        &dir.join(&manifest.x_file),
        n_len * (spec.n_train + spec.n_test),
    )?;
    let train_y =
        DenseMatrix::from_entries(m_len, spec.n_train, y_all[..m_len * spec.n_train].to_vec())?;
    let test_y =
        DenseMatrix::from_entries(m_len, spec.n_test, y_all[m_len * spec.n_train..].to_vec())?;
    let train_x =
        DenseMatrix::from_entries(n_len, spec.n_train, x_all[..n_len * spec.n_train].to_vec())?;
    let test_x =
        DenseMatrix::from_entries(n_len, spec.n_test, x_all[n_len * spec.n_train..].to_vec())?;

    let sup_path = dir.join(&manifest.support_file);
    let sup_text = fs::read_to_string(&sup_path).map_err(|e| io_err(&sup_path, e))?;
    let sup: SupportFile =
        serde_json::from_str(&sup_text).map_err(|e| DataError::CorruptManifest {
            path: sup_path.display().to_string(),
            detail: e.to_string(),
        })?;
    if sup.train.len() != spec.n_train || sup.test.len() != spec.n_test {
        return Err(DataError::ShapeMismatch(format!(
            "support.json lists {}/{} supports, manifest says {}/{}",
            sup.train.len(),
            sup.test.len(),
            spec.n_train,
            spec.n_test
        )));
    }
    Ok(Dataset {
        spec,
        a,
        train_y,
        train_x,
        test_y,
        test_x,
        train_support: sup.train,
        test_support: sup.test,
    })
}
