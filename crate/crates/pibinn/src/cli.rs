//! Operator-facing command-line surface: data generation, training,
//! evaluation, diagnostics, scheme comparison, bit accounting, and report
//! formatting. Every command reads a JSON config, validates it before any
//! work, and writes machine-readable outputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use crate::config::{
    load_config, BitsCmdConfig, CompareCmdConfig, ConfigError, DiagnoseCmdConfig, EvalCmdConfig,
    FmtCmdConfig, GenDataConfig, TrainCmdConfig,
};
use crate::data::{save_dataset, DataError, Dataset};
use crate::diag::{
    bit_count, emit_report, good_set_check, spectral_fk, theory_theta, DiagError, ReportFormat,
};
use crate::linalg::{DenseMatrix, IndexSet, Operator};
use crate::physics::{mask_from_block, overlap_fraction, SparsityMask};
use crate::quant::QuantError;
use crate::train::{evaluate, train, TrainError, TrainOutcome};
use crate::unroll::{forward, QuantMode, UnrolledNet};

#[derive(Debug)]
pub enum CliError {
    /// exit code 2
    Config(String),
    /// exit code 3
    Numeric(String),
    /// exit code 4
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Io(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match &e {
            ConfigError::Read { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match &e {
            DataError::InvalidSpec(_) | DataError::ShapeMismatch(_) => {
                CliError::Config(e.to_string())
            }
            DataError::Linalg(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::InvalidSettings(_) => CliError::Config(e.to_string()),
            TrainError::Quant(QuantError::InvalidConfig(_)) => CliError::Config(e.to_string()),
            TrainError::Data(d) => match d {
                DataError::InvalidSpec(_) | DataError::ShapeMismatch(_) => {
                    CliError::Config(e.to_string())
                }
                _ => CliError::Io(e.to_string()),
            },
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match &e {
            CheckpointError::ShapeMismatch(_) => CliError::Config(e.to_string()),
            CheckpointError::Linalg(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<DiagError> for CliError {
    fn from(e: DiagError) -> Self {
        match &e {
            DiagError::Unwritable { .. } => CliError::Io(e.to_string()),
            DiagError::ShapeMismatch(_) => CliError::Config(e.to_string()),
            DiagError::Linalg(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<crate::unroll::UnrollError> for CliError {
    fn from(e: crate::unroll::UnrollError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<crate::linalg::LinalgError> for CliError {
    fn from(e: crate::linalg::LinalgError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Io(format!("mkdir {}: {e}", path.display())))
}

/// One-bit quantized deep unrolled networks: train, evaluate, and diagnose
/// sparse-recovery models at desk scale.
#[derive(Debug, Parser)]
#[command(name = "pibinn", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: ./out/<command>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override the dataset/config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker count; 1 (the default) guarantees bit-reproducible runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate and persist a dataset.
    GenData,
    /// Run the training pipeline (pretrain, Stage I, Stage II as configured).
    Train,
    /// Evaluate a checkpoint on a dataset.
    Eval,
    /// Spectral/coherence/threshold diagnostics for a checkpoint.
    Diagnose,
    /// Train and compare several schemes on one dataset.
    Compare,
    /// Print the storage bit count of a named architecture.
    Bits,
    /// Render human-readable tables from JSON reports.
    Fmt,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Diagnose => "diagnose",
            Command::Compare => "compare",
            Command::Bits => "bits",
            Command::Fmt => "fmt",
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.workers == 0 {
        return Err(CliError::Config("--workers must be >= 1".into()));
    }
    if cli.workers > 1 {
        warn!("--workers {} requested; execution is serial and deterministic", cli.workers);
    }
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config <path.json> is required".into()))?;
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cli.command.name()));
    match cli.command {
        Command::GenData => cmd_gen_data(config_path, &out_dir, cli.seed),
        Command::Train => cmd_train(config_path, &out_dir, cli.seed),
        Command::Eval => cmd_eval(config_path, &out_dir, cli.seed),
        Command::Diagnose => cmd_diagnose(config_path, &out_dir, cli.seed),
        Command::Compare => cmd_compare(config_path, &out_dir, cli.seed),
        Command::Bits => cmd_bits(config_path),
        Command::Fmt => cmd_fmt(config_path),
    }
}

fn cmd_gen_data(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let cfg: GenDataConfig = load_config(config)?;
    let mut spec = cfg.dataset;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let ds = crate::data::gen_dataset(&spec)?;
    ensure_dir(out)?;
    save_dataset(&ds, out)?;
    println!(
        "dataset written to {} ({} train / {} test samples)",
        out.display(),
        spec.n_train,
        spec.n_test
    );
    Ok(())
}

fn write_epoch_csv(outcome: &TrainOutcome, path: &Path) -> Result<(), CliError> {
    let mut csv = String::from("stage,epoch,loss\n");
    for rec in &outcome.epoch_log {
        csv.push_str(&format!("{},{},{}\n", rec.stage, rec.epoch, rec.loss));
    }
    write_text(path, &csv)
}

fn cmd_train(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let cfg: TrainCmdConfig = load_config(config)?;
    cfg.scheme.validate()?;
    let ds = cfg.dataset.resolve(seed)?;
    let settings = cfg.scheme.to_settings();
    info!("training scheme '{}' on {}x{} dataset", cfg.scheme.name, ds.spec.m, ds.spec.n);
    let outcome = train(&settings, &ds)?;
    let mut report = evaluate(&outcome.net, &ds)?;
    report.wall_times = outcome.wall_times.clone();
    ensure_dir(out)?;
    save_checkpoint(&outcome.net, &out.join("checkpoint"))?;
    emit_report(&report, &out.join("report.json"), ReportFormat::Json)?;
    emit_report(&report, &out.join("report.csv"), ReportFormat::Csv)?;
    write_epoch_csv(&outcome, &out.join("losses.csv"))?;
    if let Some(s2) = &outcome.stage2 {
        println!(
            "stage2: lambda {:.6}, effective scale {:.6}",
            s2.lambda, s2.effective_scale
        );
    }
    println!(
        "train {:.2} dB / test {:.2} dB (gap {:.2} dB), {} bits, outputs in {}",
        report.train_nmse_db,
        report.test_nmse_db,
        report.gap_db,
        report.bits,
        out.display()
    );
    Ok(())
}

fn check_compat(net: &UnrolledNet, ds: &Dataset) -> Result<(), CliError> {
    let trial = forward(net, &ds.a, &ds.test_y, None);
    if let Err(e) = trial {
        return Err(CliError::Config(format!(
            "checkpoint incompatible with dataset: {e}"
        )));
    }
    Ok(())
}

fn cmd_eval(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let cfg: EvalCmdConfig = load_config(config)?;
    let ds = cfg.dataset.resolve(seed)?;
    let net = load_checkpoint(Path::new(&cfg.checkpoint))?;
    check_compat(&net, &ds)?;
    let report = evaluate(&net, &ds)?;
    ensure_dir(out)?;
    emit_report(&report, &out.join("report.json"), ReportFormat::Json)?;
    emit_report(&report, &out.join("report.csv"), ReportFormat::Csv)?;
    println!(
        "train {:.2} dB / test {:.2} dB (gap {:.2} dB)",
        report.train_nmse_db, report.test_nmse_db, report.gap_db
    );
    Ok(())
}

fn dense_operator(a: &Operator) -> Result<DenseMatrix, CliError> {
    match a {
        Operator::Dense(m) => Ok(m.clone()),
        Operator::Block(b) => {
            let entries = b.rows() * b.cols();
            if entries > 4_000_000 {
                return Err(CliError::Config(format!(
                    "diagnostics need a materializable operator; {}x{} is too large",
                    b.rows(),
                    b.cols()
                )));
            }
            Ok(b.materialize())
        }
    }
}

#[derive(serde::Serialize)]
struct DiagnosticsOut {
    variant: crate::diag::FkVariant,
    delta: f64,
    support: Vec<usize>,
    fk: Vec<f64>,
    good: Vec<bool>,
    mu: Vec<f64>,
    theory_theta: Vec<f64>,
}

fn cmd_diagnose(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let cfg: DiagnoseCmdConfig = load_config(config)?;
    let ds = cfg.dataset.resolve(seed)?;
    let mut net = load_checkpoint(Path::new(&cfg.checkpoint))?;
    check_compat(&net, &ds)?;
    if let Some(d) = cfg.delta {
        if !(d > 0.0 && d <= 1.0) {
            return Err(CliError::Config("delta must be in (0, 1]".into()));
        }
        net.delta = d;
    }
    let support_vec = cfg
        .support
        .clone()
        .or_else(|| ds.spec.fixed_support.clone())
        .ok_or_else(|| {
            CliError::Config(
                "support-dependent diagnostics need --support in the config (key \"support\") \
                 or a dataset generated with fixed_support"
                    .into(),
            )
        })?;
    let a_dense = dense_operator(&ds.a)?;
    let support = IndexSet::new(support_vec, a_dense.cols())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let a_s = crate::linalg::submatrix(&a_dense, None, Some(&support))?;

    let fk = spectral_fk(&net, &a_s, &support, cfg.variant)?;
    let good = good_set_check(&net, &a_s, &support, cfg.variant)?;
    let trace = forward(&net, &ds.a, &ds.test_y, None)?;
    let theta = theory_theta(&net, &a_dense, &support, &trace, &ds.test_x)?;
    let mu: Vec<f64> = (0..net.num_layers())
        .map(|k| {
            crate::diag::mu_coherence_global(&net.effective_weight_dense(k), &a_s, &support)
        })
        .collect();

    let mut report = evaluate(&net, &ds)?;
    report.fk_curve = fk.clone();
    ensure_dir(out)?;
    emit_report(&report, &out.join("report.json"), ReportFormat::Json)?;
    emit_report(&report, &out.join("report.csv"), ReportFormat::Csv)?;
    let diag_out = DiagnosticsOut {
        variant: cfg.variant,
        delta: net.delta,
        support: support.indices().to_vec(),
        fk: fk.clone(),
        good: good.good.clone(),
        mu,
        theory_theta: theta,
    };
    write_text(
        &out.join("diagnostics.json"),
        &serde_json::to_string_pretty(&diag_out).expect("diagnostics serialize"),
    )?;
    println!(
        "f_k: [{}], all good: {}",
        fk.iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(", "),
        good.good.iter().all(|&g| g)
    );
    Ok(())
}

/// Mask whose ACTIVE set is the nonzero entries of the weight matrix.
fn nonzero_mask(w: &DenseMatrix) -> SparsityMask {
    let mut coords = Vec::new();
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            if w.get(i, j) != 0.0 {
                coords.push((i, j));
            }
        }
    }
    SparsityMask::from_coords(w.rows(), w.cols(), &coords)
}

/// Mean overlap of the quantizer-induced zeros with the physics zeros,
/// when the trained weights have the dense block shape.
fn ternary_overlap(net: &UnrolledNet, ds: &Dataset) -> Option<f64> {
    let structure = ds.spec.structure?;
    let physics = mask_from_block(&structure);
    let mut total = 0.0;
    let mut layers = 0usize;
    for layer in &net.layers {
        if layer.w.rows() != physics.rows() || layer.w.cols() != physics.cols() {
            return None;
        }
        match overlap_fraction(&nonzero_mask(&layer.w), &physics) {
            Ok(f) => {
                total += f;
                layers += 1;
            }
            Err(_) => continue, // no quantizer zeros in this layer
        }
    }
    if layers == 0 {
        None
    } else {
        Some(total / layers as f64)
    }
}

fn cmd_compare(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let cfg: CompareCmdConfig = load_config(config)?;
    if cfg.schemes.is_empty() {
        return Err(CliError::Config("compare needs at least one scheme".into()));
    }
    for scheme in &cfg.schemes {
        scheme.validate()?;
    }
    let ds = cfg.dataset.resolve(seed)?;
    ensure_dir(out)?;
    let mut csv =
        String::from("name,train_nmse_db,test_nmse_db,gap_db,params,bits,overlap\n");
    let mut rows = Vec::new();
    for scheme in &cfg.schemes {
        info!("compare: training scheme '{}'", scheme.name);
        let settings = scheme.to_settings();
        let outcome = train(&settings, &ds)?;
        let mut report = evaluate(&outcome.net, &ds)?;
        report.wall_times = outcome.wall_times.clone();
        report.overlap = if settings.quant_mode == QuantMode::Ternary {
            ternary_overlap(&outcome.net, &ds)
        } else {
            None
        };
        emit_report(
            &report,
            &out.join(format!("{}.json", scheme.name)),
            ReportFormat::Json,
        )?;
        let overlap = report
            .overlap
            .map(|v| format!("{v:.4}"))
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            scheme.name,
            report.train_nmse_db,
            report.test_nmse_db,
            report.gap_db,
            report.params,
            report.bits,
            overlap
        ));
        rows.push((scheme.name.clone(), report));
    }
    write_text(&out.join("comparison.csv"), &csv)?;
    println!("{:<16} {:>10} {:>10} {:>8} {:>10} {:>10}", "scheme", "train dB", "test dB", "gap", "params", "bits");
    for (name, r) in &rows {
        println!(
            "{:<16} {:>10.2} {:>10.2} {:>8.2} {:>10} {:>10}",
            name, r.train_nmse_db, r.test_nmse_db, r.gap_db, r.params, r.bits
        );
    }
    Ok(())
}

fn cmd_bits(config: &Path) -> Result<(), CliError> {
    let cfg: BitsCmdConfig = load_config(config)?;
    if cfg.k == 0 {
        return Err(CliError::Config("k must be >= 1".into()));
    }
    println!("{}", bit_count(cfg.model, cfg.k, cfg.m, cfg.n));
    Ok(())
}

fn cmd_fmt(config: &Path) -> Result<(), CliError> {
    let cfg: FmtCmdConfig = load_config(config)?;
    if cfg.reports.is_empty() {
        return Err(CliError::Config("fmt needs at least one report path".into()));
    }
    println!(
        "{:<24} {:>10} {:>10} {:>8} {:>10} {:>10}",
        "report", "train dB", "test dB", "gap", "params", "bits"
    );
    for path in &cfg.reports {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("read {path}: {e}")))?;
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Io(format!("parse {path}: {e}")))?;
        let field = |name: &str| -> String {
            match &v[name] {
                serde_json::Value::Number(n) => format!("{:.2}", n.as_f64().unwrap_or(f64::NAN)),
                serde_json::Value::String(s) => s.clone(),
                _ => "-".to_string(),
            }
        };
        println!(
            "{:<24} {:>10} {:>10} {:>8} {:>10} {:>10}",
            Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.clone()),
            field("train_nmse_db"),
            field("test_nmse_db"),
            field("gap_db"),
            v["params"].to_string(),
            v["bits"].to_string()
        );
    }
    Ok(())
}
