//! Batch front end for the quantization engine.
//!
//! One matrix per invocation: read weight/calibration files, run the
//! requested analysis, write artifacts plus a `manifest.json` into the output
//! directory. Every command is deterministic given (inputs, config, seed);
//! only `runtime_seconds` in `metrics.json` varies between identical runs.
//!
//! Exit codes: 0 success, 2 missing input file, 3 shape mismatch, 4 invalid
//! configuration, 1 anything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use septq::engine::{run_septq, EngineConfig};
use septq::io::{read_matrix, write_matrix, MatrixFormat};
use septq::mask::{
    dynamic_mask_trace, mask_block_sums, score_all, score_histogram, select_mask,
    select_mask_local, decade_edges, MaskMatrix, Scope, ScoreMatrix, Timing,
};
use septq::oracle::{
    full_report, rtn_baseline, OracleReport, Quantity, DELTA_TOLERANCE, LAYER_ERROR_TOLERANCE,
    SCORE_TOLERANCE,
};
use septq::result_io::{write_codes, write_grid, write_reserved, CODES_FILE, GRID_FILE,
    RESERVED_FILE};
use septq::tensor::{hessian, spd_inverse, Matrix};
use septq::{grid_search, Error, QuantGrid};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_SCHEMA_VERSION: u32 = 1;

// ── Command line ────────────────────────────────────────────────────────────

#[derive(Parser)]
#[command(name = "septq", version, about = "Layer-wise low-bit weight quantization \
with error compensation and sparse full-precision reservation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Quantize a weight matrix against calibration activations.
    Quantize(QuantizeCmd),
    /// Score all weights; write score, histogram, and mask block-sum CSVs.
    Score(ScoreCmd),
    /// Compare reservation, compensation-only, and round-to-nearest, plus
    /// strategy timing/quality, in one CSV.
    Compare(CompareCmd),
    /// Rebuild the dense quantized matrix from a result directory.
    Dequantize(DequantizeCmd),
    /// Run the brute-force oracle suites and write their report.
    Oracle(OracleCmd),
}

/// Engine settings shared by the analysis commands. A JSON config file sets
/// the baseline; individual flags override its fields.
#[derive(Args, Clone, Default)]
pub struct CommonOpts {
    /// JSON file holding an engine configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Code width in bits (2-8).
    #[arg(long)]
    pub bits: Option<u8>,
    /// Percentage of weights kept at full precision.
    #[arg(long)]
    pub p: Option<f64>,
    /// Lazy-update block width.
    #[arg(long)]
    pub blocksize: Option<usize>,
    /// Damping as a fraction of the mean Gram diagonal.
    #[arg(long)]
    pub damping: Option<f64>,
    /// Number of shrinkage candidates scanned by the grid search.
    #[arg(long)]
    pub grid_steps: Option<usize>,
    /// When reservation decisions are made.
    #[arg(long, value_enum)]
    pub strategy_timing: Option<TimingOpt>,
    /// Where the reservation budget is pooled.
    #[arg(long, value_enum)]
    pub strategy_scope: Option<ScopeOpt>,
    /// Recorded in the manifest; offsets the oracle instance streams.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Force the matrix file format instead of inferring it from extensions.
    #[arg(long, value_enum)]
    pub format: Option<FormatOpt>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TimingOpt {
    Static,
    Dynamic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScopeOpt {
    Global,
    Local,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatOpt {
    BinaryF32,
    Csv,
}

impl From<TimingOpt> for Timing {
    fn from(t: TimingOpt) -> Timing {
        match t {
            TimingOpt::Static => Timing::Static,
            TimingOpt::Dynamic => Timing::Dynamic,
        }
    }
}

impl From<ScopeOpt> for Scope {
    fn from(s: ScopeOpt) -> Scope {
        match s {
            ScopeOpt::Global => Scope::Global,
            ScopeOpt::Local => Scope::Local,
        }
    }
}

impl From<FormatOpt> for MatrixFormat {
    fn from(f: FormatOpt) -> MatrixFormat {
        match f {
            FormatOpt::BinaryF32 => MatrixFormat::BinaryF32,
            FormatOpt::Csv => MatrixFormat::Csv,
        }
    }
}

#[derive(Args)]
pub struct QuantizeCmd {
    /// Weight matrix file (binary or CSV).
    pub weights: PathBuf,
    /// Calibration activations, one column per sample.
    pub calibration: PathBuf,
    /// Output directory for codes, grid, reserved weights, metrics, manifest.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also run the p=0 ablation and record its error as gptq_error.
    #[arg(long)]
    pub with_gptq: bool,
    #[command(flatten)]
    pub opts: CommonOpts,
}

#[derive(Args)]
pub struct ScoreCmd {
    pub weights: PathBuf,
    pub calibration: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: CommonOpts,
}

#[derive(Args)]
pub struct CompareCmd {
    pub weights: PathBuf,
    pub calibration: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: CommonOpts,
}

#[derive(Args)]
pub struct DequantizeCmd {
    /// Directory previously written by `quantize`.
    pub result_dir: PathBuf,
    /// Output directory for the reconstructed weights file.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Output format (default: binary).
    #[arg(long, value_enum)]
    pub format: Option<FormatOpt>,
}

#[derive(Args)]
pub struct OracleCmd {
    /// Output directory for the oracle report.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Offsets the seeded instance streams (default 0, the canonical set).
    #[arg(long)]
    pub seed: Option<u64>,
}

// ── Artifacts ───────────────────────────────────────────────────────────────

/// Provenance record written into every output directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weights: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub calibration: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub result_dir: Option<String>,
    pub output_dir: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<EngineConfig>,
}

/// The fixed `metrics.json` schema.
#[derive(Debug, Serialize, Deserialize)]
pub struct FullMetrics {
    pub schema_version: u32,
    pub layer_error: f64,
    pub rtn_error: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gptq_error: Option<f64>,
    pub effective_bits_paper: f64,
    pub effective_bits_honest: f64,
    pub runtime_seconds: f64,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn manifest(command: &str, out: &Path) -> RunManifest {
    RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        weights: None,
        calibration: None,
        result_dir: None,
        output_dir: out.display().to_string(),
        seed: None,
        config: None,
    }
}

// ── Config & input loading ──────────────────────────────────────────────────

fn load_config(opts: &CommonOpts) -> anyhow::Result<EngineConfig> {
    let mut cfg = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Io { path: path.clone(), source: e })?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None => EngineConfig::default(),
    };
    if let Some(b) = opts.bits {
        cfg.bits = b;
    }
    if let Some(p) = opts.p {
        cfg.strategy.p = p;
    }
    if let Some(b) = opts.blocksize {
        cfg.blocksize = b;
    }
    if let Some(d) = opts.damping {
        cfg.damping_frac = d;
    }
    if let Some(s) = opts.grid_steps {
        cfg.grid_steps = s;
    }
    if let Some(t) = opts.strategy_timing {
        cfg.strategy.timing = t.into();
    }
    if let Some(s) = opts.strategy_scope {
        cfg.strategy.scope = s.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_pair(
    weights: &Path,
    calibration: &Path,
    forced: Option<FormatOpt>,
) -> anyhow::Result<(Matrix, Matrix)> {
    let wfmt = forced.map(Into::into).unwrap_or_else(|| MatrixFormat::infer(weights));
    let xfmt = forced.map(Into::into).unwrap_or_else(|| MatrixFormat::infer(calibration));
    let w = read_matrix(weights, wfmt)?;
    let x = read_matrix(calibration, xfmt)?;
    Ok((w, x))
}

/// Mask selection exactly as the engine performs it, for commands that need
/// the mask without a full quantization run.
fn select_strategy_mask(
    w: &Matrix,
    hinv: &Matrix,
    grid: &QuantGrid,
    cfg: &EngineConfig,
) -> anyhow::Result<(ScoreMatrix, MaskMatrix)> {
    let diag: Vec<f64> = (0..hinv.rows()).map(|j| 2.0 * hinv.at(j, j)).collect();
    let scores = score_all(w, &diag, grid)?;
    let mask = match cfg.strategy.timing {
        Timing::Static => match cfg.strategy.scope {
            Scope::Global => select_mask(&scores, &cfg.strategy)?,
            Scope::Local => select_mask_local(&scores, &cfg.strategy)?,
        },
        Timing::Dynamic => dynamic_mask_trace(w, hinv, grid, &cfg.strategy)?,
    };
    Ok((scores, mask))
}

// ── Commands ────────────────────────────────────────────────────────────────

fn cmd_quantize(c: &QuantizeCmd) -> anyhow::Result<()> {
    let cfg = load_config(&c.opts)?;
    let (w, x) = load_pair(&c.weights, &c.calibration, c.opts.format)?;

    let result = run_septq(&w, &x, &cfg)?;
    let (_, rtn_error) = rtn_baseline(&w, &x, &result.grid)?;
    let gptq_error = if c.with_gptq {
        let mut plain = cfg.clone();
        plain.strategy.p = 0.0;
        Some(run_septq(&w, &x, &plain)?.metrics.layer_error)
    } else {
        None
    };

    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    write_codes(&c.out.join(CODES_FILE), &result.codes)?;
    write_grid(&c.out.join(GRID_FILE), &result.grid)?;
    write_reserved(&c.out.join(RESERVED_FILE), &result.reserved)?;
    let metrics = FullMetrics {
        schema_version: METRICS_SCHEMA_VERSION,
        layer_error: result.metrics.layer_error,
        rtn_error,
        gptq_error,
        effective_bits_paper: result.metrics.effective_bits_paper,
        effective_bits_honest: result.metrics.effective_bits_honest,
        runtime_seconds: result.metrics.runtime_seconds,
    };
    write_json(&c.out, METRICS_FILE, &metrics)?;

    let mut m = manifest("quantize", &c.out);
    m.weights = Some(c.weights.display().to_string());
    m.calibration = Some(c.calibration.display().to_string());
    m.seed = c.opts.seed;
    m.config = Some(cfg);
    write_json(&c.out, MANIFEST_FILE, &m)?;

    println!(
        "quantized {}x{} weights to {} bits: layer error {:.6e}, {} reserved ({} effective bits), {:.3}s",
        w.rows(),
        w.cols(),
        result.codes.bits(),
        metrics.layer_error,
        result.reserved.len(),
        metrics.effective_bits_paper,
        metrics.runtime_seconds,
    );
    Ok(())
}

fn cmd_score(c: &ScoreCmd) -> anyhow::Result<()> {
    let cfg = load_config(&c.opts)?;
    let (w, x) = load_pair(&c.weights, &c.calibration, c.opts.format)?;

    let grid = grid_search(&w, cfg.bits, cfg.granularity, cfg.grid_steps)?;
    let h = hessian(&x, cfg.damping_frac)?;
    let hinv = spd_inverse(&h)?;
    let (scores, mask) = select_strategy_mask(&w, &hinv, &grid, &cfg)?;

    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    let score_matrix = Matrix::from_vec(scores.rows(), scores.cols(), scores.values().to_vec())?;
    write_matrix(&score_matrix, &c.out.join("scores.csv"), MatrixFormat::Csv)?;

    let edges = decade_edges(&scores);
    let hist = score_histogram(&scores, &edges)?;
    fs::write(c.out.join("histogram.csv"), hist.to_csv())
        .with_context(|| "writing histogram.csv")?;

    let sums = mask_block_sums(&mask, cfg.strategy.block)?;
    write_matrix(&sums, &c.out.join("block_sums.csv"), MatrixFormat::Csv)?;

    let mut m = manifest("score", &c.out);
    m.weights = Some(c.weights.display().to_string());
    m.calibration = Some(c.calibration.display().to_string());
    m.seed = c.opts.seed;
    m.config = Some(cfg);
    write_json(&c.out, MANIFEST_FILE, &m)?;

    println!(
        "scored {} weights: {} reserved, score mass {:.6e}",
        scores.values().len(),
        mask.reserved_count(),
        scores.total(),
    );
    Ok(())
}

fn cmd_compare(c: &CompareCmd) -> anyhow::Result<()> {
    let cfg = load_config(&c.opts)?;
    let (w, x) = load_pair(&c.weights, &c.calibration, c.opts.format)?;

    let mut rows: Vec<(String, f64, f64)> = Vec::new();

    let septq = run_septq(&w, &x, &cfg)?;
    rows.push(("septq".into(), septq.metrics.layer_error, septq.metrics.runtime_seconds));

    let mut plain = cfg.clone();
    plain.strategy.p = 0.0;
    let gptq = run_septq(&w, &x, &plain)?;
    rows.push(("gptq".into(), gptq.metrics.layer_error, gptq.metrics.runtime_seconds));

    let t0 = Instant::now();
    let (_, rtn_error) = rtn_baseline(&w, &x, &septq.grid)?;
    rows.push(("rtn".into(), rtn_error, t0.elapsed().as_secs_f64()));

    for (name, timing) in [("static", Timing::Static), ("dynamic", Timing::Dynamic)] {
        let mut variant = cfg.clone();
        variant.strategy.timing = timing;
        let run = run_septq(&w, &x, &variant)?;
        rows.push((name.into(), run.metrics.layer_error, run.metrics.runtime_seconds));
    }
    for (name, scope) in [("global", Scope::Global), ("local", Scope::Local)] {
        let mut variant = cfg.clone();
        variant.strategy.timing = Timing::Static;
        variant.strategy.scope = scope;
        let run = run_septq(&w, &x, &variant)?;
        rows.push((name.into(), run.metrics.layer_error, run.metrics.runtime_seconds));
    }

    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    let mut csv = String::from("variant,layer_error,runtime_seconds\n");
    for (name, err, rt) in &rows {
        csv.push_str(&format!("{name},{err},{rt}\n"));
    }
    fs::write(c.out.join("compare.csv"), csv).with_context(|| "writing compare.csv")?;

    let mut m = manifest("compare", &c.out);
    m.weights = Some(c.weights.display().to_string());
    m.calibration = Some(c.calibration.display().to_string());
    m.seed = c.opts.seed;
    m.config = Some(cfg);
    write_json(&c.out, MANIFEST_FILE, &m)?;

    for (name, err, _) in &rows {
        println!("{name:>8}: layer error {err:.6e}");
    }
    Ok(())
}

fn cmd_dequantize(c: &DequantizeCmd) -> anyhow::Result<()> {
    let what = septq::result_io::load_reconstruction(&c.result_dir)?;
    let format: MatrixFormat = c.format.map(Into::into).unwrap_or(MatrixFormat::BinaryF32);
    let name = match format {
        MatrixFormat::BinaryF32 => "weights.bin",
        MatrixFormat::Csv => "weights.csv",
    };
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    write_matrix(&what, &c.out.join(name), format)?;

    let mut m = manifest("dequantize", &c.out);
    m.result_dir = Some(c.result_dir.display().to_string());
    write_json(&c.out, MANIFEST_FILE, &m)?;

    println!("reconstructed {}x{} weights into {}", what.rows(), what.cols(), c.out.join(name).display());
    Ok(())
}

fn suite_verdict(report: &OracleReport, quantity: Quantity, tol: f64) -> (f64, bool) {
    let max = report
        .rows()
        .iter()
        .filter(|r| r.quantity == quantity)
        .fold(0.0f64, |m, r| m.max(r.rel_err));
    (max, max <= tol)
}

fn cmd_oracle(c: &OracleCmd) -> anyhow::Result<()> {
    let seed = c.seed.unwrap_or(0);
    let report = full_report(seed)?;
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    report.write_csv(&c.out.join("oracle_report.csv"))?;

    let mut m = manifest("oracle", &c.out);
    m.seed = c.seed;
    write_json(&c.out, MANIFEST_FILE, &m)?;

    let checks = [
        ("compensation delta", Quantity::CompensationDelta, DELTA_TOLERANCE),
        ("importance score", Quantity::ImportanceScore, SCORE_TOLERANCE),
        ("layer error", Quantity::LayerError, LAYER_ERROR_TOLERANCE),
    ];
    let mut all_ok = true;
    for (name, quantity, tol) in checks {
        let (max, ok) = suite_verdict(&report, quantity, tol);
        all_ok &= ok;
        println!(
            "{}: {} (max rel err {max:.3e}, tolerance {tol:.0e})",
            name,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    anyhow::ensure!(all_ok, "oracle suite exceeded its tolerance");
    Ok(())
}

// ── Entry point ─────────────────────────────────────────────────────────────

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                Error::DimensionMismatch { .. } => 3,
                Error::InvalidConfig(_) => 4,
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            if e.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

pub fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Quantize(c) => cmd_quantize(c),
        Command::Score(c) => cmd_score(c),
        Command::Compare(c) => cmd_compare(c),
        Command::Dequantize(c) => cmd_dequantize(c),
        Command::Oracle(c) => cmd_oracle(c),
    }
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            let mut prev = err.to_string();
            for cause in err.chain().skip(1) {
                let msg = cause.to_string();
                // Several library errors already embed their cause in Display.
                if !prev.contains(&msg) {
                    eprintln!("  caused by: {msg}");
                }
                prev = msg;
            }
            exit_code(&err)
        }
    }
}
