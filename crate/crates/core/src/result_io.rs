//! Persistence for quantization results.
//!
//! A result directory holds four artifacts:
//!
//! * `codes.bin` — magic `SEPTQQNT`, u32 LE rows, u32 LE cols, u8 bits, then
//!   the codes row-major as a packed big-endian bit stream (each code
//!   occupies exactly `bits` bits, MSB first; the final byte is zero-padded).
//! * `grid.json` — bits, granularity, and scale/zero-point, scalar for a
//!   per-matrix grid and one-per-row arrays otherwise.
//! * `reserved.csv` — `row,col,value` header plus one line per reserved
//!   weight, sorted by row then column, values written as 32-bit floats.
//! * `metrics.json` — the run metrics verbatim.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{Metrics, QuantResult, ReservedWeight};
use crate::error::{Error, Result};
use crate::grid::{CodeMatrix, Granularity, QuantGrid};
use crate::tensor::Matrix;

pub const CODES_MAGIC: &[u8; 8] = b"SEPTQQNT";
pub const CODES_FILE: &str = "codes.bin";
pub const GRID_FILE: &str = "grid.json";
pub const RESERVED_FILE: &str = "reserved.csv";
pub const METRICS_FILE: &str = "metrics.json";

// ── Packed codes ────────────────────────────────────────────────────────────

fn packed_len(rows: usize, cols: usize, bits: u8) -> Option<usize> {
    rows.checked_mul(cols)?.checked_mul(bits as usize).map(|b| b.div_ceil(8))
}

pub fn write_codes(path: &Path, codes: &CodeMatrix) -> Result<()> {
    let bits = codes.bits();
    let mut buf = Vec::with_capacity(17 + packed_len(codes.rows(), codes.cols(), bits).unwrap());
    buf.extend_from_slice(CODES_MAGIC);
    buf.extend_from_slice(&(codes.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(codes.cols() as u32).to_le_bytes());
    buf.push(bits);
    let mut acc: u16 = 0;
    let mut pending: u32 = 0;
    for i in 0..codes.rows() {
        for j in 0..codes.cols() {
            acc = (acc << bits) | codes.at(i, j) as u16;
            pending += bits as u32;
            while pending >= 8 {
                pending -= 8;
                buf.push((acc >> pending) as u8);
            }
        }
    }
    if pending > 0 {
        buf.push((acc << (8 - pending)) as u8);
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

pub fn read_codes(path: &Path) -> Result<CodeMatrix> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 17 || &buf[..8] != CODES_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "SEPTQQNT",
        });
    }
    let rows = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let bits = buf[16];
    if !(1..=8).contains(&bits) {
        return Err(Error::InvalidConfig(format!(
            "{}: code width {bits} out of range",
            path.display()
        )));
    }
    let payload = packed_len(rows, cols, bits).ok_or_else(|| Error::InvalidConfig(format!(
        "{}: dimensions {rows}x{cols} overflow",
        path.display()
    )))?;
    if buf.len() != 17 + payload {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected: 17 + payload,
            found: buf.len(),
        });
    }
    let mut codes = CodeMatrix::zeros(rows, cols, bits);
    let mut acc: u32 = 0;
    let mut avail: u32 = 0;
    let mut next = 17usize;
    let keep = (1u32 << bits) - 1;
    for i in 0..rows {
        for j in 0..cols {
            while avail < bits as u32 {
                acc = (acc << 8) | buf[next] as u32;
                next += 1;
                avail += 8;
            }
            avail -= bits as u32;
            codes.set(i, j, ((acc >> avail) & keep) as u8);
        }
    }
    Ok(codes)
}

// ── Grid JSON ───────────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NumField {
    Scalar(f64),
    PerRow(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CodeField {
    Scalar(u8),
    PerRow(Vec<u8>),
}

#[derive(Serialize, Deserialize)]
struct GridFile {
    bits: u8,
    granularity: Granularity,
    scale: NumField,
    zero_point: CodeField,
}

pub fn write_grid(path: &Path, grid: &QuantGrid) -> Result<()> {
    let file = match grid.granularity() {
        Granularity::PerMatrix => GridFile {
            bits: grid.bits(),
            granularity: Granularity::PerMatrix,
            scale: NumField::Scalar(grid.scale(0)),
            zero_point: CodeField::Scalar(grid.zero_point(0)),
        },
        Granularity::PerRow => GridFile {
            bits: grid.bits(),
            granularity: Granularity::PerRow,
            scale: NumField::PerRow((0..grid.param_rows()).map(|r| grid.scale(r)).collect()),
            zero_point: CodeField::PerRow(
                (0..grid.param_rows()).map(|r| grid.zero_point(r)).collect(),
            ),
        },
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<QuantGrid> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: GridFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let scales = match file.scale {
        NumField::Scalar(s) => vec![s],
        NumField::PerRow(v) => v,
    };
    let zeros = match file.zero_point {
        CodeField::Scalar(z) => vec![z],
        CodeField::PerRow(v) => v,
    };
    QuantGrid::from_parts(file.bits, file.granularity, scales, zeros)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

// ── Reserved CSV ────────────────────────────────────────────────────────────

pub fn write_reserved(path: &Path, reserved: &[ReservedWeight]) -> Result<()> {
    let mut rows: Vec<&ReservedWeight> = reserved.iter().collect();
    rows.sort_unstable_by_key(|r| (r.row, r.col));
    let mut text = String::from("row,col,value\n");
    for r in rows {
        text.push_str(&format!("{},{},{}\n", r.row, r.col, r.value as f32));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_reserved(path: &Path) -> Result<Vec<ReservedWeight>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "row,col,value" => {}
        _ => {
            return Err(Error::MalformedCsv {
                path: path.to_path_buf(),
                reason: "missing row,col,value header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::MalformedCsv {
                path: path.to_path_buf(),
                reason: format!("line {}: expected 3 fields, found {}", idx + 1, fields.len()),
            });
        }
        let cell = |col: usize| Error::NonNumericCell {
            path: path.to_path_buf(),
            line: idx + 1,
            column: col + 1,
            cell: fields[col].to_string(),
        };
        let row: usize = fields[0].parse().map_err(|_| cell(0))?;
        let col: usize = fields[1].parse().map_err(|_| cell(1))?;
        let value: f32 = fields[2].parse().map_err(|_| cell(2))?;
        if !value.is_finite() {
            return Err(cell(2));
        }
        out.push(ReservedWeight { row, col, value: value as f64 });
    }
    Ok(out)
}

// ── Metrics JSON ────────────────────────────────────────────────────────────

pub fn write_metrics(path: &Path, metrics: &Metrics) -> Result<()> {
    let text = serde_json::to_string_pretty(metrics).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Metrics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

// ── Whole-result directory ──────────────────────────────────────────────────

fn member(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Writes `codes.bin`, `grid.json`, `reserved.csv`, and `metrics.json` into
/// `dir`, creating it if needed.
pub fn save_result(dir: &Path, result: &QuantResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_codes(&member(dir, CODES_FILE), &result.codes)?;
    write_grid(&member(dir, GRID_FILE), &result.grid)?;
    write_reserved(&member(dir, RESERVED_FILE), &result.reserved)?;
    write_metrics(&member(dir, METRICS_FILE), &result.metrics)
}

/// Rebuilds the dense quantized matrix from a result directory: dequantizes
/// the codes and overlays the reserved values (which round-tripped through
/// 32-bit floats on disk).
pub fn load_reconstruction(dir: &Path) -> Result<Matrix> {
    let codes = read_codes(&member(dir, CODES_FILE))?;
    let grid = read_grid(&member(dir, GRID_FILE))?;
    if grid.bits() != codes.bits() {
        return Err(Error::InvalidConfig(format!(
            "{}: codes are {}-bit but the grid is {}-bit",
            dir.display(),
            codes.bits(),
            grid.bits()
        )));
    }
    if grid.granularity() == Granularity::PerRow && grid.param_rows() != codes.rows() {
        return Err(Error::dims(
            "per-row grid vs codes",
            grid.param_rows(),
            codes.rows(),
        ));
    }
    let mut out = grid.dequantize_matrix(&codes);
    let reserved = read_reserved(&member(dir, RESERVED_FILE))?;
    for r in &reserved {
        if r.row >= out.rows() || r.col >= out.cols() {
            return Err(Error::MalformedCsv {
                path: member(dir, RESERVED_FILE),
                reason: format!(
                    "entry ({}, {}) outside {}x{} codes",
                    r.row,
                    r.col,
                    out.rows(),
                    out.cols()
                ),
            });
        }
        out.set(r.row, r.col, r.value);
    }
    Ok(out)
}
