//! Matrix file formats.
//!
//! Two interchangeable on-disk representations:
//!
//! * **binary**: magic `SEPTQMAT` (8 bytes), `u32` LE row count, `u32` LE
//!   column count, then `rows * cols` IEEE-754 `f32` values, little endian,
//!   row major. Compact and bit-exact at 32-bit precision.
//! * **csv**: one matrix row per text line, comma-separated cells, `.` as the
//!   decimal separator. Human-editable; written with shortest-round-trip
//!   `f32` formatting.
//!
//! Matrices are `f64` in memory; files store 32-bit values, so writing rounds
//! each entry to the nearest `f32` and reading is exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MATRIX_MAGIC: &[u8; 8] = b"SEPTQMAT";

/// On-disk representation of a matrix file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixFormat {
    BinaryF32,
    Csv,
}

impl MatrixFormat {
    /// Picks a format from a file extension: `.csv` means CSV, everything
    /// else is treated as binary.
    pub fn infer(path: &Path) -> MatrixFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::BinaryF32,
        }
    }
}

pub fn read_matrix(path: &Path, format: MatrixFormat) -> Result<Matrix> {
    match format {
        MatrixFormat::BinaryF32 => read_binary(path),
        MatrixFormat::Csv => read_csv(path),
    }
}

pub fn write_matrix(m: &Matrix, path: &Path, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::BinaryF32 => write_binary(m, path),
        MatrixFormat::Csv => write_csv(m, path),
    }
}

fn read_binary(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MATRIX_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "SEPTQMAT",
        });
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[16..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::InvalidConfig(format!("matrix header {rows}x{cols} overflows")))?;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.into(),
            expected,
            found: payload.len(),
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for chunk in payload[..expected].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    Matrix::from_vec(rows, cols, data)
}

fn write_binary(m: &Matrix, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + m.rows() * m.cols() * 4);
    bytes.extend_from_slice(MATRIX_MAGIC);
    bytes.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col_no, cell) in line.split(',').enumerate() {
            let cell = cell.trim();
            // Cells carry 32-bit precision, same as the binary format, so the
            // two formats agree bit for bit after widening.
            let value: f32 = cell.parse().map_err(|_| Error::NonNumericCell {
                path: path.into(),
                line: line_no + 1,
                column: col_no + 1,
                cell: cell.into(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonNumericCell {
                    path: path.into(),
                    line: line_no + 1,
                    column: col_no + 1,
                    cell: cell.into(),
                });
            }
            row.push(f64::from(value));
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::MalformedCsv {
                    path: path.into(),
                    reason: format!(
                        "line {} has {} cells, expected {}",
                        line_no + 1,
                        row.len(),
                        first.len()
                    ),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::MalformedCsv {
            path: path.into(),
            reason: "no rows".into(),
        });
    }
    let r = rows.len();
    let c = rows[0].len();
    Matrix::from_vec(r, c, rows.into_iter().flatten().collect())
}

fn write_csv(m: &Matrix, path: &Path) -> Result<()> {
    let mut text = String::new();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if j > 0 {
                text.push(',');
            }
            // Shortest representation that round-trips the f32 value.
            text.push_str(&format!("{}", m.at(i, j) as f32));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
