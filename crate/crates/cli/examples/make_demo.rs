//! Regenerates the demo instance shipped in `demo/`.
//!
//! Run from the repository root: `cargo run -p septq-cli --example make_demo`.

use septq::instances::{gaussian_matrix, heavy_tail_matrix, rng};
use septq::io::{write_matrix, MatrixFormat};

fn main() -> anyhow::Result<()> {
    std::fs::create_dir_all("demo")?;
    let mut r = rng(99);
    let weights = heavy_tail_matrix(16, 16, &mut r, 0.04, 8.0);
    let calib = gaussian_matrix(16, 64, &mut r, 1.0);
    write_matrix(&weights, "demo/weights.csv".as_ref(), MatrixFormat::Csv)?;
    write_matrix(&calib, "demo/calib.csv".as_ref(), MatrixFormat::Csv)?;
    println!("wrote demo/weights.csv (16x16) and demo/calib.csv (16x64)");
    Ok(())
}
