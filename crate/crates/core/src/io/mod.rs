//! Datasets, preprocessing, checkpoints and the CSV/PNM writers.

pub mod checkpoint;
pub mod dataset;
pub mod pnm;
pub mod preprocess;

use std::fs;
use std::path::Path;

use crate::error::Result;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{make_synthetic, Dataset, SyntheticSpec};
pub use pnm::PnmImage;
pub use preprocess::PreprocessModel;

/// Renders a header and rows as CSV text.
pub fn csv_string<S: AsRef<str>>(header: &[S], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.iter().map(AsRef::as_ref))?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// a failed run never leaves a truncated output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Formats a float so that parsing it back gives the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
