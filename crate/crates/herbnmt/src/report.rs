//! CSV and text report writers.

use std::fmt::Display;
use std::path::Path;

use crate::error::{io_err, Result};

pub fn write_csv<R, I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(io_err(path))
}

/// A labelled matrix: one leading label column, then one column per header entry.
pub fn write_matrix<L: Display, V: Display>(path: &Path, corner: &str, columns: &[String], rows: impl IntoIterator<Item = (L, Vec<V>)>) -> Result<()> {
    let mut header = vec![corner.to_string()];
    header.extend(columns.iter().cloned());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        path,
        &header,
        rows.into_iter().map(|(l, vs)| {
            let mut rec = vec![l.to_string()];
            rec.extend(vs.iter().map(ToString::to_string));
            rec
        }),
    )
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}
