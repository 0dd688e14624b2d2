//! Versioned CSV and JSON report writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

pub const BENCH_SCHEMA: &str = "clc-bench/1";
pub const EVAL_SCHEMA: &str = "clc-eval/1";
pub const THEORY_SCHEMA: &str = "clc-theory/1";

/// Writes `rows` as CSV, preceded by a `#schema=` line.
pub fn write_csv<T: Serialize>(path: &Path, schema: &str, rows: &[T]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "#schema={schema}")?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(std::io::Error::other)?;
    }
    w.flush()
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, schema: &str, body: &T) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &Envelope { schema, body }).map_err(std::io::Error::other)?;
    writeln!(out)?;
    out.flush()
}
