//! Feature files. CSV: header `label,ctx_0..,seg_0..`, one sample per row.
//! JSONL: one `{"label", "ctx", "seg"}` object per line. Reals are written
//! in shortest round-trip form.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use drmoe_core::data::{Dataset, Sample, Split};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }

    /// Explicit choice, else the file extension, else CSV.
    pub fn resolve(explicit: Option<Format>, path: &Path) -> Format {
        explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Csv,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRow {
    label: u8,
    ctx: Vec<f64>,
    seg: Vec<f64>,
}

fn csv_header(d_ctx: usize, d_seg: usize) -> Vec<String> {
    let mut h = vec!["label".to_string()];
    h.extend((0..d_ctx).map(|i| format!("ctx_{i}")));
    h.extend((0..d_seg).map(|i| format!("seg_{i}")));
    h
}

pub fn write_csv<W: Write>(out: W, data: &Dataset) -> csv::Result<()> {
    let (d_ctx, d_seg) = data.dims();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(d_ctx, d_seg))?;
    let mut buf = ryu::Buffer::new();
    let mut row: Vec<String> = Vec::with_capacity(1 + d_ctx + d_seg);
    for s in data.samples() {
        row.clear();
        row.push(s.label.to_string());
        row.extend(
            s.x_ctx
                .iter()
                .chain(&s.x_seg)
                .map(|v| buf.format(*v).to_string()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(mut out: W, data: &Dataset) -> std::io::Result<()> {
    for s in data.samples() {
        let row = JsonRow {
            label: s.label,
            ctx: s.x_ctx.clone(),
            seg: s.x_seg.clone(),
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_dataset(path: &Path, data: &Dataset, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let out = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(out, data).map_err(|e| CliError::io(path, e.into())),
        Format::Jsonl => write_jsonl(out, data).map_err(|e| CliError::io(path, e)),
    }
}

struct RowChecker {
    path: PathBuf,
    dims: Option<(usize, usize)>,
}

impl RowChecker {
    fn err(&self, line: usize, reason: impl Into<String>) -> CliError {
        CliError::Parse {
            path: self.path.clone(),
            line,
            reason: reason.into(),
        }
    }

    fn check(&mut self, line: usize, label: u8, ctx: &[f64], seg: &[f64]) -> Result<()> {
        if label > 1 {
            return Err(self.err(line, format!("label {label} is not 0 or 1")));
        }
        if let Some(i) = ctx.iter().chain(seg).position(|v| !v.is_finite()) {
            return Err(self.err(line, format!("non-finite feature at position {i}")));
        }
        let dims = (ctx.len(), seg.len());
        match self.dims {
            None => self.dims = Some(dims),
            Some(d) if d != dims => {
                return Err(self.err(
                    line,
                    format!(
                        "expected {} ctx and {} seg features, found {} and {}",
                        d.0, d.1, dims.0, dims.1
                    ),
                ))
            }
            Some(_) => {}
        }
        Ok(())
    }
}

fn parse_label(s: &str) -> Option<u8> {
    s.trim().parse::<u8>().ok()
}

pub fn read_csv(path: &Path, split: Split) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(BufReader::new(file));
    let mut checker = RowChecker {
        path: path.to_path_buf(),
        dims: None,
    };
    let header = rdr
        .headers()
        .map_err(|e| checker.err(1, e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let d_ctx = names.iter().filter(|n| n.starts_with("ctx_")).count();
    let d_seg = names.iter().filter(|n| n.starts_with("seg_")).count();
    let expected = csv_header(d_ctx, d_seg);
    if names != expected {
        return Err(checker.err(1, "header must be `label,ctx_0..,seg_0..` in order"));
    }
    checker.dims = Some((d_ctx, d_seg));

    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            checker.err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != expected.len() {
            return Err(checker.err(
                line,
                format!("expected {} fields, found {}", expected.len(), record.len()),
            ));
        }
        let label = parse_label(&record[0])
            .ok_or_else(|| checker.err(line, format!("bad label `{}`", &record[0])))?;
        let mut values = Vec::with_capacity(d_ctx + d_seg);
        for (i, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                checker.err(
                    line,
                    format!("column `{}`: `{field}` is not a number", expected[i]),
                )
            })?;
            values.push(v);
        }
        let x_seg = values.split_off(d_ctx);
        checker.check(line, label, &values, &x_seg)?;
        samples.push(Sample {
            x_ctx: values,
            x_seg,
            label,
        });
    }
    if samples.is_empty() {
        return Err(checker.err(1, "no samples"));
    }
    Ok(Dataset::new(samples, split)?)
}

pub fn read_jsonl(path: &Path, split: Split) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut checker = RowChecker {
        path: path.to_path_buf(),
        dims: None,
    };
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| CliError::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let row: JsonRow =
            serde_json::from_str(&text).map_err(|e| checker.err(line_no, e.to_string()))?;
        checker.check(line_no, row.label, &row.ctx, &row.seg)?;
        samples.push(Sample {
            x_ctx: row.ctx,
            x_seg: row.seg,
            label: row.label,
        });
    }
    if samples.is_empty() {
        return Err(checker.err(1, "no samples"));
    }
    Ok(Dataset::new(samples, split)?)
}

pub fn read_dataset(path: &Path, format: Option<Format>, split: Split) -> Result<Dataset> {
    match Format::resolve(format, path) {
        Format::Csv => read_csv(path, split),
        Format::Jsonl => read_jsonl(path, split),
    }
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
