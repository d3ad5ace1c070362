//! CSV writers and the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ggls_core::{GglsError, Module, Result, TraceRecord};
use sha2::{Digest, Sha256};

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> GglsError + '_ {
    move |source| GglsError::Io {
        module: Module::Cli,
        path: path.display().to_string(),
        source,
    }
}

/// Writes `body` line by line into `path`, buffering.
fn write_lines(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let io = io_error(path);
    let mut w = BufWriter::new(File::create(path).map_err(&io)?);
    body(&mut w).map_err(&io)?;
    w.flush().map_err(&io)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_predictions(path: &Path, labels: &[usize]) -> Result<()> {
    write_lines(path, |w| {
        writeln!(w, "index,label")?;
        for (i, l) in labels.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        Ok(())
    })
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    write_lines(path, |w| {
        writeln!(w, "iteration,objective,mu,accuracy")?;
        for r in trace {
            let acc = r.accuracy.map(float).unwrap_or_default();
            writeln!(w, "{},{},{},{}", r.iteration, float(r.objective), float(r.mu), acc)?;
        }
        Ok(())
    })
}

/// One row per training sample: index within its domain, domain, the source
/// label or target pseudo-label, then the embedded coordinates.
pub fn write_embeddings(
    path: &Path,
    embedded: &[Vec<f64>],
    source_labels: &[usize],
    target_labels: &[usize],
) -> Result<()> {
    let width = embedded.first().map_or(0, Vec::len);
    write_lines(path, |w| {
        write!(w, "index,domain,label")?;
        for c in 1..=width {
            write!(w, ",y{c}")?;
        }
        writeln!(w)?;
        let labeled = source_labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (i, "source", l))
            .chain(target_labels.iter().enumerate().map(|(i, &l)| (i, "target", l)));
        for ((i, domain, label), row) in labeled.zip(embedded) {
            write!(w, "{i},{domain},{label}")?;
            for &v in row {
                write!(w, ",{}", float(v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

pub fn write_summary(path: &Path, rows: &[(String, f64, f64)]) -> Result<()> {
    write_lines(path, |w| {
        writeln!(w, "variant,accuracy,duration_seconds")?;
        for (variant, acc, secs) in rows {
            writeln!(w, "{variant},{},{}", float(*acc), float(*secs))?;
        }
        Ok(())
    })
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_error(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Flat `key = value` record of a run.
#[derive(Debug, Default, Clone)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let mut tmp = PathBuf::from(path);
        tmp.set_extension("tmp");
        let io = io_error(path);
        fs::write(&tmp, self.render()).map_err(&io)?;
        fs::rename(&tmp, path).map_err(&io)
    }

    /// Entries under `config.`, with the prefix removed, as config-file text.
    pub fn config_text(text: &str) -> String {
        text.lines()
            .filter_map(|l| l.strip_prefix("config."))
            .map(|l| format!("{l}\n"))
            .collect()
    }
}
