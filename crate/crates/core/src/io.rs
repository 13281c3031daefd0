//! File formats: newline-delimited decimal vectors, metrics CSV, and
//! per-epoch mask archives. All writes go through a temp-file-and-rename so
//! partially written artifacts never appear under the final name.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::MetricsRow;

/// Reads a newline-delimited decimal vector. Blank lines are skipped.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let v: f64 = trimmed.parse().map_err(|_| {
            Error::Parse(format!(
                "{}:{}: '{trimmed}' is not a number",
                path.display(),
                line_no + 1
            ))
        })?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::Parse(format!(
            "{}: no numeric lines",
            path.display()
        )));
    }
    Ok(values)
}

/// Writes one value per line with shortest round-trip formatting.
pub fn write_vector(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::new();
    for v in values {
        writeln!(out, "{v}").expect("string write");
    }
    write_atomic(path, &out)
}

/// Writes one value per line with a fixed number of decimals.
pub fn write_vector_fixed(path: &Path, values: &[f64], decimals: usize) -> Result<()> {
    write_atomic(path, &format_vector_fixed(values, decimals))
}

pub fn format_vector_fixed(values: &[f64], decimals: usize) -> String {
    let mut out = String::new();
    for v in values {
        writeln!(out, "{v:.decimals$}").expect("string write");
    }
    out
}

/// Writes `contents` to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Parse(format!("{}: not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub const METRICS_HEADER: &str = "epoch,train_loss,eval_metric,realized_sparsity,support_cost,sinkhorn_iters_mean,sinkhorn_iters_max,mask_corr_prev,support_size";

/// Renders the metrics table with a stable header and column order. Floats
/// use shortest round-trip formatting; an undefined correlation renders as
/// an empty field.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let corr = match r.mask_corr_prev {
            Some(c) => c.to_string(),
            None => String::new(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.train_loss,
            r.eval_metric,
            r.realized_sparsity,
            r.support_cost,
            r.sinkhorn_iters_mean,
            r.sinkhorn_iters_max,
            corr,
            r.support_size
        )
        .expect("string write");
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_atomic(path, &metrics_csv(rows))
}

const ARCHIVE_META: &str = "meta.txt";

fn epoch_file_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.txt")
}

/// Writes one epoch's kept unit indices into a mask archive directory,
/// creating or refreshing the `meta.txt` unit count.
pub fn write_archive_epoch(dir: &Path, epoch: usize, support: &[usize], n_units: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join(ARCHIVE_META), &format!("units = {n_units}\n"))?;
    let mut out = String::new();
    for i in support {
        writeln!(out, "{i}").expect("string write");
    }
    write_atomic(&dir.join(epoch_file_name(epoch)), &out)
}

/// Writes a whole run's mask archive.
pub fn write_mask_archive(dir: &Path, supports: &[Vec<usize>], n_units: usize) -> Result<()> {
    for (epoch, support) in supports.iter().enumerate() {
        write_archive_epoch(dir, epoch, support, n_units)?;
    }
    Ok(())
}

/// Loads a mask archive: the unit count and per-epoch kept indices, ordered
/// by epoch number.
pub fn read_mask_archive(dir: &Path) -> Result<(usize, Vec<Vec<usize>>)> {
    let meta = std::fs::read_to_string(dir.join(ARCHIVE_META))
        .map_err(|e| Error::Parse(format!("{}: missing meta.txt ({e})", dir.display())))?;
    let n_units = meta
        .lines()
        .find_map(|l| {
            let (key, value) = l.split_once('=')?;
            (key.trim() == "units").then(|| value.trim().parse::<usize>().ok())?
        })
        .ok_or_else(|| Error::Parse(format!("{}: meta.txt lacks 'units = N'", dir.display())))?;

    let mut epochs: Vec<(usize, Vec<usize>)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(num) = name
            .strip_prefix("epoch_")
            .and_then(|s| s.strip_suffix(".txt"))
        else {
            continue;
        };
        let epoch: usize = num
            .parse()
            .map_err(|_| Error::Parse(format!("{name}: bad epoch number")))?;
        let text = std::fs::read_to_string(entry.path())?;
        let mut support = Vec::new();
        for line in text.lines() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let idx: usize = t
                .parse()
                .map_err(|_| Error::Parse(format!("{name}: '{t}' is not an index")))?;
            if idx >= n_units {
                return Err(Error::Parse(format!(
                    "{name}: index {idx} out of range for {n_units} units"
                )));
            }
            support.push(idx);
        }
        epochs.push((epoch, support));
    }
    epochs.sort_by_key(|(e, _)| *e);
    Ok((n_units, epochs.into_iter().map(|(_, s)| s).collect()))
}
