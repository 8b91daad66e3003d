//! Hyperparameter sweeps over a grid file.
//!
//! Grid lines read `key = v1 | v2 | v3`; `#` starts a comment. Grid mode
//! runs the full cross product, first axis slowest. Greedy mode tunes one
//! axis at a time in file order, fixing each axis at its best value before
//! moving to the next; untuned axes keep their base values.

use std::path::Path;

use crate::config::{Config, KEYS};
use crate::error::{Error, Result};
use crate::experiment::run_experiment;

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub axes: Vec<(String, Vec<String>)>,
}

impl SweepGrid {
    pub fn num_points(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }
}

/// Parses a grid and checks every value against `base`.
pub fn parse_grid(text: &str, base: &Config, what: &str) -> Result<SweepGrid> {
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, values) = line
            .split_once('=')
            .ok_or_else(|| Error::line(what, line_no, "expected `key = v1 | v2`"))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::line(what, line_no, format!("unknown key `{key}`")));
        }
        if axes.iter().any(|(k, _)| k == key) {
            return Err(Error::line(
                what,
                line_no,
                format!("axis `{key}` listed twice"),
            ));
        }
        let values: Vec<String> = values.split('|').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(Error::line(what, line_no, "empty axis value"));
        }
        for v in &values {
            let mut probe = base.clone();
            probe
                .set(key, v)
                .map_err(|m| Error::line(what, line_no, m))?;
        }
        axes.push((key.to_string(), values));
    }
    if axes.is_empty() {
        return Err(Error::line(what, 0, "grid has no axes"));
    }
    Ok(SweepGrid { axes })
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Finished {
        final_val_f1: Option<f64>,
        diverged: bool,
    },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub run_id: String,
    pub values: Vec<String>,
    pub status: RunStatus,
}

impl SweepRow {
    /// Ranking score; failures rank below every finished run.
    fn score(&self) -> f64 {
        match self.status {
            RunStatus::Finished {
                final_val_f1,
                diverged,
            } => {
                if diverged {
                    0.0
                } else {
                    final_val_f1.unwrap_or(f64::NEG_INFINITY)
                }
            }
            RunStatus::Failed(_) => f64::NEG_INFINITY,
        }
    }
}

fn run_point(
    base: &Config,
    grid: &SweepGrid,
    values: &[String],
    index: usize,
    out_dir: &Path,
) -> SweepRow {
    let run_id = format!("run_{index:03}");
    let dir = out_dir.join(&run_id);
    let mut cfg = base.clone();
    let status = (|| -> Result<RunStatus> {
        for ((key, _), v) in grid.axes.iter().zip(values) {
            cfg.set(key, v).map_err(|m| Error::line("grid", 0, m))?;
        }
        cfg.check()
            .map_err(|(key, m)| Error::line("grid", 0, format!("{key}: {m}")))?;
        let r = run_experiment(&cfg, &dir)?;
        Ok(RunStatus::Finished {
            final_val_f1: r.final_val_f1,
            diverged: r.diverged,
        })
    })()
    .unwrap_or_else(|e| RunStatus::Failed(e.to_string()));
    if let RunStatus::Failed(msg) = &status {
        let _ = std::fs::create_dir_all(&dir)
            .and_then(|_| std::fs::write(dir.join("error.txt"), format!("{msg}\n")));
    }
    SweepRow {
        run_id,
        values: values.to_vec(),
        status,
    }
}

/// Runs the sweep and writes `summary.csv` into `out_dir`. Individual run
/// failures are recorded in the summary and do not stop the sweep.
pub fn sweep(
    base: &Config,
    grid: &SweepGrid,
    out_dir: &Path,
    greedy: bool,
) -> Result<Vec<SweepRow>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::new();
    if greedy {
        let mut chosen: Vec<String> = grid
            .axes
            .iter()
            .map(|(k, vals)| base.get(k).unwrap_or_else(|| vals[0].clone()))
            .collect();
        for (a, (_, candidates)) in grid.axes.iter().enumerate() {
            let mut best: Option<(f64, String)> = None;
            for v in candidates {
                let mut values = chosen.clone();
                values[a] = v.clone();
                let row = run_point(base, grid, &values, rows.len(), out_dir);
                let s = row.score();
                if best.as_ref().is_none_or(|(b, _)| s > *b) {
                    best = Some((s, v.clone()));
                }
                rows.push(row);
            }
            chosen[a] = best.expect("axis has candidates").1;
        }
    } else {
        let total = grid.num_points();
        for index in 0..total {
            // Mixed-radix decode, last axis fastest.
            let mut rem = index;
            let mut values = vec![String::new(); grid.axes.len()];
            for (a, (_, vals)) in grid.axes.iter().enumerate().rev() {
                values[a] = vals[rem % vals.len()].clone();
                rem /= vals.len();
            }
            rows.push(run_point(base, grid, &values, index, out_dir));
        }
    }
    write_summary(&out_dir.join(SUMMARY_FILE), grid, &rows)?;
    Ok(rows)
}

fn write_summary(path: &Path, grid: &SweepGrid, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["run_id".to_string()];
    header.extend(grid.axes.iter().map(|(k, _)| k.clone()));
    header.push("final_val_f1".into());
    header.push("diverged".into());
    let csv_err = |e: csv::Error| Error::format(path.display().to_string(), 0, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.run_id.clone()];
        rec.extend(r.values.iter().cloned());
        match &r.status {
            RunStatus::Finished {
                final_val_f1,
                diverged,
            } => {
                rec.push(final_val_f1.map(|f| f.to_string()).unwrap_or_default());
                rec.push(diverged.to_string());
            }
            RunStatus::Failed(_) => {
                rec.push(String::new());
                rec.push("error".into());
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format(path.display().to_string(), 0, e.to_string()))?;
    crate::error::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let base = Config::default();
        let g = parse_grid(
            "train.batch_size = 25000 | 10000 | 5000\noptim.lr = 0.001|0.01|0.1\n",
            &base,
            "g",
        )
        .unwrap();
        assert_eq!(g.num_points(), 9);
        let g = parse_grid("head.dropout = 0.2 | 0.5 | 0.6 | 0.8 # table\n", &base, "g").unwrap();
        assert_eq!(g.axes[0].1, vec!["0.2", "0.5", "0.6", "0.8"]);
        assert!(parse_grid("model.depth = 1 | 2\n", &base, "g").is_err());
        assert!(matches!(
            parse_grid("\noptim.lr = 0.1 | -1\n", &base, "g"),
            Err(Error::Line { line: 2, .. })
        ));
        assert!(parse_grid("# nothing\n", &base, "g").is_err());
        let layers = parse_grid("head.layers = auto,64,18 | auto,32,16,18\n", &base, "g").unwrap();
        assert_eq!(layers.axes[0].1.len(), 2);
    }
}
