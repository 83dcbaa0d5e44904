//! Angular error metrics and benchmark tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::msnet::{norm3, NormalMap};

/// Per-pixel angle in degrees between `pred` and `gt` on the intersection
/// of their masks; `None` elsewhere. Uses `atan2(‖p×g‖, p·g)`, which stays
/// accurate for nearly parallel vectors.
pub fn angular_error_map(pred: &NormalMap, gt: &NormalMap) -> Result<Vec<Option<f64>>> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Shape {
            op: "angular_error_map",
            expected: vec![gt.height(), gt.width()],
            actual: vec![pred.height(), pred.width()],
        });
    }
    let map: Vec<Option<f64>> = pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(pred.mask().iter().zip(gt.mask()))
        .map(|((p, g), (&mp, &mg))| {
            (mp && mg).then(|| {
                let dot = p[0] * g[0] + p[1] * g[1] + p[2] * g[2];
                let cross = [
                    p[1] * g[2] - p[2] * g[1],
                    p[2] * g[0] - p[0] * g[2],
                    p[0] * g[1] - p[1] * g[0],
                ];
                norm3(&cross).atan2(dot).to_degrees()
            })
        })
        .collect();
    if map.iter().all(Option::is_none) {
        return Err(Error::invalid("prediction and ground truth masks do not overlap"));
    }
    Ok(map)
}

/// Mean of [`angular_error_map`] over the valid pixels.
pub fn mean_angular_error(pred: &NormalMap, gt: &NormalMap) -> Result<f64> {
    let map = angular_error_map(pred, gt)?;
    let (sum, n) = map.iter().flatten().fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
    Ok(sum / n as f64)
}

/// Mean angular error per object and method, with methods kept in the
/// order they were first declared.
#[derive(Clone, Debug, Default)]
pub struct BenchmarkResults {
    methods: Vec<String>,
    cells: BTreeMap<String, BTreeMap<String, f64>>,
}

impl BenchmarkResults {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fixes the column order; methods first seen in [`insert`](Self::insert)
    /// are appended in order of appearance.
    pub fn declare_method(&mut self, method: &str) {
        if !self.methods.iter().any(|m| m == method) {
            self.methods.push(method.to_string());
        }
    }

    pub fn insert(&mut self, object: &str, method: &str, mae_deg: f64) {
        self.declare_method(method);
        self.cells
            .entry(object.to_string())
            .or_default()
            .insert(method.to_string(), mae_deg);
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Rendered benchmark: CSV rows `object,method,mae_deg` plus an aligned
/// text table, each ending with per-method averages.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub csv: String,
    pub table: String,
}

pub const AVERAGE_ROW: &str = "average";

pub fn benchmark_report(results: &BenchmarkResults) -> Result<BenchmarkReport> {
    if results.is_empty() {
        return Err(Error::invalid("benchmark report needs at least one result"));
    }
    let mut missing = Vec::new();
    for (object, row) in &results.cells {
        for m in &results.methods {
            if !row.contains_key(m) {
                missing.push(format!("{object}/{m}"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::invalid(format!("missing benchmark cells: {}", missing.join(", "))));
    }
    if results.cells.contains_key(AVERAGE_ROW) {
        return Err(Error::invalid(format!("'{AVERAGE_ROW}' is reserved and cannot be an object name")));
    }
    let averages: Vec<f64> = results
        .methods
        .iter()
        .map(|m| results.cells.values().map(|r| r[m]).sum::<f64>() / results.cells.len() as f64)
        .collect();

    let mut csv = String::from("object,method,mae_deg\n");
    for (object, row) in &results.cells {
        for m in &results.methods {
            writeln!(csv, "{object},{m},{:.6}", row[m]).unwrap();
        }
    }
    for (m, avg) in results.methods.iter().zip(&averages) {
        writeln!(csv, "{AVERAGE_ROW},{m},{avg:.6}").unwrap();
    }

    let mut rows: Vec<Vec<String>> = vec![std::iter::once("object".to_string())
        .chain(results.methods.iter().cloned())
        .collect()];
    for (object, row) in &results.cells {
        rows.push(
            std::iter::once(object.clone())
                .chain(results.methods.iter().map(|m| format!("{:.2}", row[m])))
                .collect(),
        );
    }
    rows.push(
        std::iter::once(AVERAGE_ROW.to_string())
            .chain(averages.iter().map(|a| format!("{a:.2}")))
            .collect(),
    );
    let ncols = rows[0].len();
    let widths: Vec<usize> = (0..ncols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut table = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        table.push_str(line.join("  ").trim_end());
        table.push('\n');
        if i == 0 || i == rows.len() - 2 {
            table.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (ncols - 1)));
            table.push('\n');
        }
    }
    Ok(BenchmarkReport { csv, table })
}
