//! Report files: `report.json`, `series/*.csv` and `summary.txt`.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

/// A named table of floats for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub description: String,
    pub columns: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(name: &str, description: &str, columns: &[&str]) -> Self {
        Series {
            name: name.into(),
            description: description.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// CSV text: a `#` comment documenting the columns, the header row, then
    /// one line per row with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}; columns: {}", self.description, self.columns.join(", "));
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    BoundViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub experiment: String,
    pub seed: u64,
    pub model: Value,
    pub config: Value,
    pub status: Status,
    /// Failed inequalities, one sentence each.
    pub violations: Vec<String>,
    pub result: Value,
    pub series: Vec<Series>,
    #[serde(skip)]
    pub summary: Vec<String>,
}

impl Report {
    pub fn violate(&mut self, what: impl Into<String>) {
        self.status = Status::BoundViolation;
        self.violations.push(what.into());
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment: {}", self.experiment);
        let _ = writeln!(out, "seed: {}", self.seed);
        let _ = writeln!(out, "status: {}", match self.status {
            Status::Ok => "ok",
            Status::BoundViolation => "bound violation",
        });
        for v in &self.violations {
            let _ = writeln!(out, "violation: {v}");
        }
        for line in &self.summary {
            let _ = writeln!(out, "{line}");
        }
        for s in &self.series {
            let _ = writeln!(out, "series: series/{}.csv ({} rows)", s.name, s.rows.len());
        }
        out
    }
}

/// Writes the report into `dir`, creating it if needed.
pub fn emit_report(dir: &Path, report: &Report) -> io::Result<()> {
    let series_dir = dir.join("series");
    std::fs::create_dir_all(&series_dir)?;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    for s in &report.series {
        std::fs::write(series_dir.join(format!("{}.csv", s.name)), s.to_csv())?;
    }
    std::fs::write(dir.join("summary.txt"), report.summary_text())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_series_is_header_only() {
        let s = Series::new("t", "nothing", &["a", "b"]);
        assert_eq!(s.to_csv(), "# nothing; columns: a, b\na,b\n");
    }

    #[test]
    fn seventeen_digits() {
        let v = 0.1 + 0.2;
        let t = format_float(v);
        assert_eq!(t.parse::<f64>().unwrap(), v);
        assert_eq!(t.split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
    }
}
