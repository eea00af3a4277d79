//! Result files: study metrics and single-dataset estimates.

use std::io::Write;
use std::path::Path;

use csv::{ReaderBuilder, Writer};

use super::config::OutputFormat;
use super::estimate::EstimateReport;
use super::study::{MethodMetrics, MetricsTable, PointMetrics};
use crate::error::{Result, SeedsError};

/// Column order of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 16] = [
    "t",
    "truth",
    "seeds_mean",
    "seeds_bias",
    "seeds_ese",
    "seeds_ase",
    "seeds_covp",
    "csl_mean",
    "csl_bias",
    "csl_ese",
    "csl_ase",
    "csl_covp",
    "re",
    "seeds_failures",
    "csl_failures",
    "unreliable",
];

pub const ESTIMATE_COLUMNS: [&str; 15] = [
    "t",
    "seeds",
    "seeds_se",
    "seeds_lower",
    "seeds_upper",
    "csl",
    "csl_se",
    "csl_lower",
    "csl_upper",
    "re",
    "nr",
    "weight_exact",
    "weight_left",
    "weight_right",
    "notes",
];

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v}"))
}

fn method_fields(m: &MethodMetrics) -> [String; 5] {
    [opt(m.mean), opt(m.bias), opt(m.ese), opt(m.ase), opt(m.covp)]
}

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner()
        .map_err(|e| SeedsError::Io(e.to_string()))
}

pub fn metrics_csv(table: &MetricsTable) -> Result<Vec<u8>> {
    csv_bytes(
        &METRICS_COLUMNS,
        table.points.iter().map(|p| {
            let mut row = vec![format!("{}", p.t), format!("{}", p.truth)];
            row.extend(method_fields(&p.seeds));
            row.extend(method_fields(&p.csl));
            row.push(opt(p.re));
            row.push(p.seeds.failures.to_string());
            row.push(p.csl.failures.to_string());
            row.push(p.unreliable.to_string());
            row
        }),
    )
}

pub fn estimates_csv(report: &EstimateReport) -> Result<Vec<u8>> {
    csv_bytes(
        &ESTIMATE_COLUMNS,
        report.rows.iter().map(|r| {
            let ci = |c: &Option<super::estimate::Interval>| match c {
                Some(c) => [
                    format!("{}", c.value),
                    format!("{}", c.se),
                    format!("{}", c.lower),
                    format!("{}", c.upper),
                ],
                None => Default::default(),
            };
            let mut row = vec![format!("{}", r.t)];
            row.extend(ci(&r.seeds));
            row.extend(ci(&r.csl));
            row.push(opt(r.re));
            row.push(r.nr.map_or_else(String::new, |v| v.to_string()));
            row.extend(r.weights.map(|w| opt(w)));
            row.push(r.notes.join("; "));
            row
        }),
    )
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| SeedsError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(bytes)?;
    Ok(())
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(value).map_err(|e| SeedsError::Io(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

pub fn emit_results(table: &MetricsTable, format: OutputFormat, path: &Path) -> Result<()> {
    let bytes = match format {
        OutputFormat::Csv => metrics_csv(table)?,
        OutputFormat::Json => json_bytes(table)?,
    };
    write_bytes(path, &bytes)
}

pub fn emit_estimates(report: &EstimateReport, format: OutputFormat, path: &Path) -> Result<()> {
    let bytes = match format {
        OutputFormat::Csv => estimates_csv(report)?,
        OutputFormat::Json => json_bytes(report)?,
    };
    write_bytes(path, &bytes)
}

/// Parses a metrics CSV written by [`emit_results`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<PointMetrics>> {
    let mut rdr = ReaderBuilder::new().from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_COLUMNS {
        return Err(SeedsError::Parse {
            line: 1,
            column: "header".into(),
            reason: "not a metrics file".into(),
        });
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let bad = |col: usize| SeedsError::Parse {
            line,
            column: METRICS_COLUMNS[col].to_string(),
            reason: format!("cannot parse '{}'", &rec[col]),
        };
        let num = |col: usize| -> Result<Option<f64>> {
            let s = &rec[col];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(col))
            }
        };
        let int = |col: usize| -> Result<usize> { rec[col].parse().map_err(|_| bad(col)) };
        let method = |start: usize, failures: usize| -> Result<MethodMetrics> {
            Ok(MethodMetrics {
                mean: num(start)?,
                bias: num(start + 1)?,
                ese: num(start + 2)?,
                ase: num(start + 3)?,
                covp: num(start + 4)?,
                failures: int(failures)?,
            })
        };
        out.push(PointMetrics {
            t: num(0)?.ok_or_else(|| bad(0))?,
            truth: num(1)?.ok_or_else(|| bad(1))?,
            seeds: method(2, 13)?,
            csl: method(7, 14)?,
            re: num(12)?,
            unreliable: rec[15].parse().map_err(|_| bad(15))?,
        });
    }
    Ok(out)
}
