//! Dataset CSV files.
//!
//! `labeled.csv`: `id,L,U,X,delta,Xstar_1..q,deltastar_1..q,Z_1..p1`;
//! `unlabeled.csv`: the same without `X,delta`; `process.csv`: `id,event_time`,
//! one row per event. Status codes are 1 (exact), 2 (right), 3 (left).

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, Writer};

use crate::error::{Result, SeedsError};
use crate::types::{CensorCode, Dataset, Label, SubjectRecord};

struct Layout {
    labeled: bool,
    q: usize,
    p1: usize,
}

impl Layout {
    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = vec!["id".into(), "L".into(), "U".into()];
        if self.labeled {
            h.push("X".into());
            h.push("delta".into());
        }
        h.extend((1..=self.q).map(|k| format!("Xstar_{k}")));
        h.extend((1..=self.q).map(|k| format!("deltastar_{k}")));
        h.extend((1..=self.p1).map(|k| format!("Z_{k}")));
        h
    }

    fn from_header(header: &StringRecord, labeled: bool) -> Result<Layout> {
        let count = |prefix: &str| header.iter().filter(|c| c.starts_with(prefix)).count();
        let layout = Layout {
            labeled,
            q: count("Xstar_"),
            p1: count("Z_"),
        };
        let expected = layout.header();
        let found: Vec<&str> = header.iter().collect();
        if found != expected {
            return Err(SeedsError::Parse {
                line: 1,
                column: "header".into(),
                reason: format!("expected '{}', found '{}'", expected.join(","), found.join(",")),
            });
        }
        Ok(layout)
    }
}

fn field<'a>(rec: &'a StringRecord, header: &'a StringRecord, i: usize, line: usize) -> Result<(&'a str, &'a str)> {
    match rec.get(i) {
        Some(v) => Ok((v, &header[i])),
        None => Err(SeedsError::Parse {
            line,
            column: header.get(i).unwrap_or("?").to_string(),
            reason: "missing field".into(),
        }),
    }
}

fn parse_f64(rec: &StringRecord, header: &StringRecord, i: usize, line: usize) -> Result<f64> {
    let (v, name) = field(rec, header, i, line)?;
    v.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| SeedsError::Parse {
        line,
        column: name.to_string(),
        reason: format!("'{v}' is not a finite number"),
    })
}

fn parse_id(rec: &StringRecord, header: &StringRecord, line: usize) -> Result<u64> {
    let (v, name) = field(rec, header, 0, line)?;
    v.trim().parse().map_err(|_| SeedsError::Parse {
        line,
        column: name.to_string(),
        reason: format!("'{v}' is not a non-negative integer id"),
    })
}

fn parse_code(rec: &StringRecord, header: &StringRecord, i: usize, line: usize) -> Result<CensorCode> {
    let (v, name) = field(rec, header, i, line)?;
    v.trim()
        .parse::<u8>()
        .ok()
        .and_then(CensorCode::from_code)
        .ok_or_else(|| SeedsError::Parse {
            line,
            column: name.to_string(),
            reason: format!("'{v}' is not a status code 1, 2 or 3"),
        })
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| SeedsError::Io(format!("{}: {e}", path.display())))?;
    Ok(ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file))
}

fn line_of(rec: &StringRecord, fallback: usize) -> usize {
    rec.position().map_or(fallback, |p| p.line() as usize)
}

/// Reads one record file. Rows are checked against the record invariants
/// after process events are attached, so rows are returned with line numbers.
fn read_records(path: &Path, labeled: bool) -> Result<(Layout, Vec<(usize, SubjectRecord)>)> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    let layout = Layout::from_header(&header, labeled)?;
    let width = layout.header().len();
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SeedsError::Parse {
            line: row + 2,
            column: String::new(),
            reason: e.to_string(),
        })?;
        let line = line_of(&rec, row + 2);
        if rec.len() != width {
            return Err(SeedsError::Parse {
                line,
                column: String::new(),
                reason: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let mut i = 3;
        let label = if labeled {
            i += 2;
            Some(Label {
                time: parse_f64(&rec, &header, 3, line)?,
                status: parse_code(&rec, &header, 4, line)?,
            })
        } else {
            None
        };
        let q = layout.q;
        let surrogate_times = (0..q).map(|k| parse_f64(&rec, &header, i + k, line)).collect::<Result<_>>()?;
        let surrogate_statuses = (0..q).map(|k| parse_code(&rec, &header, i + q + k, line)).collect::<Result<_>>()?;
        let baseline = (0..layout.p1)
            .map(|k| parse_f64(&rec, &header, i + 2 * q + k, line))
            .collect::<Result<_>>()?;
        out.push((
            row + 1,
            SubjectRecord {
                id: parse_id(&rec, &header, line)?,
                left: parse_f64(&rec, &header, 1, line)?,
                right: parse_f64(&rec, &header, 2, line)?,
                label,
                surrogate_times,
                surrogate_statuses,
                baseline,
                process_events: Vec::new(),
            },
        ));
    }
    Ok((layout, out))
}

fn read_process(path: &Path) -> Result<Vec<(usize, u64, f64)>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "event_time"] {
        return Err(SeedsError::Parse {
            line: 1,
            column: "header".into(),
            reason: "expected 'id,event_time'".into(),
        });
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, row + 2);
        if rec.len() != 2 {
            return Err(SeedsError::Parse {
                line,
                column: String::new(),
                reason: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        out.push((line, parse_id(&rec, &header, line)?, parse_f64(&rec, &header, 1, line)?));
    }
    Ok(out)
}

/// Loads and validates a dataset. Invariant violations report the 1-based
/// data row within the offending file.
pub fn load_dataset(labeled: &Path, unlabeled: &Path, process: Option<&Path>) -> Result<Dataset> {
    let (lay_l, mut lab) = read_records(labeled, true)?;
    let (lay_u, mut unl) = read_records(unlabeled, false)?;
    if lay_u.q != lay_l.q {
        return Err(SeedsError::DimensionMismatch {
            expected: lay_l.q,
            found: lay_u.q,
        });
    }
    if lay_u.p1 != lay_l.p1 {
        return Err(SeedsError::DimensionMismatch {
            expected: lay_l.p1,
            found: lay_u.p1,
        });
    }
    let mut index: HashMap<u64, (bool, usize)> = HashMap::new();
    for (set, recs) in [(true, &lab), (false, &unl)] {
        for (pos, (row, rec)) in recs.iter().enumerate() {
            if index.insert(rec.id, (set, pos)).is_some() {
                return Err(SeedsError::InvariantViolation {
                    row: *row,
                    rule: format!("unique id ({})", rec.id),
                });
            }
        }
    }
    if let Some(path) = process {
        for (line, id, time) in read_process(path)? {
            let (set, pos) = *index.get(&id).ok_or_else(|| SeedsError::Parse {
                line,
                column: "id".into(),
                reason: format!("no record with id {id}"),
            })?;
            let target = if set { &mut lab[pos].1 } else { &mut unl[pos].1 };
            target.process_events.push(time);
        }
        for (_, rec) in lab.iter_mut().chain(unl.iter_mut()) {
            rec.process_events.sort_by(f64::total_cmp);
        }
    }
    for (_, recs) in [(true, &lab), (false, &unl)] {
        for (row, rec) in recs.iter() {
            rec.check().map_err(|rule| SeedsError::InvariantViolation {
                row: *row,
                rule: rule.to_string(),
            })?;
        }
    }
    Dataset::new(
        lab.into_iter().map(|(_, r)| r).collect(),
        unl.into_iter().map(|(_, r)| r).collect(),
        process.is_some(),
    )
}

fn num(x: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{x}")
}

fn write_records(path: &Path, records: &[SubjectRecord], layout: &Layout) -> Result<()> {
    let mut w = Writer::from_path(path)?;
    w.write_record(layout.header())?;
    for rec in records {
        let mut row = vec![rec.id.to_string(), num(rec.left), num(rec.right)];
        if layout.labeled {
            let label = rec.label.ok_or(SeedsError::MissingLabel { id: rec.id })?;
            row.push(num(label.time));
            row.push(label.status.code().to_string());
        }
        row.extend(rec.surrogate_times.iter().map(|&x| num(x)));
        row.extend(rec.surrogate_statuses.iter().map(|s| s.code().to_string()));
        row.extend(rec.baseline.iter().map(|&z| num(z)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Paths written by [`write_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFiles {
    pub labeled: PathBuf,
    pub unlabeled: PathBuf,
    pub process: Option<PathBuf>,
}

impl DatasetFiles {
    /// `<prefix>labeled.csv` and friends; a prefix naming a directory gets
    /// the files inside it.
    pub fn with_prefix(prefix: &Path) -> Self {
        let s = prefix.to_string_lossy();
        let join = |name: &str| {
            if s.is_empty() || s.ends_with('/') || prefix.is_dir() {
                prefix.join(name)
            } else {
                PathBuf::from(format!("{s}{name}"))
            }
        };
        DatasetFiles {
            labeled: join("labeled.csv"),
            unlabeled: join("unlabeled.csv"),
            process: Some(join("process.csv")),
        }
    }
}

pub fn write_dataset(dataset: &Dataset, prefix: &Path) -> Result<DatasetFiles> {
    let mut files = DatasetFiles::with_prefix(prefix);
    if let Some(dir) = files.labeled.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let layout = |labeled| Layout {
        labeled,
        q: dataset.surrogate_dim(),
        p1: dataset.baseline_dim(),
    };
    write_records(&files.labeled, &dataset.labeled, &layout(true))?;
    write_records(&files.unlabeled, &dataset.unlabeled, &layout(false))?;
    if dataset.has_process {
        let path = files.process.as_ref().unwrap();
        let mut w = Writer::from_path(path)?;
        w.write_record(["id", "event_time"])?;
        for rec in dataset.labeled.iter().chain(&dataset.unlabeled) {
            for &e in &rec.process_events {
                w.write_record([rec.id.to_string(), num(e)])?;
            }
        }
        w.flush()?;
    } else {
        files.process = None;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    const LAB_HEADER: &str = "id,L,U,X,delta,Xstar_1,deltastar_1,Z_1\n";
    const UNL: &str = "id,L,U,Xstar_1,deltastar_1,Z_1\n9,0.5,2.0,0.5,3,1.0\n";

    #[test]
    fn schema_walk_through() {
        let dir = tempfile::tempdir().unwrap();
        let lab = write(dir.path(), "l.csv", &format!("{LAB_HEADER}1,1.0,3.0,2.0,1,3.0,2,5.0\n"));
        let unl = write(dir.path(), "u.csv", UNL);
        let ds = load_dataset(&lab, &unl, None).unwrap();
        let r = &ds.labeled[0];
        assert_eq!(r.label.unwrap().status, CensorCode::Exact);
        assert_eq!(r.surrogate_statuses[0], CensorCode::RightCensored);
        assert_eq!(r.baseline, vec![5.0]);
        assert_eq!(ds.big_n(), 1);
    }

    #[test]
    fn violations_carry_rows() {
        let dir = tempfile::tempdir().unwrap();
        let unl = write(dir.path(), "u.csv", UNL);
        let body = format!("{LAB_HEADER}1,1.0,3.0,2.0,1,3.0,2,5.0\n2,3.0,3.0,3.0,2,3.0,2,1.0\n");
        let lab = write(dir.path(), "l.csv", &body);
        assert_eq!(
            load_dataset(&lab, &unl, None),
            Err(SeedsError::InvariantViolation {
                row: 2,
                rule: "L<U".into()
            })
        );
        // right-censored surrogate must sit at U
        let lab = write(dir.path(), "l2.csv", &format!("{LAB_HEADER}1,1.0,3.0,2.0,1,1.5,2,5.0\n"));
        assert_eq!(
            load_dataset(&lab, &unl, None),
            Err(SeedsError::InvariantViolation {
                row: 1,
                rule: "surrogate coherence".into()
            })
        );
        let lab = write(dir.path(), "l3.csv", &format!("{LAB_HEADER}1,1.0,3.0,2.0,4,3.0,2,5.0\n"));
        match load_dataset(&lab, &unl, None) {
            Err(SeedsError::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, "delta");
            }
            other => panic!("{other:?}"),
        }
        let lab = write(dir.path(), "l4.csv", "id,L,U,delta,X\n");
        assert!(matches!(load_dataset(&lab, &unl, None), Err(SeedsError::Parse { line: 1, .. })));
    }

    #[test]
    fn process_events_attach_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let lab = write(dir.path(), "l.csv", &format!("{LAB_HEADER}1,1.0,3.0,2.0,1,3.0,2,5.0\n"));
        let unl = write(dir.path(), "u.csv", UNL);
        let proc_ = write(dir.path(), "p.csv", "id,event_time\n1,2.5\n9,1.5\n1,1.5\n");
        let ds = load_dataset(&lab, &unl, Some(&proc_)).unwrap();
        assert_eq!(ds.labeled[0].process_events, vec![1.5, 2.5]);
        assert_eq!(ds.unlabeled[0].process_events, vec![1.5]);
        let bad = write(dir.path(), "p2.csv", "id,event_time\n1,0.5\n");
        assert!(matches!(
            load_dataset(&lab, &unl, Some(&bad)),
            Err(SeedsError::InvariantViolation { row: 1, .. })
        ));
    }
}
