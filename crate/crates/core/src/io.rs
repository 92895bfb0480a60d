//! CSV and JSON input/output.
//!
//! A panel CSV has a header `time,<series ids...>` and one row per period.
//! Matrices are written with Rust's shortest round-trip float formatting and
//! `\n` line endings.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{FactorFit, FitInfo, Panel};

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::Utf8 { err, .. } => Error::Data { line, message: format!("invalid UTF-8: {err}") },
        other => Error::Data { line, message: format!("{other:?}") },
    }
}

/// Parses a panel from CSV text.
pub fn read_panel_from<R: Read>(reader: R) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => return Err(Error::Data { line: 1, message: "file is empty".into() }),
    };
    if header.len() < 2 {
        return Err(Error::Data { line: 1, message: "header needs a time column and at least one series".into() });
    }
    let series_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let n = series_ids.len();
    let mut time_ids = Vec::new();
    let mut data = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != n + 1 {
            return Err(Error::Data { line, message: format!("expected {} fields, found {}", n + 1, rec.len()) });
        }
        time_ids.push(rec[0].trim().to_string());
        for (k, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Data {
                line,
                message: format!("value {:?} for series {} is not a number", cell, series_ids[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Data { line, message: format!("value for series {} is not finite", series_ids[k]) });
            }
            data.push(v);
        }
    }
    if time_ids.is_empty() {
        return Err(Error::Data { line: 2, message: "no data rows".into() });
    }
    let t = time_ids.len();
    // rows of the file are periods, so the buffer is T × N row-major = N × T column-major
    let values = DMatrix::from_vec(n, t, data);
    Panel::new(values, series_ids, time_ids)
}

pub fn read_panel(path: &Path) -> Result<Panel> {
    read_panel_from(File::open(path)?)
}

/// Shortest round-trip text for `x`, in exponent form outside `[1e-5, 1e16)`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) || !a.is_finite() {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn write_labeled<W: Write>(out: W, corner: &str, columns: &[String], rows: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header = std::iter::once(corner.to_string()).chain(columns.iter().cloned());
    w.write_record(header).map_err(csv_error)?;
    for (i, label) in rows.iter().enumerate() {
        let row = std::iter::once(label.clone()).chain((0..m.ncols()).map(|j| format_float(m[(i, j)])));
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_to<W: Write>(out: W, panel: &Panel) -> Result<()> {
    write_labeled(out, "time", panel.series_ids(), panel.time_ids(), &panel.values().transpose())
}

pub fn write_panel(path: &Path, panel: &Panel) -> Result<()> {
    write_panel_to(BufWriter::new(File::create(path)?), panel)
}

fn factor_names(r: usize) -> Vec<String> {
    (1..=r).map(|k| format!("f{k}")).collect()
}

/// Writes `N × r` loadings as `series,f1..fr`.
pub fn write_loadings(path: &Path, series_ids: &[String], loadings: &DMatrix<f64>) -> Result<()> {
    if series_ids.len() != loadings.nrows() {
        return Err(Error::dim("series labels do not match the loadings"));
    }
    let out = BufWriter::new(File::create(path)?);
    write_labeled(out, "series", &factor_names(loadings.ncols()), series_ids, loadings)
}

/// Writes `T × r` factors as `time,f1..fr`.
pub fn write_factors(path: &Path, time_ids: &[String], factors: &DMatrix<f64>) -> Result<()> {
    if time_ids.len() != factors.nrows() {
        return Err(Error::dim("time labels do not match the factors"));
    }
    let out = BufWriter::new(File::create(path)?);
    write_labeled(out, "time", &factor_names(factors.ncols()), time_ids, factors)
}

/// Writes a header and string rows as CSV.
pub fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON followed by a newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

#[derive(Serialize)]
struct FitMeta<'a> {
    n: usize,
    t: usize,
    rank: usize,
    #[serde(flatten)]
    info: &'a FitInfo,
}

/// Writes `loadings.csv`, `factors.csv` and `meta.json` into `dir`.
pub fn write_fit(dir: &Path, panel: &Panel, fit: &FactorFit) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_loadings(&dir.join("loadings.csv"), panel.series_ids(), &fit.loadings)?;
    write_factors(&dir.join("factors.csv"), panel.time_ids(), &fit.factors)?;
    let meta = FitMeta { n: panel.n(), t: panel.t(), rank: fit.rank, info: &fit.info };
    write_json(&dir.join("meta.json"), &meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let values = DMatrix::from_row_slice(2, 3, &[1.5, -2.0, 0.1, 3.0, 1e-300, 7.0]);
        let panel = Panel::new(values, vec!["a".into(), "b".into()], vec!["2001-01".into(), "2001-02".into(), "2001-03".into()]).unwrap();
        let mut buf = Vec::new();
        write_panel_to(&mut buf, &panel).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "time,a,b\n2001-01,1.5,3\n2001-02,-2,1e-300\n2001-03,0.1,7\n");
        assert_eq!(read_panel_from(buf.as_slice()).unwrap(), panel);
    }

    #[test]
    fn float_text() {
        assert_eq!(format_float(0.1), "0.1");
        assert_eq!(format_float(-2.0), "-2");
        assert_eq!(format_float(1.5e-7), "1.5e-7");
        assert_eq!(format_float(3e20), "3e20");
        for x in [1e-300, 0.1 + 0.2, -123456.789, 5e-324] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn bad_cell_reports_line() {
        let text = "time,a,b\n1,1,2\n2,1,2\n3,1,2\n4,x,2\n";
        match read_panel_from(text.as_bytes()) {
            Err(Error::Data { line, message }) => {
                assert_eq!(line, 5);
                assert!(message.contains("series a"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = read_panel_from(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("row 5"), "{err}");
    }

    #[test]
    fn ragged_and_empty_inputs() {
        assert!(matches!(read_panel_from("time,a\n1,2,3\n".as_bytes()), Err(Error::Data { line: 2, .. })));
        assert!(matches!(read_panel_from("".as_bytes()), Err(Error::Data { line: 1, .. })));
        assert!(matches!(read_panel_from("time,a\n".as_bytes()), Err(Error::Data { .. })));
        assert!(matches!(read_panel_from("time,a\n1,inf\n".as_bytes()), Err(Error::Data { line: 2, .. })));
    }

    #[test]
    fn fit_directory() {
        let dir = tempfile::tempdir().unwrap();
        let values = DMatrix::from_fn(4, 5, |i, j| (i * 5 + j) as f64 + if i == j { 3.0 } else { 0.0 });
        let panel = Panel::from_matrix(values).unwrap();
        let fit = crate::estimators::fit_pca(&panel, 2).unwrap();
        write_fit(dir.path(), &panel, &fit).unwrap();
        let l = std::fs::read_to_string(dir.path().join("loadings.csv")).unwrap();
        assert!(l.starts_with("series,f1,f2\ns1,"));
        assert_eq!(l.lines().count(), 5);
        let f = std::fs::read_to_string(dir.path().join("factors.csv")).unwrap();
        assert!(f.starts_with("time,f1,f2\n1,"));
        let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta["method"], "pca");
        assert_eq!(meta["rank"], 2);
    }
}
