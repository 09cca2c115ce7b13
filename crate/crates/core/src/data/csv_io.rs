use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use super::Series;
use crate::numcore::Matrix;
use crate::{Error, Result};

/// A column addressed by header name (case-insensitive) or zero-based index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl ColumnRef {
    /// Parses a bare integer as an index and anything else as a name.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.trim().to_string()),
        }
    }

    fn label(&self) -> String {
        match self {
            ColumnRef::Name(n) => n.clone(),
            ColumnRef::Index(i) => format!("#{i}"),
        }
    }
}

/// Column roles and dialect of an input CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesSpec {
    pub observations: Vec<ColumnRef>,
    pub controls: Vec<ColumnRef>,
    pub timestamp: Option<ColumnRef>,
    pub delimiter: u8,
    pub has_header: bool,
}

impl SeriesSpec {
    pub fn new(observations: Vec<ColumnRef>, controls: Vec<ColumnRef>) -> Self {
        Self {
            observations,
            controls,
            timestamp: None,
            delimiter: b',',
            has_header: true,
        }
    }

    /// Layout written by [`write_csv`]: `t, x1.., u1..`.
    pub fn standard(d_x: usize, d_u: usize) -> Self {
        let names = |p: &str, n: usize| (1..=n).map(|i| ColumnRef::Name(format!("{p}{i}"))).collect();
        Self {
            observations: names("x", d_x),
            controls: names("u", d_u),
            timestamp: Some(ColumnRef::Name("t".into())),
            delimiter: b',',
            has_header: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.observations.is_empty() {
            return Err(Error::InvalidConfig("no observation columns".into()));
        }
        Ok(())
    }
}

fn resolve(col: &ColumnRef, header: Option<&csv::StringRecord>, width: usize) -> Result<usize> {
    match col {
        ColumnRef::Index(i) if *i < width => Ok(*i),
        ColumnRef::Index(_) => Err(Error::MissingColumn(col.label())),
        ColumnRef::Name(name) => header
            .and_then(|h| h.iter().position(|c| c.trim().eq_ignore_ascii_case(name)))
            .ok_or_else(|| Error::MissingColumn(name.clone())),
    }
}

const DATETIME_FORMATS: [&str; 6] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%d.%m.%Y %H:%M:%S",
    "%m/%d/%Y %H:%M",
    "%m/%d/%Y %H:%M:%S",
];

/// Orders a timestamp field: plain numbers, RFC 3339, common date-time
/// layouts, or a bare `YYYY-MM-DD` date.
fn timestamp_key(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp() as f64);
    }
    for f in DATETIME_FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
            return Some(t.and_utc().timestamp() as f64);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc().timestamp() as f64)
}

/// Reads the observation and control columns of a delimited file.
///
/// Rows must be complete and numeric; when a timestamp column is given, its
/// values must be non-decreasing. Errors carry the 1-based file line.
pub fn load_csv(path: &Path, spec: &SeriesSpec) -> Result<Series> {
    spec.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter)
        .has_headers(spec.has_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = if spec.has_header {
        Some(reader.headers().map_err(|e| csv_error(path, e))?.clone())
    } else {
        None
    };

    let mut obs_idx: Option<Vec<usize>> = None;
    let mut ctrl_idx: Vec<usize> = Vec::new();
    let mut ts_idx: Option<usize> = None;
    let mut names: Vec<String> = Vec::new();
    let mut xs = Vec::new();
    let mut us = Vec::new();
    let mut rows = 0;
    let mut last_ts = f64::NEG_INFINITY;

    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if obs_idx.is_none() {
            let width = header.as_ref().map_or(record.len(), |h| h.len());
            let o = spec
                .observations
                .iter()
                .map(|c| resolve(c, header.as_ref(), width))
                .collect::<Result<Vec<_>>>()?;
            ctrl_idx = spec
                .controls
                .iter()
                .map(|c| resolve(c, header.as_ref(), width))
                .collect::<Result<Vec<_>>>()?;
            if o.iter().any(|i| ctrl_idx.contains(i)) {
                return Err(Error::InvalidConfig("observation and control columns overlap".into()));
            }
            ts_idx = spec
                .timestamp
                .as_ref()
                .map(|c| resolve(c, header.as_ref(), width))
                .transpose()?;
            names = (0..width)
                .map(|i| {
                    header
                        .as_ref()
                        .and_then(|h| h.get(i))
                        .map_or_else(|| format!("#{i}"), |s| s.trim().to_string())
                })
                .collect();
            obs_idx = Some(o);
        }
        let obs = obs_idx.as_ref().expect("resolved above");

        let field = |i: usize| -> Result<f64> {
            let raw = record.get(i).ok_or_else(|| Error::Parse {
                row: line,
                column: names[i].clone(),
                message: "missing field".into(),
            })?;
            let raw = raw.trim();
            if raw.is_empty() {
                return Err(Error::Parse {
                    row: line,
                    column: names[i].clone(),
                    message: "empty value".into(),
                });
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row: line,
                    column: names[i].clone(),
                    message: format!("`{raw}` is not a finite number"),
                }),
            }
        };

        if let Some(ti) = ts_idx {
            let raw = record.get(ti).unwrap_or("");
            let key = timestamp_key(raw).ok_or_else(|| Error::Parse {
                row: line,
                column: names[ti].clone(),
                message: format!("unrecognized timestamp `{}`", raw.trim()),
            })?;
            if key < last_ts {
                return Err(Error::Parse {
                    row: line,
                    column: names[ti].clone(),
                    message: "timestamp earlier than the previous row".into(),
                });
            }
            last_ts = key;
        }
        for &i in obs {
            xs.push(field(i)?);
        }
        for &i in &ctrl_idx {
            us.push(field(i)?);
        }
        rows += 1;
    }
    let d_x = spec.observations.len();
    let d_u = spec.controls.len();
    Series::new(Matrix::from_vec(rows, d_x, xs)?, Matrix::from_vec(rows, d_u, us)?)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            row,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

/// Writes `series` as `t, x1.., u1..` with `t` the row index. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_csv(path: &Path, series: &Series) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=series.d_x()).map(|i| format!("x{i}")));
    header.extend((1..=series.d_u()).map(|i| format!("u{i}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for t in 0..series.len() {
        let mut rec = vec![t.to_string()];
        rec.extend(series.x.row(t).iter().map(|v| v.to_string()));
        rec.extend(series.u.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn names(ns: &[&str]) -> Vec<ColumnRef> {
        ns.iter().map(|n| ColumnRef::Name(n.to_string())).collect()
    }

    #[test]
    fn well_formed_file_maps_columns() {
        let f = file("time,A,b,C\n1,1.0,2.0,3.0\n2,4.0,5.0,6.0\n3,7.0,8.0,9.0\n");
        let mut spec = SeriesSpec::new(names(&["c", "a"]), names(&["B"]));
        spec.timestamp = Some(ColumnRef::Name("time".into()));
        let s = load_csv(f.path(), &spec).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.x.row(1), &[6.0, 4.0]);
        assert_eq!(s.u.row(2), &[8.0]);
    }

    #[test]
    fn non_numeric_value_names_the_row() {
        let f = file("a,b\n1,2\n3,oops\n");
        let spec = SeriesSpec::new(names(&["a", "b"]), vec![]);
        match load_csv(f.path(), &spec) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_field_is_rejected() {
        let f = file("a,b\n1,\n");
        let spec = SeriesSpec::new(names(&["a", "b"]), vec![]);
        assert!(matches!(load_csv(f.path(), &spec), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn missing_column_is_reported() {
        let f = file("a,b\n1,2\n");
        let spec = SeriesSpec::new(names(&["z"]), vec![]);
        assert!(matches!(load_csv(f.path(), &spec), Err(Error::MissingColumn(c)) if c == "z"));
    }

    #[test]
    fn index_columns_and_custom_delimiter() {
        let f = file("1;2;3\n4;5;6\n");
        let mut spec = SeriesSpec::new(vec![ColumnRef::Index(2)], vec![ColumnRef::Index(0)]);
        spec.delimiter = b';';
        spec.has_header = false;
        let s = load_csv(f.path(), &spec).unwrap();
        assert_eq!(s.x.as_slice(), &[3.0, 6.0]);
        assert_eq!(s.u.as_slice(), &[1.0, 4.0]);
    }

    #[test]
    fn out_of_order_timestamps_are_rejected() {
        let f = file("when,a\n2017-01-01 00:10:00,1\n2017-01-01 00:00:00,2\n");
        let mut spec = SeriesSpec::new(names(&["a"]), vec![]);
        spec.timestamp = Some(ColumnRef::Name("when".into()));
        assert!(matches!(load_csv(f.path(), &spec), Err(Error::Parse { row: 3, .. })));
        let ok = file("when,a\n1/1/2017 0:00,1\n1/1/2017 0:10,2\n");
        assert_eq!(load_csv(ok.path(), &spec).unwrap().len(), 2);
    }

    #[test]
    fn overlapping_roles_are_rejected() {
        let f = file("a,b\n1,2\n");
        let spec = SeriesSpec::new(names(&["a"]), names(&["A"]));
        assert!(matches!(load_csv(f.path(), &spec), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn power_consumption_layout_loads() {
        let header = "DateTime,Temperature,Humidity,Wind Speed,general diffuse flows,diffuse flows,Zone 1 Power Consumption,Zone 2  Power Consumption,Zone 3  Power Consumption";
        let f = file(&format!(
            "{header}\n1/1/2017 0:00,6.559,73.8,0.083,0.051,0.119,34055.69,16128.87,20240.96\n1/1/2017 0:10,6.414,74.5,0.083,0.07,0.085,29814.68,19375.07,20131.08\n"
        ));
        let mut spec = SeriesSpec::new(
            names(&[
                "Zone 1 Power Consumption",
                "Zone 2  Power Consumption",
                "Zone 3  Power Consumption",
            ]),
            names(&[
                "Temperature",
                "Humidity",
                "Wind Speed",
                "general diffuse flows",
                "diffuse flows",
            ]),
        );
        spec.timestamp = Some(ColumnRef::Name("DateTime".into()));
        let s = load_csv(f.path(), &spec).unwrap();
        assert_eq!((s.d_x(), s.d_u()), (3, 5));
    }

    #[test]
    fn write_then_load_round_trips_exactly() {
        let x = Matrix::from_rows(&[[0.1, 1.0 / 3.0], [-2.5e-12, 7.0]]).unwrap();
        let u = Matrix::from_rows(&[[std::f64::consts::PI], [-0.0]]).unwrap();
        let s = Series::new(x, u).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_csv(&p, &s).unwrap();
        assert_eq!(load_csv(&p, &SeriesSpec::standard(2, 1)).unwrap(), s);
    }
}
