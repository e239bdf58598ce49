//! Text formats for maps, photon streams and ZPL catalogs, plus the JSON
//! report envelope.
//!
//! Map (`# plmap v1`):
//! ```text
//! # plmap v1
//! rows=2
//! cols=3
//! pixel_size_um=0.13
//! label=sil-07
//!
//! 1 2 3
//! 4 5 6
//! ```
//! Stream (`# hbt v1`): `duration_ps=<int>` then one `channel,time_ps` line
//! per event. Catalog (`# zplcat v1`): one `label=wavelength_nm,tolerance_nm`
//! line per entry. In catalogs and CSV data, blank lines and lines starting
//! with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{ModelError, PhotonEvent, PhotonStream, PlMap};
use crate::spectral::{CatalogError, ZplCatalog, ZplLine};

pub const MAP_MAGIC: &str = "# plmap";
pub const STREAM_MAGIC: &str = "# hbt";
pub const CATALOG_MAGIC: &str = "# zplcat";
pub const FORMAT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed header: {message}")]
    MalformedHeader { line: usize, message: String },
    #[error("line {line}: unsupported {format} version {found:?}")]
    UnsupportedVersion { line: usize, format: &'static str, found: String },
    #[error("line {line}: {message}")]
    DimensionMismatch { line: usize, message: String },
    #[error("line {line}: cannot parse {what} from {text:?}")]
    Parse { line: usize, what: &'static str, text: String },
    #[error("line {line}, column {column}: negative count {value}")]
    NegativeCount { line: usize, column: usize, value: f64 },
    #[error("line {line}: channel {channel} is not 0 or 1")]
    ChannelOutOfRange { line: usize, channel: u64 },
    #[error("line {line}: event at {time_ps} ps lies beyond duration {duration_ps} ps")]
    EventAfterDuration { line: usize, time_ps: u64, duration_ps: u64 },
    #[error("stream file is empty")]
    EmptyStream,
    #[error("line {line}: {source}")]
    Catalog { line: usize, source: CatalogError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn parse<T: std::str::FromStr>(text: &str, line: usize, what: &'static str) -> Result<T, IoError> {
    text.trim().parse().map_err(|_| IoError::Parse { line, what, text: text.trim().to_string() })
}

fn check_magic(first: Option<(usize, String)>, magic: &'static str) -> Result<(), IoError> {
    let Some((line, text)) = first else {
        return Err(IoError::MalformedHeader { line: 1, message: format!("missing `{magic} {FORMAT_VERSION}` line") });
    };
    let text = text.trim_end();
    let version = text.strip_prefix(magic).map(str::trim).filter(|_| text.starts_with(&format!("{magic} ")));
    match version {
        Some(FORMAT_VERSION) => Ok(()),
        Some(v) => Err(IoError::UnsupportedVersion { line, format: magic, found: v.to_string() }),
        None => Err(IoError::MalformedHeader {
            line,
            message: format!("expected `{magic} {FORMAT_VERSION}`, found {text:?}"),
        }),
    }
}

/// Reads `key=value` from the next line.
fn header_value(
    lines: &mut impl Iterator<Item = (usize, String)>,
    key: &str,
    last_line: &mut usize,
) -> Result<(usize, String), IoError> {
    let Some((line, text)) = lines.next() else {
        return Err(IoError::MalformedHeader { line: *last_line + 1, message: format!("missing `{key}=` line") });
    };
    *last_line = line;
    match text.split_once('=') {
        Some((k, v)) if k.trim() == key => Ok((line, v.to_string())),
        _ => Err(IoError::MalformedHeader { line, message: format!("expected `{key}=`, found {text:?}") }),
    }
}

fn numbered_lines(reader: impl BufRead) -> impl Iterator<Item = Result<(usize, String), std::io::Error>> {
    reader.lines().enumerate().map(|(i, l)| l.map(|l| (i + 1, l)))
}

pub fn read_map_from(reader: impl BufRead) -> Result<PlMap, IoError> {
    let lines: Vec<(usize, String)> = numbered_lines(reader).collect::<Result<_, _>>()?;
    let mut it = lines.into_iter();
    check_magic(it.next(), MAP_MAGIC)?;
    let mut last = 1;
    let (l, rows) = header_value(&mut it, "rows", &mut last)?;
    let rows: usize = parse(&rows, l, "rows")?;
    let (l, cols) = header_value(&mut it, "cols", &mut last)?;
    let cols: usize = parse(&cols, l, "cols")?;
    let (l, px) = header_value(&mut it, "pixel_size_um", &mut last)?;
    let px: f64 = parse(&px, l, "pixel_size_um")?;
    let (_, label) = header_value(&mut it, "label", &mut last)?;
    match it.next() {
        Some((_, t)) if t.trim().is_empty() => {}
        Some((line, t)) => {
            return Err(IoError::MalformedHeader {
                line,
                message: format!("expected blank line after header, found {t:?}"),
            })
        }
        None => {
            return Err(IoError::MalformedHeader { line: last + 1, message: "missing blank line after header".into() })
        }
    }
    let mut counts = Vec::with_capacity(rows * cols);
    let mut data_rows = 0;
    let mut last_line = last + 1;
    for (line, text) in it {
        last_line = line;
        if text.trim().is_empty() {
            continue;
        }
        data_rows += 1;
        if data_rows > rows {
            return Err(IoError::DimensionMismatch { line, message: format!("more than {rows} data rows") });
        }
        let mut n = 0;
        for (j, tok) in text.split_whitespace().enumerate() {
            let v: f64 = parse(tok, line, "count")?;
            if !v.is_finite() {
                return Err(IoError::Parse { line, what: "finite count", text: tok.into() });
            }
            if v < 0.0 {
                return Err(IoError::NegativeCount { line, column: j + 1, value: v });
            }
            counts.push(v);
            n += 1;
        }
        if n != cols {
            return Err(IoError::DimensionMismatch { line, message: format!("expected {cols} values, found {n}") });
        }
    }
    if data_rows != rows {
        return Err(IoError::DimensionMismatch {
            line: last_line,
            message: format!("expected {rows} data rows, found {data_rows}"),
        });
    }
    Ok(PlMap::from_vec(rows, cols, px, counts, label)?)
}

pub fn write_map_to(map: &PlMap, mut w: impl Write) -> Result<(), IoError> {
    let mut text = String::new();
    writeln!(text, "{MAP_MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(
        text,
        "rows={}\ncols={}\npixel_size_um={}\nlabel={}\n",
        map.rows(),
        map.cols(),
        map.pixel_size(),
        map.label()
    )
    .unwrap();
    w.write_all(text.as_bytes())?;
    for r in 0..map.rows() {
        text.clear();
        for (j, v) in map.row(r).iter().enumerate() {
            if j > 0 {
                text.push(' ');
            }
            write!(text, "{v}").unwrap();
        }
        text.push('\n');
        w.write_all(text.as_bytes())?;
    }
    Ok(())
}

pub fn read_map(path: impl AsRef<Path>) -> Result<PlMap, IoError> {
    read_map_from(BufReader::new(fs::File::open(path)?))
}

pub fn write_map(map: &PlMap, path: impl AsRef<Path>) -> Result<(), IoError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_map_to(map, &mut w)?;
    w.flush()?;
    Ok(())
}

/// A stream read from disk; `resorted` is set when the file's events were
/// not in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFile {
    pub stream: PhotonStream,
    pub resorted: bool,
}

pub fn read_stream_from(reader: impl BufRead) -> Result<StreamFile, IoError> {
    let mut it = numbered_lines(reader);
    let first = it.next().transpose()?;
    if first.is_none() {
        return Err(IoError::EmptyStream);
    }
    check_magic(first, STREAM_MAGIC)?;
    let Some(second) = it.next().transpose()? else {
        return Err(IoError::MalformedHeader { line: 2, message: "missing `duration_ps=` line".into() });
    };
    let mut header = std::iter::once(second);
    let mut last = 1;
    let (l, d) = header_value(&mut header, "duration_ps", &mut last)?;
    let duration_ps: u64 = parse(&d, l, "duration_ps")?;
    let mut events = Vec::new();
    let mut resorted = false;
    for item in it {
        let (line, text) = item?;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let Some((ch, t)) = text.split_once(',') else {
            return Err(IoError::Parse { line, what: "`channel,time_ps`", text: text.into() });
        };
        let channel: u64 = parse(ch, line, "channel")?;
        if channel > 1 {
            return Err(IoError::ChannelOutOfRange { line, channel });
        }
        let time_ps: u64 = parse(t, line, "time_ps")?;
        if time_ps > duration_ps {
            return Err(IoError::EventAfterDuration { line, time_ps, duration_ps });
        }
        let ev = PhotonEvent::new(channel as u8, time_ps);
        if events.last().is_some_and(|prev: &PhotonEvent| *prev > ev) {
            resorted = true;
        }
        events.push(ev);
    }
    if resorted {
        events.sort_unstable();
    }
    Ok(StreamFile { stream: PhotonStream::new(events, duration_ps)?, resorted })
}

pub fn write_stream_to(stream: &PhotonStream, mut w: impl Write) -> Result<(), IoError> {
    writeln!(w, "{STREAM_MAGIC} {FORMAT_VERSION}")?;
    writeln!(w, "duration_ps={}", stream.duration_ps())?;
    for e in stream.events() {
        writeln!(w, "{},{}", e.channel, e.time_ps)?;
    }
    Ok(())
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<StreamFile, IoError> {
    read_stream_from(BufReader::new(fs::File::open(path)?))
}

pub fn write_stream(stream: &PhotonStream, path: impl AsRef<Path>) -> Result<(), IoError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_stream_to(stream, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_catalog_from(reader: impl BufRead) -> Result<ZplCatalog, IoError> {
    let mut it = numbered_lines(reader);
    check_magic(it.next().transpose()?, CATALOG_MAGIC)?;
    let mut entries = Vec::new();
    let mut last_line = 1;
    for item in it {
        let (line, text) = item?;
        last_line = line;
        let text = text.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let (label, rest) = text.rsplit_once('=').ok_or_else(|| IoError::Parse {
            line,
            what: "`label=wavelength_nm,tolerance_nm`",
            text: text.into(),
        })?;
        let (w, t) = rest.split_once(',').ok_or_else(|| IoError::Parse {
            line,
            what: "`wavelength_nm,tolerance_nm`",
            text: rest.into(),
        })?;
        let entry = ZplLine {
            label: label.trim().to_string(),
            wavelength_nm: parse(w, line, "wavelength_nm")?,
            tolerance_nm: parse(t, line, "tolerance_nm")?,
        };
        ZplCatalog::new(vec![entry.clone()]).map_err(|source| IoError::Catalog { line, source })?;
        if entries.iter().any(|e: &ZplLine| e.label == entry.label) {
            return Err(IoError::Catalog { line, source: CatalogError::DuplicateLabel(entry.label) });
        }
        entries.push(entry);
    }
    ZplCatalog::new(entries).map_err(|source| IoError::Catalog { line: last_line, source })
}

pub fn write_catalog_to(catalog: &ZplCatalog, mut w: impl Write) -> Result<(), IoError> {
    writeln!(w, "{CATALOG_MAGIC} {FORMAT_VERSION}")?;
    for e in catalog.entries() {
        writeln!(w, "{}={},{}", e.label, e.wavelength_nm, e.tolerance_nm)?;
    }
    Ok(())
}

pub fn read_catalog(path: impl AsRef<Path>) -> Result<ZplCatalog, IoError> {
    read_catalog_from(BufReader::new(fs::File::open(path)?))
}

/// Numeric CSV rows with between `min_cols` and `max_cols` fields. A first
/// non-comment line that does not parse is taken as a column header.
pub fn read_csv_from(reader: impl Read, min_cols: usize, max_cols: usize) -> Result<Vec<Vec<f64>>, IoError> {
    let mut rows = Vec::new();
    let mut seen_data = false;
    for item in numbered_lines(BufReader::new(reader)) {
        let (line, text) = item?;
        let text = text.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if !seen_data => {
                seen_data = true;
                continue;
            }
            Err(_) => return Err(IoError::Parse { line, what: "numeric CSV row", text: text.into() }),
        };
        seen_data = true;
        if values.len() < min_cols || values.len() > max_cols {
            return Err(IoError::DimensionMismatch {
                line,
                message: format!("expected {min_cols} to {max_cols} fields, found {}", values.len()),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(IoError::Parse { line, what: "finite number", text: v.to_string() });
        }
        rows.push(values);
    }
    Ok(rows)
}

pub fn read_csv(path: impl AsRef<Path>, min_cols: usize, max_cols: usize) -> Result<Vec<Vec<f64>>, IoError> {
    read_csv_from(fs::File::open(path)?, min_cols, max_cols)
}

/// Writes a header line and numeric rows.
pub fn write_csv(
    path: impl AsRef<Path>,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<(), IoError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let text: Vec<String> = row.iter().map(|v| format_significant(*v)).collect();
        writeln!(w, "{}", text.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Significant digits kept for numbers in reports.
pub const REPORT_DIGITS: usize = 12;

/// Rounds to [`REPORT_DIGITS`] significant digits, returning the shortest
/// decimal that reads back to the rounded value.
pub fn round_significant(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", REPORT_DIGITS - 1, v).parse().expect("formatted float parses")
}

fn format_significant(v: f64) -> String {
    format!("{}", round_significant(v))
}

/// JSON report envelope shared by analysis results and simulator manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub inputs: Value,
    pub results: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Value>,
}

impl Report {
    pub fn new(tool: impl Into<String>, inputs: Value, results: Value) -> Self {
        Self { tool: tool.into(), version: env!("CARGO_PKG_VERSION").to_string(), inputs, results, ground_truth: None }
    }

    pub fn with_ground_truth(mut self, truth: Value) -> Self {
        self.ground_truth = Some(truth);
        self
    }

    /// Pretty JSON with every float rounded to [`REPORT_DIGITS`] digits.
    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serialises");
        round_value(&mut value);
        serde_json::to_string_pretty(&value).expect("value serialises") + "\n"
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64().and_then(|x| serde_json::Number::from_f64(round_significant(x))) {
                *n = x;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Reads the `results` object of a report, or the whole document when it
/// is not a report.
pub fn read_results(path: impl AsRef<Path>) -> Result<Value, IoError> {
    let value: Value = serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
    Ok(match value {
        Value::Object(mut map) if map.contains_key("tool") && map.contains_key("results") => {
            map.remove("results").expect("checked")
        }
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map_text(header_rows: usize, data: &str) -> String {
        format!("# plmap v1\nrows={header_rows}\ncols=3\npixel_size_um=0.13\nlabel=test\n\n{data}")
    }

    #[test]
    fn map_round_trip() {
        let map =
            PlMap::from_vec(2, 3, 0.13, vec![1.0, 0.1 + 0.2, 3.5e-7, 0.0, 12345.678, 1e300], "a label = b").unwrap();
        let mut buf = Vec::new();
        write_map_to(&map, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("# plmap v1\nrows=2\ncols=3\n"));
        assert_eq!(read_map_from(&buf[..]).unwrap(), map);
    }

    #[test]
    fn map_dimension_mismatch() {
        let err = read_map_from(map_text(2, "1 2 3\n4 5 6\n7 8 9\n").as_bytes()).unwrap_err();
        assert!(matches!(err, IoError::DimensionMismatch { line: 9, .. }), "{err}");
        let err = read_map_from(map_text(2, "1 2 3\n4 5\n").as_bytes()).unwrap_err();
        assert!(matches!(err, IoError::DimensionMismatch { line: 8, .. }), "{err}");
        let err = read_map_from(map_text(3, "1 2 3\n").as_bytes()).unwrap_err();
        assert!(matches!(err, IoError::DimensionMismatch { .. }));
    }

    #[test]
    fn map_header_errors() {
        let missing = "# plmap v1\nrows=1\ncols=1\nlabel=x\n\n1\n";
        assert!(matches!(read_map_from(missing.as_bytes()), Err(IoError::MalformedHeader { line: 4, .. })));
        let version = "# plmap v2\nrows=1\n";
        assert!(matches!(read_map_from(version.as_bytes()), Err(IoError::UnsupportedVersion { line: 1, .. })));
        assert!(matches!(read_map_from("hello\n".as_bytes()), Err(IoError::MalformedHeader { line: 1, .. })));
        let neg = map_text(1, "1 -2 3\n");
        assert!(matches!(read_map_from(neg.as_bytes()), Err(IoError::NegativeCount { line: 7, column: 2, .. })));
        let bad = map_text(1, "1 x 3\n");
        assert!(matches!(read_map_from(bad.as_bytes()), Err(IoError::Parse { line: 7, .. })));
    }

    #[test]
    fn stream_round_trip_and_sorting() {
        let events: Vec<PhotonEvent> = (0..1000u64).map(|i| PhotonEvent::new((i % 2) as u8, i * 37 + i % 5)).collect();
        let stream = PhotonStream::new(events, 100_000).unwrap();
        let mut buf = Vec::new();
        write_stream_to(&stream, &mut buf).unwrap();
        let back = read_stream_from(&buf[..]).unwrap();
        assert_eq!(back.stream, stream);
        assert!(!back.resorted);

        let text = "# hbt v1\nduration_ps=100\n1,50\n0,10\n";
        let back = read_stream_from(text.as_bytes()).unwrap();
        assert!(back.resorted);
        assert_eq!(back.stream.events()[0], PhotonEvent::new(0, 10));
    }

    #[test]
    fn stream_errors() {
        assert!(matches!(read_stream_from("".as_bytes()), Err(IoError::EmptyStream)));
        let ch = "# hbt v1\nduration_ps=100\n0,1\n2,5\n";
        assert!(matches!(read_stream_from(ch.as_bytes()), Err(IoError::ChannelOutOfRange { line: 4, channel: 2 })));
        let late = "# hbt v1\nduration_ps=100\n0,101\n";
        assert!(matches!(read_stream_from(late.as_bytes()), Err(IoError::EventAfterDuration { line: 3, .. })));
        assert!(matches!(read_stream_from("# hbt v9\n".as_bytes()), Err(IoError::UnsupportedVersion { .. })));
        assert!(matches!(read_stream_from("# hbt v1\n".as_bytes()), Err(IoError::MalformedHeader { line: 2, .. })));
        let header_only = read_stream_from("# hbt v1\nduration_ps=10\n".as_bytes()).unwrap();
        assert!(header_only.stream.is_empty());
    }

    #[test]
    fn catalog_round_trip() {
        let cat = ZplCatalog::default();
        let mut buf = Vec::new();
        write_catalog_to(&cat, &mut buf).unwrap();
        assert_eq!(read_catalog_from(&buf[..]).unwrap(), cat);
        let dup = "# zplcat v1\nA=900,1\n# comment\nA=910,1\n";
        assert!(matches!(read_catalog_from(dup.as_bytes()), Err(IoError::Catalog { line: 4, .. })));
        let bad = "# zplcat v1\nA=900,0\n";
        assert!(matches!(read_catalog_from(bad.as_bytes()), Err(IoError::Catalog { line: 2, .. })));
    }

    #[test]
    fn csv_header_and_width() {
        let rows = read_csv_from("E,I\n1.4,10\n# c\n2,20,0.5\n".as_bytes(), 2, 3).unwrap();
        assert_eq!(rows, vec![vec![1.4, 10.0], vec![2.0, 20.0, 0.5]]);
        assert!(matches!(read_csv_from("1\n".as_bytes(), 2, 3), Err(IoError::DimensionMismatch { line: 1, .. })));
        assert!(matches!(read_csv_from("1,2\nx,y\n".as_bytes(), 2, 2), Err(IoError::Parse { line: 2, .. })));
    }

    #[test]
    fn report_rounds_numbers() {
        let report = Report::new("t", serde_json::json!({"x": 0.1 + 0.2}), serde_json::json!([1.0 / 3.0, 7, "s"]));
        let text = report.to_json();
        assert!(text.contains("0.3\n") || text.contains("0.3,") || text.contains("0.3\r"), "{text}");
        assert!(text.contains("0.333333333333"));
        assert!(!text.contains("ground_truth"));
        let back: Report = serde_json::from_str(&text).unwrap();
        assert_eq!(back.results[1], 7);
    }

    proptest! {
        #[test]
        fn rounding_keeps_twelve_digits(v in -1e200f64..1e200) {
            let r = round_significant(v);
            prop_assert!((r - v).abs() <= 5e-12 * v.abs());
            prop_assert_eq!(round_significant(r), r);
        }

        #[test]
        fn map_round_trip_any(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let counts: Vec<f64> = (0..rows * cols).map(|i| ((seed.wrapping_mul(i as u64 + 1) % 100_000) as f64) / 7.0).collect();
            let map = PlMap::from_vec(rows, cols, 0.05, counts, "p").unwrap();
            let mut buf = Vec::new();
            write_map_to(&map, &mut buf).unwrap();
            prop_assert_eq!(read_map_from(&buf[..]).unwrap(), map);
        }
    }
}
