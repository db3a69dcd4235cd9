//! Event CSV input and output.
//!
//! The format has a header `window,x1,...,xd` and one row per point. A row
//! whose coordinate fields are all empty marks an empty window. Window ids
//! form a contiguous range from the smallest to the largest id seen; ids with
//! no rows are empty windows.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::embedding::{PointWindow, RescaleStats};
use crate::error::{Error, Result};

/// Column layout and split of an event file.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    /// Header name of the window id column.
    pub window_column: String,
    /// Header names of the coordinate columns, in coordinate order. Empty
    /// means every column other than the window column.
    pub coordinate_columns: Vec<String>,
    /// Fraction of windows, from the start, used for training.
    pub training_fraction: f64,
    /// Fixed `(min, max)` per coordinate; fitted on the training points when
    /// absent.
    pub bounds: Option<RescaleStats>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            window_column: "window".into(),
            coordinate_columns: Vec::new(),
            training_fraction: 0.5,
            bounds: None,
        }
    }
}

/// Windows read from an event file, rescaled to the unit cube and renumbered
/// `1..=n`.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub training: Vec<PointWindow>,
    pub stream: Vec<PointWindow>,
    pub stats: RescaleStats,
    /// Original id of window `1`.
    pub first_id: i64,
}

/// Raw rows grouped by window id.
#[derive(Debug, Clone, Default)]
pub struct RawWindows {
    pub dim: usize,
    pub first_id: i64,
    /// Points per window id in `first_id..`, unscaled.
    pub windows: Vec<Vec<Vec<f64>>>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Reads event rows and groups them by window id.
pub fn read_raw<R: Read>(reader: R, opts: &IngestOptions) -> Result<RawWindows> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))
    };
    let wcol = find(&opts.window_column)?;
    let ccols: Vec<usize> = if opts.coordinate_columns.is_empty() {
        (0..headers.len()).filter(|&i| i != wcol).collect()
    } else {
        opts.coordinate_columns
            .iter()
            .map(|c| find(c))
            .collect::<Result<_>>()?
    };
    if ccols.is_empty() {
        return Err(parse_err(1, "no coordinate columns"));
    }
    let dim = ccols.len();

    let mut groups: BTreeMap<i64, Vec<Vec<f64>>> = BTreeMap::new();
    let mut last_id: Option<i64> = None;
    let mut warned = false;
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        let id: i64 = record
            .get(wcol)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(line, "window id is not an integer"))?;
        if last_id.is_some_and(|p| id < p) && !warned {
            log::warn!("window ids are not monotone (line {line}); rows are re-sorted");
            warned = true;
        }
        last_id = Some(id);
        let fields: Vec<&str> = ccols.iter().map(|&c| record.get(c).unwrap_or("")).collect();
        let entry = groups.entry(id).or_default();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        let point = fields
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let v: f64 = f
                    .parse()
                    .map_err(|_| parse_err(line, format!("coordinate {} is not a number", j + 1)))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(line, format!("coordinate {} is not finite", j + 1)))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        entry.push(point);
    }
    let (Some((&first, _)), Some((&last, _))) = (groups.first_key_value(), groups.last_key_value())
    else {
        return Ok(RawWindows {
            dim,
            first_id: 0,
            windows: Vec::new(),
        });
    };
    let mut windows = vec![Vec::new(); (last - first + 1) as usize];
    for (id, pts) in groups {
        windows[(id - first) as usize] = pts;
    }
    Ok(RawWindows {
        dim,
        first_id: first,
        windows,
    })
}

/// Splits raw windows into training and stream parts and rescales them.
pub fn split_and_rescale(raw: &RawWindows, opts: &IngestOptions) -> Result<Ingested> {
    if !(opts.training_fraction > 0.0 && opts.training_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "training fraction {} outside (0, 1]",
            opts.training_fraction
        )));
    }
    let n = raw.windows.len();
    let n_train = (opts.training_fraction * n as f64).floor() as usize;
    if n_train == 0 {
        return Err(Error::InsufficientData { need: 1, got: 0 });
    }
    let stats = match &opts.bounds {
        Some(b) => {
            if b.dim() != raw.dim {
                return Err(Error::Dimension {
                    expected: raw.dim,
                    got: b.dim(),
                });
            }
            b.clone()
        }
        None => RescaleStats::fit(
            raw.windows[..n_train].iter().flatten().map(Vec::as_slice),
            raw.dim,
        )?,
    };
    let windows = raw
        .windows
        .iter()
        .enumerate()
        .map(|(i, pts)| {
            let scaled = pts.iter().map(|p| stats.apply(p)).collect::<Result<Vec<_>>>()?;
            PointWindow::from_points(i + 1, raw.dim, &scaled)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut training = windows;
    let stream = training.split_off(n_train);
    Ok(Ingested {
        training,
        stream,
        stats,
        first_id: raw.first_id,
    })
}

/// Reads, groups, splits and rescales an event file.
pub fn ingest_events(path: &Path, opts: &IngestOptions) -> Result<Ingested> {
    let file = std::fs::File::open(path)?;
    let raw = read_raw(std::io::BufReader::new(file), opts)?;
    split_and_rescale(&raw, opts)
}

/// Writes windows in event format; empty windows get a row with empty
/// coordinates so the id range survives a round trip.
pub fn write_events<W: Write>(writer: W, windows: &[PointWindow], dim: usize) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["window".to_string()];
    header.extend((1..=dim).map(|j| format!("x{j}")));
    wtr.write_record(&header)?;
    for w in windows {
        if w.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: w.dim(),
            });
        }
        if w.is_empty() {
            let mut row = vec![w.index.to_string()];
            row.extend(std::iter::repeat_n(String::new(), dim));
            wtr.write_record(&row)?;
        }
        for p in w.points() {
            let mut row = vec![w.index.to_string()];
            row.extend(p.iter().map(|v| format!("{v:?}")));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Incremental parser for streamed event rows: feed lines, receive windows
/// once a later id shows that they are complete.
#[derive(Debug)]
pub struct StreamParser {
    dim: usize,
    stats: RescaleStats,
    /// Raw id of the window being accumulated, and its renumbered index.
    current: Option<(i64, usize)>,
    points: Vec<Vec<f64>>,
    next_index: usize,
    line: usize,
    header_seen: bool,
}

impl StreamParser {
    /// `next_index` is the renumbered index the first streamed window gets;
    /// raw ids map to indices by their offset from the first id seen.
    pub fn new(dim: usize, stats: RescaleStats, next_index: usize) -> Self {
        Self {
            dim,
            stats,
            current: None,
            points: Vec::new(),
            next_index,
            line: 0,
            header_seen: false,
        }
    }

    fn finish(&mut self) -> Result<Option<PointWindow>> {
        let Some((_, idx)) = self.current else {
            return Ok(None);
        };
        let pts = std::mem::take(&mut self.points);
        Ok(Some(PointWindow::from_points(idx, self.dim, &pts)?))
    }

    /// Consumes one line; returns the windows completed by it, including
    /// empty windows for skipped ids.
    pub fn push_line(&mut self, text: &str) -> Result<Vec<PointWindow>> {
        self.line += 1;
        let text = text.trim();
        if text.is_empty() {
            return Ok(Vec::new());
        }
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        if !self.header_seen && fields.first().is_some_and(|f| f.parse::<i64>().is_err()) {
            self.header_seen = true;
            return Ok(Vec::new());
        }
        self.header_seen = true;
        if fields.len() != self.dim + 1 {
            return Err(parse_err(
                self.line,
                format!("expected {} fields, got {}", self.dim + 1, fields.len()),
            ));
        }
        let id: i64 = fields[0]
            .parse()
            .map_err(|_| parse_err(self.line, "window id is not an integer"))?;
        let mut done = Vec::new();
        match self.current {
            Some((cur, _)) if id < cur => {
                return Err(parse_err(self.line, "streamed window ids must not decrease"));
            }
            Some((cur, idx)) if id > cur => {
                done.extend(self.finish()?);
                for gap in 1..(id - cur) as usize {
                    done.push(PointWindow::empty(idx + gap, self.dim));
                }
                self.current = Some((id, idx + (id - cur) as usize));
            }
            Some(_) => {}
            None => {
                self.current = Some((id, self.next_index));
            }
        }
        let coords = &fields[1..];
        if coords.iter().all(|f| f.is_empty()) {
            return Ok(done);
        }
        let raw = coords
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(self.line, format!("bad coordinate `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        self.points.push(self.stats.apply(&raw)?);
        Ok(done)
    }

    /// Flushes the window in progress at end of input.
    pub fn finish_stream(&mut self) -> Result<Option<PointWindow>> {
        let out = self.finish()?;
        self.current = None;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest_str(text: &str, opts: &IngestOptions) -> Result<Ingested> {
        split_and_rescale(&read_raw(text.as_bytes(), opts)?, opts)
    }

    #[test]
    fn two_windows_half_split() {
        let out = ingest_str("window,x1\n1,0.0\n1,1.0\n2,0.5\n", &IngestOptions::default()).unwrap();
        assert_eq!(out.training.len(), 1);
        assert_eq!(out.stream.len(), 1);
        assert_eq!(out.stream[0].index, 2);
    }

    #[test]
    fn stream_values_clamped() {
        let text = "window,x1\n1,2.0\n1,4.0\n2,10.0\n2,-3.0\n";
        let out = ingest_str(text, &IngestOptions::default()).unwrap();
        assert_eq!(out.training[0].coords(), &[0.0, 1.0]);
        assert_eq!(out.stream[0].coords(), &[1.0, 0.0]);
    }

    #[test]
    fn gaps_become_empty_windows() {
        let text = "window,x1,x2\n3,0.1,0.2\n6,0.3,0.4\n4,,\n3,0.5,0.9\n";
        let opts = IngestOptions {
            training_fraction: 0.5,
            bounds: Some(RescaleStats::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()),
            ..Default::default()
        };
        let out = ingest_str(text, &opts).unwrap();
        let lens: Vec<usize> = out.training.iter().chain(&out.stream).map(PointWindow::len).collect();
        assert_eq!(lens, vec![2, 0, 0, 1]);
        assert_eq!(out.first_id, 3);
    }

    #[test]
    fn bad_row_reports_line() {
        let err = ingest_str("window,x1\n1,0.5\n2,abc\n", &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = ingest_str("window,x1\nz,0.5\n", &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn named_columns() {
        let text = "lat,t,lon\n0.2,1,0.4\n0.6,2,0.8\n";
        let opts = IngestOptions {
            window_column: "t".into(),
            coordinate_columns: vec!["lon".into(), "lat".into()],
            bounds: Some(RescaleStats::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()),
            ..Default::default()
        };
        let out = ingest_str(text, &opts).unwrap();
        assert_eq!(out.training[0].coords(), &[0.4, 0.2]);
    }

    #[test]
    fn write_then_read() {
        let ws = vec![
            PointWindow::from_flat(1, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            PointWindow::empty(2, 2),
            PointWindow::from_flat(3, 2, vec![0.9, 0.125]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_events(&mut buf, &ws, 2).unwrap();
        let opts = IngestOptions {
            training_fraction: 1.0,
            bounds: Some(RescaleStats::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()),
            ..Default::default()
        };
        let out = split_and_rescale(&read_raw(buf.as_slice(), &opts).unwrap(), &opts).unwrap();
        assert_eq!(out.training, ws);
    }

    #[test]
    fn stream_parser_emits_completed_windows() {
        let stats = RescaleStats::new(vec![0.0], vec![2.0]).unwrap();
        let mut p = StreamParser::new(1, stats, 11);
        assert!(p.push_line("window,x1").unwrap().is_empty());
        assert!(p.push_line("5,1.0").unwrap().is_empty());
        assert!(p.push_line("5,2.0").unwrap().is_empty());
        let done = p.push_line("7,0.0").unwrap();
        assert_eq!(done.len(), 2);
        assert_eq!((done[0].index, done[0].coords()), (11, &[0.5, 1.0][..]));
        assert_eq!((done[1].index, done[1].len()), (12, 0));
        let last = p.finish_stream().unwrap().unwrap();
        assert_eq!(last.index, 13);
        assert!(p.push_line("8,0.1,0.2").is_err());
    }
}
