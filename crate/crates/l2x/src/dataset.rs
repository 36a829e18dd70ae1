//! Dataset CSV: one row per sample with columns `x0..x{d-1},p,y,truth`.
//! `truth` lists the zero-based true features joined by `|`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use l2x_core::sampling::FeatureSet;
use l2x_core::synthetic::{LabeledSample, SwitchComponent, DIM};

use crate::error::{Error, Result};

pub fn header(d: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    h.extend(["p".into(), "y".into(), "truth".into()]);
    h
}

fn truth_field(truth: &FeatureSet) -> String {
    truth.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("|")
}

pub fn write_dataset(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    let d = samples.first().map_or(DIM, |s| s.x.len());
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::io(path, e.into());
    w.write_record(header(d)).map_err(csv_err)?;
    for s in samples {
        // `{}` on f64 is the shortest representation that round-trips.
        let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
        row.push(s.p.to_string());
        row.push(s.y.to_string());
        row.push(truth_field(&s.truth));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = r.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(l2x_core::Error::Data(format!("{} is empty", path.display())).into());
    }
    let d = headers.len().checked_sub(3).filter(|&d| d > 0).ok_or_else(|| {
        parse_err(1, format!("expected columns x0..x<d-1>,p,y,truth, found {}", headers.len()))
    })?;
    let expected = header(d);
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(1, format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
    }

    let mut out = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let float = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("column {}: {e} ({:?})", expected[i], &record[i])))
        };
        let x = (0..d).map(float).collect::<Result<Vec<_>>>()?;
        let p = float(d)?;
        let y = record[d + 1]
            .parse::<usize>()
            .map_err(|e| parse_err(line, format!("column y: {e} ({:?})", &record[d + 1])))?;
        let truth_text = &record[d + 2];
        let indices = if truth_text.is_empty() {
            Vec::new()
        } else {
            truth_text
                .split('|')
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(line, format!("column truth: {e} ({truth_text:?})")))?
        };
        let truth = FeatureSet::new(indices, d).map_err(|e| parse_err(line, e.to_string()))?;
        let component = if d == DIM { SwitchComponent::from_truth(&truth) } else { None };
        out.push(LabeledSample {
            x,
            p,
            y,
            truth,
            component,
        });
    }
    if out.is_empty() {
        return Err(l2x_core::Error::Data(format!("{} has no samples", path.display())).into());
    }
    Ok(out)
}
