//! Explanations as JSON lines: `{"id","method","scores","selected","ns"}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use l2x_core::explainers::{Explanation, Method};
use l2x_core::sampling::FeatureSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    id: usize,
    method: String,
    scores: Vec<f64>,
    selected: Vec<usize>,
    ns: u64,
}

pub fn write_explanations(path: &Path, explanations: &[Explanation]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in explanations {
        let line = Line {
            id: e.id,
            method: e.method.as_str().to_owned(),
            scores: e.scores.clone(),
            selected: e.selected.as_slice().to_vec(),
            ns: e.elapsed_ns,
        };
        serde_json::to_writer(&mut w, &line).map_err(|err| Error::io(path, err.into()))?;
        w.write_all(b"\n").map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_explanations(path: &Path) -> Result<Vec<Explanation>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message,
        };
        let l: Line = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let method: Method = l.method.parse().map_err(|e: l2x_core::Error| parse_err(e.to_string()))?;
        let selected = FeatureSet::new(l.selected, l.scores.len()).map_err(|e| parse_err(e.to_string()))?;
        out.push(Explanation {
            id: l.id,
            method,
            scores: l.scores,
            selected,
            elapsed_ns: l.ns,
        });
    }
    if out.is_empty() {
        return Err(l2x_core::Error::Data(format!("{} has no explanations", path.display())).into());
    }
    Ok(out)
}
