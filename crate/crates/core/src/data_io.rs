//! LibSVM text parsing and equal-block partitioning across clients.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One labeled example with sparse features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    /// `(index, value)` pairs with 1-based, strictly increasing indices.
    pub features: Vec<(usize, f64)>,
    /// Either `-1.0` or `+1.0`.
    pub label: f64,
}

impl DataPoint {
    pub fn max_index(&self) -> usize {
        self.features.last().map_or(0, |&(i, _)| i)
    }

    /// `aᵀx` for a dense 0-based `x`.
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.features.iter().map(|&(i, v)| v * x[i - 1]).sum()
    }

    /// `out += alpha * a`
    pub fn axpy_into(&self, alpha: f64, out: &mut [f64]) {
        for &(i, v) in &self.features {
            out[i - 1] += alpha * v;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.features.iter().map(|&(_, v)| v * v).sum()
    }
}

/// The rows owned by one simulated client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientShard {
    pub points: Vec<DataPoint>,
    /// Global feature dimension d.
    pub dimension: usize,
}

impl ClientShard {
    pub fn new(points: Vec<DataPoint>, dimension: usize) -> Result<Self> {
        if points.is_empty() {
            return invalid("client shard must hold at least one point");
        }
        if let Some(p) = points.iter().find(|p| p.max_index() > dimension) {
            return invalid(format!(
                "feature index {} exceeds dimension {dimension}",
                p.max_index()
            ));
        }
        Ok(Self { points, dimension })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<DataPoint>,
    /// Largest feature index observed.
    pub dimension: usize,
}

fn parse_label(tok: &str, line: usize) -> Result<f64> {
    let err = || Error::Parse {
        line,
        message: format!("invalid label {tok:?}"),
    };
    let v: f64 = tok.parse().map_err(|_| err())?;
    match v {
        v if v == 1.0 => Ok(1.0),
        v if v == -1.0 || v == 0.0 => Ok(-1.0),
        _ => Err(err()),
    }
}

fn parse_line(text: &str, line: usize) -> Result<Option<DataPoint>> {
    let mut tokens = text.split_whitespace();
    let Some(label_tok) = tokens.next() else {
        return Ok(None);
    };
    let label = parse_label(label_tok, line)?;
    let mut features = Vec::new();
    let mut prev = 0usize;
    for tok in tokens {
        let malformed = || Error::Parse {
            line,
            message: format!("malformed feature token {tok:?}"),
        };
        let (idx, val) = tok.split_once(':').ok_or_else(malformed)?;
        let idx: usize = idx.parse().map_err(|_| malformed())?;
        let val: f64 = val.parse().map_err(|_| malformed())?;
        if idx == 0 || !val.is_finite() {
            return Err(malformed());
        }
        if idx <= prev {
            return Err(Error::Parse {
                line,
                message: format!("feature index {idx} does not increase (previous {prev})"),
            });
        }
        prev = idx;
        features.push((idx, val));
    }
    Ok(Some(DataPoint { features, label }))
}

/// Parses LibSVM text: one `<label> <idx>:<val> ...` row per non-blank line.
/// Labels `0`/`1` are mapped to `-1`/`+1`.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut points = Vec::new();
    let mut dimension = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if let Some(p) = parse_line(&line, n + 1)? {
            dimension = dimension.max(p.max_index());
            points.push(p);
        }
    }
    Ok(Dataset { points, dimension })
}

pub fn parse_libsvm_str(text: &str) -> Result<Dataset> {
    parse_libsvm(text.as_bytes())
}

pub fn read_libsvm_file(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    parse_libsvm(std::io::BufReader::new(file))
}

/// Writes points back in LibSVM format. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn to_libsvm(points: &[DataPoint]) -> String {
    let mut out = String::new();
    for p in points {
        out.push_str(if p.label > 0.0 { "+1" } else { "-1" });
        for &(i, v) in &p.features {
            let _ = write!(out, " {i}:{v:?}");
        }
        out.push('\n');
    }
    out
}

/// Splits `points` into `clients` contiguous blocks of equal size
/// `N = ⌊len/clients⌋`, dropping the trailing `len mod clients` points.
pub fn partition(points: &[DataPoint], dimension: usize, clients: usize) -> Result<Vec<ClientShard>> {
    if clients == 0 {
        return invalid("number of clients must be positive");
    }
    if clients > points.len() {
        return invalid(format!(
            "cannot split {} points across {clients} clients",
            points.len()
        ));
    }
    let per_client = points.len() / clients;
    points
        .chunks_exact(per_client)
        .take(clients)
        .map(|block| ClientShard::new(block.to_vec(), dimension))
        .collect()
}
