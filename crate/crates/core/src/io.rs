//! On-disk formats: the dataset CSV and the graph JSON.
//!
//! Dataset CSV: header `traj,t,x0,...,x{d-1}`, one row per (trajectory, time)
//! sorted by trajectory then time, values written with 17 significant digits.
//!
//! Graph JSON: `{"dim", "lag_order", "instant_enabled", "A", "B", "masks"?}`
//! where `A` is a list of row-major `d x d` arrays and `B` one such array.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{SystemTag, TimeSeriesDataset};
use crate::error::{Error, ParseError, Result};
use crate::graph::{DynamicGraph, EdgeMasks, Support};

/// Writes `contents` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("`{}` has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn dataset_to_csv(ds: &TimeSeriesDataset) -> String {
    let d = ds.dim();
    let mut out = String::from("traj,t");
    for k in 0..d {
        out.push_str(&format!(",x{k}"));
    }
    out.push('\n');
    for n in 0..ds.num_trajectories() {
        for t in 0..ds.horizon() {
            out.push_str(&format!("{n},{t}"));
            for v in ds.state(n, t) {
                out.push(',');
                out.push_str(&format_value(*v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_dataset(ds: &TimeSeriesDataset, path: &Path) -> Result<()> {
    write_atomic(path, dataset_to_csv(ds).as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<TimeSeriesDataset> {
    let text = fs::read_to_string(path)?;
    Ok(parse_dataset_csv(&text)?)
}

pub fn parse_dataset_csv(text: &str) -> Result<TimeSeriesDataset, ParseError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();

    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(ParseError::MalformedHeader(e.to_string())),
        None => return Err(ParseError::Empty),
    };
    let names: Vec<&str> = header.iter().collect();
    for required in ["traj", "t"] {
        if !names.contains(&required) {
            return Err(ParseError::MissingColumn(required.to_string()));
        }
    }
    if names[0] != "traj" || names.get(1) != Some(&"t") {
        return Err(ParseError::MalformedHeader(
            "header must start with `traj,t`".to_string(),
        ));
    }
    let d = names.len() - 2;
    if d == 0 {
        return Err(ParseError::MalformedHeader("no variable columns".to_string()));
    }
    for (k, name) in names[2..].iter().enumerate() {
        if *name != format!("x{k}") {
            return Err(ParseError::MalformedHeader(format!(
                "column {} is `{name}`, expected `x{k}`",
                k + 2
            )));
        }
    }

    let mut values = Vec::new();
    let mut lengths: Vec<usize> = Vec::new();
    for (idx, rec) in records.enumerate() {
        let row = idx + 2; // 1-based, header is row 1
        let rec = rec.map_err(|e| ParseError::BadRow {
            row,
            reason: e.to_string(),
        })?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != d + 2 {
            return Err(ParseError::RowLength {
                row,
                expected: d + 2,
                found: rec.len(),
            });
        }
        let index = |k: usize| -> Result<usize, ParseError> {
            let cell = &rec[k];
            cell.parse::<usize>().map_err(|_| ParseError::NonNumeric {
                row,
                column: names[k].to_string(),
                value: cell.to_string(),
            })
        };
        let traj = index(0)?;
        let t = index(1)?;
        if traj == lengths.len() {
            lengths.push(0);
        }
        if traj + 1 != lengths.len() {
            return Err(ParseError::BadRow {
                row,
                reason: format!("trajectory {traj} out of order"),
            });
        }
        if t != lengths[traj] {
            return Err(ParseError::BadRow {
                row,
                reason: format!("time {t} out of order, expected {}", lengths[traj]),
            });
        }
        lengths[traj] += 1;
        for k in 2..d + 2 {
            let cell = &rec[k];
            let v: f64 = cell.parse().map_err(|_| ParseError::NonNumeric {
                row,
                column: names[k].to_string(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(ParseError::NonNumeric {
                    row,
                    column: names[k].to_string(),
                    value: cell.to_string(),
                });
            }
            values.push(v);
        }
    }
    let horizon = match lengths.first() {
        Some(&h) => h,
        None => return Err(ParseError::InconsistentRows("no data rows".to_string())),
    };
    if let Some((n, &len)) = lengths.iter().enumerate().find(|(_, &len)| len != horizon) {
        return Err(ParseError::InconsistentRows(format!(
            "trajectory {n} has {len} rows, trajectory 0 has {horizon}"
        )));
    }
    TimeSeriesDataset::new(lengths.len(), horizon, d, values, SystemTag::External)
        .map_err(|e| ParseError::InconsistentRows(e.to_string()))
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn support_rows(m: &Support) -> Vec<Vec<u8>> {
    m.row_iter().map(|r| r.iter().map(|&b| u8::from(b)).collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::ShapeMismatch(format!("{what} is not {dim}x{dim}")));
    }
    Ok(DMatrix::from_fn(dim, dim, |j, i| rows[j][i]))
}

fn support_from_rows(rows: &[Vec<u8>], dim: usize, what: &str) -> Result<Support> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::ShapeMismatch(format!("{what} is not {dim}x{dim}")));
    }
    if rows.iter().flatten().any(|&v| v > 1) {
        return Err(Error::invalid(format!("{what} must be binary")));
    }
    Ok(Support::from_fn(dim, dim, |j, i| rows[j][i] == 1))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphJson {
    dim: usize,
    lag_order: usize,
    instant_enabled: bool,
    #[serde(rename = "A")]
    lags: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    instant: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    masks: Option<MasksJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MasksJson {
    lag: Vec<Vec<Vec<u8>>>,
    instant: Vec<Vec<u8>>,
}

pub fn graph_to_json(graph: &DynamicGraph, masks: Option<&EdgeMasks>) -> Result<String> {
    let doc = GraphJson {
        dim: graph.dim(),
        lag_order: graph.lag_order(),
        instant_enabled: graph.instant_enabled(),
        lags: graph.lag_matrices().iter().map(matrix_rows).collect(),
        instant: matrix_rows(graph.instant_matrix()),
        masks: masks.map(|m| MasksJson {
            lag: m.lag_masks().iter().map(support_rows).collect(),
            instant: support_rows(m.instant_mask()),
        }),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

pub fn graph_from_json(text: &str) -> Result<(DynamicGraph, Option<EdgeMasks>)> {
    let doc: GraphJson = serde_json::from_str(text)?;
    if doc.lags.len() != doc.lag_order {
        return Err(Error::ShapeMismatch(format!(
            "lag_order is {} but A holds {} matrices",
            doc.lag_order,
            doc.lags.len()
        )));
    }
    let lags = doc
        .lags
        .iter()
        .enumerate()
        .map(|(l, rows)| matrix_from_rows(rows, doc.dim, &format!("A[{l}]")))
        .collect::<Result<Vec<_>>>()?;
    let instant = matrix_from_rows(&doc.instant, doc.dim, "B")?;
    let graph = DynamicGraph::new(lags, instant, doc.instant_enabled)?;
    let masks = match doc.masks {
        None => None,
        Some(m) => {
            if m.lag.len() != doc.lag_order {
                return Err(Error::ShapeMismatch("masks.lag length differs from lag_order".into()));
            }
            let lag = m
                .lag
                .iter()
                .map(|rows| support_from_rows(rows, doc.dim, "masks.lag"))
                .collect::<Result<Vec<_>>>()?;
            let instant = support_from_rows(&m.instant, doc.dim, "masks.instant")?;
            Some(EdgeMasks::new(lag, instant)?)
        }
    };
    Ok((graph, masks))
}

pub fn save_graph(graph: &DynamicGraph, masks: Option<&EdgeMasks>, path: &Path) -> Result<()> {
    write_atomic(path, graph_to_json(graph, masks)?.as_bytes())
}

pub fn load_graph(path: &Path) -> Result<(DynamicGraph, Option<EdgeMasks>)> {
    graph_from_json(&fs::read_to_string(path)?)
}
