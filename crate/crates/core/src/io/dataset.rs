//! Line-delimited dataset files: a header line with the manifest and
//! normalization statistics, then one subgraph per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::feature::{feature_checksum, NormalizationStats};
use crate::graphgen::{GraphDataset, LocalizedSubgraph, Manifest, FORMAT_VERSION};

#[derive(Serialize, Deserialize)]
struct Header {
    manifest: Manifest,
    normalization: NormalizationStats,
}

fn to_line<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Data(format!("serialization failed: {e}")))
}

pub fn write_dataset<W: Write>(dataset: &GraphDataset, mut w: W) -> Result<()> {
    let header = Header { manifest: dataset.manifest.clone(), normalization: dataset.normalization.clone() };
    let io_err = |e| Error::Data(format!("write failed: {e}"));
    writeln!(w, "{}", to_line(&header)?).map_err(io_err)?;
    for sg in &dataset.subgraphs {
        writeln!(w, "{}", to_line(sg)?).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn save_dataset(dataset: &GraphDataset, path: &Path) -> Result<()> {
    if dataset.manifest.n_subgraphs != dataset.subgraphs.len() {
        return Err(Error::InvalidState(format!(
            "manifest lists {} subgraphs, dataset holds {}",
            dataset.manifest.n_subgraphs,
            dataset.subgraphs.len()
        )));
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(dataset, BufWriter::new(f))
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<GraphDataset> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty dataset file"))?;
    let first = first.map_err(|e| parse_err(1, e.to_string()))?;
    let raw: Value = serde_json::from_str(&first).map_err(|e| parse_err(1, format!("header: {e}")))?;
    let version = raw.pointer("/manifest/format_version").and_then(Value::as_u64);
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::Data(format!(
            "unsupported dataset format version {version:?}, expected {FORMAT_VERSION}"
        )));
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| parse_err(1, format!("header: {e}")))?;
    let expected = feature_checksum(&header.manifest.countries);
    if header.manifest.feature_checksum != expected {
        return Err(Error::Data(format!(
            "feature checksum mismatch: file has {}, this build expects {expected}",
            header.manifest.feature_checksum
        )));
    }
    let n = header.manifest.n_subgraphs;
    let mut subgraphs = Vec::with_capacity(n);
    for (line, text) in lines {
        let text = text.map_err(|e| parse_err(line, e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let sg: LocalizedSubgraph = serde_json::from_str(&text).map_err(|e| parse_err(line, e.to_string()))?;
        if sg.features.len() != sg.node_ids.len() || sg.labels.len() != sg.node_ids.len() || sg.flags.len() != sg.node_ids.len() {
            return Err(parse_err(line, "node arrays differ in length"));
        }
        if sg.edges.iter().any(|e| e.i >= sg.len() || e.j >= sg.len()) {
            return Err(parse_err(line, "edge endpoint out of range"));
        }
        subgraphs.push(sg);
    }
    if subgraphs.len() != n {
        return Err(parse_err(
            subgraphs.len() + 2,
            format!("truncated dataset: expected {n} subgraphs, found {}", subgraphs.len()),
        ));
    }
    Ok(GraphDataset { manifest: header.manifest, normalization: header.normalization, subgraphs })
}

pub fn load_dataset(path: &Path) -> Result<GraphDataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(f))
}
