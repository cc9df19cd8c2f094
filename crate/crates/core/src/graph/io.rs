//! On-disk dataset directory.
//!
//! ```text
//! edges.tsv   two tab-separated 0-based node ids per line, `#` comments
//! nodes.csv   header `id,s,y,x_0,...,x_{d-1}`; `y` empty when unlabeled
//! meta.json   {"n_nodes", "n_attrs", "seed", "generator_config"}
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{build_csr, AttributedGraph};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const EDGES_FILE: &str = "edges.tsv";
pub const NODES_FILE: &str = "nodes.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_nodes: usize,
    pub n_attrs: usize,
    pub seed: Option<u64>,
    pub generator_config: serde_json::Value,
}

impl DatasetMeta {
    pub fn for_graph(g: &AttributedGraph) -> Self {
        Self {
            n_nodes: g.n_nodes(),
            n_attrs: g.n_attrs(),
            seed: None,
            generator_config: serde_json::Value::Null,
        }
    }
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Precondition(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn dataset_err(path: &Path, line: Option<u64>, message: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn save_dataset(g: &AttributedGraph, meta: &DatasetMeta, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut edges = String::new();
    for (i, j) in g.edges() {
        edges.push_str(&format!("{i}\t{j}\n"));
    }
    write_atomic(&dir.join(EDGES_FILE), edges.as_bytes())?;

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "s".to_string(), "y".to_string()];
    header.extend((0..g.n_attrs()).map(|k| format!("x_{k}")));
    w.write_record(&header).map_err(csv_io)?;
    let x = g.attributes();
    for i in 0..g.n_nodes() {
        let mut rec = vec![i.to_string(), g.sensitive()[i].to_string()];
        rec.push(g.labels().map_or(String::new(), |y| y[i].to_string()));
        rec.extend(x.row_slice(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&dir.join(NODES_FILE), &bytes)?;

    let mut meta = meta.clone();
    meta.n_nodes = g.n_nodes();
    meta.n_attrs = g.n_attrs();
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    write_atomic(&dir.join(META_FILE), &json)?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(dataset_err(&path, None, "file not found"))
    }
}

fn parse_binary(field: &str, what: &str, path: &Path, line: Option<u64>) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(dataset_err(
            path,
            line,
            format!("{what} must be 0 or 1, got `{other}`"),
        )),
    }
}

pub fn load_dataset(dir: &Path) -> Result<(AttributedGraph, DatasetMeta)> {
    let nodes_path = require(dir.join(NODES_FILE))?;
    let edges_path = require(dir.join(EDGES_FILE))?;
    let meta_path = dir.join(META_FILE);
    let meta: Option<DatasetMeta> = if meta_path.is_file() {
        let bytes = fs::read(&meta_path)?;
        Some(
            serde_json::from_slice(&bytes)
                .map_err(|e| dataset_err(&meta_path, None, e.to_string()))?,
        )
    } else {
        None
    };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&nodes_path)
        .map_err(|e| dataset_err(&nodes_path, None, e.to_string()))?;
    let header = rdr
        .headers()
        .map_err(|e| dataset_err(&nodes_path, Some(1), e.to_string()))?
        .clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "s" || &header[2] != "y" {
        return Err(dataset_err(
            &nodes_path,
            Some(1),
            "header must start with `id,s,y`",
        ));
    }
    let d = header.len() - 3;
    for (k, name) in header.iter().skip(3).enumerate() {
        if name != format!("x_{k}") {
            return Err(dataset_err(
                &nodes_path,
                Some(1),
                format!("expected column `x_{k}`, found `{name}`"),
            ));
        }
    }

    let mut rows: Vec<(usize, u8, Option<u8>, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line());
            dataset_err(&nodes_path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line());
        if rec.len() != d + 3 {
            return Err(dataset_err(
                &nodes_path,
                line,
                format!("expected {} fields, found {}", d + 3, rec.len()),
            ));
        }
        let id: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| dataset_err(&nodes_path, line, format!("bad node id `{}`", &rec[0])))?;
        let s = parse_binary(&rec[1], "sensitive value s", &nodes_path, line)?;
        let y = if rec[2].trim().is_empty() {
            None
        } else {
            Some(parse_binary(&rec[2], "label y", &nodes_path, line)?)
        };
        let mut x = Vec::with_capacity(d);
        for k in 0..d {
            let v: f64 = rec[k + 3].trim().parse().map_err(|_| {
                dataset_err(
                    &nodes_path,
                    line,
                    format!("bad attribute x_{k} `{}`", &rec[k + 3]),
                )
            })?;
            x.push(v);
        }
        rows.push((id, s, y, x));
    }

    let n = rows.len();
    let mut seen = vec![false; n];
    for (row_no, (id, ..)) in rows.iter().enumerate() {
        let line = Some(row_no as u64 + 2);
        if *id >= n {
            return Err(dataset_err(
                &nodes_path,
                line,
                format!("node id {id} out of range for {n} nodes"),
            ));
        }
        if std::mem::replace(&mut seen[*id], true) {
            return Err(dataset_err(
                &nodes_path,
                line,
                format!("duplicate node id {id}"),
            ));
        }
    }
    rows.sort_by_key(|r| r.0);

    let labelled = rows.iter().filter(|r| r.2.is_some()).count();
    if labelled != 0 && labelled != n {
        return Err(dataset_err(
            &nodes_path,
            None,
            "labels must be present for every node or for none",
        ));
    }
    let mut data = Vec::with_capacity(n * d);
    let mut sensitive = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (_, s, y, x) in rows {
        sensitive.push(s);
        if let Some(y) = y {
            labels.push(y);
        }
        data.extend(x);
    }
    let attributes = Tensor::from_vec(n, d, data)?;

    let text = fs::read_to_string(&edges_path)?;
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = Some(idx as u64 + 1);
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content.split('\t').map(str::trim).filter(|p| !p.is_empty());
        let parse = |p: Option<&str>| -> Result<usize> {
            p.and_then(|v| v.parse().ok()).ok_or_else(|| {
                dataset_err(&edges_path, line, format!("malformed edge `{content}`"))
            })
        };
        let (i, j) = (parse(parts.next())?, parse(parts.next())?);
        if parts.next().is_some() {
            return Err(dataset_err(
                &edges_path,
                line,
                format!("malformed edge `{content}`"),
            ));
        }
        if i >= n || j >= n {
            return Err(dataset_err(
                &edges_path,
                line,
                format!("edge ({i}, {j}) references a node outside 0..{n}"),
            ));
        }
        edges.push((i, j));
    }
    let adjacency = build_csr(&edges, n)?;

    if let Some(m) = &meta {
        if m.n_nodes != n {
            return Err(dataset_err(
                &meta_path,
                None,
                format!(
                    "meta.json declares {} nodes but nodes.csv has {n}",
                    m.n_nodes
                ),
            ));
        }
        if m.n_attrs != d {
            return Err(dataset_err(
                &meta_path,
                None,
                format!(
                    "meta.json declares {} attributes but nodes.csv has {d}",
                    m.n_attrs
                ),
            ));
        }
    }

    let labels = (labelled == n && n > 0).then_some(labels);
    let graph = AttributedGraph::new(adjacency, attributes, sensitive, labels)?;
    let meta = meta.unwrap_or_else(|| DatasetMeta::for_graph(&graph));
    Ok((graph, meta))
}
