//! On-disk dataset directories.
//!
//! ```text
//! edges.tsv     src<TAB>dst, one edge per line
//! features.tsv  n rows of d tab-separated decimals
//! labels.tsv    n integers, one per line
//! splits.json   [{"train": [...], "val": [...], "test": [...]}, ...]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{DirectedGraph, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLITS_FILE: &str = "splits.json";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-empty lines with 1-based line numbers. A trailing CR is tolerated.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_edges(path: &Path, text: &str) -> Result<Vec<(usize, usize)>> {
    content_lines(text)
        .map(|(ln, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 2 {
                return Err(parse_err(
                    path,
                    ln,
                    format!("expected 2 tab-separated columns, found {}", cols.len()),
                ));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| parse_err(path, ln, format!("invalid node id {s:?}")))
            };
            Ok((parse(cols[0])?, parse(cols[1])?))
        })
        .collect()
}

fn parse_features(path: &Path, text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in content_lines(text) {
        let row = line
            .split('\t')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(path, ln, format!("invalid feature value {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    ln,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let d = rows.first().map_or(0, Vec::len);
    Ok(Matrix::from_vec(rows.len(), d, rows.concat()))
}

fn parse_labels(path: &Path, text: &str) -> Result<Vec<usize>> {
    content_lines(text)
        .map(|(ln, line)| {
            line.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(path, ln, format!("invalid label {line:?}")))
        })
        .collect()
}

fn parse_splits(path: &Path, text: &str) -> Result<Vec<Split>> {
    serde_json::from_str(text).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

/// Loads a dataset directory. A missing `splits.json` yields no splits.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<LabeledDataset> {
    let dir = dir.as_ref();
    let p = |name: &str| -> PathBuf { dir.join(name) };

    let labels_path = p(LABELS_FILE);
    let labels = parse_labels(&labels_path, &read(&labels_path)?)?;
    let n = labels.len();

    let edges_path = p(EDGES_FILE);
    let edges = parse_edges(&edges_path, &read(&edges_path)?)?;
    let graph = DirectedGraph::new(n, &edges).map_err(|e| match e {
        Error::MalformedInput(msg) => Error::MalformedInput(format!("{}: {msg}", edges_path.display())),
        other => other,
    })?;

    let features_path = p(FEATURES_FILE);
    let features = parse_features(&features_path, &read(&features_path)?)?;

    let splits_path = p(SPLITS_FILE);
    let splits = if splits_path.exists() {
        parse_splits(&splits_path, &read(&splits_path)?)?
    } else {
        Vec::new()
    };

    LabeledDataset::new(graph, features, labels, splits)
}

/// Writes the four dataset files into `dir`, creating it if needed.
pub fn save_dataset(ds: &LabeledDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    };

    let mut edges = String::new();
    for (s, t) in ds.graph.edges() {
        edges.push_str(&format!("{s}\t{t}\n"));
    }
    write(EDGES_FILE, edges)?;

    let mut feats = String::new();
    for r in 0..ds.features.rows() {
        let row: Vec<String> = ds.features.row(r).iter().map(|x| x.to_string()).collect();
        feats.push_str(&row.join("\t"));
        feats.push('\n');
    }
    write(FEATURES_FILE, feats)?;

    let labels: String = ds.labels.iter().map(|l| format!("{l}\n")).collect();
    write(LABELS_FILE, labels)?;

    let splits = serde_json::to_string(&ds.splits).expect("splits serialize");
    write(SPLITS_FILE, splits + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_dir(files: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in files {
            fs::write(dir.path().join(name), body).unwrap();
        }
        dir
    }

    #[test]
    fn loads_minimal_dataset() {
        let dir = write_dir(&[
            (EDGES_FILE, "0\t1\n1\t2\n"),
            (FEATURES_FILE, "1.0\t0\n0\t1.5\n-2\t0.25\n"),
            (LABELS_FILE, "0\n1\n1\n"),
            (SPLITS_FILE, r#"[{"train":[0],"val":[1],"test":[2]}]"#),
        ]);
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.num_nodes(), 3);
        assert_eq!(ds.graph.num_edges(), 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.features.row(2), &[-2.0, 0.25]);
        assert_eq!(ds.splits[0].test, vec![2]);
    }

    #[test]
    fn reports_line_numbers() {
        let dir = write_dir(&[
            (EDGES_FILE, "0\t1\n1 2\n"),
            (FEATURES_FILE, "1\n1\n1\n"),
            (LABELS_FILE, "0\n0\n0\n"),
        ]);
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("edges.tsv:2:"), "{err}");

        let dir = write_dir(&[
            (EDGES_FILE, ""),
            (FEATURES_FILE, "1\t2\n1\n"),
            (LABELS_FILE, "0\n0\n"),
        ]);
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("features.tsv:2:"), "{err}");
    }

    #[test]
    fn out_of_range_edge_is_input_error() {
        let dir = write_dir(&[
            (EDGES_FILE, "0\t5\n"),
            (FEATURES_FILE, "1\n1\n"),
            (LABELS_FILE, "0\n0\n"),
        ]);
        let err = load_dataset(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn save_then_load_is_identity() {
        let g = DirectedGraph::new(3, &[(0, 2), (2, 1)]).unwrap();
        let feats = Matrix::from_vec(3, 2, vec![0.1, -1e-7, 3.0, 2.5e10, 0.0, 1.0 / 3.0]);
        let splits = vec![Split { train: vec![0, 1], val: vec![], test: vec![2] }];
        let ds = LabeledDataset::new(g, feats, vec![1, 0, 1], splits).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.graph, ds.graph);
        assert_eq!(back.features, ds.features);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.splits, ds.splits);
    }
}
