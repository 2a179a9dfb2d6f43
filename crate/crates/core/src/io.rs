//! Plain-text dataset formats.
//!
//! - edge list: one `u v` pair of 0-based node indices per line
//! - labels: one integer class per line, line `i` is node `i`
//! - features / numeric matrices: one whitespace-separated row per line
//! - splits: JSON object with integer arrays `train`, `val`, `test`
//!
//! Blank lines and lines starting with `#` are ignored by every reader.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, LabeledSplit};
use crate::matrix::SignalMatrix;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn parse_edge_list(path: &Path, text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in content_lines(text) {
        let mut tokens = line.split_whitespace();
        let mut next = || -> Result<usize> {
            let tok = tokens
                .next()
                .ok_or_else(|| parse_err(path, lineno, "expected two node indices"))?;
            tok.parse()
                .map_err(|_| parse_err(path, lineno, format!("invalid node index {tok:?}")))
        };
        let u = next()?;
        let v = next()?;
        if tokens.next().is_some() {
            return Err(parse_err(path, lineno, "expected exactly two node indices"));
        }
        edges.push((u, v));
    }
    if edges.is_empty() {
        return Err(Error::EmptyInput(format!("edge list {}", path.display())));
    }
    Ok(edges)
}

/// Reads an edge list into a simple undirected graph.
pub fn load_graph(path: impl AsRef<Path>, n_hint: Option<usize>) -> Result<Graph> {
    let path = path.as_ref();
    let edges = parse_edge_list(path, &read(path)?)?;
    Ok(Graph::from_edges(n_hint, &edges))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = read(path)?;
    let labels = content_lines(&text)
        .map(|(lineno, line)| {
            line.parse::<usize>()
                .map_err(|_| parse_err(path, lineno, format!("invalid class label {line:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if labels.is_empty() {
        return Err(Error::EmptyInput(format!("labels {}", path.display())));
    }
    Ok(labels)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<SignalMatrix> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in content_lines(&text) {
        let row = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(path, lineno, format!("invalid number {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("matrix {}", path.display())));
    }
    SignalMatrix::from_rows(&rows)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub train: Vec<usize>,
    #[serde(default)]
    pub val: Vec<usize>,
    #[serde(default)]
    pub test: Vec<usize>,
}

impl From<&LabeledSplit> for SplitFile {
    fn from(s: &LabeledSplit) -> Self {
        Self {
            train: s.train.clone(),
            val: s.val.clone(),
            test: s.test.clone(),
        }
    }
}

pub fn load_split(path: impl AsRef<Path>, labels: Vec<usize>) -> Result<LabeledSplit> {
    let path = path.as_ref();
    let file: SplitFile = serde_json::from_str(&read(path)?).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    LabeledSplit::new(labels, file.train, file.val, file.test)
}

pub fn format_edge_list(g: &Graph) -> String {
    let mut out = String::new();
    for (u, v) in g.edges() {
        let _ = writeln!(out, "{u} {v}");
    }
    out
}

pub fn format_labels(labels: &[usize]) -> String {
    let mut out = String::new();
    for y in labels {
        let _ = writeln!(out, "{y}");
    }
    out
}

/// Rows separated by newlines, values by single spaces; floats use the shortest
/// round-trip representation so writes are deterministic and lossless.
pub fn format_matrix(m: &SignalMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", m.get(i, j));
        }
        out.push('\n');
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    serde_json::from_str(&read(path)?).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_json_atomic<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("json.tmp");
    write_json(&tmp, value)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("edges.txt")
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_edge_list(p(), "0 1\n\n1 x\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_edge_list(p(), "0 1 2\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(parse_edge_list(p(), "0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_edge_list(p(), "-1 2\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn empty_edge_list_rejected() {
        assert!(matches!(
            parse_edge_list(p(), "\n# nothing\n"),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::from_edges(None, &[(0, 1), (1, 2), (2, 0), (2, 3)]);
        write_text(dir.path().join("e.txt"), &format_edge_list(&g)).unwrap();
        assert_eq!(load_graph(dir.path().join("e.txt"), None).unwrap(), g);

        let m = SignalMatrix::from_rows(&[vec![0.1, -2.5e-8], vec![3.0, 1.0 / 3.0]]).unwrap();
        write_text(dir.path().join("x.txt"), &format_matrix(&m)).unwrap();
        assert_eq!(load_matrix(dir.path().join("x.txt")).unwrap(), m);

        let labels = vec![0, 1, 1, 0];
        write_text(dir.path().join("y.txt"), &format_labels(&labels)).unwrap();
        assert_eq!(load_labels(dir.path().join("y.txt")).unwrap(), labels);

        let split = LabeledSplit::new(labels.clone(), vec![0, 1], vec![2], vec![3]).unwrap();
        write_json(dir.path().join("s.json"), &SplitFile::from(&split)).unwrap();
        assert_eq!(load_split(dir.path().join("s.json"), labels).unwrap(), split);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_graph("/nonexistent/edges.txt", None).unwrap_err();
        assert!(err.is_io());
    }
}
