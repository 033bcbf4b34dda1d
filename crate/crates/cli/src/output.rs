//! Result files and their run manifests.
//!
//! Data files carry no timestamp so deterministic runs are byte-identical;
//! the timestamp lives only in the sidecar manifest `<out>.manifest.json`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Settings;
use crate::CliError;

pub const TOOL: &str = "kerr-coupler";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub operation: String,
    /// Hash of tool, version, operation and settings (no timestamp).
    pub run_id: String,
    pub settings: Settings,
    pub timestamp_unix: u64,
    /// Worker threads used; results do not depend on it.
    pub threads: usize,
    pub outputs: Vec<PathBuf>,
}

pub fn run_id(operation: &str, settings: &Settings) -> String {
    let mut hasher = Sha256::new();
    hasher.update(TOOL);
    hasher.update([0]);
    hasher.update(env!("CARGO_PKG_VERSION"));
    hasher.update([0]);
    hasher.update(operation);
    hasher.update([0]);
    hasher.update(serde_json::to_vec(settings).expect("settings serialise"));
    hasher.finalize()[..8]
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Column-oriented table rendered as CSV or as a JSON array of objects.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Text(x.to_string())
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => x.to_string(),
            Cell::Int(x) => x.to_string(),
            Cell::Text(t) => t.clone(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Num(x) => serde_json::Value::from(*x),
            Cell::Int(x) => serde_json::Value::from(*x),
            Cell::Text(t) => serde_json::Value::from(t.clone()),
        }
    }
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_json(&self) -> serde_json::Value {
        self.rows
            .iter()
            .map(|row| {
                self.columns
                    .iter()
                    .cloned()
                    .zip(row.iter().map(Cell::json))
                    .collect::<serde_json::Map<_, _>>()
                    .into()
            })
            .collect::<Vec<serde_json::Value>>()
            .into()
    }

    /// Aligned plain-text rendering for the terminal.
    pub fn render(&self) -> String {
        let text: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| match c {
                        Cell::Num(x) => format!("{x:.6}"),
                        other => other.csv(),
                    })
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|k| {
                text.iter()
                    .map(|r| r[k].len())
                    .chain([self.columns[k].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |cells: &[String], out: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        line(&self.columns, &mut out);
        for row in &text {
            line(row, &mut out);
        }
        out
    }
}

/// What a command produced: a primary table plus optional extra JSON fields.
pub struct Report {
    pub table: Table,
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Report {
    pub fn new(table: Table) -> Self {
        Self {
            table,
            extra: serde_json::Map::new(),
        }
    }

    pub fn with<T: Serialize>(mut self, key: &str, value: &T) -> Self {
        self.extra.insert(
            key.to_string(),
            serde_json::to_value(value).expect("report fields serialise"),
        );
        self
    }
}

/// Writes the data file and its manifest; returns the manifest path.
pub fn write_outputs(
    operation: &str,
    settings: &Settings,
    report: &Report,
    out: &Path,
) -> Result<PathBuf, CliError> {
    let id = run_id(operation, settings);
    let manifest_file = manifest_path(out);
    let manifest_name = manifest_file
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let body = match settings.format {
        crate::config::Format::Csv => {
            let mut s = format!("# manifest: {manifest_name} run_id: {id}\n");
            s.push_str(&report.table.columns.join(","));
            s.push('\n');
            for row in &report.table.rows {
                let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                s.push_str(&cells.join(","));
                s.push('\n');
            }
            s
        }
        crate::config::Format::Json => {
            let mut doc = serde_json::Map::new();
            doc.insert("manifest".into(), manifest_name.clone().into());
            doc.insert("run_id".into(), id.clone().into());
            doc.insert("operation".into(), operation.into());
            for (k, v) in &report.extra {
                doc.insert(k.clone(), v.clone());
            }
            doc.insert("rows".into(), report.table.to_json());
            let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(doc))
                .expect("report serialises");
            s.push('\n');
            s
        }
    };
    write_file(out, &body)?;
    let manifest = RunManifest {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        operation: operation.into(),
        run_id: id,
        settings: settings.clone(),
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        threads: rayon::current_num_threads(),
        outputs: vec![out.to_path_buf()],
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    write_file(&manifest_file, &(text + "\n"))?;
    Ok(manifest_file)
}

pub fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
    }
    std::fs::write(path, body).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("manifest {}: {e}", path.display())))
}
