//! CSV emission with a `#` comment header.
//!
//! Floats are written with 17 significant digits so a file round-trips
//! bit-exactly; non-finite values become `nan`, `inf` or `-inf`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;

pub fn float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// A CSV document built in memory, so nothing is written unless the run
/// finishes (or reports a partial result on purpose).
#[derive(Debug, Clone, Default)]
pub struct Csv {
    header: Vec<String>,
    columns: Vec<&'static str>,
    rows: Vec<String>,
}

/// One cell of a row.
pub enum Cell {
    F(f64),
    I(i64),
    U(u64),
    S(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::U(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::U(x as u64)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::U(x as u64)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::I(x)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::U(x as u64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => float(*x),
            Cell::I(x) => x.to_string(),
            Cell::U(x) => x.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

impl Csv {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            header: Vec::new(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn comment(&mut self, line: impl Into<String>) {
        self.header.push(line.into());
    }

    /// Header lines `key = value` for each resolved setting.
    pub fn settings(&mut self, settings: &[(String, String)]) {
        for (k, v) in settings {
            self.comment(format!("{k} = {v}"));
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        assert_eq!(cells.len(), self.columns.len(), "row width must match the column list");
        let rendered: Vec<String> = cells.iter().map(Cell::render).collect();
        self.rows.push(rendered.join(","));
    }

    /// Puts the comment lines of `head` before this document's own.
    pub fn prepend_header(&mut self, head: Csv) {
        let mut lines = head.header;
        lines.append(&mut self.header);
        self.header = lines;
    }

    pub fn columns(&self) -> &[&'static str] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.header {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{row}");
        }
        out
    }

    /// Writes to `path`, or to standard output when `path` is `None`.
    pub fn write(&self, path: Option<&Path>) -> Result<(), CliError> {
        let text = self.render();
        match path {
            Some(p) => std::fs::write(p, text).map_err(|source| CliError::Io {
                path: p.display().to_string(),
                source,
            }),
            None => {
                use std::io::Write;
                std::io::stdout().write_all(text.as_bytes()).map_err(|source| CliError::Io {
                    path: "<stdout>".into(),
                    source,
                })
            }
        }
    }
}
