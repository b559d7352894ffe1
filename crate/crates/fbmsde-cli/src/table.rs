//! Result tables, CSV output and plot data.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TableError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("column `{0}` is not numeric")]
    NonNumeric(String),
    #[error("row has {got} cells, table has {expected} columns")]
    RowLength { expected: usize, got: usize },
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Real(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Real(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            Cell::Text(_) => None,
        }
    }

    /// 17 significant digits for reals, so that identical numbers give
    /// identical bytes.
    pub fn render(&self) -> String {
        match self {
            Cell::Real(v) => format_real(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

pub fn format_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(if v { "true" } else { "false" }.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub timestamp: String,
}

/// Named columns and rows; every CSV row also carries the config hash.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub provenance: Provenance,
}

impl ResultTable {
    pub fn new(columns: &[&str], provenance: Provenance) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            provenance,
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<(), TableError> {
        if row.len() != self.columns.len() {
            return Err(TableError::RowLength {
                expected: self.columns.len(),
                got: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize, TableError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| TableError::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&Cell>, TableError> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| &r[j]).collect())
    }

    /// Rows whose `column` renders as `value`.
    pub fn filter(&self, column: &str, value: &Cell) -> Result<ResultTable, TableError> {
        let j = self.column_index(column)?;
        let key = value.render();
        Ok(ResultTable {
            columns: self.columns.clone(),
            rows: self.rows.iter().filter(|r| r[j].render() == key).cloned().collect(),
            provenance: self.provenance.clone(),
        })
    }

    /// Header row and data rows, without provenance comments.
    pub fn csv_body(&self) -> Result<String, TableError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let err = |e: csv::Error| TableError::Csv(e.to_string());
        let mut header = self.columns.clone();
        header.push("config_hash".into());
        w.write_record(&header).map_err(err)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.iter().map(Cell::render).collect();
            rec.push(self.provenance.config_hash.clone());
            w.write_record(&rec).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| TableError::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| TableError::Csv(e.to_string()))
    }

    /// Full CSV text: `#` provenance lines followed by the body.
    pub fn to_csv(&self) -> Result<String, TableError> {
        let p = &self.provenance;
        let mut out = String::new();
        let _ = writeln!(out, "# config_hash: {}", p.config_hash);
        let _ = writeln!(out, "# seed: {}", p.seed);
        let _ = writeln!(out, "# timestamp: {}", p.timestamp);
        out.push_str(&self.csv_body()?);
        Ok(out)
    }
}

/// Strip `#` lines from CSV text, leaving the part that must be reproducible.
pub fn strip_header(csv_text: &str) -> String {
    csv_text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

/// Whitespace-separated columns `x y_1 … y_m`. An empty table gives an empty
/// string.
pub fn emit_plotdata(table: &ResultTable, x: &str, ys: &[&str]) -> Result<String, TableError> {
    let mut idx = vec![table.column_index(x)?];
    for y in ys {
        idx.push(table.column_index(y)?);
    }
    if table.rows.is_empty() {
        return Ok(String::new());
    }
    let names: Vec<&str> = std::iter::once(x).chain(ys.iter().copied()).collect();
    for (&j, name) in idx.iter().zip(&names) {
        if table.rows.iter().any(|r| r[j].as_f64().is_none()) {
            return Err(TableError::NonNumeric(name.to_string()));
        }
    }
    let mut out = format!("# {}\n", names.join(" "));
    for r in &table.rows {
        let line: Vec<String> = idx.iter().map(|&j| format_real(r[j].as_f64().unwrap_or(f64::NAN))).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}
