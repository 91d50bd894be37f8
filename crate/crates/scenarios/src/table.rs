//! Columnar tables parsed from CSV uploads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Result, ScenarioError};

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Num(Vec<f64>),
    Text(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Num(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Column::Num(_) => "numeric",
            Column::Text(_) => "text",
        }
    }

    fn push_field(&mut self, field: &str) {
        match self {
            Column::Num(v) => match field.trim().parse::<f64>() {
                Ok(x) => v.push(x),
                Err(_) => {
                    let mut text: Vec<String> = v.iter().map(f64::to_string).collect();
                    text.push(field.to_string());
                    *self = Column::Text(text);
                }
            },
            Column::Text(v) => v.push(field.to_string()),
        }
    }

    fn take(&self, idx: &[usize]) -> Column {
        match self {
            Column::Num(v) => Column::Num(idx.iter().map(|i| v[*i]).collect()),
            Column::Text(v) => Column::Text(idx.iter().map(|i| v[*i].clone()).collect()),
        }
    }

    fn cell(&self, row: usize) -> String {
        match self {
            Column::Num(v) => v[row].to_string(),
            Column::Text(v) => v[row].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

/// Equal-length named columns. Column types are inferred on parse: a column
/// is numeric iff every field parses as a float.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    names: Vec<String>,
    columns: Vec<Column>,
}

impl Table {
    pub fn new(columns: Vec<(String, Column)>) -> Result<Self> {
        let rows = columns.first().map_or(0, |(_, c)| c.len());
        if columns.iter().any(|(_, c)| c.len() != rows) {
            return Err(ScenarioError::Data("columns differ in length".into()));
        }
        let (names, columns) = columns.into_iter().unzip();
        Ok(Table { names, columns })
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let names: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut columns: Vec<Column> = names.iter().map(|_| Column::Num(Vec::new())).collect();
        let mut rec = csv::StringRecord::new();
        while rdr.read_record(&mut rec)? {
            if rec.len() != names.len() {
                return Err(ScenarioError::Data(format!("row has {} fields, header has {}", rec.len(), names.len())));
            }
            for (c, f) in columns.iter_mut().zip(rec.iter()) {
                c.push_field(f);
            }
        }
        Ok(Table { names, columns })
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.names).expect("in-memory write");
        for r in 0..self.rows() {
            w.write_record(self.columns.iter().map(|c| c.cell(r))).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| ScenarioError::Data(format!("no column {name:?}")))
    }

    pub fn num(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Num(v) => Ok(v),
            Column::Text(_) => Err(ScenarioError::Data(format!("column {name:?} is not numeric"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<Vec<String>> {
        let c = self.column(name)?;
        Ok((0..c.len()).map(|r| c.cell(r)).collect())
    }

    pub fn schema(&self) -> Vec<ColumnSchema> {
        self.names
            .iter()
            .zip(&self.columns)
            .map(|(n, c)| ColumnSchema { name: n.clone(), type_name: c.type_name().into() })
            .collect()
    }

    pub fn take(&self, idx: &[usize]) -> Table {
        Table { names: self.names.clone(), columns: self.columns.iter().map(|c| c.take(idx)).collect() }
    }

    /// The numeric columns only.
    pub fn numeric_only(&self) -> Table {
        let (names, columns) = self
            .names
            .iter()
            .zip(&self.columns)
            .filter(|(_, c)| matches!(c, Column::Num(_)))
            .map(|(n, c)| (n.clone(), c.clone()))
            .unzip();
        Table { names, columns }
    }

    /// Rows where `keep(row)` holds.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> Table {
        let idx: Vec<usize> = (0..self.rows()).filter(|r| keep(*r)).collect();
        self.take(&idx)
    }

    pub fn head(&self, n: usize) -> Table {
        let idx: Vec<usize> = (0..n.min(self.rows())).collect();
        self.take(&idx)
    }

    /// Concatenates tables with identical headers.
    pub fn vstack(parts: &[Table]) -> Result<Table> {
        let Some(first) = parts.first() else { return Ok(Table::default()) };
        let mut out = first.clone();
        for t in &parts[1..] {
            if t.names != out.names {
                return Err(ScenarioError::Data("tables have different columns".into()));
            }
            for (dst, src) in out.columns.iter_mut().zip(&t.columns) {
                match (dst, src) {
                    (Column::Num(a), Column::Num(b)) => a.extend_from_slice(b),
                    (Column::Text(a), Column::Text(b)) => a.extend(b.iter().cloned()),
                    _ => return Err(ScenarioError::Data("column types differ".into())),
                }
            }
        }
        Ok(out)
    }

    /// Row-major numeric matrix of `features`, for model fitting.
    pub fn matrix(&self, features: &[String]) -> Result<Vec<f64>> {
        let cols: Vec<&[f64]> = features.iter().map(|f| self.num(f)).collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(self.rows() * cols.len());
        for r in 0..self.rows() {
            out.extend(cols.iter().map(|c| c[r]));
        }
        Ok(out)
    }

    /// Compact encoding used for intermediates: a JSON header line followed
    /// by little-endian numeric columns; text columns live in the header.
    pub fn encode(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct Header<'a> {
            rows: usize,
            names: &'a [String],
            text: BTreeMap<usize, &'a [String]>,
        }
        let text = self
            .columns
            .iter()
            .enumerate()
            .filter_map(|(i, c)| match c {
                Column::Text(v) => Some((i, v.as_slice())),
                Column::Num(_) => None,
            })
            .collect();
        let mut out = serde_json::to_vec(&Header { rows: self.rows(), names: &self.names, text }).expect("header");
        out.push(b'\n');
        for c in &self.columns {
            if let Column::Num(v) = c {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Table> {
        #[derive(Deserialize)]
        struct Header {
            rows: usize,
            names: Vec<String>,
            text: BTreeMap<usize, Vec<String>>,
        }
        let nl = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| ScenarioError::Data("truncated table".into()))?;
        let mut h: Header = serde_json::from_slice(&bytes[..nl])?;
        let mut body = bytes[nl + 1..].chunks_exact(8);
        let mut columns = Vec::with_capacity(h.names.len());
        for i in 0..h.names.len() {
            match h.text.remove(&i) {
                Some(v) => columns.push(Column::Text(v)),
                None => {
                    let v: Vec<f64> = body
                        .by_ref()
                        .take(h.rows)
                        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                        .collect();
                    if v.len() != h.rows {
                        return Err(ScenarioError::Data("truncated table".into()));
                    }
                    columns.push(Column::Num(v));
                }
            }
        }
        Table::new(h.names.into_iter().zip(columns).collect())
    }
}
