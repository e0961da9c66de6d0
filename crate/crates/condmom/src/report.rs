//! Self-describing run reports.
//!
//! JSON keeps keys in a canonical (sorted) order. CSV is a long table with
//! columns `section,name,row,col,value`:
//!
//! | section     | name            | row       | col | value          |
//! |-------------|-----------------|-----------|-----|----------------|
//! | `meta`      | task/design/seed|           |     | text           |
//! | `tolerance` | tolerance name  |           |     | number         |
//! | `flag`      | flag name       |           |     | `true`/`false` |
//! | `note`      | note name       |           |     | text           |
//! | `scalar`    | scalar name     |           |     | number         |
//! | `series`    | series name     | index     |     | number         |
//! | `matrix`    | matrix name     | row       | col | number         |
//!
//! Both forms parse back into the same [`Report`].

use std::collections::BTreeMap;
use std::path::Path;

use condmom_core::efficient_score::ScoreField;
use condmom_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
}

impl MatrixEntry {
    pub fn from_matrix(m: &Matrix) -> Self {
        let data = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: String,
    pub design: String,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    pub flags: BTreeMap<String, bool>,
    pub notes: BTreeMap<String, String>,
    pub scalars: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    pub matrices: BTreeMap<String, MatrixEntry>,
}

fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

impl Report {
    pub fn new(task: &str, design: &str, seed: u64) -> Self {
        Self {
            task: task.into(),
            design: design.into(),
            seed,
            ..Self::default()
        }
    }

    pub fn tolerance(&mut self, name: &str, v: f64) {
        self.tolerances.insert(name.into(), v);
    }

    pub fn flag(&mut self, name: &str, v: bool) {
        self.flags.insert(name.into(), v);
    }

    pub fn note(&mut self, name: &str, v: impl Into<String>) {
        self.notes.insert(name.into(), v.into());
    }

    /// Non-finite values are left out (JSON has no NaN) and noted instead.
    pub fn scalar(&mut self, name: &str, v: f64) {
        if v.is_finite() {
            self.scalars.insert(name.into(), v);
        } else {
            self.notes.insert(name.into(), fmt_num(v));
        }
    }

    pub fn series(&mut self, name: &str, v: Vec<f64>) {
        self.series.insert(name.into(), v);
    }

    pub fn matrix(&mut self, name: &str, m: &Matrix) {
        self.matrices.insert(name.into(), MatrixEntry::from_matrix(m));
    }

    /// One matrix per block and conditioning cell, named `a<j>[x…]` with
    /// `j` counted from 1.
    pub fn field(&mut self, prefix: &str, field: &ScoreField) {
        for (j, t) in field.blocks().iter().enumerate() {
            for (x, m) in t.iter() {
                let cell: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                self.matrix(&format!("{prefix}{}[{}]", j + 1, cell.join(",")), m);
            }
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::validation(format!("report JSON: {e}")))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut put = |a: &str, b: &str, c: String, d: String, e: String| {
            w.write_record([a, b, c.as_str(), d.as_str(), e.as_str()]).expect("in-memory write");
        };
        put("section", "name", "row".into(), "col".into(), "value".into());
        put("meta", "task", String::new(), String::new(), self.task.clone());
        put("meta", "design", String::new(), String::new(), self.design.clone());
        put("meta", "seed", String::new(), String::new(), self.seed.to_string());
        for (k, v) in &self.tolerances {
            put("tolerance", k, String::new(), String::new(), fmt_num(*v));
        }
        for (k, v) in &self.flags {
            put("flag", k, String::new(), String::new(), v.to_string());
        }
        for (k, v) in &self.notes {
            put("note", k, String::new(), String::new(), v.clone());
        }
        for (k, v) in &self.scalars {
            put("scalar", k, String::new(), String::new(), fmt_num(*v));
        }
        for (k, v) in &self.series {
            for (i, x) in v.iter().enumerate() {
                put("series", k, i.to_string(), String::new(), fmt_num(*x));
            }
        }
        for (k, m) in &self.matrices {
            for r in 0..m.rows {
                for c in 0..m.cols {
                    put("matrix", k, r.to_string(), c.to_string(), fmt_num(m.data[r * m.cols + c]));
                }
            }
        }
        drop(put);
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: String| CliError::validation(format!("report CSV: {msg}"));
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut rep = Report::default();
        let mut cells: BTreeMap<String, Vec<(usize, usize, f64)>> = BTreeMap::new();
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        let idx = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("`{s}`: {e}")));
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != 5 {
                return Err(bad(format!("expected 5 columns, found {}", rec.len())));
            }
            let (sec, name, row, col, val) = (&rec[0], &rec[1], &rec[2], &rec[3], &rec[4]);
            match sec {
                "meta" => match name {
                    "task" => rep.task = val.into(),
                    "design" => rep.design = val.into(),
                    "seed" => rep.seed = val.parse().map_err(|e| bad(format!("seed: {e}")))?,
                    other => return Err(bad(format!("unknown meta field `{other}`"))),
                },
                "tolerance" => {
                    rep.tolerances.insert(name.into(), num(val)?);
                }
                "flag" => {
                    rep.flags.insert(name.into(), val == "true");
                }
                "note" => {
                    rep.notes.insert(name.into(), val.into());
                }
                "scalar" => {
                    rep.scalars.insert(name.into(), num(val)?);
                }
                "series" => {
                    let i = idx(row)?;
                    let s = rep.series.entry(name.into()).or_default();
                    if i != s.len() {
                        return Err(bad(format!("series `{name}` out of order at {i}")));
                    }
                    s.push(num(val)?);
                }
                "matrix" => cells.entry(name.into()).or_default().push((idx(row)?, idx(col)?, num(val)?)),
                other => return Err(bad(format!("unknown section `{other}`"))),
            }
        }
        for (name, v) in cells {
            let rows = v.iter().map(|c| c.0).max().unwrap_or(0) + 1;
            let cols = v.iter().map(|c| c.1).max().unwrap_or(0) + 1;
            if v.len() != rows * cols {
                return Err(bad(format!("matrix `{name}` is incomplete")));
            }
            let mut data = vec![0.0; rows * cols];
            for (r, c, x) in v {
                data[r * cols + c] = x;
            }
            rep.matrices.insert(name, MatrixEntry { rows, cols, data });
        }
        Ok(rep)
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }

    pub fn write(&self, path: &Path, format: Format) -> Result<()> {
        std::fs::write(path, self.render(format)).map_err(|e| CliError::io(path.display().to_string(), e))
    }

    /// Reads either form, picking CSV for a `.csv` extension.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
        if path.extension().is_some_and(|e| e == "csv") {
            Self::from_csv(&text)
        } else {
            Self::from_json(&text)
        }
    }
}
