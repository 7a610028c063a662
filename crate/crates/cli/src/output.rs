//! JSON reports and matrix CSVs.

use std::path::Path;

use resdr::linalg::{Mat, Vector};
use serde_json::{json, Value};

use crate::CliError;

/// 17 significant digits, enough to round-trip an f64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn mat_json(m: &Mat) -> Value {
    Value::Array(m.row_iter().map(|r| json!(r.iter().copied().collect::<Vec<f64>>())).collect())
}

pub fn vec_json(v: &Vector) -> Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

pub fn mat_from_json(v: &Value, what: &str) -> Result<Mat, CliError> {
    let bad = || CliError::User(format!("field '{what}' is not a numeric matrix"));
    let rows = v.as_array().ok_or_else(bad)?;
    let data: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.as_array().ok_or_else(bad)?.iter().map(|x| x.as_f64().ok_or_else(bad)).collect())
        .collect::<Result<_, _>>()?;
    let ncols = data.first().map_or(0, Vec::len);
    if data.is_empty() || data.iter().any(|r| r.len() != ncols) {
        return Err(bad());
    }
    Ok(Mat::from_fn(data.len(), ncols, |i, j| data[i][j]))
}

/// Plain row-by-row matrix CSV without a header.
pub fn matrix_csv(m: &Mat) -> String {
    let mut out = String::new();
    for r in m.row_iter() {
        let cells: Vec<String> = r.iter().map(|&x| fmt17(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Per-cluster bases, one line per basis column:
/// `cluster_id,quantity,column,v1..vp`.
pub struct BasisTable {
    width: usize,
    body: String,
}

impl BasisTable {
    pub fn new(width: usize) -> Self {
        BasisTable { width, body: String::new() }
    }

    pub fn push(&mut self, id: &str, quantity: &str, m: &Mat) {
        for (k, col) in m.column_iter().enumerate() {
            let cells: Vec<String> = col.iter().map(|&x| fmt17(x)).collect();
            self.body.push_str(&format!("{id},{quantity},{},{}\n", k + 1, cells.join(",")));
        }
    }

    pub fn finish(self) -> String {
        let cols: Vec<String> = (1..=self.width).map(|k| format!("v{k}")).collect();
        format!("cluster_id,quantity,column,{}\n{}", cols.join(","), self.body)
    }
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::User(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::User(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json(dir: &Path, name: &str, v: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    text.push('\n');
    write_file(dir, name, &text)
}
