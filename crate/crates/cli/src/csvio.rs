//! CSV serialization of monitored runs.
//!
//! Stable schema: one row per trajectory state, header
//! `t,t_bar,tau,s,volume,` then the six per-k columns
//! `lambda_k{K},lambda_bar_k{K},F_k{K},W_k{K},M2_k{K},M3_k{K}` for each
//! configured k, then `einstein_residual,soliton_residual`. Numbers carry 17
//! significant digits; undefined entries (e.g. τ when s is not a nonzero
//! constant) serialize as NaN.

use std::io::Write;
use std::path::Path;

pub fn format_k(k: f64) -> String {
    if k.fract() == 0.0 && k.abs() < 1e15 {
        format!("{}", k as i64)
    } else {
        format!("{k}")
    }
}

/// Column block for one value of k.
pub struct PerK {
    pub k: f64,
    pub lambda: Vec<f64>,
    pub lambda_bar: Vec<f64>,
    pub f_k: Vec<f64>,
    pub w_k: Vec<f64>,
    pub m2: Vec<f64>,
    pub m3: Vec<f64>,
}

pub struct RunTable {
    pub t: Vec<f64>,
    pub t_bar: Vec<f64>,
    pub tau: Vec<f64>,
    pub s: Vec<f64>,
    pub volume: Vec<f64>,
    pub per_k: Vec<PerK>,
    pub einstein: Vec<f64>,
    pub soliton: Vec<f64>,
}

impl RunTable {
    pub fn header(&self) -> String {
        let mut h = String::from("t,t_bar,tau,s,volume");
        for block in &self.per_k {
            let k = format_k(block.k);
            h.push_str(&format!(
                ",lambda_k{k},lambda_bar_k{k},F_k{k},W_k{k},M2_k{k},M3_k{k}"
            ));
        }
        h.push_str(",einstein_residual,soliton_residual");
        h
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        out.push_str(&self.header());
        out.push('\n');
        let fmt = |v: f64| format!("{v:.16e}");
        for i in 0..self.t.len() {
            let mut row = vec![
                fmt(self.t[i]),
                fmt(self.t_bar[i]),
                fmt(self.tau[i]),
                fmt(self.s[i]),
                fmt(self.volume[i]),
            ];
            for block in &self.per_k {
                row.push(fmt(block.lambda[i]));
                row.push(fmt(block.lambda_bar[i]));
                row.push(fmt(block.f_k[i]));
                row.push(fmt(block.w_k[i]));
                row.push(fmt(block.m2[i]));
                row.push(fmt(block.m3[i]));
            }
            row.push(fmt(self.einstein[i]));
            row.push(fmt(self.soliton[i]));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(out.as_bytes())
    }
}

/// Parsed CSV: header names and one column of floats per header.
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

/// Read a CSV produced by a run; diagnostics name the row and column.
pub fn read_table(path: &Path) -> Result<Table, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut lines = text.lines();
    let Some(header_line) = lines.next() else {
        return Err(format!("{}: empty file", path.display()));
    };
    let headers: Vec<String> = header_line.split(',').map(|h| h.trim().to_string()).collect();
    if headers.len() < 2 || headers[0] != "t" {
        return Err(format!(
            "{}: malformed header (expected it to start with `t,`)",
            path.display()
        ));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    let mut rows = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != headers.len() {
            return Err(format!(
                "{}: row {} has {} cells, expected {}",
                path.display(),
                lineno + 2,
                cells.len(),
                headers.len()
            ));
        }
        for (col, cell) in cells.iter().enumerate() {
            let v = cell.trim().parse::<f64>().map_err(|_| {
                format!(
                    "{}: row {}, column `{}`: not a number: `{cell}`",
                    path.display(),
                    lineno + 2,
                    headers[col]
                )
            })?;
            columns[col].push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(format!("{}: no data rows", path.display()));
    }
    Ok(Table { headers, columns })
}
