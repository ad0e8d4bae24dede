//! Tabular emission of sweep and estimate results.
//!
//! The CSV schema is pinned: asymptotics rows carry the nine sweep columns
//! plus a trailing `error` column (empty on success; on a failed cell the
//! numeric columns print NaN and `error` carries the message). Estimate
//! tables insert the Monte Carlo columns and a `warning` column before
//! `error`. JSON mirrors the same rows with null in place of NaN or empty
//! strings, since NaN is not valid JSON.

use std::fmt::Write as _;

use serde_json::Value;

use crate::asymptotics::{SweepCell, SweepReport};
use crate::montecarlo::{EstimateWarning, McEstimate};

pub const ASYMPTOTICS_HEADER: &str = "mu,agent,theta,rate,eps_plain,eps_refined,ln_p_asym,ln_p_normal_clt,ln_p_normal_exactvar,error";

pub const ESTIMATE_HEADER: &str = "mu,agent,theta,rate,eps_plain,eps_refined,ln_p_asym,ln_p_normal_clt,ln_p_normal_exactvar,p_mc,se_mc,p_is,se_is,ess,warning,error";

/// 17 significant digits in scientific form; parsing the string recovers the
/// exact bit pattern of any finite value. NaN marks failed cells.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Quote a CSV field if it contains a delimiter, quote, or newline.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn push_cells(line: &mut String, cell: &SweepCell) {
    let _ = write!(line, "{},{}", fmt_g17(cell.mu), cell.agent);
    match &cell.values {
        Some(v) => {
            for x in [
                v.theta,
                v.rate,
                v.eps_plain,
                v.eps_refined,
                v.ln_p_asym,
                v.ln_p_normal_clt,
                v.ln_p_normal_exactvar,
            ] {
                let _ = write!(line, ",{}", fmt_g17(x));
            }
        }
        None => {
            for _ in 0..7 {
                line.push_str(",NaN");
            }
        }
    }
}

fn cell_json_entries(cell: &SweepCell) -> Vec<(&'static str, Value)> {
    let num = |x: f64| Value::from(x); // non-finite maps to null
    let mut entries = vec![
        ("mu", num(cell.mu)),
        ("agent", Value::from(cell.agent as u64)),
    ];
    let vals = [
        "theta",
        "rate",
        "eps_plain",
        "eps_refined",
        "ln_p_asym",
        "ln_p_normal_clt",
        "ln_p_normal_exactvar",
    ];
    match &cell.values {
        Some(v) => {
            let xs = [
                v.theta,
                v.rate,
                v.eps_plain,
                v.eps_refined,
                v.ln_p_asym,
                v.ln_p_normal_clt,
                v.ln_p_normal_exactvar,
            ];
            for (name, x) in vals.iter().zip(xs) {
                entries.push((name, num(x)));
            }
        }
        None => {
            for name in vals {
                entries.push((name, Value::Null));
            }
        }
    }
    entries
}

fn error_json(cell: &SweepCell) -> Value {
    match &cell.error {
        Some(e) => Value::from(e.as_str()),
        None => Value::Null,
    }
}

pub fn sweep_to_csv(report: &SweepReport) -> String {
    let mut out = String::from(ASYMPTOTICS_HEADER);
    out.push('\n');
    for cell in &report.cells {
        let mut line = String::new();
        push_cells(&mut line, cell);
        line.push(',');
        if let Some(e) = &cell.error {
            line.push_str(&csv_field(e));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn sweep_to_json(report: &SweepReport) -> Value {
    let rows: Vec<Value> = report
        .cells
        .iter()
        .map(|cell| {
            let mut map = serde_json::Map::new();
            for (k, v) in cell_json_entries(cell) {
                map.insert(k.to_string(), v);
            }
            map.insert("error".to_string(), error_json(cell));
            Value::Object(map)
        })
        .collect();
    Value::Array(rows)
}

/// One estimate-table row: the sweep cell the estimators were pointed at,
/// plus the plain-MC and IS results (absent when the cell itself failed).
#[derive(Debug, Clone)]
pub struct EstimateRow {
    pub cell: SweepCell,
    pub mc: Option<McEstimate>,
    pub is: Option<McEstimate>,
}

fn warning_slug(w: &EstimateWarning) -> &'static str {
    match w {
        EstimateWarning::NoHits => "no_hits",
        EstimateWarning::DegenerateEss { .. } => "degenerate_ess",
    }
}

fn warning_field(row: &EstimateRow) -> String {
    let mut toks = Vec::new();
    if let Some(w) = row.mc.as_ref().and_then(|e| e.warning.as_ref()) {
        toks.push(format!("mc:{}", warning_slug(w)));
    }
    if let Some(w) = row.is.as_ref().and_then(|e| e.warning.as_ref()) {
        toks.push(format!("is:{}", warning_slug(w)));
    }
    toks.join(";")
}

pub fn estimates_to_csv(rows: &[EstimateRow]) -> String {
    let mut out = String::from(ESTIMATE_HEADER);
    out.push('\n');
    for row in rows {
        let mut line = String::new();
        push_cells(&mut line, &row.cell);
        match &row.mc {
            Some(e) => {
                let _ = write!(line, ",{},{}", fmt_g17(e.p), fmt_g17(e.se));
            }
            None => line.push_str(",NaN,NaN"),
        }
        match &row.is {
            Some(e) => {
                let _ = write!(line, ",{},{},{}", fmt_g17(e.p), fmt_g17(e.se), fmt_g17(e.ess));
            }
            None => line.push_str(",NaN,NaN,NaN"),
        }
        let _ = write!(line, ",{},", csv_field(&warning_field(row)));
        if let Some(e) = &row.cell.error {
            line.push_str(&csv_field(e));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn estimates_to_json(rows: &[EstimateRow]) -> Value {
    let out: Vec<Value> = rows
        .iter()
        .map(|row| {
            let mut map = serde_json::Map::new();
            for (k, v) in cell_json_entries(&row.cell) {
                map.insert(k.to_string(), v);
            }
            let put = |map: &mut serde_json::Map<String, Value>, k: &str, x: Option<f64>| {
                map.insert(k.to_string(), x.map_or(Value::Null, Value::from));
            };
            put(&mut map, "p_mc", row.mc.as_ref().map(|e| e.p));
            put(&mut map, "se_mc", row.mc.as_ref().map(|e| e.se));
            put(&mut map, "p_is", row.is.as_ref().map(|e| e.p));
            put(&mut map, "se_is", row.is.as_ref().map(|e| e.se));
            put(&mut map, "ess", row.is.as_ref().map(|e| e.ess));
            let warn = warning_field(row);
            map.insert(
                "warning".to_string(),
                if warn.is_empty() {
                    Value::Null
                } else {
                    Value::from(warn)
                },
            );
            map.insert("error".to_string(), error_json(&row.cell));
            Value::Object(map)
        })
        .collect();
    Value::Array(out)
}
