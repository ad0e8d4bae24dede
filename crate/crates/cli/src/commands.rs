//! Command implementations. Each returns rendered text plus an exit status,
//! so main stays a thin argument-and-IO shell and every number comes from
//! the same library calls a direct caller would make.

use std::fmt::Write as _;

use serde_json::Value;

use adet_core::{
    build_weight_kernel, estimates_to_csv, estimates_to_json, fmt_g17, is_tail, plain_mc_tail,
    sweep, sweep_to_csv, sweep_to_json, EstimateRow, McConfig, SweepReport, SweepRequest,
    WeightKernel,
};

use crate::config::BuiltExperiment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutFormat {
    Csv,
    Json,
}

pub struct Outcome {
    pub text: String,
    /// 0 on success; 3 when every (mu, agent) cell failed numerically.
    pub code: u8,
}

pub struct RunError {
    pub code: u8,
    pub message: String,
}

pub const COMPARE_HEADER: &str = "mu,agent,rate_a,rate_b,ln_p_a,ln_p_b,ln_p_diff,error";

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("tables serialize");
    s.push('\n');
    s
}

pub fn cmd_topology_info(b: &BuiltExperiment, format: OutFormat) -> Outcome {
    let t = &b.topology;
    let degrees: Vec<usize> = (0..t.s()).map(|k| t.degree(k)).collect();
    let text = match format {
        OutFormat::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "s: {}", t.s());
            let fmt_list = |xs: &[String]| xs.join(" ");
            let deg: Vec<String> = degrees.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "degrees: {}", fmt_list(&deg));
            let _ = writeln!(out, "rule: {}", b.rule_name);
            let _ = writeln!(out, "lambda2: {}", b.matrix.lambda2());
            let per: Vec<String> = b.matrix.perron().iter().map(|p| p.to_string()).collect();
            let _ = writeln!(out, "perron: {}", fmt_list(&per));
            let _ = writeln!(out, "doubly_stochastic: {}", b.matrix.is_doubly_stochastic());
            out
        }
        OutFormat::Json => json_text(&serde_json::json!({
            "s": t.s(),
            "degrees": degrees,
            "rule": b.rule_name,
            "lambda2": b.matrix.lambda2(),
            "perron": b.matrix.perron(),
            "doubly_stochastic": b.matrix.is_doubly_stochastic(),
        })),
    };
    Outcome { text, code: 0 }
}

fn run_sweep(
    b: &BuiltExperiment,
    matrix: &adet_core::CombinationMatrix,
) -> Result<SweepReport, RunError> {
    let req = SweepRequest {
        model: b.model.as_ref(),
        matrix,
        tail: b.tail,
        mu_grid: &b.mu_grid,
        agents: &b.agents,
        trunc_tol: b.trunc_tol,
        variant: b.variant,
    };
    sweep(&req).map_err(|e| RunError {
        code: 2,
        message: e.to_string(),
    })
}

fn all_failed(report: &SweepReport) -> bool {
    report.cells.iter().all(|c| c.error.is_some())
}

pub fn cmd_asymptotics(b: &BuiltExperiment, format: OutFormat) -> Result<Outcome, RunError> {
    let report = run_sweep(b, &b.matrix)?;
    let text = match format {
        OutFormat::Csv => sweep_to_csv(&report),
        OutFormat::Json => json_text(&sweep_to_json(&report)),
    };
    let code = if all_failed(&report) { 3 } else { 0 };
    Ok(Outcome { text, code })
}

pub fn cmd_estimate(b: &BuiltExperiment, format: OutFormat) -> Result<Outcome, RunError> {
    let seed = b.seed.ok_or_else(|| RunError {
        code: 2,
        message: "seed: the estimate command needs a seed (config field or --seed)".to_string(),
    })?;
    if b.samples == 0 {
        return Err(RunError {
            code: 2,
            message: "samples: need at least one replication".to_string(),
        });
    }
    let report = run_sweep(b, &b.matrix)?;
    let theta = report.rate_point.as_ref().map(|rp| rp.theta);

    let mut rows = Vec::with_capacity(report.cells.len());
    let mut cached: Option<(f64, WeightKernel)> = None;
    for (idx, cell) in report.cells.iter().enumerate() {
        // replication streams stay disjoint across cells: cell row index
        // offsets the root seed
        let cfg = McConfig::new(b.samples, seed.wrapping_add(idx as u64));
        let mut row = EstimateRow {
            cell: cell.clone(),
            mc: None,
            is: None,
        };
        if cell.values.is_some() {
            let fresh = match &cached {
                Some((mu, _)) if *mu == cell.mu => None,
                _ => Some(
                    build_weight_kernel(&b.matrix, cell.mu, b.trunc_tol).map_err(|e| RunError {
                        code: 2,
                        message: e.to_string(),
                    })?,
                ),
            };
            if let Some(k) = fresh {
                cached = Some((cell.mu, k));
            }
            let kernel = &cached.as_ref().expect("kernel cached").1;
            let theta = theta.expect("rate point exists when a cell has values");
            let mc = plain_mc_tail(b.model.as_ref(), kernel, cell.agent, &b.tail, &cfg);
            let is = is_tail(b.model.as_ref(), kernel, cell.agent, &b.tail, theta, &cfg);
            match (mc, is) {
                (Ok(mc), Ok(is)) => {
                    row.mc = Some(mc);
                    row.is = Some(is);
                }
                (Err(e), _) | (_, Err(e)) => {
                    row.cell.values = None;
                    row.cell.error = Some(e.to_string());
                }
            }
        }
        rows.push(row);
    }

    let text = match format {
        OutFormat::Csv => estimates_to_csv(&rows),
        OutFormat::Json => json_text(&estimates_to_json(&rows)),
    };
    let code = if rows.iter().all(|r| r.cell.error.is_some()) {
        3
    } else {
        0
    };
    Ok(Outcome { text, code })
}

struct CompareRow {
    mu: f64,
    /// Agent index, or None for the arithmetic-mean-over-agents row.
    agent: Option<usize>,
    rate_a: f64,
    rate_b: f64,
    ln_p_a: f64,
    ln_p_b: f64,
    error: String,
}

impl CompareRow {
    fn diff(&self) -> f64 {
        self.ln_p_a - self.ln_p_b
    }
}

/// ln of the arithmetic mean of probabilities given in log domain.
fn ln_mean(lnps: &[f64]) -> f64 {
    let m = lnps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = lnps.iter().map(|&x| (x - m).exp()).sum();
    m + (s / lnps.len() as f64).ln()
}

pub fn cmd_compare(b: &BuiltExperiment, format: OutFormat) -> Result<Outcome, RunError> {
    let matrix_b = b.matrix_b.as_ref().ok_or_else(|| RunError {
        code: 2,
        message: "rule_b: the compare command needs a second combination rule".to_string(),
    })?;
    let rep_a = run_sweep(b, &b.matrix)?;
    let rep_b = run_sweep(b, matrix_b)?;

    let n_agents = b.agents.len();
    let mut rows = Vec::new();
    let mut any_agent_row_ok = false;
    for (mi, &mu) in b.mu_grid.iter().enumerate() {
        let mut lnps_a = Vec::with_capacity(n_agents);
        let mut lnps_b = Vec::with_capacity(n_agents);
        for ai in 0..n_agents {
            let ca = &rep_a.cells[mi * n_agents + ai];
            let cb = &rep_b.cells[mi * n_agents + ai];
            let mut err = Vec::new();
            if let Some(e) = &ca.error {
                err.push(format!("a: {e}"));
            }
            if let Some(e) = &cb.error {
                err.push(format!("b: {e}"));
            }
            let (rate_a, ln_p_a) = ca
                .values
                .map_or((f64::NAN, f64::NAN), |v| (v.rate, v.ln_p_asym));
            let (rate_b, ln_p_b) = cb
                .values
                .map_or((f64::NAN, f64::NAN), |v| (v.rate, v.ln_p_asym));
            if err.is_empty() {
                any_agent_row_ok = true;
                lnps_a.push(ln_p_a);
                lnps_b.push(ln_p_b);
            }
            rows.push(CompareRow {
                mu,
                agent: Some(ca.agent),
                rate_a,
                rate_b,
                ln_p_a,
                ln_p_b,
                error: err.join("; "),
            });
        }
        if lnps_a.len() == n_agents && lnps_b.len() == n_agents {
            let last = rows.last().unwrap();
            let (rate_a, rate_b) = (last.rate_a, last.rate_b);
            rows.push(CompareRow {
                mu,
                agent: None,
                rate_a,
                rate_b,
                ln_p_a: ln_mean(&lnps_a),
                ln_p_b: ln_mean(&lnps_b),
                error: String::new(),
            });
        } else {
            rows.push(CompareRow {
                mu,
                agent: None,
                rate_a: f64::NAN,
                rate_b: f64::NAN,
                ln_p_a: f64::NAN,
                ln_p_b: f64::NAN,
                error: "mean skipped: failed agent cells".to_string(),
            });
        }
    }

    let text = match format {
        OutFormat::Csv => {
            let mut out = String::from(COMPARE_HEADER);
            out.push('\n');
            for r in &rows {
                let agent = r
                    .agent
                    .map_or_else(|| "mean".to_string(), |a| a.to_string());
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    fmt_g17(r.mu),
                    agent,
                    fmt_g17(r.rate_a),
                    fmt_g17(r.rate_b),
                    fmt_g17(r.ln_p_a),
                    fmt_g17(r.ln_p_b),
                    fmt_g17(r.diff()),
                    csv_escape(&r.error),
                );
            }
            out
        }
        OutFormat::Json => {
            let arr: Vec<Value> = rows
                .iter()
                .map(|r| {
                    let agent = r
                        .agent
                        .map_or_else(|| Value::from("mean"), |a| Value::from(a as u64));
                    serde_json::json!({
                        "mu": r.mu,
                        "agent": agent,
                        "rate_a": Value::from(r.rate_a),
                        "rate_b": Value::from(r.rate_b),
                        "ln_p_a": Value::from(r.ln_p_a),
                        "ln_p_b": Value::from(r.ln_p_b),
                        "ln_p_diff": Value::from(r.diff()),
                        "error": if r.error.is_empty() { Value::Null } else { Value::from(r.error.as_str()) },
                    })
                })
                .collect();
            json_text(&Value::Array(arr))
        }
    };
    let code = if any_agent_row_ok { 0 } else { 3 };
    Ok(Outcome { text, code })
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
