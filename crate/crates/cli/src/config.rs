//! JSON experiment configuration: topology and combination-rule selection,
//! model and tail parameters, the step-size grid, and estimation budgets.
//! Validation errors carry the offending field name so they read as config
//! diagnostics, not stack traces.

use serde::Deserialize;

use adet_core::{
    build_metropolis, build_uniform_averaging, CombinationMatrix, CorrectionVariant,
    GaussianShiftModel, Hypothesis, LaplaceShiftModel, StatModel, TailDirection, TailSpec,
    Topology, DEFAULT_TRUNC_TOL,
};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TopologySpec {
    /// "ring" | "star" | "path" | "full" (agent count from the `s` field),
    /// or "reference" for the documented 10-node study network.
    Named(String),
    Custom {
        #[serde(alias = "S")]
        s: usize,
        edges: Vec<(usize, usize)>,
    },
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Metropolis,
    UniformAveraging,
    /// Row-major S x S weights, validated against the topology support.
    Explicit(Vec<Vec<f64>>),
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Metropolis => "metropolis",
            Rule::UniformAveraging => "uniform_averaging",
            Rule::Explicit(_) => "explicit",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    Laplace { rho: f64 },
    Gaussian { mean0: f64, mean1: f64, var: f64 },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailConfig {
    pub gamma: f64,
    pub direction: TailDirection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AgentSpec {
    Keyword(String),
    List(Vec<usize>),
}

impl Default for AgentSpec {
    fn default() -> Self {
        AgentSpec::Keyword("all".to_string())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    /// Agent count for the named generators; ignored otherwise.
    #[serde(default, alias = "S")]
    pub s: Option<usize>,
    pub rule: Rule,
    /// Second combination rule, required by the compare command.
    #[serde(default)]
    pub rule_b: Option<Rule>,
    pub model: ModelSpec,
    /// Defaults to h0.
    #[serde(default)]
    pub hypothesis: Option<Hypothesis>,
    pub tail: TailConfig,
    pub mu_grid: Vec<f64>,
    /// "all" or an explicit list of agent indices; defaults to all.
    #[serde(default)]
    pub agents: AgentSpec,
    /// Replication budget per estimator cell; defaults to 100000.
    #[serde(default)]
    pub samples: Option<u64>,
    /// Root seed; required by the estimate command.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Kernel truncation tolerance; defaults to 1e-12.
    #[serde(default)]
    pub trunc_tol: Option<f64>,
    /// Correction variant for the ln_p_asym column; defaults to refined.
    #[serde(default)]
    pub variant: Option<CorrectionVariant>,
}

/// Everything a command needs, constructed and validated once.
pub struct BuiltExperiment {
    pub topology: Topology,
    pub matrix: CombinationMatrix,
    pub matrix_b: Option<CombinationMatrix>,
    pub rule_name: &'static str,
    pub model: Box<dyn StatModel>,
    pub tail: TailSpec,
    pub mu_grid: Vec<f64>,
    pub agents: Vec<usize>,
    pub samples: u64,
    pub seed: Option<u64>,
    pub trunc_tol: f64,
    pub variant: CorrectionVariant,
}

fn build_topology(cfg: &ExperimentConfig) -> Result<Topology, String> {
    match &cfg.topology {
        TopologySpec::Named(name) => match name.as_str() {
            "reference" => Ok(Topology::reference()),
            "ring" | "star" | "path" | "full" => {
                let s = cfg.s.ok_or_else(|| {
                    format!("topology: named generator \"{name}\" needs the agent-count field \"s\"")
                })?;
                let t = match name.as_str() {
                    "ring" => Topology::ring(s),
                    "star" => Topology::star(s),
                    "path" => Topology::path(s),
                    _ => Topology::full(s),
                };
                t.map_err(|e| format!("topology: {e}"))
            }
            other => Err(format!(
                "topology: unknown generator \"{other}\" (expected ring, star, path, full, reference, or an object with s and edges)"
            )),
        },
        TopologySpec::Custom { s, edges } => {
            Topology::from_edges(*s, edges).map_err(|e| format!("topology: {e}"))
        }
    }
}

pub fn build_rule(topology: &Topology, rule: &Rule, field: &str) -> Result<CombinationMatrix, String> {
    match rule {
        Rule::Metropolis => build_metropolis(topology).map_err(|e| format!("{field}: {e}")),
        Rule::UniformAveraging => {
            build_uniform_averaging(topology).map_err(|e| format!("{field}: {e}"))
        }
        Rule::Explicit(rows) => {
            let s = topology.s();
            if rows.len() != s || rows.iter().any(|r| r.len() != s) {
                return Err(format!(
                    "{field}: explicit weights must form an {s} x {s} matrix"
                ));
            }
            let entries: Vec<f64> = rows.iter().flatten().copied().collect();
            CombinationMatrix::explicit(topology, entries).map_err(|e| format!("{field}: {e}"))
        }
    }
}

impl ExperimentConfig {
    pub fn build(&self) -> Result<BuiltExperiment, String> {
        let topology = build_topology(self)?;
        let matrix = build_rule(&topology, &self.rule, "rule")?;
        let matrix_b = match &self.rule_b {
            Some(r) => Some(build_rule(&topology, r, "rule_b")?),
            None => None,
        };

        let model: Box<dyn StatModel> = match &self.model {
            ModelSpec::Laplace { rho } => {
                Box::new(LaplaceShiftModel::new(*rho).map_err(|e| format!("model: {e}"))?)
            }
            ModelSpec::Gaussian { mean0, mean1, var } => Box::new(
                GaussianShiftModel::new(*mean0, *mean1, *var)
                    .map_err(|e| format!("model: {e}"))?,
            ),
        };

        if self.mu_grid.is_empty() {
            return Err("mu_grid: must list at least one step size".to_string());
        }
        for &mu in &self.mu_grid {
            if !(mu > 0.0 && mu < 1.0) {
                return Err(format!("mu_grid: step size {mu} is outside (0, 1)"));
            }
        }
        for w in self.mu_grid.windows(2) {
            if w[1] >= w[0] {
                return Err(format!(
                    "mu_grid: must be strictly descending ({} then {})",
                    w[0], w[1]
                ));
            }
        }

        let agents = match &self.agents {
            AgentSpec::Keyword(k) if k == "all" => (0..topology.s()).collect(),
            AgentSpec::Keyword(k) => {
                return Err(format!(
                    "agents: unknown keyword \"{k}\" (expected \"all\" or a list of indices)"
                ))
            }
            AgentSpec::List(list) => {
                if list.is_empty() {
                    return Err("agents: list must not be empty".to_string());
                }
                for &a in list {
                    if a >= topology.s() {
                        return Err(format!(
                            "agents: index {a} out of range for {} agents",
                            topology.s()
                        ));
                    }
                }
                list.clone()
            }
        };

        let trunc_tol = self.trunc_tol.unwrap_or(DEFAULT_TRUNC_TOL);
        if !(trunc_tol > 0.0 && trunc_tol < 1.0) {
            return Err(format!("trunc_tol: {trunc_tol} is outside (0, 1)"));
        }

        let tail = TailSpec {
            gamma: self.tail.gamma,
            direction: self.tail.direction,
            hypothesis: self.hypothesis.unwrap_or(Hypothesis::H0),
        };
        tail.validate(model.as_ref())
            .map_err(|e| format!("tail: {e}"))?;

        Ok(BuiltExperiment {
            topology,
            matrix,
            matrix_b,
            rule_name: self.rule.name(),
            model,
            tail,
            mu_grid: self.mu_grid.clone(),
            agents,
            samples: self.samples.unwrap_or(100_000),
            seed: self.seed,
            trunc_tol,
            variant: self.variant.unwrap_or(CorrectionVariant::Refined),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_json() -> serde_json::Value {
        serde_json::json!({
            "topology": "full",
            "s": 3,
            "rule": "metropolis",
            "model": {"model": "laplace", "rho": 0.6},
            "tail": {"gamma": 0.0, "direction": "upper"},
            "mu_grid": [0.1, 0.05]
        })
    }

    fn parse(v: serde_json::Value) -> ExperimentConfig {
        serde_json::from_value(v).unwrap()
    }

    fn build_err(v: serde_json::Value) -> String {
        parse(v).build().map(|_| ()).unwrap_err()
    }

    #[test]
    fn minimal_config_builds_with_defaults() {
        let built = parse(base_json()).build().unwrap();
        assert_eq!(built.agents, vec![0, 1, 2]);
        assert_eq!(built.samples, 100_000);
        assert_eq!(built.trunc_tol, DEFAULT_TRUNC_TOL);
        assert!(matches!(built.variant, CorrectionVariant::Refined));
        assert_eq!(built.tail.hypothesis, Hypothesis::H0);
        assert!(built.matrix.is_doubly_stochastic());
    }

    #[test]
    fn mu_grid_must_descend() {
        let mut v = base_json();
        v["mu_grid"] = serde_json::json!([0.05, 0.1]);
        let err = build_err(v);
        assert!(err.contains("strictly descending"), "{err}");
    }

    #[test]
    fn named_generator_needs_agent_count() {
        let mut v = base_json();
        v.as_object_mut().unwrap().remove("s");
        let err = build_err(v);
        assert!(err.contains("agent-count"), "{err}");
    }

    #[test]
    fn unknown_topology_name_rejected() {
        let mut v = base_json();
        v["topology"] = serde_json::json!("torus");
        let err = build_err(v);
        assert!(err.contains("torus"), "{err}");
    }

    #[test]
    fn custom_edges_and_explicit_rule() {
        let mut v = base_json();
        v["topology"] = serde_json::json!({"S": 2, "edges": [[0, 1]]});
        v["rule"] = serde_json::json!({"explicit": [[0.5, 0.5], [0.25, 0.75]]});
        let built = parse(v).build().unwrap();
        assert_eq!(built.topology.s(), 2);
        assert_eq!(built.rule_name, "explicit");
        assert!((built.matrix.get(1, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn explicit_rule_shape_checked() {
        let mut v = base_json();
        v["rule"] = serde_json::json!({"explicit": [[1.0]]});
        let err = build_err(v);
        assert!(err.contains("3 x 3"), "{err}");
    }

    #[test]
    fn agent_list_validated() {
        let mut v = base_json();
        v["agents"] = serde_json::json!([0, 7]);
        let err = build_err(v);
        assert!(err.contains("out of range"), "{err}");
    }

    #[test]
    fn tail_on_wrong_side_rejected() {
        let mut v = base_json();
        // Laplace H0 mean is negative; a lower tail needs gamma below it.
        v["tail"] = serde_json::json!({"gamma": 0.0, "direction": "lower"});
        let err = build_err(v);
        assert!(err.starts_with("tail:"), "{err}");
    }

    #[test]
    fn unknown_field_rejected_at_parse() {
        let mut v = base_json();
        v["stepsize"] = serde_json::json!(0.1);
        let err = serde_json::from_value::<ExperimentConfig>(v).unwrap_err();
        assert!(err.to_string().contains("stepsize"), "{err}");
    }
}
