//! Monte Carlo estimators for steady-state tail probabilities: direct
//! sampling of the truncated steady-state sum, the raw diffusion recursion
//! for cross-checks, and an exponentially twisted importance sampler whose
//! per-term tilts reproduce the rate-point change of measure.
//!
//! Reproducibility contract: replication r draws from ChaCha12 stream r of
//! the run seed, so a (seed, n_samples) pair pins every estimate bitwise.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::asymptotics::{TailDirection, TailSpec};
use crate::error::{Error, Result};
use crate::network::{CombinationMatrix, WeightKernel};
use crate::statmodel::{Hypothesis, PreparedTwist, StatModel};

/// One adapt-then-combine step: v = y + mu (x - y) with fresh draws x,
/// then y <- A v. Agents consume RNG draws in index order.
pub fn atc_step(
    y: &mut [f64],
    scratch: &mut [f64],
    a: &CombinationMatrix,
    model: &dyn StatModel,
    h: Hypothesis,
    mu: f64,
    rng: &mut ChaCha12Rng,
) {
    let s = a.s();
    debug_assert_eq!(y.len(), s);
    debug_assert_eq!(scratch.len(), s);
    for k in 0..s {
        let x = model.sample(h, rng);
        scratch[k] = y[k] + mu * (x - y[k]);
    }
    for (k, yk) in y.iter_mut().enumerate() {
        let row = a.row(k);
        let mut acc = 0.0;
        for (w, v) in row.iter().zip(scratch.iter()) {
            acc += w * v;
        }
        *yk = acc;
    }
}

/// Flattened weight grid xi_{i,l} = mu (1-mu)^{i-1} b_{k,l}(i) for one agent,
/// i-major l-minor, matching the sampling and tilt order everywhere else.
fn weight_grid(kernel: &WeightKernel, agent: usize) -> Vec<f64> {
    let s = kernel.s();
    let mu = kernel.mu();
    let q = 1.0 - mu;
    let mut grid = Vec::with_capacity(kernel.horizon() * s);
    let mut w = mu;
    for i in 1..=kernel.horizon() {
        let row = kernel.row(agent, i);
        for &b in row {
            grid.push(w * b);
        }
        w *= q;
    }
    grid
}

/// Direct sampler of one agent's truncated steady-state value: independent
/// model draws combined with the weight grid.
pub struct SteadyStateSampler<'a> {
    model: &'a dyn StatModel,
    h: Hypothesis,
    weights: Vec<f64>,
}

impl<'a> SteadyStateSampler<'a> {
    pub fn new(
        model: &'a dyn StatModel,
        h: Hypothesis,
        kernel: &'a WeightKernel,
        agent: usize,
    ) -> Result<Self> {
        if agent >= kernel.s() {
            return Err(Error::InvalidParam {
                name: "agent",
                reason: format!("agent {agent} out of range for {} agents", kernel.s()),
            });
        }
        Ok(SteadyStateSampler {
            model,
            h,
            weights: weight_grid(kernel, agent),
        })
    }

    pub fn terms(&self) -> usize {
        self.weights.len()
    }

    pub fn sample(&self, rng: &mut ChaCha12Rng) -> f64 {
        let mut acc = 0.0;
        let mut comp = 0.0;
        for &w in &self.weights {
            let x = self.model.sample(self.h, rng);
            kahan(&mut acc, &mut comp, w * x);
        }
        acc
    }
}

#[inline]
fn kahan(acc: &mut f64, comp: &mut f64, x: f64) {
    let y = x - *comp;
    let t = *acc + y;
    *comp = (t - *acc) - y;
    *acc = t;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateWarning {
    /// No replication crossed the threshold; the estimate is vacuous.
    NoHits,
    /// Effective sample size of the weighted hits fell below 1% of n.
    DegenerateEss { ess: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    pub p: f64,
    pub ln_p: f64,
    pub se: f64,
    pub ln_se: f64,
    pub n_samples: u64,
    pub hits: u64,
    /// (sum of hit weights)^2 / (sum of squared hit weights); equals the hit
    /// count when all weights are one.
    pub ess: f64,
    pub warning: Option<EstimateWarning>,
}

#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub n_samples: u64,
    pub seed: u64,
}

impl McConfig {
    pub fn new(n_samples: u64, seed: u64) -> Self {
        McConfig { n_samples, seed }
    }
}

/// Streaming log-domain accumulator of hit weights: tracks max ln w, the
/// rescaled first and second weight-moment sums, and the hit count.
struct LogAccumulator {
    m: f64,
    s1: f64,
    s2: f64,
    hits: u64,
    c1: f64,
    c2: f64,
}

impl LogAccumulator {
    fn new() -> Self {
        LogAccumulator {
            m: f64::NEG_INFINITY,
            s1: 0.0,
            s2: 0.0,
            hits: 0,
            c1: 0.0,
            c2: 0.0,
        }
    }

    fn push(&mut self, ln_w: f64) {
        self.hits += 1;
        if ln_w > self.m {
            // exp(-inf - finite) = 0 handles the first hit
            let scale = (self.m - ln_w).exp();
            self.s1 *= scale;
            self.s2 *= scale * scale;
            self.c1 = 0.0;
            self.c2 = 0.0;
            self.m = ln_w;
            kahan(&mut self.s1, &mut self.c1, 1.0);
            kahan(&mut self.s2, &mut self.c2, 1.0);
        } else {
            let e = (ln_w - self.m).exp();
            kahan(&mut self.s1, &mut self.c1, e);
            kahan(&mut self.s2, &mut self.c2, e * e);
        }
    }

    fn finish(&self, n: u64) -> McEstimate {
        let nf = n as f64;
        if self.hits == 0 {
            return McEstimate {
                p: 0.0,
                ln_p: f64::NEG_INFINITY,
                se: 0.0,
                ln_se: f64::NEG_INFINITY,
                n_samples: n,
                hits: 0,
                ess: 0.0,
                warning: Some(EstimateWarning::NoHits),
            };
        }
        let s1 = self.s1;
        let s2 = self.s2;
        let ln_p = self.m + (s1 / nf).ln();
        let ln_m2 = 2.0 * self.m + (s2 / nf).ln();
        // var(p_hat) = (E[w^2 1] - p^2) / n, all in log domain
        let ratio = (2.0 * ln_p - ln_m2).exp(); // p^2 / m2 <= 1
        let ln_var = ln_m2 + (-ratio).ln_1p() - nf.ln();
        let ln_se = 0.5 * ln_var;
        let ess = s1 * s1 / s2;
        let warning = if ess < 0.01 * nf {
            Some(EstimateWarning::DegenerateEss { ess })
        } else {
            None
        };
        McEstimate {
            p: ln_p.exp(),
            ln_p,
            se: ln_se.exp(),
            ln_se,
            n_samples: n,
            hits: self.hits,
            ess,
            warning,
        }
    }
}

fn crosses(y: f64, spec: &TailSpec) -> bool {
    match spec.direction {
        TailDirection::Upper => y > spec.gamma,
        TailDirection::Lower => y < spec.gamma,
    }
}

fn validate_mc(kernel: &WeightKernel, agent: usize, cfg: &McConfig) -> Result<()> {
    if agent >= kernel.s() {
        return Err(Error::InvalidParam {
            name: "agent",
            reason: format!("agent {agent} out of range for {} agents", kernel.s()),
        });
    }
    if cfg.n_samples == 0 {
        return Err(Error::InvalidParam {
            name: "n_samples",
            reason: "need at least one replication".into(),
        });
    }
    Ok(())
}

/// Plain Monte Carlo: the fraction of direct steady-state draws beyond the
/// threshold. Weight bookkeeping runs through the same accumulator as the
/// twisted estimator with every ln w = 0.
pub fn plain_mc_tail(
    model: &dyn StatModel,
    kernel: &WeightKernel,
    agent: usize,
    spec: &TailSpec,
    cfg: &McConfig,
) -> Result<McEstimate> {
    validate_mc(kernel, agent, cfg)?;
    let sampler = SteadyStateSampler::new(model, spec.hypothesis, kernel, agent)?;
    let base = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut acc = LogAccumulator::new();
    for r in 0..cfg.n_samples {
        let mut rng = base.clone();
        rng.set_stream(r);
        let y = sampler.sample(&mut rng);
        if crosses(y, spec) {
            acc.push(0.0);
        }
    }
    Ok(acc.finish(cfg.n_samples))
}

/// Per-term twisted sampler grid: entry j of the weight grid carries the
/// tilt eta_j = xi_j theta / mu = (1-mu)^{i-1} b_{k,l}(i) theta, and the
/// log normalizer accumulates sum_j psi(eta_j) in the same order.
struct TiltGrid {
    weights: Vec<f64>,
    twists: Vec<PreparedTwist>,
    ln_norm: f64,
}

fn build_tilt_grid(
    model: &dyn StatModel,
    h: Hypothesis,
    kernel: &WeightKernel,
    agent: usize,
    theta: f64,
) -> TiltGrid {
    let s = kernel.s();
    let mu = kernel.mu();
    let q = 1.0 - mu;
    let n = kernel.horizon() * s;
    let mut weights = Vec::with_capacity(n);
    let mut twists = Vec::with_capacity(n);
    let mut ln_norm = 0.0;
    let mut comp = 0.0;
    let mut w = 1.0; // (1-mu)^{i-1}
    for i in 1..=kernel.horizon() {
        let row = kernel.row(agent, i);
        for &b in row {
            let eta = w * b * theta;
            weights.push(mu * w * b);
            twists.push(model.prepare_twist(h, eta));
            kahan(&mut ln_norm, &mut comp, model.psi(h, eta));
        }
        w *= q;
    }
    TiltGrid {
        weights,
        twists,
        ln_norm,
    }
}

/// Exponentially twisted importance sampler at tilt theta. Each replication
/// draws every grid term from its own twisted law, so the drawn y follows
/// the theta-shifted steady-state law exactly and the likelihood ratio is
///   ln w = -(theta/mu) y + sum_j psi(eta_j).
/// theta = 0 reduces to plain Monte Carlo with every weight exactly one.
pub fn is_tail(
    model: &dyn StatModel,
    kernel: &WeightKernel,
    agent: usize,
    spec: &TailSpec,
    theta: f64,
    cfg: &McConfig,
) -> Result<McEstimate> {
    validate_mc(kernel, agent, cfg)?;
    if !theta.is_finite() {
        return Err(Error::InvalidParam {
            name: "theta",
            reason: format!("tilt {theta} must be finite"),
        });
    }
    let grid = build_tilt_grid(model, spec.hypothesis, kernel, agent, theta);
    let tilt_rate = theta / kernel.mu();
    let base = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut acc = LogAccumulator::new();
    for r in 0..cfg.n_samples {
        let mut rng = base.clone();
        rng.set_stream(r);
        let mut y = 0.0;
        let mut comp = 0.0;
        for (w, tw) in grid.weights.iter().zip(&grid.twists) {
            kahan(&mut y, &mut comp, w * tw.draw(&mut rng));
        }
        if crosses(y, spec) {
            acc.push(-tilt_rate * y + grid.ln_norm);
        }
    }
    Ok(acc.finish(cfg.n_samples))
}

/// Likelihood-ratio diagnostic for one replication: the sampler's ln w for a
/// drawn value y, recomputable from the truncated LMGF.
pub fn ln_weight_at(
    model: &dyn StatModel,
    h: Hypothesis,
    kernel: &WeightKernel,
    agent: usize,
    theta: f64,
    y: f64,
) -> f64 {
    let grid = build_tilt_grid(model, h, kernel, agent, theta);
    -(theta / kernel.mu()) * y + grid.ln_norm
}
