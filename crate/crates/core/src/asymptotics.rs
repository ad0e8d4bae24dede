//! Tail probability machinery for the steady-state statistic: Legendre rate
//! point, refined small-step tail estimate with finite-step corrections, and
//! Gaussian reference approximations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmgf::{step_corrections, LimitingLmgf, TruncatedLmgf};
use crate::network::{build_weight_kernel, CombinationMatrix};
use crate::statmodel::{Hypothesis, StatModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailDirection {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionVariant {
    Plain,
    Refined,
}

/// Which tail of which hypothesis' steady-state law is being bounded.
/// Upper with H0 is a false-alarm probability, Lower with H1 a miss.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailSpec {
    pub gamma: f64,
    pub direction: TailDirection,
    pub hypothesis: Hypothesis,
}

impl TailSpec {
    /// The threshold must lie strictly on the far side of the statistic's
    /// mean, otherwise the event is not a large deviation of this tail.
    pub fn validate(&self, model: &dyn StatModel) -> Result<()> {
        if !self.gamma.is_finite() {
            return Err(Error::InvalidParam {
                name: "gamma",
                reason: format!("threshold {} must be finite", self.gamma),
            });
        }
        let mean = model.mean(self.hypothesis);
        let ok = match self.direction {
            TailDirection::Upper => self.gamma > mean,
            TailDirection::Lower => self.gamma < mean,
        };
        if !ok {
            return Err(Error::ThresholdSide {
                gamma: self.gamma,
                mean,
                side: match self.direction {
                    TailDirection::Upper => "upper",
                    TailDirection::Lower => "lower",
                },
            });
        }
        Ok(())
    }
}

/// Tilt point and rate: theta solves phi'(theta) = gamma, rate is the
/// Legendre transform gamma theta - phi(theta), curvature is phi''(theta).
/// None of these depend on mu or on the agent.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RatePoint {
    pub theta: f64,
    pub rate: f64,
    pub curvature: f64,
}

const THETA_BRACKET_START: f64 = 1e-3;
const THETA_BRACKET_MAX: f64 = 1e6;
const THETA_MAX_ITER: u32 = 200;

/// Solve phi'(theta) = gamma by bracket expansion plus safeguarded Newton.
/// phi' is strictly increasing (phi strictly convex), so the root is simple;
/// Newton falls back to bisection whenever its step leaves the bracket.
pub fn solve_theta(lim: &LimitingLmgf, spec: &TailSpec) -> Result<f64> {
    spec.validate(lim.model())?;
    let gamma = spec.gamma;
    let g = |t: f64| lim.phi_prime(t) - gamma;
    let sign = match spec.direction {
        TailDirection::Upper => 1.0,
        TailDirection::Lower => -1.0,
    };
    let mut hi = sign * THETA_BRACKET_START;
    let mut lo = 0.0;
    // Expand until the root is straddled: sign * g flips from negative at 0.
    while sign * g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi.abs() > THETA_BRACKET_MAX {
            return Err(Error::NoBracket {
                gamma,
                reached: lim.phi_prime(hi / 2.0),
            });
        }
    }
    // Orient so that g(a) <= 0 <= g(b) regardless of tail side.
    let (mut a, mut b) = if sign > 0.0 { (lo, hi) } else { (hi, lo) };
    let mut t = 0.5 * (a + b);
    let tol = 1e-12 * gamma.abs().max(1.0);
    for _ in 0..THETA_MAX_ITER {
        let gt = g(t);
        if gt.abs() <= tol {
            return Ok(t);
        }
        if gt < 0.0 {
            a = t;
        } else {
            b = t;
        }
        let curv = lim.phi_second(t);
        let newton = t - gt / curv;
        t = if curv > 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    Err(Error::SolverDiverged {
        cap: THETA_MAX_ITER as usize,
    })
}

pub fn solve_rate_point(lim: &LimitingLmgf, spec: &TailSpec) -> Result<RatePoint> {
    let theta = solve_theta(lim, spec)?;
    let rate = spec.gamma * theta - lim.phi(theta)?;
    let curvature = lim.phi_second(theta);
    if !(curvature > 0.0) {
        return Err(Error::InvalidParam {
            name: "curvature",
            reason: format!("phi''(theta) = {curvature} not positive at theta = {theta}"),
        });
    }
    Ok(RatePoint {
        theta,
        rate,
        curvature,
    })
}

/// Refined tail estimate for one agent at one step size.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailAsymptotic {
    pub theta: f64,
    pub rate: f64,
    pub curvature: f64,
    pub eps_plain: f64,
    pub eps_refined: f64,
    pub ln_p_plain: f64,
    pub ln_p_refined: f64,
}

impl TailAsymptotic {
    pub fn ln_p(&self, variant: CorrectionVariant) -> f64 {
        match variant {
            CorrectionVariant::Plain => self.ln_p_plain,
            CorrectionVariant::Refined => self.ln_p_refined,
        }
    }
}

/// Assemble ln of the tail estimate from its parts:
///   0.5 [ln mu - ln 2 pi - 2 ln |theta| - ln phi''(theta)] - (rate + eps)/mu.
pub fn ln_p_from_parts(mu: f64, rp: &RatePoint, eps: f64) -> f64 {
    0.5 * (mu.ln()
        - (2.0 * std::f64::consts::PI).ln()
        - 2.0 * rp.theta.abs().ln()
        - rp.curvature.ln())
        - (rp.rate + eps) / mu
}

/// Tail estimate sharing a precomputed rate point (one solve serves every
/// agent and step size). The shipped estimate needs a density component in
/// the statistic's law; lattice models fall outside it.
pub fn tail_asymptotic_at(
    lim: &LimitingLmgf,
    trunc: &TruncatedLmgf,
    rp: &RatePoint,
) -> Result<TailAsymptotic> {
    if lim.model().is_lattice() {
        return Err(Error::LatticeModel);
    }
    let mu = trunc.kernel().mu();
    let (c1, c2) = step_corrections(lim, trunc, rp.theta)?;
    let eps_plain = c1;
    let eps_refined = c1 + c2 * c2 / (2.0 * rp.curvature);
    Ok(TailAsymptotic {
        theta: rp.theta,
        rate: rp.rate,
        curvature: rp.curvature,
        eps_plain,
        eps_refined,
        ln_p_plain: ln_p_from_parts(mu, rp, eps_plain),
        ln_p_refined: ln_p_from_parts(mu, rp, eps_refined),
    })
}

/// Solve-and-estimate convenience for a single (agent, mu) cell.
pub fn tail_asymptotic(
    lim: &LimitingLmgf,
    trunc: &TruncatedLmgf,
    spec: &TailSpec,
) -> Result<TailAsymptotic> {
    let rp = solve_rate_point(lim, spec)?;
    tail_asymptotic_at(lim, trunc, &rp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalKind {
    /// Limiting mean E[x] and variance mu phi''(0).
    CltLimit,
    /// Exact truncated steady-state mean and variance.
    ExactVar,
}

/// ln Q(z) for the standard normal upper tail, valid across the full double
/// range: erfc in the center, asymptotic series for z >= 30 (erfc underflows
/// near 26.5 sigma), log1p branch for deep negative z where Q(z) -> 1.
pub fn ln_gaussian_upper_tail(z: f64) -> f64 {
    let sqrt2 = std::f64::consts::SQRT_2;
    if z >= 30.0 {
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - (z * (2.0 * std::f64::consts::PI).sqrt()).ln() + series.ln()
    } else if z <= -8.0 {
        // Q(z) = 1 - Q(-z); compute through log1p to keep the tiny deficit.
        (-(0.5 * libm::erfc(-z / sqrt2))).ln_1p()
    } else {
        (0.5 * libm::erfc(z / sqrt2)).ln()
    }
}

/// Gaussian reference approximation of the same tail, in ln.
pub fn normal_ln_tail(
    lim: &LimitingLmgf,
    trunc: &TruncatedLmgf,
    spec: &TailSpec,
    kind: NormalKind,
) -> f64 {
    let model = lim.model();
    let h = lim.hypothesis();
    let (mean, var) = match kind {
        NormalKind::CltLimit => (
            model.mean(h),
            trunc.kernel().mu() * lim.phi_second(0.0),
        ),
        NormalKind::ExactVar => (
            model.mean(h) * trunc.xi_power_sum(1),
            model.variance(h) * trunc.xi_power_sum(2),
        ),
    };
    let sd = var.sqrt();
    let z = match spec.direction {
        TailDirection::Upper => (spec.gamma - mean) / sd,
        TailDirection::Lower => (mean - spec.gamma) / sd,
    };
    ln_gaussian_upper_tail(z)
}

/// One (mu, agent) cell of a sweep. Numeric failures land in `error` and
/// leave `values` empty; structurally bad requests fail the whole sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub mu: f64,
    pub agent: usize,
    pub values: Option<SweepCellValues>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepCellValues {
    pub theta: f64,
    pub rate: f64,
    pub eps_plain: f64,
    pub eps_refined: f64,
    pub ln_p_asym: f64,
    pub ln_p_normal_clt: f64,
    pub ln_p_normal_exactvar: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    /// Shared rate point when the solve succeeded; None puts the failure
    /// message in every cell.
    pub rate_point: Option<RatePoint>,
}

pub struct SweepRequest<'a> {
    pub model: &'a dyn StatModel,
    pub matrix: &'a CombinationMatrix,
    pub tail: TailSpec,
    pub mu_grid: &'a [f64],
    pub agents: &'a [usize],
    pub trunc_tol: f64,
    pub variant: CorrectionVariant,
}

/// Tail estimates over a step-size grid and agent set. theta, rate and
/// curvature are solved once and shared across every cell, so they agree
/// bitwise over the whole table.
pub fn sweep(req: &SweepRequest) -> Result<SweepReport> {
    if req.mu_grid.is_empty() {
        return Err(Error::InvalidParam {
            name: "mu_grid",
            reason: "empty step-size grid".into(),
        });
    }
    if req.agents.is_empty() {
        return Err(Error::InvalidParam {
            name: "agents",
            reason: "empty agent list".into(),
        });
    }
    for &a in req.agents {
        if a >= req.matrix.s() {
            return Err(Error::InvalidParam {
                name: "agents",
                reason: format!("agent {a} out of range for {} agents", req.matrix.s()),
            });
        }
    }
    req.tail.validate(req.model)?;
    if req.model.is_lattice() {
        return Err(Error::LatticeModel);
    }

    let lim = LimitingLmgf::new(req.model, req.tail.hypothesis, req.matrix.perron())?;
    let rate_point = match solve_rate_point(&lim, &req.tail) {
        Ok(rp) => Some(rp),
        Err(e) => {
            let msg = e.to_string();
            let mut cells = Vec::new();
            for &mu in req.mu_grid {
                for &agent in req.agents {
                    cells.push(SweepCell {
                        mu,
                        agent,
                        values: None,
                        error: Some(msg.clone()),
                    });
                }
            }
            return Ok(SweepReport {
                cells,
                rate_point: None,
            });
        }
    };
    let rp = rate_point.unwrap();

    let mut cells = Vec::with_capacity(req.mu_grid.len() * req.agents.len());
    for &mu in req.mu_grid {
        let kernel = match build_weight_kernel(req.matrix, mu, req.trunc_tol) {
            Ok(k) => k,
            Err(e) => {
                let msg = e.to_string();
                for &agent in req.agents {
                    cells.push(SweepCell {
                        mu,
                        agent,
                        values: None,
                        error: Some(msg.clone()),
                    });
                }
                continue;
            }
        };
        for &agent in req.agents {
            let cell = TruncatedLmgf::new(req.model, req.tail.hypothesis, &kernel, agent)
                .and_then(|trunc| {
                    let ta = tail_asymptotic_at(&lim, &trunc, &rp)?;
                    let clt = normal_ln_tail(&lim, &trunc, &req.tail, NormalKind::CltLimit);
                    let ev = normal_ln_tail(&lim, &trunc, &req.tail, NormalKind::ExactVar);
                    Ok(SweepCellValues {
                        theta: ta.theta,
                        rate: ta.rate,
                        eps_plain: ta.eps_plain,
                        eps_refined: ta.eps_refined,
                        ln_p_asym: ta.ln_p(req.variant),
                        ln_p_normal_clt: clt,
                        ln_p_normal_exactvar: ev,
                    })
                });
            match cell {
                Ok(values) => cells.push(SweepCell {
                    mu,
                    agent,
                    values: Some(values),
                    error: None,
                }),
                Err(e) => cells.push(SweepCell {
                    mu,
                    agent,
                    values: None,
                    error: Some(e.to_string()),
                }),
            }
        }
    }
    Ok(SweepReport {
        cells,
        rate_point: Some(rp),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_metropolis, build_uniform_averaging, build_weight_kernel, Topology};
    use crate::statmodel::{GaussianShiftModel, LaplaceShiftModel, PreparedTwist};
    use rand::RngCore;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn upper(gamma: f64) -> TailSpec {
        TailSpec {
            gamma,
            direction: TailDirection::Upper,
            hypothesis: Hypothesis::H0,
        }
    }

    /// Path of 3 agents under uniform averaging: Perron (2/7, 3/7, 2/7),
    /// sum p^2 = 17/49. Gaussian closed forms: theta = 2 gamma / (v sum p^2),
    /// rate = gamma^2 / (v sum p^2), curvature = v sum p^2 / 2.
    fn gaussian_path() -> (GaussianShiftModel, CombinationMatrix) {
        let top = Topology::path(3).unwrap();
        let a = build_uniform_averaging(&top).unwrap();
        let g = GaussianShiftModel::new(0.0, 1.0, 1.0).unwrap();
        (g, a)
    }

    #[test]
    fn gaussian_rate_point_closed_form() {
        let (g, a) = gaussian_path();
        let lim = LimitingLmgf::new(&g, Hypothesis::H0, a.perron()).unwrap();
        let rp = solve_rate_point(&lim, &upper(0.5)).unwrap();
        assert_close(rp.theta, 49.0 / 17.0, 1e-9);
        assert_close(rp.rate, 49.0 / 68.0, 1e-9);
        assert_close(rp.curvature, 17.0 / 98.0, 1e-12);
    }

    #[test]
    fn laplace_uniform_ten_agents_rate_point() {
        // psi0(1) = 0 for a log-likelihood ratio, so with equal weights 1/10
        // the tilt for gamma = 0 sits exactly at theta = 10, and the rate is
        // -phi(10) = -10 omega(1).
        let m = LaplaceShiftModel::new(0.6).unwrap();
        let p = vec![0.1; 10];
        let lim = LimitingLmgf::new(&m, Hypothesis::H0, &p).unwrap();
        let rp = solve_rate_point(&lim, &upper(0.0)).unwrap();
        assert_close(rp.theta, 10.0, 1e-8);
        assert_close(rp.rate, 0.7498071133515801, 1e-9);
        assert_close(rp.curvature, m.psi_prime(Hypothesis::H0, 1.0) / 10.0, 1e-10);
    }

    #[test]
    fn lower_tail_mirrors_symmetric_model() {
        let (g, a) = gaussian_path();
        let lim = LimitingLmgf::new(&g, Hypothesis::H0, a.perron()).unwrap();
        let up = solve_rate_point(&lim, &upper(0.5)).unwrap();
        let spec = TailSpec {
            gamma: -0.5,
            direction: TailDirection::Lower,
            hypothesis: Hypothesis::H0,
        };
        let lo = solve_rate_point(&lim, &spec).unwrap();
        assert_close(lo.theta, -up.theta, 1e-9);
        assert_close(lo.rate, up.rate, 1e-9);
    }

    #[test]
    fn miss_tail_under_h1() {
        // H1 law of the Laplace LLR is the mirrored H0 law, so the miss rate
        // at gamma = 0 equals the false-alarm rate at gamma = 0.
        let m = LaplaceShiftModel::new(0.6).unwrap();
        let p = vec![0.1; 10];
        let lim0 = LimitingLmgf::new(&m, Hypothesis::H0, &p).unwrap();
        let lim1 = LimitingLmgf::new(&m, Hypothesis::H1, &p).unwrap();
        let fa = solve_rate_point(&lim0, &upper(0.0)).unwrap();
        let miss_spec = TailSpec {
            gamma: 0.0,
            direction: TailDirection::Lower,
            hypothesis: Hypothesis::H1,
        };
        let miss = solve_rate_point(&lim1, &miss_spec).unwrap();
        assert_close(miss.theta, -fa.theta, 1e-7);
        assert_close(miss.rate, fa.rate, 1e-9);
    }

    #[test]
    fn threshold_side_rejected() {
        let m = LaplaceShiftModel::new(0.6).unwrap();
        let p = vec![0.1; 10];
        let lim = LimitingLmgf::new(&m, Hypothesis::H0, &p).unwrap();
        // mean is about -0.149; an upper tail below it is not a rare event
        let bad = upper(-0.2);
        assert!(matches!(
            solve_theta(&lim, &bad),
            Err(Error::ThresholdSide { .. })
        ));
        let eq = upper(m.mean(Hypothesis::H0));
        assert!(solve_theta(&lim, &eq).is_err());
    }

    #[test]
    fn saturated_threshold_has_no_bracket() {
        // The Laplace statistic is bounded by rho, so phi' saturates at rho
        // and gamma = 0.7 > rho = 0.6 is unreachable.
        let m = LaplaceShiftModel::new(0.6).unwrap();
        let p = vec![0.1; 10];
        let lim = LimitingLmgf::new(&m, Hypothesis::H0, &p).unwrap();
        match solve_theta(&lim, &upper(0.7)) {
            Err(Error::NoBracket { gamma, reached }) => {
                assert_eq!(gamma, 0.7);
                assert!(reached < 0.7 && reached > 0.59);
            }
            other => panic!("expected NoBracket, got {other:?}"),
        }
    }

    #[test]
    fn ln_gaussian_upper_tail_frozen_and_continuous() {
        assert_close(ln_gaussian_upper_tail(0.0), -core::f64::consts::LN_2, 1e-14);
        assert_close(ln_gaussian_upper_tail(1.0), -1.841021645009264, 1e-12);
        assert_close(ln_gaussian_upper_tail(5.0), -15.064998393988727, 1e-11);
        assert_close(ln_gaussian_upper_tail(30.5), -469.4627373229121, 1e-8);
        let lo = ln_gaussian_upper_tail(29.9999);
        let hi = ln_gaussian_upper_tail(30.0001);
        assert!((lo - hi).abs() < 0.007, "branch jump at 30: {lo} vs {hi}");
        // deep negative z: Q -> 1 so ln Q -> 0 from below
        let v = ln_gaussian_upper_tail(-8.5);
        assert!(v < 0.0 && v > -1e-15);
        assert_close(v, -9.479534822203251e-18, 1e-17);
    }

    #[test]
    fn full_pipeline_frozen_gaussian_cell() {
        // Whole-chain freeze: path topology, uniform averaging, Gaussian
        // model, mu = 0.05, agent 0, gamma = 0.5, refined correction.
        let (g, a) = gaussian_path();
        let lim = LimitingLmgf::new(&g, Hypothesis::H0, a.perron()).unwrap();
        let kernel = build_weight_kernel(&a, 0.05, 1e-12).unwrap();
        let trunc = TruncatedLmgf::new(&g, Hypothesis::H0, &kernel, 0).unwrap();
        let ta = tail_asymptotic(&lim, &trunc, &upper(0.5)).unwrap();
        assert_close(ta.eps_plain, -0.057318436386631, 1e-9);
        assert_close(ta.eps_refined, -0.052759101403224, 1e-9);
        assert_close(ta.ln_p_refined, -15.956117234546776, 1e-7);
    }

    #[test]
    fn normal_approximations_gaussian_model() {
        let (g, a) = gaussian_path();
        let mu = 0.05;
        let kernel = build_weight_kernel(&a, mu, 1e-12).unwrap();
        let lim = LimitingLmgf::new(&g, Hypothesis::H0, a.perron()).unwrap();
        let trunc = TruncatedLmgf::new(&g, Hypothesis::H0, &kernel, 0).unwrap();
        let spec = upper(0.5);
        // CLT flavor: z = gamma / sqrt(mu sum p^2 / 2)
        let s2: f64 = a.perron().iter().map(|p| p * p).sum();
        let want = ln_gaussian_upper_tail(0.5 / (mu * s2 / 2.0).sqrt());
        assert_close(
            normal_ln_tail(&lim, &trunc, &spec, NormalKind::CltLimit),
            want,
            1e-12,
        );
        // exact-variance flavor reproduces the true tail for this model
        let want = ln_gaussian_upper_tail(0.5 / trunc.xi_power_sum(2).sqrt());
        assert_close(
            normal_ln_tail(&lim, &trunc, &spec, NormalKind::ExactVar),
            want,
            1e-12,
        );
        // lower tail mirrors: for mean-zero Gaussian, same magnitude at -gamma
        let lspec = TailSpec {
            gamma: -0.5,
            direction: TailDirection::Lower,
            hypothesis: Hypothesis::H0,
        };
        assert_close(
            normal_ln_tail(&lim, &trunc, &lspec, NormalKind::ExactVar),
            want,
            1e-12,
        );
    }

    #[derive(Debug)]
    struct LatticeProbe;

    impl StatModel for LatticeProbe {
        fn psi(&self, _h: Hypothesis, t: f64) -> f64 {
            (0.5 * (t.exp() + (-t).exp())).ln()
        }
        fn psi_prime(&self, _h: Hypothesis, t: f64) -> f64 {
            t.tanh()
        }
        fn psi_second(&self, _h: Hypothesis, t: f64) -> f64 {
            1.0 / t.cosh().powi(2)
        }
        fn cumulant(&self, _h: Hypothesis, r: u32) -> f64 {
            match r {
                1 | 3 => 0.0,
                2 => 1.0,
                _ => unreachable!(),
            }
        }
        fn sample(&self, _h: Hypothesis, rng: &mut dyn RngCore) -> f64 {
            if rng.next_u32() & 1 == 0 {
                1.0
            } else {
                -1.0
            }
        }
        fn prepare_twist(&self, _h: Hypothesis, _eta: f64) -> PreparedTwist {
            unimplemented!("probe model never samples twisted")
        }
        fn is_lattice(&self) -> bool {
            true
        }
    }

    #[test]
    fn lattice_model_rejected_by_tail_estimate() {
        let m = LatticeProbe;
        let top = Topology::full(2).unwrap();
        let a = build_metropolis(&top).unwrap();
        let kernel = build_weight_kernel(&a, 0.1, 1e-12).unwrap();
        let lim = LimitingLmgf::new(&m, Hypothesis::H0, a.perron()).unwrap();
        let trunc = TruncatedLmgf::new(&m, Hypothesis::H0, &kernel, 0).unwrap();
        assert!(matches!(
            tail_asymptotic(&lim, &trunc, &upper(0.3)),
            Err(Error::LatticeModel)
        ));
    }

    #[test]
    fn sweep_shares_rate_point_bitwise() {
        let (g, a) = gaussian_path();
        let req = SweepRequest {
            model: &g,
            matrix: &a,
            tail: upper(0.5),
            mu_grid: &[0.1, 0.05, 0.02],
            agents: &[0, 1, 2],
            trunc_tol: 1e-12,
            variant: CorrectionVariant::Refined,
        };
        let report = sweep(&req).unwrap();
        assert_eq!(report.cells.len(), 9);
        let rp = report.rate_point.unwrap();
        for cell in &report.cells {
            let v = cell.values.as_ref().expect("cell failed");
            assert!(cell.error.is_none());
            assert_eq!(v.theta.to_bits(), rp.theta.to_bits());
            assert_eq!(v.rate.to_bits(), rp.rate.to_bits());
        }
        // estimates sharpen as mu shrinks: |mu ln p + rate| decreases
        let dev = |mu: f64| {
            report
                .cells
                .iter()
                .find(|c| c.mu == mu && c.agent == 0)
                .map(|c| (mu * c.values.as_ref().unwrap().ln_p_asym + rp.rate).abs())
                .unwrap()
        };
        assert!(dev(0.05) < dev(0.1));
        assert!(dev(0.02) < dev(0.05));
    }

    #[test]
    fn sweep_numeric_failure_fills_cells() {
        let m = LaplaceShiftModel::new(0.6).unwrap();
        let top = Topology::full(3).unwrap();
        let a = build_metropolis(&top).unwrap();
        let req = SweepRequest {
            model: &m,
            matrix: &a,
            tail: upper(0.65), // beyond phi' saturation but on the correct side
            mu_grid: &[0.1, 0.05],
            agents: &[0],
            trunc_tol: 1e-12,
            variant: CorrectionVariant::Refined,
        };
        let report = sweep(&req).unwrap();
        assert!(report.rate_point.is_none());
        assert_eq!(report.cells.len(), 2);
        for cell in &report.cells {
            assert!(cell.values.is_none());
            assert!(cell.error.as_deref().unwrap().contains("bracket"));
        }
    }

    #[test]
    fn sweep_structural_errors() {
        let (g, a) = gaussian_path();
        let mk = |agents: &'static [usize], grid: &'static [f64]| SweepRequest {
            model: &g,
            matrix: &a,
            tail: upper(0.5),
            mu_grid: grid,
            agents,
            trunc_tol: 1e-12,
            variant: CorrectionVariant::Refined,
        };
        assert!(sweep(&mk(&[0], &[])).is_err());
        assert!(sweep(&mk(&[], &[0.1])).is_err());
        assert!(sweep(&mk(&[7], &[0.1])).is_err());
    }

}
