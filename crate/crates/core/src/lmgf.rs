//! Log moment generating functions of the steady-state combined statistic:
//! the small-step limit (integral form, adaptive quadrature) and the exact
//! finite-step truncated sum over the weight kernel.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::network::WeightKernel;
use crate::statmodel::{Hypothesis, StatModel};

/// 15-point Kronrod abscissae on [-1,1] (nonnegative half; symmetric).
/// Odd indices are the embedded 7-point Gauss nodes.
const XGK: [f64; 8] = [
    0.9914553711208126,
    0.9491079123427585,
    0.8648644233597691,
    0.7415311855993944,
    0.5860872354676911,
    0.4058451513773972,
    0.20778495500789847,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529225,
    0.06309209262997855,
    0.10479001032225018,
    0.14065325971552592,
    0.1690047266392679,
    0.19035057806478541,
    0.20443294007529889,
    0.20948214108472783,
];
const WG: [f64; 4] = [
    0.1294849661688697,
    0.27970539148927664,
    0.3818300505051189,
    0.41795918367346937,
];

/// One Gauss-Kronrod 7/15 panel: returns (kronrod value, |kronrod - gauss|).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = WGK[7] * fc;
    let mut resg = WG[3] * fc;
    for j in 0..7 {
        let x = hw * XGK[j];
        let fsum = f(c - x) + f(c + x);
        resk += WGK[j] * fsum;
        if j % 2 == 1 {
            resg += WG[j / 2] * fsum;
        }
    }
    (resk * hw, (resk - resg).abs() * hw)
}

const QUAD_TOL: f64 = 1e-10;
const QUAD_MAX_DEPTH: u32 = 60;

/// Adaptive bisection quadrature of f over [a, b] to absolute tolerance.
/// The integrands here are analytic, so the embedded-rule error estimate is
/// conservative for the Kronrod value it accepts.
pub fn adaptive_quad<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
        let (val, err) = gk15(f, a, b);
        if err <= tol || !val.is_finite() {
            if !val.is_finite() || !err.is_finite() {
                return Err(Error::Quadrature { a, b, err });
            }
            return Ok(val);
        }
        if depth == 0 {
            return Err(Error::Quadrature { a, b, err });
        }
        let m = 0.5 * (a + b);
        Ok(recurse(f, a, m, 0.5 * tol, depth - 1)? + recurse(f, m, b, 0.5 * tol, depth - 1)?)
    }
    if a == b {
        return Ok(0.0);
    }
    recurse(f, a, b, tol, QUAD_MAX_DEPTH)
}

/// Small-step-limit LMGF of the combined statistic for one hypothesis:
///   omega(t) = int_0^t psi(tau)/tau dtau   (integrand continued by psi'(0) at 0),
///   phi(t) = sum_l omega(p_l t)
/// with p the Perron weights of the combination matrix. phi' and phi'' come
/// from closed recipes in psi, not from differentiating the quadrature.
pub struct LimitingLmgf<'a> {
    model: &'a dyn StatModel,
    h: Hypothesis,
    p: Vec<f64>,
    omega_memo: Mutex<HashMap<u64, f64>>,
}

impl<'a> LimitingLmgf<'a> {
    pub fn new(model: &'a dyn StatModel, h: Hypothesis, weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParam {
                name: "weights",
                reason: "empty Perron weight vector".into(),
            });
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w > 0.0) || w > 1.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam {
                name: "weights",
                reason: format!("Perron weights must lie in (0,1] and sum to 1, got sum {sum}"),
            });
        }
        Ok(LimitingLmgf {
            model,
            h,
            p: weights.to_vec(),
            omega_memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.p
    }

    pub fn hypothesis(&self) -> Hypothesis {
        self.h
    }

    pub fn model(&self) -> &dyn StatModel {
        self.model
    }

    pub fn omega(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(0.0);
        }
        let key = t.to_bits();
        if let Some(&v) = self.omega_memo.lock().unwrap().get(&key) {
            return Ok(v);
        }
        let c1 = self.model.psi_prime(self.h, 0.0);
        let f = |tau: f64| {
            if tau == 0.0 {
                c1
            } else {
                self.model.psi(self.h, tau) / tau
            }
        };
        let v = adaptive_quad(&f, 0.0, t, QUAD_TOL)?;
        self.omega_memo.lock().unwrap().insert(key, v);
        Ok(v)
    }

    pub fn phi(&self, t: f64) -> Result<f64> {
        let mut acc = 0.0;
        let mut comp = 0.0;
        for &p in &self.p {
            kahan_add(&mut acc, &mut comp, self.omega(p * t)?);
        }
        Ok(acc)
    }

    /// phi'(t) = (1/t) sum_l psi(p_l t); at t = 0 this is psi'(0).
    pub fn phi_prime(&self, t: f64) -> f64 {
        if t == 0.0 {
            return self.model.psi_prime(self.h, 0.0);
        }
        let mut acc = 0.0;
        let mut comp = 0.0;
        for &p in &self.p {
            kahan_add(&mut acc, &mut comp, self.model.psi(self.h, p * t));
        }
        acc / t
    }

    /// phi''(t) = (1/t^2) sum_l [p_l t psi'(p_l t) - psi(p_l t)].
    /// Near t = 0 the bracket cancels to O(t^2); switch to the series
    /// psi''(0) sum p^2 / 2 + t psi'''(0) sum p^3 / 3.
    pub fn phi_second(&self, t: f64) -> f64 {
        if t.abs() < 1e-4 {
            let c2 = self.model.psi_second(self.h, 0.0);
            let c3 = self.model.cumulant(self.h, 3);
            let (mut s2, mut s3) = (0.0, 0.0);
            for &p in &self.p {
                s2 += p * p;
                s3 += p * p * p;
            }
            return c2 * s2 / 2.0 + t * c3 * s3 / 3.0;
        }
        let mut acc = 0.0;
        let mut comp = 0.0;
        for &p in &self.p {
            let x = p * t;
            kahan_add(
                &mut acc,
                &mut comp,
                x * self.model.psi_prime(self.h, x) - self.model.psi(self.h, x),
            );
        }
        acc / (t * t)
    }

    pub fn weight_power_sum(&self, r: u32) -> f64 {
        self.p.iter().map(|&p| p.powi(r as i32)).sum()
    }
}

#[inline]
fn kahan_add(acc: &mut f64, comp: &mut f64, x: f64) {
    let y = x - *comp;
    let t = *acc + y;
    *comp = (t - *acc) - y;
    *acc = t;
}

/// Exact finite-step LMGF of one agent's truncated steady-state sum:
///   phi_{k,mu}(t) = sum_{i=1..N} sum_l psi(xi_{i,l} t),
///   xi_{i,l} = mu (1-mu)^{i-1} b_{k,l}(i)
/// with N the kernel horizon and b the cached combination-matrix powers.
pub struct TruncatedLmgf<'a> {
    model: &'a dyn StatModel,
    h: Hypothesis,
    kernel: &'a WeightKernel,
    agent: usize,
}

impl<'a> TruncatedLmgf<'a> {
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
        Ok(TruncatedLmgf {
            model,
            h,
            kernel,
            agent,
        })
    }

    /// Fold f(xi, u) over the weight grid, where u = (1-mu)^{i-1} b_{k,l}(i) t
    /// is the per-term LMGF argument built without the mu/mu roundtrip that
    /// evaluating at t/mu would introduce.
    fn fold<F: Fn(f64, f64) -> f64>(&self, t_over_mu_times_mu: f64, f: F) -> f64 {
        let mu = self.kernel.mu();
        let q = 1.0 - mu;
        let mut w = 1.0; // (1-mu)^{i-1}
        let mut acc = 0.0;
        let mut comp = 0.0;
        for i in 1..=self.kernel.horizon() {
            let row = self.kernel.row(self.agent, i);
            for &b in row {
                let u = w * b * t_over_mu_times_mu;
                kahan_add(&mut acc, &mut comp, f(mu * w * b, u));
            }
            w *= q;
        }
        acc
    }

    /// phi_{k,mu}(t): per-term argument xi t.
    pub fn phi(&self, t: f64) -> f64 {
        let mu = self.kernel.mu();
        self.fold(mu * t, |_, u| self.model.psi(self.h, u))
    }

    /// phi'_{k,mu}(t) = sum xi psi'(xi t).
    pub fn phi_prime(&self, t: f64) -> f64 {
        let mu = self.kernel.mu();
        self.fold(mu * t, |xi, u| xi * self.model.psi_prime(self.h, u))
    }

    /// sum xi^r; r-th cumulant of the truncated sum is psi^{(r)}(0) times this.
    pub fn xi_power_sum(&self, r: u32) -> f64 {
        self.fold(1.0, |xi, _| xi.powi(r as i32))
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn kernel(&self) -> &WeightKernel {
        self.kernel
    }

    /// mu phi_{k,mu}(theta/mu) with arguments (1-mu)^{i-1} b theta formed directly.
    pub fn scaled_phi(&self, theta: f64) -> f64 {
        self.kernel.mu() * self.fold(theta, |_, u| self.model.psi(self.h, u))
    }

    /// phi'_{k,mu}(theta/mu) with the same direct argument construction.
    pub fn scaled_phi_prime(&self, theta: f64) -> f64 {
        self.fold(theta, |xi, u| xi * self.model.psi_prime(self.h, u))
    }
}

/// Finite-step correction terms at the tilt point:
///   first  = phi(theta) - mu phi_{k,mu}(theta/mu)
///   second = phi'(theta) - phi'_{k,mu}(theta/mu)
/// Both vanish as mu -> 0; the refined tail estimate consumes them.
pub fn step_corrections(
    limit: &LimitingLmgf,
    trunc: &TruncatedLmgf,
    theta: f64,
) -> Result<(f64, f64)> {
    let c1 = limit.phi(theta)? - trunc.scaled_phi(theta);
    let c2 = limit.phi_prime(theta) - trunc.scaled_phi_prime(theta);
    Ok((c1, c2))
}
