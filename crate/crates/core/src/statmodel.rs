//! Local-statistic models: the LMGF contract plus the two shipped
//! implementations (Laplace shift-in-mean log-likelihood ratio, Gaussian).
//!
//! All downstream math consumes only psi and its derivatives, the origin
//! cumulants, and draws (plain or exponentially twisted); distributions with
//! atoms are therefore represented by samplers and closed-form LMGFs, never
//! by density objects.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

/// Distribution contract for the per-agent statistic x under each hypothesis.
///
/// psi(t) = ln E[e^{t x}] must be finite for all real t (everywhere-finite
/// LMGF); psi(0) = 0 and psi is strictly convex for non-degenerate x.
pub trait StatModel: Send + Sync + std::fmt::Debug {
    fn psi(&self, h: Hypothesis, t: f64) -> f64;
    fn psi_prime(&self, h: Hypothesis, t: f64) -> f64;
    fn psi_second(&self, h: Hypothesis, t: f64) -> f64;

    /// r-th cumulant at the origin, r in 1..=3: psi^{(r)}(0).
    /// r=1 is E[x], r=2 is VAR[x].
    fn cumulant(&self, h: Hypothesis, r: u32) -> f64;

    fn mean(&self, h: Hypothesis) -> f64 {
        self.cumulant(h, 1)
    }

    fn variance(&self, h: Hypothesis) -> f64 {
        self.cumulant(h, 2)
    }

    /// One draw of x under h.
    fn sample(&self, h: Hypothesis, rng: &mut dyn RngCore) -> f64;

    /// One draw from the twisted law m~(dx) = e^{eta x - psi(eta)} m(dx).
    fn sample_twisted(&self, h: Hypothesis, eta: f64, rng: &mut dyn RngCore) -> f64 {
        self.prepare_twist(h, eta).draw(rng)
    }

    /// Precomputed twisted sampler for hot loops that draw many variates at
    /// the same eta (importance sampling builds one per (i,l) grid entry).
    fn prepare_twist(&self, h: Hypothesis, eta: f64) -> PreparedTwist;

    /// Lattice statistics are rejected by the asymptotics module.
    fn is_lattice(&self) -> bool {
        false
    }
}

/// Twisted sampler with all mixture quantities resolved up front.
#[derive(Debug, Clone)]
pub enum PreparedTwist {
    /// Three-component Laplace LLR mixture: atom at -rho, atom at +rho,
    /// truncated-exponential bulk on (-rho, rho) with rate `a`.
    /// `negate` mirrors the draw (serves the H1 law, which is the H0 law of -x).
    LaplaceMixture {
        p_minus: f64,
        p_atoms: f64, // p_minus + p_plus
        a: f64,
        rho: f64,
        negate: bool,
    },
    Gaussian { mean: f64, sd: f64 },
}

impl PreparedTwist {
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PreparedTwist::LaplaceMixture {
                p_minus,
                p_atoms,
                a,
                rho,
                negate,
            } => {
                let u: f64 = rng.random();
                let x = if u < p_minus {
                    -rho
                } else if u < p_atoms {
                    rho
                } else {
                    // Conditioned on the bulk, (u - p_atoms)/(1 - p_atoms) is
                    // again uniform; reuse it for the inverse CDF.
                    let v = ((u - p_atoms) / (1.0 - p_atoms)).min(1.0);
                    truncated_exp_inv_cdf(a, rho, v)
                };
                if negate {
                    -x
                } else {
                    x
                }
            }
            PreparedTwist::Gaussian { mean, sd } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                mean + sd * z
            }
        }
    }
}

/// Inverse CDF of the density proportional to e^{a x} on (-rho, rho).
/// Factored so the log argument stays in (0, 1]: no overflow for any a.
#[inline]
fn truncated_exp_inv_cdf(a: f64, rho: f64, v: f64) -> f64 {
    let ar = a * rho;
    if ar.abs() < 1e-9 {
        return -rho + 2.0 * rho * v;
    }
    // Clamp guards v = 0 when e^{-2|a|rho} underflows; the clamped point is
    // deeper in the tail than any representable v can reach.
    if a > 0.0 {
        let arg = (v + (1.0 - v) * (-2.0 * ar).exp()).max(f64::MIN_POSITIVE);
        (rho + arg.ln() / a).max(-rho)
    } else {
        let arg = (v + (1.0 - v) * (2.0 * ar).exp()).max(f64::MIN_POSITIVE);
        (-(rho + arg.ln() / -a)).min(rho)
    }
}

/// Log-likelihood ratio of a unit-scale Laplace observation with a mean shift
/// rho between hypotheses: x = |d| - |d - rho|. The law mixes two atoms
/// (x = -rho for d < 0, x = +rho for d > rho) with a linear bulk, and its
/// LMGF has the closed form
///   psi0(t) = ln( e^{-t rho}/2 + e^{(t-1) rho}/2 + (rho e^{-rho/2}/2) sinch[rho(t - 1/2)] ).
/// Under H1 the LLR satisfies psi1(t) = psi0(-t), i.e. x under H1 is -x under H0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaplaceShiftModel {
    rho: f64,
}

impl LaplaceShiftModel {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidParam {
                name: "rho",
                reason: format!("shift {rho} must be a positive real"),
            });
        }
        Ok(LaplaceShiftModel { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// psi0 and its first three derivatives in one pass.
    ///
    /// The three terms of e^{psi0} are kept as log-weights and rescaled by
    /// their maximum, so nothing overflows even at |t| ~ 1e6 (the theta
    /// bracket search probes that far). Derivatives of the sinch term reduce
    /// to bounded ratio functions sinch^{(r)}/sinch.
    fn psi0_all(&self, t: f64) -> (f64, f64, f64, f64) {
        let rho = self.rho;
        let x = rho * (t - 0.5);
        let ln2 = std::f64::consts::LN_2;
        let a1 = -t * rho - ln2;
        let a2 = (t - 1.0) * rho - ln2;
        let a3 = (rho / 2.0).ln() - rho / 2.0 + ln_sinch(x);
        let m = a1.max(a2).max(a3);
        let w1 = (a1 - m).exp();
        let w2 = (a2 - m).exp();
        let w3 = (a3 - m).exp();
        let (g1, g2, g3) = sinch_ratios(x);
        let g = w1 + w2 + w3;
        let r1 = rho * (-w1 + w2 + g1 * w3) / g;
        let r2 = rho * rho * (w1 + w2 + g2 * w3) / g;
        let r3 = rho * rho * rho * (-w1 + w2 + g3 * w3) / g;
        let psi = m + g.ln();
        let d1 = r1;
        let d2 = r2 - r1 * r1;
        let d3 = r3 - 3.0 * r2 * r1 + 2.0 * r1 * r1 * r1;
        (psi, d1, d2, d3)
    }

    fn derivs(&self, h: Hypothesis, t: f64) -> (f64, f64, f64, f64) {
        match h {
            Hypothesis::H0 => self.psi0_all(t),
            // psi1(t) = psi0(-t): odd derivatives flip sign.
            Hypothesis::H1 => {
                let (p, d1, d2, d3) = self.psi0_all(-t);
                (p, -d1, d2, -d3)
            }
        }
    }
}

/// ln sinch(x) = ln(sinh x / x), even in x, sinch(0) = 1.
fn ln_sinch(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 1e-4 {
        let y = ax * ax;
        return (y / 6.0) * (1.0 - y / 20.0);
    }
    if ax < 30.0 {
        (ax.sinh() / ax).ln()
    } else {
        // sinh x = e^x (1 - e^{-2x})/2
        ax - (2.0 * ax).ln() + (-2.0 * ax).exp().ln_1p()
    }
}

/// Ratios sinch^{(r)}(x)/sinch(x) for r = 1..3. Closed coth forms away from
/// the origin; power series below |x| = 0.5 where the closed forms cancel.
fn sinch_ratios(x: f64) -> (f64, f64, f64) {
    let ax = x.abs();
    if ax >= 0.5 {
        let c = 1.0 / x.tanh();
        let ix = 1.0 / x;
        let g1 = c - ix;
        let g2 = 1.0 - 2.0 * c * ix + 2.0 * ix * ix;
        let g3 = c - 3.0 * ix + 6.0 * c * ix * ix - 6.0 * ix * ix * ix;
        (g1, g2, g3)
    } else {
        let y = x * x;
        let s = 1.0 + y / 6.0 + y * y / 120.0 + y * y * y / 5040.0 + y * y * y * y / 362880.0;
        let s1 = x * (1.0 / 3.0 + y / 30.0 + y * y / 840.0 + y * y * y / 45360.0);
        let s2 = 1.0 / 3.0 + y / 10.0 + y * y / 168.0 + y * y * y / 6480.0;
        let s3 = x * (0.2 + y / 42.0 + y * y / 1080.0 + y * y * y / 55440.0);
        (s1 / s, s2 / s, s3 / s)
    }
}

impl StatModel for LaplaceShiftModel {
    fn psi(&self, h: Hypothesis, t: f64) -> f64 {
        self.derivs(h, t).0
    }

    fn psi_prime(&self, h: Hypothesis, t: f64) -> f64 {
        self.derivs(h, t).1
    }

    fn psi_second(&self, h: Hypothesis, t: f64) -> f64 {
        self.derivs(h, t).2
    }

    fn cumulant(&self, h: Hypothesis, r: u32) -> f64 {
        let (_, d1, d2, d3) = self.derivs(h, 0.0);
        match r {
            1 => d1,
            2 => d2,
            3 => d3,
            _ => panic!("cumulant order {r} not supported (1..=3)"),
        }
    }

    fn sample(&self, h: Hypothesis, rng: &mut dyn RngCore) -> f64 {
        // Draw the underlying observation d (unit Laplace, mean 0 under H0,
        // mean rho under H1) and apply the piecewise LLR map.
        let loc = match h {
            Hypothesis::H0 => 0.0,
            Hypothesis::H1 => self.rho,
        };
        let u: f64 = rng.random();
        let d = if u < 0.5 {
            loc + (2.0 * u).ln()
        } else {
            loc - (2.0 * (1.0 - u)).ln()
        };
        if d < 0.0 {
            -self.rho
        } else if d > self.rho {
            self.rho
        } else {
            2.0 * d - self.rho
        }
    }

    fn prepare_twist(&self, h: Hypothesis, eta: f64) -> PreparedTwist {
        // H1 is the mirrored law, so twist the H0 law at -eta and negate.
        let (e, negate) = match h {
            Hypothesis::H0 => (eta, false),
            Hypothesis::H1 => (-eta, true),
        };
        let rho = self.rho;
        let ln_z = self.psi0_all(e).0;
        let ln2 = std::f64::consts::LN_2;
        let p_minus = (-e * rho - ln2 - ln_z).exp();
        let p_plus = ((e - 1.0) * rho - ln2 - ln_z).exp();
        PreparedTwist::LaplaceMixture {
            p_minus,
            p_atoms: (p_minus + p_plus).min(1.0),
            a: e - 0.5,
            rho,
            negate,
        }
    }
}

/// Gaussian statistic with hypothesis-dependent mean and shared variance:
/// psi_h(t) = mean_h t + var t^2 / 2. Serves as the exact analytic oracle --
/// every steady-state functional of it is again Gaussian in closed form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianShiftModel {
    mean0: f64,
    mean1: f64,
    var: f64,
}

impl GaussianShiftModel {
    pub fn new(mean0: f64, mean1: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::InvalidParam {
                name: "var",
                reason: format!("variance {var} must be a positive real"),
            });
        }
        if !(mean0 < mean1) {
            return Err(Error::InvalidParam {
                name: "mean0/mean1",
                reason: format!("need mean0 < mean1 for identifiability, got {mean0} vs {mean1}"),
            });
        }
        Ok(GaussianShiftModel { mean0, mean1, var })
    }

    fn m(&self, h: Hypothesis) -> f64 {
        match h {
            Hypothesis::H0 => self.mean0,
            Hypothesis::H1 => self.mean1,
        }
    }

    pub fn var(&self) -> f64 {
        self.var
    }
}

impl StatModel for GaussianShiftModel {
    fn psi(&self, h: Hypothesis, t: f64) -> f64 {
        self.m(h) * t + self.var * t * t / 2.0
    }

    fn psi_prime(&self, h: Hypothesis, t: f64) -> f64 {
        self.m(h) + self.var * t
    }

    fn psi_second(&self, _h: Hypothesis, _t: f64) -> f64 {
        self.var
    }

    fn cumulant(&self, h: Hypothesis, r: u32) -> f64 {
        match r {
            1 => self.m(h),
            2 => self.var,
            3 => 0.0,
            _ => panic!("cumulant order {r} not supported (1..=3)"),
        }
    }

    fn sample(&self, h: Hypothesis, rng: &mut dyn RngCore) -> f64 {
        Normal::new(self.m(h), self.var.sqrt()).unwrap().sample(rng)
    }

    fn prepare_twist(&self, h: Hypothesis, eta: f64) -> PreparedTwist {
        // Quadratic LMGF: the twist shifts the mean by var * eta, variance unchanged.
        PreparedTwist::Gaussian {
            mean: self.m(h) + self.var * eta,
            sd: self.var.sqrt(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    const RHO: f64 = 0.6;

    fn laplace() -> LaplaceShiftModel {
        LaplaceShiftModel::new(RHO).unwrap()
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn psi_zero_is_zero_and_at_probe_points() {
        let m = laplace();
        assert_eq!(m.psi(Hypothesis::H0, 0.0), 0.0);
        // Frozen against an independent quadrature-plus-atoms oracle.
        assert_close(m.psi(Hypothesis::H0, 0.5), -0.037635735532509, 1e-12);
        assert_close(m.psi(Hypothesis::H0, 1.0), 0.0, 1e-13);
        assert_close(m.psi(Hypothesis::H0, 3.0), 0.721826814373617, 1e-12);
        assert_close(m.psi(Hypothesis::H0, -2.0), 0.721826814373617, 1e-12);
    }

    #[test]
    fn psi_finite_and_linear_growth_at_extreme_t() {
        let m = laplace();
        for &t in &[-1e6, -1e3, 1e3, 1e6] {
            let v = m.psi(Hypothesis::H0, t);
            assert!(v.is_finite(), "psi({t}) = {v}");
            // slope saturates at rho
            assert!(v <= RHO * t.abs() + 1.0);
        }
        assert_close(m.psi_prime(Hypothesis::H0, 1e6), RHO, 1e-9);
        assert_close(m.psi_prime(Hypothesis::H0, -1e6), -RHO, 1e-9);
    }

    #[test]
    fn laplace_h1_is_mirrored_h0() {
        let m = laplace();
        let mut t = -5.0;
        while t <= 5.0 {
            assert_close(m.psi(Hypothesis::H1, t), m.psi(Hypothesis::H0, -t), 1e-12);
            t += 0.1;
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        // Step sizes balance truncation against roundoff: second and third
        // differences at h = 1e-6 would sit on the roundoff floor.
        let m = laplace();
        for &t in &[-3.0, -1.2, -0.5, -0.01, 0.0, 0.23, 0.5, 0.77, 1.0, 2.5, 7.0] {
            let f = |t| m.psi(Hypothesis::H0, t);
            let h = 1e-6;
            let d1 = (f(t + h) - f(t - h)) / (2.0 * h);
            assert_close(m.psi_prime(Hypothesis::H0, t), d1, 1e-7);
            let h = 1e-4;
            let d2 = (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h);
            assert_close(m.psi_second(Hypothesis::H0, t), d2, 1e-6);
            let h = 1e-3;
            let d3 = (f(t + 2.0 * h) - 2.0 * f(t + h) + 2.0 * f(t - h) - f(t - 2.0 * h))
                / (2.0 * h * h * h);
            let (_, _, _, a3) = m.derivs(Hypothesis::H0, t);
            assert_close(a3, d3, 1e-5);
        }
    }

    #[test]
    fn frozen_derivative_values() {
        let m = laplace();
        assert_close(m.cumulant(Hypothesis::H0, 1), -0.14881163609402643, 1e-10);
        assert_close(m.cumulant(Hypothesis::H0, 2), 0.2840345892740816, 1e-10);
        assert_close(m.cumulant(Hypothesis::H0, 3), 0.07845876194841615, 1e-9);
        assert_close(m.psi_prime(Hypothesis::H0, 0.2), -0.09061554098920851, 1e-10);
        assert_close(m.psi_prime(Hypothesis::H0, 0.4), -0.03043278900842396, 1e-10);
        // psi0 is symmetric about t = 1/2, so the derivative vanishes there.
        assert_close(m.psi_prime(Hypothesis::H0, 0.5), 0.0, 1e-14);
        assert_close(m.psi_second(Hypothesis::H0, 0.2), 0.2969778433846388, 1e-9);
        assert_close(m.psi_second(Hypothesis::H0, 0.5), 0.3046153846153846, 1e-9);
    }

    #[test]
    fn convexity_and_identifiability() {
        let m = laplace();
        for h in [Hypothesis::H0, Hypothesis::H1] {
            for i in 0..=100 {
                let t = -5.0 + 0.1 * i as f64;
                assert!(m.psi_second(h, t) > 0.0, "psi''({t}) not positive");
            }
        }
        assert!(m.mean(Hypothesis::H0) < m.mean(Hypothesis::H1));
        assert!(!m.is_lattice());
    }

    #[test]
    fn gaussian_closed_forms() {
        let g = GaussianShiftModel::new(1.0, 2.0, 4.0).unwrap();
        assert_eq!(g.psi(Hypothesis::H0, 0.0), 0.0);
        assert_eq!(g.psi(Hypothesis::H0, 2.0), 2.0 + 8.0);
        assert_eq!(g.psi_prime(Hypothesis::H1, 0.5), 2.0 + 2.0);
        assert_eq!(g.cumulant(Hypothesis::H0, 3), 0.0);
        assert!(GaussianShiftModel::new(0.0, 1.0, 0.0).is_err());
        assert!(GaussianShiftModel::new(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn laplace_sample_map_hits_atoms() {
        // The map sends d < 0 to -rho and d > rho to +rho; over many draws the
        // atom frequencies must match P[x=-rho] = 1/2, P[x=+rho] = e^-rho / 2.
        let m = laplace();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 200_000;
        let mut minus = 0usize;
        let mut plus = 0usize;
        let mut inside = 0usize;
        for _ in 0..n {
            let x = m.sample(Hypothesis::H0, &mut rng);
            if x == -RHO {
                minus += 1;
            } else if x == RHO {
                plus += 1;
            } else {
                assert!(x > -RHO && x < RHO);
                inside += 1;
            }
        }
        let se = |p: f64| 4.0 * (p * (1.0 - p) / n as f64).sqrt();
        let pm = minus as f64 / n as f64;
        let pp = plus as f64 / n as f64;
        assert_close(pm, 0.5, se(0.5));
        assert_close(pp, (-RHO).exp() / 2.0, se(0.3));
        assert!(inside > 0);
    }

    #[test]
    fn sample_mean_matches_first_cumulant() {
        let m = laplace();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x = m.sample(Hypothesis::H0, &mut rng);
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert_close(mean, m.mean(Hypothesis::H0), 4.0 * se);
    }

    #[test]
    fn twisted_sampler_cumulants_both_models() {
        // Twisted law has mean psi'(eta) and variance psi''(eta).
        let lap = laplace();
        let gau = GaussianShiftModel::new(0.0, 1.0, 1.0).unwrap();
        let models: [&dyn StatModel; 2] = [&lap, &gau];
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for model in models {
            for &eta in &[0.2, 0.5] {
                let tw = model.prepare_twist(Hypothesis::H0, eta);
                let n = 1_000_000;
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                for _ in 0..n {
                    let x = tw.draw(&mut rng);
                    sum += x;
                    sumsq += x * x;
                }
                let mean = sum / n as f64;
                let var = sumsq / n as f64 - mean * mean;
                let want_mean = model.psi_prime(Hypothesis::H0, eta);
                let want_var = model.psi_second(Hypothesis::H0, eta);
                let se_mean = (var / n as f64).sqrt();
                // SE of the sample variance via the fourth moment would need
                // kurtosis; 4 * var * sqrt(2/n) covers both models here.
                let se_var = 4.0 * var * (2.0 / n as f64).sqrt();
                assert_close(mean, want_mean, 4.0 * se_mean);
                assert_close(var, want_var, se_var);
            }
        }
    }

    #[test]
    fn twist_at_zero_matches_untwisted_atoms() {
        let m = laplace();
        match m.prepare_twist(Hypothesis::H0, 0.0) {
            PreparedTwist::LaplaceMixture {
                p_minus, p_atoms, a, ..
            } => {
                assert_close(p_minus, 0.5, 1e-15);
                assert_close(p_atoms - p_minus, (-RHO).exp() / 2.0, 1e-15);
                assert_close(a, -0.5, 1e-15);
            }
            _ => panic!("wrong twist kind"),
        }
    }

    #[test]
    fn twisted_mean_far_eta_and_h1_mirror() {
        let m = laplace();
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let n = 400_000;
        for &eta in &[3.34, -2.0] {
            for h in [Hypothesis::H0, Hypothesis::H1] {
                let tw = m.prepare_twist(h, eta);
                let mut sum = 0.0;
                for _ in 0..n {
                    sum += tw.draw(&mut rng);
                }
                let mean = sum / n as f64;
                let want = m.psi_prime(h, eta);
                let sd = m.psi_second(h, eta).sqrt();
                assert_close(mean, want, 4.0 * sd / (n as f64).sqrt());
            }
        }
    }

    #[test]
    fn gaussian_twist_shifts_mean() {
        let g = GaussianShiftModel::new(0.0, 1.0, 1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let tw = g.prepare_twist(Hypothesis::H0, 1.0);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += tw.draw(&mut rng);
        }
        assert_close(sum / n as f64, 1.0, 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn inverse_cdf_stays_in_support_for_extreme_rates() {
        for &a in &[-4000.0, -3.0, -1e-12, 0.0, 1e-12, 2.0, 4000.0] {
            for &v in &[0.0, 1e-9, 0.5, 1.0 - 1e-9, 1.0] {
                let x = truncated_exp_inv_cdf(a, 0.6, v);
                assert!((-0.6 - 1e-12..=0.6 + 1e-12).contains(&x), "a={a} v={v} x={x}");
            }
        }
    }
}
