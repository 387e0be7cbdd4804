//! Deterministic limit quantities and the rescaled fluctuation processes.
//!
//! All time integrals share the kernel `h(s, t) = lambda(s) Fbar(t - s)`.
//! The survival function has a kink at one time unit, so every quadrature
//! registers `t - 1` (and its analogues) as a panel boundary.
//!
//! Double integrals against `s1 ∧ s2` are reduced to one dimension with
//! `s1 ∧ s2 = ∫₀^∞ 1{r < s1} 1{r < s2} dr`, which gives
//! `∫∫ h(s1,s) h(s2,t) (s1 ∧ s2) = ∫₀^{s∧t} H_s(r) H_t(r) dr` with
//! `H_t(r) = ∫_r^t h(u, t) du`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arrivals::RateFunction;
use crate::env::{green_kubo_sigma_sq, psi_bar, MarkovEnvironment};
use crate::error::{Error, Result};
use crate::quad::{integrate, Tolerance};
use crate::service::ServiceLaw;

pub const SINGLE_TOL: Tolerance = Tolerance::relative(1e-9);
pub const DOUBLE_TOL: Tolerance = Tolerance::relative(1e-8);
// inner integrals of nested quadratures run tighter than the outer target
const INNER_TOL: Tolerance = Tolerance::relative(1e-11);
const OUTER_TOL: Tolerance = Tolerance::relative(1e-10);

pub const PHI_MIN_POINTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitOracle {
    pub law: ServiceLaw,
    pub lambda: RateFunction,
    pub psi_bar: f64,
    pub sigma_psi_sq: f64,
    /// Multiply the annealed supercritical variance by `sigma_psi^2`.
    pub include_sigma_psi: bool,
}

/// `Xi(t1, t2)` and the limiting means of the three regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionOracle {
    pub xi: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl LimitOracle {
    pub fn new(law: ServiceLaw, lambda: RateFunction, psi_bar: f64, sigma_psi_sq: f64) -> Result<Self> {
        lambda.validate()?;
        if !(psi_bar > 0.0) {
            return Err(Error::OutOfRange { what: "psi_bar", value: psi_bar, range: "(0, inf)".into() });
        }
        if !(sigma_psi_sq >= 0.0) {
            return Err(Error::OutOfRange { what: "sigma_psi_sq", value: sigma_psi_sq, range: "[0, inf)".into() });
        }
        Ok(LimitOracle { law, lambda, psi_bar, sigma_psi_sq, include_sigma_psi: true })
    }

    pub fn from_environment(law: ServiceLaw, lambda: RateFunction, env: &MarkovEnvironment) -> Result<Self> {
        Self::new(law, lambda, psi_bar(env)?, green_kubo_sigma_sq(env)?)
    }

    pub fn with_sigma_psi(mut self, include: bool) -> Self {
        self.include_sigma_psi = include;
        self
    }

    /// `h(s, t) = lambda(s) Fbar(t - s)`.
    pub fn h(&self, s: f64, t: f64) -> f64 {
        self.lambda.value(s) * self.law.survival(t - s)
    }

    /// `∂h/∂s (s, t) = lambda'(s) Fbar(t - s) + lambda(s) density(t - s)`.
    pub fn dh_ds(&self, s: f64, t: f64) -> f64 {
        self.lambda.derivative(s) * self.law.survival(t - s) + self.lambda.value(s) * self.law.density(t - s)
    }

    /// `∫_{from}^{to} h(s, t) ds`.
    fn kernel_integral(&self, from: f64, to: f64, t: f64, tol: Tolerance) -> Result<f64> {
        if to <= from {
            return Ok(0.0);
        }
        match self.lambda.constant_value() {
            Some(a) => Ok(a * (self.law.integrated_survival(t - from) - self.law.integrated_survival(t - to))),
            None => integrate(|s| self.h(s, t), from, to, &[t - 1.0], tol),
        }
    }

    /// `Lambda(t) = ∫₀ᵗ lambda(s) Fbar(t - s) ds`.
    pub fn big_lambda(&self, t: f64) -> Result<f64> {
        check_time("t", t)?;
        self.kernel_integral(0.0, t, t, SINGLE_TOL)
    }

    pub fn m_bar0(&self, t: f64) -> Result<f64> {
        Ok(self.big_lambda(t)? * self.psi_bar)
    }

    /// Limit covariance `psi_bar ∫₀^{ti∧tj} lambda(s) Fbar(ti∨tj - s) ds`.
    pub fn gamma_cov(&self, ti: f64, tj: f64) -> Result<f64> {
        check_time("ti", ti)?;
        check_time("tj", tj)?;
        let (lo, hi) = if ti <= tj { (ti, tj) } else { (tj, ti) };
        Ok(self.psi_bar * self.kernel_integral(0.0, lo, hi, SINGLE_TOL)?)
    }

    pub fn gamma_matrix(&self, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n = times.len();
        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = self.gamma_cov(times[i], times[j])?;
                g[i][j] = v;
                g[j][i] = v;
            }
        }
        Ok(g)
    }

    pub fn xi_and_region_means(&self, t1: f64, t2: f64) -> Result<RegionOracle> {
        if !(0.0 <= t1 && t1 < t2) {
            return Err(Error::arg(format!("need 0 <= t1 < t2, got ({t1}, {t2})")));
        }
        let xi = self.kernel_integral(t1, t2, t2, SINGLE_TOL)?;
        let l1 = self.big_lambda(t1)?;
        let l2 = self.big_lambda(t2)?;
        let pb = self.psi_bar;
        Ok(RegionOracle {
            xi,
            a1: ((l1 - l2 + xi) * pb).max(0.0),
            a2: ((l2 - xi) * pb).max(0.0),
            a3: xi * pb,
        })
    }

    /// `H_t(r) = ∫_r^t h(u, t) du`.
    fn tail_kernel(&self, r: f64, t: f64) -> Result<f64> {
        self.kernel_integral(r, t, t, INNER_TOL)
    }

    /// `∫₀ᵗ∫₀ᵗ h(s1,t) h(s2,t) (s1 ∧ s2) ds1 ds2`, without any `sigma_psi^2`
    /// factor.
    pub fn sigma_bar_sq(&self, t: f64) -> Result<f64> {
        check_time("t", t)?;
        self.raw_supercritical_cov(t, t)
    }

    /// Factor applied to the raw double integrals in the annealed
    /// supercritical regime.
    pub fn environment_factor(&self) -> f64 {
        if self.include_sigma_psi {
            self.sigma_psi_sq
        } else {
            1.0
        }
    }

    /// Limit variance of `G_S(t)` under the configured convention.
    pub fn annealed_super_variance(&self, t: f64) -> Result<f64> {
        Ok(self.environment_factor() * self.sigma_bar_sq(t)?)
    }

    /// `∫₀ᵗ∫₀ˢ h(r1,s) h(r2,t) (r1 ∧ r2) dr1 dr2`, without `sigma_psi^2`.
    pub fn supercritical_cov(&self, s: f64, t: f64) -> Result<f64> {
        check_time("s", s)?;
        check_time("t", t)?;
        self.raw_supercritical_cov(s, t)
    }

    pub fn annealed_super_cov(&self, s: f64, t: f64) -> Result<f64> {
        Ok(self.environment_factor() * self.supercritical_cov(s, t)?)
    }

    /// `sigma_psi^2 ∫₀^{s∧t} h(u,s) h(u,t) du`: the covariance of the
    /// kernel integrated against white noise of intensity `sigma_psi^2`,
    /// i.e. the limit covariance of `(m^eps_0 - m_bar0)/sqrt(eps)`.
    /// Reported next to the supercritical oracle as a diagnostic.
    pub fn white_noise_cov(&self, s: f64, t: f64) -> Result<f64> {
        check_time("s", s)?;
        check_time("t", t)?;
        let upper = s.min(t);
        if upper <= 0.0 {
            return Ok(0.0);
        }
        let v = integrate(|u| self.h(u, s) * self.h(u, t), 0.0, upper, &[s - 1.0, t - 1.0], SINGLE_TOL)?;
        Ok(self.sigma_psi_sq * v)
    }

    fn raw_supercritical_cov(&self, s: f64, t: f64) -> Result<f64> {
        let upper = s.min(t);
        if upper <= 0.0 {
            return Ok(0.0);
        }
        let integrand = |r: f64| match (self.tail_kernel(r, s), self.tail_kernel(r, t)) {
            (Ok(a), Ok(b)) => a * b,
            _ => f64::NAN,
        };
        let v = integrate(integrand, 0.0, upper, &[s - 1.0, t - 1.0], OUTER_TOL)?;
        if !v.is_finite() {
            return Err(Error::Numerical(format!("supercritical covariance at ({s}, {t}) is not finite")));
        }
        Ok(v)
    }

    /// `R_st = Gamma(t,t) - 2 Gamma(s,t) + Gamma(s,s)`, the variance of the
    /// increment `G(t) - G(s)`.
    pub fn holder_increment(&self, s: f64, t: f64) -> Result<f64> {
        if !(0.0 <= s && s <= t) {
            return Err(Error::arg(format!("need 0 <= s <= t, got ({s}, {t})")));
        }
        if s == t {
            return Ok(0.0);
        }
        // R_st = psi_bar [∫_s^t h(u,t) du + ∫₀ˢ lambda(u) (Fbar(s-u) - Fbar(t-u)) du],
        // both pieces nonnegative; evaluating them separately avoids cancellation.
        let near = self.kernel_integral(s, t, t, SINGLE_TOL)?;
        let far = match self.lambda.constant_value() {
            Some(a) => {
                let phi = |v: f64| self.law.integrated_survival(v);
                a * (phi(s) - phi(t) + phi(t - s))
            }
            None => integrate(
                |u| self.lambda.value(u) * (self.law.survival(s - u) - self.law.survival(t - u)),
                0.0,
                s,
                &[s - 1.0, t - 1.0],
                SINGLE_TOL,
            )?,
        };
        Ok(self.psi_bar * (near + far.max(0.0)))
    }

    /// Upper bound `psi_bar max(lambda) (t - s) (2 - Fbar(t))` on `R_st`.
    ///
    /// The first piece of `R_st` is at most `max(lambda) (t-s)`; the second is
    /// `max(lambda) ∫ density(v) |{x in [0,s] : x < v <= x + t - s}| dv`,
    /// at most `max(lambda) (t-s) P(L <= t)`.
    pub fn holder_bound(&self, s: f64, t: f64) -> f64 {
        self.psi_bar * self.lambda.max() * (t - s) * (2.0 - self.law.survival(t))
    }

    /// `phi_t(f) = h(t,t) f(t) - ∫₀ᵗ ∂_s h(s,t) f(s) ds` for `f` sampled on a
    /// grid from 0 to `t`, by the trapezoidal rule.
    pub fn phi_functional(&self, t: f64, grid: &[f64], values: &[f64]) -> Result<f64> {
        if grid.len() != values.len() {
            return Err(Error::arg("grid and values differ in length"));
        }
        if grid.len() < PHI_MIN_POINTS {
            return Err(Error::Resolution { points: grid.len(), required: PHI_MIN_POINTS });
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::arg("grid must be strictly increasing"));
        }
        let end_tol = 1e-9 * t.max(1.0);
        if grid[0].abs() > end_tol || (grid[grid.len() - 1] - t).abs() > end_tol {
            return Err(Error::arg(format!("grid must span [0, {t}]")));
        }
        let g: Vec<f64> = grid.iter().zip(values).map(|(&s, &f)| self.dh_ds(s, t) * f).collect();
        let integral: f64 = grid
            .windows(2)
            .zip(g.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum();
        Ok(self.h(t, t) * values[values.len() - 1] - integral)
    }
}

fn check_time(what: &'static str, t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange { what, value: t, range: "[0, inf)".into() })
    }
}

/// Pieces of the envelope surrogate for `sigma_bar^2(t)` on the half domain
/// `0 < s2 < s1 < t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogatePieces {
    pub i: f64,
    pub ii: f64,
    pub iii: f64,
    pub total: f64,
}

fn envelope(alpha: f64, r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else {
        r.powf(-alpha)
    }
}

fn check_surrogate_args(alpha: f64, t: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::OutOfRange { what: "alpha", value: alpha, range: "(0, inf)".into() });
    }
    if !(t >= 1.0) || !t.is_finite() {
        return Err(Error::OutOfRange { what: "t", value: t, range: "[1, inf)".into() });
    }
    Ok(())
}

/// Corner piece `∫_{t-1}^t ∫_{t-1}^t (s1 ∧ s2)`, where the envelope is 1.
fn surrogate_corner(t: f64) -> Result<f64> {
    let lo = t - 1.0;
    integrate(
        |s1| {
            // ∫_{lo}^{t} min(s1, s2) ds2 split at the diagonal
            let below = integrate(|s2| s2, lo, s1, &[], INNER_TOL).unwrap_or(f64::NAN);
            below + s1 * (t - s1)
        },
        lo,
        t,
        &[],
        OUTER_TOL,
    )
}

/// Printed closed forms for II and III, with I by quadrature.
pub fn closed_form_i_ii_iii(alpha: f64, t: f64) -> Result<SurrogatePieces> {
    check_surrogate_args(alpha, t)?;
    if [1.0, 1.5, 2.0].contains(&alpha) {
        return Err(Error::RemovableSingularity { alpha });
    }
    let a = alpha;
    let i = surrogate_corner(t)?;
    let (ii, iii) = if t == 1.0 {
        (0.0, 0.0)
    } else {
        let ii = t.powf(2.0 - a) / ((1.0 - a) * (2.0 - a)) - t / (1.0 - a) + 1.0 / (2.0 - a);
        let b = (1.0 - a).powi(2);
        let iii = t.powf(3.0 - 2.0 * a) / (2.0 * b * (3.0 - 2.0 * a)) - t.powf(2.0 - a) / (b * (2.0 - a))
            + t / (2.0 * b)
            - 1.0 / ((2.0 - a) * (3.0 - 2.0 * a));
        (ii, iii)
    };
    Ok(SurrogatePieces { i, ii, iii, total: i + ii + iii })
}

/// The same three pieces by direct quadrature of their defining integrals;
/// valid for every `alpha`.
pub fn surrogate_quadrature(alpha: f64, t: f64) -> Result<SurrogatePieces> {
    check_surrogate_args(alpha, t)?;
    let i = surrogate_corner(t)?;
    let upper = t - 1.0;
    // II = ∫₀^{t-1} s2 (t - s2)^{-alpha} ds2
    let ii = integrate(|s| s * envelope(alpha, t - s), 0.0, upper, &[], OUTER_TOL)?;
    // III = ∫₀^{t-1} (t-s1)^{-alpha} ∫₀^{s1} s2 (t-s2)^{-alpha} ds2 ds1
    let iii = integrate(
        |s1| {
            let inner = integrate(|s2| s2 * envelope(alpha, t - s2), 0.0, s1, &[], INNER_TOL).unwrap_or(f64::NAN);
            envelope(alpha, t - s1) * inner
        },
        0.0,
        upper,
        &[],
        OUTER_TOL,
    )?;
    if !iii.is_finite() {
        return Err(Error::Numerical("surrogate III quadrature failed".into()));
    }
    Ok(SurrogatePieces { i, ii, iii, total: i + ii + iii })
}

/// `(G, G1, G2)` in the subcritical scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fluctuation {
    pub total: f64,
    pub service: f64,
    pub environment: f64,
}

/// `G = eps^{beta/2}(n - m_bar/eps^beta)`, split into
/// `G1 = eps^{-beta/2}(eps^beta n - m_eps0)` and
/// `G2 = eps^{-beta/2}(m_eps0 - m_bar)`.
pub fn rescale_subcritical(n: f64, m_bar: f64, m_eps0: f64, epsilon: f64, beta: f64) -> Result<Fluctuation> {
    check_scaling(epsilon, beta)?;
    let eb = epsilon.powf(beta);
    let half = epsilon.powf(beta / 2.0);
    Ok(Fluctuation {
        total: half * (n - m_bar / eb),
        service: (eb * n - m_eps0) / half,
        environment: (m_eps0 - m_bar) / half,
    })
}

/// `G_S = eps^{beta - 1/2}(n - m_bar/eps^beta)`, split into
/// `G_S1 = (eps^beta n - m_eps0)/sqrt(eps)` and
/// `G_S2 = (m_eps0 - m_bar)/sqrt(eps)`. Requires `beta > 1`.
pub fn rescale_supercritical(n: f64, m_bar: f64, m_eps0: f64, epsilon: f64, beta: f64) -> Result<Fluctuation> {
    check_scaling(epsilon, beta)?;
    if beta <= 1.0 {
        return Err(Error::Regime(format!("supercritical scaling needs beta > 1, got {beta}")));
    }
    let eb = epsilon.powf(beta);
    let root = epsilon.sqrt();
    Ok(Fluctuation {
        total: epsilon.powf(beta - 0.5) * (n - m_bar / eb),
        service: (eb * n - m_eps0) / root,
        environment: (m_eps0 - m_bar) / root,
    })
}

fn check_scaling(epsilon: f64, beta: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::OutOfRange { what: "epsilon", value: epsilon, range: "(0, 1]".into() });
    }
    if !(beta > 0.0) {
        return Err(Error::OutOfRange { what: "beta", value: beta, range: "(0, inf)".into() });
    }
    Ok(())
}

/// One row of an exported oracle table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub quantity: String,
    pub t: f64,
    pub s: Option<f64>,
    pub value: f64,
    pub method: String,
    pub tolerance: f64,
}

impl OracleRow {
    fn new(quantity: &str, t: f64, s: Option<f64>, value: f64, method: &str, tolerance: f64) -> Self {
        OracleRow { quantity: quantity.into(), t, s, value, method: method.into(), tolerance }
    }
}

/// Oracle table over a time grid: Lambda, m_bar0, sigma_bar^2 per time and
/// Gamma, Xi, region means per ordered pair.
pub fn oracle_table(oracle: &LimitOracle, times: &[f64]) -> Result<Vec<OracleRow>> {
    let closed = oracle.lambda.is_constant();
    let one_d = if closed { "closed-form" } else { "adaptive-gk15" };
    let mut rows = Vec::new();
    for &t in times {
        rows.push(OracleRow::new("Lambda", t, None, oracle.big_lambda(t)?, one_d, SINGLE_TOL.rel));
        rows.push(OracleRow::new("m_bar0", t, None, oracle.m_bar0(t)?, one_d, SINGLE_TOL.rel));
        rows.push(OracleRow::new("sigma_bar_sq", t, None, oracle.sigma_bar_sq(t)?, "nested-adaptive-gk15", DOUBLE_TOL.rel));
    }
    for (i, &s) in times.iter().enumerate() {
        for &t in &times[i + 1..] {
            let (lo, hi) = if s < t { (s, t) } else { (t, s) };
            rows.push(OracleRow::new("Gamma", hi, Some(lo), oracle.gamma_cov(lo, hi)?, one_d, SINGLE_TOL.rel));
            let r = oracle.xi_and_region_means(lo, hi)?;
            rows.push(OracleRow::new("Xi", hi, Some(lo), r.xi, one_d, SINGLE_TOL.rel));
            rows.push(OracleRow::new("m_bar_A1", hi, Some(lo), r.a1, one_d, SINGLE_TOL.rel));
            rows.push(OracleRow::new("m_bar_A2", hi, Some(lo), r.a2, one_d, SINGLE_TOL.rel));
            rows.push(OracleRow::new("m_bar_A3", hi, Some(lo), r.a3, one_d, SINGLE_TOL.rel));
            rows.push(OracleRow::new(
                "supercritical_cov",
                hi,
                Some(lo),
                oracle.supercritical_cov(lo, hi)?,
                "nested-adaptive-gk15",
                DOUBLE_TOL.rel,
            ));
        }
    }
    Ok(rows)
}

pub const ORACLE_CSV_HEADER: &str = "quantity,t,s,value,method,tolerance";

pub fn write_oracle_csv<W: Write>(rows: &[OracleRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{ORACLE_CSV_HEADER}")?;
    for r in rows {
        let s = r.s.map(|v| format!("{v}")).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{:e}", r.quantity, r.t, s, r.value, r.method, r.tolerance)?;
    }
    Ok(())
}
