//! Service-time law with tail index `alpha`.
//!
//! The density is `c·min(r^{-(1+alpha)}, 1)` with `c = alpha/(alpha+1)`: flat
//! on `[0, 1]` and a Pareto tail beyond. `alpha <= 1` gives an infinite mean.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate, Tolerance};

const NORMALIZATION_TOL: f64 = 1e-10;

/// Dependence of the service law on the arrival epoch. Only the homogeneous
/// member is available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ServiceLawRepr", into = "ServiceLawRepr")]
pub struct ServiceLaw {
    alpha: f64,
    c_alpha: f64,
    modulation: Modulation,
}

#[derive(Serialize, Deserialize)]
struct ServiceLawRepr {
    alpha: f64,
    #[serde(default)]
    modulation: Modulation,
}

impl TryFrom<ServiceLawRepr> for ServiceLaw {
    type Error = Error;

    fn try_from(r: ServiceLawRepr) -> Result<Self> {
        ServiceLaw::new(r.alpha)
    }
}

impl From<ServiceLaw> for ServiceLawRepr {
    fn from(l: ServiceLaw) -> Self {
        ServiceLawRepr { alpha: l.alpha, modulation: l.modulation }
    }
}

impl ServiceLaw {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::OutOfRange {
                what: "alpha",
                value: alpha,
                range: "(0, inf)".into(),
            });
        }
        let law = ServiceLaw {
            alpha,
            c_alpha: alpha / (alpha + 1.0),
            modulation: Modulation::None,
        };
        let mass = law.quadrature_mass()?;
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Numerical(format!("service density integrates to {mass}")));
        }
        Ok(law)
    }

    // ∫₀¹ density by quadrature, tail mass via the substitution r = 1/x:
    // ∫₁^∞ c r^{-(1+α)} dr = ∫₀¹ c x^{α-1} dx.
    fn quadrature_mass(&self) -> Result<f64> {
        let tol = Tolerance::relative(1e-13);
        let head = integrate(|r| self.density(r), 0.0, 1.0, &[], tol)?;
        let tail = if self.alpha >= 1.0 {
            integrate(|x| self.c_alpha * x.powf(self.alpha - 1.0), 0.0, 1.0, &[], tol)?
        } else {
            // integrable endpoint singularity; remove it with x = y^{1/α}
            integrate(|_y| self.c_alpha / self.alpha, 0.0, 1.0, &[], tol)?
        };
        Ok(head + tail)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c_alpha(&self) -> f64 {
        self.c_alpha
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    pub fn density(&self, r: f64) -> f64 {
        if r < 0.0 {
            return 0.0;
        }
        if r <= 1.0 {
            self.c_alpha
        } else {
            self.c_alpha * r.powf(-(1.0 + self.alpha))
        }
    }

    /// Density of a service starting at epoch `s`.
    pub fn density_at(&self, _s: f64, r: f64) -> f64 {
        match self.modulation {
            Modulation::None => self.density(r),
        }
    }

    /// `P(L > r)`.
    pub fn survival(&self, r: f64) -> f64 {
        if r <= 0.0 {
            1.0
        } else if r <= 1.0 {
            1.0 - self.c_alpha * r
        } else {
            r.powf(-self.alpha) / (self.alpha + 1.0)
        }
    }

    /// Survival of a service starting at epoch `s`.
    pub fn survival_at(&self, _s: f64, r: f64) -> f64 {
        match self.modulation {
            Modulation::None => self.survival(r),
        }
    }

    /// `∫₀ᵛ P(L > r) dr`, in closed form (log branch at `alpha = 1`).
    pub fn integrated_survival(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        if v <= 1.0 {
            return v - 0.5 * self.c_alpha * v * v;
        }
        let head = 1.0 - 0.5 * self.c_alpha;
        let a = self.alpha;
        let tail = if a == 1.0 {
            v.ln()
        } else {
            // (v^{1-α} - 1)/(1-α), evaluated without cancellation near α = 1
            let x = (1.0 - a) * v.ln();
            v.ln() * exp_m1_over_x(x)
        };
        head + tail / (a + 1.0)
    }

    /// Inverse-CDF transform of a uniform `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        if u <= self.c_alpha {
            u / self.c_alpha
        } else {
            ((1.0 - u) * (self.alpha + 1.0)).powf(-1.0 / self.alpha)
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // open interval (0, 1) keeps the draw positive and finite
        let u = loop {
            let u: f64 = rng.gen();
            if u > 0.0 {
                break u;
            }
        };
        self.quantile(u)
    }

    /// `E[L]`; infinite when `alpha <= 1`.
    pub fn mean(&self) -> f64 {
        let a = self.alpha;
        if a <= 1.0 {
            f64::INFINITY
        } else {
            1.0 - self.c_alpha / 2.0 + 1.0 / ((a + 1.0) * (a - 1.0))
        }
    }

    /// `E[L^2]`; infinite when `alpha <= 2`.
    pub fn second_moment(&self) -> f64 {
        let a = self.alpha;
        if a <= 2.0 {
            f64::INFINITY
        } else {
            self.c_alpha / 3.0 + self.c_alpha / (a - 2.0)
        }
    }

    /// `sup_r density(r)`.
    pub fn density_bound(&self) -> f64 {
        self.c_alpha
    }
}

/// `(e^x - 1)/x`, continuous at 0.
fn exp_m1_over_x(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + 0.5 * x
    } else {
        x.exp_m1() / x
    }
}
