//! Cox arrival stream with intensity `eps^{-beta} lambda(s) psi(Z_{s/eps})`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvPath, MarkovEnvironment};
use crate::error::{Error, Result};
use crate::quad::{integrate, Tolerance};
use crate::service::ServiceLaw;

const MEAN_MEASURE_TOL: Tolerance = Tolerance::relative(1e-9);

/// Deterministic modulation `lambda(s)` of the arrival rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RateFunction {
    Constant { a: f64 },
    /// `a + b sin(omega s)` with `a > b >= 0`.
    Sinusoidal { a: f64, b: f64, omega: f64 },
}

impl RateFunction {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RateFunction::Constant { a } if a > 0.0 && a.is_finite() => Ok(()),
            RateFunction::Constant { a } => Err(Error::OutOfRange {
                what: "lambda.a",
                value: a,
                range: "(0, inf)".into(),
            }),
            RateFunction::Sinusoidal { a, b, omega } => {
                if !(a.is_finite() && b.is_finite() && omega.is_finite()) {
                    return Err(Error::arg("lambda parameters must be finite"));
                }
                if !(b >= 0.0 && a > b) {
                    return Err(Error::arg(format!(
                        "sinusoidal lambda needs a > b >= 0, got a = {a}, b = {b}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        match *self {
            RateFunction::Constant { a } => a,
            RateFunction::Sinusoidal { a, b, omega } => a + b * (omega * s).sin(),
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            RateFunction::Constant { .. } => 0.0,
            RateFunction::Sinusoidal { b, omega, .. } => b * omega * (omega * s).cos(),
        }
    }

    /// Analytic upper bound of `lambda` on the whole line.
    pub fn max(&self) -> f64 {
        match *self {
            RateFunction::Constant { a } => a,
            RateFunction::Sinusoidal { a, b, .. } => a + b,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, RateFunction::Constant { .. })
            || matches!(self, RateFunction::Sinusoidal { b, omega, .. } if *b == 0.0 || *omega == 0.0)
    }

    pub(crate) fn constant_value(&self) -> Option<f64> {
        self.is_constant().then(|| self.value(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySpec {
    pub lambda: RateFunction,
    pub epsilon: f64,
    pub beta: f64,
    /// Slow-clock horizon `T`.
    pub horizon: f64,
}

impl IntensitySpec {
    pub fn new(lambda: RateFunction, epsilon: f64, beta: f64, horizon: f64) -> Result<Self> {
        lambda.validate()?;
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::OutOfRange { what: "epsilon", value: epsilon, range: "(0, 1]".into() });
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::OutOfRange { what: "beta", value: beta, range: "[0, inf)".into() });
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::OutOfRange { what: "horizon", value: horizon, range: "[0, inf)".into() });
        }
        Ok(IntensitySpec { lambda, epsilon, beta, horizon })
    }

    /// `eps^{-beta}`.
    pub fn speedup(&self) -> f64 {
        self.epsilon.powf(-self.beta)
    }

    /// Fast-clock horizon an environment path must cover.
    pub fn fast_horizon(&self) -> f64 {
        self.horizon / self.epsilon
    }

    /// Constant majorant `eps^{-beta} max(lambda) max(psi)` for thinning.
    pub fn majorant(&self, env: &MarkovEnvironment) -> f64 {
        self.speedup() * self.lambda.max() * env.psi_max()
    }

    fn check_path(&self, path: &EnvPath, until: f64) -> Result<()> {
        let needed = until / self.epsilon;
        // relative slack for the rounding in horizon / epsilon
        if path.horizon() < needed * (1.0 - 4.0 * f64::EPSILON) {
            return Err(Error::OutOfRange {
                what: "path horizon",
                value: path.horizon(),
                range: format!("[{needed}, inf)"),
            });
        }
        Ok(())
    }
}

pub fn intensity_at(
    spec: &IntensitySpec,
    env: &MarkovEnvironment,
    path: &EnvPath,
    s: f64,
) -> Result<f64> {
    if !(0.0..=spec.horizon).contains(&s) {
        return Err(Error::OutOfRange { what: "s", value: s, range: format!("[0, {}]", spec.horizon) });
    }
    spec.check_path(path, spec.horizon)?;
    let state = path.state_at(s / spec.epsilon);
    Ok(spec.speedup() * spec.lambda.value(s) * env.psi()[state])
}

/// Lewis–Shedler thinning of a homogeneous Poisson stream at the majorant
/// rate. Returns increasing arrival epochs on `[0, horizon]`.
pub fn sample_arrivals<R: Rng + ?Sized>(
    spec: &IntensitySpec,
    env: &MarkovEnvironment,
    path: &EnvPath,
    horizon: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if horizon > spec.horizon {
        return Err(Error::OutOfRange { what: "horizon", value: horizon, range: format!("[0, {}]", spec.horizon) });
    }
    if horizon <= 0.0 {
        return Ok(Vec::new());
    }
    spec.check_path(path, horizon)?;
    let majorant = spec.majorant(env);
    if majorant <= 0.0 {
        return Ok(Vec::new());
    }
    let speedup = spec.speedup();
    let psi = env.psi();
    let jumps = path.jump_times();
    let states = path.states();
    let mut cursor = 0usize;
    let mut arrivals = Vec::with_capacity((majorant * horizon * 1.1) as usize + 8);
    let mut s = 0.0;
    loop {
        let u: f64 = rng.gen();
        s += -(1.0 - u).ln() / majorant;
        if s > horizon {
            break;
        }
        let fast = s / spec.epsilon;
        while cursor + 1 < jumps.len() && jumps[cursor + 1] <= fast {
            cursor += 1;
        }
        let rate = speedup * spec.lambda.value(s) * psi[states[cursor]];
        let accept: f64 = rng.gen();
        if accept * majorant < rate {
            arrivals.push(s);
        }
    }
    Ok(arrivals)
}

/// Conditional mean of the number in system given the environment path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanMeasure {
    /// `m^eps(t)`
    pub scaled: f64,
    /// `m^eps_0(t) = eps^beta m^eps(t)`
    pub base: f64,
}

/// `m^eps_0(t) = ∫₀ᵗ lambda(s) Fbar(t-s) psi(Z_{s/eps}) ds`, integrated
/// exactly over each holding interval of the path.
pub fn conditional_mean_measure(
    spec: &IntensitySpec,
    env: &MarkovEnvironment,
    law: &ServiceLaw,
    path: &EnvPath,
    t: f64,
) -> Result<MeanMeasure> {
    if !(0.0..=spec.horizon).contains(&t) {
        return Err(Error::OutOfRange { what: "t", value: t, range: format!("[0, {}]", spec.horizon) });
    }
    spec.check_path(path, t)?;
    let base = mean_measure_between(spec, env, law, path, 0.0, t, t)?;
    Ok(MeanMeasure { scaled: base * spec.speedup(), base })
}

/// `∫_{from}^{to} lambda(s) Fbar(t-s) psi(Z_{s/eps}) ds` for `to <= t`.
pub(crate) fn mean_measure_between(
    spec: &IntensitySpec,
    env: &MarkovEnvironment,
    law: &ServiceLaw,
    path: &EnvPath,
    from: f64,
    to: f64,
    t: f64,
) -> Result<f64> {
    let eps = spec.epsilon;
    let psi = env.psi();
    let constant = spec.lambda.constant_value();
    let start = path.interval_index(from / eps);
    let jumps = path.jump_times();
    let states = path.states();
    let mut total = 0.0;
    for k in start..jumps.len() {
        let a = (jumps[k] * eps).max(from);
        if a >= to {
            break;
        }
        let b = jumps.get(k + 1).map_or(to, |&j| (j * eps).min(to));
        let weight = psi[states[k]];
        if weight == 0.0 || b <= a {
            continue;
        }
        let piece = match constant {
            Some(c) => c * (law.integrated_survival(t - a) - law.integrated_survival(t - b)),
            None => integrate(
                |s| spec.lambda.value(s) * law.survival(t - s),
                a,
                b,
                &[t - 1.0],
                MEAN_MEASURE_TOL,
            )?,
        };
        total += weight * piece;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::sample_path;
    use crate::rng::{Role, StreamKey};

    fn unit_env() -> MarkovEnvironment {
        MarkovEnvironment::symmetric_two_state(1.0, [1.0, 1.0]).unwrap()
    }

    #[test]
    fn intensity_examples() {
        let env = unit_env();
        let spec = IntensitySpec::new(RateFunction::Constant { a: 1.0 }, 0.01, 1.0, 1.0).unwrap();
        let path = EnvPath::constant(0, 100.0);
        assert!((intensity_at(&spec, &env, &path, 0.3).unwrap() - 100.0).abs() < 1e-12);

        let frozen = MarkovEnvironment::unchecked(vec![0.0; 4], vec![0.5, 3.0], vec![0.0, 1.0]).unwrap();
        let lam = RateFunction::Sinusoidal { a: 2.0, b: 1.0, omega: 3.0 };
        let spec = IntensitySpec::new(lam, 0.1, 0.0, 2.0).unwrap();
        let path = EnvPath::constant(1, 20.0);
        let s = 0.7;
        let got = intensity_at(&spec, &frozen, &path, s).unwrap();
        assert!((got - lam.value(s) * 3.0).abs() < 1e-14);
        assert!(intensity_at(&spec, &frozen, &EnvPath::constant(1, 5.0), s).is_err());
    }

    #[test]
    fn empty_horizon() {
        let env = unit_env();
        let spec = IntensitySpec::new(RateFunction::Constant { a: 1.0 }, 0.5, 1.0, 1.0).unwrap();
        let path = EnvPath::constant(0, 2.0);
        let mut rng = StreamKey::new(0, 0, Role::Arrivals).stream(0);
        assert!(sample_arrivals(&spec, &env, &path, 0.0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn homogeneous_poisson_count() {
        let env = unit_env();
        let spec = IntensitySpec::new(RateFunction::Constant { a: 1.0 }, 0.01, 1.0, 1.0).unwrap();
        let path = EnvPath::constant(0, 100.0);
        let key = StreamKey::new(5, 0, Role::Arrivals);
        let runs = 10_000;
        let counts: Vec<f64> = (0..runs)
            .map(|k| sample_arrivals(&spec, &env, &path, 1.0, &mut key.stream(k)).unwrap().len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / runs as f64;
        let se = (100.0 / runs as f64).sqrt();
        assert!((mean - 100.0).abs() <= 3.0 * se, "mean {mean}");
    }

    /// Acceptance probability per state: fraction of arrivals landing in
    /// state 0 equals psi_0 time_0 / sum_i psi_i time_i.
    #[test]
    fn thinning_acceptance_ratio() {
        let env = MarkovEnvironment::new(vec![-1.0, 1.0, 1.0, -1.0], vec![0.25, 1.0], vec![1.0, 0.0]).unwrap();
        let path = EnvPath::new(10.0, vec![0.0, 5.0], vec![0, 1], 2).unwrap();
        let spec = IntensitySpec::new(RateFunction::Constant { a: 1.0 }, 1.0, 0.0, 10.0).unwrap();
        let key = StreamKey::new(6, 0, Role::Arrivals);
        let (mut first, mut total) = (0usize, 0usize);
        for k in 0..4000 {
            let arr = sample_arrivals(&spec, &env, &path, 10.0, &mut key.stream(k)).unwrap();
            first += arr.iter().filter(|&&s| s < 5.0).count();
            total += arr.len();
        }
        let p = 0.25 / 1.25;
        let hat = first as f64 / total as f64;
        let se = (p * (1.0 - p) / total as f64).sqrt();
        assert!((hat - p).abs() < 3.0 * se, "{hat}");
        assert!(((total as f64 / 4000.0) - 6.25).abs() < 3.0 * (6.25f64 / 4000.0).sqrt());
    }

    #[test]
    fn mean_measure_examples() {
        let law = ServiceLaw::new(1.0).unwrap();
        let env = unit_env();
        let spec = IntensitySpec::new(RateFunction::Constant { a: 1.0 }, 0.01, 0.5, 2.0).unwrap();
        let mut rng = StreamKey::new(3, 0, Role::Environment).stream(0);
        let path = sample_path(&env, spec.fast_horizon(), &mut rng).unwrap();
        let m = conditional_mean_measure(&spec, &env, &law, &path, 1.0).unwrap();
        assert!((m.base - 0.75).abs() < 1e-12);
        assert!((m.scaled - 7.5).abs() < 1e-10);

        let env3 = env.with_psi(vec![3.0, 3.0]).unwrap();
        let m3 = conditional_mean_measure(&spec, &env3, &law, &path, 1.0).unwrap();
        assert!((m3.base - 2.25).abs() < 1e-12);
    }

    /// Quadrature route for a sinusoid against per-interval Simpson sums.
    #[test]
    fn mean_measure_quadrature_route() {
        let law = ServiceLaw::new(0.6).unwrap();
        let env = MarkovEnvironment::new(vec![-2.0, 2.0, 1.0, -1.0], vec![0.5, 2.0], vec![0.5, 0.5]).unwrap();
        let lam = RateFunction::Sinusoidal { a: 1.5, b: 0.5, omega: 2.0 };
        let spec = IntensitySpec::new(lam, 0.05, 0.5, 3.0).unwrap();
        let mut rng = StreamKey::new(4, 0, Role::Environment).stream(0);
        let path = sample_path(&env, spec.fast_horizon(), &mut rng).unwrap();
        let t = 2.5;
        let got = conditional_mean_measure(&spec, &env, &law, &path, t).unwrap().base;
        // composite Simpson on each holding interval, split at the kink t - 1
        let f = |s: f64| lam.value(s) * law.survival(t - s);
        let simpson = |a: f64, b: f64, w: f64| {
            let n = 2000;
            let h = (b - a) / n as f64;
            let inner: f64 = (1..n).map(|k| if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h)).sum();
            w * h / 3.0 * (f(a) + f(b) + inner)
        };
        let mut brute = 0.0;
        for (a, b, state) in path.intervals(t / spec.epsilon) {
            let (a, b) = (a * spec.epsilon, b * spec.epsilon);
            let w = env.psi()[state];
            if a < t - 1.0 && t - 1.0 < b {
                brute += simpson(a, t - 1.0, w) + simpson(t - 1.0, b, w);
            } else {
                brute += simpson(a, b, w);
            }
        }
        assert!((got - brute).abs() < 1e-9 * brute, "{got} {brute}");
    }
}
