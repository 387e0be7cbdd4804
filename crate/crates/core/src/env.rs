//! Finite-state Markov jump environments.
//!
//! The environment `Z` is an irreducible continuous-time Markov chain with
//! generator `Q`, observed through a positive function `psi` of its state.
//! Paths are piecewise constant and right-continuous, so every time integral
//! of `psi(Z)` is computed exactly as a finite sum over holding intervals.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Role, StreamKey, StreamRng};

const ROW_SUM_TOL: f64 = 1e-12;
const LAW_SUM_TOL: f64 = 1e-12;
const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovEnvironment {
    generator: Vec<f64>,
    dim: usize,
    psi: Vec<f64>,
    initial_law: Vec<f64>,
}

impl MarkovEnvironment {
    /// Builds an environment from a row-major `dim × dim` generator.
    ///
    /// Requires an irreducible chain and `psi > 0` in every state.
    pub fn new(generator: Vec<f64>, psi: Vec<f64>, initial_law: Vec<f64>) -> Result<Self> {
        let env = Self::build(generator, psi, initial_law)?;
        if let Some((i, v)) = env.psi.iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(Error::InvalidEnvironment(format!(
                "psi must be strictly positive, psi[{i}] = {v}"
            )));
        }
        env.check_irreducible()?;
        Ok(env)
    }

    /// Like [`MarkovEnvironment::new`] but admits `psi >= 0`, for indicator
    /// observables such as `psi = (0, 1)`.
    pub fn with_nonnegative_psi(
        generator: Vec<f64>,
        psi: Vec<f64>,
        initial_law: Vec<f64>,
    ) -> Result<Self> {
        let env = Self::build(generator, psi, initial_law)?;
        if let Some((i, v)) = env.psi.iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(Error::InvalidEnvironment(format!("psi[{i}] = {v} is negative")));
        }
        if env.psi.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidEnvironment("psi vanishes identically".into()));
        }
        env.check_irreducible()?;
        Ok(env)
    }

    /// Skips the irreducibility and positivity checks. Only for fixtures such
    /// as a frozen chain; the limit constants of such a chain are meaningless.
    #[doc(hidden)]
    pub fn unchecked(generator: Vec<f64>, psi: Vec<f64>, initial_law: Vec<f64>) -> Result<Self> {
        Self::build(generator, psi, initial_law)
    }

    /// Symmetric two-state chain with jump rate `rate` in both directions,
    /// started from its invariant law.
    pub fn symmetric_two_state(rate: f64, psi: [f64; 2]) -> Result<Self> {
        Self::with_nonnegative_psi(
            vec![-rate, rate, rate, -rate],
            psi.to_vec(),
            vec![0.5, 0.5],
        )
    }

    fn build(generator: Vec<f64>, psi: Vec<f64>, initial_law: Vec<f64>) -> Result<Self> {
        let dim = psi.len();
        if dim == 0 {
            return Err(Error::InvalidEnvironment("at least one state is required".into()));
        }
        if generator.len() != dim * dim {
            return Err(Error::InvalidEnvironment(format!(
                "generator has {} entries, expected {}",
                generator.len(),
                dim * dim
            )));
        }
        if initial_law.len() != dim {
            return Err(Error::InvalidEnvironment(format!(
                "initial law has {} entries, expected {dim}",
                initial_law.len()
            )));
        }
        if generator.iter().chain(&psi).chain(&initial_law).any(|v| !v.is_finite()) {
            return Err(Error::InvalidEnvironment("non-finite entry".into()));
        }
        for i in 0..dim {
            let row = &generator[i * dim..(i + 1) * dim];
            for (j, &q) in row.iter().enumerate() {
                if i != j && q < 0.0 {
                    return Err(Error::InvalidEnvironment(format!(
                        "off-diagonal rate q[{i}][{j}] = {q} is negative"
                    )));
                }
            }
            let sum: f64 = row.iter().sum();
            let scale = row.iter().map(|q| q.abs()).fold(1.0, f64::max);
            if sum.abs() > ROW_SUM_TOL * scale {
                return Err(Error::InvalidEnvironment(format!("row {i} sums to {sum}, not 0")));
            }
        }
        if initial_law.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidEnvironment("initial law has a negative entry".into()));
        }
        let total: f64 = initial_law.iter().sum();
        if (total - 1.0).abs() > LAW_SUM_TOL {
            return Err(Error::InvalidEnvironment(format!("initial law sums to {total}")));
        }
        Ok(MarkovEnvironment { generator, dim, psi, initial_law })
    }

    fn check_irreducible(&self) -> Result<()> {
        let d = self.dim;
        let reach = |forward: bool| {
            let mut seen = vec![false; d];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for (j, s) in seen.iter_mut().enumerate() {
                    let q = if forward { self.rate(i, j) } else { self.rate(j, i) };
                    if i != j && q > 0.0 && !*s {
                        *s = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        if reach(true) && reach(false) {
            Ok(())
        } else {
            Err(Error::InvalidEnvironment("generator is not irreducible".into()))
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.generator[from * self.dim + to]
    }

    pub fn exit_rate(&self, state: usize) -> f64 {
        -self.rate(state, state)
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn initial_law(&self) -> &[f64] {
        &self.initial_law
    }

    pub fn psi_max(&self) -> f64 {
        self.psi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn psi_min(&self) -> f64 {
        self.psi.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn generator_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.generator)
    }

    /// Same chain with a different observable (nonnegative `psi` admitted).
    pub fn with_psi(&self, psi: Vec<f64>) -> Result<Self> {
        Self::with_nonnegative_psi(self.generator.clone(), psi, self.initial_law.clone())
    }

    /// Same chain started from `law`.
    pub fn with_initial_law(&self, law: Vec<f64>) -> Result<Self> {
        Self::build(self.generator.clone(), self.psi.clone(), law)
    }
}

/// Invariant law `pi` with `pi Q = 0` and `sum(pi) = 1`.
pub fn stationary_distribution(env: &MarkovEnvironment) -> Result<Vec<f64>> {
    let d = env.dim();
    if d == 1 {
        return Ok(vec![1.0]);
    }
    let q = env.generator_matrix();
    // Solve Q^T pi = 0 with the last equation replaced by the normalization.
    let mut a = q.transpose();
    for j in 0..d {
        a[(d - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(d);
    rhs[d - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular balance system".into()))?;
    let residual = (pi.transpose() * &q).amax();
    let scale = q.amax().max(1.0);
    if residual > SOLVE_RESIDUAL_TOL * scale {
        return Err(Error::Numerical(format!("stationary residual {residual:e}")));
    }
    Ok(pi.iter().map(|&p| p.max(0.0)).collect())
}

/// Ergodic mean of `psi` under the invariant law.
pub fn psi_bar(env: &MarkovEnvironment) -> Result<f64> {
    let pi = stationary_distribution(env)?;
    Ok(pi.iter().zip(env.psi()).map(|(p, v)| p * v).sum())
}

/// Asymptotic variance `sigma_psi^2 = 2 <psi_hat, u>_pi` where `u` solves the
/// Poisson equation `(-Q) u = psi_hat` normalized by `<pi, u> = 0`.
pub fn green_kubo_sigma_sq(env: &MarkovEnvironment) -> Result<f64> {
    let d = env.dim();
    let pi = stationary_distribution(env)?;
    let mean: f64 = pi.iter().zip(env.psi()).map(|(p, v)| p * v).sum();
    let centered: Vec<f64> = env.psi().iter().map(|v| v - mean).collect();
    if d == 1 {
        return Ok(0.0);
    }
    let neg_q = -env.generator_matrix();
    let mut a = neg_q.clone();
    let mut rhs = DVector::from_vec(centered.clone());
    // Pin the solution by replacing the last equation with <pi, u> = 0.
    for j in 0..d {
        a[(d - 1, j)] = pi[j];
    }
    rhs[d - 1] = 0.0;
    let u = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Poisson-equation system".into()))?;
    let residual = (&neg_q * &u - DVector::from_vec(centered.clone())).amax();
    let scale = neg_q.amax().max(1.0) * u.amax().max(1.0);
    if residual > SOLVE_RESIDUAL_TOL * scale {
        return Err(Error::Numerical(format!("Poisson-equation residual {residual:e}")));
    }
    let sigma_sq: f64 = 2.0 * (0..d).map(|i| pi[i] * centered[i] * u[i]).sum::<f64>();
    Ok(sigma_sq.max(0.0))
}

/// One right-continuous realization of the environment on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvPath {
    horizon: f64,
    jump_times: Vec<f64>,
    states: Vec<usize>,
}

impl EnvPath {
    pub fn new(horizon: f64, jump_times: Vec<f64>, states: Vec<usize>, dim: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::arg(format!("horizon must be positive, got {horizon}")));
        }
        if jump_times.is_empty() || jump_times[0] != 0.0 {
            return Err(Error::arg("jump times must start at 0"));
        }
        if jump_times.len() != states.len() {
            return Err(Error::arg("jump_times and states differ in length"));
        }
        if jump_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::arg("jump times must be strictly increasing"));
        }
        if *jump_times.last().unwrap() > horizon {
            return Err(Error::arg("last jump time exceeds the horizon"));
        }
        if let Some(&s) = states.iter().find(|&&s| s >= dim) {
            return Err(Error::arg(format!("state {s} out of range for {dim} states")));
        }
        Ok(EnvPath { horizon, jump_times, states })
    }

    /// Constant path that never leaves `state`.
    pub fn constant(state: usize, horizon: f64) -> Self {
        EnvPath { horizon, jump_times: vec![0.0], states: vec![state] }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len() - 1
    }

    /// Index of the holding interval containing `u` (right-continuous).
    pub fn interval_index(&self, u: f64) -> usize {
        self.jump_times.partition_point(|&j| j <= u).saturating_sub(1)
    }

    pub fn state_at(&self, u: f64) -> usize {
        self.states[self.interval_index(u)]
    }

    /// Holding intervals `(start, end, state)` clipped to `[0, until]`.
    pub fn intervals(&self, until: f64) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let until = until.min(self.horizon);
        let n = self.jump_times.len();
        (0..n)
            .map(move |k| {
                let start = self.jump_times[k];
                let end = if k + 1 < n { self.jump_times[k + 1] } else { self.horizon };
                (start, end.min(until), self.states[k])
            })
            .take_while(move |&(start, _, _)| start < until)
    }

    /// Exact `∫₀ᵘ psi(Z_v) dv`.
    pub fn integral_psi(&self, psi: &[f64], until: f64) -> f64 {
        self.intervals(until).map(|(a, b, s)| (b - a) * psi[s]).sum()
    }
}

/// Jump-chain / holding-time sampler on `[0, horizon]`.
pub fn sample_path(env: &MarkovEnvironment, horizon: f64, rng: &mut StreamRng) -> Result<EnvPath> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::arg(format!("horizon must be positive, got {horizon}")));
    }
    let d = env.dim();
    let mut state = pick(env.initial_law(), rng.gen::<f64>());
    let mut t = 0.0;
    let mut jump_times = vec![0.0];
    let mut states = vec![state];
    let mut weights = vec![0.0; d];
    loop {
        let exit = env.exit_rate(state);
        if exit <= 0.0 {
            break;
        }
        let u: f64 = rng.gen();
        t += -(1.0 - u).ln() / exit;
        if t > horizon {
            break;
        }
        for (j, w) in weights.iter_mut().enumerate() {
            *w = if j == state { 0.0 } else { env.rate(state, j) / exit };
        }
        state = pick(&weights, rng.gen::<f64>());
        jump_times.push(t);
        states.push(state);
    }
    Ok(EnvPath { horizon, jump_times, states })
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Exact `t⁻¹ ∫₀ᵗ psi(Z_u) du`.
pub fn time_average_psi(path: &EnvPath, env: &MarkovEnvironment, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::arg(format!("averaging time must be positive, got {t}")));
    }
    if t > path.horizon() {
        return Err(Error::OutOfRange {
            what: "t",
            value: t,
            range: format!("(0, {}]", path.horizon()),
        });
    }
    Ok(path.integral_psi(env.psi(), t) / t)
}

/// `replications` independent draws of
/// `Y^eps(t) = eps^{-1/2} ∫₀ᵗ (psi(Z_{s/eps}) - psi_bar) ds`.
pub fn environment_fclt_probe(
    env: &MarkovEnvironment,
    epsilon: f64,
    t: f64,
    replications: usize,
    root_seed: u64,
) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::arg(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(t >= 0.0) {
        return Err(Error::arg(format!("t must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(vec![0.0; replications]);
    }
    let mean = psi_bar(env)?;
    let fast = t / epsilon;
    let key = StreamKey::new(root_seed, 0, Role::Probe);
    (0..replications)
        .into_par_iter()
        .map(|k| {
            let mut rng = key.stream(k as u64);
            let path = sample_path(env, fast, &mut rng)?;
            let integral = path.integral_psi(env.psi(), fast);
            Ok(epsilon.sqrt() * (integral - mean * fast))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(q12: f64, q21: f64, psi: [f64; 2]) -> MarkovEnvironment {
        MarkovEnvironment::with_nonnegative_psi(
            vec![-q12, q12, q21, -q21],
            psi.to_vec(),
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    fn cycle3() -> MarkovEnvironment {
        MarkovEnvironment::new(
            vec![-1.0, 1.0, 0.0, 0.0, -1.0, 1.0, 1.0, 0.0, -1.0],
            vec![1.0, 2.0, 3.0],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn stationary_examples() {
        let pi = stationary_distribution(&two_state(1.0, 1.0, [1.0, 1.0])).unwrap();
        assert!(close(pi[0], 0.5, 1e-12) && close(pi[1], 0.5, 1e-12));
        // balance: pi1 * 2 = pi2 * 1
        let pi = stationary_distribution(&two_state(2.0, 1.0, [1.0, 1.0])).unwrap();
        assert!(close(pi[0], 1.0 / 3.0, 1e-12) && close(pi[1], 2.0 / 3.0, 1e-12));
        let pi = stationary_distribution(&cycle3()).unwrap();
        assert!(pi.iter().all(|&p| close(p, 1.0 / 3.0, 1e-12)));
    }

    #[test]
    fn psi_bar_examples() {
        assert!(close(psi_bar(&two_state(1.0, 1.0, [0.0, 1.0])).unwrap(), 0.5, 1e-12));
        assert!(close(psi_bar(&two_state(3.0, 0.5, [2.5, 2.5])).unwrap(), 2.5, 1e-12));
        assert!(close(psi_bar(&two_state(2.0, 1.0, [1.0, 4.0])).unwrap(), 3.0, 1e-12));
    }

    #[test]
    fn green_kubo_examples() {
        assert!(close(green_kubo_sigma_sq(&two_state(1.0, 2.0, [3.0, 3.0])).unwrap(), 0.0, 1e-14));
        // Cov(t) = e^{-2t}/4, so sigma^2 = 2 ∫ Cov = 1/4
        let s = green_kubo_sigma_sq(&two_state(1.0, 1.0, [0.0, 1.0])).unwrap();
        assert!(close(s, 0.25, 1e-12), "{s}");
        let s2 = green_kubo_sigma_sq(&two_state(1.0, 1.0, [0.0, 2.0])).unwrap();
        assert!(close(s2, 1.0, 1e-12));
        let base = green_kubo_sigma_sq(&cycle3()).unwrap();
        let shifted = green_kubo_sigma_sq(&cycle3().with_psi(vec![6.0, 7.0, 8.0]).unwrap()).unwrap();
        assert!(close(base, shifted, 1e-12));
    }

    /// Green–Kubo against the spectral route for an asymmetric 2-state chain:
    /// Cov(t) = pi1 pi2 (psi2 - psi1)^2 e^{-(q12+q21) t}.
    #[test]
    fn green_kubo_matches_spectral_two_state() {
        let (a, b) = (2.0, 0.5);
        let env = two_state(a, b, [1.0, 4.0]);
        let p1 = b / (a + b);
        let p2 = a / (a + b);
        let expected = 2.0 * p1 * p2 * 9.0 / (a + b);
        assert!(close(green_kubo_sigma_sq(&env).unwrap(), expected, 1e-12));
    }

    #[test]
    fn construction_errors() {
        assert!(MarkovEnvironment::new(vec![-1.0, 1.0, 1.0, -1.0], vec![0.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(MarkovEnvironment::new(vec![-1.0, 1.0, 0.0, 0.0], vec![1.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(MarkovEnvironment::new(vec![-1.0, 1.5, 1.0, -1.0], vec![1.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(MarkovEnvironment::new(vec![1.0, -1.0, 1.0, -1.0], vec![1.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(MarkovEnvironment::new(vec![-1.0, 1.0, 1.0, -1.0], vec![1.0, 1.0], vec![0.7, 0.5]).is_err());
        assert!(MarkovEnvironment::new(vec![0.0], vec![2.0], vec![1.0]).is_ok());
    }

    #[test]
    fn frozen_chain_path_is_constant() {
        let env = MarkovEnvironment::unchecked(vec![0.0; 4], vec![1.0, 2.0], vec![0.0, 1.0]).unwrap();
        let mut rng = StreamKey::new(1, 0, Role::Environment).stream(0);
        let path = sample_path(&env, 50.0, &mut rng).unwrap();
        assert_eq!(path.jump_times(), &[0.0]);
        assert_eq!(path.states(), &[1]);
        assert_eq!(time_average_psi(&path, &env, 10.0).unwrap(), 2.0);
    }

    #[test]
    fn time_average_edge_cases() {
        let env = two_state(1.0, 1.0, [4.0, 4.0]);
        let mut rng = StreamKey::new(2, 0, Role::Environment).stream(0);
        let path = sample_path(&env, 100.0, &mut rng).unwrap();
        assert!(close(time_average_psi(&path, &env, 37.5).unwrap(), 4.0, 1e-12));
        assert!(matches!(time_average_psi(&path, &env, 100.5), Err(Error::OutOfRange { .. })));
        let single = MarkovEnvironment::new(vec![0.0], vec![0.3], vec![1.0]).unwrap();
        let p = sample_path(&single, 5.0, &mut rng).unwrap();
        assert!(close(time_average_psi(&p, &single, 5.0).unwrap(), 0.3, 1e-15));
    }

    #[test]
    fn path_is_right_continuous() {
        let path = EnvPath::new(3.0, vec![0.0, 1.0, 2.0], vec![0, 1, 0], 2).unwrap();
        assert_eq!(path.state_at(0.999), 0);
        assert_eq!(path.state_at(1.0), 1);
        assert_eq!(path.state_at(2.0), 0);
        assert_eq!(path.state_at(3.0), 0);
        assert!(close(path.integral_psi(&[0.0, 1.0], 1.5), 0.5, 1e-15));
        assert!(EnvPath::new(3.0, vec![0.0, 1.0, 1.0], vec![0, 1, 0], 2).is_err());
        assert!(EnvPath::new(3.0, vec![0.0, 4.0], vec![0, 1], 2).is_err());
        assert!(EnvPath::new(3.0, vec![0.0], vec![2], 2).is_err());
    }

    #[test]
    fn sample_path_is_deterministic() {
        let env = cycle3();
        let key = StreamKey::new(99, 0, Role::Environment);
        let a = sample_path(&env, 200.0, &mut key.stream(5)).unwrap();
        let b = sample_path(&env, 200.0, &mut key.stream(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.jump_times().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn fclt_probe_at_zero_time() {
        let env = two_state(1.0, 1.0, [0.0, 1.0]);
        let ys = environment_fclt_probe(&env, 1e-3, 0.0, 10, 1).unwrap();
        assert!(ys.iter().all(|&y| y == 0.0));
    }
}
