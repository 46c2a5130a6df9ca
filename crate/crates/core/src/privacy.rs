//! Moments accountant for the noisy critic updates.
//!
//! Each noisy critic step contributes a log-moment of at most `q²λ²/σ_n²`.
//! Moments add across steps, and the tail bound converts the total into
//! `ε = min_λ (α(λ) + ln(1/δ)) / λ`. With the quadratic per-step form the
//! minimum has the closed form `ε = 2q√(T ln(1/δ)) / σ_n`, reached at
//! `λ* = σ_n √(ln(1/δ)/T) / q`. Inverting it for `T = n_d` gives the noise
//! calibration `σ_n = 2q√(n_d ln(1/δ)) / ε`.
//!
//! All accounting is done in `f64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DpganError, Result};

/// Largest integer order in the default search grid.
pub const DEFAULT_MAX_LAMBDA: u32 = 64;

/// Target guarantee plus the sampling parameters it is stated for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub q: f64,
    pub n_d: u32,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, q: f64, n_d: u32) -> Result<Self> {
        validate(epsilon, delta, q, n_d)?;
        Ok(Self {
            epsilon,
            delta,
            q,
            n_d,
        })
    }

    /// Noise scale achieving this budget for one outer loop.
    pub fn sigma(&self) -> f64 {
        closed_form_sigma(self.epsilon, self.delta, self.q, self.n_d)
    }

    /// `δ` should be below `1/M`; returns false (and logs) otherwise.
    pub fn delta_is_reasonable(&self, dataset_size: usize) -> bool {
        let ok = self.delta < 1.0 / dataset_size as f64;
        if !ok {
            log::warn!(
                "delta = {} is not below 1/M = {}; the guarantee is weak",
                self.delta,
                1.0 / dataset_size as f64
            );
        }
        ok
    }
}

fn validate(eps: f64, delta: f64, q: f64, n_d: u32) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid(
            "epsilon",
            format!("{eps} must be positive and finite"),
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("{delta} not in (0, 1)")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid("q", format!("{q} not in (0, 1]")));
    }
    if n_d == 0 {
        return Err(invalid("n_d", "must be at least 1"));
    }
    Ok(())
}

fn closed_form_sigma(eps: f64, delta: f64, q: f64, n_d: u32) -> f64 {
    2.0 * q * (f64::from(n_d) * (1.0 / delta).ln()).sqrt() / eps
}

/// Noise scale `σ_n` that makes `n_d` critic steps `(ε, δ)`-private.
pub fn calibrate_sigma(eps: f64, delta: f64, q: f64, n_d: u32) -> Result<f64> {
    validate(eps, delta, q, n_d)?;
    Ok(closed_form_sigma(eps, delta, q, n_d))
}

/// Per-step log-moment bound `q²λ²/σ_n²`.
pub fn step_log_mgf(q: f64, sigma_n: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(invalid("lambda", format!("{lambda} must be positive")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid("q", format!("{q} not in [0, 1]")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if !(sigma_n >= 0.0) {
        return Err(invalid(
            "sigma_n",
            format!("{sigma_n} must be non-negative"),
        ));
    }
    if sigma_n == 0.0 {
        return Err(DpganError::NoNoise);
    }
    Ok(q * q * lambda * lambda / (sigma_n * sigma_n))
}

/// `ε` of the closed-form optimum after `steps` noisy steps.
pub fn closed_form_epsilon(q: f64, sigma_n: f64, steps: u64, delta: f64) -> f64 {
    if steps == 0 || q == 0.0 {
        return 0.0;
    }
    if sigma_n == 0.0 {
        return f64::INFINITY;
    }
    2.0 * q * (steps as f64 * (1.0 / delta).ln()).sqrt() / sigma_n
}

/// Running composition of noisy critic steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsLedger {
    steps_taken: u64,
    q: f64,
    sigma_n: f64,
    lambda_grid: Vec<f64>,
}

impl MomentsLedger {
    pub fn new(q: f64, sigma_n: f64, lambda_grid: Vec<f64>) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(invalid("q", format!("{q} not in (0, 1]")));
        }
        if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
            return Err(invalid(
                "sigma_n",
                format!("{sigma_n} must be finite and non-negative"),
            ));
        }
        if lambda_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(invalid("lambda_grid", "orders must be positive and finite"));
        }
        Ok(Self {
            steps_taken: 0,
            q,
            sigma_n,
            lambda_grid,
        })
    }

    /// Grid `{1, …, 64}`.
    pub fn with_default_grid(q: f64, sigma_n: f64) -> Result<Self> {
        Self::new(
            q,
            sigma_n,
            (1..=DEFAULT_MAX_LAMBDA).map(f64::from).collect(),
        )
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
    }

    pub fn lambda_grid(&self) -> &[f64] {
        &self.lambda_grid
    }

    pub fn record_step(&mut self) {
        self.steps_taken += 1;
    }

    /// Functional form of [`record_step`](Self::record_step).
    pub fn recorded(mut self) -> Self {
        self.record_step();
        self
    }

    /// Accumulated moment `α(λ) = T · q²λ²/σ_n²`.
    pub fn log_moment(&self, lambda: f64) -> Result<f64> {
        if self.steps_taken == 0 {
            return Ok(0.0);
        }
        Ok(self.steps_taken as f64 * step_log_mgf(self.q, self.sigma_n, lambda)?)
    }

    /// Analytic minimiser `λ*` of the tail bound, if defined.
    pub fn optimal_lambda(&self, delta: f64) -> Option<f64> {
        if self.steps_taken == 0 || self.sigma_n == 0.0 {
            return None;
        }
        let l = self.sigma_n * ((1.0 / delta).ln() / self.steps_taken as f64).sqrt() / self.q;
        (l > 0.0 && l.is_finite()).then_some(l)
    }

    /// Smallest `ε` over the grid (plus `λ*`) for which the tail bound gives `δ`.
    pub fn get_epsilon(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid("delta", format!("{delta} not in (0, 1)")));
        }
        if self.lambda_grid.is_empty() {
            return Err(DpganError::Config("empty lambda grid".into()));
        }
        if self.steps_taken == 0 {
            return Ok(0.0);
        }
        if self.sigma_n == 0.0 {
            return Ok(f64::INFINITY);
        }
        let log_inv_delta = (1.0 / delta).ln();
        let mut best = f64::INFINITY;
        for &lambda in self
            .lambda_grid
            .iter()
            .chain(self.optimal_lambda(delta).iter())
        {
            let eps = (self.log_moment(lambda)? + log_inv_delta) / lambda;
            best = best.min(eps);
        }
        Ok(best)
    }

    /// `ε` of a single outer loop of `n_d` steps at this ledger's `(q, σ_n)`.
    pub fn per_outer_loop_epsilon(&self, n_d: u32, delta: f64) -> Result<f64> {
        let probe = Self {
            steps_taken: u64::from(n_d),
            ..self.clone()
        };
        probe.get_epsilon(delta)
    }
}

/// Log density ratio `ln p(o) − ln p′(o)` at one outcome.
pub fn privacy_loss(log_p_at_o: f64, log_q_at_o: f64) -> Result<f64> {
    if log_p_at_o.is_nan()
        || log_q_at_o.is_nan()
        || log_p_at_o == f64::INFINITY
        || log_q_at_o == f64::INFINITY
    {
        return Err(invalid("log density", "must be finite or -inf"));
    }
    if log_q_at_o == f64::NEG_INFINITY {
        if log_p_at_o == f64::NEG_INFINITY {
            return Err(invalid(
                "log density",
                "outcome has zero density under both",
            ));
        }
        return Err(DpganError::SupportViolation);
    }
    Ok(log_p_at_o - log_q_at_o)
}

/// Histogram settings for [`empirical_dp_audit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditBins {
    pub count: usize,
    /// Bins whose larger empirical mass is below this fraction are ignored.
    pub mass_floor: f64,
}

impl Default for AuditBins {
    fn default() -> Self {
        Self {
            count: 40,
            mass_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditResult {
    /// Largest `|ln(p̂_D / p̂_D′)|` over retained bins; `+∞` when some retained
    /// bin is populated under one dataset only.
    pub max_log_ratio: f64,
    /// Delta-method standard error of the log-ratio at the maximising bin.
    pub standard_error: f64,
    pub bin: usize,
    pub counts_d: Vec<u64>,
    pub counts_d_prime: Vec<u64>,
}

impl AuditResult {
    pub fn violates(&self, epsilon: f64, n_se: f64) -> bool {
        self.max_log_ratio.is_infinite()
            || !(self.max_log_ratio <= epsilon + n_se * self.standard_error)
    }
}

/// Monte Carlo check of the DP inequality for a scalar-valued mechanism.
///
/// `mechanism(data, rng)` must draw all of its randomness from `rng`; trial
/// `t` on `D` and on `D′` uses independent streams derived from `seed`.
pub fn empirical_dp_audit<D, F>(
    mut mechanism: F,
    d: &D,
    d_prime: &D,
    trials: usize,
    bins: AuditBins,
    seed: u64,
) -> Result<AuditResult>
where
    F: FnMut(&D, &mut ChaCha8Rng) -> f64,
{
    if trials == 0 {
        return Err(invalid("trials", "must be positive"));
    }
    if bins.count == 0 {
        return Err(invalid("bins", "need at least one bin"));
    }
    if trials < 1_000 {
        log::warn!("{trials} audit trials: the estimate is unreliable below 1000");
    }
    let mut rng_d = ChaCha8Rng::seed_from_u64(seed);
    rng_d.set_stream(0);
    let mut rng_dp = ChaCha8Rng::seed_from_u64(seed);
    rng_dp.set_stream(1);
    let mut out_d = Vec::with_capacity(trials);
    let mut out_dp = Vec::with_capacity(trials);
    for _ in 0..trials {
        out_d.push(mechanism(d, &mut rng_d));
        out_dp.push(mechanism(d_prime, &mut rng_dp));
    }
    if out_d.iter().chain(&out_dp).any(|v| !v.is_finite()) {
        return Err(invalid("mechanism", "produced a non-finite output"));
    }
    let lo = out_d
        .iter()
        .chain(&out_dp)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = out_d
        .iter()
        .chain(&out_dp)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins.count as f64;
    let bin_of = |v: f64| -> usize {
        if width == 0.0 {
            0
        } else {
            (((v - lo) / width) as usize).min(bins.count - 1)
        }
    };
    let mut counts_d = vec![0u64; bins.count];
    let mut counts_dp = vec![0u64; bins.count];
    for &v in &out_d {
        counts_d[bin_of(v)] += 1;
    }
    for &v in &out_dp {
        counts_dp[bin_of(v)] += 1;
    }

    let n = trials as f64;
    let mut best = (0.0_f64, 0.0_f64, 0usize);
    for (i, (&a, &b)) in counts_d.iter().zip(&counts_dp).enumerate() {
        let (pa, pb) = (a as f64 / n, b as f64 / n);
        if pa.max(pb) < bins.mass_floor {
            continue;
        }
        let (ratio, se) = if a == 0 || b == 0 {
            (f64::INFINITY, f64::INFINITY)
        } else {
            (
                (pa / pb).ln().abs(),
                ((1.0 - pa) / (n * pa) + (1.0 - pb) / (n * pb)).sqrt(),
            )
        };
        if ratio > best.0 {
            best = (ratio, se, i);
        }
    }
    Ok(AuditResult {
        max_log_ratio: best.0,
        standard_error: best.1,
        bin: best.2,
        counts_d,
        counts_d_prime: counts_dp,
    })
}
