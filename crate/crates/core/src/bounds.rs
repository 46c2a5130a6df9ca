//! Analytical bound on the per-example critic gradient norm.
//!
//! With every critic weight clipped to `[−c_p, c_p]`, activations satisfying
//! `|σ| ≤ B_σ` and `|σ′| ≤ B_σ′`, and `c_p ≤ 1/(m_l B_σ′)` on every hidden
//! layer, the per-example gradient of `f_w(x) − f_w(G(z))` is bounded by
//!
//! ```text
//! c_g = 2 c_p B_σ B_σ′² Σ_{k=1}^{H−1} m_k m_{k+1}
//! ```
//!
//! The sum runs over the weight matrices `W⁽²⁾ … W⁽ᴴ⁾`; biases are not part
//! of the closed form (see [`bias_augmented_cg`]).
//!
//! ReLU-family layers have no finite `B_σ`; for them an effective bound is
//! obtained by interval propagation from the input bound through clipped
//! weights ([`effective_b_sigma`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DpganError, Result};
use crate::tensor::{backprop_into, forward, GradientSet, NetworkSpec, ParameterSet};

/// `(B_σ, B_σ′)` for a network; `b_sigma` is `None` when some hidden layer
/// is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationBounds {
    pub b_sigma: Option<f64>,
    pub b_sigma_prime: f64,
}

impl ActivationBounds {
    /// `B_σ` is taken over the hidden layers (their outputs feed `W⁽²⁾ … W⁽ᴴ⁾`),
    /// `B_σ′` over every layer.
    pub fn for_network(spec: &NetworkSpec) -> Self {
        let acts = spec.activations();
        let hidden = &acts[..acts.len() - 1];
        let mut b_sigma = Some(0.0_f64);
        for a in hidden {
            b_sigma = match (b_sigma, a.bounds().0) {
                (Some(m), Some(b)) => Some(m.max(b)),
                _ => None,
            };
        }
        // A network without hidden layers never uses B_σ; report the trivial bound.
        if hidden.is_empty() {
            b_sigma = Some(1.0);
        }
        let b_sigma_prime = acts.iter().map(|a| a.bounds().1).fold(0.0, f64::max);
        Self {
            b_sigma,
            b_sigma_prime,
        }
    }
}

/// Maximum Euclidean norm over the records a critic can see.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataBound {
    pub b_x: f64,
}

/// Outcome of [`check_clip_precondition`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Precondition {
    Pass,
    /// First hidden layer (1-based) whose width makes `c_p` too large.
    Fail {
        layer: usize,
        limit: f64,
    },
}

impl Precondition {
    pub fn passed(&self) -> bool {
        matches!(self, Precondition::Pass)
    }
}

/// Checks `c_p ≤ 1/(m_l B_σ′)` for every hidden layer `l = 1 … H−1`.
pub fn check_clip_precondition(
    spec: &NetworkSpec,
    c_p: f64,
    bounds: &ActivationBounds,
) -> Precondition {
    let widths = spec.widths();
    for (layer, &m) in widths.iter().enumerate().take(spec.depth()).skip(1) {
        let limit = 1.0 / (m as f64 * bounds.b_sigma_prime);
        if c_p > limit {
            return Precondition::Fail { layer, limit };
        }
    }
    Precondition::Pass
}

/// `B_σ` to use in [`compute_cg`]. Bounded activations use their table value;
/// unbounded ones are bounded by propagating `input_bound` through weights
/// clipped at `c_p`: `|z⁽ˡ⁾_i| ≤ m_{l−1} c_p b_{l−1} (+ c_p with biases)`.
///
/// `input_bound` must cover both real records and generator samples.
pub fn effective_b_sigma(spec: &NetworkSpec, c_p: f64, input_bound: Option<f64>) -> Result<f64> {
    if let Some(b) = ActivationBounds::for_network(spec).b_sigma {
        return Ok(b);
    }
    let mut bound = input_bound.ok_or(DpganError::UnboundedActivation)?;
    if !(bound >= 0.0 && bound.is_finite()) {
        return Err(invalid(
            "input_bound",
            format!("{bound} must be finite and non-negative"),
        ));
    }
    let widths = spec.widths();
    let acts = spec.activations();
    let mut hidden_max = 0.0_f64;
    for l in 1..spec.depth() {
        let z = widths[l - 1] as f64 * c_p * bound + if spec.has_bias() { c_p } else { 0.0 };
        bound = acts[l - 1].output_bound(z);
        hidden_max = hidden_max.max(bound);
    }
    Ok(hidden_max)
}

/// Closed-form gradient bound `2 c_p B_σ B_σ′² Σ_{k=1}^{H−1} m_k m_{k+1}`.
pub fn compute_cg(
    spec: &NetworkSpec,
    c_p: f64,
    bounds: &ActivationBounds,
    effective_b_sigma: f64,
) -> Result<f64> {
    if !(c_p >= 0.0 && c_p.is_finite()) {
        return Err(invalid(
            "c_p",
            format!("{c_p} must be finite and non-negative"),
        ));
    }
    if !effective_b_sigma.is_finite() {
        return Err(DpganError::UnboundedActivation);
    }
    if let Precondition::Fail { layer, limit } = check_clip_precondition(spec, c_p, bounds) {
        return Err(DpganError::ClipPrecondition { layer, c_p, limit });
    }
    Ok(2.0 * c_p * effective_b_sigma * bounds.b_sigma_prime.powi(2) * width_products(spec))
}

/// `Σ_{k=1}^{H−1} m_k m_{k+1}`.
pub fn width_products(spec: &NetworkSpec) -> f64 {
    let w = spec.widths();
    (1..spec.depth()).map(|k| (w[k] * w[k + 1]) as f64).sum()
}

/// `c_g` plus a bias term `2 c_p B_σ B_σ′ Σ_{k=1}^{H} m_k`, for critics that
/// train biases.
pub fn bias_augmented_cg(
    spec: &NetworkSpec,
    c_p: f64,
    bounds: &ActivationBounds,
    effective_b_sigma: f64,
) -> Result<f64> {
    let base = compute_cg(spec, c_p, bounds, effective_b_sigma)?;
    let widths: f64 = spec.widths()[1..].iter().map(|&m| m as f64).sum();
    Ok(base + 2.0 * c_p * effective_b_sigma * bounds.b_sigma_prime * widths)
}

/// Convenience: `c_g` for a critic, computing the activation bounds and the
/// effective `B_σ` from `input_bound`.
pub fn critic_cg(spec: &NetworkSpec, c_p: f64, input_bound: Option<f64>) -> Result<f64> {
    let bounds = ActivationBounds::for_network(spec);
    let b = effective_b_sigma(spec, c_p, input_bound)?;
    if spec.has_bias() {
        bias_augmented_cg(spec, c_p, &bounds, b)
    } else {
        compute_cg(spec, c_p, &bounds, b)
    }
}

const TRIALS_PER_CHUNK: usize = 256;

/// Largest per-example `‖∇_w (f_w(x) − f_w(x̃))‖` over `n_trials` random draws.
///
/// Each trial draws critic parameters uniformly from `[−c_p, c_p]`, a real
/// record uniformly from the ball of radius `B_x`, and a fake sample from the
/// range of a sigmoid output layer (each coordinate uniform on `[0, 1]`).
/// Trials run in parallel chunks with seeds drawn from `rng`; the result does
/// not depend on the number of worker threads.
pub fn empirical_grad_bound<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    c_p: f64,
    n_trials: usize,
    data_bound: DataBound,
    rng: &mut R,
) -> Result<f64> {
    spec.validate_critic()?;
    let base: u64 = rng.random();
    let chunks = n_trials.div_ceil(TRIALS_PER_CHUNK);
    let maxima: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(base);
            rng.set_stream(chunk as u64);
            let n = TRIALS_PER_CHUNK.min(n_trials - chunk * TRIALS_PER_CHUNK);
            let mut worst = 0.0_f64;
            for _ in 0..n {
                worst = worst.max(one_trial(spec, c_p, data_bound.b_x, &mut rng));
            }
            worst
        })
        .collect();
    Ok(maxima.into_iter().fold(0.0, f64::max))
}

fn one_trial(spec: &NetworkSpec, c_p: f64, b_x: f64, rng: &mut ChaCha8Rng) -> f64 {
    let mut params = ParameterSet::<f64>::uniform(spec, c_p, rng);
    for b in &mut params.biases {
        for v in b.iter_mut() {
            *v = rng.random_range(-c_p..=c_p);
        }
    }
    let d = spec.input_width();
    let x = sample_ball(d, b_x, rng);
    let fake: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    per_example_norm(spec, &params, &x, &fake)
}

fn per_example_norm(
    spec: &NetworkSpec,
    params: &ParameterSet<f64>,
    x: &[f64],
    fake: &[f64],
) -> f64 {
    let (_, tx) = forward(spec, params, x).expect("shapes agree");
    let (_, tf) = forward(spec, params, fake).expect("shapes agree");
    let mut g = GradientSet::zeros(spec);
    {
        let (w, b) = g.parts_mut();
        backprop_into(spec, params, &tx, &[1.0], 1.0, w, b, false);
        backprop_into(spec, params, &tf, &[1.0], -1.0, w, b, false);
    }
    g.finish();
    g.norm()
}

/// Uniform sample from the closed Euclidean ball of radius `r` in `d` dimensions.
pub(crate) fn sample_ball<R: Rng + ?Sized>(d: usize, r: f64, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let radius = r * rng.random::<f64>().powf(1.0 / d as f64);
    if norm > 0.0 {
        for a in &mut v {
            *a *= radius / norm;
        }
    }
    v
}
