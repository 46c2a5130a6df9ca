//! The individual steps of the private training loop, as free functions.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::config::Objective;
use crate::error::{DpganError, Result};
use crate::tensor::{
    backprop_into, clip_in_place, forward, input_gradient, predict, sigmoid, Direction,
    GradientSet, NetworkSpec, ParameterSet, RmspropState,
};
use crate::Scalar;

/// A network architecture together with its parameters.
#[derive(Debug, Clone, Copy)]
pub struct Net<'a, T> {
    pub spec: &'a NetworkSpec,
    pub params: &'a ParameterSet<T>,
}

impl<'a, T: Scalar> Net<'a, T> {
    pub fn new(spec: &'a NetworkSpec, params: &'a ParameterSet<T>) -> Self {
        Self { spec, params }
    }

    pub fn eval(&self, input: &[T]) -> Result<Vec<T>> {
        predict(self.spec, self.params, input)
    }

    /// Scalar output of a critic.
    pub fn score(&self, input: &[T]) -> Result<T> {
        Ok(self.eval(input)?[0])
    }
}

/// Latent prior: each coordinate uniform on `[−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentSampler {
    pub dim: usize,
}

impl LatentSampler {
    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        (0..self.dim)
            .map(|_| T::of(rng.random_range(-1.0..=1.0)))
            .collect()
    }

    pub fn sample_batch<T: Scalar, R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<Vec<T>> {
        (0..m).map(|_| self.sample(rng)).collect()
    }
}

/// Source of the Gaussian vector added to the summed critic gradient.
pub trait NoiseSource<T> {
    /// `len` independent draws from `N(0, std²)`.
    fn gaussian(&mut self, len: usize, std: f64) -> Vec<T>;
}

impl<T: Scalar, R: Rng> NoiseSource<T> for R {
    fn gaussian(&mut self, len: usize, std: f64) -> Vec<T> {
        (0..len)
            .map(|_| {
                let e: f64 = StandardNormal.sample(self);
                T::of(std * e)
            })
            .collect()
    }
}

/// Replays a fixed noise vector regardless of the requested std. For tests
/// that need to trace the update by hand.
#[derive(Debug, Clone)]
pub struct FixedNoise<T>(pub Vec<T>);

impl<T: Scalar> NoiseSource<T> for FixedNoise<T> {
    fn gaussian(&mut self, len: usize, _std: f64) -> Vec<T> {
        assert_eq!(len, self.0.len(), "fixed noise has the wrong length");
        self.0.clone()
    }
}

/// Output-layer seeds `(∂ℓ/∂f(x), ∂ℓ/∂f(x̃))` of the per-example critic objective.
fn critic_seeds<T: Scalar>(objective: Objective, f_real: T, f_fake: T) -> (T, T) {
    match objective {
        Objective::Wasserstein => (T::one(), -T::one()),
        // ∇ [log σ(f(x)) + log(1 − σ(f(x̃)))]
        Objective::Minimax => (T::one() - sigmoid(f_real), -sigmoid(f_fake)),
    }
}

/// `∇_w [f_w(x) − f_w(x̃)]` for a real record `x` and a fake sample `x̃`.
pub fn critic_grad_pair<T: Scalar>(
    critic: Net<'_, T>,
    x: &[T],
    fake: &[T],
    objective: Objective,
) -> Result<GradientSet<T>> {
    let (fx, tx) = forward(critic.spec, critic.params, x)?;
    let (ff, tf) = forward(critic.spec, critic.params, fake)?;
    let (sx, sf) = critic_seeds(objective, fx[0], ff[0]);
    let mut g = GradientSet::zeros(critic.spec);
    {
        let (w, b) = g.parts_mut();
        backprop_into(
            critic.spec,
            critic.params,
            &tx,
            &[T::one()],
            sx,
            w,
            b,
            false,
        );
        backprop_into(
            critic.spec,
            critic.params,
            &tf,
            &[T::one()],
            sf,
            w,
            b,
            false,
        );
    }
    g.finish();
    Ok(g)
}

/// Per-example critic gradient `g_w(x, z) = ∇_w [f_w(x) − f_w(g_θ(z))]`.
/// Generator parameters are constants here.
pub fn per_example_critic_grad<T: Scalar>(
    critic: Net<'_, T>,
    generator: Net<'_, T>,
    x: &[T],
    z: &[T],
    objective: Objective,
) -> Result<GradientSet<T>> {
    let fake = generator.eval(z)?;
    critic_grad_pair(critic, x, &fake, objective)
}

/// `ḡ = (Σ_i g_i + ν) / m` with `ν ~ N(0, σ_n² c_g² I)` drawn once per batch.
///
/// The sum runs in index order, so the result does not depend on how the
/// per-example gradients were computed.
pub fn noisy_batch_grad<T: Scalar, N: NoiseSource<T> + ?Sized>(
    per_example: &[GradientSet<T>],
    sigma_n: f64,
    c_g: f64,
    noise: &mut N,
) -> Result<GradientSet<T>> {
    let first = per_example.first().ok_or(DpganError::EmptyBatch)?;
    let len = first.len();
    let mut sum = vec![T::zero(); len];
    for g in per_example {
        if g.len() != len {
            return Err(DpganError::DimensionMismatch {
                context: "per-example gradients",
                expected: len,
                actual: g.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(g.values()) {
            *s = *s + *v;
        }
    }
    let std = sigma_n * c_g;
    if std > 0.0 {
        let nu = noise.gaussian(len, std);
        for (s, n) in sum.iter_mut().zip(nu) {
            *s = *s + n;
        }
    }
    let m = T::of(per_example.len() as f64);
    for s in &mut sum {
        *s = *s / m;
    }
    GradientSet::from_flat_like(first, &sum)
}

/// Per-example gradients for a batch, computed in parallel and returned in
/// batch order.
pub fn batch_critic_grads<T: Scalar>(
    critic: Net<'_, T>,
    generator: Net<'_, T>,
    xs: &[&[T]],
    zs: &[Vec<T>],
    objective: Objective,
) -> Result<Vec<GradientSet<T>>> {
    xs.par_iter()
        .zip(zs.par_iter())
        .map(|(x, z)| per_example_critic_grad(critic, generator, x, z, objective))
        .collect()
}

/// Critic update: RMSProp ascent on `ḡ`, then clip to `[−c_p, c_p]`.
pub fn critic_update<T: Scalar>(
    params: &mut ParameterSet<T>,
    opt: &mut RmspropState<T>,
    noisy_grad: &GradientSet<T>,
    alpha_d: f64,
    c_p: f64,
) -> Result<()> {
    opt.apply(params, noisy_grad, alpha_d, Direction::Ascent)?;
    clip_in_place(params, c_p);
    Ok(())
}

/// Generator gradient `g_θ = −∇_θ (1/m) Σ_i f_w(g_θ(z_i))` (Wasserstein) or
/// `∇_θ (1/m) Σ_i log(1 − σ(f_w(g_θ(z_i))))` (minimax). The critic is frozen.
pub fn generator_gradient<T: Scalar>(
    critic: Net<'_, T>,
    generator: Net<'_, T>,
    zs: &[Vec<T>],
    objective: Objective,
) -> Result<GradientSet<T>> {
    if zs.is_empty() {
        return Err(DpganError::EmptyBatch);
    }
    let parts: Vec<GradientSet<T>> = zs
        .par_iter()
        .map(|z| -> Result<GradientSet<T>> {
            let (fake, tg) = forward(generator.spec, generator.params, z)?;
            let (f, tc) = forward(critic.spec, critic.params, &fake)?;
            let seed = match objective {
                Objective::Wasserstein => -T::one(),
                Objective::Minimax => -sigmoid(f[0]),
            };
            let dfake = input_gradient(critic.spec, critic.params, &tc, &[seed])?;
            let mut g = GradientSet::zeros(generator.spec);
            {
                let (w, b) = g.parts_mut();
                backprop_into(
                    generator.spec,
                    generator.params,
                    &tg,
                    &dfake,
                    T::one(),
                    w,
                    b,
                    false,
                );
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let mut total = GradientSet::zeros(generator.spec);
    for p in &parts {
        total.add_scaled(p, T::one());
    }
    total.scale(T::one() / T::of(zs.len() as f64));
    Ok(total)
}

/// `mean f_w(real) − mean f_w(fake)`, no noise.
pub fn wasserstein_estimate<T: Scalar>(
    critic: Net<'_, T>,
    real: &[&[T]],
    fake: &[Vec<T>],
) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(DpganError::EmptyBatch);
    }
    let mut r = 0.0;
    for x in real {
        r += critic.score(x)?.to_f64_lossy();
    }
    let mut f = 0.0;
    for x in fake {
        f += critic.score(x)?.to_f64_lossy();
    }
    Ok(r / real.len() as f64 - f / fake.len() as f64)
}
