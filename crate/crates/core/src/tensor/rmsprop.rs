use serde::{Deserialize, Serialize};

use super::network::{GradientSet, ParameterSet};
use crate::error::{invalid, DpganError, Result};
use crate::Scalar;

pub const DEFAULT_DECAY: f64 = 0.9;
pub const DEFAULT_STABILIZER: f64 = 1e-8;

/// Sign of an update: the critic ascends its objective, the generator descends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Ascent,
    Descent,
}

/// Per-parameter running average of squared gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmspropState<T> {
    running_sq_avg: Vec<T>,
    decay: f64,
    stabilizer: f64,
}

impl<T: Scalar> RmspropState<T> {
    pub fn new(len: usize, decay: f64, stabilizer: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(invalid("rmsprop decay", format!("{decay} not in (0, 1)")));
        }
        if !(stabilizer > 0.0 && stabilizer.is_finite()) {
            return Err(invalid(
                "rmsprop stabilizer",
                format!("{stabilizer} must be positive"),
            ));
        }
        Ok(Self {
            running_sq_avg: vec![T::zero(); len],
            decay,
            stabilizer,
        })
    }

    pub fn with_defaults(len: usize) -> Self {
        Self::new(len, DEFAULT_DECAY, DEFAULT_STABILIZER).expect("defaults are valid")
    }

    pub fn running_sq_avg(&self) -> &[T] {
        &self.running_sq_avg
    }

    /// Replaces the accumulator; entries must be non-negative.
    pub fn with_running_sq_avg(mut self, avg: Vec<T>) -> Result<Self> {
        if avg.len() != self.running_sq_avg.len() {
            return Err(DpganError::DimensionMismatch {
                context: "RmspropState accumulator",
                expected: self.running_sq_avg.len(),
                actual: avg.len(),
            });
        }
        if avg.iter().any(|v| !(*v >= T::zero())) {
            return Err(invalid("running_sq_avg", "entries must be non-negative"));
        }
        self.running_sq_avg = avg;
        Ok(self)
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn stabilizer(&self) -> f64 {
        self.stabilizer
    }

    /// In-place update: `v ← ρv + (1−ρ)g²`, `p ← p ± lr·g/√(v+ε)`.
    pub fn apply(
        &mut self,
        params: &mut ParameterSet<T>,
        grads: &GradientSet<T>,
        lr: f64,
        direction: Direction,
    ) -> Result<()> {
        if params.len() != self.running_sq_avg.len() || grads.len() != self.running_sq_avg.len() {
            return Err(DpganError::DimensionMismatch {
                context: "rmsprop step",
                expected: self.running_sq_avg.len(),
                actual: if params.len() != self.running_sq_avg.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        let rho = T::of(self.decay);
        let one_minus = T::of(1.0 - self.decay);
        let eps = T::of(self.stabilizer);
        let lr = match direction {
            Direction::Ascent => T::of(lr),
            Direction::Descent => -T::of(lr),
        };
        for ((p, g), v) in params
            .values_mut()
            .zip(grads.values())
            .zip(self.running_sq_avg.iter_mut())
        {
            *v = rho * *v + one_minus * *g * *g;
            *p = *p + lr * *g / (*v + eps).sqrt();
        }
        Ok(())
    }
}

/// Functional form of one RMSProp update.
pub fn rmsprop_step<T: Scalar>(
    params: &ParameterSet<T>,
    grads: &GradientSet<T>,
    state: &RmspropState<T>,
    lr: f64,
    direction: Direction,
) -> Result<(ParameterSet<T>, RmspropState<T>)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.apply(&mut p, grads, lr, direction)?;
    Ok((p, s))
}

/// Clamps every weight and bias into `[−c_p, c_p]`.
pub fn clip_weights<T: Scalar>(params: &ParameterSet<T>, c_p: f64) -> ParameterSet<T> {
    let mut p = params.clone();
    clip_in_place(&mut p, c_p);
    p
}

pub fn clip_in_place<T: Scalar>(params: &mut ParameterSet<T>, c_p: f64) {
    let hi = T::of(c_p);
    let lo = -hi;
    for v in params.values_mut() {
        *v = lo.max(hi.min(*v));
    }
}
