use serde::{Deserialize, Serialize};

use crate::bounds::{check_clip_precondition, critic_cg, ActivationBounds, Precondition};
use crate::error::{invalid, DpganError, Result};
use crate::tensor::{NetworkSpec, DEFAULT_DECAY, DEFAULT_STABILIZER};

/// Training objective for the critic/generator pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// `E f_w(x) − E f_w(G(z))` with a clipped critic.
    #[default]
    Wasserstein,
    /// The original log-loss game with `D = sigmoid(f_w)`. No privacy claim
    /// is derived for it; kept for comparison runs.
    Minimax,
}

/// Hyperparameters of one private training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Critic learning rate.
    pub alpha_d: f64,
    /// Generator learning rate.
    pub alpha_g: f64,
    /// Critic parameters are clipped to `[−c_p, c_p]` after every update.
    pub c_p: f64,
    /// `m`.
    pub batch_size: usize,
    /// Critic iterations per generator iteration.
    pub n_d: u32,
    /// Generator iterations.
    pub n_g: u64,
    /// Noise multiplier; the injected noise has std `sigma_n · c_g`.
    pub sigma_n: f64,
    /// Per-example gradient bound scaling the noise.
    pub c_g: f64,
    pub seed: u64,
    pub latent_dim: usize,
    /// `δ` used when reporting `ε`.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_decay")]
    pub rmsprop_decay: f64,
    #[serde(default = "default_stabilizer")]
    pub rmsprop_stabilizer: f64,
    /// Log a Wasserstein estimate every this many generator iterations (0 = never).
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Batch size for the logged estimate; 0 means `batch_size`.
    #[serde(default)]
    pub eval_batch: usize,
    /// L2 weight penalty on both networks. When nonzero, the user must
    /// enlarge `c_g` to cover the extra gradient term.
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub objective: Objective,
    /// Abort if a per-example critic gradient exceeds `c_g`.
    #[serde(default)]
    pub check_grad_bound: bool,
}

fn default_delta() -> f64 {
    1e-5
}
fn default_decay() -> f64 {
    DEFAULT_DECAY
}
fn default_stabilizer() -> f64 {
    DEFAULT_STABILIZER
}
fn default_log_every() -> u64 {
    100
}

impl TrainConfig {
    /// Sampling ratio `q = m / M`.
    pub fn q(&self, dataset_size: usize) -> f64 {
        self.batch_size as f64 / dataset_size as f64
    }

    pub fn eval_batch_size(&self) -> usize {
        if self.eval_batch == 0 {
            self.batch_size
        } else {
            self.eval_batch
        }
    }

    /// Checks every field against the data and both architectures.
    pub fn validate(
        &self,
        dataset_size: usize,
        arch_d: &NetworkSpec,
        arch_g: &NetworkSpec,
    ) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("{v} must be positive and finite")))
            }
        };
        positive("alpha_d", self.alpha_d)?;
        positive("alpha_g", self.alpha_g)?;
        positive("c_p", self.c_p)?;
        positive("c_g", self.c_g)?;
        if !(self.sigma_n >= 0.0 && self.sigma_n.is_finite()) {
            return Err(invalid(
                "sigma_n",
                format!("{} must be finite and non-negative", self.sigma_n),
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", format!("{} not in (0, 1)", self.delta)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(invalid("l2", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if self.n_d == 0 {
            return Err(invalid("n_d", "must be at least 1"));
        }
        if self.latent_dim == 0 {
            return Err(invalid("latent_dim", "must be at least 1"));
        }
        if dataset_size == 0 || self.batch_size > dataset_size {
            return Err(invalid(
                "batch_size",
                format!(
                    "q = {}/{} must lie in (0, 1]",
                    self.batch_size, dataset_size
                ),
            ));
        }
        arch_d.validate_critic()?;
        arch_g.validate_generator()?;
        if arch_g.input_width() != self.latent_dim {
            return Err(DpganError::DimensionMismatch {
                context: "generator input vs latent_dim",
                expected: self.latent_dim,
                actual: arch_g.input_width(),
            });
        }
        if arch_g.output_width() != arch_d.input_width() {
            return Err(DpganError::DimensionMismatch {
                context: "generator output vs critic input",
                expected: arch_d.input_width(),
                actual: arch_g.output_width(),
            });
        }
        let bounds = ActivationBounds::for_network(arch_d);
        if let Precondition::Fail { layer, limit } =
            check_clip_precondition(arch_d, self.c_p, &bounds)
        {
            return Err(DpganError::ClipPrecondition {
                layer,
                c_p: self.c_p,
                limit,
            });
        }
        Ok(())
    }
}

/// Gradient bound for `arch_d` when real records have norm at most `b_x` and
/// fake records come from a sigmoid output layer of the same width.
pub fn default_cg(arch_d: &NetworkSpec, c_p: f64, b_x: f64) -> Result<f64> {
    let fake_bound = (arch_d.input_width() as f64).sqrt();
    critic_cg(arch_d, c_p, Some(b_x.max(fake_bound)))
}
