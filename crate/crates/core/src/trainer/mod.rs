//! Private WGAN training loop.
//!
//! One generator iteration runs `n_d` critic iterations. Each critic
//! iteration samples `m` latent points and `m` records, computes per-example
//! critic gradients, adds one Gaussian draw of std `σ_n c_g` to their sum,
//! divides by `m`, takes an RMSProp ascent step and clips the critic to
//! `[−c_p, c_p]`. The generator then takes one RMSProp descent step through
//! the frozen critic. Only critic iterations touch the data, so only they are
//! charged to the privacy ledger.

mod checkpoint;
mod config;
mod ops;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{default_cg, Objective, TrainConfig};
pub use ops::{
    batch_critic_grads, critic_grad_pair, critic_update, generator_gradient, noisy_batch_grad,
    per_example_critic_grad, wasserstein_estimate, FixedNoise, LatentSampler, Net, NoiseSource,
};

use crate::data::{RecordKind, RecordMatrix};
use crate::error::{DpganError, Result};
use crate::privacy::MomentsLedger;
use crate::tensor::{Direction, NetworkSpec, ParameterSet, RmspropState};
use crate::Scalar;

/// Uniform batches without replacement within an epoch; the index order is
/// reshuffled at every epoch boundary. A tail shorter than `m` is skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl BatchSampler {
    pub fn new<R: Rng + ?Sized>(dataset_size: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..dataset_size).collect();
        order.shuffle(rng);
        Self {
            order,
            cursor: 0,
            epoch: 0,
        }
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, m: usize, rng: &mut R) -> Vec<usize> {
        if self.cursor + m > self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let batch = self.order[self.cursor..self.cursor + m].to_vec();
        self.cursor += m;
        batch
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

/// Position of a ChaCha stream, enough to restore it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPosition {
    pub stream: u64,
    /// `u128` word position as decimal text.
    pub word_pos: String,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

fn save_pos(r: &ChaCha8Rng) -> RngPosition {
    RngPosition {
        stream: r.get_stream(),
        word_pos: r.get_word_pos().to_string(),
    }
}

fn restore(seed: u64, pos: &RngPosition) -> Result<ChaCha8Rng> {
    let mut r = stream(seed, pos.stream);
    let wp: u128 = pos
        .word_pos
        .parse()
        .map_err(|_| DpganError::Checkpoint(format!("bad rng position `{}`", pos.word_pos)))?;
    r.set_word_pos(wp);
    Ok(r)
}

/// Independent random streams, one per consumer, so that e.g. the logging
/// cadence or the noise level cannot shift the data order.
#[derive(Debug, Clone)]
struct Streams {
    batches: ChaCha8Rng,
    critic_latent: ChaCha8Rng,
    noise: ChaCha8Rng,
    generator_latent: ChaCha8Rng,
    eval: ChaCha8Rng,
}

const STREAM_INIT: u64 = 0;
const STREAM_BATCHES: u64 = 1;
const STREAM_CRITIC_LATENT: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_GENERATOR_LATENT: u64 = 4;
const STREAM_EVAL: u64 = 5;

impl Streams {
    fn fresh(seed: u64) -> Self {
        Self {
            batches: stream(seed, STREAM_BATCHES),
            critic_latent: stream(seed, STREAM_CRITIC_LATENT),
            noise: stream(seed, STREAM_NOISE),
            generator_latent: stream(seed, STREAM_GENERATOR_LATENT),
            eval: stream(seed, STREAM_EVAL),
        }
    }

    fn positions(&self) -> Vec<RngPosition> {
        [
            &self.batches,
            &self.critic_latent,
            &self.noise,
            &self.generator_latent,
            &self.eval,
        ]
        .into_iter()
        .map(save_pos)
        .collect()
    }

    fn restore(seed: u64, pos: &[RngPosition]) -> Result<Self> {
        if pos.len() != 5 {
            return Err(DpganError::Checkpoint("expected 5 rng streams".into()));
        }
        Ok(Self {
            batches: restore(seed, &pos[0])?,
            critic_latent: restore(seed, &pos[1])?,
            noise: restore(seed, &pos[2])?,
            generator_latent: restore(seed, &pos[3])?,
            eval: restore(seed, &pos[4])?,
        })
    }
}

/// One logged point of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub generator_iteration: u64,
    pub wasserstein_estimate: f64,
    /// Cumulative `ε` over all critic steps so far.
    pub epsilon_spent: f64,
    /// Seconds since the run (or resume) started. Not persisted.
    #[serde(skip)]
    pub wallclock_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricLog {
    pub rows: Vec<MetricRow>,
}

impl MetricLog {
    pub const CSV_HEADER: &'static str = "generator_iteration,wasserstein_estimate,epsilon_spent";

    pub fn push(&mut self, row: MetricRow) {
        debug_assert!(self
            .rows
            .last()
            .is_none_or(|r| r.generator_iteration < row.generator_iteration));
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.wasserstein_estimate).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{}\n",
                r.generator_iteration, r.wasserstein_estimate, r.epsilon_spent
            ));
        }
        s
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub critic: ParameterSet<T>,
    pub generator: ParameterSet<T>,
    pub critic_opt: RmspropState<T>,
    pub generator_opt: RmspropState<T>,
    pub ledger: MomentsLedger,
    pub generator_iteration: u64,
    pub critic_steps: u64,
    pub log: MetricLog,
    /// Largest per-example critic gradient norm seen so far.
    pub max_grad_norm: f64,
    sampler: BatchSampler,
    streams: Streams,
}

/// Glorot-uniform weights, zero biases.
fn glorot<T: Scalar, R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> ParameterSet<T> {
    let mut p = ParameterSet::zeros(spec);
    for w in &mut p.weights {
        let a = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
        for v in w.as_mut_slice() {
            *v = T::of(rng.random_range(-a..=a));
        }
    }
    p
}

/// A private GAN training run over an owned dataset.
#[derive(Debug, Clone)]
pub struct DpGan<T> {
    config: TrainConfig,
    arch_d: NetworkSpec,
    arch_g: NetworkSpec,
    data: RecordMatrix<T>,
    state: TrainState<T>,
    started: Instant,
}

impl<T: Scalar> DpGan<T> {
    /// Validates the configuration and initialises both networks: critic
    /// weights uniform on `[−c_p, c_p]`, generator weights Glorot-uniform,
    /// all biases zero.
    pub fn new(
        config: TrainConfig,
        data: RecordMatrix<T>,
        arch_d: NetworkSpec,
        arch_g: NetworkSpec,
    ) -> Result<Self> {
        config.validate(data.rows(), &arch_d, &arch_g)?;
        if data.cols() != arch_d.input_width() {
            return Err(DpganError::DimensionMismatch {
                context: "record width vs critic input",
                expected: arch_d.input_width(),
                actual: data.cols(),
            });
        }
        if let Some(b_x) = data.norm_bound() {
            let auto = default_cg(&arch_d, config.c_p, b_x)?;
            if config.c_g < auto {
                log::warn!("c_g = {} is below the analytical bound {auto}", config.c_g);
            }
        }
        let mut init = stream(config.seed, STREAM_INIT);
        let critic = ParameterSet::uniform(&arch_d, config.c_p, &mut init);
        let generator = glorot(&arch_g, &mut init);
        let critic_opt = RmspropState::new(
            critic.len(),
            config.rmsprop_decay,
            config.rmsprop_stabilizer,
        )?;
        let generator_opt = RmspropState::new(
            generator.len(),
            config.rmsprop_decay,
            config.rmsprop_stabilizer,
        )?;
        let ledger = MomentsLedger::with_default_grid(config.q(data.rows()), config.sigma_n)?;
        let mut streams = Streams::fresh(config.seed);
        let sampler = BatchSampler::new(data.rows(), &mut streams.batches);
        Ok(Self {
            state: TrainState {
                critic,
                generator,
                critic_opt,
                generator_opt,
                ledger,
                generator_iteration: 0,
                critic_steps: 0,
                log: MetricLog::default(),
                max_grad_norm: 0.0,
                sampler,
                streams,
            },
            config,
            arch_d,
            arch_g,
            data,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState<T> {
        &self.state
    }

    pub fn critic_spec(&self) -> &NetworkSpec {
        &self.arch_d
    }

    pub fn generator_spec(&self) -> &NetworkSpec {
        &self.arch_g
    }

    pub fn critic(&self) -> Net<'_, T> {
        Net::new(&self.arch_d, &self.state.critic)
    }

    pub fn generator(&self) -> Net<'_, T> {
        Net::new(&self.arch_g, &self.state.generator)
    }

    pub fn data(&self) -> &RecordMatrix<T> {
        &self.data
    }

    /// Cumulative `ε` over every critic step taken so far.
    pub fn epsilon(&self) -> f64 {
        self.state
            .ledger
            .get_epsilon(self.config.delta)
            .expect("delta validated at construction")
    }

    /// `ε` of a single outer loop (`n_d` critic steps).
    pub fn per_outer_loop_epsilon(&self) -> f64 {
        self.state
            .ledger
            .per_outer_loop_epsilon(self.config.n_d, self.config.delta)
            .expect("delta validated at construction")
    }

    /// One noisy critic update with noise from the run's own stream.
    pub fn critic_iteration(&mut self) -> Result<()> {
        let mut noise = self.state.streams.noise.clone();
        let r = self.critic_iteration_with(&mut noise);
        self.state.streams.noise = noise;
        r
    }

    /// One noisy critic update drawing its noise vector from `noise`.
    pub fn critic_iteration_with<N: NoiseSource<T> + ?Sized>(
        &mut self,
        noise: &mut N,
    ) -> Result<()> {
        let m = self.config.batch_size;
        let latent = LatentSampler {
            dim: self.config.latent_dim,
        };
        let zs: Vec<Vec<T>> = latent.sample_batch(m, &mut self.state.streams.critic_latent);
        let idx = self
            .state
            .sampler
            .next_batch(m, &mut self.state.streams.batches);
        let xs: Vec<&[T]> = idx.iter().map(|&i| self.data.row(i)).collect();
        critic_step(
            &mut self.state,
            &self.config,
            &self.arch_d,
            &self.arch_g,
            &xs,
            &zs,
            noise,
        )
    }

    /// Critic update on an explicit batch.
    pub fn critic_step<N: NoiseSource<T> + ?Sized>(
        &mut self,
        xs: &[&[T]],
        zs: &[Vec<T>],
        noise: &mut N,
    ) -> Result<()> {
        critic_step(
            &mut self.state,
            &self.config,
            &self.arch_d,
            &self.arch_g,
            xs,
            zs,
            noise,
        )
    }

    /// One generator update through the frozen critic. Reads no data and
    /// leaves the ledger untouched.
    pub fn generator_iteration(&mut self) -> Result<()> {
        let latent = LatentSampler {
            dim: self.config.latent_dim,
        };
        let zs: Vec<Vec<T>> = latent.sample_batch(
            self.config.batch_size,
            &mut self.state.streams.generator_latent,
        );
        let mut g = generator_gradient(
            Net::new(&self.arch_d, &self.state.critic),
            Net::new(&self.arch_g, &self.state.generator),
            &zs,
            self.config.objective,
        )?;
        if self.config.l2 > 0.0 {
            g.add_scaled_params(&self.state.generator, T::of(self.config.l2));
        }
        self.state.generator_opt.apply(
            &mut self.state.generator,
            &g,
            self.config.alpha_g,
            Direction::Descent,
        )?;
        self.state.generator_iteration += 1;
        if !self.state.generator.all_finite() {
            return Err(DpganError::NonFinite {
                what: "generator parameters",
                iteration: self.state.generator_iteration,
            });
        }
        Ok(())
    }

    /// Noise-free estimate on a fresh batch from the evaluation stream.
    pub fn estimate_wasserstein(&mut self) -> Result<f64> {
        let n = self.config.eval_batch_size();
        let rng = &mut self.state.streams.eval;
        let latent = LatentSampler {
            dim: self.config.latent_dim,
        };
        let real: Vec<&[T]> = (0..n)
            .map(|_| self.data.row(rng.random_range(0..self.data.rows())))
            .collect();
        let zs: Vec<Vec<T>> = latent.sample_batch(n, rng);
        let gen = Net::new(&self.arch_g, &self.state.generator);
        let fake: Vec<Vec<T>> = zs.iter().map(|z| gen.eval(z)).collect::<Result<_>>()?;
        wasserstein_estimate(Net::new(&self.arch_d, &self.state.critic), &real, &fake)
    }

    /// `n_d` critic iterations, one generator iteration, then logging if due.
    pub fn outer_iteration(&mut self) -> Result<()> {
        for _ in 0..self.config.n_d {
            self.critic_iteration()?;
        }
        self.generator_iteration()?;
        let it = self.state.generator_iteration;
        if self.config.log_every > 0 && it.is_multiple_of(self.config.log_every) {
            let w = self.estimate_wasserstein()?;
            if !w.is_finite() {
                return Err(DpganError::NonFinite {
                    what: "wasserstein estimate",
                    iteration: it,
                });
            }
            let eps = self.epsilon();
            self.state.log.push(MetricRow {
                generator_iteration: it,
                wasserstein_estimate: w,
                epsilon_spent: eps,
                wallclock_secs: self.started.elapsed().as_secs_f64(),
            });
        }
        Ok(())
    }

    /// Runs outer iterations until `n_g` generator iterations are done.
    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.n_g)
    }

    /// Runs outer iterations until the generator iteration count reaches `target`.
    pub fn run_until(&mut self, target: u64) -> Result<()> {
        while self.state.generator_iteration < target.min(self.config.n_g) {
            self.outer_iteration()?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (ParameterSet<T>, MetricLog) {
        (self.state.generator, self.state.log)
    }

    /// Snapshot sufficient to continue bit for bit.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            scalar: std::any::type_name::<T>().to_string(),
            config: self.config.clone(),
            arch_d: self.arch_d.clone(),
            arch_g: self.arch_g.clone(),
            data_fingerprint: fingerprint(&self.data),
            critic: self.state.critic.clone(),
            generator: self.state.generator.clone(),
            critic_opt: self.state.critic_opt.clone(),
            generator_opt: self.state.generator_opt.clone(),
            ledger: self.state.ledger.clone(),
            generator_iteration: self.state.generator_iteration,
            critic_steps: self.state.critic_steps,
            log: self.state.log.clone(),
            max_grad_norm: self.state.max_grad_norm,
            sampler: self.state.sampler.clone(),
            rng: self.state.streams.positions(),
        }
    }

    /// Rebuilds a run from a checkpoint and the dataset it was trained on.
    pub fn resume(ckpt: Checkpoint<T>, data: RecordMatrix<T>) -> Result<Self> {
        if ckpt.scalar != std::any::type_name::<T>() {
            return Err(DpganError::Checkpoint(format!(
                "checkpoint holds {} parameters",
                ckpt.scalar
            )));
        }
        if ckpt.data_fingerprint != fingerprint(&data) {
            return Err(DpganError::Checkpoint(
                "dataset differs from the one trained on".into(),
            ));
        }
        ckpt.config
            .validate(data.rows(), &ckpt.arch_d, &ckpt.arch_g)?;
        if !ckpt.critic.matches(&ckpt.arch_d) || !ckpt.generator.matches(&ckpt.arch_g) {
            return Err(DpganError::Checkpoint(
                "parameter shapes disagree with architecture".into(),
            ));
        }
        let streams = Streams::restore(ckpt.config.seed, &ckpt.rng)?;
        Ok(Self {
            state: TrainState {
                critic: ckpt.critic,
                generator: ckpt.generator,
                critic_opt: ckpt.critic_opt,
                generator_opt: ckpt.generator_opt,
                ledger: ckpt.ledger,
                generator_iteration: ckpt.generator_iteration,
                critic_steps: ckpt.critic_steps,
                log: ckpt.log,
                max_grad_norm: ckpt.max_grad_norm,
                sampler: ckpt.sampler,
                streams,
            },
            config: ckpt.config,
            arch_d: ckpt.arch_d,
            arch_g: ckpt.arch_g,
            data,
            started: Instant::now(),
        })
    }
}

fn critic_step<T: Scalar, N: NoiseSource<T> + ?Sized>(
    state: &mut TrainState<T>,
    config: &TrainConfig,
    arch_d: &NetworkSpec,
    arch_g: &NetworkSpec,
    xs: &[&[T]],
    zs: &[Vec<T>],
    noise: &mut N,
) -> Result<()> {
    let step = state.critic_steps;
    let mut per_example = batch_critic_grads(
        Net::new(arch_d, &state.critic),
        Net::new(arch_g, &state.generator),
        xs,
        zs,
        config.objective,
    )?;
    for g in &per_example {
        let n = g.norm().to_f64_lossy();
        state.max_grad_norm = state.max_grad_norm.max(n);
        if config.check_grad_bound && n > config.c_g {
            return Err(DpganError::GradientBoundViolated {
                step,
                norm: n,
                c_g: config.c_g,
            });
        }
    }
    if config.l2 > 0.0 {
        let decay = T::of(-config.l2);
        for g in &mut per_example {
            g.add_scaled_params(&state.critic, decay);
        }
    }
    let noisy = noisy_batch_grad(&per_example, config.sigma_n, config.c_g, noise)?;
    critic_update(
        &mut state.critic,
        &mut state.critic_opt,
        &noisy,
        config.alpha_d,
        config.c_p,
    )?;
    state.ledger.record_step();
    state.critic_steps += 1;
    if !state.critic.all_finite() {
        return Err(DpganError::NonFinite {
            what: "critic parameters",
            iteration: state.generator_iteration,
        });
    }
    Ok(())
}

/// FNV-1a over the shape and the bit patterns of every entry.
pub fn fingerprint<T: Scalar>(data: &RecordMatrix<T>) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(&(data.rows() as u64).to_le_bytes());
    eat(&(data.cols() as u64).to_le_bytes());
    for v in data.as_slice() {
        eat(&v.to_f64_lossy().to_bits().to_le_bytes());
    }
    format!("{h:016x}")
}

/// Runs the full procedure and returns the private generator and its curve.
pub fn train<T: Scalar>(
    config: TrainConfig,
    data: RecordMatrix<T>,
    arch_d: NetworkSpec,
    arch_g: NetworkSpec,
) -> Result<(ParameterSet<T>, MetricLog)> {
    let mut run = DpGan::new(config, data, arch_d, arch_g)?;
    run.run()?;
    Ok(run.into_parts())
}

/// Samples `n` records from a trained generator. Touches no data and no
/// privacy state; the output is as private as the generator itself.
pub fn generate<T: Scalar>(
    arch_g: &NetworkSpec,
    generator: &ParameterSet<T>,
    n: usize,
    seed: u64,
) -> Result<RecordMatrix<T>> {
    let net = Net::new(arch_g, generator);
    let latent = LatentSampler {
        dim: arch_g.input_width(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * arch_g.output_width());
    for _ in 0..n {
        let z: Vec<T> = latent.sample(&mut rng);
        data.extend(net.eval(&z)?);
    }
    RecordMatrix::new(n, arch_g.output_width(), data, RecordKind::Continuous)
}
