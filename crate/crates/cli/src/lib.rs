//! Command-line surface for `dpgan`: calibration, training, sampling,
//! evaluation, gradient-bound checks and accounting.

pub mod config;
mod evaluate;
mod train;

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dpgan::bounds::{
    check_clip_precondition, compute_cg, empirical_grad_bound, ActivationBounds, DataBound,
    Precondition,
};
use dpgan::data::default_header;
use dpgan::eval::binarize;
use dpgan::privacy::{calibrate_sigma, MomentsLedger};
use dpgan::trainer::generate;
use dpgan::{Activation, NetworkSpec, TrainCheckpoint};

pub use evaluate::Metric;
pub use train::{cmd_train, Manifest, RunStatus, MANIFEST_FILE, METRICS_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "dpgan",
    version,
    about = "Differentially private WGAN training and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Noise multiplier for a per-outer-loop privacy target.
    Calibrate {
        #[arg(long, value_parser = positive)]
        eps: f64,
        #[arg(long, value_parser = unit_open)]
        delta: f64,
        #[arg(long, value_parser = unit_half_open)]
        q: f64,
        #[arg(long = "n-d", value_parser = clap::value_parser!(u32).range(1..))]
        n_d: u32,
    },
    /// Train from a TOML config, or rerun a previous run from its manifest.
    Train {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run of this config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample records from a trained generator. Reads no data and leaves the
    /// privacy ledger untouched.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit binary records: entries at or above the threshold become 1.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare generated records with real ones.
    Evaluate(evaluate::EvaluateArgs),
    /// Analytical gradient bound and an empirical check against it.
    Gradcheck {
        /// Layer widths, input first, e.g. `4,3,1`.
        #[arg(long, value_delimiter = ',', required = true)]
        widths: Vec<usize>,
        #[arg(long, default_value = "sigmoid")]
        activation: Activation,
        /// Output-layer activation; defaults to `--activation`.
        #[arg(long)]
        output_activation: Option<Activation>,
        #[arg(long = "c-p")]
        c_p: f64,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        /// Norm bound on real records.
        #[arg(long = "b-x", default_value_t = 1.0)]
        b_x: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cumulative privacy spent by a number of noisy steps or by a checkpoint.
    Accountant {
        #[arg(long, conflicts_with_all = ["q", "sigma_n", "steps"])]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = unit_half_open, required_unless_present = "checkpoint")]
        q: Option<f64>,
        #[arg(long = "sigma-n", required_unless_present = "checkpoint")]
        sigma_n: Option<f64>,
        #[arg(long, required_unless_present = "checkpoint")]
        steps: Option<u64>,
        #[arg(long, default_value_t = 1e-5, value_parser = unit_open)]
        delta: f64,
    },
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>().map_err(|e| e.to_string())
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive and finite"))
    }
}

fn unit_open(s: &str) -> std::result::Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} must lie in (0, 1)"))
    }
}

fn unit_half_open(s: &str) -> std::result::Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} must lie in (0, 1]"))
    }
}

/// A check ran to completion and failed; the process should exit nonzero.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Runs one subcommand, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Calibrate { eps, delta, q, n_d } => cmd_calibrate(eps, delta, q, n_d, out),
        Command::Train {
            config,
            output_dir,
            resume,
        } => {
            let m = train::cmd_train(&config, output_dir.as_deref(), resume.as_deref())?;
            writeln!(
                out,
                "trained {} generator iterations; epsilon spent {} (per outer loop {})",
                m.generator_iterations, m.cumulative_epsilon, m.per_outer_loop_epsilon
            )?;
            Ok(())
        }
        Command::Generate {
            checkpoint,
            n,
            seed,
            threshold,
            out: path,
        } => {
            cmd_generate(&checkpoint, n, seed, threshold, &path)?;
            writeln!(out, "wrote {n} records to {}", path.display())?;
            Ok(())
        }
        Command::Evaluate(args) => evaluate::cmd_evaluate(&args, out),
        Command::Gradcheck {
            widths,
            activation,
            output_activation,
            c_p,
            trials,
            b_x,
            seed,
        } => {
            let out_act = output_activation.unwrap_or(activation);
            let spec = NetworkSpec::with_hidden(widths, activation, out_act)?.without_bias();
            cmd_gradcheck(&spec, c_p, trials, b_x, seed, out)
        }
        Command::Accountant {
            checkpoint,
            q,
            sigma_n,
            steps,
            delta,
        } => match checkpoint {
            Some(path) => {
                let ckpt = TrainCheckpoint::load(&path)
                    .with_context(|| format!("loading checkpoint {}", path.display()))?;
                let ledger = &ckpt.ledger;
                report_ledger(ledger, ckpt.config.delta, out)
            }
            None => {
                let (q, sigma_n, steps) = (q.unwrap(), sigma_n.unwrap(), steps.unwrap());
                let mut ledger = MomentsLedger::with_default_grid(q, sigma_n)?;
                for _ in 0..steps {
                    ledger.record_step();
                }
                report_ledger(&ledger, delta, out)
            }
        },
    }
}

fn report_ledger(ledger: &MomentsLedger, delta: f64, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "q = {}", ledger.q())?;
    writeln!(out, "sigma_n = {}", ledger.sigma_n())?;
    writeln!(out, "steps = {}", ledger.steps_taken())?;
    writeln!(out, "delta = {delta:e}")?;
    writeln!(out, "epsilon = {:.6}", ledger.get_epsilon(delta)?)?;
    if let Some(l) = ledger.optimal_lambda(delta) {
        writeln!(out, "lambda* = {l:.6}")?;
    }
    Ok(())
}

/// Prints `σ_n` for a per-outer-loop target and the cumulative `ε` the ledger
/// reports after `n_d`, `10 n_d` and `100 n_d` critic steps.
pub fn cmd_calibrate(eps: f64, delta: f64, q: f64, n_d: u32, out: &mut dyn Write) -> Result<()> {
    let sigma = calibrate_sigma(eps, delta, q, n_d)?;
    writeln!(out, "sigma_n = {sigma:.6e}")?;
    writeln!(out, "{:>10}  {:>14}", "steps", "epsilon")?;
    let mut ledger = MomentsLedger::with_default_grid(q, sigma)?;
    let mut taken = 0u64;
    for target in [1u64, 10, 100].map(|k| k * u64::from(n_d)) {
        while taken < target {
            ledger.record_step();
            taken += 1;
        }
        writeln!(out, "{:>10}  {:>14.6}", target, ledger.get_epsilon(delta)?)?;
    }
    Ok(())
}

pub fn cmd_generate(
    checkpoint: &std::path::Path,
    n: usize,
    seed: u64,
    threshold: Option<f64>,
    out: &std::path::Path,
) -> Result<()> {
    let ckpt = TrainCheckpoint::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let mut records = generate(&ckpt.arch_g, &ckpt.generator, n, seed)?;
    if let Some(t) = threshold {
        records = binarize(&records, t)?;
    }
    records
        .save_csv(out, Some(&default_header(records.cols())))
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

/// Prints the precondition status, `c_g`, and (for `trials > 0`) the largest
/// sampled per-example gradient norm. Fails when the precondition does not
/// hold or a sample exceeds `c_g`.
pub fn cmd_gradcheck(
    spec: &NetworkSpec,
    c_p: f64,
    trials: usize,
    b_x: f64,
    seed: u64,
    out: &mut dyn Write,
) -> Result<()> {
    let bounds = ActivationBounds::for_network(spec);
    writeln!(
        out,
        "architecture: {:?} {}",
        spec.widths(),
        spec.activations()[0]
    )?;
    writeln!(out, "c_p = {c_p:e}")?;
    if let Precondition::Fail { layer, limit } = check_clip_precondition(spec, c_p, &bounds) {
        writeln!(
            out,
            "precondition: FAIL at layer {layer} (c_p must be <= {limit:e})"
        )?;
        return Err(CheckFailed(format!("clip precondition fails at layer {layer}")).into());
    }
    writeln!(out, "precondition: PASS")?;
    let b_sigma = dpgan::bounds::effective_b_sigma(
        spec,
        c_p,
        Some(b_x.max((spec.input_width() as f64).sqrt())),
    )?;
    let c_g = compute_cg(spec, c_p, &bounds, b_sigma)?;
    writeln!(out, "c_g = {c_g:e}")?;
    if trials == 0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emp = empirical_grad_bound(spec, c_p, trials, DataBound { b_x }, &mut rng)?;
    writeln!(out, "empirical max = {emp:e} over {trials} trials")?;
    if emp <= c_g {
        writeln!(out, "result: PASS")?;
        Ok(())
    } else {
        writeln!(out, "result: FAIL (ratio {:.3})", emp / c_g)?;
        bail!(CheckFailed(format!(
            "empirical gradient norm {emp:e} exceeds c_g = {c_g:e}"
        )))
    }
}

/// Names accepted by `evaluate --metrics`.
pub fn metric_names() -> Vec<String> {
    Metric::value_variants()
        .iter()
        .filter_map(|m| m.to_possible_value().map(|v| v.get_name().to_string()))
        .collect()
}
