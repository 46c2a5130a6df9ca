use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dpgan::{Records, TrainCheckpoint, Trainer};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "state", content = "error")]
pub enum RunStatus {
    Complete,
    /// Training aborted; files listed in the manifest are partial.
    Failed(String),
}

/// Everything needed to reproduce a run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: String,
    pub config_sha256: String,
    /// Directory relative data paths were resolved against.
    pub config_dir: PathBuf,
    pub seed: u64,
    pub dpgan_version: String,
    pub dataset_rows: usize,
    pub q: f64,
    pub sigma_n: f64,
    pub c_g: f64,
    pub delta: f64,
    /// `ε` of one outer loop of `n_d` critic steps.
    pub per_outer_loop_epsilon: f64,
    /// `ε` over every critic step actually taken.
    pub cumulative_epsilon: f64,
    pub generator_iterations: u64,
    pub resumed_from: Option<String>,
    pub files: Vec<String>,
    pub status: RunStatus,
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn checkpoint_name(iteration: u64) -> String {
    format!("checkpoint-{iteration:08}.ckpt")
}

/// Reads either a TOML run config or a manifest written by a previous run.
fn load_source(path: &Path) -> Result<(RunConfig, String, PathBuf)> {
    if !path.exists() {
        bail!("config not found: {}", path.display());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: Manifest = serde_json::from_str(&text)
            .with_context(|| format!("parsing manifest {}", path.display()))?;
        if sha256_hex(&m.config) != m.config_sha256 {
            bail!("manifest {}: config hash mismatch", path.display());
        }
        let cfg = RunConfig::parse(&m.config)?;
        return Ok((cfg, m.config, m.config_dir));
    }
    let cfg = RunConfig::parse(&text)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let dir = if dir.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        dir
    };
    let dir = dir.canonicalize().unwrap_or(dir);
    Ok((cfg, text, dir))
}

/// Trains according to `config_path` and writes the metrics CSV, checkpoints
/// and a manifest into the output directory.
pub fn cmd_train(
    config_path: &Path,
    output_flag: Option<&Path>,
    resume: Option<&Path>,
) -> Result<Manifest> {
    let (cfg, text, config_dir) = load_source(config_path)?;
    let out_dir = cfg.output_dir(output_flag)?;
    let data: Records = cfg.load_data(&config_dir)?;
    let resolved = cfg.resolve(&data)?;
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut run = match resume {
        Some(path) => {
            let ckpt = TrainCheckpoint::load(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            if ckpt.config != resolved.config
                || ckpt.arch_d != resolved.arch_d
                || ckpt.arch_g != resolved.arch_g
            {
                bail!(
                    "checkpoint {} was written by a different configuration",
                    path.display()
                );
            }
            Trainer::resume(ckpt, data.clone())?
        }
        None => Trainer::new(
            resolved.config.clone(),
            data.clone(),
            resolved.arch_d.clone(),
            resolved.arch_g.clone(),
        )?,
    };

    let mut manifest = Manifest {
        config: text.clone(),
        config_sha256: sha256_hex(&text),
        config_dir,
        seed: cfg.seed,
        dpgan_version: env!("CARGO_PKG_VERSION").to_string(),
        dataset_rows: data.rows(),
        q: resolved.q,
        sigma_n: resolved.config.sigma_n,
        c_g: resolved.config.c_g,
        delta: resolved.config.delta,
        per_outer_loop_epsilon: run.per_outer_loop_epsilon(),
        cumulative_epsilon: run.epsilon(),
        generator_iterations: run.state().generator_iteration,
        resumed_from: resume.map(|p| p.display().to_string()),
        files: Vec::new(),
        status: RunStatus::Complete,
    };

    let every = cfg.train.checkpoint_every;
    let outcome = (|| -> Result<()> {
        while run.state().generator_iteration < resolved.config.n_g {
            run.outer_iteration()?;
            let it = run.state().generator_iteration;
            if every > 0 && it % every == 0 && it < resolved.config.n_g {
                let name = checkpoint_name(it);
                run.checkpoint().save(&out_dir.join(&name))?;
                manifest.files.push(name);
            }
        }
        run.checkpoint().save(&out_dir.join(FINAL_CHECKPOINT))?;
        manifest.files.push(FINAL_CHECKPOINT.to_string());
        Ok(())
    })();

    fs::write(out_dir.join(METRICS_FILE), run.state().log.to_csv())?;
    manifest.files.push(METRICS_FILE.to_string());
    manifest.cumulative_epsilon = run.epsilon();
    manifest.generator_iterations = run.state().generator_iteration;
    if let Err(e) = &outcome {
        manifest.status = RunStatus::Failed(format!("{e:#}"));
    }
    fs::write(
        out_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    outcome.map(|()| manifest)
}
