//! TOML run configuration and its resolution into trainer inputs.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use dpgan::data::{
    binary_benchmark, enforce_norm_bound, gen_gaussian_mixture, load_binary_csv,
    load_continuous_csv,
};
use dpgan::privacy::calibrate_sigma;
use dpgan::trainer::default_cg;
use dpgan::{Activation, NetworkSpec, Objective, RecordKind, Records, TrainConfig};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "DPGAN_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub data: DataSource,
    pub privacy: PrivacyBlock,
    pub train: TrainBlock,
    pub critic: ArchBlock,
    pub generator: ArchBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        binary: bool,
        #[serde(default = "yes")]
        header: bool,
        #[serde(default)]
        norm_bound: Option<f64>,
    },
    Mixture {
        n: usize,
        centers: Vec<Vec<f64>>,
        std: f64,
        data_seed: u64,
        #[serde(default)]
        norm_bound: Option<f64>,
    },
    BinaryBenchmark {
        n: usize,
        dims: usize,
        data_seed: u64,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Calibration {
    /// `ε` is spent by one outer loop of `n_d` critic steps.
    #[default]
    PerOuterLoop,
    /// `ε` is spent by the whole run of `n_d · n_g` critic steps.
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyBlock {
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub sigma_n: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub calibration: Calibration,
}

fn default_delta() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    pub alpha_d: f64,
    pub alpha_g: f64,
    pub c_p: f64,
    pub batch_size: usize,
    pub n_d: u32,
    pub n_g: u64,
    /// Overrides the analytical bound when set.
    #[serde(default)]
    pub c_g: Option<f64>,
    #[serde(default = "default_decay")]
    pub rmsprop_decay: f64,
    #[serde(default = "default_stabilizer")]
    pub rmsprop_stabilizer: f64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default)]
    pub eval_batch: usize,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub check_grad_bound: bool,
    /// Write an intermediate checkpoint every this many generator iterations.
    #[serde(default)]
    pub checkpoint_every: u64,
}

fn default_decay() -> f64 {
    dpgan::tensor::DEFAULT_DECAY
}
fn default_stabilizer() -> f64 {
    dpgan::tensor::DEFAULT_STABILIZER
}
fn default_log_every() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchBlock {
    pub widths: Vec<usize>,
    pub hidden: String,
    pub output: String,
    #[serde(default = "yes")]
    pub bias: bool,
}

impl ArchBlock {
    pub fn spec(&self, which: &str) -> Result<NetworkSpec> {
        let hidden: Activation = self
            .hidden
            .parse()
            .map_err(|e| anyhow!("{which}.hidden: {e}"))?;
        let output: Activation = self
            .output
            .parse()
            .map_err(|e| anyhow!("{which}.output: {e}"))?;
        let spec = NetworkSpec::with_hidden(self.widths.clone(), hidden, output)
            .with_context(|| format!("{which} architecture"))?;
        Ok(if self.bias { spec } else { spec.without_bias() })
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing run configuration")?;
        match (cfg.privacy.epsilon, cfg.privacy.sigma_n) {
            (Some(_), Some(_)) => {
                bail!("privacy: set exactly one of `epsilon` and `sigma_n`, not both")
            }
            (None, None) => bail!("privacy: one of `epsilon` or `sigma_n` is required"),
            _ => {}
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Ok((Self::parse(&text)?, text))
    }

    /// Output directory after the environment override.
    pub fn output_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        if let Some(p) = flag {
            return Ok(p.to_path_buf());
        }
        if let Ok(p) = std::env::var(OUTPUT_DIR_ENV) {
            if !p.is_empty() {
                return Ok(PathBuf::from(p));
            }
        }
        self.output_dir.clone().ok_or_else(|| {
            anyhow!("no output directory: set `output_dir`, --output-dir or {OUTPUT_DIR_ENV}")
        })
    }

    /// Loads or synthesises the training records. Relative CSV paths are
    /// taken relative to `base`.
    pub fn load_data(&self, base: &Path) -> Result<Records> {
        let data = match &self.data {
            DataSource::Csv {
                path,
                binary,
                header,
                norm_bound,
            } => {
                let full = base.join(path);
                if !full.exists() {
                    bail!("data file not found: {}", full.display());
                }
                let (m, report) = if *binary {
                    load_binary_csv::<f64>(&full, *header)
                } else {
                    load_continuous_csv::<f64>(&full, *header)
                }
                .with_context(|| format!("loading {}", full.display()))?;
                if report.rows_dropped > 0 {
                    log::warn!(
                        "{}: dropped {} of {} rows with missing values",
                        full.display(),
                        report.rows_dropped,
                        report.rows_read
                    );
                }
                match norm_bound {
                    Some(b) => enforce_norm_bound(&m, *b)?,
                    None => m,
                }
            }
            DataSource::Mixture {
                n,
                centers,
                std,
                data_seed,
                norm_bound,
            } => {
                let m = gen_gaussian_mixture::<f64>(*n, centers, *std, *data_seed)?;
                match norm_bound {
                    Some(b) => enforce_norm_bound(&m, *b)?,
                    None => m,
                }
            }
            DataSource::BinaryBenchmark { n, dims, data_seed } => {
                binary_benchmark::<f64>(*n, *dims, *data_seed)?
            }
        };
        Ok(data)
    }

    /// Everything the trainer needs, plus the derived privacy numbers.
    pub fn resolve(&self, data: &Records) -> Result<Resolved> {
        let arch_d = self.critic.spec("critic")?;
        let arch_g = self.generator.spec("generator")?;
        let t = &self.train;
        let c_g = match t.c_g {
            Some(c) => c,
            None => {
                let b_x = match (data.norm_bound(), data.kind()) {
                    (Some(b), _) => b,
                    (None, RecordKind::Binary) => (data.cols() as f64).sqrt(),
                    (None, RecordKind::Continuous) => bail!(
                        "continuous data needs `data.norm_bound` (or an explicit `train.c_g`) to bound gradients"
                    ),
                };
                default_cg(&arch_d, t.c_p, b_x)?
            }
        };
        if t.batch_size == 0 || t.batch_size > data.rows() {
            bail!(
                "train.batch_size = {} must lie in 1..={}",
                t.batch_size,
                data.rows()
            );
        }
        let q = t.batch_size as f64 / data.rows() as f64;
        let delta = self.privacy.delta;
        let sigma_n = match (self.privacy.epsilon, self.privacy.sigma_n) {
            (Some(eps), None) => {
                let steps = match self.privacy.calibration {
                    Calibration::PerOuterLoop => t.n_d,
                    Calibration::Total => u32::try_from(t.n_g * u64::from(t.n_d))
                        .map_err(|_| anyhow!("n_d · n_g is too large to calibrate"))?,
                };
                calibrate_sigma(eps, delta, q, steps)?
            }
            (None, Some(s)) => s,
            _ => unreachable!("checked at parse time"),
        };
        let config = TrainConfig {
            alpha_d: t.alpha_d,
            alpha_g: t.alpha_g,
            c_p: t.c_p,
            batch_size: t.batch_size,
            n_d: t.n_d,
            n_g: t.n_g,
            sigma_n,
            c_g,
            seed: self.seed,
            latent_dim: arch_g.input_width(),
            delta,
            rmsprop_decay: t.rmsprop_decay,
            rmsprop_stabilizer: t.rmsprop_stabilizer,
            log_every: t.log_every,
            eval_batch: t.eval_batch,
            l2: t.l2,
            objective: t.objective,
            check_grad_bound: t.check_grad_bound,
        };
        config.validate(data.rows(), &arch_d, &arch_g)?;
        Ok(Resolved {
            config,
            arch_d,
            arch_g,
            q,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: TrainConfig,
    pub arch_d: NetworkSpec,
    pub arch_g: NetworkSpec,
    pub q: f64,
}
