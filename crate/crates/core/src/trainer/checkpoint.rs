use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BatchSampler, MetricLog, RngPosition, TrainConfig};
use crate::error::{DpganError, Result};
use crate::privacy::MomentsLedger;
use crate::tensor::{NetworkSpec, ParameterSet, RmspropState};
use crate::Scalar;

/// First line of every checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "DPGAN-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialised training state: `MAGIC VERSION\n` followed by one JSON object.
/// Floats are written in shortest round-trip form and parsed exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    pub version: u32,
    pub scalar: String,
    pub config: TrainConfig,
    pub arch_d: NetworkSpec,
    pub arch_g: NetworkSpec,
    pub data_fingerprint: String,
    pub critic: ParameterSet<T>,
    pub generator: ParameterSet<T>,
    pub critic_opt: RmspropState<T>,
    pub generator_opt: RmspropState<T>,
    pub ledger: MomentsLedger,
    pub generator_iteration: u64,
    pub critic_steps: u64,
    pub log: MetricLog,
    pub max_grad_norm: f64,
    pub sampler: BatchSampler,
    pub rng: Vec<RngPosition>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        serde_json::to_writer(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(DpganError::Checkpoint("missing magic header".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| DpganError::Checkpoint("missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(DpganError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let ckpt: Self = serde_json::from_reader(r)
            .map_err(|e| DpganError::Checkpoint(format!("corrupt body: {e}")))?;
        if ckpt.version != version {
            return Err(DpganError::Checkpoint(
                "header and body versions differ".into(),
            ));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }

    /// Cumulative `ε` recorded in the ledger.
    pub fn epsilon(&self) -> Result<f64> {
        self.ledger.get_epsilon(self.config.delta)
    }
}
