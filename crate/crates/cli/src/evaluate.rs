use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use dpgan::data::{load_binary_csv, load_continuous_csv};
use dpgan::eval::{
    accuracies_csv, binarize, downstream_classify, dwp, dwp_csv, dwpre, dwpre_csv, dwpre_split,
    mean_abs_deviation, nearest_neighbors, neighbors_csv, pearson, summarize_dwpre, DwpreSummary,
    LogRegConfig,
};
use dpgan::Records;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Dwp,
    Dwpre,
    Nn,
    Downstream,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Real training records (class A records for `downstream`).
    #[arg(long)]
    pub real: PathBuf,
    /// Generated records (class A for `downstream`).
    #[arg(long)]
    pub gen: PathBuf,
    /// Held-out real records. Without it `dwpre` splits `--real` 80/20.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Generated class B records for `downstream`.
    #[arg(long)]
    pub gen_b: Option<PathBuf>,
    /// Held-out real class B records for `downstream`.
    #[arg(long)]
    pub test_b: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub metrics: Vec<Metric>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Binarise continuous generated records at this threshold before
    /// `dwp`/`dwpre`.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4000)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 100)]
    pub repeats: usize,
    /// Input CSVs have no header row.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Default, Serialize)]
struct Summary {
    #[serde(skip_serializing_if = "Option::is_none")]
    dwp: Option<DwpSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dwpre: Option<DwpreSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nn: Option<NnSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    downstream: Option<DownstreamSummary>,
}

#[derive(Debug, Serialize)]
struct DwpSummary {
    columns: usize,
    mean_abs_deviation: f64,
    pearson: f64,
}

#[derive(Debug, Serialize)]
struct NnSummary {
    k: usize,
    mean_nearest_distance: f64,
    min_nearest_distance: f64,
}

#[derive(Debug, Serialize)]
struct DownstreamSummary {
    repeats: usize,
    mean_accuracy: f64,
    min_accuracy: f64,
    max_accuracy: f64,
}

fn load_any(path: &Path, header: bool) -> Result<Records> {
    if !path.exists() {
        bail!("file not found: {}", path.display());
    }
    let (m, _) = load_continuous_csv::<f64>(path, header)
        .with_context(|| format!("loading {}", path.display()))?;
    Ok(m)
}

fn load_bin(path: &Path, header: bool) -> Result<Records> {
    if !path.exists() {
        bail!("file not found: {}", path.display());
    }
    let (m, _) = load_binary_csv::<f64>(path, header)
        .with_context(|| format!("loading {} as binary", path.display()))?;
    Ok(m)
}

fn same_cols(a: &Records, b: &Records, an: &str, bn: &str) -> Result<()> {
    if a.cols() != b.cols() {
        bail!(
            "shape mismatch: {an} has {} columns, {bn} has {}",
            a.cols(),
            b.cols()
        );
    }
    Ok(())
}

/// Binary view of generated records, thresholding when asked to.
fn binary_gen(path: &Path, args: &EvaluateArgs) -> Result<Records> {
    let header = !args.no_header;
    match args.threshold {
        Some(t) => Ok(binarize(&load_any(path, header)?, t)?),
        None => load_bin(path, header),
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let header = !args.no_header;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut summary = Summary::default();
    let mut metrics = args.metrics.clone();
    metrics.dedup();
    for metric in metrics {
        match metric {
            Metric::Dwp => {
                let real = load_bin(&args.real, header)?;
                let gen = binary_gen(&args.gen, args)?;
                same_cols(&real, &gen, "real", "generated")?;
                let pairs = dwp(&real, &gen)?;
                fs::write(args.out_dir.join("dwp.csv"), dwp_csv(&pairs))?;
                let (pr, pg): (Vec<f64>, Vec<f64>) =
                    pairs.iter().map(|p| (p.p_real, p.p_gen)).unzip();
                summary.dwp = Some(DwpSummary {
                    columns: pairs.len(),
                    mean_abs_deviation: mean_abs_deviation(&pairs),
                    pearson: pearson(&pr, &pg),
                });
                writeln!(
                    out,
                    "dwp: {} columns, mean |p_gen - p_real| = {:.6}",
                    pairs.len(),
                    mean_abs_deviation(&pairs)
                )?;
            }
            Metric::Dwpre => {
                let real = load_bin(&args.real, header)?;
                let gen = binary_gen(&args.gen, args)?;
                same_cols(&real, &gen, "real", "generated")?;
                let (train, test) = match &args.test {
                    Some(p) => (real, load_bin(p, header)?),
                    None => dwpre_split(&real, args.seed),
                };
                same_cols(&train, &test, "real", "test")?;
                let res = dwpre(&train, &gen, &test, LogRegConfig::default())?;
                fs::write(args.out_dir.join("dwpre.csv"), dwpre_csv(&res))?;
                let s = summarize_dwpre(&res);
                writeln!(
                    out,
                    "dwpre: {} columns, {} skipped, mean AUC real {:.6}, generated {:.6}",
                    s.columns, s.skipped, s.mean_auc_real, s.mean_auc_gen
                )?;
                summary.dwpre = Some(s);
            }
            Metric::Nn => {
                let real = load_any(&args.real, header)?;
                let gen = load_any(&args.gen, header)?;
                same_cols(&real, &gen, "real", "generated")?;
                let nn = nearest_neighbors(&gen, &real, args.k)?;
                fs::write(args.out_dir.join("nn.csv"), neighbors_csv(&nn))?;
                let firsts: Vec<f64> = nn
                    .iter()
                    .filter_map(|l| l.first().map(|n| n.distance))
                    .collect();
                let mean = if firsts.is_empty() {
                    0.0
                } else {
                    firsts.iter().sum::<f64>() / firsts.len() as f64
                };
                let min = firsts.iter().copied().fold(f64::INFINITY, f64::min);
                writeln!(
                    out,
                    "nn: {} generated rows, mean nearest distance {:.6}",
                    nn.len(),
                    mean
                )?;
                summary.nn = Some(NnSummary {
                    k: args.k,
                    mean_nearest_distance: mean,
                    min_nearest_distance: if firsts.is_empty() { 0.0 } else { min },
                });
            }
            Metric::Downstream => {
                let (Some(gen_b), Some(test_a), Some(test_b)) =
                    (&args.gen_b, &args.test, &args.test_b)
                else {
                    bail!("downstream needs --gen-b, --test and --test-b");
                };
                let ga = load_any(&args.gen, header)?;
                let gb = load_any(gen_b, header)?;
                let ta = load_any(test_a, header)?;
                let tb = load_any(test_b, header)?;
                same_cols(&ga, &gb, "generated A", "generated B")?;
                same_cols(&ga, &ta, "generated A", "test A")?;
                same_cols(&ga, &tb, "generated A", "test B")?;
                let acc = downstream_classify(
                    &ga,
                    &gb,
                    &ta,
                    &tb,
                    args.n_samples,
                    args.repeats,
                    args.seed,
                    LogRegConfig::default(),
                )?;
                fs::write(args.out_dir.join("downstream.csv"), accuracies_csv(&acc))?;
                let mean = acc.iter().sum::<f64>() / acc.len().max(1) as f64;
                writeln!(
                    out,
                    "downstream: {} repeats, mean accuracy {:.6}",
                    acc.len(),
                    mean
                )?;
                summary.downstream = Some(DownstreamSummary {
                    repeats: acc.len(),
                    mean_accuracy: mean,
                    min_accuracy: acc.iter().copied().fold(f64::INFINITY, f64::min),
                    max_accuracy: acc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                });
            }
        }
    }
    fs::write(
        args.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(())
}
