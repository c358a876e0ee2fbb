use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "quench", version, about = "Quench-singularity labelling and quantum-kernel SVMs")]
pub struct Cli {
    /// Worker threads for sweeps and Gram builds (0 = all cores).
    #[arg(long, global = true, env = "QUENCH_WORKERS", default_value_t = 0)]
    pub workers: usize,
    /// Log progress (-v) or debug detail (-vv) to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Label a (θ, φ, h) grid by quench singularities.
    Label(LabelArgs),
    /// Build (or reuse) the kernel matrix over a dataset's labelled rows.
    Gram(GramArgs),
    /// Cross-validate C on the training split and fit an SVM.
    Train(TrainArgs),
    /// Score a trained model on its held-out rows.
    Eval(EvalArgs),
    /// Accuracy table over qubit counts and kernel methods.
    Sweep(SweepArgs),
    /// Plot-ready CSVs.
    Export(ExportArgs),
    /// Run the invariant suite.
    Verify(VerifyArgs),
    /// Repeat a recorded run and compare output hashes.
    #[serde(skip)]
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct LabelArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Acknowledge long runs (N ≥ 7).
    #[arg(long)]
    pub yes: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Gsk,
    Dsk,
    Classical,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GramArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Kernel family; the map comes from `--config` or the family default.
    #[arg(long, value_enum)]
    pub kernel: Option<MethodArg>,
    /// Config whose `kernel` section sets method and map.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Recompute even if `--out` already holds a matching matrix.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub gram: PathBuf,
    /// Config whose `experiment` section sets split, folds and the C grid.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the split/fold seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub gram: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Qubit counts, e.g. `2,3,4`.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub n_list: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Gsk, MethodArg::Dsk])]
    pub methods: Vec<MethodArg>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub yes: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportKind {
    /// `x,y,z,label` on the radius-h sphere.
    Sphere,
    /// `theta,phi,label`.
    Contour,
    /// `t,P_plus,P_minus,lambda,m_x` for one field.
    Traces,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExportArgs {
    #[arg(long, value_enum)]
    pub kind: ExportKind,
    /// Labelled dataset (sphere, contour).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Scenario config (traces).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Field angles in radians; a trailing `pi` multiplies by π (`1.5pi`).
    #[arg(long, value_parser = parse_angle, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    #[arg(long, value_parser = parse_angle, allow_hyphen_values = true)]
    pub phi: Option<f64>,
    /// Field magnitude in units of J.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultArg {
    Hermiticity,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// Skip the Gram suite and the dt-refinement study.
    #[arg(long)]
    pub quick: bool,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Corrupt one invariant on purpose (for testing the suite).
    #[arg(long, value_enum)]
    pub inject_fault: Option<FaultArg>,
    /// JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}

pub fn parse_angle(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (number, scale) = match s.strip_suffix("pi").or_else(|| s.strip_suffix('π')) {
        Some("") => return Ok(std::f64::consts::PI),
        Some(rest) => (rest.trim_end_matches('*'), std::f64::consts::PI),
        None => (s, 1.0),
    };
    number.parse::<f64>().map(|x| x * scale).map_err(|e| format!("bad angle '{s}': {e}"))
}
