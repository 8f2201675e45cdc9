//! Command-line grammar. Subcommand argument structs are also serialized into
//! the run manifest so `valet rerun` can replay them.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use valet_core::desim::PickupModel;

pub const CSV_HELP: &str = "\
CSV OUTPUT (sweep-k, sweep-tax, sensitivity):
  Columns, in order:
    <swept>, lambda, n, price, wage, profit, customer_surplus, courier_surplus,
    social_welfare, ev_penetration, lerner, marginal_cost, t_r_min, t_p_min,
    t_d_min, t_w_min, rho_d, rho_c, feasible, <other policy coordinate>, chargers
  <swept> is `k` for sweep-k/sensitivity and `p_tax` for sweep-tax; the other
  coordinate is the one held fixed (or K*(p_t) in the tax sweep). Sensitivity
  files prepend `factor` and `value`. Times are minutes; money is HK$ (flows
  per hour); demand and supply are per hour. Infeasible rows leave the numeric
  columns empty and set feasible=false.

EXIT STATUS:
  0  success
  1  usage, configuration or I/O error
  2  the model has no feasible or viable outcome for the request";

#[derive(Debug, Parser)]
#[command(name = "valet", version, about = "Equilibrium solver for on-demand valet charging markets")]
#[command(after_long_help = CSV_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every model subcommand. Not serialized: the manifest
/// records their resolved effect instead.
#[derive(Clone, Debug, Default, Args)]
pub struct Common {
    /// Flat `key = value` parameter file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one parameter, e.g. `--set eta=0.2` (repeatable; applied after --config)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory for CSV / JSON artifacts and the run manifest
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Coarse grid resolution as LAMBDAxN, e.g. 200x200
    #[arg(long)]
    pub grid: Option<GridArg>,
    /// Grid refinement stages (tenfold step reduction each)
    #[arg(long)]
    pub refine: Option<u32>,
    /// Disable data parallelism
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Subcommand, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Profit-maximizing platform decision for one policy; prints the outcome as JSON
    Solve(SolveArgs),
    /// Steady-state queue times for a given demand, fleet and network
    QueueEval(QueueEvalArgs),
    /// Planning sweep over the number of charging stations
    SweepK(SweepKArgs),
    /// Tax-and-invest sweep: regulator sets p_t, platform responds at K*(p_t)
    SweepTax(SweepTaxArgs),
    /// Per-charger cost threshold below which taxation expands the market
    FindRhat(FindRhatArgs),
    /// Planning sweeps under multiplicative parameter perturbations
    Sensitivity(SensitivityArgs),
    /// Discrete-event simulation of the delivery + charging network
    Simulate(SimulateArgs),
    /// Monte-Carlo calibration of the delivery-time coefficient theta
    CalibrateTheta(CalibrateArgs),
    /// Re-execute a run from its manifest.json
    #[serde(skip)]
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::QueueEval(_) => "queue-eval",
            Command::SweepK(_) => "sweep-k",
            Command::SweepTax(_) => "sweep-tax",
            Command::FindRhat(_) => "find-rhat",
            Command::Sensitivity(_) => "sensitivity",
            Command::Simulate(_) => "simulate",
            Command::CalibrateTheta(_) => "calibrate-theta",
            Command::Rerun(_) => "rerun",
        }
    }

    pub fn common(&self) -> Option<&Common> {
        match self {
            Command::Solve(a) => Some(&a.common),
            Command::QueueEval(a) => Some(&a.common),
            Command::SweepK(a) => Some(&a.common),
            Command::SweepTax(a) => Some(&a.common),
            Command::FindRhat(a) => Some(&a.common),
            Command::Sensitivity(a) => Some(&a.common),
            Command::Simulate(a) => Some(&a.common),
            Command::CalibrateTheta(a) => Some(&a.common),
            Command::Rerun(_) => None,
        }
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SolveArgs {
    /// Number of charging stations (overrides the config)
    #[arg(long)]
    pub k: Option<u32>,
    /// Per-service tax p_t in HK$ (overrides the config)
    #[arg(long)]
    pub tax: Option<f64>,
    /// Evaluate the market at LAMBDA,N instead of optimizing
    #[arg(long, value_name = "LAMBDA,N")]
    pub at: Option<Pair>,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct QueueEvalArgs {
    /// Demand (services per hour)
    #[arg(long)]
    pub lambda: f64,
    /// Couriers
    #[arg(long)]
    pub n: f64,
    /// Stations (defaults to the config)
    #[arg(long)]
    pub k: Option<u32>,
    /// Chargers (defaults to the config's charger supply)
    #[arg(long)]
    pub m: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SweepKArgs {
    /// Inclusive station range START:END
    #[arg(long, default_value = "20:120")]
    pub k: KRange,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TaxSearchArgs {
    /// Station range scanned for the untaxed K*
    #[arg(long = "k-range", default_value = "20:120")]
    pub k_range: KRange,
    /// Half-width of the warm-started K* window
    #[arg(long, default_value_t = 3)]
    pub window: u32,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SweepTaxArgs {
    /// Prorated cost per charger r in HK$ (overrides the config)
    #[arg(long)]
    pub r: Option<f64>,
    /// Tax grid START:END:STEP
    #[arg(long, default_value = "0:25:0.2")]
    pub pt: TaxRange,
    #[command(flatten)]
    pub search: TaxSearchArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct FindRhatArgs {
    /// Tax grid START:END:STEP searched for a demand-raising tax
    #[arg(long, default_value = "0:25:0.2")]
    pub pt: TaxRange,
    /// Initial bracket LO:HI for r
    #[arg(long, default_value = "12.5:62.5")]
    pub bracket: Pair,
    /// Bisection tolerance on r (HK$)
    #[arg(long, default_value_t = 0.25)]
    pub tol: f64,
    #[command(flatten)]
    pub search: TaxSearchArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SensitivityArgs {
    /// Parameters to perturb (comma separated; default: the standard twelve)
    #[arg(long, value_delimiter = ',')]
    pub params: Vec<String>,
    /// Multiplicative factors (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.75,1.25,1.5")]
    pub factors: Vec<f64>,
    /// Initial station range; widened while an argmax sits on its edge
    #[arg(long, default_value = "20:120")]
    pub k: KRange,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Stations (defaults to the config)
    #[arg(long)]
    pub k: Option<u32>,
    /// Demand; defaults to the platform optimum at K
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Couriers; defaults to the rounded platform optimum at K
    #[arg(long)]
    pub n: Option<u32>,
    /// Chargers (defaults to the config's charger supply)
    #[arg(long)]
    pub m: Option<f64>,
    /// Customers per replication, including warmup
    #[arg(long, default_value_t = 100_000)]
    pub customers: usize,
    /// Customers discarded as warmup (default: 20% of --customers)
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long, default_value_t = 30)]
    pub replications: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// How each courier job's pickup time is set
    #[arg(long, value_enum, default_value_t = PickupArg::IdleCount)]
    pub pickup: PickupArg,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    /// Station counts to sample
    #[arg(long, default_value = "20:120")]
    pub k: KRange,
    /// Travel speed (km/hr)
    #[arg(long, default_value_t = 25.0 / 3.0)]
    pub speed: f64,
    /// Customers sampled per K
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Clone, Debug, Args)]
pub struct RerunArgs {
    /// Manifest written by a previous run
    pub manifest: PathBuf,
    /// Output directory for the replayed artifacts
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PickupArg {
    IdleCount,
    FixedPoint,
}

impl From<PickupArg> for PickupModel {
    fn from(p: PickupArg) -> Self {
        match p {
            PickupArg::IdleCount => PickupModel::IdleCount,
            PickupArg::FixedPoint => PickupModel::FixedPoint,
        }
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim().parse().map_err(|_| format!("`{s}` is not a number"))
}

fn parse_u32(s: &str) -> Result<u32, String> {
    s.trim().parse().map_err(|_| format!("`{s}` is not a non-negative integer"))
}

/// `START:END`, inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KRange {
    pub start: u32,
    pub end: u32,
}

impl FromStr for KRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or("expected START:END")?;
        let (start, end) = (parse_u32(a)?, parse_u32(b)?);
        if start < 1 || end < start {
            return Err("expected 1 <= START <= END".into());
        }
        Ok(Self { start, end })
    }
}

impl fmt::Display for KRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

/// `START:END:STEP`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxRange {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl FromStr for TaxRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts[..] else {
            return Err("expected START:END:STEP".into());
        };
        let (start, end, step) = (parse_f64(a)?, parse_f64(b)?, parse_f64(c)?);
        if !(start >= 0.0) || end < start || !(step > 0.0) {
            return Err("expected 0 <= START <= END and STEP > 0".into());
        }
        Ok(Self { start, end, step })
    }
}

/// Two numbers separated by `:` or `,`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair(pub f64, pub f64);

impl FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once([':', ',']).ok_or("expected two numbers, e.g. 12.5:62.5")?;
        Ok(Self(parse_f64(a)?, parse_f64(b)?))
    }
}

/// `LAMBDAxN`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridArg {
    pub lambda_points: usize,
    pub n_points: usize,
}

impl FromStr for GridArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(['x', 'X']).ok_or("expected LAMBDAxN, e.g. 200x200")?;
        let p = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("`{t}` is not a count"));
        Ok(Self { lambda_points: p(a)?, n_points: p(b)? })
    }
}
