//! Subcommand execution and artifact writing.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use valet_core::desim::{self, SimConfig, SimError, SimResult};
use valet_core::market::{self, GridSpec, MarketError};
use valet_core::params::{self, Config, ModelParams, ParamError, PolicyConfig};
use valet_core::policy::{self, PolicyError, SolveSettings, SweepTable, TaxSearch};
use valet_core::queueing::{self, QueueError, QueueSolution};
use valet_core::Execution;

use crate::args::*;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Param(#[from] ParamError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(_) => 2,
            _ => 1,
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

impl From<MarketError> for CliError {
    fn from(e: MarketError) -> Self {
        match e {
            MarketError::Param(p) => CliError::Param(p),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Param(p) => CliError::Param(p),
            PolicyError::Market(m) => m.into(),
            PolicyError::Empty(what) => CliError::Usage(format!("empty {what}")),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invalid(_) => CliError::Usage(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<QueueError> for CliError {
    fn from(e: QueueError) -> Self {
        match e {
            QueueError::InvalidInput(_) => CliError::Usage(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

/// Everything a run needs besides its subcommand arguments.
#[derive(Clone, Debug)]
pub struct Context {
    pub config: Config,
    pub settings: SolveSettings,
    pub out: Option<PathBuf>,
}

impl Context {
    /// Defaults, then `--config`, then `--set`, then grid flags.
    pub fn resolve(common: &Common) -> Result<Self, CliError> {
        let mut config = Config::default();
        if let Some(path) = &common.config {
            config.apply_file(path)?;
        }
        for assignment in &common.overrides {
            config.apply_override(assignment)?;
        }
        let mut grid = GridSpec::default();
        if let Some(g) = common.grid {
            grid.lambda_points = g.lambda_points;
            grid.n_points = g.n_points;
        }
        if let Some(r) = common.refine {
            grid.refine_stages = r;
        }
        grid.validate()?;
        let exec = if common.sequential { Execution::Sequential } else { Execution::Parallel };
        Ok(Self { config: config.validate()?, settings: SolveSettings { grid, exec }, out: common.out.clone() })
    }
}

/// Record of one run, written next to its artifacts.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub command: Command,
    pub params: ModelParams,
    pub policy: PolicyConfig,
    pub grid: GridSpec,
    pub exec: Execution,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub duration_secs: f64,
}

/// Result of a subcommand: the JSON printed on stdout plus extra files.
struct Output {
    stdout: Value,
    files: Vec<(String, Vec<u8>)>,
    seed: Option<u64>,
}

impl Output {
    fn json(stdout: Value) -> Self {
        Self { stdout, files: Vec::new(), seed: None }
    }

    fn file(mut self, name: impl Into<String>, contents: Vec<u8>) -> Self {
        self.files.push((name.into(), contents));
        self
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s.into_bytes()
}

fn csv_bytes<I, R>(header: &[&str], records: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in records {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn table_csv(table: &SweepTable) -> Vec<u8> {
    csv_bytes(&table.header(), table.records())
}

/// Runs a parsed command line, printing JSON to stdout.
pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Rerun(args) => rerun(&args),
        command => {
            let common = command.common().expect("model subcommand").clone();
            let ctx = Context::resolve(&common)?;
            execute(command, ctx)
        }
    }
}

fn rerun(args: &RerunArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.manifest).map_err(|e| CliError::io(&args.manifest, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", args.manifest.display())))?;
    m.grid.validate()?;
    let config = Config { params: m.params, policy: m.policy }.validate()?;
    let ctx = Context { config, settings: SolveSettings { grid: m.grid, exec: m.exec }, out: args.out.clone() };
    execute(m.command, ctx)
}

fn execute(command: Command, mut ctx: Context) -> Result<(), CliError> {
    let started = Instant::now();
    let output = match &command {
        Command::Solve(a) => solve(a, &mut ctx),
        Command::QueueEval(a) => queue_eval(a, &mut ctx),
        Command::SweepK(a) => sweep_k(a, &ctx),
        Command::SweepTax(a) => sweep_tax(a, &mut ctx),
        Command::FindRhat(a) => find_rhat(a, &ctx),
        Command::Sensitivity(a) => sensitivity(a, &ctx),
        Command::Simulate(a) => simulate(a, &mut ctx),
        Command::CalibrateTheta(a) => calibrate(a, &ctx),
        Command::Rerun(_) => unreachable!("rerun is resolved before execution"),
    }?;
    let duration_secs = started.elapsed().as_secs_f64();
    print!("{}", String::from_utf8(pretty(&output.stdout)).expect("JSON is UTF-8"));

    if let Some(dir) = &ctx.out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut outputs = Vec::new();
        for (name, bytes) in std::iter::once(("summary.json".to_string(), pretty(&output.stdout))).chain(output.files) {
            let path = dir.join(&name);
            fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
            outputs.push(name);
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: command.name().into(),
            command,
            params: ctx.config.params.clone(),
            policy: ctx.config.policy.clone(),
            grid: ctx.settings.grid.clone(),
            exec: ctx.settings.exec,
            seed: output.seed,
            outputs,
            duration_secs,
        };
        let path = dir.join(MANIFEST);
        fs::write(&path, pretty(&to_json(&manifest))).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

fn solve(a: &SolveArgs, ctx: &mut Context) -> Result<Output, CliError> {
    if let Some(k) = a.k {
        ctx.config.set("k", k as f64)?;
    }
    if let Some(t) = a.tax {
        ctx.config.set("p_tax", t)?;
    }
    ctx.config = ctx.config.clone().validate()?;
    let Config { params, policy } = &ctx.config;
    let outcome = match a.at {
        Some(Pair(lambda, n)) => market::evaluate(lambda, n, policy, params)?,
        None => market::maximize_profit(policy, params, &ctx.settings.grid, ctx.settings.exec)?,
    };
    let v = to_json(&outcome);
    Ok(Output::json(v.clone()).file("outcome.json", pretty(&v)))
}

fn queue_eval(a: &QueueEvalArgs, ctx: &mut Context) -> Result<Output, CliError> {
    if let Some(k) = a.k {
        ctx.config.set("k", k as f64)?;
    }
    let Config { params, policy } = &ctx.config;
    let m = a.m.unwrap_or_else(|| policy.charger_supply(params));
    let t_delivery = queueing::delivery_time(policy.k, params);
    let roots = queueing::solve_idle_couriers(a.lambda, a.n, t_delivery, params)?;
    let q = QueueSolution::solve(a.lambda, a.n, policy.k, m, params)?;
    Ok(Output::json(json!({
        "k": policy.k,
        "chargers": m,
        "idle_roots": { "larger": roots.larger, "smaller": roots.smaller },
        "queue": q,
        "minutes": {
            "t_response": q.t_response * 60.0,
            "t_pickup": q.t_pickup * 60.0,
            "t_delivery": q.t_delivery * 60.0,
            "t_wait": q.t_wait * 60.0,
        },
    })))
}

fn k_range(r: KRange) -> std::ops::RangeInclusive<u32> {
    r.start..=r.end
}

fn sweep_k(a: &SweepKArgs, ctx: &Context) -> Result<Output, CliError> {
    let Config { params, policy } = &ctx.config;
    let (table, summary) = policy::sweep_k(k_range(a.k), params, policy, &ctx.settings)?;
    let infeasible: Vec<Value> =
        table.rows.iter().filter(|r| !r.feasible()).map(|r| json!({ "k": r.k, "status": r.status })).collect();
    let stdout = json!({ "k_range": [a.k.start, a.k.end], "summary": summary, "infeasible": infeasible });
    Ok(Output::json(stdout).file("sweep_k.csv", table_csv(&table)))
}

fn tax_search(a: &TaxSearchArgs) -> TaxSearch {
    TaxSearch { k_range: k_range(a.k_range), window: a.window }
}

fn sweep_tax(a: &SweepTaxArgs, ctx: &mut Context) -> Result<Output, CliError> {
    if let Some(r) = a.r {
        ctx.config.set("charger_cost", r)?;
    }
    ctx.config = ctx.config.clone().validate()?;
    let Config { params, policy } = &ctx.config;
    let pts = policy::tax_grid(a.pt.start, a.pt.end, a.pt.step);
    let (table, summary) = policy::stackelberg_tax(&pts, params, policy, &tax_search(&a.search), &ctx.settings)?;
    let occupancy: Vec<Value> = policy::occupancy_response(&table, params, policy.charger_cost)
        .iter()
        .map(|p| {
            let mut v = to_json(p);
            v["analytic"] = json!(p.analytic());
            v
        })
        .collect();
    let binding: Vec<f64> =
        table.rows.iter().filter(|r| r.feasible() && r.viability_binding).map(|r| r.p_tax).collect();
    let stdout = json!({ "summary": summary, "viability_binding_p_tax": binding, "occupancy": occupancy });
    Ok(Output::json(stdout).file("sweep_tax.csv", table_csv(&table)))
}

fn find_rhat(a: &FindRhatArgs, ctx: &Context) -> Result<Output, CliError> {
    let Config { params, policy } = &ctx.config;
    let pts = policy::tax_grid(a.pt.start, a.pt.end, a.pt.step);
    let Pair(lo, hi) = a.bracket;
    let t = policy::find_r_threshold(params, policy, &pts, (lo, hi), a.tol, &tax_search(&a.search), &ctx.settings)?;
    Ok(Output::json(to_json(&t)))
}

fn sensitivity(a: &SensitivityArgs, ctx: &Context) -> Result<Output, CliError> {
    let Config { params, policy } = &ctx.config;
    let names: Vec<&str> = if a.params.is_empty() {
        policy::SENSITIVITY_PARAMETERS.to_vec()
    } else {
        a.params.iter().map(String::as_str).collect()
    };
    if let Some(bad) = names.iter().find(|n| !ModelParams::FIELDS.contains(n)) {
        return Err(ParamError::UnknownKey(bad.to_string()).into());
    }
    let cells = policy::sensitivity_batch(&names, &a.factors, params, policy, k_range(a.k), &ctx.settings)?;
    let mut output = Output::json(Value::Null);
    let mut summary = Vec::new();
    for &name in &names {
        let mine: Vec<_> = cells.iter().filter(|c| c.parameter == name).collect();
        let mut header = vec!["factor", "value"];
        let mut records = Vec::new();
        for c in &mine {
            if header.len() == 2 && !c.table.rows.is_empty() {
                header.extend(c.table.header());
            }
            for rec in c.table.records() {
                records.push([vec![c.factor.to_string(), c.value.to_string()], rec].concat());
            }
            let ordered = c.summary.as_ref().map(|s| s.k_star_n < s.k_star_lambda && s.k_star_lambda < s.k_star_profit);
            summary.push(json!({
                "parameter": c.parameter,
                "factor": c.factor,
                "value": c.value,
                "summary": c.summary,
                "error": c.error,
                "ordering_n_lambda_profit": ordered,
                "lambda_unimodal": c.lambda_unimodal(),
                "n_unimodal": c.n_unimodal(),
            }));
        }
        if header.len() == 2 {
            header.extend(SweepTable { variable: policy::SweepVariable::K, rows: Vec::new() }.header());
        }
        output = output.file(format!("sensitivity_{name}.csv"), csv_bytes(&header, records));
    }
    output.stdout = json!({ "cells": summary });
    Ok(output)
}

#[derive(Serialize)]
struct Stage {
    simulated: f64,
    ci_halfwidth: f64,
    analytic: f64,
    within_ci: bool,
}

impl Stage {
    fn new(sim: &SimResult, analytic: f64) -> Self {
        Self { simulated: sim.mean, ci_halfwidth: sim.ci_halfwidth, analytic, within_ci: sim.contains(analytic) }
    }
}

fn simulate(a: &SimulateArgs, ctx: &mut Context) -> Result<Output, CliError> {
    if let Some(k) = a.k {
        ctx.config.set("k", k as f64)?;
    }
    let Config { params, policy } = &ctx.config;
    let m = a.m.unwrap_or_else(|| policy.charger_supply(params));
    let (lambda, n) = match (a.lambda, a.n) {
        (Some(l), Some(n)) => (l, n),
        (l, n) => {
            let o = market::maximize_profit(policy, params, &ctx.settings.grid, ctx.settings.exec)?;
            (l.unwrap_or(o.lambda), n.unwrap_or(o.n.round() as u32))
        }
    };
    let q = QueueSolution::solve(lambda, n as f64, policy.k, m, params)?;
    let servers = desim::station_servers(m, policy.k);
    let lam_station = lambda / policy.k as f64;
    let mut erlang = 0.0;
    for &s in &servers {
        erlang += queueing::erlang_c_wait(lam_station, params.t_charge, s)?;
    }
    let t_wait_integer = erlang / servers.len() as f64;
    let sim = SimConfig {
        arrival_rate: lambda,
        servers: n,
        mean_service: q.t_pickup + q.t_delivery,
        warmup: a.warmup.unwrap_or(a.customers / 5),
        horizon: a.customers,
        replications: a.replications,
        seed: a.seed,
    };
    let r = desim::simulate_network(lambda, n, policy.k, m, params, &sim, a.pickup.into(), ctx.settings.exec)?;
    let stdout = json!({
        "units": "hours",
        "lambda": lambda,
        "n": n,
        "k": policy.k,
        "chargers": m,
        "pickup": a.pickup,
        "customers": sim.horizon,
        "warmup": sim.warmup,
        "replications": sim.replications,
        "seed": sim.seed,
        "stages": {
            "t_response": Stage::new(&r.t_response, q.t_response),
            "t_pickup": Stage::new(&r.t_pickup, q.t_pickup),
            "t_wait": Stage::new(&r.t_wait, q.t_wait),
            "rho_d": Stage::new(&r.rho_d, q.rho_d),
            "rho_c": Stage::new(&r.rho_c, lambda * params.t_charge / servers.iter().sum::<u32>() as f64),
            "busy_couriers": Stage::new(&r.busy_couriers, r.little_busy.mean),
        },
        "t_wait_integer_servers": {
            "analytic": t_wait_integer,
            "within_ci": r.t_wait.contains(t_wait_integer),
        },
    });
    let mut out = Output::json(stdout);
    out.seed = Some(a.seed);
    Ok(out)
}

fn calibrate(a: &CalibrateArgs, ctx: &Context) -> Result<Output, CliError> {
    let c =
        params::calibrate_theta(ctx.config.params.area, k_range(a.k), a.speed, a.samples, a.seed, ctx.settings.exec)?;
    let records = c.points.iter().map(|p| {
        [
            p.k.to_string(),
            p.zone_side.to_string(),
            p.travel_time.to_string(),
            (c.intercept + c.theta * p.zone_side).to_string(),
        ]
    });
    let table = csv_bytes(&["k", "zone_side_km", "travel_time_hr", "fitted_hr"], records);
    let stdout = json!({
        "theta": c.theta,
        "theta_stderr": c.theta_stderr,
        "theta_theory": 1.0 / (2.0 * c.speed),
        "intercept": c.intercept,
        "r_squared": c.r_squared,
        "residual_trend": c.residual_trend,
        "residual_trend_stderr": c.residual_trend_stderr,
        "speed": c.speed,
        "samples": c.samples,
        "seed": c.seed,
    });
    let mut out = Output::json(stdout).file("calibration.csv", table);
    out.seed = Some(a.seed);
    Ok(out)
}
