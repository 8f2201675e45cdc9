//! Policy studies: station-density sweeps, the tax-and-invest leader/follower
//! sweep, the charger-cost threshold search and sensitivity batches.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::Serialize;
use thiserror::Error;

use crate::econ;
use crate::exec::Execution;
use crate::market::{GridSpec, MarketError, MarketModel, MarketOutcome};
use crate::params::{ModelParams, ParamError, PolicyConfig};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("no feasible policy point in the sweep")]
    NoFeasiblePoint,
    #[error("threshold predicate does not change sign over [{lo}, {hi}] (true at lo: {at_lo}, true at hi: {at_hi})")]
    Bracket { lo: f64, hi: f64, at_lo: bool, at_hi: bool },
    #[error("untaxed platform is unprofitable (profit {0:.2} HK$/hr); the threshold is undefined")]
    UnprofitableBaseline(f64),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// Solver settings shared by all studies.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveSettings {
    pub grid: GridSpec,
    pub exec: Execution,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    K,
    PTax,
}

/// One policy point. `outcome` is present iff the point is feasible (and
/// viable under a tax); otherwise `status` explains why not.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: u32,
    pub p_tax: f64,
    pub outcome: Option<MarketOutcome>,
    pub status: Option<String>,
    /// Tax sweep only: a neighbouring station count was unviable, so the
    /// break-even requirement (not demand) determined K*.
    pub viability_binding: bool,
}

impl SweepRow {
    fn from_result(k: u32, p_tax: f64, r: Result<MarketOutcome, MarketError>) -> Self {
        match r {
            Ok(o) => Self { k, p_tax, outcome: Some(o), status: None, viability_binding: false },
            Err(e) => Self { k, p_tax, outcome: None, status: Some(e.to_string()), viability_binding: false },
        }
    }

    pub fn feasible(&self) -> bool {
        self.outcome.is_some()
    }
}

/// Rows ordered by the swept variable.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub variable: SweepVariable,
    pub rows: Vec<SweepRow>,
}

const MINUTES: f64 = 60.0;

impl SweepTable {
    /// Column names. Times are in minutes; money in HK$ (per hour for flows).
    pub fn header(&self) -> Vec<&'static str> {
        let (swept, other) = match self.variable {
            SweepVariable::K => ("k", "p_tax"),
            SweepVariable::PTax => ("p_tax", "k"),
        };
        vec![
            swept,
            "lambda",
            "n",
            "price",
            "wage",
            "profit",
            "customer_surplus",
            "courier_surplus",
            "social_welfare",
            "ev_penetration",
            "lerner",
            "marginal_cost",
            "t_r_min",
            "t_p_min",
            "t_d_min",
            "t_w_min",
            "rho_d",
            "rho_c",
            "feasible",
            other,
            "chargers",
        ]
    }

    /// One string record per row, in [`SweepTable::header`] order.
    pub fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let (swept, other) = match self.variable {
                    SweepVariable::K => (r.k.to_string(), r.p_tax.to_string()),
                    SweepVariable::PTax => (r.p_tax.to_string(), r.k.to_string()),
                };
                let mut rec = vec![swept];
                match &r.outcome {
                    Some(o) => {
                        let q = &o.queue;
                        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                        rec.extend([
                            o.lambda.to_string(),
                            o.n.to_string(),
                            o.price.to_string(),
                            o.wage.to_string(),
                            o.profit.to_string(),
                            o.customer_surplus.to_string(),
                            o.courier_surplus.to_string(),
                            o.social_welfare.to_string(),
                            o.ev_penetration.to_string(),
                            opt(o.lerner()),
                            opt(o.marginal_cost()),
                            (q.t_response * MINUTES).to_string(),
                            (q.t_pickup * MINUTES).to_string(),
                            (q.t_delivery * MINUTES).to_string(),
                            (q.t_wait * MINUTES).to_string(),
                            q.rho_d.to_string(),
                            q.rho_c.to_string(),
                            "true".into(),
                            other,
                            o.chargers.to_string(),
                        ]);
                    }
                    None => {
                        rec.extend(std::iter::repeat_n(String::new(), 17));
                        rec.extend(["false".into(), other, String::new()]);
                    }
                }
                rec
            })
            .collect()
    }

    pub fn feasible(&self) -> impl Iterator<Item = (&SweepRow, &MarketOutcome)> {
        self.rows.iter().filter_map(|r| r.outcome.as_ref().map(|o| (r, o)))
    }
}

/// First row maximizing `key` (rows are ordered, so ties go to the smaller
/// swept value).
fn argmax(table: &SweepTable, key: impl Fn(&MarketOutcome) -> f64) -> Option<(&SweepRow, &MarketOutcome)> {
    table.feasible().fold(None, |best, (r, o)| match best {
        Some((_, b)) if key(o) <= key(b) => best,
        _ => Some((r, o)),
    })
}

/// Station counts preferred by couriers, customers, the platform and society.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanningSummary {
    pub k_star_n: u32,
    pub k_star_lambda: u32,
    pub k_star_profit: u32,
    pub k_star_welfare: u32,
    pub peak_n: f64,
    pub peak_lambda: f64,
    pub peak_profit: f64,
    pub peak_welfare: f64,
    /// EV penetration at K*_λ.
    pub ev_penetration_at_k_star_lambda: f64,
    /// EV penetration without valet service.
    pub baseline_ev_penetration: f64,
    pub lerner_at_k_star_lambda: Option<f64>,
    pub k_min: u32,
    pub k_max: u32,
}

impl PlanningSummary {
    pub fn from_table(table: &SweepTable, params: &ModelParams) -> Option<Self> {
        let (rn, on) = argmax(table, |o| o.n)?;
        let (rl, ol) = argmax(table, |o| o.lambda)?;
        let (rp, op) = argmax(table, |o| o.profit)?;
        let (rw, ow) = argmax(table, |o| o.social_welfare)?;
        Some(Self {
            k_star_n: rn.k,
            k_star_lambda: rl.k,
            k_star_profit: rp.k,
            k_star_welfare: rw.k,
            peak_n: on.n,
            peak_lambda: ol.lambda,
            peak_profit: op.profit,
            peak_welfare: ow.social_welfare,
            ev_penetration_at_k_star_lambda: ol.ev_penetration,
            baseline_ev_penetration: econ::baseline_penetration(params),
            lerner_at_k_star_lambda: ol.lerner(),
            k_min: table.rows.first().map_or(0, |r| r.k),
            k_max: table.rows.last().map_or(0, |r| r.k),
        })
    }
}

fn solve_k(k: u32, params: &ModelParams, base: &PolicyConfig, settings: &SolveSettings) -> SweepRow {
    let policy = PolicyConfig { k, ..base.clone() };
    let result =
        MarketModel::new(params.clone(), policy).and_then(|m| m.maximize_profit(&settings.grid, settings.exec));
    SweepRow::from_result(k, base.p_tax, result)
}

fn sweep_rows(ks: &[u32], params: &ModelParams, base: &PolicyConfig, settings: &SolveSettings) -> Vec<SweepRow> {
    settings.exec.map(ks, |&k| solve_k(k, params, base, settings))
}

/// Solves the platform problem for every K in `ks` at the base policy's tax.
pub fn sweep_k(
    ks: RangeInclusive<u32>,
    params: &ModelParams,
    base: &PolicyConfig,
    settings: &SolveSettings,
) -> Result<(SweepTable, PlanningSummary), PolicyError> {
    let ks: Vec<u32> = ks.filter(|&k| k >= 1).collect();
    if ks.is_empty() {
        return Err(PolicyError::Empty("K range"));
    }
    let table = SweepTable { variable: SweepVariable::K, rows: sweep_rows(&ks, params, base, settings) };
    let summary = PlanningSummary::from_table(&table, params).ok_or(PolicyError::NoFeasiblePoint)?;
    Ok((table, summary))
}

/// Like [`sweep_k`], but widens the range while any argmax sits on its edge.
/// Growth is by half the current span, up to `k_cap`.
pub fn sweep_k_adaptive(
    ks: RangeInclusive<u32>,
    k_cap: u32,
    params: &ModelParams,
    base: &PolicyConfig,
    settings: &SolveSettings,
) -> Result<(SweepTable, PlanningSummary), PolicyError> {
    let (mut table, mut summary) = sweep_k(ks, params, base, settings)?;
    for _ in 0..8 {
        let stars = [summary.k_star_n, summary.k_star_lambda, summary.k_star_profit, summary.k_star_welfare];
        let (lo, hi) = (summary.k_min, summary.k_max);
        let grow = ((hi - lo) / 2).max(5);
        let mut extra: Vec<u32> = Vec::new();
        if stars.contains(&lo) && lo > 1 {
            extra.extend(lo.saturating_sub(grow).max(1)..lo);
        }
        if stars.contains(&hi) && hi < k_cap {
            extra.extend(hi + 1..=(hi + grow).min(k_cap));
        }
        if extra.is_empty() {
            break;
        }
        table.rows.extend(sweep_rows(&extra, params, base, settings));
        table.rows.sort_by_key(|r| r.k);
        summary = PlanningSummary::from_table(&table, params).ok_or(PolicyError::NoFeasiblePoint)?;
    }
    Ok((table, summary))
}

/// Searches K*(p_t) = argmax_K λ*(p_t, K) among viable K.
struct KStarSearch<'a> {
    params: &'a ModelParams,
    base: &'a PolicyConfig,
    settings: &'a SolveSettings,
    /// Initial scan range when no hint is available.
    k_range: RangeInclusive<u32>,
    window: u32,
}

const K_CAP: u32 = 5000;

impl KStarSearch<'_> {
    fn solve(&self, p_tax: f64, hint: Option<u32>) -> SweepRow {
        let base = PolicyConfig { p_tax, ..self.base.clone() };
        let (mut lo, mut hi) = match hint {
            Some(h) => (h.saturating_sub(self.window).max(1), h + self.window),
            None => (*self.k_range.start(), *self.k_range.end()),
        };
        let mut cache: BTreeMap<u32, SweepRow> = BTreeMap::new();
        loop {
            let missing: Vec<u32> = (lo..=hi).filter(|k| !cache.contains_key(k)).collect();
            for row in sweep_rows(&missing, self.params, &base, self.settings) {
                cache.insert(row.k, row);
            }
            let best = cache.range(lo..=hi).filter_map(|(&k, r)| r.outcome.as_ref().map(|o| (k, o.lambda))).fold(
                None,
                |b: Option<(u32, f64)>, (k, l)| match b {
                    Some((_, bl)) if l <= bl => b,
                    _ => Some((k, l)),
                },
            );
            match best {
                None => {
                    let status = cache.range(lo..=hi).next_back().and_then(|(_, r)| r.status.clone());
                    return SweepRow {
                        k: hint.unwrap_or(lo),
                        p_tax,
                        outcome: None,
                        viability_binding: true,
                        status: Some(format!(
                            "no viable K in [{lo}, {hi}]{}",
                            status.map(|s| format!(": {s}")).unwrap_or_default()
                        )),
                    };
                }
                Some((k, _)) if k == lo && lo > 1 => lo = lo.saturating_sub(self.window).max(1),
                Some((k, _)) if k == hi && hi < K_CAP => hi = (hi + self.window).min(K_CAP),
                Some((k, _)) => {
                    let unviable = |j: u32| cache.get(&j).is_some_and(|r| r.outcome.is_none());
                    let binding = unviable(k + 1) || (k > 1 && unviable(k - 1));
                    let mut row = cache.remove(&k).expect("cached");
                    row.viability_binding = binding;
                    return row;
                }
            }
        }
    }
}

/// The regulator's view of one tax sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaxSummary {
    pub charger_cost: f64,
    pub p_star_lambda: f64,
    pub p_star_welfare: f64,
    /// (p_t, K*(p_t)); K* is absent where the platform is unviable.
    pub k_star_of_pt: Vec<(f64, Option<u32>)>,
    pub k_star_untaxed: u32,
    pub k_star_at_p_star: u32,
    pub lambda_untaxed: f64,
    pub lambda_at_p_star: f64,
    /// Relative demand gain at p*_{t,λ}.
    pub demand_gain: f64,
    pub added_chargers: f64,
    pub price_untaxed: f64,
    pub price_at_p_star: f64,
    pub profit_untaxed: f64,
    pub profit_at_p_star: f64,
    /// Relative profit change at p*_{t,λ} (negative for a decline).
    pub profit_change: f64,
    pub lerner_untaxed: Option<f64>,
    pub lerner_at_p_star: Option<f64>,
}

/// Tax sweep settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaxSearch {
    /// K range scanned for the untaxed K* (and whenever no hint exists).
    pub k_range: RangeInclusive<u32>,
    /// Half-width of the warm-started K window around the previous K*.
    pub window: u32,
}

impl Default for TaxSearch {
    fn default() -> Self {
        Self { k_range: 20..=120, window: 3 }
    }
}

/// `start:end:step` grid, inclusive of `end` up to rounding.
pub fn tax_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || end < start {
        return Vec::new();
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    // Round to the step's decimal resolution so 13.2 is exactly 13.2.
    (0..=n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect()
}

/// Leader/follower tax sweep: for each p_t the platform's response is solved
/// at K*(p_t), the station count maximizing demand.
pub fn stackelberg_tax(
    pts: &[f64],
    params: &ModelParams,
    base: &PolicyConfig,
    search: &TaxSearch,
    settings: &SolveSettings,
) -> Result<(SweepTable, TaxSummary), PolicyError> {
    if pts.is_empty() {
        return Err(PolicyError::Empty("tax grid"));
    }
    base.clone().validate()?;
    let ks = KStarSearch { params, base, settings, k_range: search.k_range.clone(), window: search.window };
    let untaxed = ks.solve(0.0, None);
    let untaxed_k = untaxed.outcome.as_ref().map(|o| o.k);
    let mut hint = untaxed_k;
    let mut rows = Vec::with_capacity(pts.len());
    let mut sorted = pts.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &pt in &sorted {
        let row = if pt == 0.0 { untaxed.clone() } else { ks.solve(pt, hint) };
        if let Some(o) = &row.outcome {
            hint = Some(o.k);
        }
        rows.push(row);
    }
    let table = SweepTable { variable: SweepVariable::PTax, rows };
    let u = untaxed.outcome.as_ref().ok_or(PolicyError::NoFeasiblePoint)?;
    let (rl, ol) = argmax(&table, |o| o.lambda).ok_or(PolicyError::NoFeasiblePoint)?;
    let (rw, _) = argmax(&table, |o| o.social_welfare).ok_or(PolicyError::NoFeasiblePoint)?;
    let summary = TaxSummary {
        charger_cost: base.charger_cost,
        p_star_lambda: rl.p_tax,
        p_star_welfare: rw.p_tax,
        k_star_of_pt: table.rows.iter().map(|r| (r.p_tax, r.outcome.as_ref().map(|o| o.k))).collect(),
        k_star_untaxed: u.k,
        k_star_at_p_star: ol.k,
        lambda_untaxed: u.lambda,
        lambda_at_p_star: ol.lambda,
        demand_gain: ol.lambda / u.lambda - 1.0,
        added_chargers: ol.added_chargers,
        price_untaxed: u.price,
        price_at_p_star: ol.price,
        profit_untaxed: u.profit,
        profit_at_p_star: ol.profit,
        profit_change: ol.profit / u.profit - 1.0,
        lerner_untaxed: u.lerner(),
        lerner_at_p_star: ol.lerner(),
    };
    Ok((table, summary))
}

/// Result of [`find_r_threshold`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RThreshold {
    pub r_hat: f64,
    /// Final bracket: predicate true at `lo`, false at `hi`.
    pub lo: f64,
    pub hi: f64,
    pub lambda_untaxed: f64,
    pub k_star_untaxed: u32,
    /// Every (r, predicate) evaluation in order.
    pub evaluations: Vec<(f64, bool)>,
}

/// Whether some positive tax on `pts` raises maximal demand above the untaxed
/// level when chargers cost `r`.
fn tax_helps(
    r: f64,
    untaxed: &MarketOutcome,
    pts: &[f64],
    params: &ModelParams,
    base: &PolicyConfig,
    search: &TaxSearch,
    settings: &SolveSettings,
) -> bool {
    let base = PolicyConfig { charger_cost: r, ..base.clone() };
    let ks = KStarSearch { params, base: &base, settings, k_range: search.k_range.clone(), window: search.window };
    let mut hint = Some(untaxed.k);
    for &pt in pts.iter().filter(|&&p| p > 0.0) {
        let row = ks.solve(pt, hint);
        if let Some(o) = &row.outcome {
            if o.lambda > untaxed.lambda {
                return true;
            }
            hint = Some(o.k);
        }
    }
    false
}

/// Bisection for the per-charger cost r̂ below which taxation can expand the
/// market. The predicate must be true at the lower end of `bracket` and false
/// at the upper end.
pub fn find_r_threshold(
    params: &ModelParams,
    base: &PolicyConfig,
    pts: &[f64],
    bracket: (f64, f64),
    tol: f64,
    search: &TaxSearch,
    settings: &SolveSettings,
) -> Result<RThreshold, PolicyError> {
    if pts.iter().all(|&p| p <= 0.0) {
        return Err(PolicyError::Empty("positive tax grid"));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo && tol > 0.0) {
        return Err(ParamError::BadValue {
            key: "r_bracket".into(),
            reason: "expected 0 < lo < hi and tol > 0".into(),
        }
        .into());
    }
    let ks = KStarSearch { params, base, settings, k_range: search.k_range.clone(), window: search.window };
    let untaxed = ks.solve(0.0, None).outcome.ok_or(PolicyError::NoFeasiblePoint)?;
    if untaxed.profit < 0.0 {
        return Err(PolicyError::UnprofitableBaseline(untaxed.profit));
    }
    let mut evaluations = Vec::new();
    let mut pred = |r: f64| {
        let v = tax_helps(r, &untaxed, pts, params, base, search, settings);
        evaluations.push((r, v));
        v
    };
    let (at_lo, at_hi) = (pred(lo), pred(hi));
    if !at_lo || at_hi {
        return Err(PolicyError::Bracket { lo, hi, at_lo, at_hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(RThreshold {
        r_hat: 0.5 * (lo + hi),
        lo,
        hi,
        lambda_untaxed: untaxed.lambda,
        k_star_untaxed: untaxed.k,
        evaluations,
    })
}

/// One point of [`occupancy_response`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupancyPoint {
    pub p_tax: f64,
    pub rho_c: f64,
    /// Finite difference of ρ_c along the sweep.
    pub d_rho_numeric: f64,
    /// `(t_c/M)·dλ/dp_t`: more customers crowd the chargers.
    pub demand_term: f64,
    /// `−(λt_c/M²)·dM/dp_t` with `dM/dp_t = (λ + p_t·dλ/dp_t)/r`: new chargers relieve them.
    pub supply_term: f64,
}

impl OccupancyPoint {
    pub fn analytic(&self) -> f64 {
        self.demand_term + self.supply_term
    }
}

/// Occupancy response to the tax along a (viable, consecutive) tax sweep.
/// Central differences in the interior, one-sided at the ends.
pub fn occupancy_response(table: &SweepTable, params: &ModelParams, charger_cost: f64) -> Vec<OccupancyPoint> {
    let pts: Vec<&MarketOutcome> = table.rows.iter().map_while(|r| r.outcome.as_ref()).collect();
    let n = pts.len();
    if n < 2 {
        return Vec::new();
    }
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let dp = pts[b].p_tax - pts[a].p_tax;
            let dl = (pts[b].lambda - pts[a].lambda) / dp;
            let drho = (pts[b].queue.rho_c - pts[a].queue.rho_c) / dp;
            let o = pts[i];
            let m = o.chargers;
            let dm = (o.lambda + o.p_tax * dl) / charger_cost;
            OccupancyPoint {
                p_tax: o.p_tax,
                rho_c: o.queue.rho_c,
                d_rho_numeric: drho,
                demand_term: params.t_charge / m * dl,
                supply_term: -o.lambda * params.t_charge / (m * m) * dm,
            }
        })
        .collect()
}

/// Parameters perturbed in the sensitivity study.
pub const SENSITIVITY_PARAMETERS: [&str; 12] =
    ["lambda0", "n0", "m0", "coordinator_cost", "t_charge", "alpha", "beta", "theta", "phi", "eta", "eps1", "eps2"];

/// Default multiplicative perturbations (±50%).
pub const SENSITIVITY_FACTORS: [f64; 4] = [0.5, 0.75, 1.25, 1.5];

/// One perturbed planning sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityCell {
    pub parameter: String,
    pub factor: f64,
    pub value: f64,
    pub summary: Option<PlanningSummary>,
    pub error: Option<String>,
    pub table: SweepTable,
}

/// Single sign change of first differences (rise then fall, either part may
/// be empty) over the feasible rows.
pub fn is_unimodal(values: &[f64]) -> bool {
    let mut falling = false;
    for w in values.windows(2) {
        if w[1] > w[0] {
            if falling {
                return false;
            }
        } else if w[1] < w[0] {
            falling = true;
        }
    }
    true
}

impl SensitivityCell {
    pub fn lambda_unimodal(&self) -> bool {
        is_unimodal(&self.table.feasible().map(|(_, o)| o.lambda).collect::<Vec<_>>())
    }

    pub fn n_unimodal(&self) -> bool {
        is_unimodal(&self.table.feasible().map(|(_, o)| o.n).collect::<Vec<_>>())
    }
}

/// Re-runs the planning sweep with each named parameter scaled by each factor.
/// The K range widens automatically when an argmax lands on its edge.
pub fn sensitivity_batch(
    names: &[&str],
    factors: &[f64],
    params: &ModelParams,
    base: &PolicyConfig,
    ks: RangeInclusive<u32>,
    settings: &SolveSettings,
) -> Result<Vec<SensitivityCell>, PolicyError> {
    let mut jobs = Vec::new();
    for &name in names {
        for &f in factors {
            jobs.push((name, f, params.scaled(name, f)?));
        }
    }
    if jobs.is_empty() {
        return Err(PolicyError::Empty("sensitivity grid"));
    }
    Ok(settings.exec.map(&jobs, |(name, factor, p)| {
        let value = p.get(name).unwrap_or(f64::NAN);
        let result = p
            .clone()
            .validate()
            .map_err(PolicyError::from)
            .and_then(|p| sweep_k_adaptive(ks.clone(), 2000, &p, base, settings));
        match result {
            Ok((table, summary)) => SensitivityCell {
                parameter: name.to_string(),
                factor: *factor,
                value,
                summary: Some(summary),
                error: None,
                table,
            },
            Err(e) => SensitivityCell {
                parameter: name.to_string(),
                factor: *factor,
                value,
                summary: None,
                error: Some(e.to_string()),
                table: SweepTable { variable: SweepVariable::K, rows: Vec::new() },
            },
        }
    }))
}
