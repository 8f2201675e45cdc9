//! Market outcomes for a (demand, fleet) pair and the platform's
//! profit-maximizing choice.
//!
//! The platform picks demand λ and courier headcount N; price follows from
//! the inverse demand net of time costs and the wage from the inverse supply.
//! [`MarketModel::maximize_profit`] searches a certified box with a coarse
//! grid and successive local refinements.

use serde::Serialize;
use thiserror::Error;

use crate::econ::{self, EconError};
use crate::exec::Execution;
use crate::params::{ModelParams, ParamError, PolicyConfig};
use crate::queueing::{self, QueueError, QueueKind, QueueSolution};

/// Why a (λ, N) point is not an admissible market outcome.
#[derive(Clone, Debug, Error, PartialEq, Serialize)]
pub enum Infeasibility {
    #[error("no positive idle-courier root: the fleet cannot sustain this demand")]
    NoIdleCouriers,
    #[error("delivery queue unstable (rho_d = {rho:.6})")]
    DeliveryOverloaded { rho: f64 },
    #[error("charging queues unstable (rho_c = {rho:.6})")]
    ChargersOverloaded { rho: f64 },
    #[error("demand {lambda} is outside the achievable range")]
    DemandOutOfRange { lambda: f64 },
    #[error("courier count {n} is outside (0, N0)")]
    CouriersOutOfRange { n: f64 },
    #[error("price {price:.4} is not positive")]
    NonPositivePrice { price: f64 },
    #[error("no feasible (demand, fleet) pair exists")]
    EmptyFeasibleSet,
}

impl From<QueueError> for Infeasibility {
    fn from(e: QueueError) -> Self {
        match e {
            QueueError::Unstable { kind: QueueKind::Charging, rho } => Infeasibility::ChargersOverloaded { rho },
            QueueError::Unstable { rho, .. } => Infeasibility::DeliveryOverloaded { rho },
            QueueError::Infeasible | QueueError::InvalidInput(_) => Infeasibility::NoIdleCouriers,
        }
    }
}

impl From<EconError> for Infeasibility {
    fn from(e: EconError) -> Self {
        match e {
            EconError::DemandOutOfRange { lambda, .. } => Infeasibility::DemandOutOfRange { lambda },
            EconError::SupplyOutOfRange { n, .. } => Infeasibility::CouriersOutOfRange { n },
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("infeasible: {0}")]
    Infeasible(#[from] Infeasibility),
    #[error("platform unviable: best attainable profit {best_profit:.4} HK$/hr is negative")]
    Unviable { best_profit: f64 },
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Marginal cost, marginal revenue and markup at an optimum.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Marginals {
    pub marginal_cost: f64,
    pub marginal_revenue: f64,
    pub lerner: f64,
    /// Slope of the optimal fleet along the first-order locus in N.
    pub dn_dlambda: f64,
    /// ∂Π/∂N at the point (zero at an interior optimum).
    pub foc_residual: f64,
    /// False when the second-order condition in N fails.
    pub reliable: bool,
}

/// Full market record for one (λ, N) under one policy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarketOutcome {
    pub k: u32,
    pub p_tax: f64,
    pub lambda: f64,
    pub n: f64,
    pub queue: QueueSolution,
    /// Generalized valet cost (infinite when λ = 0).
    pub c_valet: f64,
    pub price: f64,
    pub wage: f64,
    pub per_time_pay: f64,
    pub per_delivery_pay: f64,
    pub profit: f64,
    pub customer_surplus: f64,
    pub courier_surplus: f64,
    pub tax_paid: f64,
    /// Profit + both surpluses + tax revenue.
    pub social_welfare: f64,
    pub ev_penetration: f64,
    pub chargers: f64,
    pub added_chargers: f64,
    pub marginals: Option<Marginals>,
}

impl MarketOutcome {
    pub fn lerner(&self) -> Option<f64> {
        self.marginals.as_ref().map(|m| m.lerner)
    }

    pub fn marginal_cost(&self) -> Option<f64> {
        self.marginals.as_ref().map(|m| m.marginal_cost)
    }

    /// `N_i − (N − 2λt_d)/3`; nonnegative on the normal-regime branch.
    pub fn idle_margin(&self) -> f64 {
        self.queue.n_idle - (self.n - 2.0 * self.lambda * self.queue.t_delivery) / 3.0
    }
}

/// Grid-search resolution.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct GridSpec {
    /// Coarse points along λ (the open box excludes λ = 0).
    pub lambda_points: usize,
    /// Coarse points along N.
    pub n_points: usize,
    /// Refinement stages; each shrinks the step tenfold.
    pub refine_stages: u32,
    /// Half-width of each refinement window in current cells.
    pub refine_window: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { lambda_points: 200, n_points: 200, refine_stages: 6, refine_window: 2 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), ParamError> {
        let bad = |key: &str, reason: &str| ParamError::BadValue { key: key.into(), reason: reason.into() };
        if self.lambda_points < 2 || self.n_points < 2 {
            return Err(bad("grid", "at least two points per axis"));
        }
        if self.refine_window == 0 {
            return Err(bad("refine_window", "must be at least 1"));
        }
        Ok(())
    }
}

/// Search box for the platform problem: λ ∈ (0, lambda_max), N ∈ (0, n_max).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SearchBox {
    pub lambda_max: f64,
    pub n_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    lambda: f64,
    n: f64,
    profit: f64,
}

impl Candidate {
    /// Higher profit wins; ties go to lower λ, then lower N.
    fn beats(&self, other: &Candidate) -> bool {
        self.profit > other.profit
            || (self.profit == other.profit
                && (self.lambda < other.lambda || (self.lambda == other.lambda && self.n < other.n)))
    }
}

fn pick(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.beats(&x) { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Everything that depends on λ only.
struct Row {
    lambda: f64,
    c_valet: f64,
    chargers: f64,
    t_wait: f64,
    /// c_v − β(2t_d + t_w): price before pre-pickup time costs.
    base_price: f64,
}

/// The market for fixed parameters and policy.
#[derive(Clone, Debug)]
pub struct MarketModel {
    params: ModelParams,
    policy: PolicyConfig,
    base_chargers: f64,
    t_delivery: f64,
}

impl MarketModel {
    pub fn new(params: ModelParams, policy: PolicyConfig) -> Result<Self, MarketError> {
        let params = params.validate()?;
        let policy = policy.validate()?;
        let base_chargers = policy.charger_supply(&params);
        let t_delivery = queueing::delivery_time(policy.k, &params);
        Ok(Self { params, policy, base_chargers, t_delivery })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn policy(&self) -> &PolicyConfig {
        &self.policy
    }

    /// Effective charger supply, nominal plus tax-funded chargers `λp_t/r`.
    pub fn chargers(&self, lambda: f64) -> f64 {
        self.base_chargers + lambda * self.policy.p_tax / self.policy.charger_cost
    }

    fn fixed_cost(&self) -> f64 {
        self.policy.k as f64 * self.params.coordinator_cost
    }

    fn row(&self, lambda: f64) -> Result<Row, Infeasibility> {
        let c_valet = econ::inverse_demand(lambda, &self.params)?;
        let chargers = self.chargers(lambda);
        let t_wait = queueing::charging_wait(lambda, self.policy.k, chargers, self.params.t_charge)?;
        let base_price = c_valet - self.params.beta * (2.0 * self.t_delivery + t_wait);
        Ok(Row { lambda, c_valet, chargers, t_wait, base_price })
    }

    /// Idle couriers, pickup and response times at a row's λ.
    fn delivery(&self, lambda: f64, n: f64) -> Result<(f64, f64, f64), Infeasibility> {
        let n_idle = queueing::solve_idle_couriers(lambda, n, self.t_delivery, &self.params)?.larger;
        let t_pickup = queueing::pickup_time(n_idle, &self.params);
        let t_response = queueing::response_time(lambda, n, t_pickup, self.t_delivery)?;
        Ok((n_idle, t_pickup, t_response))
    }

    fn price(&self, row: &Row, t_pickup: f64, t_response: f64) -> Result<f64, Infeasibility> {
        let price = row.base_price - self.params.alpha * (t_response + t_pickup);
        if price > 0.0 {
            Ok(price)
        } else {
            Err(Infeasibility::NonPositivePrice { price })
        }
    }

    fn labour_cost(&self, n: f64) -> Result<f64, Infeasibility> {
        Ok(n * econ::inverse_supply(n, &self.params)?)
    }

    fn row_profit(&self, row: &Row, n: f64, labour: f64) -> Result<f64, Infeasibility> {
        let (_, t_pickup, t_response) = self.delivery(row.lambda, n)?;
        let price = self.price(row, t_pickup, t_response)?;
        Ok(row.lambda * (price - self.policy.p_tax) - labour - self.fixed_cost())
    }

    /// Profit at (λ, N) with λ > 0, via the same arithmetic as the grid search.
    pub fn profit(&self, lambda: f64, n: f64) -> Result<f64, Infeasibility> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Infeasibility::DemandOutOfRange { lambda });
        }
        let labour = self.labour_cost(n)?;
        self.row_profit(&self.row(lambda)?, n, labour)
    }

    /// Price at (λ, N) with λ > 0.
    pub fn price_at(&self, lambda: f64, n: f64) -> Result<f64, Infeasibility> {
        econ::inverse_supply(n, &self.params)?;
        let row = self.row(lambda)?;
        let (_, t_pickup, t_response) = self.delivery(lambda, n)?;
        self.price(&row, t_pickup, t_response)
    }

    /// Full market outcome at (λ, N). Marginals are not computed here.
    pub fn evaluate(&self, lambda: f64, n: f64) -> Result<MarketOutcome, MarketError> {
        let p = &self.params;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Infeasibility::DemandOutOfRange { lambda }.into());
        }
        let wage = econ::inverse_supply(n, p).map_err(Infeasibility::from)?;
        let k = self.policy.k;
        let (c_valet, price, queue, chargers) = if lambda == 0.0 {
            let m = self.chargers(0.0);
            let q = QueueSolution::from_idle(0.0, n, k, m, n, self.t_delivery, p).map_err(Infeasibility::from)?;
            (f64::INFINITY, f64::INFINITY, q, m)
        } else {
            let row = self.row(lambda)?;
            let (n_idle, t_pickup, t_response) = self.delivery(lambda, n)?;
            let price = self.price(&row, t_pickup, t_response)?;
            let queue = QueueSolution {
                lambda,
                couriers: n,
                n_idle,
                t_response,
                t_pickup,
                t_delivery: self.t_delivery,
                t_wait: row.t_wait,
                rho_d: 2.0 * lambda * (t_pickup + self.t_delivery) / n,
                rho_c: lambda * p.t_charge / row.chargers,
                servers_per_station: row.chargers / k as f64,
                lambda_delivery: 2.0 * lambda,
                lambda_station: lambda / k as f64,
            };
            (row.c_valet, price, queue, row.chargers)
        };
        let revenue = if lambda == 0.0 { 0.0 } else { lambda * (price - self.policy.p_tax) };
        let profit = revenue - n * wage - self.fixed_cost();
        let customer_surplus = econ::customer_surplus(c_valet, p);
        let courier_surplus = econ::courier_surplus(wage, p);
        let tax_paid = lambda * self.policy.p_tax;
        let per_delivery_pay = wage * n / (2.0 * lambda);
        Ok(MarketOutcome {
            k,
            p_tax: self.policy.p_tax,
            lambda,
            n,
            c_valet,
            price,
            wage,
            per_time_pay: per_delivery_pay / (queue.t_pickup + queue.t_delivery),
            per_delivery_pay,
            profit,
            customer_surplus,
            courier_surplus,
            tax_paid,
            social_welfare: profit + customer_surplus + courier_surplus + tax_paid,
            ev_penetration: econ::demand(c_valet, p).p_ev,
            chargers,
            added_chargers: chargers - self.base_chargers,
            queue,
            marginals: None,
        })
    }

    /// Box that provably contains every profit maximizer.
    ///
    /// λ is capped by the zero-cost demand (price must be positive), charger
    /// capacity and delivery capacity with N < N₀. N is capped where labour
    /// cost N·w(N) exceeds an upper bound on revenue λ·c_v(λ): beyond it profit
    /// is below −K·C, which points near the origin already approach.
    pub fn search_box(&self, lambda_points: usize) -> SearchBox {
        let p = &self.params;
        let mut lambda_max = econ::demand(0.0, p).lambda;
        let slack = p.t_charge - self.policy.p_tax / self.policy.charger_cost;
        if slack > 0.0 {
            lambda_max = lambda_max.min(self.base_chargers / slack);
        }
        lambda_max = lambda_max.min(p.n0 / (2.0 * self.t_delivery));

        // Revenue bound: c_v is decreasing, so on [λ_i, λ_{i+1}] λ·c_v(λ) ≤ λ_{i+1}·c_v(λ_i).
        // On the first cell use c_v ≤ c_s + ln(τλ₀/λ)/ε₂, whose product with λ
        // increases for λ < τλ₀/e.
        let step = lambda_max / lambda_points as f64;
        let tl0 = econ::max_demand(p);
        let first = step.min(tl0 / std::f64::consts::E);
        let mut revenue_bound = first * (p.c_self + (tl0 / first).ln() / p.eps2);
        for i in 1..lambda_points {
            let lo = i as f64 * step;
            if let Ok(c) = econ::inverse_demand(lo, p) {
                revenue_bound = revenue_bound.max((lo + step) * c);
            }
        }
        let n_max = if revenue_bound <= 0.0 {
            p.n0
        } else {
            let excess = |n: f64| n * econ::inverse_supply(n, p).unwrap_or(f64::INFINITY) - revenue_bound;
            let top = p.n0 * (1.0 - 1e-12);
            let mut lo = p.n0.min(1.0) * 0.5;
            while excess(lo) >= 0.0 && lo > 1e-300 {
                lo *= 0.5;
            }
            if excess(top) <= 0.0 {
                p.n0
            } else {
                let root = crate::numeric::bracketed_root(excess, lo, top, 1e-9 * p.n0);
                (root * 1.05).min(p.n0)
            }
        };
        SearchBox { lambda_max, n_max }
    }

    fn scan(&self, lambdas: &[f64], ns: &[f64], exec: Execution) -> Option<Candidate> {
        let labour: Vec<Option<f64>> = ns.iter().map(|&n| self.labour_cost(n).ok()).collect();
        let rows = exec.map(lambdas, |&lambda| {
            let row = self.row(lambda).ok()?;
            let mut best: Option<Candidate> = None;
            for (&n, l) in ns.iter().zip(&labour) {
                let Some(l) = *l else { continue };
                if let Ok(profit) = self.row_profit(&row, n, l) {
                    best = pick(best, Some(Candidate { lambda, n, profit }));
                }
            }
            best
        });
        rows.into_iter().fold(None, pick)
    }

    /// Profit-maximizing (λ, N) by grid search with local refinement.
    ///
    /// With a positive tax the platform must break even; otherwise
    /// [`MarketError::Unviable`] is returned. Marginals are attached.
    pub fn maximize_profit(&self, grid: &GridSpec, exec: Execution) -> Result<MarketOutcome, MarketError> {
        grid.validate()?;
        let bx = self.search_box(grid.lambda_points);
        let mut dl = bx.lambda_max / (grid.lambda_points + 1) as f64;
        let mut dn = bx.n_max / (grid.n_points + 1) as f64;
        let lambdas: Vec<f64> = (1..=grid.lambda_points).map(|i| i as f64 * dl).collect();
        let ns: Vec<f64> = (1..=grid.n_points).map(|j| j as f64 * dn).collect();
        let mut best = self.scan(&lambdas, &ns, exec).ok_or(Infeasibility::EmptyFeasibleSet)?;

        let half = 10 * grid.refine_window as i64;
        for _ in 0..grid.refine_stages {
            dl /= 10.0;
            dn /= 10.0;
            let lambdas: Vec<f64> =
                (-half..=half).map(|j| best.lambda + j as f64 * dl).filter(|&l| l > 0.0 && l < bx.lambda_max).collect();
            let ns: Vec<f64> =
                (-half..=half).map(|j| best.n + j as f64 * dn).filter(|&n| n > 0.0 && n < self.params.n0).collect();
            if let Some(c) = self.scan(&lambdas, &ns, exec) {
                if c.beats(&best) {
                    best = c;
                }
            }
        }

        let mut outcome = self.evaluate(best.lambda, best.n)?;
        if self.policy.p_tax > 0.0 && outcome.profit < 0.0 {
            return Err(MarketError::Unviable { best_profit: outcome.profit });
        }
        outcome.marginals = self.marginals_at(best.lambda, best.n);
        Ok(outcome)
    }

    /// ∂Π/∂N at (λ, N) and the marginal labour cost there.
    pub fn foc_n(&self, lambda: f64, n: f64) -> Result<(f64, f64), Infeasibility> {
        let (n_idle, t_pickup, t_response) = self.delivery(lambda, n)?;
        let q = QueueSolution {
            lambda,
            couriers: n,
            n_idle,
            t_response,
            t_pickup,
            t_delivery: self.t_delivery,
            t_wait: 0.0,
            rho_d: 2.0 * lambda * (t_pickup + self.t_delivery) / n,
            rho_c: 0.0,
            servers_per_station: 0.0,
            lambda_delivery: 2.0 * lambda,
            lambda_station: 0.0,
        };
        let (_, dtr_dn) = q.response_partials();
        let (_, dtp_dn) = q.pickup_partials();
        let mc = econ::marginal_labour_cost(n, &self.params)?;
        Ok((-self.params.alpha * lambda * (dtr_dn + dtp_dn) - mc, mc))
    }

    /// Marginal cost and revenue at (λ, N), with the fleet following the
    /// first-order locus ∂Π/∂N = 0. Returns `None` when a finite-difference
    /// neighbour is infeasible (boundary point).
    pub fn marginals_at(&self, lambda: f64, n: f64) -> Option<Marginals> {
        let hl = 1e-4 * lambda;
        let hn = 1e-4 * n;
        let g = |l: f64, m: f64| self.foc_n(l, m).ok().map(|x| x.0);
        let g_l = (g(lambda + hl, n)? - g(lambda - hl, n)?) / (2.0 * hl);
        let g_n = (g(lambda, n + hn)? - g(lambda, n - hn)?) / (2.0 * hn);
        let (residual, mc) = self.foc_n(lambda, n).ok()?;
        let dn_dlambda = -g_l / g_n;
        let marginal_cost = self.policy.p_tax + mc * dn_dlambda;
        let revenue = |l: f64| -> Option<f64> { Some(l * self.price_at(l, n + dn_dlambda * (l - lambda)).ok()?) };
        let marginal_revenue = (revenue(lambda + hl)? - revenue(lambda - hl)?) / (2.0 * hl);
        let price = self.price_at(lambda, n).ok()?;
        Some(Marginals {
            marginal_cost,
            marginal_revenue,
            lerner: (price - marginal_cost) / price,
            dn_dlambda,
            foc_residual: residual,
            reliable: g_n < 0.0,
        })
    }
}

/// Convenience wrapper around [`MarketModel::evaluate`].
pub fn evaluate(
    lambda: f64,
    n: f64,
    policy: &PolicyConfig,
    params: &ModelParams,
) -> Result<MarketOutcome, MarketError> {
    MarketModel::new(params.clone(), policy.clone())?.evaluate(lambda, n)
}

/// Convenience wrapper around [`MarketModel::maximize_profit`].
pub fn maximize_profit(
    policy: &PolicyConfig,
    params: &ModelParams,
    grid: &GridSpec,
    exec: Execution,
) -> Result<MarketOutcome, MarketError> {
    MarketModel::new(params.clone(), policy.clone())?.maximize_profit(grid, exec)
}
