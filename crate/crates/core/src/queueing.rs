//! Steady-state queue formulas for the delivery queue (couriers serving
//! pickup/return trips) and the per-station charging queues.
//!
//! All times are in hours. The delivery queue is M/M/N with arrival rate
//! 2λ (every vehicle is moved twice) and mean service time t_p + t_d; each of
//! the K charging stations is M/M/S with S = M/K chargers and arrival rate
//! λ/K. Waits use the Sakasegawa approximation; [`erlang_c_wait`] gives the
//! exact M/M/N value for comparison.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::numeric::pow_unit;
use crate::params::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueKind {
    Delivery,
    Charging,
    Generic,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum QueueError {
    #[error("unstable {kind:?} queue: utilization {rho:.6} >= 1")]
    Unstable { kind: QueueKind, rho: f64 },
    #[error("idle-courier equation has no positive root (demand too high for the fleet)")]
    Infeasible,
    #[error("invalid queue input: {0}")]
    InvalidInput(&'static str),
}

/// Exact mean queueing delay of an M/M/N queue (Erlang C).
///
/// Uses the Erlang B recurrence `B_k = a B_{k-1} / (k + a B_{k-1})`, so no
/// factorials or powers are formed and any server count is safe.
pub fn erlang_c_wait(arrival_rate: f64, mean_service: f64, servers: u32) -> Result<f64, QueueError> {
    if servers == 0 {
        return Err(QueueError::InvalidInput("servers must be positive"));
    }
    if !(arrival_rate >= 0.0) || !(mean_service > 0.0) {
        return Err(QueueError::InvalidInput("rates must be nonnegative"));
    }
    if arrival_rate == 0.0 {
        return Ok(0.0);
    }
    let load = arrival_rate * mean_service;
    let n = servers as f64;
    let rho = load / n;
    if rho >= 1.0 {
        return Err(QueueError::Unstable { kind: QueueKind::Generic, rho });
    }
    let mut erlang_b = 1.0;
    for k in 1..=servers {
        erlang_b = load * erlang_b / (k as f64 + load * erlang_b);
    }
    let p_wait = erlang_b / (1.0 - rho * (1.0 - erlang_b));
    Ok(p_wait * mean_service / (n - load))
}

/// Sakasegawa approximation of the M/M/N mean queueing delay,
/// `ρ^√(2N+2) / (λ (1 − ρ))`, with a real-valued server count.
pub fn sakasegawa_wait(arrival_rate: f64, mean_service: f64, servers: f64) -> Result<f64, QueueError> {
    if !(servers > 0.0) {
        return Err(QueueError::InvalidInput("servers must be positive"));
    }
    if !(arrival_rate >= 0.0) || !(mean_service > 0.0) {
        return Err(QueueError::InvalidInput("rates must be nonnegative"));
    }
    if arrival_rate == 0.0 {
        return Ok(0.0);
    }
    let rho = arrival_rate * mean_service / servers;
    if rho >= 1.0 {
        return Err(QueueError::Unstable { kind: QueueKind::Generic, rho });
    }
    Ok(pow_unit(rho, (2.0 * servers + 2.0).sqrt()) / (arrival_rate * (1.0 - rho)))
}

/// Mean trip time between a customer and the nearest station, θ√(A/K).
pub fn delivery_time(k: u32, params: &ModelParams) -> f64 {
    assert!(k >= 1, "at least one station is required");
    params.theta * (params.area / k as f64).sqrt()
}

/// Mean pickup time for a given number of idle couriers, φ/√(N_i/A).
pub fn pickup_time(n_idle: f64, params: &ModelParams) -> f64 {
    params.phi * (params.area / n_idle).sqrt()
}

/// Real roots of the depressed cubic `u³ + p u + q = 0`, in descending order.
///
/// Three real roots use the trigonometric form, one real root uses Cardano.
/// A discriminant within `1e-12` (relative) of zero is treated as a double
/// root. Every root gets one Newton step.
pub fn depressed_cubic_roots(p: f64, q: f64) -> Vec<f64> {
    let disc = -(4.0 * p * p * p + 27.0 * q * q);
    let scale = 4.0 * (p * p * p).abs() + 27.0 * q * q;
    let mut roots = if scale == 0.0 {
        vec![0.0]
    } else if disc.abs() <= 1e-12 * scale {
        // Double root at -3q/(2p), simple root at 3q/p.
        vec![3.0 * q / p, -1.5 * q / p, -1.5 * q / p]
    } else if disc > 0.0 {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
        let phase = arg.acos() / 3.0;
        (0..3).map(|k| m * (phase - 2.0 * PI * k as f64 / 3.0).cos()).collect()
    } else {
        let s = (q * q / 4.0 + p * p * p / 27.0).sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt()]
    };
    for u in roots.iter_mut() {
        let f = *u * *u * *u + p * *u + q;
        let df = 3.0 * *u * *u + p;
        if df.abs() > 1e-8 * (p.abs() + 3.0 * *u * *u) {
            *u -= f / df;
        }
    }
    roots.sort_by(|a, b| b.total_cmp(a));
    roots
}

/// Positive solutions N_i of the idle-courier fixed point
/// `N_i = N − 2λ(φ√(A/N_i) + t_d)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdleCourierRoots {
    /// Normal-regime root (the platform's choice).
    pub larger: f64,
    /// Wild-goose-chase root, when a second positive root exists.
    pub smaller: Option<f64>,
}

/// Solves the idle-courier fixed point for given demand λ and fleet N.
///
/// With u = √N_i the equation is the depressed cubic
/// `u³ − (N − 2λt_d) u + 2λφ√A = 0`, which has positive roots iff
/// `(N − 2λt_d)^{3/2} ≥ √(27A) φ λ`.
pub fn solve_idle_couriers(
    lambda: f64,
    n: f64,
    t_delivery: f64,
    params: &ModelParams,
) -> Result<IdleCourierRoots, QueueError> {
    if !(n > 0.0) {
        return Err(QueueError::InvalidInput("courier count must be positive"));
    }
    if !(lambda >= 0.0) {
        return Err(QueueError::InvalidInput("demand must be nonnegative"));
    }
    if lambda == 0.0 {
        return Ok(IdleCourierRoots { larger: n, smaller: None });
    }
    let free = n - 2.0 * lambda * t_delivery;
    if free <= 0.0 {
        return Err(QueueError::Infeasible);
    }
    let q = 2.0 * lambda * params.phi * params.area.sqrt();
    let roots = depressed_cubic_roots(-free, q);
    let mut positive = roots.into_iter().filter(|&u| u > 0.0);
    match (positive.next(), positive.next()) {
        (Some(hi), lo) => Ok(IdleCourierRoots { larger: hi * hi, smaller: lo.map(|u| u * u) }),
        (None, _) => Err(QueueError::Infeasible),
    }
}

/// Mean response (dispatch) delay of the delivery queue,
/// `ρ_d^√(2N+2) / (2λ(1 − ρ_d))` with `ρ_d = 2λ(t_p + t_d)/N`.
pub fn response_time(lambda: f64, n: f64, t_pickup: f64, t_delivery: f64) -> Result<f64, QueueError> {
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let rho = 2.0 * lambda * (t_pickup + t_delivery) / n;
    if rho >= 1.0 {
        return Err(QueueError::Unstable { kind: QueueKind::Delivery, rho });
    }
    Ok(pow_unit(rho, (2.0 * n + 2.0).sqrt()) / (2.0 * lambda * (1.0 - rho)))
}

/// Mean wait for a charger when M chargers are split evenly over K stations:
/// `(K/λ) · M/(M − λt_c) · (λt_c/M)^√(2M/K + 2)`.
pub fn charging_wait(lambda: f64, k: u32, m: f64, t_charge: f64) -> Result<f64, QueueError> {
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let rho = lambda * t_charge / m;
    if rho >= 1.0 {
        return Err(QueueError::Unstable { kind: QueueKind::Charging, rho });
    }
    let k = k as f64;
    Ok(k / lambda * pow_unit(rho, (2.0 * m / k + 2.0).sqrt()) / (1.0 - rho))
}

/// Endogenous steady-state times and utilizations for a given (λ, N, K, M).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueueSolution {
    pub lambda: f64,
    pub couriers: f64,
    pub n_idle: f64,
    pub t_response: f64,
    pub t_pickup: f64,
    pub t_delivery: f64,
    pub t_wait: f64,
    pub rho_d: f64,
    pub rho_c: f64,
    pub servers_per_station: f64,
    pub lambda_delivery: f64,
    pub lambda_station: f64,
}

impl QueueSolution {
    /// Solves the queueing network, choosing the normal-regime idle-courier root.
    pub fn solve(lambda: f64, n: f64, k: u32, m: f64, params: &ModelParams) -> Result<Self, QueueError> {
        let t_delivery = delivery_time(k, params);
        let n_idle = solve_idle_couriers(lambda, n, t_delivery, params)?.larger;
        Self::from_idle(lambda, n, k, m, n_idle, t_delivery, params)
    }

    /// Builds the solution from a chosen idle-courier root (either regime).
    pub fn from_idle(
        lambda: f64,
        n: f64,
        k: u32,
        m: f64,
        n_idle: f64,
        t_delivery: f64,
        params: &ModelParams,
    ) -> Result<Self, QueueError> {
        let t_pickup = if lambda == 0.0 { 0.0 } else { pickup_time(n_idle, params) };
        let t_response = response_time(lambda, n, t_pickup, t_delivery)?;
        let t_wait = charging_wait(lambda, k, m, params.t_charge)?;
        Ok(Self {
            lambda,
            couriers: n,
            n_idle,
            t_response,
            t_pickup,
            t_delivery,
            t_wait,
            rho_d: 2.0 * lambda * (t_pickup + t_delivery) / n,
            rho_c: lambda * params.t_charge / m,
            servers_per_station: m / k as f64,
            lambda_delivery: 2.0 * lambda,
            lambda_station: lambda / k as f64,
        })
    }

    fn pickup_denominator(&self) -> f64 {
        self.n_idle - self.lambda * self.t_pickup
    }

    /// Partial derivatives of t_p with respect to (λ, N) along the fixed point.
    pub fn pickup_partials(&self) -> (f64, f64) {
        let den = self.pickup_denominator();
        ((self.t_pickup + self.t_delivery) * self.t_pickup / den, -0.5 * self.t_pickup / den)
    }

    /// Partial derivatives of t_r with respect to (λ, N), with t_p following
    /// the fixed point.
    pub fn response_partials(&self) -> (f64, f64) {
        if self.t_response == 0.0 {
            return (0.0, 0.0);
        }
        let (dtp_dl, dtp_dn) = self.pickup_partials();
        let n = self.couriers;
        let lam = self.lambda;
        let rho = self.rho_d;
        let s = (2.0 * n + 2.0).sqrt();
        let sens = s / rho + 1.0 / (1.0 - rho);
        let drho_dl = 2.0 * (self.t_pickup + self.t_delivery) / n + 2.0 * lam * dtp_dl / n;
        let drho_dn = 2.0 * lam * dtp_dn / n - rho / n;
        let dl = self.t_response * (sens * drho_dl - 1.0 / lam);
        let dn = self.t_response * (rho.ln() / s + sens * drho_dn);
        (dl, dn)
    }
}
