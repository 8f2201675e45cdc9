//! Demand and supply sides: nested-logit valet demand, logit courier supply,
//! their inverses and the surplus integrals.
//!
//! A generalized valet cost of `f64::INFINITY` stands for "no valet service"
//! and is handled by its limit (P_vc = 0, c_ev = c_s) before any arithmetic.

use serde::Serialize;
use thiserror::Error;

use crate::numeric::{bracketed_root, integrate, log_add_exp, logistic};
use crate::params::ModelParams;
use crate::queueing::QueueSolution;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EconError {
    #[error("demand {lambda} is outside the achievable range (0, {max})")]
    DemandOutOfRange { lambda: f64, max: f64 },
    #[error("courier count {n} is outside (0, {max})")]
    SupplyOutOfRange { n: f64, max: f64 },
}

/// Demand-side quantities at one generalized valet cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DemandPoint {
    pub lambda: f64,
    pub p_ev: f64,
    pub p_vc: f64,
    pub c_ev: f64,
}

/// Customer and courier choices at an equilibrium.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChoiceState {
    pub c_valet: f64,
    pub c_ev: f64,
    pub p_vc: f64,
    pub p_ev: f64,
    pub lambda: f64,
    pub n_supply: f64,
    pub wage: f64,
}

impl ChoiceState {
    pub fn new(c_valet: f64, wage: f64, params: &ModelParams) -> Self {
        let d = demand(c_valet, params);
        Self {
            c_valet,
            c_ev: d.c_ev,
            p_vc: d.p_vc,
            p_ev: d.p_ev,
            lambda: d.lambda,
            n_supply: supply(wage, params),
            wage,
        }
    }
}

/// Generalized cost of valet charging, `p_v + α(t_r + t_p) + β(2t_d + t_w)`.
/// Charging time itself is normalized away.
pub fn valet_cost(price: f64, times: &QueueSolution, params: &ModelParams) -> f64 {
    price + params.alpha * (times.t_response + times.t_pickup) + params.beta * (2.0 * times.t_delivery + times.t_wait)
}

/// Composite (log-sum) cost of charging an EV, `−ln(e^{−ε₂c_v} + e^{−ε₂c_s})/ε₂`.
pub fn composite_cost(c_valet: f64, params: &ModelParams) -> f64 {
    if c_valet == f64::INFINITY {
        return params.c_self;
    }
    -log_add_exp(-params.eps2 * c_valet, -params.eps2 * params.c_self) / params.eps2
}

/// Nested-logit demand at generalized valet cost `c_valet`.
pub fn demand(c_valet: f64, params: &ModelParams) -> DemandPoint {
    let p_vc = if c_valet == f64::INFINITY { 0.0 } else { logistic(params.eps2 * (params.c_self - c_valet)) };
    let c_ev = composite_cost(c_valet, params);
    let p_ev = logistic(params.eps1 * (params.c_fuel - c_ev));
    DemandPoint { lambda: params.tau * params.lambda0 * p_ev * p_vc, p_ev, p_vc, c_ev }
}

/// EV penetration without any valet service.
pub fn baseline_penetration(params: &ModelParams) -> f64 {
    demand(f64::INFINITY, params).p_ev
}

/// dλ/dc_v, always negative.
pub fn demand_slope(c_valet: f64, params: &ModelParams) -> f64 {
    let d = demand(c_valet, params);
    -d.lambda * (params.eps1 * (1.0 - d.p_ev) * d.p_vc + params.eps2 * (1.0 - d.p_vc))
}

/// Supremum of achievable demand (approached as c_v → −∞).
pub fn max_demand(params: &ModelParams) -> f64 {
    params.tau * params.lambda0
}

/// Generalized valet cost at which demand equals `lambda`.
pub fn inverse_demand(lambda: f64, params: &ModelParams) -> Result<f64, EconError> {
    let max = max_demand(params);
    let out_of_range = EconError::DemandOutOfRange { lambda, max };
    if !(lambda > 0.0 && lambda < max) {
        return Err(out_of_range);
    }
    let f = |c: f64| demand(c, params).lambda - lambda;
    // Demand is decreasing: find lo with f(lo) > 0 and hi with f(hi) < 0.
    let mut step = 64.0;
    let (mut lo, mut hi) = (params.c_self, params.c_self);
    if f(params.c_self) > 0.0 {
        while f(hi) > 0.0 {
            lo = hi;
            hi += step;
            step *= 2.0;
            if hi > 1e7 {
                return Err(out_of_range);
            }
        }
    } else {
        while f(lo) < 0.0 {
            hi = lo;
            lo -= step;
            step *= 2.0;
            if lo < -1e7 {
                return Err(out_of_range);
            }
        }
    }
    let tol = 1e-14 * lo.abs().max(hi.abs()).max(1.0);
    Ok(bracketed_root(f, lo, hi, tol))
}

/// Courier headcount at hourly wage `wage`, `N₀·logistic(η(w − w₀))`.
pub fn supply(wage: f64, params: &ModelParams) -> f64 {
    params.n0 * logistic(params.eta * (wage - params.w_outside))
}

/// Hourly wage that attracts `n` couriers, `w₀ + ln(n/(N₀ − n))/η`.
pub fn inverse_supply(n: f64, params: &ModelParams) -> Result<f64, EconError> {
    if !(n > 0.0 && n < params.n0) {
        return Err(EconError::SupplyOutOfRange { n, max: params.n0 });
    }
    Ok(params.w_outside + (n / (params.n0 - n)).ln() / params.eta)
}

/// Marginal labour cost `d(N·w(N))/dN = w + N₀/(η(N₀ − N))`.
pub fn marginal_labour_cost(n: f64, params: &ModelParams) -> Result<f64, EconError> {
    Ok(inverse_supply(n, params)? + params.n0 / (params.eta * (params.n0 - n)))
}

/// Customer surplus `τλ₀ ∫_{c_v}^∞ F_v(x) dx`.
///
/// The integration is cut where demand has decayed below `1e-12` of its
/// value at `c_valet`.
pub fn customer_surplus(c_valet: f64, params: &ModelParams) -> f64 {
    if c_valet == f64::INFINITY {
        return 0.0;
    }
    let share = |x: f64| demand(x, params).lambda;
    let floor = 1e-12 * share(c_valet);
    if floor == 0.0 {
        return 0.0;
    }
    let mut upper = c_valet + 10.0;
    let mut step = 10.0;
    while share(upper) >= floor {
        step *= 2.0;
        upper += step;
    }
    integrate(share, c_valet, upper, 1e-10, 0.0)
}

/// Courier surplus `N₀ ∫₀^w F_c(y) dy = (N₀/η)·ln((e^{ηw₀} + e^{ηw})/(e^{ηw₀} + 1))`.
pub fn courier_surplus(wage: f64, params: &ModelParams) -> f64 {
    let e = params.eta;
    let ew0 = e * params.w_outside;
    params.n0 / e * (log_add_exp(ew0, e * wage) - log_add_exp(ew0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> ModelParams {
        ModelParams::hong_kong()
    }

    #[test]
    fn valet_cost_points() {
        let q = QueueSolution {
            lambda: 1.0,
            couriers: 1.0,
            n_idle: 1.0,
            t_response: 0.0,
            t_pickup: 0.0,
            t_delivery: 0.0,
            t_wait: 0.0,
            rho_d: 0.0,
            rho_c: 0.0,
            servers_per_station: 1.0,
            lambda_delivery: 2.0,
            lambda_station: 1.0,
        };
        assert_eq!(valet_cost(80.0, &q, &p()), 80.0);
        let doubled = ModelParams { alpha: 120.0, ..p() };
        assert_eq!(valet_cost(80.0, &q, &doubled), 80.0);
        let q = QueueSolution { t_pickup: 7.97 / 60.0, t_delivery: 0.3, t_wait: 1.9 / 60.0, ..q };
        let c = valet_cost(80.09, &q, &p());
        assert!((c - 94.38).abs() < 0.01, "{c}");
    }

    #[test]
    fn symmetric_lower_nest() {
        assert_eq!(demand(80.0, &p()).p_vc, 0.5);
    }

    #[test]
    fn no_valet_limit() {
        let d = demand(f64::INFINITY, &p());
        assert_eq!(d.p_vc, 0.0);
        assert_eq!(d.lambda, 0.0);
        assert_eq!(d.c_ev, 80.0);
        assert!((d.p_ev - 0.3659).abs() < 5e-5, "{}", d.p_ev);
        // The finite path approaches the limit.
        let far = demand(1e4, &p());
        assert!((far.p_ev - d.p_ev).abs() < 1e-12);
    }

    #[test]
    fn composite_cost_bounds() {
        let params = p();
        for c in [-50.0, 0.0, 60.0, 80.0, 95.0, 200.0, 1e3] {
            let cev = composite_cost(c, &params);
            let lo = f64::min(c, params.c_self);
            assert!(cev <= lo + 1e-12 && cev > lo - 2f64.ln() / params.eps2 - 1e-12, "c={c}");
        }
    }

    #[test]
    fn inverse_demand_round_trip() {
        let params = p();
        for i in 0..=58 {
            let c = 10.0 + 5.0 * i as f64;
            let lam = demand(c, &params).lambda;
            let back = inverse_demand(lam, &params).unwrap();
            assert!((back - c).abs() < 1e-8, "c={c}: {back}");
        }
        let at_self = demand(80.0, &params).lambda;
        assert!((inverse_demand(at_self, &params).unwrap() - 80.0).abs() < 1e-10);
    }

    #[test]
    fn inverse_demand_rejects_out_of_range() {
        let params = p();
        assert!(inverse_demand(0.0, &params).is_err());
        assert!(inverse_demand(6000.0, &params).is_err());
        assert!(inverse_demand(-1.0, &params).is_err());
    }

    #[test]
    fn demand_slope_matches_finite_difference() {
        let params = p();
        for c in [40.0, 80.0, 94.0, 150.0] {
            let h = 1e-5;
            let fd = (demand(c + h, &params).lambda - demand(c - h, &params).lambda) / (2.0 * h);
            let an = demand_slope(c, &params);
            assert!((an - fd).abs() < 1e-6 * fd.abs(), "c={c}: {an} vs {fd}");
        }
    }

    #[test]
    fn supply_points() {
        let params = p();
        assert_eq!(supply(110.0, &params), 25_000.0);
        assert_eq!(supply(-1e6, &params), 0.0);
        assert_eq!(supply(1e6, &params), params.n0);
        assert_eq!(inverse_supply(25_000.0, &params).unwrap(), 110.0);
        for n in [1.0, 100.0, 49_999.0] {
            let back = supply(inverse_supply(n, &params).unwrap(), &params);
            assert!((back - n).abs() <= 1e-9 * n, "{n} -> {back}");
        }
        let w = inverse_supply(472.33, &params).unwrap();
        assert!((w - 63.5).abs() < 0.05, "{w}");
        assert!(inverse_supply(0.0, &params).is_err());
        assert!(inverse_supply(params.n0, &params).is_err());
    }

    #[test]
    fn customer_surplus_matches_trapezoid_oracle() {
        let params = p();
        let c = 94.0;
        let v = customer_surplus(c, &params);
        let upper = 600.0;
        let panels = 1_000_000;
        let h = (upper - c) / panels as f64;
        let f = |x: f64| demand(x, &params).lambda;
        let mut sum = 0.5 * (f(c) + f(upper));
        for i in 1..panels {
            sum += f(c + i as f64 * h);
        }
        let oracle = sum * h;
        assert!((v - oracle).abs() < 1e-6 * oracle, "{v} vs {oracle}");
        assert_eq!(customer_surplus(f64::INFINITY, &params), 0.0);
    }

    #[test]
    fn courier_surplus_matches_quadrature() {
        let params = p();
        assert_eq!(courier_surplus(0.0, &params), 0.0);
        for w in [30.0, 63.5, 110.0, 300.0] {
            let closed = courier_surplus(w, &params);
            let quad = integrate(|y| supply(y, &params), 0.0, w, 1e-13, 0.0);
            assert!((closed - quad).abs() < 1e-10 * quad, "w={w}: {closed} vs {quad}");
        }
    }

    #[test]
    fn courier_surplus_survives_large_exponents() {
        let params = ModelParams { eta: 10.0, ..p() };
        let v = courier_surplus(200.0, &params);
        assert!(v.is_finite() && v > 0.0);
    }
}
