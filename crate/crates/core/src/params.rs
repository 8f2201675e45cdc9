//! Exogenous parameters, planner levers, configuration files and the
//! Monte-Carlo calibration of the delivery-time coefficient.

use std::fmt;
use std::ops::RangeInclusive;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::numeric::LinearFit;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("{0} must be nonnegative")]
    Negative(&'static str),
    #[error("alpha must exceed beta")]
    AlphaNotAboveBeta,
    #[error("tau must not exceed 1")]
    TauAboveOne,
    #[error("k must be at least 1")]
    NoStations,
    #[error("unknown parameter `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("calibration: {0}")]
    Calibration(String),
}

/// The exogenous parameter vector of the market model.
///
/// Units: persons, chargers, km², HK$, hours. Times in hours throughout the
/// crate; only CSV output converts to minutes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Potential private-vehicle owners.
    pub lambda0: f64,
    /// Potential couriers.
    pub n0: f64,
    /// Nominal public charger supply.
    pub m0: f64,
    /// City area (km²).
    pub area: f64,
    /// Per-station hourly coordinator wage (HK$/hr).
    pub coordinator_cost: f64,
    /// Generalized self-charging cost (HK$).
    pub c_self: f64,
    /// Generalized fossil-fuel refuelling cost (HK$).
    pub c_fuel: f64,
    /// Outside-option wage (HK$/hr).
    pub w_outside: f64,
    /// Mean full-charge duration (hr).
    pub t_charge: f64,
    /// Value of time before pickup (HK$/hr).
    pub alpha: f64,
    /// Value of time after pickup (HK$/hr).
    pub beta: f64,
    /// Fraction of EVs needing a charge per hour.
    pub tau: f64,
    /// Delivery-time coefficient (hr per km).
    pub theta: f64,
    /// Pickup-time coefficient.
    pub phi: f64,
    /// Upper-nest (EV vs fuel) cost sensitivity.
    pub eps1: f64,
    /// Lower-nest (valet vs self) cost sensitivity.
    pub eps2: f64,
    /// Courier wage sensitivity.
    pub eta: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::hong_kong()
    }
}

macro_rules! param_fields {
    ($m:ident) => {
        $m!(
            lambda0,
            n0,
            m0,
            area,
            coordinator_cost,
            c_self,
            c_fuel,
            w_outside,
            t_charge,
            alpha,
            beta,
            tau,
            theta,
            phi,
            eps1,
            eps2,
            eta
        )
    };
}

impl ModelParams {
    /// Field names in declaration order; these are also the config-file keys.
    pub const FIELDS: [&'static str; 17] = {
        macro_rules! names { ($($f:ident),*) => { [$(stringify!($f)),*] }; }
        param_fields!(names)
    };

    /// Calibration for Hong Kong used throughout the numerical studies.
    pub fn hong_kong() -> Self {
        Self {
            lambda0: 6e5,
            n0: 5e4,
            m0: 3e3,
            area: 1e3,
            coordinator_cost: 60.0,
            c_self: 80.0,
            c_fuel: 75.0,
            w_outside: 110.0,
            t_charge: 5.0,
            alpha: 60.0,
            beta: 10.0,
            tau: 0.01,
            theta: 0.06,
            phi: 0.04,
            eps1: 0.11,
            eps2: 0.1,
            eta: 0.1,
        }
    }

    /// Checks every invariant and returns the parameters unchanged, or the
    /// first violation in field order.
    pub fn validate(self) -> Result<Self, ParamError> {
        macro_rules! positive {
            ($($f:ident),*) => { $( if !(self.$f > 0.0) || !self.$f.is_finite() {
                return Err(ParamError::NotPositive(stringify!($f)));
            } )* };
        }
        param_fields!(positive);
        if self.alpha <= self.beta {
            return Err(ParamError::AlphaNotAboveBeta);
        }
        if self.tau > 1.0 {
            return Err(ParamError::TauAboveOne);
        }
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        macro_rules! lookup {
            ($($f:ident),*) => { match name { $(stringify!($f) => Some(self.$f),)* _ => None } };
        }
        param_fields!(lookup)
    }

    /// Sets a field by name. Does not validate the result.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ParamError> {
        macro_rules! assign {
            ($($f:ident),*) => { match name {
                $(stringify!($f) => { self.$f = value; Ok(()) })*
                _ => Err(ParamError::UnknownKey(name.to_string())),
            } };
        }
        param_fields!(assign)
    }

    /// Copy with one field multiplied by `factor`.
    pub fn scaled(&self, name: &str, factor: f64) -> Result<Self, ParamError> {
        let mut out = self.clone();
        let v = self.get(name).ok_or_else(|| ParamError::UnknownKey(name.to_string()))?;
        out.set(name, v * factor)?;
        Ok(out)
    }
}

/// Total charging budget, reduced to a nominal charger count `total / per_charger`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargerBudget {
    /// Budget B (HK$).
    pub total: f64,
    /// Combined installation cost per charger γ (HK$).
    pub per_charger: f64,
}

/// Levers controlled by the city planner / regulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Number of charging stations K.
    pub k: u32,
    /// Per-service tax p_t (HK$).
    pub p_tax: f64,
    /// Prorated per-charger cost r used to convert tax revenue into chargers.
    pub charger_cost: f64,
    /// When set, overrides the parameter set's `m0` with `total / per_charger`.
    pub budget: Option<ChargerBudget>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { k: 57, p_tax: 0.0, charger_cost: 25.0, budget: None }
    }
}

impl PolicyConfig {
    pub fn with_k(k: u32) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn validate(self) -> Result<Self, ParamError> {
        if self.k < 1 {
            return Err(ParamError::NoStations);
        }
        if !(self.p_tax >= 0.0) || !self.p_tax.is_finite() {
            return Err(ParamError::Negative("p_tax"));
        }
        if !(self.charger_cost > 0.0) {
            return Err(ParamError::NotPositive("charger_cost"));
        }
        if let Some(b) = self.budget {
            if !(b.total > 0.0) {
                return Err(ParamError::NotPositive("budget"));
            }
            if !(b.per_charger > 0.0) {
                return Err(ParamError::NotPositive("gamma"));
            }
        }
        Ok(self)
    }

    /// Nominal charger supply before any tax-funded additions.
    pub fn charger_supply(&self, params: &ModelParams) -> f64 {
        match self.budget {
            Some(b) => b.total / b.per_charger,
            None => params.m0,
        }
    }

    pub const FIELDS: [&'static str; 5] = ["k", "p_tax", "charger_cost", "budget", "gamma"];

    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ParamError> {
        let bad = |reason: &str| ParamError::BadValue { key: name.to_string(), reason: reason.to_string() };
        match name {
            "k" => {
                if value.fract() != 0.0 || value < 1.0 || value > u32::MAX as f64 {
                    return Err(bad("expected a positive integer"));
                }
                self.k = value as u32;
            }
            "p_tax" => self.p_tax = value,
            "charger_cost" => self.charger_cost = value,
            "budget" => {
                let per = self.budget.map_or(1.0, |b| b.per_charger);
                self.budget = Some(ChargerBudget { total: value, per_charger: per });
            }
            "gamma" => {
                let total = self.budget.map_or(f64::NAN, |b| b.total);
                self.budget = Some(ChargerBudget { total, per_charger: value });
            }
            _ => return Err(ParamError::UnknownKey(name.to_string())),
        }
        Ok(())
    }
}

/// Model parameters plus policy levers, as resolved from defaults, an
/// optional config file and command-line overrides (applied in that order).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub params: ModelParams,
    pub policy: PolicyConfig,
}

impl Config {
    /// Applies one `key = value` assignment to whichever struct owns `key`.
    pub fn set(&mut self, key: &str, value: f64) -> Result<(), ParamError> {
        if ModelParams::FIELDS.contains(&key) {
            self.params.set(key, value)
        } else {
            self.policy.set(key, value)
        }
    }

    /// Parses `key=value` (as given on a command line).
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ParamError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ParamError::Config(format!("expected key=value, got `{assignment}`")))?;
        let key = key.trim();
        let value: f64 = value.trim().parse().map_err(|_| ParamError::BadValue {
            key: key.to_string(),
            reason: format!("`{}` is not a number", value.trim()),
        })?;
        self.set(key, value)
    }

    /// Applies a flat `key = value` file (TOML syntax, numbers only, `#` comments).
    pub fn apply_str(&mut self, text: &str) -> Result<(), ParamError> {
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| ParamError::Config(e.message().to_string()))?;
        for (key, value) in &table {
            let v = match value {
                toml::Value::Float(f) => *f,
                toml::Value::Integer(i) => *i as f64,
                other => {
                    return Err(ParamError::BadValue {
                        key: key.clone(),
                        reason: format!("expected a number, found {}", other.type_str()),
                    })
                }
            };
            self.set(key, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ParamError> {
        let text = std::fs::read_to_string(path).map_err(|e| ParamError::Config(format!("{}: {e}", path.display())))?;
        self.apply_str(&text)
    }

    pub fn validate(self) -> Result<Self, ParamError> {
        Ok(Self { params: self.params.validate()?, policy: self.policy.validate()? })
    }

    /// Renders the configuration in the file format accepted by [`Config::apply_str`].
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for name in ModelParams::FIELDS {
            out.push_str(&format!("{name} = {}\n", fmt_float(self.params.get(name).unwrap_or(f64::NAN))));
        }
        out.push_str(&format!("k = {}\n", self.policy.k));
        out.push_str(&format!("p_tax = {}\n", fmt_float(self.policy.p_tax)));
        out.push_str(&format!("charger_cost = {}\n", fmt_float(self.policy.charger_cost)));
        if let Some(b) = self.policy.budget {
            out.push_str(&format!("budget = {}\n", fmt_float(b.total)));
            out.push_str(&format!("gamma = {}\n", fmt_float(b.per_charger)));
        }
        out
    }
}

// `{:?}` keeps a decimal point so TOML reads the value back as a float.
fn fmt_float(v: f64) -> String {
    format!("{v:?}")
}

/// One K value of the delivery-time calibration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationPoint {
    pub k: u32,
    /// Zone side √(A/K) (km).
    pub zone_side: f64,
    /// Mean simulated travel time to the zone centre (hr).
    pub travel_time: f64,
}

/// Result of [`calibrate_theta`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaCalibration {
    pub theta: f64,
    pub theta_stderr: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Slope of residuals against K and its standard error (trend diagnostic).
    pub residual_trend: f64,
    pub residual_trend_stderr: f64,
    pub speed: f64,
    pub samples: usize,
    pub seed: u64,
    pub points: Vec<CalibrationPoint>,
}

impl fmt::Display for ThetaCalibration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "theta = {:.6} (se {:.2e}), R^2 = {:.8}", self.theta, self.theta_stderr, self.r_squared)
    }
}

/// Estimates the delivery-time coefficient θ by Monte Carlo.
///
/// The city is tiled into K square zones of side √(A/K) with a station at
/// each zone centre. For every K, `samples` customers are drawn uniformly in
/// a zone and their mean Manhattan distance to the centre is converted to a
/// travel time at `speed` (km/hr). θ is the OLS slope of travel time on zone
/// side. Each K uses its own ChaCha stream derived from `seed`, so results do
/// not depend on execution order.
pub fn calibrate_theta(
    area: f64,
    k_range: RangeInclusive<u32>,
    speed: f64,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<ThetaCalibration, ParamError> {
    if !(area > 0.0) {
        return Err(ParamError::NotPositive("area"));
    }
    if !(speed > 0.0) {
        return Err(ParamError::NotPositive("speed"));
    }
    if samples < 100 {
        return Err(ParamError::Calibration("at least 100 samples per K are required".into()));
    }
    let ks: Vec<u32> = k_range.filter(|&k| k >= 1).collect();
    if ks.is_empty() {
        return Err(ParamError::Calibration("empty K range".into()));
    }
    let points = exec.map(&ks, |&k| {
        let side = (area / k as f64).sqrt();
        let centre = 0.5 * side;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let total: f64 = (0..samples)
            .map(|_| {
                let x: f64 = rng.random::<f64>() * side;
                let y: f64 = rng.random::<f64>() * side;
                (x - centre).abs() + (y - centre).abs()
            })
            .sum();
        CalibrationPoint { k, zone_side: side, travel_time: total / samples as f64 / speed }
    });
    let xs: Vec<f64> = points.iter().map(|p| p.zone_side).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.travel_time).collect();
    let fit = LinearFit::fit(&xs, &ys)
        .ok_or_else(|| ParamError::Calibration("regression needs at least three distinct K values".into()))?;
    let kf: Vec<f64> = points.iter().map(|p| p.k as f64).collect();
    let trend = LinearFit::fit(&kf, &fit.residuals).expect("K values are distinct");
    Ok(ThetaCalibration {
        theta: fit.slope,
        theta_stderr: fit.slope_stderr,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        residual_trend: trend.slope,
        residual_trend_stderr: trend.slope_stderr,
        speed,
        samples,
        seed,
        points,
    })
}
