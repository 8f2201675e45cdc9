//! Orderings and shape of the planning sweep under ±50% parameter changes.

use std::sync::OnceLock;

use valet_core::market::MarketOutcome;
use valet_core::params::{ModelParams, PolicyConfig};
use valet_core::policy::{self, SensitivityCell, SolveSettings};

fn settings() -> SolveSettings {
    SolveSettings::default()
}

fn batch() -> &'static [SensitivityCell] {
    static CELLS: OnceLock<Vec<SensitivityCell>> = OnceLock::new();
    CELLS.get_or_init(|| {
        policy::sensitivity_batch(
            &policy::SENSITIVITY_PARAMETERS,
            &policy::SENSITIVITY_FACTORS,
            &ModelParams::hong_kong(),
            &PolicyConfig::default(),
            20..=120,
            &settings(),
        )
        .expect("batch runs")
    })
}

fn profitable(cell: &SensitivityCell) -> Vec<&MarketOutcome> {
    cell.table.feasible().map(|(_, o)| o).filter(|o| o.profit >= 0.0).collect()
}

#[test]
fn every_cell_solves_and_orders_station_preferences() {
    let cells = batch();
    assert_eq!(cells.len(), 48);
    for c in cells {
        let s = c.summary.as_ref().unwrap_or_else(|| panic!("{}x{}: {:?}", c.parameter, c.factor, c.error));
        assert!(s.k_star_n < s.k_star_lambda, "{}x{}: {s:?}", c.parameter, c.factor);
        assert!(s.k_star_lambda < s.k_star_profit, "{}x{}: {s:?}", c.parameter, c.factor);
        assert!(
            (s.k_star_n..=s.k_star_profit).contains(&s.k_star_welfare),
            "{}x{}: welfare argmax {} outside [{}, {}]",
            c.parameter,
            c.factor,
            s.k_star_welfare,
            s.k_star_n,
            s.k_star_profit
        );
    }
}

#[test]
fn profitable_rows_are_contiguous_and_unimodal() {
    for c in batch() {
        let ks: Vec<u32> = c.table.feasible().filter(|(_, o)| o.profit >= 0.0).map(|(r, _)| r.k).collect();
        assert!(!ks.is_empty(), "{}x{}", c.parameter, c.factor);
        assert!(ks.windows(2).all(|w| w[1] == w[0] + 1), "{}x{}: gaps in {ks:?}", c.parameter, c.factor);
        let rows = profitable(c);
        let lambda: Vec<f64> = rows.iter().map(|o| o.lambda).collect();
        let n: Vec<f64> = rows.iter().map(|o| o.n).collect();
        assert!(policy::is_unimodal(&lambda), "{}x{}", c.parameter, c.factor);
        assert!(policy::is_unimodal(&n), "{}x{}", c.parameter, c.factor);
    }
}

#[test]
fn shape_violations_only_occur_where_the_platform_loses_money() {
    for c in batch().iter().filter(|c| !(c.lambda_unimodal() && c.n_unimodal())) {
        assert!(
            c.table.feasible().any(|(_, o)| o.profit < 0.0),
            "{}x{} is non-unimodal with every row profitable",
            c.parameter,
            c.factor
        );
    }
}

#[test]
fn unit_factor_reproduces_the_baseline_exactly() {
    let p = ModelParams::hong_kong();
    let base = PolicyConfig::default();
    let cells = policy::sensitivity_batch(&["eta", "phi"], &[1.0], &p, &base, 50..=62, &settings()).unwrap();
    let (table, summary) = policy::sweep_k_adaptive(50..=62, 2000, &p, &base, &settings()).unwrap();
    for c in cells {
        assert_eq!(c.table, table);
        assert_eq!(c.summary.as_ref(), Some(&summary));
    }
}

#[test]
fn expensive_coordinators_push_the_profit_optimum_below_demand_optimum() {
    // Raising the per-service coordinator cost moves K*_Π down through K*_λ;
    // the crossover sits just above a 2.8x increase.
    let base = PolicyConfig::default();
    let crossover = (0..=6)
        .map(|i| 2.7 + 0.05 * i as f64)
        .find(|&f| {
            let p = ModelParams::hong_kong().scaled("coordinator_cost", f).unwrap();
            let (_, s) = policy::sweep_k(45..=70, &p, &base, &settings()).unwrap();
            s.k_star_profit < s.k_star_lambda
        })
        .expect("crossover below 3x");
    assert!((2.8 - 1e-9..=2.85 + 1e-9).contains(&crossover), "crossover at {crossover}");
}

#[test]
fn invalid_batches_are_rejected() {
    let p = ModelParams::hong_kong();
    let base = PolicyConfig::default();
    assert!(policy::sensitivity_batch(&["nope"], &[1.1], &p, &base, 20..=30, &settings()).is_err());
    assert!(policy::sensitivity_batch(&[], &[1.1], &p, &base, 20..=30, &settings()).is_err());
    let bad = policy::sensitivity_batch(&["eta"], &[-1.0], &p, &base, 20..=30, &settings());
    assert!(bad.map_or(true, |cells| cells.iter().all(|c| c.summary.is_none() && c.error.is_some())));
}
