//! Equilibrium solvers for an on-demand valet charging market.
//!
//! A monopoly platform hires couriers who shuttle customers' electric
//! vehicles to public charging stations and back. This crate computes the
//! resulting steady state and the platform's profit-maximizing decisions:
//!
//! * [`queueing`] — delivery queue (couriers) and charging queues (chargers),
//!   the idle-courier fixed point and the Erlang C / Sakasegawa waits.
//! * [`econ`] — nested-logit demand, logit courier supply, their inverses and
//!   the surplus integrals.
//! * [`market`] — full market outcomes for a (demand, supply) pair and the
//!   certified grid search for the profit-maximizing pair.
//! * [`policy`] — station-density sweeps, the tax-and-invest leader/follower
//!   sweep, the charger-cost threshold search and sensitivity batches.
//! * [`desim`] — discrete-event simulation used as an oracle for the queue
//!   formulas.
//! * [`params`] — parameter sets, configuration files and the Monte-Carlo
//!   calibration of the delivery-time coefficient.
//!
//! Data-parallel loops (grid rows, sweep points, replications) run on rayon
//! when the `parallel` feature is enabled and [`Execution::Parallel`] is
//! requested; otherwise they fall back to plain iterators with identical
//! results.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod desim;
pub mod econ;
pub mod exec;
pub mod market;
pub mod numeric;
pub mod params;
pub mod policy;
pub mod queueing;

pub use exec::Execution;
pub use market::{GridSpec, Infeasibility, Marginals, MarketError, MarketModel, MarketOutcome};
pub use params::{ModelParams, ParamError, PolicyConfig};
pub use queueing::{QueueError, QueueSolution};
