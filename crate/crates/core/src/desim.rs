//! Discrete-event simulation of the queues, used as an oracle for the
//! analytical formulas.
//!
//! Replications run on independent ChaCha streams (`seed`, stream =
//! replication index) and may execute in parallel; each replication is a
//! strictly sequential event loop.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;
use thiserror::Error;

use crate::exec::Execution;
use crate::numeric::MeanCi;
use crate::params::ModelParams;
use crate::queueing;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Invalid(&'static str),
    #[error("queue is unstable (utilization {rho:.4} >= 1)")]
    Unstable { rho: f64 },
    #[error("simulated {stage} queue grew beyond {bound} jobs")]
    Diverged { stage: &'static str, bound: usize },
}

/// Run-length settings. `warmup` and `horizon` count customers: statistics
/// use customers with index in `warmup..horizon`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub arrival_rate: f64,
    pub servers: u32,
    pub mean_service: f64,
    pub warmup: usize,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
}

impl SimConfig {
    /// M/M/N run with the default 20% warmup and 30 replications.
    pub fn mmn(arrival_rate: f64, servers: u32, mean_service: f64, horizon: usize, seed: u64) -> Self {
        Self { arrival_rate, servers, mean_service, warmup: horizon / 5, horizon, replications: 30, seed }
    }

    fn check(&self) -> Result<(), SimError> {
        if self.horizon <= self.warmup {
            return Err(SimError::Invalid("horizon must exceed warmup"));
        }
        if self.replications < 1 {
            return Err(SimError::Invalid("at least one replication is required"));
        }
        Ok(())
    }

    fn rng(&self, replication: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replication as u64);
        rng
    }
}

/// Mean over replications with a 95% Student-t half-width.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimResult {
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub replication_means: Vec<f64>,
}

impl SimResult {
    pub fn from_replications(replication_means: Vec<f64>) -> Self {
        let ci = MeanCi::from_samples(&replication_means);
        Self { mean: ci.mean, ci_halfwidth: ci.half_width, replication_means }
    }

    /// Whether `x` lies in the confidence interval (with rounding slack, so a
    /// deterministic stage with zero width still matches its exact value).
    pub fn contains(&self, x: f64) -> bool {
        (x - self.mean).abs() <= self.ci_halfwidth + 1e-9 * x.abs().max(self.mean.abs())
    }
}

// Nonnegative f64 bit patterns order like the values.
fn key(t: f64) -> Reverse<u64> {
    debug_assert!(t >= 0.0);
    Reverse(t.to_bits())
}

fn unkey(k: Reverse<u64>) -> f64 {
    f64::from_bits(k.0)
}

/// FCFS M/M/N queue: mean delay in queue (hr) over replications.
pub fn simulate_mmn(config: &SimConfig, exec: Execution) -> Result<SimResult, SimError> {
    config.check()?;
    if config.servers == 0 || !(config.arrival_rate > 0.0) || !(config.mean_service > 0.0) {
        return Err(SimError::Invalid("rates and server count must be positive"));
    }
    let rho = config.arrival_rate * config.mean_service / config.servers as f64;
    if rho >= 1.0 {
        return Err(SimError::Unstable { rho });
    }
    let inter = Exp::new(config.arrival_rate).expect("positive rate");
    let service = Exp::new(1.0 / config.mean_service).expect("positive rate");
    let means = exec.map_range(config.replications, |rep| {
        let mut rng = config.rng(rep);
        // Earliest-free server takes the next customer; exact for FCFS.
        let mut free: BinaryHeap<Reverse<u64>> = (0..config.servers).map(|_| key(0.0)).collect();
        let mut clock = 0.0;
        let mut total = 0.0;
        for i in 0..config.horizon {
            clock += inter.sample(&mut rng);
            let earliest = unkey(free.pop().expect("servers"));
            let start = earliest.max(clock);
            if i >= config.warmup {
                total += start - clock;
            }
            free.push(key(start + service.sample(&mut rng)));
        }
        total / (config.horizon - config.warmup) as f64
    });
    Ok(SimResult::from_replications(means))
}

/// Stage statistics of the delivery + charging network.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NetworkSimResult {
    /// Wait for a courier (both legs pooled), hr.
    pub t_response: SimResult,
    /// Pickup time drawn at dispatch from the idle-courier count, hr.
    pub t_pickup: SimResult,
    /// Wait for a charger, hr.
    pub t_wait: SimResult,
    /// Fraction of courier time spent on jobs.
    pub rho_d: SimResult,
    /// Fraction of charger time spent charging.
    pub rho_c: SimResult,
    /// Time-average number of couriers on jobs.
    pub busy_couriers: SimResult,
    /// Delivery-job throughput times mean delivery service time (Little's law
    /// counterpart of `busy_couriers`).
    pub little_busy: SimResult,
    /// Chargers per station used by the simulation.
    pub station_servers: Vec<u32>,
}

/// How a courier job's pickup time is set in [`simulate_network`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PickupModel {
    /// `φ√(A/N_i)` with N_i the idle couriers at dispatch. A dip to very few
    /// idle couriers makes pickups slow, which can tip the fleet into the
    /// wild-goose-chase state near the analytical equilibrium.
    #[default]
    IdleCount,
    /// The analytical normal-regime t_p for every job, as the queueing
    /// formulas assume.
    FixedPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Arrival,
    /// A courier finishes a job; `outbound` marks the trip to the station.
    DeliveryDone {
        customer: usize,
        outbound: bool,
    },
    ChargeDone {
        customer: usize,
        station: usize,
    },
}

struct Job {
    customer: usize,
    outbound: bool,
    queued_at: f64,
}

#[derive(Default)]
struct Tally {
    response: (f64, usize),
    pickup: (f64, usize),
    wait: (f64, usize),
    service: (f64, usize),
    busy_courier_area: f64,
    busy_charger_area: f64,
}

/// Chargers per station: `round(m)` split evenly, remainder one each to the
/// first stations.
pub fn station_servers(m: f64, k: u32) -> Vec<u32> {
    let total = m.round().max(0.0) as u64;
    let k64 = k as u64;
    (0..k64).map(|i| (total / k64 + u64::from(i < total % k64)) as u32).collect()
}

/// Simulates customer lifecycles: request → courier (pickup + delivery to a
/// uniformly chosen station) → charger → courier (return trip) → done.
///
/// A courier job takes an exponential time with mean t_p + t_d, with t_p set
/// according to `pickup`. Uses
/// `sim.warmup`, `sim.horizon`, `sim.replications` and `sim.seed`; the queue
/// parameters come from the other arguments.
#[allow(clippy::too_many_arguments)]
pub fn simulate_network(
    lambda: f64,
    n: u32,
    k: u32,
    m: f64,
    params: &ModelParams,
    sim: &SimConfig,
    pickup: PickupModel,
    exec: Execution,
) -> Result<NetworkSimResult, SimError> {
    sim.check()?;
    if !(lambda > 0.0) || n == 0 || k == 0 {
        return Err(SimError::Invalid("demand, couriers and stations must be positive"));
    }
    let servers = station_servers(m, k);
    if servers.contains(&0) {
        return Err(SimError::Invalid("every station needs at least one charger"));
    }
    let rho_c = lambda * params.t_charge / servers.iter().map(|&s| s as f64).sum::<f64>();
    if rho_c >= 1.0 {
        return Err(SimError::Unstable { rho: rho_c });
    }
    let t_delivery = queueing::delivery_time(k, params);
    let fixed_pickup = match pickup {
        PickupModel::IdleCount => None,
        PickupModel::FixedPoint => {
            let roots = queueing::solve_idle_couriers(lambda, n as f64, t_delivery, params)
                .map_err(|_| SimError::Invalid("no idle-courier root at this demand and fleet"))?;
            Some(queueing::pickup_time(roots.larger, params))
        }
    };
    let bound = 200 * (n as usize + servers.len()) + 100_000;

    let reps = exec.map_range(sim.replications, |rep| -> Result<[f64; 7], SimError> {
        let mut rng = sim.rng(rep);
        let inter = Exp::new(lambda).expect("positive rate");
        let charge = Exp::new(1.0 / params.t_charge).expect("positive rate");
        let unit = Exp::new(1.0).expect("positive rate");

        let mut events: BinaryHeap<Reverse<(u64, u64, Event)>> = BinaryHeap::new();
        let mut seq = 0u64;
        let mut push = |events: &mut BinaryHeap<_>, t: f64, e: Event| {
            seq += 1;
            events.push(Reverse((t.to_bits(), seq, e)));
        };

        let mut idle = n;
        let mut delivery_queue: VecDeque<Job> = VecDeque::new();
        let mut station_busy = vec![0u32; servers.len()];
        let mut station_queue: Vec<VecDeque<(usize, f64)>> = vec![VecDeque::new(); servers.len()];
        let total_servers: f64 = servers.iter().map(|&s| s as f64).sum();

        let mut tally = Tally::default();
        let mut arrivals = 0usize;
        let mut done = 0usize;
        let target = sim.horizon - sim.warmup;
        let measured = |c: usize| c >= sim.warmup && c < sim.horizon;
        let (mut window_start, mut window_end) = (f64::NAN, f64::NAN);
        let mut last = 0.0f64;

        push(&mut events, inter.sample(&mut rng), Event::Arrival);
        while let Some(Reverse((bits, _, event))) = events.pop() {
            let now = f64::from_bits(bits);
            if now > window_start && window_end.is_nan() {
                let from = last.max(window_start);
                tally.busy_courier_area += (n - idle) as f64 * (now - from);
                tally.busy_charger_area += station_busy.iter().sum::<u32>() as f64 * (now - from);
            }
            last = now;

            // Jobs to hand to couriers after this event.
            let mut new_job: Option<Job> = None;
            match event {
                Event::Arrival => {
                    if arrivals == sim.warmup {
                        window_start = now;
                    }
                    if arrivals == sim.horizon {
                        window_end = now;
                    }
                    new_job = Some(Job { customer: arrivals, outbound: true, queued_at: now });
                    arrivals += 1;
                    push(&mut events, now + inter.sample(&mut rng), Event::Arrival);
                }
                Event::DeliveryDone { customer, outbound } => {
                    idle += 1;
                    if outbound {
                        let station = rng.random_range(0..servers.len());
                        if station_busy[station] < servers[station] {
                            station_busy[station] += 1;
                            if measured(customer) {
                                tally.wait.1 += 1;
                            }
                            push(&mut events, now + charge.sample(&mut rng), Event::ChargeDone { customer, station });
                        } else {
                            station_queue[station].push_back((customer, now));
                            if station_queue[station].len() > bound {
                                return Err(SimError::Diverged { stage: "charging", bound });
                            }
                        }
                    } else if measured(customer) {
                        done += 1;
                    }
                }
                Event::ChargeDone { customer, station } => {
                    new_job = Some(Job { customer, outbound: false, queued_at: now });
                    if let Some((next, since)) = station_queue[station].pop_front() {
                        if measured(next) {
                            tally.wait.0 += now - since;
                            tally.wait.1 += 1;
                        }
                        push(&mut events, now + charge.sample(&mut rng), Event::ChargeDone { customer: next, station });
                    } else {
                        station_busy[station] -= 1;
                    }
                }
            }
            if let Some(job) = new_job {
                delivery_queue.push_back(job);
                if delivery_queue.len() > bound {
                    return Err(SimError::Diverged { stage: "delivery", bound });
                }
            }
            while idle > 0 {
                let Some(job) = delivery_queue.pop_front() else { break };
                let t_pickup = fixed_pickup.unwrap_or_else(|| queueing::pickup_time(idle as f64, params));
                idle -= 1;
                let duration = (t_pickup + t_delivery) * unit.sample(&mut rng);
                if measured(job.customer) {
                    tally.response.0 += now - job.queued_at;
                    tally.response.1 += 1;
                    tally.pickup.0 += t_pickup;
                    tally.pickup.1 += 1;
                    tally.service.0 += duration;
                    tally.service.1 += 1;
                }
                push(
                    &mut events,
                    now + duration,
                    Event::DeliveryDone { customer: job.customer, outbound: job.outbound },
                );
            }
            if done == target {
                break;
            }
        }
        let span = window_end - window_start;
        let mean = |(s, c): (f64, usize)| if c == 0 { 0.0 } else { s / c as f64 };
        let service = mean(tally.service);
        let throughput = 2.0 * (sim.horizon - sim.warmup) as f64 / span;
        Ok([
            mean(tally.response),
            mean(tally.pickup),
            mean(tally.wait),
            tally.busy_courier_area / span / n as f64,
            tally.busy_charger_area / span / total_servers,
            tally.busy_courier_area / span,
            throughput * service,
        ])
    });
    let reps: Vec<[f64; 7]> = reps.into_iter().collect::<Result<_, _>>()?;
    let col = |i: usize| SimResult::from_replications(reps.iter().map(|r| r[i]).collect());
    Ok(NetworkSimResult {
        t_response: col(0),
        t_pickup: col(1),
        t_wait: col(2),
        rho_d: col(3),
        rho_c: col(4),
        busy_couriers: col(5),
        little_busy: col(6),
        station_servers: servers,
    })
}
