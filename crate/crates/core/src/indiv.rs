//! Individual continuous-time state transition model.
//!
//! Each (sample, strategy, patient) trajectory is simulated by competing
//! latent transition times: from the current state, one latent time is drawn
//! per permitted transition and the earliest wins. Under a reset clock the
//! latent time is drawn from the distribution of time spent in the state;
//! under a forward clock it is drawn from the event-time distribution
//! left-truncated at the current model time. Trajectories stop at death, at
//! the maximum age (treated as death), or at the simulation horizon (treated
//! as right-censoring). Discounted values accumulate in continuous time: a
//! stay in state h over [a, b) at constant value z contributes
//! z (e^{-ra} - e^{-rb}) / r, with the r = 0 limit z (b - a).
//!
//! Every trajectory draws from its own counter-derived RNG stream, so results
//! are identical however the work is scheduled across threads.

use alloc::vec::Vec;

use crate::context::{InputData, ModelContext, TransitionMatrix};
use crate::math::exp;
use crate::output::{ProbAxis, StateProbs, ValueRow, ValueTotals};
use crate::params::{BoundSurvival, SurvivalParams};
use crate::rng::{u01, Streams};
use crate::statevals::MeanValueParams;
use crate::{Error, Result};

/// How latent transition times relate to model time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    /// Time-in-state: each entry into a state restarts its transition
    /// distributions at zero.
    Reset,
    /// Model time: distributions are left-truncated at the current time.
    Forward,
}

const DEFAULT_MAX_T: f64 = 100.0;
const JUMP_LIMIT: usize = 100_000;

/// The disease process of an individual simulation: one survival
/// distribution per permitted transition, plus the clock and stopping rules.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    params: Vec<SurvivalParams>,
    clock: Clock,
    start_age: Option<Vec<f64>>,
    max_age: Option<f64>,
    max_t: f64,
}

impl TransitionModel {
    /// `params` holds one entry per transition number in the context's
    /// transition matrix, in order. An age cap requires per-patient starting
    /// ages (in the patient table's id order).
    pub fn new(
        ctx: &ModelContext,
        params: Vec<SurvivalParams>,
        clock: Clock,
        start_age: Option<Vec<f64>>,
        max_age: Option<f64>,
        max_t: Option<f64>,
    ) -> Result<Self> {
        let tmat = required_tmat(ctx)?;
        if params.len() != tmat.n_transitions() {
            return Err(Error::DimensionMismatch {
                what: alloc::format!(
                    "{} transitions need {} distributions, got {}",
                    tmat.n_transitions(),
                    tmat.n_transitions(),
                    params.len()
                ),
            });
        }
        let max_t = max_t.unwrap_or(DEFAULT_MAX_T);
        if !(max_t > 0.0) || !max_t.is_finite() {
            return Err(Error::InvalidTimeGrid);
        }
        if let Some(ma) = max_age {
            if !(ma > 0.0) || !ma.is_finite() {
                return Err(Error::QueryOutOfRange {
                    what: alloc::format!("maximum age {ma}"),
                });
            }
            let ages = start_age.as_ref().ok_or(Error::MissingStartAges)?;
            if ages.len() != ctx.n_patients() {
                return Err(Error::MissingStartAges);
            }
            if ages.iter().any(|a| !a.is_finite() || *a < 0.0) {
                return Err(Error::NonFinite {
                    what: "starting ages",
                });
            }
        }
        Ok(TransitionModel {
            params,
            clock,
            start_age,
            max_age,
            max_t,
        })
    }

    pub fn max_t(&self) -> f64 {
        self.max_t
    }

    /// Resolves coefficient terms against the input once, producing the
    /// shareable simulation plan.
    pub fn prepare<'a>(
        &'a self,
        ctx: &'a ModelContext,
        input: &'a InputData,
    ) -> Result<PreparedTransitions<'a>> {
        let tmat = required_tmat(ctx)?;
        let bound = self
            .params
            .iter()
            .map(|p| p.bind(input))
            .collect::<Result<Vec<_>>>()?;
        // Transition lists per state, in ascending destination order so ties
        // break deterministically toward the lowest destination id.
        let exits: Vec<Vec<(u32, u32)>> = (1..=tmat.n_states() as u32)
            .map(|from| tmat.transitions_from(from))
            .collect();
        Ok(PreparedTransitions {
            model: self,
            tmat,
            input,
            bound,
            exits,
        })
    }
}

fn required_tmat(ctx: &ModelContext) -> Result<&TransitionMatrix> {
    ctx.tmat().ok_or(Error::InvalidTransitionMatrix {
        reason: alloc::string::String::from(
            "individual simulation needs a transition structure in the model context",
        ),
    })
}

/// A transition model bound to one input dataset; read-only and shareable
/// across worker threads.
pub struct PreparedTransitions<'a> {
    model: &'a TransitionModel,
    tmat: &'a TransitionMatrix,
    input: &'a InputData,
    bound: Vec<BoundSurvival<'a>>,
    exits: Vec<Vec<(u32, u32)>>,
}

/// One jump of a simulated trajectory: the patient occupies `from` over
/// [time_start, time_stop) and then moves to `to`. On the single final row,
/// `to` is either the death state or, for censoring at the horizon, equal to
/// `from`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiseaseRow {
    pub sample: u32,
    pub strategy_id: u32,
    pub patient_id: u32,
    pub grp_id: u32,
    pub from: u32,
    pub to: u32,
    pub is_final: bool,
    pub time_start: f64,
    pub time_stop: f64,
}

impl<'a> PreparedTransitions<'a> {
    pub fn n_input_rows(&self) -> usize {
        self.input.n_rows()
    }

    /// Simulates one (sample, input row) trajectory, appending its rows.
    /// Draws come from the trajectory's own RNG stream.
    pub fn simulate_one(
        &self,
        sample: usize,
        row: usize,
        streams: &Streams,
        out: &mut Vec<DiseaseRow>,
    ) -> Result<()> {
        let mut rng = streams.trajectory(sample as u32, row as u32);
        let death = self.tmat.death_state();
        let ids = (
            sample as u32 + 1,
            self.input.strategy_ids[row],
            self.input.patient_ids[row],
            self.input.grp_ids[row],
        );
        let push = |out: &mut Vec<DiseaseRow>, from, to, is_final, t0, t1| {
            out.push(DiseaseRow {
                sample: ids.0,
                strategy_id: ids.1,
                patient_id: ids.2,
                grp_id: ids.3,
                from,
                to,
                is_final,
                time_start: t0,
                time_stop: t1,
            });
        };

        // Model time at which the age cap converts to death, if any.
        let age_cap = self.model.max_age.map(|ma| {
            let ages = self.model.start_age.as_ref().expect("checked at build");
            ma - ages[self.input.patient_pos[row] as usize]
        });
        let max_t = self.model.max_t;

        let mut state = 1u32;
        let mut t = 0.0f64;
        if let Some(cap) = age_cap {
            if cap <= 0.0 {
                push(out, state, death, true, 0.0, 0.0);
                return Ok(());
            }
        }

        for _ in 0..JUMP_LIMIT {
            // Earliest latent transition out of the current state.
            let mut best: Option<(f64, u32)> = None;
            for &(to, trans) in &self.exits[state as usize - 1] {
                let dist =
                    self.bound[trans as usize - 1].distribution(row, sample)?;
                let u = u01(&mut rng);
                let cand = match self.model.clock {
                    Clock::Reset => t + dist.sample(u)?,
                    Clock::Forward => dist.sample_truncated(t, u)?,
                };
                if best.map_or(true, |(bt, _)| cand < bt) {
                    best = Some((cand, to));
                }
            }

            // The earlier cap wins over a later transition; at equal cap
            // times death (the age cap) is preferred to censoring.
            let age_t = age_cap.unwrap_or(f64::INFINITY);
            let cap_t = age_t.min(max_t);
            let (next_t, next_state) = match best {
                Some((cand, to)) if cand <= cap_t => (cand, to),
                _ => {
                    if age_t <= max_t {
                        push(out, state, death, true, t, age_t);
                    } else {
                        push(out, state, state, true, t, max_t);
                    }
                    return Ok(());
                }
            };
            let is_final = next_state == death;
            push(out, state, next_state, is_final, t, next_t);
            if is_final {
                return Ok(());
            }
            state = next_state;
            t = next_t;
        }
        Err(Error::TrajectoryOverflow { limit: JUMP_LIMIT })
    }
}

/// The jump history of every simulated individual, rows grouped by
/// trajectory in (sample, strategy, patient) order.
#[derive(Debug, Clone, PartialEq)]
pub struct DiseaseProgress {
    rows: Vec<DiseaseRow>,
}

impl DiseaseProgress {
    /// Validates the per-trajectory invariants: rows contiguous in time from
    /// 0, exactly one final row per trajectory (its last), and the final row
    /// either reaches death or censors in place.
    pub fn new(rows: Vec<DiseaseRow>, death_state: u32) -> Result<Self> {
        let bad = |reason: alloc::string::String| Err(Error::InvalidStateValues { reason });
        let mut i = 0;
        while i < rows.len() {
            let mut j = i;
            let key = (rows[i].sample, rows[i].strategy_id, rows[i].patient_id);
            while j < rows.len()
                && (rows[j].sample, rows[j].strategy_id, rows[j].patient_id) == key
            {
                j += 1;
            }
            let traj = &rows[i..j];
            if traj[0].time_start != 0.0 {
                return bad(alloc::format!(
                    "trajectory {key:?} starts at {}, not 0",
                    traj[0].time_start
                ));
            }
            for w in traj.windows(2) {
                if w[0].time_stop != w[1].time_start || w[0].to != w[1].from {
                    return bad(alloc::format!("trajectory {key:?} is not contiguous"));
                }
            }
            let (last, body) = traj.split_last().expect("nonempty by construction");
            if body.iter().any(|r| r.is_final) || !last.is_final {
                return bad(alloc::format!(
                    "trajectory {key:?} must end with its only final row"
                ));
            }
            if last.to != death_state && last.to != last.from {
                return bad(alloc::format!(
                    "trajectory {key:?} ends in neither death nor censoring"
                ));
            }
            i = j;
        }
        Ok(DiseaseProgress { rows })
    }

    pub fn rows(&self) -> &[DiseaseRow] {
        &self.rows
    }

    /// Trajectories in row order.
    pub fn trajectories(&self) -> impl Iterator<Item = &[DiseaseRow]> {
        TrajectoryIter { rows: &self.rows }
    }
}

struct TrajectoryIter<'a> {
    rows: &'a [DiseaseRow],
}

impl<'a> Iterator for TrajectoryIter<'a> {
    type Item = &'a [DiseaseRow];

    fn next(&mut self) -> Option<&'a [DiseaseRow]> {
        if self.rows.is_empty() {
            return None;
        }
        let end = self
            .rows
            .iter()
            .position(|r| r.is_final)
            .map_or(self.rows.len(), |p| p + 1);
        let (head, tail) = self.rows.split_at(end);
        self.rows = tail;
        Some(head)
    }
}

/// Simulates every (sample, strategy, patient) trajectory sequentially.
/// Results are identical to any parallel schedule over the same streams.
pub fn sim_disease(
    tm: &TransitionModel,
    ctx: &ModelContext,
    input: &InputData,
    n_samples: usize,
    streams: &Streams,
) -> Result<DiseaseProgress> {
    let prepared = tm.prepare(ctx, input)?;
    let mut rows = Vec::with_capacity(n_samples * input.n_rows() * 2);
    for sample in 0..n_samples {
        for row in 0..input.n_rows() {
            prepared.simulate_one(sample, row, streams, &mut rows)?;
        }
    }
    DiseaseProgress::new(rows, ctx.death_state_id())
}

/// State of a trajectory at time `t`: the `from` state of the row whose
/// interval contains `t`, or the final row's destination once past the end.
fn state_at(traj: &[DiseaseRow], t: f64) -> u32 {
    for r in traj {
        if t >= r.time_start && t < r.time_stop {
            return r.from;
        }
    }
    traj.last().expect("trajectories are nonempty").to
}

/// Weighted state occupancy fractions per (sample, strategy, group) on a
/// time grid.
pub fn sim_stateprobs_indiv(
    dp: &DiseaseProgress,
    ctx: &ModelContext,
    t_grid: &[f64],
) -> Result<StateProbs> {
    if t_grid.is_empty()
        || t_grid.iter().any(|t| !t.is_finite() || *t < 0.0)
        || t_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::InvalidTimeGrid);
    }
    let n_states = ctx.n_states() + 1;
    let n_grps = ctx.patients().n_grps();
    let n_strategies = ctx.n_strategies();
    let strategy_pos = |id: u32| id as usize - 1;
    let grp_pos = |id: u32| id as usize - 1;
    let wts = ctx.patients().normalized_weights();
    let pids = ctx.patients().ids();
    let n_samples = dp
        .rows()
        .last()
        .map_or(0, |r| r.sample as usize);
    if n_samples == 0 {
        return Err(Error::EmptyTable {
            table: "disease progress",
        });
    }

    let n_t = t_grid.len();
    let mut probs = alloc::vec![0.0f64; n_samples * n_strategies * n_grps * n_states * n_t];
    for traj in dp.trajectories() {
        let head = traj[0];
        let s = head.sample as usize - 1;
        let k = strategy_pos(head.strategy_id);
        let g = grp_pos(head.grp_id);
        let p = pids
            .binary_search(&head.patient_id)
            .expect("patient ids come from the context");
        let w = wts[p];
        let base = ((s * n_strategies + k) * n_grps + g) * n_states * n_t;
        for (ti, &t) in t_grid.iter().enumerate() {
            let h = state_at(traj, t) as usize - 1;
            probs[base + h * n_t + ti] += w;
        }
    }

    StateProbs::new(
        n_samples,
        ctx.strategies().ids().to_vec(),
        ProbAxis::groups(ctx),
        n_states,
        t_grid.to_vec(),
        probs,
    )
}

/// Discounted present value of occupying a state at constant value `z` over
/// [a, b): z (e^{-ra} - e^{-rb}) / r, with the exact r = 0 limit.
fn present_value(z: f64, a: f64, b: f64, r: f64) -> f64 {
    if r == 0.0 {
        z * (b - a)
    } else {
        z * (exp(-r * a) - exp(-r * b)) / r
    }
}

/// Accumulates discounted state values over every trajectory, splitting each
/// stay at the value table's interval boundaries (measured from state entry
/// or model start per the table's flag). Totals are weighted averages over
/// patients, reported per (rate, sample, strategy, group, state).
pub fn sim_values_indiv(
    dp: &DiseaseProgress,
    vals: &MeanValueParams,
    ctx: &ModelContext,
    discount_rates: &[f64],
) -> Result<ValueTotals> {
    for &dr in discount_rates {
        if !(dr >= 0.0) || !dr.is_finite() {
            return Err(Error::NegativeDiscountRate { rate: dr });
        }
    }
    let n_alive = ctx.n_states();
    if vals.n_states() != n_alive {
        return Err(Error::DimensionMismatch {
            what: alloc::format!(
                "value table covers {} states, model has {n_alive} non-death states",
                vals.n_states()
            ),
        });
    }
    let n_grps = ctx.patients().n_grps();
    let n_strategies = ctx.n_strategies();
    let wts = ctx.patients().normalized_weights();
    let pids = ctx.patients().ids();
    let n_samples = dp.rows().last().map_or(0, |r| r.sample as usize);
    if n_samples == 0 {
        return Err(Error::EmptyTable {
            table: "disease progress",
        });
    }
    if vals.n_samples() != 1 && vals.n_samples() < n_samples {
        return Err(Error::UnbalancedSamples);
    }

    let starts = vals.interval_starts();
    let n_dr = discount_rates.len();
    let mut totals =
        alloc::vec![0.0f64; n_dr * n_samples * n_strategies * n_grps * n_alive];
    for traj in dp.trajectories() {
        let head = traj[0];
        let s = head.sample as usize - 1;
        let k = head.strategy_id as usize - 1;
        let g = head.grp_id as usize - 1;
        let p = pids
            .binary_search(&head.patient_id)
            .expect("patient ids come from the context");
        let w = wts[p];
        for r in traj {
            let h = r.from as usize;
            if h > n_alive || r.time_stop <= r.time_start {
                continue; // death accrues nothing; empty stays likewise
            }
            let state = h - 1;
            // Split [time_start, time_stop) at the value interval
            // boundaries, mapped into model time by the table's clock.
            let offset = if vals.time_reset() { r.time_start } else { 0.0 };
            let mut a = r.time_start;
            while a < r.time_stop {
                let local = a - offset;
                let idx = vals.interval_index(local);
                let b = if idx + 1 < starts.len() {
                    (starts[idx + 1] + offset).min(r.time_stop)
                } else {
                    r.time_stop
                };
                for (di, &dr) in discount_rates.iter().enumerate() {
                    let z = vals.value_at(s, k, p, state, idx);
                    let out = (((di * n_samples + s) * n_strategies + k) * n_grps + g)
                        * n_alive
                        + state;
                    totals[out] += w * present_value(z, a, b, dr);
                }
                a = b;
            }
        }
    }

    let strategy_ids = ctx.strategies().ids();
    let mut rows = Vec::with_capacity(totals.len());
    let mut idx = 0;
    for &dr in discount_rates {
        for s in 0..n_samples {
            for k in 0..n_strategies {
                for g in 0..n_grps {
                    for state in 0..n_alive {
                        rows.push(ValueRow {
                            sample: s as u32 + 1,
                            strategy_id: strategy_ids[k],
                            grp_id: g as u32 + 1,
                            patient_id: None,
                            state_id: state as u32 + 1,
                            dr,
                            value: totals[idx],
                        });
                        idx += 1;
                    }
                }
            }
        }
    }
    Ok(ValueTotals::new(rows))
}
