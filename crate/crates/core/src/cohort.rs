//! Cohort discrete-time state transition model.
//!
//! The cohort's state distribution evolves by the recursion
//! `x_{c+1}^T = x_c^T P_c`, where `P_c` is the transition probability matrix
//! whose time interval contains the cycle start time. Expected discounted
//! values approximate `∫ z_h(t) e^{-rt} p_h(t) dt` by a Riemann sum over the
//! cycle grid, with the evaluation point per cycle chosen by the integration
//! method: left endpoint, right endpoint, or the trapezoid average of both.

use alloc::vec;
use alloc::vec::Vec;

use crate::context::ModelContext;
use crate::math::{exp, fabs};
use crate::output::{ProbAxis, StateProbs, ValueRow, ValueTotals};
use crate::params::TransProbArray;
use crate::statevals::MeanValueParams;
use crate::{Error, Result};

/// Evaluation point for the per-cycle Riemann sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrationMethod {
    Left,
    Right,
    Trapezoid,
}

/// Discrete-time settings: cycle length in years, cycle count, and the value
/// integration method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortSettings {
    pub cycle_length: f64,
    pub n_cycles: usize,
    pub method: IntegrationMethod,
}

impl CohortSettings {
    fn validate(&self) -> Result<()> {
        if !(self.cycle_length > 0.0) || !self.cycle_length.is_finite() || self.n_cycles == 0 {
            return Err(Error::InvalidTimeGrid);
        }
        Ok(())
    }
}

/// Runs the cohort recursion for every (sample, strategy, patient), starting
/// each from `x0`, and records occupancy at every cycle boundary from 0 to
/// `n_cycles * cycle_length`.
pub fn sim_stateprobs_cohort(
    tp: &TransProbArray,
    ctx: &ModelContext,
    x0: &[f64],
    settings: &CohortSettings,
) -> Result<StateProbs> {
    settings.validate()?;
    let h = tp.n_states();
    if h != ctx.n_states() + 1 {
        return Err(Error::DimensionMismatch {
            what: alloc::format!(
                "transition matrices have {h} states, context implies {}",
                ctx.n_states() + 1
            ),
        });
    }
    if x0.len() != h {
        return Err(Error::DimensionMismatch {
            what: alloc::format!("initial distribution has {} entries, need {h}", x0.len()),
        });
    }
    let sum: f64 = x0.iter().sum();
    if x0.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || fabs(sum - 1.0) > 1e-9 {
        return Err(Error::InvalidInitialDistribution { sum });
    }

    let n_strategies = ctx.n_strategies();
    let n_patients = ctx.n_patients();
    let n_int = tp.interval_starts().len();
    let rows = n_strategies * n_patients;
    if tp.n_matrices() % (rows * n_int) != 0 {
        return Err(Error::DimensionMismatch {
            what: alloc::format!(
                "{} transition matrices do not cover {rows} ids x {n_int} intervals evenly",
                tp.n_matrices()
            ),
        });
    }
    let n_samples = tp.n_matrices() / (rows * n_int);
    let u = settings.cycle_length;
    let n_t = settings.n_cycles + 1;
    let t_grid: Vec<f64> = (0..n_t).map(|c| c as f64 * u).collect();

    let mut probs = vec![0.0f64; n_samples * rows * h * n_t];
    let mut x = vec![0.0f64; h];
    let mut next = vec![0.0f64; h];
    for s in 0..n_samples {
        for row in 0..rows {
            x.copy_from_slice(x0);
            let base = (s * rows + row) * h * n_t;
            for (hh, &v) in x.iter().enumerate() {
                probs[base + hh * n_t] = v;
            }
            for c in 0..settings.n_cycles {
                let m = tp.interval_index(c as f64 * u);
                let p = tp.matrix((s * rows + row) * n_int + m);
                for (j, nj) in next.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (i, &xi) in x.iter().enumerate() {
                        acc += xi * p[i * h + j];
                    }
                    *nj = acc;
                }
                core::mem::swap(&mut x, &mut next);
                for (hh, &v) in x.iter().enumerate() {
                    probs[base + hh * n_t + c + 1] = v;
                }
            }
        }
    }

    StateProbs::new(
        n_samples,
        ctx.strategies().ids().to_vec(),
        ProbAxis::patients(ctx),
        h,
        t_grid,
        probs,
    )
}

/// Integrates state values against occupancy probabilities over the
/// probability grid, once per discount rate. The death state accrues
/// nothing. Works on any ascending grid, so partitioned-survival output
/// integrates the same way; `z = 1` per state yields life-years.
pub fn integrate_statevals(
    sp: &StateProbs,
    vals: &MeanValueParams,
    ctx: &ModelContext,
    discount_rates: &[f64],
    method: IntegrationMethod,
) -> Result<ValueTotals> {
    let (patient_ids, grps) = match sp.axis() {
        ProbAxis::Patients { ids, grps, .. } => (ids.clone(), grps.clone()),
        ProbAxis::Groups { .. } => {
            return Err(Error::DimensionMismatch {
                what: "value integration needs patient-level state probabilities".into(),
            });
        }
    };
    let n_alive = sp.n_states() - 1;
    if vals.n_states() != n_alive {
        return Err(Error::DimensionMismatch {
            what: alloc::format!(
                "value table covers {} states, model has {n_alive} non-death states",
                vals.n_states()
            ),
        });
    }
    // Cohort probabilities are indexed by model time only, so a state-entry
    // clock is representable only when the values are time-constant.
    if vals.time_reset() && vals.interval_starts().len() > 1 {
        return Err(Error::TimeOriginMismatch {
            model: "state entry",
            query: "model start",
        });
    }
    for &dr in discount_rates {
        if !(dr >= 0.0) || !dr.is_finite() {
            return Err(Error::NegativeDiscountRate { rate: dr });
        }
    }

    let grid = sp.t_grid();
    let strategy_ids = ctx.strategies().ids();
    let mut rows = Vec::with_capacity(
        discount_rates.len() * sp.n_samples() * sp.n_strategies() * sp.n_persons() * n_alive,
    );
    for &dr in discount_rates {
        for s in 0..sp.n_samples() {
            for k in 0..sp.n_strategies() {
                for p in 0..sp.n_persons() {
                    for state in 0..n_alive {
                        let f = |ti: usize| {
                            let t = grid[ti];
                            let z =
                                vals.value_at(s, k, p, state, vals.interval_index(t));
                            z * sp.prob(s, k, p, state, ti) * exp(-dr * t)
                        };
                        let mut total = 0.0;
                        for c in 0..grid.len() - 1 {
                            let dt = grid[c + 1] - grid[c];
                            total += dt
                                * match method {
                                    IntegrationMethod::Left => f(c),
                                    IntegrationMethod::Right => f(c + 1),
                                    IntegrationMethod::Trapezoid => {
                                        0.5 * (f(c) + f(c + 1))
                                    }
                                };
                        }
                        rows.push(ValueRow {
                            sample: s as u32 + 1,
                            strategy_id: strategy_ids[k],
                            grp_id: grps[p],
                            patient_id: Some(patient_ids[p]),
                            state_id: state as u32 + 1,
                            dr,
                            value: total,
                        });
                    }
                }
            }
        }
    }
    Ok(ValueTotals::new(rows))
}
