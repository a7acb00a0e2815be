//! Shared simulation output containers: state probabilities over a time grid
//! and discounted value totals, in the canonical orderings the model
//! families and the cost-effectiveness layer agree on.
//!
//! State probabilities are stored densely, indexed (sample, strategy, person,
//! state, time) with samples outermost, where "person" is either a patient or
//! a patient group depending on how the probabilities were produced. Row
//! iteration yields the same order, so downstream output is independent of
//! how the array was computed or parallelized.

use alloc::vec::Vec;

use crate::context::ModelContext;
use crate::{Error, Result};

/// The person dimension of a probability array: individual patients (with
/// weights and group membership) or aggregated patient groups.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbAxis {
    Patients {
        ids: Vec<u32>,
        /// Weights normalized to sum to 1 within each group.
        wts: Vec<f64>,
        grps: Vec<u32>,
    },
    Groups { ids: Vec<u32> },
}

impl ProbAxis {
    /// Patient axis taken from a model context.
    pub fn patients(ctx: &ModelContext) -> Self {
        ProbAxis::Patients {
            ids: ctx.patients().ids().to_vec(),
            wts: ctx.patients().normalized_weights(),
            grps: ctx.patients().grp_ids().to_vec(),
        }
    }

    /// Group axis taken from a model context.
    pub fn groups(ctx: &ModelContext) -> Self {
        ProbAxis::Groups {
            ids: (1..=ctx.patients().n_grps() as u32).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ProbAxis::Patients { ids, .. } => ids.len(),
            ProbAxis::Groups { ids } => ids.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One emitted state-probability row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateProbRow {
    pub sample: u32,
    pub strategy_id: u32,
    pub grp_id: u32,
    pub patient_id: Option<u32>,
    pub patient_wt: Option<f64>,
    pub state_id: u32,
    pub t: f64,
    pub prob: f64,
}

/// State occupancy probabilities on a time grid, for every sample, strategy,
/// person, and state (death included as the highest state id).
#[derive(Debug, Clone, PartialEq)]
pub struct StateProbs {
    n_samples: usize,
    strategy_ids: Vec<u32>,
    axis: ProbAxis,
    n_states: usize,
    t_grid: Vec<f64>,
    probs: Vec<f64>,
}

impl StateProbs {
    /// Builds a probability array, validating the grid and that state
    /// probabilities sum to 1 within 1e-8 at every (id, time). Entries may
    /// stray outside [0, 1] by at most 1e-8 and are clamped.
    pub fn new(
        n_samples: usize,
        strategy_ids: Vec<u32>,
        axis: ProbAxis,
        n_states: usize,
        t_grid: Vec<f64>,
        mut probs: Vec<f64>,
    ) -> Result<Self> {
        if t_grid.is_empty() || t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidTimeGrid);
        }
        if t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidTimeGrid);
        }
        let expected =
            n_samples * strategy_ids.len() * axis.len() * n_states * t_grid.len();
        if probs.len() != expected || n_states < 2 || n_samples == 0 {
            return Err(Error::DimensionMismatch {
                what: alloc::format!(
                    "state probability array needs {expected} entries, got {}",
                    probs.len()
                ),
            });
        }
        let n_t = t_grid.len();
        let per_id = n_states * n_t;
        for (block, chunk) in probs.chunks_mut(per_id).enumerate() {
            for ti in 0..n_t {
                let mut sum = 0.0;
                for h in 0..n_states {
                    let v = chunk[h * n_t + ti];
                    if !(v >= -1e-8 && v <= 1.0 + 1e-8) || v.is_nan() {
                        return Err(Error::ProbabilityOutOfBounds {
                            index: block,
                            row: h,
                            col: ti,
                            value: v,
                        });
                    }
                    chunk[h * n_t + ti] = v.clamp(0.0, 1.0);
                    sum += chunk[h * n_t + ti];
                }
                if crate::math::fabs(sum - 1.0) > 1e-8 {
                    return Err(Error::RowNotStochastic {
                        index: block,
                        row: ti,
                        sum,
                    });
                }
            }
        }
        Ok(StateProbs {
            n_samples,
            strategy_ids,
            axis,
            n_states,
            t_grid,
            probs,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_strategies(&self) -> usize {
        self.strategy_ids.len()
    }

    pub fn n_persons(&self) -> usize {
        self.axis.len()
    }

    /// State count including death.
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn axis(&self) -> &ProbAxis {
        &self.axis
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    /// Probability by axis positions (all 0-based; `state` includes death as
    /// the last position).
    pub fn prob(
        &self,
        sample: usize,
        strategy: usize,
        person: usize,
        state: usize,
        t_index: usize,
    ) -> f64 {
        let n_t = self.t_grid.len();
        let idx = (((sample * self.strategy_ids.len() + strategy) * self.axis.len() + person)
            * self.n_states
            + state)
            * n_t
            + t_index;
        self.probs[idx]
    }

    /// Rows in canonical order: sample, strategy, person, state, time.
    pub fn iter_rows(&self) -> impl Iterator<Item = StateProbRow> + '_ {
        let n_t = self.t_grid.len();
        self.probs.iter().enumerate().map(move |(idx, &prob)| {
            let ti = idx % n_t;
            let rest = idx / n_t;
            let h = rest % self.n_states;
            let rest = rest / self.n_states;
            let p = rest % self.axis.len();
            let rest = rest / self.axis.len();
            let k = rest % self.strategy_ids.len();
            let s = rest / self.strategy_ids.len();
            let (grp_id, patient_id, patient_wt) = match &self.axis {
                ProbAxis::Patients { ids, wts, grps } => {
                    (grps[p], Some(ids[p]), Some(wts[p]))
                }
                ProbAxis::Groups { ids } => (ids[p], None, None),
            };
            StateProbRow {
                sample: s as u32 + 1,
                strategy_id: self.strategy_ids[k],
                grp_id,
                patient_id,
                patient_wt,
                state_id: h as u32 + 1,
                t: self.t_grid[ti],
                prob,
            }
        })
    }
}

/// One discounted total for a (sample, strategy, person, state, rate) key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueRow {
    pub sample: u32,
    pub strategy_id: u32,
    pub grp_id: u32,
    pub patient_id: Option<u32>,
    pub state_id: u32,
    pub dr: f64,
    pub value: f64,
}

/// Discounted value totals in canonical order: rate, sample, strategy,
/// person, state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTotals {
    rows: Vec<ValueRow>,
}

impl ValueTotals {
    pub fn new(rows: Vec<ValueRow>) -> Self {
        ValueTotals { rows }
    }

    pub fn rows(&self) -> &[ValueRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<ValueRow> {
        self.rows
    }

    /// Collapses per-patient rows to per-group rows by averaging with the
    /// within-group normalized patient weights. Group-level rows pass
    /// through unchanged.
    pub fn collapse_to_groups(&self, ctx: &ModelContext) -> ValueTotals {
        let wts = ctx.patients().normalized_weights();
        let ids = ctx.patients().ids();
        let mut rows: Vec<ValueRow> = Vec::new();
        for r in &self.rows {
            let (wt, grp) = match r.patient_id {
                None => (1.0, r.grp_id),
                Some(pid) => {
                    let p = ids.binary_search(&pid).expect("patient id from context");
                    (wts[p], r.grp_id)
                }
            };
            let key = ValueRow {
                patient_id: None,
                grp_id: grp,
                value: 0.0,
                ..*r
            };
            match rows.iter_mut().find(|o| {
                o.sample == key.sample
                    && o.strategy_id == key.strategy_id
                    && o.grp_id == key.grp_id
                    && o.state_id == key.state_id
                    && o.dr == key.dr
            }) {
                Some(o) => o.value += wt * r.value,
                None => rows.push(ValueRow {
                    value: wt * r.value,
                    ..key
                }),
            }
        }
        ValueTotals { rows }
    }
}
