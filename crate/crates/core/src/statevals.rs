//! State values: per-state utilities and costs attached to the model, drawn
//! once per PSA sample and resolved for any (sample, strategy, patient,
//! state, time) query.
//!
//! A value table lists one distribution per key combination over the
//! dimensions it uses (state always; strategy, group or patient, and time
//! interval optionally). Drawing expands the table into a dense array ordered
//! (sample, strategy, patient, state, interval); dimensions the table does
//! not use are broadcast. Time intervals are left-closed and the last one
//! extends to infinity, so a query at an interval boundary reads the interval
//! that starts there and a query past the last boundary reads the last value.
//! The `time_reset` flag records whether interval time is measured from model
//! start or from entry into the current state.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::context::ModelContext;
use crate::math::{invert_nonincreasing, probit, reg_inc_beta};
use crate::params::normalize_intervals;
use crate::rng::u01;
use crate::survival::Distribution;
use crate::{Error, Result};

/// Distribution of one state value across PSA samples.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueDist {
    /// Known without uncertainty; identical in every sample.
    Fixed { est: f64 },
    /// Beta via method of moments on (mean, standard error).
    Beta { mean: f64, se: f64 },
    /// Beta with natural shape parameters.
    BetaParams { shape1: f64, shape2: f64 },
    /// Gamma via method of moments on (mean, standard error).
    Gamma { mean: f64, se: f64 },
    /// Gamma with natural (shape, rate) parameters.
    GammaParams { shape: f64, rate: f64 },
    /// Log-normal on the natural (meanlog, sdlog) scale.
    LogNormal { meanlog: f64, sdlog: f64 },
    /// Uniform on [min, max].
    Uniform { min: f64, max: f64 },
    /// Normal with mean and standard error.
    Normal { mean: f64, se: f64 },
    /// Values pre-simulated elsewhere, one per sample, consumed verbatim.
    Presampled { values: Vec<f64> },
}

impl ValueDist {
    fn validate(&self, n_samples: usize) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidStateValues { reason });
        match self {
            ValueDist::Fixed { est } => {
                if !est.is_finite() {
                    return bad(alloc::format!("fixed value {est} is not finite"));
                }
            }
            ValueDist::Beta { mean, se } => {
                crate::params::mom_beta(*mean, *se)?;
            }
            ValueDist::BetaParams { shape1, shape2 } => {
                if !(*shape1 > 0.0) || !(*shape2 > 0.0) {
                    return bad(alloc::format!(
                        "beta shapes ({shape1}, {shape2}) must be positive"
                    ));
                }
            }
            ValueDist::Gamma { mean, se } => {
                crate::params::mom_gamma(*mean, *se)?;
            }
            ValueDist::GammaParams { shape, rate } => {
                Distribution::Gamma {
                    shape: *shape,
                    rate: *rate,
                }
                .validate()?;
            }
            ValueDist::LogNormal { meanlog, sdlog } => {
                Distribution::LogNormal {
                    meanlog: *meanlog,
                    sdlog: *sdlog,
                }
                .validate()?;
            }
            ValueDist::Uniform { min, max } => {
                if !min.is_finite() || !max.is_finite() || !(min < max) {
                    return bad(alloc::format!(
                        "uniform range [{min}, {max}] must be finite with min < max"
                    ));
                }
            }
            ValueDist::Normal { mean, se } => {
                if !mean.is_finite() || !(*se > 0.0) || !se.is_finite() {
                    return bad(alloc::format!(
                        "normal moments (mean {mean}, se {se}) need a finite mean and positive se; \
                         use a fixed value for se = 0"
                    ));
                }
            }
            ValueDist::Presampled { values } => {
                if values.len() != n_samples {
                    return bad(alloc::format!(
                        "pre-simulated column has {} values, run uses {n_samples} samples",
                        values.len()
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return bad("pre-simulated column contains non-finite values".into());
                }
            }
        }
        Ok(())
    }

    /// Maps one uniform variate in (0, 1) to a value. Fixed and pre-simulated
    /// entries ignore the variate (and the draw loop never spends one).
    pub fn sample(&self, u: f64, sample: usize) -> f64 {
        match self {
            ValueDist::Fixed { est } => *est,
            ValueDist::Beta { mean, se } => {
                let (a, b) = crate::params::mom_beta(*mean, *se).expect("validated");
                beta_quantile(a, b, u)
            }
            ValueDist::BetaParams { shape1, shape2 } => beta_quantile(*shape1, *shape2, u),
            ValueDist::Gamma { mean, se } => {
                let (shape, rate) = crate::params::mom_gamma(*mean, *se).expect("validated");
                Distribution::Gamma { shape, rate }
                    .sample(u)
                    .expect("validated")
            }
            ValueDist::GammaParams { shape, rate } => Distribution::Gamma {
                shape: *shape,
                rate: *rate,
            }
            .sample(u)
            .expect("validated"),
            ValueDist::LogNormal { meanlog, sdlog } => Distribution::LogNormal {
                meanlog: *meanlog,
                sdlog: *sdlog,
            }
            .sample(u)
            .expect("validated"),
            ValueDist::Uniform { min, max } => min + u * (max - min),
            ValueDist::Normal { mean, se } => mean + se * probit(u),
            ValueDist::Presampled { values } => values[sample],
        }
    }

    fn consumes_rng(&self) -> bool {
        !matches!(
            self,
            ValueDist::Fixed { .. } | ValueDist::Presampled { .. }
        )
    }
}

/// Quantile of Beta(a, b) by bisecting the regularized incomplete beta
/// function, which is continuous and strictly increasing on [0, 1].
fn beta_quantile(a: f64, b: f64, u: f64) -> f64 {
    invert_nonincreasing(|x| 1.0 - reg_inc_beta(a, b, x), 1.0 - u, 0.0, 1.0)
        .expect("bracket [0, 1] encloses every beta quantile")
}

/// One row of a state-value table: a distribution keyed by state and,
/// optionally, strategy, group or patient, and time interval start.
#[derive(Debug, Clone, PartialEq)]
pub struct StateValRow {
    pub state_id: u32,
    pub strategy_id: Option<u32>,
    pub grp_id: Option<u32>,
    pub patient_id: Option<u32>,
    pub time_start: Option<f64>,
    pub dist: ValueDist,
}

/// A state-value table: every key combination over the dimensions in use
/// appears exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct StateValTable {
    rows: Vec<StateValRow>,
}

impl StateValTable {
    pub fn new(rows: Vec<StateValRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyTable {
                table: "state values",
            });
        }
        Ok(StateValTable { rows })
    }

    pub fn rows(&self) -> &[StateValRow] {
        &self.rows
    }
}

/// Where interval time is measured from in a value query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeOrigin {
    /// Time since the start of the model.
    Model,
    /// Time since entry into the current state.
    StateEntry,
}

/// One value lookup. Positions are 0-based: `strategy` and `patient` index
/// the context tables in order, `state` indexes the non-death states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueQuery {
    pub sample: usize,
    pub strategy: usize,
    pub patient: usize,
    pub state: usize,
    pub time: f64,
    pub time_origin: TimeOrigin,
}

/// State values expanded to a dense array ordered (sample, strategy, patient,
/// state, interval), with axes of size 1 where the table broadcasts.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanValueParams {
    n_samples: usize,
    n_strategies: usize,
    n_patients: usize,
    n_states: usize,
    interval_starts: Vec<f64>,
    time_reset: bool,
    values: Vec<f64>,
}

impl MeanValueParams {
    /// A value table assigning the same constant to every non-death state in
    /// every sample; the z = 1 case computes life-years.
    pub fn constant(n_states: usize, value: f64) -> Self {
        MeanValueParams {
            n_samples: 1,
            n_strategies: 1,
            n_patients: 1,
            n_states,
            interval_starts: vec![0.0],
            time_reset: false,
            values: vec![value; n_states],
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn time_reset(&self) -> bool {
        self.time_reset
    }

    pub fn interval_starts(&self) -> &[f64] {
        &self.interval_starts
    }

    /// Index of the left-closed interval containing `time`.
    pub fn interval_index(&self, time: f64) -> usize {
        self.interval_starts
            .iter()
            .rposition(|&s| s <= time)
            .unwrap_or(0)
    }

    /// Raw array lookup by axis positions; broadcast axes accept any index.
    pub fn value_at(
        &self,
        sample: usize,
        strategy: usize,
        patient: usize,
        state: usize,
        interval: usize,
    ) -> f64 {
        let s = if self.n_samples == 1 { 0 } else { sample };
        let k = if self.n_strategies == 1 { 0 } else { strategy };
        let p = if self.n_patients == 1 { 0 } else { patient };
        let idx = (((s * self.n_strategies + k) * self.n_patients + p) * self.n_states + state)
            * self.interval_starts.len()
            + interval;
        self.values[idx]
    }

    /// Resolves one query: bounds-checks the ids, reconciles the query's time
    /// origin with the table's, and reads the interval containing the time.
    pub fn predict(&self, ctx: &ModelContext, q: &ValueQuery) -> Result<f64> {
        if q.sample >= self.n_samples && self.n_samples != 1
            || q.strategy >= ctx.n_strategies()
            || q.patient >= ctx.n_patients()
            || q.state >= self.n_states
        {
            return Err(Error::QueryOutOfRange {
                what: alloc::format!(
                    "value query (sample {}, strategy {}, patient {}, state {})",
                    q.sample,
                    q.strategy,
                    q.patient,
                    q.state
                ),
            });
        }
        if !(q.time >= 0.0) {
            return Err(Error::QueryOutOfRange {
                what: alloc::format!("value query time {}", q.time),
            });
        }
        // With a single interval the value is time-constant, so either origin
        // reads the same number and the flags need not agree.
        if self.interval_starts.len() > 1 {
            let model_origin = if self.time_reset {
                "state entry"
            } else {
                "model start"
            };
            let query_origin = match q.time_origin {
                TimeOrigin::Model => "model start",
                TimeOrigin::StateEntry => "state entry",
            };
            if model_origin != query_origin {
                return Err(Error::TimeOriginMismatch {
                    model: model_origin,
                    query: query_origin,
                });
            }
        }
        Ok(self.value_at(
            q.sample,
            q.strategy,
            q.patient,
            q.state,
            self.interval_index(q.time),
        ))
    }
}

/// Which patient-level dimension a table keys on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PersonDim {
    None,
    Grp,
    Patient,
}

/// Draws a state-value table into a dense per-sample array.
///
/// Dimensions the table does not key on broadcast across the context. Rows
/// are drawn in canonical key order (state, strategy, person, interval), so
/// the result is independent of the table's row order; fixed and
/// pre-simulated rows consume no RNG output.
pub fn stateval_draw(
    tbl: &StateValTable,
    ctx: &ModelContext,
    n_samples: usize,
    time_reset: bool,
    rng: &mut impl RngCore,
) -> Result<MeanValueParams> {
    if n_samples == 0 {
        return Err(Error::InvalidStateValues {
            reason: "a draw needs at least one sample".into(),
        });
    }
    let rows = tbl.rows();
    for r in rows {
        r.dist.validate(n_samples)?;
        if r.grp_id.is_some() && r.patient_id.is_some() {
            return Err(Error::InvalidStateValues {
                reason: "a table may key on groups or on patients, not both".into(),
            });
        }
    }
    let use_strategy = resolve_dim(rows, "strategy_id", |r| r.strategy_id.is_some())?;
    let use_grp = resolve_dim(rows, "grp_id", |r| r.grp_id.is_some())?;
    let use_patient = resolve_dim(rows, "patient_id", |r| r.patient_id.is_some())?;
    let use_time = resolve_dim(rows, "time_start", |r| r.time_start.is_some())?;
    let person = match (use_grp, use_patient) {
        (true, false) => PersonDim::Grp,
        (false, true) => PersonDim::Patient,
        (false, false) => PersonDim::None,
        (true, true) => unreachable!("rejected above"),
    };

    // Expected key values along each used dimension.
    let states: Vec<u32> = (1..=ctx.n_states() as u32).collect();
    let strategies: Vec<u32> = if use_strategy {
        ctx.strategies().ids().to_vec()
    } else {
        vec![0]
    };
    let persons: Vec<u32> = match person {
        PersonDim::None => vec![0],
        PersonDim::Grp => (1..=ctx.patients().n_grps() as u32).collect(),
        PersonDim::Patient => ctx.patients().ids().to_vec(),
    };
    let mut starts: Vec<f64> = if use_time {
        let mut s: Vec<f64> = rows.iter().filter_map(|r| r.time_start).collect();
        s.sort_by(|a, b| a.partial_cmp(b).expect("finite starts"));
        s.dedup();
        s
    } else {
        vec![0.0]
    };
    starts = normalize_intervals(&starts)?;

    // Map every expected key combination to its table row, requiring each to
    // appear exactly once.
    let n_keys = states.len() * strategies.len() * persons.len() * starts.len();
    if rows.len() != n_keys {
        return Err(Error::IncompleteKeyCrossing {
            missing: alloc::format!(
                "{} rows present, complete crossing needs {n_keys}",
                rows.len()
            ),
        });
    }
    let key_index = |r: &StateValRow| -> Option<usize> {
        let si = states.iter().position(|&s| s == r.state_id)?;
        let ki = if use_strategy {
            let id = r.strategy_id?;
            strategies.iter().position(|&k| k == id)?
        } else {
            0
        };
        let pi = match person {
            PersonDim::None => 0,
            PersonDim::Grp => {
                let id = r.grp_id?;
                persons.iter().position(|&p| p == id)?
            }
            PersonDim::Patient => {
                let id = r.patient_id?;
                persons.iter().position(|&p| p == id)?
            }
        };
        let ti = if use_time {
            let t = r.time_start?;
            starts.iter().position(|&s| s == t)?
        } else {
            0
        };
        Some(((si * strategies.len() + ki) * persons.len() + pi) * starts.len() + ti)
    };
    let mut row_of: Vec<Option<usize>> = vec![None; n_keys];
    for (i, r) in rows.iter().enumerate() {
        let Some(key) = key_index(r) else {
            return Err(Error::IncompleteKeyCrossing {
                missing: alloc::format!(
                    "row with state {} does not match the table's key dimensions",
                    r.state_id
                ),
            });
        };
        if row_of[key].is_some() {
            return Err(Error::IncompleteKeyCrossing {
                missing: alloc::format!("state {} appears more than once for one key", r.state_id),
            });
        }
        row_of[key] = Some(i);
    }
    let row_of: Vec<usize> = row_of
        .into_iter()
        .enumerate()
        .map(|(key, r)| {
            r.ok_or_else(|| Error::IncompleteKeyCrossing {
                missing: describe_key(key, &states, &strategies, &persons, &starts),
            })
        })
        .collect::<Result<_>>()?;

    // Draw per key in canonical order: all samples for one key before the
    // next key, so fixed rows elsewhere in the table cannot shift a sampled
    // row's variates.
    let mut drawn = vec![0.0f64; n_keys * n_samples];
    for (key, &ri) in row_of.iter().enumerate() {
        let dist = &rows[ri].dist;
        let consumes = dist.consumes_rng();
        for s in 0..n_samples {
            let u = if consumes { u01(rng) } else { 0.5 };
            drawn[key * n_samples + s] = dist.sample(u, s);
        }
    }

    // Expand into the dense (sample, strategy, patient, state, interval)
    // array. Group-keyed tables expand along patients by group membership.
    let n_strategies = if use_strategy { strategies.len() } else { 1 };
    let n_patients = match person {
        PersonDim::None => 1,
        _ => ctx.n_patients(),
    };
    let n_states = states.len();
    let n_int = starts.len();
    let grp_ids = ctx.patients().grp_ids();
    let patient_ids = ctx.patients().ids();
    let mut values = vec![0.0f64; n_samples * n_strategies * n_patients * n_states * n_int];
    let mut idx = 0;
    for s in 0..n_samples {
        for k in 0..n_strategies {
            for p in 0..n_patients {
                let pi = match person {
                    PersonDim::None => 0,
                    PersonDim::Grp => (grp_ids[p] - 1) as usize,
                    PersonDim::Patient => {
                        persons
                            .iter()
                            .position(|&id| id == patient_ids[p])
                            .expect("patient ids cover the context")
                    }
                };
                for (si, _) in states.iter().enumerate() {
                    for ti in 0..n_int {
                        let key = ((si * strategies.len() + k.min(strategies.len() - 1))
                            * persons.len()
                            + pi)
                            * n_int
                            + ti;
                        values[idx] = drawn[key * n_samples + s];
                        idx += 1;
                    }
                }
            }
        }
    }

    Ok(MeanValueParams {
        n_samples,
        n_strategies,
        n_patients,
        n_states,
        interval_starts: starts,
        time_reset,
        values,
    })
}

/// A dimension must be keyed on every row or on none.
fn resolve_dim(
    rows: &[StateValRow],
    name: &str,
    has: impl Fn(&StateValRow) -> bool,
) -> Result<bool> {
    let n = rows.iter().filter(|r| has(r)).count();
    if n == 0 {
        Ok(false)
    } else if n == rows.len() {
        Ok(true)
    } else {
        Err(Error::InvalidStateValues {
            reason: alloc::format!("{name} is set on {n} of {} rows; use all or none", rows.len()),
        })
    }
}

fn describe_key(
    key: usize,
    states: &[u32],
    strategies: &[u32],
    persons: &[u32],
    starts: &[f64],
) -> String {
    let ti = key % starts.len();
    let rest = key / starts.len();
    let pi = rest % persons.len();
    let rest = rest / persons.len();
    let ki = rest % strategies.len();
    let si = rest / strategies.len();
    alloc::format!(
        "state {} / strategy {} / person {} / interval starting {}",
        states[si],
        strategies[ki],
        persons[pi],
        starts[ti]
    )
}
