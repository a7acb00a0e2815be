//! Model context: treatment strategies, patients, health states, and the
//! permitted-transition structure, plus the expanded covariate dataset that
//! parameter models are evaluated over.
//!
//! Ids are contiguous positive integers from 1 in every dimension except
//! patient_id, which only has to be unique; patients are kept sorted by id.
//! Death is never listed in the state table: it is the implicit final state
//! with id `n_states + 1`, and the transition matrix has one more row than
//! the state table.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// One named numeric covariate column.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            values,
        }
    }
}

fn validate_columns(table: &'static str, n_rows: usize, columns: &[Column]) -> Result<()> {
    for c in columns {
        if c.values.len() != n_rows {
            return Err(Error::RaggedTable { table });
        }
        if c.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "covariate column",
            });
        }
    }
    Ok(())
}

fn validate_contiguous_ids(table: &'static str, ids: &[u32]) -> Result<()> {
    for (i, &id) in ids.iter().enumerate() {
        if id != i as u32 + 1 {
            return Err(Error::NonContiguousIds { table });
        }
    }
    Ok(())
}

/// Treatment strategies with optional display names and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyTable {
    ids: Vec<u32>,
    names: Option<Vec<String>>,
    columns: Vec<Column>,
}

impl StrategyTable {
    pub fn new(ids: Vec<u32>, names: Option<Vec<String>>, columns: Vec<Column>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyTable {
                table: "strategies",
            });
        }
        validate_contiguous_ids("strategies", &ids)?;
        if let Some(n) = &names {
            if n.len() != ids.len() {
                return Err(Error::RaggedTable {
                    table: "strategies",
                });
            }
        }
        validate_columns("strategies", ids.len(), &columns)?;
        Ok(StrategyTable { ids, names, columns })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }
}

/// Patients (or representative profiles) with optional subgroups and weights.
///
/// Rows are sorted by patient_id at construction; raw weights are retained
/// and normalized within group on expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientTable {
    ids: Vec<u32>,
    grp_ids: Vec<u32>,
    grp_names: Option<Vec<String>>,
    weights: Vec<f64>,
    columns: Vec<Column>,
}

impl PatientTable {
    pub fn new(
        ids: Vec<u32>,
        grp_ids: Option<Vec<u32>>,
        grp_names: Option<Vec<String>>,
        weights: Option<Vec<f64>>,
        columns: Vec<Column>,
    ) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::EmptyTable { table: "patients" });
        }
        let grp_ids = grp_ids.unwrap_or_else(|| vec![1; n]);
        let weights = weights.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        if grp_ids.len() != n
            || weights.len() != n
            || grp_names.as_ref().is_some_and(|g| g.len() != n)
        {
            return Err(Error::RaggedTable { table: "patients" });
        }
        validate_columns("patients", n, &columns)?;

        // Canonical order: ascending patient_id.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| ids[i]);
        let reorder_u32 = |v: &[u32]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let ids: Vec<u32> = reorder_u32(&ids);
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::DuplicatePatientId);
        }
        let grp_ids = reorder_u32(&grp_ids);
        let weights: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
        let grp_names = grp_names.map(|g| order.iter().map(|&i| g[i].clone()).collect::<Vec<_>>());
        let columns: Vec<Column> = columns
            .into_iter()
            .map(|c| Column {
                name: c.name,
                values: order.iter().map(|&i| c.values[i]).collect(),
            })
            .collect();

        // Groups must be contiguous from 1 and weights must carry positive
        // mass within every group.
        let n_grps = *grp_ids.iter().max().unwrap() as usize;
        let mut seen = vec![false; n_grps];
        let mut mass = vec![0.0f64; n_grps];
        for (&g, &w) in grp_ids.iter().zip(&weights) {
            if g == 0 {
                return Err(Error::NonContiguousIds { table: "patients" });
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidPatientWeights);
            }
            seen[g as usize - 1] = true;
            mass[g as usize - 1] += w;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::NonContiguousIds { table: "patients" });
        }
        if mass.iter().any(|&m| m <= 0.0) {
            return Err(Error::InvalidPatientWeights);
        }
        // A group name must be constant within its group and distinct across
        // groups.
        if let Some(names) = &grp_names {
            let mut by_grp: Vec<Option<&String>> = vec![None; n_grps];
            for (&g, name) in grp_ids.iter().zip(names) {
                match by_grp[g as usize - 1] {
                    None => by_grp[g as usize - 1] = Some(name),
                    Some(existing) if existing != name => {
                        return Err(Error::DuplicateLabel {
                            dimension: "group",
                            name: name.clone(),
                        })
                    }
                    _ => {}
                }
            }
        }

        Ok(PatientTable {
            ids,
            grp_ids,
            grp_names,
            weights,
            columns,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn grp_ids(&self) -> &[u32] {
        &self.grp_ids
    }

    pub fn grp_names(&self) -> Option<&[String]> {
        self.grp_names.as_deref()
    }

    pub fn n_grps(&self) -> usize {
        *self.grp_ids.iter().max().unwrap() as usize
    }

    pub fn raw_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights scaled to sum to 1 within each group.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let n_grps = self.n_grps();
        let mut mass = vec![0.0f64; n_grps];
        for (&g, &w) in self.grp_ids.iter().zip(&self.weights) {
            mass[g as usize - 1] += w;
        }
        self.grp_ids
            .iter()
            .zip(&self.weights)
            .map(|(&g, &w)| w / mass[g as usize - 1])
            .collect()
    }

    /// Share of total raw weight carried by each group, indexed by grp_id.
    pub fn grp_masses(&self) -> Vec<f64> {
        let n_grps = self.n_grps();
        let mut mass = vec![0.0f64; n_grps];
        let mut total = 0.0;
        for (&g, &w) in self.grp_ids.iter().zip(&self.weights) {
            mass[g as usize - 1] += w;
            total += w;
        }
        mass.iter().map(|m| m / total).collect()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }
}

/// Non-death health states. Death is implicit, with id `n() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTable {
    names: Vec<String>,
}

impl StateTable {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::EmptyTable { table: "states" });
        }
        Ok(StateTable { names })
    }

    pub fn n(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Permitted-transition structure over the full state space (death included
/// as the final row/column). Entry (r, s) holds the transition number of
/// r -> s, numbered row-major from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n_states: usize,
    entries: Vec<Option<u32>>,
    // (from, to) per transition number, 0-based states, cached at build.
    positions: Vec<(usize, usize)>,
}

impl TransitionMatrix {
    /// Builds from a row-major grid of optional transition numbers.
    pub fn new(n_states: usize, entries: Vec<Option<u32>>) -> Result<Self> {
        if n_states < 2 {
            return Err(Error::InvalidTransitionMatrix {
                reason: "at least two states (one alive, one death) are required".into(),
            });
        }
        if entries.len() != n_states * n_states {
            return Err(Error::InvalidTransitionMatrix {
                reason: alloc::format!(
                    "expected {} entries, got {}",
                    n_states * n_states,
                    entries.len()
                ),
            });
        }
        let mut positions = Vec::new();
        let mut next = 1u32;
        for r in 0..n_states {
            let mut any = false;
            for s in 0..n_states {
                let Some(no) = entries[r * n_states + s] else {
                    continue;
                };
                any = true;
                if r == s {
                    return Err(Error::InvalidTransitionMatrix {
                        reason: alloc::format!("self-transition on state {}", r + 1),
                    });
                }
                if no != next {
                    return Err(Error::InvalidTransitionMatrix {
                        reason: alloc::format!(
                            "transition numbers must be row-major contiguous from 1; \
                             found {no} where {next} was expected"
                        ),
                    });
                }
                next += 1;
                positions.push((r, s));
            }
            if r == n_states - 1 && any {
                return Err(Error::InvalidTransitionMatrix {
                    reason: "death (the final state) must have no outgoing transitions".into(),
                });
            }
            if r < n_states - 1 && !any {
                return Err(Error::InvalidTransitionMatrix {
                    reason: alloc::format!(
                        "state {} has no outgoing transitions; only death may be absorbing",
                        r + 1
                    ),
                });
            }
        }
        Ok(TransitionMatrix {
            n_states,
            entries,
            positions,
        })
    }

    /// Number of states including death.
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_transitions(&self) -> usize {
        self.positions.len()
    }

    /// 1-based id of the death state.
    pub fn death_state(&self) -> u32 {
        self.n_states as u32
    }

    /// Transition number of (from, to), 1-based state ids.
    pub fn transition_number(&self, from: u32, to: u32) -> Option<u32> {
        self.entries[(from as usize - 1) * self.n_states + (to as usize - 1)]
    }

    /// (from, to) 1-based state ids of a 1-based transition number.
    pub fn endpoints(&self, transition: u32) -> Option<(u32, u32)> {
        self.positions
            .get(transition as usize - 1)
            .map(|&(r, s)| (r as u32 + 1, s as u32 + 1))
    }

    /// Outgoing (to_state, transition_number) pairs of a 1-based state, in
    /// destination order.
    pub fn transitions_from(&self, from: u32) -> Vec<(u32, u32)> {
        let r = from as usize - 1;
        (0..self.n_states)
            .filter_map(|s| self.entries[r * self.n_states + s].map(|no| (s as u32 + 1, no)))
            .collect()
    }
}

/// The full modeling frame a simulation runs over.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelContext {
    pub strategies: StrategyTable,
    pub patients: PatientTable,
    pub states: StateTable,
    pub tmat: Option<TransitionMatrix>,
}

impl ModelContext {
    pub fn new(
        strategies: StrategyTable,
        patients: PatientTable,
        states: StateTable,
        tmat: Option<TransitionMatrix>,
    ) -> Result<Self> {
        if let Some(t) = &tmat {
            if t.n_states() != states.n() + 1 {
                return Err(Error::DimensionMismatch {
                    what: alloc::format!(
                        "transition matrix covers {} states but the state table implies {} \
                         (non-death states plus death)",
                        t.n_states(),
                        states.n() + 1
                    ),
                });
            }
        }
        // Covariate names must be unique across the strategy and patient
        // tables so expansion cannot silently shadow a column.
        for sc in strategies.columns() {
            if patients.columns().iter().any(|pc| pc.name == sc.name) {
                return Err(Error::DuplicateColumn {
                    name: sc.name.clone(),
                });
            }
        }
        Ok(ModelContext {
            strategies,
            patients,
            states,
            tmat,
        })
    }

    pub fn n_strategies(&self) -> usize {
        self.strategies.n()
    }

    pub fn n_patients(&self) -> usize {
        self.patients.n()
    }

    /// Non-death state count.
    pub fn n_states(&self) -> usize {
        self.states.n()
    }

    /// 1-based id of the implicit death state.
    pub fn death_state_id(&self) -> u32 {
        self.states.n() as u32 + 1
    }

    pub fn strategies(&self) -> &StrategyTable {
        &self.strategies
    }

    pub fn patients(&self) -> &PatientTable {
        &self.patients
    }

    pub fn states(&self) -> &StateTable {
        &self.states
    }

    pub fn tmat(&self) -> Option<&TransitionMatrix> {
        self.tmat.as_ref()
    }
}

/// Dimensions an input dataset can be expanded over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpandDim {
    Strategies,
    Patients,
}

/// One row per modeled unit, ordered by (strategy_id, patient_id), with the
/// merged covariate columns from the contributing tables.
#[derive(Debug, Clone, PartialEq)]
pub struct InputData {
    pub strategy_ids: Vec<u32>,
    pub patient_ids: Vec<u32>,
    /// Position of each row's patient in the patient table (0-based).
    pub patient_pos: Vec<u32>,
    pub grp_ids: Vec<u32>,
    /// Weights normalized to sum to 1 within each group.
    pub patient_wts: Vec<f64>,
    pub columns: Vec<Column>,
}

impl InputData {
    pub fn n_rows(&self) -> usize {
        self.strategy_ids.len()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    /// Row-major N x k design matrix for the named terms. A term called
    /// `(Intercept)` resolves to the constant 1 when no column of that name
    /// exists; any other unknown term is an error naming it.
    pub fn term_matrix(&self, terms: &[String]) -> Result<Vec<f64>> {
        let n = self.n_rows();
        let k = terms.len();
        let mut cols: Vec<Option<&[f64]>> = Vec::with_capacity(k);
        for t in terms {
            match self.column(t) {
                Some(c) => cols.push(Some(c)),
                None if t == "(Intercept)" => cols.push(None),
                None => {
                    return Err(Error::MissingTerm { name: t.clone() });
                }
            }
        }
        let mut x = Vec::with_capacity(n * k);
        for i in 0..n {
            for c in &cols {
                x.push(c.map_or(1.0, |v| v[i]));
            }
        }
        Ok(x)
    }
}

/// Cartesian expansion of the context over the requested dimensions, ordered
/// by (strategy_id, patient_id). A dimension left out contributes a single
/// pseudo-row with id 1 and no covariates.
pub fn expand(ctx: &ModelContext, by: &[ExpandDim]) -> Result<InputData> {
    let by_strat = by.contains(&ExpandDim::Strategies);
    let by_pat = by.contains(&ExpandDim::Patients);
    let n_s = if by_strat { ctx.n_strategies() } else { 1 };
    let n_p = if by_pat { ctx.n_patients() } else { 1 };
    let n = n_s * n_p;

    let norm_wts = ctx.patients.normalized_weights();
    let mut out = InputData {
        strategy_ids: Vec::with_capacity(n),
        patient_ids: Vec::with_capacity(n),
        patient_pos: Vec::with_capacity(n),
        grp_ids: Vec::with_capacity(n),
        patient_wts: Vec::with_capacity(n),
        columns: Vec::new(),
    };
    for s in 0..n_s {
        for p in 0..n_p {
            out.strategy_ids.push(s as u32 + 1);
            if by_pat {
                out.patient_ids.push(ctx.patients.ids()[p]);
                out.patient_pos.push(p as u32);
                out.grp_ids.push(ctx.patients.grp_ids()[p]);
                out.patient_wts.push(norm_wts[p]);
            } else {
                out.patient_ids.push(1);
                out.patient_pos.push(0);
                out.grp_ids.push(1);
                out.patient_wts.push(1.0);
            }
        }
    }
    if by_strat {
        for c in ctx.strategies.columns() {
            let mut values = Vec::with_capacity(n);
            for s in 0..n_s {
                values.extend(core::iter::repeat(c.values[s]).take(n_p));
            }
            out.columns.push(Column::new(c.name.clone(), values));
        }
    }
    if by_pat {
        for c in ctx.patients.columns() {
            let mut values = Vec::with_capacity(n);
            for _ in 0..n_s {
                values.extend_from_slice(&c.values);
            }
            out.columns.push(Column::new(c.name.clone(), values));
        }
    }
    Ok(out)
}

/// Human-readable labels per id dimension, for presenting outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub strategies: Option<Vec<(String, u32)>>,
    /// Always present; the death label is appended with id n_states + 1.
    pub states: Vec<(String, u32)>,
    pub groups: Option<Vec<(String, u32)>>,
}

/// Collects labels from the context. Dimensions without names (strategies
/// without a name column, a single unnamed group) are omitted.
pub fn get_labels(ctx: &ModelContext) -> Result<LabelMap> {
    fn check_unique(dimension: &'static str, labels: &[(String, u32)]) -> Result<()> {
        for (i, (name, _)) in labels.iter().enumerate() {
            if labels[i + 1..].iter().any(|(n, _)| n == name) {
                return Err(Error::DuplicateLabel {
                    dimension,
                    name: name.clone(),
                });
            }
        }
        Ok(())
    }

    let strategies = match ctx.strategies.names() {
        Some(names) => {
            let labels: Vec<(String, u32)> = names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i as u32 + 1))
                .collect();
            check_unique("strategy", &labels)?;
            Some(labels)
        }
        None => None,
    };

    let mut states: Vec<(String, u32)> = ctx
        .states
        .names()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i as u32 + 1))
        .collect();
    states.push(("Death".into(), ctx.death_state_id()));
    check_unique("state", &states)?;

    let groups = match ctx.patients.grp_names() {
        Some(names) => {
            let mut labels: Vec<(String, u32)> = Vec::new();
            for (&g, name) in ctx.patients.grp_ids().iter().zip(names) {
                if !labels.iter().any(|(_, id)| *id == g) {
                    labels.push((name.clone(), g));
                }
            }
            labels.sort_by_key(|(_, id)| *id);
            check_unique("group", &labels)?;
            Some(labels)
        }
        None => None,
    };

    Ok(LabelMap {
        strategies,
        states,
        groups,
    })
}
