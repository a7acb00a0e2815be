//! CSV input tables and output writers.
//!
//! Inputs are header-addressed: loaders look columns up by name, treat empty
//! cells as absent, and report the file, row, and column of anything they
//! cannot parse. Outputs write one row per key combination with floats in
//! their shortest round-trip form, so identical runs produce byte-identical
//! files.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qalysim_core::cea::{CostRow, QalyRow};
use qalysim_core::context::Column;
use qalysim_core::params::tpmatrix_id;
use qalysim_core::statevals::{StateValRow, ValueDist};
use qalysim_core::{
    CeOutput, CeaPairwiseResult, CeaResult, DiseaseProgress, Family, InputData, ModelContext,
    PatientTable, StateProbs, StateTable, StateValTable, StrategyTable, SurvivalCurves,
    TransProbArray, TransitionMatrix, ValueTotals,
};

/// One parsed CSV file with named columns.
pub struct CsvTable {
    name: String,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl CsvTable {
    pub fn parse(name: &str, bytes: &[u8]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(bytes);
        let headers: Vec<String> = rdr
            .headers()
            .with_context(|| format!("{name}: cannot read the header row"))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            rows.push(rec.with_context(|| format!("{name}: row {}", i + 2))?);
        }
        if rows.is_empty() {
            bail!("{name}: no data rows");
        }
        Ok(CsvTable {
            name: name.to_string(),
            headers,
            rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn col(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.col(name)
            .with_context(|| format!("{}: a `{name}` column is required", self.name))
    }

    /// Raw cell text; absent cells read as empty.
    pub fn raw(&self, row: usize, col: usize) -> &str {
        self.rows[row].get(col).unwrap_or("")
    }

    fn parse_cell<T: std::str::FromStr>(&self, row: usize, col: usize, what: &str) -> Result<T> {
        let s = self.raw(row, col);
        s.parse().ok().with_context(|| {
            format!(
                "{}: row {}, column `{}`: `{s}` is not {what}",
                self.name,
                row + 2,
                self.headers[col]
            )
        })
    }

    pub fn f64(&self, row: usize, col: usize) -> Result<f64> {
        self.parse_cell(row, col, "a number")
    }

    pub fn u32(&self, row: usize, col: usize) -> Result<u32> {
        self.parse_cell(row, col, "a nonnegative integer")
    }

    pub fn opt_f64(&self, row: usize, col: Option<usize>) -> Result<Option<f64>> {
        match col {
            Some(c) if !self.raw(row, c).is_empty() => Ok(Some(self.f64(row, c)?)),
            _ => Ok(None),
        }
    }

    pub fn opt_u32(&self, row: usize, col: Option<usize>) -> Result<Option<u32>> {
        match col {
            Some(c) if !self.raw(row, c).is_empty() => Ok(Some(self.u32(row, c)?)),
            _ => Ok(None),
        }
    }
}

/// Every column that is not a reserved key becomes a numeric covariate.
fn covariate_columns(t: &CsvTable, reserved: &[&str]) -> Result<Vec<Column>> {
    let mut columns = Vec::new();
    for (c, h) in t.headers.iter().enumerate() {
        if reserved.contains(&h.as_str()) {
            continue;
        }
        let values = (0..t.n_rows())
            .map(|r| t.f64(r, c))
            .collect::<Result<Vec<f64>>>()?;
        columns.push(Column::new(h.clone(), values));
    }
    Ok(columns)
}

pub fn load_strategies(t: &CsvTable) -> Result<StrategyTable> {
    let c_id = t.require("strategy_id")?;
    let ids = (0..t.n_rows())
        .map(|r| t.u32(r, c_id))
        .collect::<Result<Vec<u32>>>()?;
    let names = t
        .col("name")
        .map(|c| (0..t.n_rows()).map(|r| t.raw(r, c).to_string()).collect());
    let columns = covariate_columns(t, &["strategy_id", "name"])?;
    Ok(StrategyTable::new(ids, names, columns)?)
}

pub fn load_patients(t: &CsvTable) -> Result<PatientTable> {
    let c_id = t.require("patient_id")?;
    let n = t.n_rows();
    let ids = (0..n).map(|r| t.u32(r, c_id)).collect::<Result<Vec<u32>>>()?;
    let grp_ids = match t.col("grp_id") {
        Some(c) => Some((0..n).map(|r| t.u32(r, c)).collect::<Result<Vec<u32>>>()?),
        None => None,
    };
    let weights = match t.col("weight") {
        Some(c) => Some((0..n).map(|r| t.f64(r, c)).collect::<Result<Vec<f64>>>()?),
        None => None,
    };
    let columns = covariate_columns(t, &["patient_id", "grp_id", "weight"])?;
    Ok(PatientTable::new(ids, grp_ids, None, weights, columns)?)
}

pub fn load_states(t: &CsvTable) -> Result<StateTable> {
    let c_name = t.require("name")?;
    if let Some(c_id) = t.col("state_id") {
        for r in 0..t.n_rows() {
            if t.u32(r, c_id)? != r as u32 + 1 {
                bail!(
                    "{}: state ids must be contiguous from 1 in row order",
                    t.name
                );
            }
        }
    }
    let names = (0..t.n_rows())
        .map(|r| t.raw(r, c_name).to_string())
        .collect();
    Ok(StateTable::new(names)?)
}

/// Headerless square grid of transition numbers; empty cells mean the
/// transition is not permitted.
pub fn load_tmat(name: &str, bytes: &[u8], n_states: usize) -> Result<TransitionMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes);
    let mut entries: Vec<Option<u32>> = Vec::with_capacity(n_states * n_states);
    let mut n_rows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{name}: row {}", i + 1))?;
        if rec.len() > n_states && rec.iter().skip(n_states).any(|s| !s.is_empty()) {
            bail!(
                "{name}: row {} has more than {n_states} cells (non-death states plus death)",
                i + 1
            );
        }
        for c in 0..n_states {
            let s = rec.get(c).unwrap_or("");
            entries.push(if s.is_empty() {
                None
            } else {
                Some(s.parse().with_context(|| {
                    format!("{name}: row {}, cell {}: `{s}` is not a transition number", i + 1, c + 1)
                })?)
            });
        }
        n_rows += 1;
    }
    if n_rows != n_states {
        bail!("{name}: {n_rows} rows, expected {n_states} (non-death states plus death)");
    }
    Ok(TransitionMatrix::new(n_states, entries)?)
}

/// State-value table rows: `state_id` and `dist` with arguments `a` and `b`,
/// optionally keyed by strategy, group or patient, and interval start time.
pub fn load_statevals(t: &CsvTable) -> Result<StateValTable> {
    let c_state = t.require("state_id")?;
    let c_dist = t.require("dist")?;
    let c_a = t.require("a")?;
    let c_b = t.col("b");
    let c_strat = t.col("strategy_id");
    let c_grp = t.col("grp_id");
    let c_pat = t.col("patient_id");
    let c_time = t.col("time_start");
    let mut rows = Vec::with_capacity(t.n_rows());
    for r in 0..t.n_rows() {
        let dist_name = t.raw(r, c_dist).to_string();
        let a = t.f64(r, c_a)?;
        let b = match c_b {
            Some(c) if !t.raw(r, c).is_empty() => Some(t.f64(r, c)?),
            _ => None,
        };
        let need_b = || {
            b.with_context(|| {
                format!(
                    "{}: row {}: dist `{dist_name}` needs a value in column `b`",
                    t.name,
                    r + 2
                )
            })
        };
        let dist = match dist_name.as_str() {
            "fixed" => ValueDist::Fixed { est: a },
            "beta" => ValueDist::Beta { mean: a, se: need_b()? },
            "beta-params" => ValueDist::BetaParams { shape1: a, shape2: need_b()? },
            "gamma" => ValueDist::Gamma { mean: a, se: need_b()? },
            "gamma-params" => ValueDist::GammaParams { shape: a, rate: need_b()? },
            "lognormal" => ValueDist::LogNormal { meanlog: a, sdlog: need_b()? },
            "uniform" => ValueDist::Uniform { min: a, max: need_b()? },
            "normal" => ValueDist::Normal { mean: a, se: need_b()? },
            other => bail!(
                "{}: row {}: unknown dist `{other}` (expected fixed, beta, beta-params, gamma, \
                 gamma-params, lognormal, uniform, or normal)",
                t.name,
                r + 2
            ),
        };
        rows.push(StateValRow {
            state_id: t.u32(r, c_state)?,
            strategy_id: t.opt_u32(r, c_strat)?,
            grp_id: t.opt_u32(r, c_grp)?,
            patient_id: t.opt_u32(r, c_pat)?,
            time_start: t.opt_f64(r, c_time)?,
            dist,
        });
    }
    Ok(StateValTable::new(rows)?)
}

/// Regression coefficients of one survival model: rows `parameter,term,est`
/// grouped into the family's natural parameters.
pub struct CoefSpec {
    pub param_terms: Vec<Vec<String>>,
    pub means: Vec<f64>,
    /// `parameter:term` labels in stacked order, for covariance checking.
    pub labels: Vec<String>,
}

pub fn load_coefs(t: &CsvTable, family: Family) -> Result<CoefSpec> {
    let c_param = t.require("parameter")?;
    let c_term = t.require("term")?;
    let c_est = t.require("est")?;
    let names = family.param_names();
    for r in 0..t.n_rows() {
        let p = t.raw(r, c_param);
        if !names.contains(&p) {
            bail!(
                "{}: row {}: unknown parameter `{p}` for family {} (expected {})",
                t.name,
                r + 2,
                family.name(),
                names.join(", ")
            );
        }
    }
    let mut param_terms = Vec::with_capacity(names.len());
    let mut means = Vec::new();
    let mut labels = Vec::new();
    for pname in names {
        let mut terms: Vec<String> = Vec::new();
        for r in 0..t.n_rows() {
            if t.raw(r, c_param) != *pname {
                continue;
            }
            let term = t.raw(r, c_term).to_string();
            if terms.contains(&term) {
                bail!(
                    "{}: parameter `{pname}` lists term `{term}` twice",
                    t.name
                );
            }
            means.push(t.f64(r, c_est)?);
            labels.push(format!("{pname}:{term}"));
            terms.push(term);
        }
        if terms.is_empty() {
            bail!(
                "{}: no coefficient rows for parameter `{pname}` of family {}",
                t.name,
                family.name()
            );
        }
        param_terms.push(terms);
    }
    Ok(CoefSpec {
        param_terms,
        means,
        labels,
    })
}

/// Covariance matrix over the stacked coefficients: a square grid whose
/// header and row labels must repeat the coefficient labels in order.
pub fn load_vcov(t: &CsvTable, labels: &[String]) -> Result<Vec<f64>> {
    let k = labels.len();
    if t.headers.len() != k + 1 {
        bail!(
            "{}: expected {} columns (a row label plus one per coefficient), got {}",
            t.name,
            k + 1,
            t.headers.len()
        );
    }
    for (j, lab) in labels.iter().enumerate() {
        if t.headers[j + 1] != *lab {
            bail!(
                "{}: header column {} is `{}`, expected `{lab}` (coefficients in the coef file's order)",
                t.name,
                j + 2,
                t.headers[j + 1]
            );
        }
    }
    if t.n_rows() != k {
        bail!("{}: expected {k} rows, got {}", t.name, t.n_rows());
    }
    let mut cov = Vec::with_capacity(k * k);
    for r in 0..k {
        if t.raw(r, 0) != labels[r] {
            bail!(
                "{}: row {} is labeled `{}`, expected `{}`",
                t.name,
                r + 2,
                t.raw(r, 0),
                labels[r]
            );
        }
        for j in 0..k {
            cov.push(t.f64(r, j + 1)?);
        }
    }
    Ok(cov)
}

/// Long-format transition probabilities: one row per matrix entry, keyed by
/// strategy and optionally by sample, patient, and interval start. A missing
/// `sample` column (or a file holding only sample 1) broadcasts across all
/// samples; a missing `patient_id` column broadcasts across patients.
pub fn load_transprobs(
    t: &CsvTable,
    ctx: &ModelContext,
    input: &InputData,
    n_samples: usize,
) -> Result<TransProbArray> {
    let h = ctx.n_states() + 1;
    let c_strat = t.require("strategy_id")?;
    let c_from = t.require("from")?;
    let c_to = t.require("to")?;
    let c_prob = t.require("prob")?;
    let c_pat = t.col("patient_id");
    let c_samp = t.col("sample");
    let c_time = t.col("time_start");

    struct Raw {
        sample: Option<u32>,
        spos: usize,
        ppos: Option<usize>,
        t0: f64,
        from: usize,
        to: usize,
        prob: f64,
    }
    let pat_ids = ctx.patients().ids();
    let mut raws = Vec::with_capacity(t.n_rows());
    let mut starts: Vec<f64> = Vec::new();
    for r in 0..t.n_rows() {
        let sid = t.u32(r, c_strat)?;
        if sid == 0 || sid as usize > ctx.n_strategies() {
            bail!(
                "{}: row {}: strategy_id {sid} is not in the strategy table",
                t.name,
                r + 2
            );
        }
        let ppos = match c_pat {
            Some(c) => {
                let pid = t.u32(r, c)?;
                Some(pat_ids.binary_search(&pid).ok().with_context(|| {
                    format!(
                        "{}: row {}: patient_id {pid} is not in the patient table",
                        t.name,
                        r + 2
                    )
                })?)
            }
            None => None,
        };
        let sample = match c_samp {
            Some(c) => Some(t.u32(r, c)?),
            None => None,
        };
        let t0 = match c_time {
            Some(c) => t.f64(r, c)?,
            None => 0.0,
        };
        let from = t.u32(r, c_from)? as usize;
        let to = t.u32(r, c_to)? as usize;
        if from == 0 || from > h || to == 0 || to > h {
            bail!(
                "{}: row {}: states run from 1 to {h} (death)",
                t.name,
                r + 2
            );
        }
        if !starts.contains(&t0) {
            starts.push(t0);
        }
        raws.push(Raw {
            sample,
            spos: sid as usize - 1,
            ppos,
            t0,
            from,
            to,
            prob: t.f64(r, c_prob)?,
        });
    }
    starts.sort_by(f64::total_cmp);

    let file_max = raws.iter().filter_map(|r| r.sample).max();
    let broadcast_samples = match file_max {
        None => true,
        Some(1) => true,
        Some(m) if m as usize == n_samples => false,
        Some(m) => bail!(
            "{}: the file covers {m} samples but n_samples = {n_samples}; \
             give every sample or only sample 1 (broadcast)",
            t.name
        ),
    };

    let ids = tpmatrix_id(input, n_samples, &starts)?;
    let n_rows = input.n_rows();
    let n_pat = ctx.n_patients();
    let m = starts.len();
    let mut probs = vec![0.0f64; ids.len() * h * h];
    let mut seen: HashSet<usize> = HashSet::with_capacity(raws.len());
    for raw in &raws {
        let interval = starts
            .iter()
            .position(|s| *s == raw.t0)
            .expect("start collected above");
        let samples: Vec<usize> = if broadcast_samples {
            (0..n_samples).collect()
        } else {
            vec![raw.sample.unwrap() as usize - 1]
        };
        let patients: Vec<usize> = match raw.ppos {
            Some(p) => vec![p],
            None => (0..n_pat).collect(),
        };
        for &s in &samples {
            for &p in &patients {
                let rowpos = raw.spos * n_pat + p;
                let matrix = (s * n_rows + rowpos) * m + interval;
                let cell = matrix * h * h + (raw.from - 1) * h + (raw.to - 1);
                if !seen.insert(cell) {
                    bail!(
                        "{}: duplicate probability for sample {}, strategy {}, patient {}, \
                         interval start {}, transition {} -> {}",
                        t.name,
                        s + 1,
                        raw.spos + 1,
                        pat_ids[p],
                        raw.t0,
                        raw.from,
                        raw.to
                    );
                }
                probs[cell] = raw.prob;
            }
        }
    }
    Ok(TransProbArray::new(h, ids, &starts, probs)?)
}

pub fn load_ce_qalys(t: &CsvTable) -> Result<Vec<QalyRow>> {
    let c_dr = t.require("dr")?;
    let c_sample = t.require("sample")?;
    let c_strat = t.require("strategy_id")?;
    let c_grp = t.require("grp_id")?;
    let c_q = t.require("qalys")?;
    let c_lys = t.col("lys");
    (0..t.n_rows())
        .map(|r| {
            Ok(QalyRow {
                dr: t.f64(r, c_dr)?,
                sample: t.u32(r, c_sample)?,
                strategy_id: t.u32(r, c_strat)?,
                grp_id: t.u32(r, c_grp)?,
                qalys: t.f64(r, c_q)?,
                lys: t.opt_f64(r, c_lys)?,
            })
        })
        .collect()
}

pub fn load_ce_costs(t: &CsvTable) -> Result<Vec<CostRow>> {
    let c_cat = t.require("category")?;
    let c_dr = t.require("dr")?;
    let c_sample = t.require("sample")?;
    let c_strat = t.require("strategy_id")?;
    let c_grp = t.require("grp_id")?;
    let c_costs = t.require("costs")?;
    (0..t.n_rows())
        .map(|r| {
            Ok(CostRow {
                category: t.raw(r, c_cat).to_string(),
                dr: t.f64(r, c_dr)?,
                sample: t.u32(r, c_sample)?,
                strategy_id: t.u32(r, c_strat)?,
                grp_id: t.u32(r, c_grp)?,
                costs: t.f64(r, c_costs)?,
            })
        })
        .collect()
}

/// The directory result files are written into.
pub struct OutDir {
    dir: PathBuf,
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt)
}

fn fmt_opt_u32(v: Option<u32>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn writer(&self, name: &str) -> Result<csv::Writer<std::fs::File>> {
        let p = self.path(name);
        let f = std::fs::File::create(&p)
            .with_context(|| format!("cannot write {}", p.display()))?;
        Ok(csv::Writer::from_writer(f))
    }
}

pub fn write_stateprobs(out: &OutDir, sp: &StateProbs) -> Result<()> {
    let mut w = out.writer("stateprobs.csv")?;
    w.write_record([
        "sample",
        "strategy_id",
        "grp_id",
        "patient_id",
        "patient_wt",
        "state_id",
        "t",
        "prob",
    ])?;
    for r in sp.iter_rows() {
        w.write_record([
            r.sample.to_string(),
            r.strategy_id.to_string(),
            r.grp_id.to_string(),
            fmt_opt_u32(r.patient_id),
            fmt_opt(r.patient_wt),
            r.state_id.to_string(),
            fmt(r.t),
            fmt(r.prob),
        ])?;
    }
    Ok(w.flush()?)
}

/// QALYs and life-years side by side; both tables come from the same state
/// probabilities at the same rates, so their keys must line up.
pub fn write_qalys(out: &OutDir, qalys: &ValueTotals, lys: &ValueTotals) -> Result<()> {
    if qalys.rows().len() != lys.rows().len() {
        bail!("internal: QALY and life-year tables diverged");
    }
    let mut w = out.writer("qalys.csv")?;
    w.write_record([
        "dr",
        "sample",
        "strategy_id",
        "grp_id",
        "patient_id",
        "state_id",
        "qalys",
        "lys",
    ])?;
    for (q, l) in qalys.rows().iter().zip(lys.rows()) {
        if (q.dr, q.sample, q.strategy_id, q.grp_id, q.patient_id, q.state_id)
            != (l.dr, l.sample, l.strategy_id, l.grp_id, l.patient_id, l.state_id)
        {
            bail!("internal: QALY and life-year tables diverged");
        }
        w.write_record([
            fmt(q.dr),
            q.sample.to_string(),
            q.strategy_id.to_string(),
            q.grp_id.to_string(),
            fmt_opt_u32(q.patient_id),
            q.state_id.to_string(),
            fmt(q.value),
            fmt(l.value),
        ])?;
    }
    Ok(w.flush()?)
}

pub fn write_costs(out: &OutDir, cats: &[(String, ValueTotals)]) -> Result<()> {
    let mut w = out.writer("costs.csv")?;
    w.write_record([
        "category",
        "dr",
        "sample",
        "strategy_id",
        "grp_id",
        "patient_id",
        "state_id",
        "costs",
    ])?;
    for (name, vt) in cats {
        for r in vt.rows() {
            w.write_record([
                name.clone(),
                fmt(r.dr),
                r.sample.to_string(),
                r.strategy_id.to_string(),
                r.grp_id.to_string(),
                fmt_opt_u32(r.patient_id),
                r.state_id.to_string(),
                fmt(r.value),
            ])?;
        }
    }
    Ok(w.flush()?)
}

pub fn write_disprog(out: &OutDir, dp: &DiseaseProgress) -> Result<()> {
    let mut w = out.writer("disprog.csv")?;
    w.write_record([
        "sample",
        "strategy_id",
        "patient_id",
        "grp_id",
        "from",
        "to",
        "final",
        "time_start",
        "time_stop",
    ])?;
    for r in dp.rows() {
        w.write_record([
            r.sample.to_string(),
            r.strategy_id.to_string(),
            r.patient_id.to_string(),
            r.grp_id.to_string(),
            r.from.to_string(),
            r.to.to_string(),
            (r.is_final as u8).to_string(),
            fmt(r.time_start),
            fmt(r.time_stop),
        ])?;
    }
    Ok(w.flush()?)
}

pub fn write_survival(out: &OutDir, sc: &SurvivalCurves) -> Result<()> {
    let mut w = out.writer("survival.csv")?;
    w.write_record([
        "sample",
        "strategy_id",
        "patient_id",
        "grp_id",
        "patient_wt",
        "curve",
        "t",
        "survival",
    ])?;
    for r in sc.iter_rows() {
        w.write_record([
            r.sample.to_string(),
            r.strategy_id.to_string(),
            r.patient_id.to_string(),
            r.grp_id.to_string(),
            fmt(r.patient_wt),
            r.curve.to_string(),
            fmt(r.t),
            fmt(r.survival),
        ])?;
    }
    Ok(w.flush()?)
}

/// The condensed cost-effectiveness tables consumed by the `cea` command.
pub fn write_ce(out: &OutDir, ce: &CeOutput) -> Result<()> {
    let mut w = out.writer("ce_qalys.csv")?;
    w.write_record(["dr", "sample", "strategy_id", "grp_id", "qalys", "lys"])?;
    for r in ce.qalys() {
        w.write_record([
            fmt(r.dr),
            r.sample.to_string(),
            r.strategy_id.to_string(),
            r.grp_id.to_string(),
            fmt(r.qalys),
            fmt_opt(r.lys),
        ])?;
    }
    w.flush()?;

    let mut w = out.writer("ce_costs.csv")?;
    w.write_record(["category", "dr", "sample", "strategy_id", "grp_id", "costs"])?;
    for r in ce.costs() {
        w.write_record([
            r.category.clone(),
            fmt(r.dr),
            r.sample.to_string(),
            r.strategy_id.to_string(),
            r.grp_id.to_string(),
            fmt(r.costs),
        ])?;
    }
    Ok(w.flush()?)
}

pub fn write_cea_results(
    out: &OutDir,
    res: &CeaResult,
    pw: &CeaPairwiseResult,
    icer: &qalysim_core::cea::IcerTable,
) -> Result<()> {
    let mut w = out.writer("mce.csv")?;
    w.write_record(["k", "strategy_id", "grp_id", "prob", "best"])?;
    for r in &res.mce {
        w.write_record([
            fmt(r.k),
            r.strategy_id.to_string(),
            r.grp_id.to_string(),
            fmt(r.prob),
            r.best.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = out.writer("ceaf.csv")?;
    w.write_record(["k", "strategy_id", "grp_id", "prob"])?;
    for r in res.mce.iter().filter(|r| r.best == 1) {
        w.write_record([
            fmt(r.k),
            r.strategy_id.to_string(),
            r.grp_id.to_string(),
            fmt(r.prob),
        ])?;
    }
    w.flush()?;

    let mut w = out.writer("evpi.csv")?;
    w.write_record(["k", "grp_id", "evpi"])?;
    for r in &res.evpi {
        w.write_record([fmt(r.k), r.grp_id.to_string(), fmt(r.evpi)])?;
    }
    w.flush()?;

    let mut w = out.writer("ceac.csv")?;
    w.write_record(["k", "strategy_id", "grp_id", "prob"])?;
    for r in &pw.ceac {
        w.write_record([
            fmt(r.k),
            r.strategy_id.to_string(),
            r.grp_id.to_string(),
            fmt(r.prob),
        ])?;
    }
    w.flush()?;

    let mut w = out.writer("delta.csv")?;
    w.write_record(["sample", "strategy_id", "grp_id", "inc_qalys", "inc_costs"])?;
    for r in &pw.delta {
        w.write_record([
            r.sample.to_string(),
            r.strategy_id.to_string(),
            r.grp_id.to_string(),
            fmt(r.inc_qalys),
            fmt(r.inc_costs),
        ])?;
    }
    w.flush()?;

    let mut w = out.writer("icer.csv")?;
    w.write_record([
        "k",
        "comparator",
        "outcome",
        "strategy_id",
        "grp_id",
        "estimate",
        "lower",
        "upper",
    ])?;
    for r in &icer.rows {
        let key = [r.strategy_id.to_string(), r.grp_id.to_string()];
        for (outcome, e) in [
            ("inc_qalys", &r.inc_qalys),
            ("inc_costs", &r.inc_costs),
            ("inmb", &r.inmb),
        ] {
            w.write_record([
                fmt(icer.k),
                icer.comparator.to_string(),
                outcome.to_string(),
                key[0].clone(),
                key[1].clone(),
                fmt(e.est),
                fmt(e.lower),
                fmt(e.upper),
            ])?;
        }
        // The point estimate is a ratio of means; a bootstrap interval is
        // not well defined when samples change quadrant, so the ICER row
        // carries no CI and dominance replaces the number.
        let label = match r.icer {
            qalysim_core::cea::IcerValue::Ratio(v) => fmt(v),
            qalysim_core::cea::IcerValue::Dominates => "dominates".to_string(),
            qalysim_core::cea::IcerValue::Dominated => "dominated".to_string(),
            qalysim_core::cea::IcerValue::Undefined => "undefined".to_string(),
        };
        w.write_record([
            fmt(icer.k),
            icer.comparator.to_string(),
            "icer".to_string(),
            key[0].clone(),
            key[1].clone(),
            label,
            String::new(),
            String::new(),
        ])?;
    }
    Ok(w.flush()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_errors_name_file_row_and_column() {
        let t = CsvTable::parse("pts.csv", b"patient_id,age\n1,63\n2,abc\n").unwrap();
        let err = load_patients(&t).unwrap_err().to_string();
        assert!(err.contains("pts.csv"), "{err}");
        assert!(err.contains("row 3"), "{err}");
        assert!(err.contains("age"), "{err}");
    }

    #[test]
    fn tmat_round_trips_a_progressive_structure() {
        let tm = load_tmat("tmat.csv", b",1,2\n,,3\n,,\n", 3).unwrap();
        assert_eq!(tm.n_transitions(), 3);
        assert_eq!(tm.transition_number(1, 2), Some(1));
        assert_eq!(tm.transition_number(2, 3), Some(3));
        assert_eq!(tm.transition_number(2, 1), None);
    }

    #[test]
    fn statevals_need_second_argument_when_the_dist_takes_two() {
        let t = CsvTable::parse("u.csv", b"state_id,dist,a\n1,beta,0.8\n").unwrap();
        let err = load_statevals(&t).unwrap_err().to_string();
        assert!(err.contains("needs a value in column `b`"), "{err}");
    }

    #[test]
    fn coefs_group_by_natural_parameter_in_family_order() {
        let t = CsvTable::parse(
            "c.csv",
            b"parameter,term,est\nscale,(Intercept),1.6\nshape,(Intercept),0.2\nscale,age,0.01\n",
        )
        .unwrap();
        let spec = load_coefs(&t, Family::Weibull).unwrap();
        assert_eq!(spec.param_terms[0], vec!["(Intercept)".to_string()]);
        assert_eq!(
            spec.param_terms[1],
            vec!["(Intercept)".to_string(), "age".to_string()]
        );
        assert_eq!(spec.means, vec![0.2, 1.6, 0.01]);
        assert_eq!(
            spec.labels,
            vec!["shape:(Intercept)", "scale:(Intercept)", "scale:age"]
        );
    }

    #[test]
    fn vcov_labels_must_match_the_coef_order() {
        let labels = vec!["rate:(Intercept)".to_string(), "rate:age".to_string()];
        let good = CsvTable::parse(
            "v.csv",
            b"coef,rate:(Intercept),rate:age\nrate:(Intercept),0.01,0\nrate:age,0,0.0001\n",
        )
        .unwrap();
        assert_eq!(load_vcov(&good, &labels).unwrap(), vec![0.01, 0.0, 0.0, 0.0001]);
        let bad = CsvTable::parse(
            "v.csv",
            b"coef,rate:age,rate:(Intercept)\nrate:age,0.0001,0\nrate:(Intercept),0,0.01\n",
        )
        .unwrap();
        assert!(load_vcov(&bad, &labels).is_err());
    }
}
