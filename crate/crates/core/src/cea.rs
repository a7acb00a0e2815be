//! Cost-effectiveness analysis over probabilistic simulation output.
//!
//! The input is a cost-effectiveness object holding expected QALYs `e_j(θ)`
//! and costs `c_j(θ)` per parameter sample θ, strategy j, and patient group.
//! Decision measures derive from the net monetary benefit at a
//! willingness-to-pay k per QALY, `NMB(j, θ) = k e_j(θ) − c_j(θ)`:
//!
//! - the probability a strategy is most cost-effective is the fraction of
//!   samples where it attains the maximum NMB, ties splitting the mass
//!   equally;
//! - the best strategy at each k maximizes the expected NMB (the
//!   acceptability frontier follows it);
//! - the expected value of perfect information is
//!   `E_θ[max_j NMB] − max_j E_θ[NMB]`, which is nonnegative;
//! - pairwise comparisons against a comparator report per-sample incremental
//!   QALYs and costs, the acceptability curve `P(INMB > 0)` with a strict
//!   inequality, and an ICER table.
//!
//! The ICER is the ratio of mean incremental costs to mean incremental
//! QALYs, not a mean of per-sample ratios. When the signs make the ratio
//! meaningless it is replaced by a dominance label: more effective and less
//! costly dominates; less effective and more costly is dominated; zero mean
//! incremental QALYs leaves the ratio undefined. Interval estimates are PSA
//! quantiles with linear interpolation (the R type-7 convention),
//! `h = (n − 1) p` between order statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::context::ModelContext;
use crate::math::fabs;
use crate::output::ValueTotals;
use crate::{Error, Result};

/// One cost row of a cost-effectiveness object. The "total" category is the
/// sum of every other category for the same key.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub category: String,
    pub dr: f64,
    pub sample: u32,
    pub strategy_id: u32,
    pub grp_id: u32,
    pub costs: f64,
}

/// One QALY row of a cost-effectiveness object, optionally carrying
/// undiscounted-equivalent life-years alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct QalyRow {
    pub dr: f64,
    pub sample: u32,
    pub strategy_id: u32,
    pub grp_id: u32,
    pub qalys: f64,
    pub lys: Option<f64>,
}

/// Expected QALYs and costs per (sample, strategy, group), the common input
/// of every decision measure.
#[derive(Debug, Clone, PartialEq)]
pub struct CeOutput {
    costs: Vec<CostRow>,
    qalys: Vec<QalyRow>,
}

impl CeOutput {
    /// Validates the two table invariants: the total category sums the other
    /// categories per key within 1e-9, and both tables cover the same
    /// (sample, strategy, group) keys.
    pub fn new(costs: Vec<CostRow>, qalys: Vec<QalyRow>) -> Result<Self> {
        // Per key: (sum of non-total categories, whether any exist, total).
        let mut totals: BTreeMap<(u64, u32, u32, u32), (f64, bool, Option<f64>)> =
            BTreeMap::new();
        for r in &costs {
            let key = (r.dr.to_bits(), r.sample, r.strategy_id, r.grp_id);
            let entry = totals.entry(key).or_insert((0.0, false, None));
            if r.category == "total" {
                if entry.2.is_some() {
                    return Err(Error::CeKeyMismatch {
                        detail: alloc::format!("duplicate total cost row for {key:?}"),
                    });
                }
                entry.2 = Some(r.costs);
            } else {
                entry.0 += r.costs;
                entry.1 = true;
            }
        }
        for (key, (sum, has_categories, total)) in &totals {
            let total = total.ok_or_else(|| Error::CeKeyMismatch {
                detail: alloc::format!("no total cost row for {key:?}"),
            })?;
            // A table holding only totals carries no breakdown to check.
            if *has_categories && fabs(total - sum) > 1e-9 {
                return Err(Error::TotalCategoryMismatch {
                    expected: *sum,
                    got: total,
                });
            }
        }
        let cost_keys: BTreeSet<(u32, u32, u32)> = costs
            .iter()
            .map(|r| (r.sample, r.strategy_id, r.grp_id))
            .collect();
        let qaly_keys: BTreeSet<(u32, u32, u32)> = qalys
            .iter()
            .map(|r| (r.sample, r.strategy_id, r.grp_id))
            .collect();
        if cost_keys != qaly_keys {
            let missing = cost_keys
                .symmetric_difference(&qaly_keys)
                .next()
                .expect("sets differ");
            return Err(Error::CeKeyMismatch {
                detail: alloc::format!(
                    "(sample, strategy, group) {missing:?} is in only one table"
                ),
            });
        }
        if qalys.is_empty() {
            return Err(Error::EmptyCeInput);
        }
        Ok(CeOutput { costs, qalys })
    }

    pub fn costs(&self) -> &[CostRow] {
        &self.costs
    }

    pub fn qalys(&self) -> &[QalyRow] {
        &self.qalys
    }
}

/// Sums value totals over states into per-(dr, sample, strategy, group)
/// scalars, collapsing a patient axis to groups first.
fn roll_up(vt: &ValueTotals, ctx: &ModelContext) -> BTreeMap<(u64, u32, u32, u32), f64> {
    let grouped;
    let rows = if vt.rows().iter().any(|r| r.patient_id.is_some()) {
        grouped = vt.collapse_to_groups(ctx);
        grouped.rows()
    } else {
        vt.rows()
    };
    let mut out: BTreeMap<(u64, u32, u32, u32), f64> = BTreeMap::new();
    for r in rows {
        *out.entry((r.dr.to_bits(), r.sample, r.strategy_id, r.grp_id))
            .or_insert(0.0) += r.value;
    }
    out
}

/// Collapses the group dimension of rolled-up values to a single overall
/// group, weighting each group by its share of total patient weight.
fn collapse_grps(
    map: BTreeMap<(u64, u32, u32, u32), f64>,
    masses: &[f64],
) -> BTreeMap<(u64, u32, u32, u32), f64> {
    let mut out = BTreeMap::new();
    for ((dr, s, j, g), v) in map {
        *out.entry((dr, s, j, 1)).or_insert(0.0) += masses[g as usize - 1] * v;
    }
    out
}

/// Builds the cost-effectiveness object from simulated value totals: QALYs,
/// optional life-years on the same keys, and one total per named cost
/// category. Values are summed over states and averaged over patients with
/// their weights; `by_grp = false` additionally collapses groups, each
/// weighted by its share of total patient weight.
pub fn summarize_ce(
    qalys: &ValueTotals,
    lys: Option<&ValueTotals>,
    costs: &[(&str, &ValueTotals)],
    ctx: &ModelContext,
    by_grp: bool,
) -> Result<CeOutput> {
    if costs.iter().any(|(name, _)| *name == "total") {
        return Err(Error::CeKeyMismatch {
            detail: String::from("the category name \"total\" is reserved for the sum"),
        });
    }
    let masses = ctx.patients().grp_masses();
    if !(masses.iter().sum::<f64>() > 0.0) {
        return Err(Error::InvalidPatientWeights);
    }
    let finish = |vt: &ValueTotals| {
        let m = roll_up(vt, ctx);
        if by_grp {
            m
        } else {
            collapse_grps(m, &masses)
        }
    };

    let q = finish(qalys);
    let l = lys.map(|vt| finish(vt));
    if let Some(l) = &l {
        if l.keys().ne(q.keys()) {
            return Err(Error::CeKeyMismatch {
                detail: String::from("life-year rows do not align with QALY rows"),
            });
        }
    }
    let qaly_rows: Vec<QalyRow> = q
        .iter()
        .map(|(&(dr, sample, strategy_id, grp_id), &qalys)| QalyRow {
            dr: f64::from_bits(dr),
            sample,
            strategy_id,
            grp_id,
            qalys,
            lys: l.as_ref().map(|l| l[&(dr, sample, strategy_id, grp_id)]),
        })
        .collect();

    let mut cost_rows: Vec<CostRow> = Vec::new();
    let mut total: BTreeMap<(u64, u32, u32, u32), f64> = BTreeMap::new();
    for (name, vt) in costs {
        for (&(dr, sample, strategy_id, grp_id), &v) in &finish(vt) {
            cost_rows.push(CostRow {
                category: String::from(*name),
                dr: f64::from_bits(dr),
                sample,
                strategy_id,
                grp_id,
                costs: v,
            });
            *total.entry((dr, sample, strategy_id, grp_id)).or_insert(0.0) += v;
        }
    }
    // A model without cost categories still carries zero totals so the
    // decision measures stay defined.
    if costs.is_empty() {
        for (&(dr, sample, strategy_id, grp_id), _) in &q {
            total.insert((dr, sample, strategy_id, grp_id), 0.0);
        }
    }
    for (&(dr, sample, strategy_id, grp_id), &v) in &total {
        cost_rows.push(CostRow {
            category: String::from("total"),
            dr: f64::from_bits(dr),
            sample,
            strategy_id,
            grp_id,
            costs: v,
        });
    }
    CeOutput::new(cost_rows, qaly_rows)
}

/// Dense (sample, strategy, group) view of a cost-effectiveness object at
/// one discount rate per outcome.
struct CeMatrix {
    samples: Vec<u32>,
    strategies: Vec<u32>,
    grps: Vec<u32>,
    /// Dense over (sample, strategy, group).
    e: Vec<f64>,
    c: Vec<f64>,
}

impl CeMatrix {
    fn build(ce: &CeOutput, dr_qalys: f64, dr_costs: f64) -> Result<CeMatrix> {
        let q: Vec<&QalyRow> = ce.qalys.iter().filter(|r| r.dr == dr_qalys).collect();
        if q.is_empty() {
            return Err(Error::MissingDiscountRate { dr: dr_qalys });
        }
        let c: Vec<&CostRow> = ce
            .costs
            .iter()
            .filter(|r| r.dr == dr_costs && r.category == "total")
            .collect();
        if c.is_empty() {
            return Err(Error::MissingDiscountRate { dr: dr_costs });
        }
        let samples: Vec<u32> = q.iter().map(|r| r.sample).collect::<BTreeSet<_>>()
            .into_iter().collect();
        let strategies: Vec<u32> = q.iter().map(|r| r.strategy_id).collect::<BTreeSet<_>>()
            .into_iter().collect();
        let grps: Vec<u32> = q.iter().map(|r| r.grp_id).collect::<BTreeSet<_>>()
            .into_iter().collect();
        let pos = |ids: &[u32], id: u32| ids.binary_search(&id).ok();
        let n = samples.len() * strategies.len() * grps.len();
        let mut e = alloc::vec![f64::NAN; n];
        let mut cc = alloc::vec![f64::NAN; n];
        let index = |s: usize, j: usize, g: usize| {
            (s * strategies.len() + j) * grps.len() + g
        };
        let fill = |grid: &mut [f64], sample, strategy_id, grp_id, value| {
            let (s, j, g) = match (
                pos(&samples, sample),
                pos(&strategies, strategy_id),
                pos(&grps, grp_id),
            ) {
                (Some(s), Some(j), Some(g)) => (s, j, g),
                _ => return Err(Error::UnbalancedSamples),
            };
            let cell = &mut grid[index(s, j, g)];
            if !cell.is_nan() {
                return Err(Error::CeKeyMismatch {
                    detail: alloc::format!(
                        "duplicate row for sample {sample}, strategy {strategy_id}, \
                         group {grp_id}"
                    ),
                });
            }
            *cell = value;
            Ok(())
        };
        for r in &q {
            fill(&mut e, r.sample, r.strategy_id, r.grp_id, r.qalys)?;
        }
        for r in &c {
            fill(&mut cc, r.sample, r.strategy_id, r.grp_id, r.costs)?;
        }
        if e.iter().chain(&cc).any(|v| v.is_nan()) {
            return Err(Error::UnbalancedSamples);
        }
        Ok(CeMatrix {
            samples,
            strategies,
            grps,
            e,
            c: cc,
        })
    }

    fn at(&self, s: usize, j: usize, g: usize) -> (f64, f64) {
        let i = (s * self.strategies.len() + j) * self.grps.len() + g;
        (self.e[i], self.c[i])
    }

    fn nmb(&self, s: usize, j: usize, g: usize, k: f64) -> f64 {
        let (e, c) = self.at(s, j, g);
        k * e - c
    }
}

/// Probability a strategy is most cost-effective at one willingness-to-pay,
/// with the expected-NMB maximizer flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct MceRow {
    pub k: f64,
    pub strategy_id: u32,
    pub grp_id: u32,
    pub prob: f64,
    pub best: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvpiRow {
    pub k: f64,
    pub grp_id: u32,
    pub evpi: f64,
}

/// Expected net monetary benefit of a strategy at one willingness-to-pay.
#[derive(Debug, Clone, PartialEq)]
pub struct NmbRow {
    pub k: f64,
    pub strategy_id: u32,
    pub grp_id: u32,
    pub enmb: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeaResult {
    pub mce: Vec<MceRow>,
    pub evpi: Vec<EvpiRow>,
    pub nmb: Vec<NmbRow>,
}

/// Decision analysis over the full strategy set: per willingness-to-pay and
/// group, the probability each strategy is most cost-effective, the expected
/// NMB, the best strategy, and the expected value of perfect information.
pub fn cea(ce: &CeOutput, k_grid: &[f64], dr_qalys: f64, dr_costs: f64) -> Result<CeaResult> {
    if k_grid.is_empty() {
        return Err(Error::EmptyWtpGrid);
    }
    let m = CeMatrix::build(ce, dr_qalys, dr_costs)?;
    let n_samples = m.samples.len() as f64;
    let mut result = CeaResult {
        mce: Vec::new(),
        evpi: Vec::new(),
        nmb: Vec::new(),
    };
    let mut wins = alloc::vec![0.0f64; m.strategies.len()];
    let mut enmb = alloc::vec![0.0f64; m.strategies.len()];
    for &k in k_grid {
        for g in 0..m.grps.len() {
            wins.fill(0.0);
            enmb.fill(0.0);
            let mut e_max = 0.0;
            for s in 0..m.samples.len() {
                let nmbs: Vec<f64> = (0..m.strategies.len())
                    .map(|j| m.nmb(s, j, g, k))
                    .collect();
                let best = nmbs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let tied = nmbs.iter().filter(|&&v| v == best).count() as f64;
                for (j, &v) in nmbs.iter().enumerate() {
                    enmb[j] += v / n_samples;
                    if v == best {
                        wins[j] += 1.0 / (tied * n_samples);
                    }
                }
                e_max += best / n_samples;
            }
            // Argmax of expected NMB; the tie rule keeps the lowest id.
            let best_j = enmb
                .iter()
                .enumerate()
                .fold(0usize, |acc, (j, &v)| if v > enmb[acc] { j } else { acc });
            for (j, &strategy_id) in m.strategies.iter().enumerate() {
                result.mce.push(MceRow {
                    k,
                    strategy_id,
                    grp_id: m.grps[g],
                    prob: wins[j],
                    best: (j == best_j) as u8,
                });
                result.nmb.push(NmbRow {
                    k,
                    strategy_id,
                    grp_id: m.grps[g],
                    enmb: enmb[j],
                });
            }
            result.evpi.push(EvpiRow {
                k,
                grp_id: m.grps[g],
                evpi: e_max - enmb[best_j],
            });
        }
    }
    Ok(result)
}

/// Per-sample incremental QALYs and costs of one strategy against the
/// comparator, within a group.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub sample: u32,
    pub strategy_id: u32,
    pub grp_id: u32,
    pub inc_qalys: f64,
    pub inc_costs: f64,
}

/// Probability a strategy is more cost-effective than the comparator at one
/// willingness-to-pay: the fraction of samples with INMB strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct CeacRow {
    pub k: f64,
    pub strategy_id: u32,
    pub grp_id: u32,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeaPairwiseResult {
    pub comparator: u32,
    pub delta: Vec<DeltaRow>,
    pub ceac: Vec<CeacRow>,
}

/// Pairwise analysis against a fixed comparator: cost-effectiveness-plane
/// deltas per sample (comparator excluded) and the acceptability curve.
pub fn cea_pw(
    ce: &CeOutput,
    comparator: u32,
    k_grid: &[f64],
    dr_qalys: f64,
    dr_costs: f64,
) -> Result<CeaPairwiseResult> {
    if k_grid.is_empty() {
        return Err(Error::EmptyWtpGrid);
    }
    let m = CeMatrix::build(ce, dr_qalys, dr_costs)?;
    let comp = m
        .strategies
        .binary_search(&comparator)
        .map_err(|_| Error::MissingComparator {
            strategy_id: comparator,
        })?;
    let mut delta = Vec::new();
    for (s, &sample) in m.samples.iter().enumerate() {
        for (j, &strategy_id) in m.strategies.iter().enumerate() {
            if j == comp {
                continue;
            }
            for (g, &grp_id) in m.grps.iter().enumerate() {
                let (e_j, c_j) = m.at(s, j, g);
                let (e_0, c_0) = m.at(s, comp, g);
                delta.push(DeltaRow {
                    sample,
                    strategy_id,
                    grp_id,
                    inc_qalys: e_j - e_0,
                    inc_costs: c_j - c_0,
                });
            }
        }
    }
    let n_samples = m.samples.len() as f64;
    let mut ceac = Vec::new();
    for &k in k_grid {
        for (j, &strategy_id) in m.strategies.iter().enumerate() {
            if j == comp {
                continue;
            }
            for (g, &grp_id) in m.grps.iter().enumerate() {
                let wins = (0..m.samples.len())
                    .filter(|&s| m.nmb(s, j, g, k) - m.nmb(s, comp, g, k) > 0.0)
                    .count();
                ceac.push(CeacRow {
                    k,
                    strategy_id,
                    grp_id,
                    prob: wins as f64 / n_samples,
                });
            }
        }
    }
    Ok(CeaPairwiseResult {
        comparator,
        delta,
        ceac,
    })
}

/// Quantile with linear interpolation between order statistics (the R
/// type-7 convention): index h = (n − 1) p into the sorted sample.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// A point estimate with its 95% PSA interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub est: f64,
    pub lower: f64,
    pub upper: f64,
}

/// The ICER cell: a ratio of means, or the dominance label that replaces it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IcerValue {
    Ratio(f64),
    /// More effective and less costly than the comparator.
    Dominates,
    /// Less effective and more costly than the comparator.
    Dominated,
    /// Mean incremental QALYs are zero; the ratio is undefined.
    Undefined,
}

/// Summary of one strategy vs. the comparator within a group.
#[derive(Debug, Clone, PartialEq)]
pub struct IcerRow {
    pub strategy_id: u32,
    pub grp_id: u32,
    pub inc_qalys: Estimate,
    pub inc_costs: Estimate,
    pub inmb: Estimate,
    pub icer: IcerValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcerTable {
    pub k: f64,
    pub comparator: u32,
    pub rows: Vec<IcerRow>,
}

fn estimate(values: &[f64], est: f64) -> Estimate {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    Estimate {
        est,
        lower: quantile_type7(&sorted, 0.025),
        upper: quantile_type7(&sorted, 0.975),
    }
}

/// Incremental summary table at one willingness-to-pay: mean incremental
/// QALYs, costs, and INMB with 95% PSA intervals, and the ICER as a ratio of
/// means or a dominance label.
pub fn icer_summary(pw: &CeaPairwiseResult, k: f64) -> IcerTable {
    let keys: BTreeSet<(u32, u32)> = pw
        .delta
        .iter()
        .map(|d| (d.strategy_id, d.grp_id))
        .collect();
    let mut rows = Vec::with_capacity(keys.len());
    for (strategy_id, grp_id) in keys {
        let dq: Vec<f64> = pw
            .delta
            .iter()
            .filter(|d| (d.strategy_id, d.grp_id) == (strategy_id, grp_id))
            .map(|d| d.inc_qalys)
            .collect();
        let dc: Vec<f64> = pw
            .delta
            .iter()
            .filter(|d| (d.strategy_id, d.grp_id) == (strategy_id, grp_id))
            .map(|d| d.inc_costs)
            .collect();
        let inmb: Vec<f64> = dq.iter().zip(&dc).map(|(q, c)| k * q - c).collect();
        let n = dq.len() as f64;
        let mean_q = dq.iter().sum::<f64>() / n;
        let mean_c = dc.iter().sum::<f64>() / n;
        let icer = if mean_q == 0.0 {
            IcerValue::Undefined
        } else if mean_q > 0.0 && mean_c < 0.0 {
            IcerValue::Dominates
        } else if mean_q < 0.0 && mean_c > 0.0 {
            IcerValue::Dominated
        } else {
            IcerValue::Ratio(mean_c / mean_q)
        };
        rows.push(IcerRow {
            strategy_id,
            grp_id,
            inc_qalys: estimate(&dq, mean_q),
            inc_costs: estimate(&dc, mean_c),
            inmb: estimate(&inmb, k * mean_q - mean_c),
            icer,
        });
    }
    IcerTable {
        k,
        comparator: pw.comparator,
        rows,
    }
}
