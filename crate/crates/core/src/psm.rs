//! N-state partitioned survival model.
//!
//! State membership is read off N−1 non-mutually-exclusive survival curves
//! evaluated on a common time grid: `p_1 = S_1`, `p_n = S_n − S_{n−1}` for
//! the middle states, and `p_N = 1 − S_{N−1}` for death. Independently
//! sampled curves may cross, making a difference negative; each such cell is
//! clamped to zero with the deficit taken out of the adjacent lower-indexed
//! state (cascading further down if needed), and a crossing counter reports
//! how many cells were affected. Valuation reuses the cohort integrator over
//! the same grid.

use alloc::vec::Vec;

use crate::context::InputData;
use crate::output::{ProbAxis, StateProbs};
use crate::params::SurvivalParams;
use crate::{Error, Result};

/// One emitted survival-curve row.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRow {
    pub sample: u32,
    pub strategy_id: u32,
    pub patient_id: u32,
    pub grp_id: u32,
    pub patient_wt: f64,
    pub curve: u32,
    pub t: f64,
    pub survival: f64,
}

/// Survival probabilities for every (sample, strategy, patient, curve) on a
/// shared time grid. Values start at 1 when the grid starts at 0 and are
/// nonincreasing along the grid; both are enforced at construction (within
/// 1e-9, then tidied exactly).
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurves {
    n_samples: usize,
    strategy_ids: Vec<u32>,
    patient_ids: Vec<u32>,
    /// Normalized to sum to 1 within each group.
    patient_wts: Vec<f64>,
    grp_ids: Vec<u32>,
    n_curves: usize,
    t_grid: Vec<f64>,
    /// Dense over (sample, strategy, patient, curve, t).
    values: Vec<f64>,
}

impl SurvivalCurves {
    pub fn new(
        n_samples: usize,
        strategy_ids: Vec<u32>,
        patient_ids: Vec<u32>,
        patient_wts: Vec<f64>,
        grp_ids: Vec<u32>,
        n_curves: usize,
        t_grid: Vec<f64>,
        mut values: Vec<f64>,
    ) -> Result<Self> {
        if t_grid.is_empty()
            || t_grid.iter().any(|t| !t.is_finite() || *t < 0.0)
            || t_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidTimeGrid);
        }
        if n_samples == 0
            || strategy_ids.is_empty()
            || patient_ids.is_empty()
            || n_curves == 0
            || patient_wts.len() != patient_ids.len()
            || grp_ids.len() != patient_ids.len()
        {
            return Err(Error::DimensionMismatch {
                what: alloc::string::String::from("survival curves need every id dimension"),
            });
        }
        let n_t = t_grid.len();
        let expect = n_samples * strategy_ids.len() * patient_ids.len() * n_curves * n_t;
        if values.len() != expect {
            return Err(Error::DimensionMismatch {
                what: alloc::format!(
                    "expected {expect} survival values, got {}",
                    values.len()
                ),
            });
        }
        let from_zero = t_grid[0] == 0.0;
        for (chunk, series) in values.chunks_mut(n_t).enumerate() {
            let curve = chunk % n_curves + 1;
            for v in series.iter_mut() {
                if !v.is_finite() || *v < -1e-9 || *v > 1.0 + 1e-9 {
                    return Err(Error::SurvivalOutOfRange { value: *v });
                }
                *v = v.clamp(0.0, 1.0);
            }
            if from_zero {
                if (series[0] - 1.0).abs() > 1e-9 {
                    return Err(Error::CurveStartNotOne { value: series[0] });
                }
                series[0] = 1.0;
            }
            for i in 1..n_t {
                if series[i] > series[i - 1] + 1e-9 {
                    return Err(Error::CurveNotMonotone { curve });
                }
                series[i] = series[i].min(series[i - 1]);
            }
        }
        Ok(SurvivalCurves {
            n_samples,
            strategy_ids,
            patient_ids,
            patient_wts,
            grp_ids,
            n_curves,
            t_grid,
            values,
        })
    }

    /// Curves for a single (sample, strategy, patient), each supplied as its
    /// own (grid, survival) series. The grids must agree.
    pub fn single(curves: &[(&[f64], &[f64])]) -> Result<Self> {
        let (grid, _) = curves.first().ok_or(Error::DimensionMismatch {
            what: alloc::string::String::from("a partitioned survival model needs curves"),
        })?;
        let mut values = Vec::with_capacity(curves.len() * grid.len());
        for (g, v) in curves {
            if *g != *grid {
                return Err(Error::CurveGridMismatch);
            }
            if v.len() != g.len() {
                return Err(Error::DimensionMismatch {
                    what: alloc::format!(
                        "curve has {} values on a grid of {}",
                        v.len(),
                        g.len()
                    ),
                });
            }
            values.extend_from_slice(v);
        }
        SurvivalCurves::new(
            1,
            alloc::vec![1],
            alloc::vec![1],
            alloc::vec![1.0],
            alloc::vec![1],
            curves.len(),
            grid.to_vec(),
            values,
        )
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_curves(&self) -> usize {
        self.n_curves
    }

    /// States of the partitioned model: one more than the curve count.
    pub fn n_states(&self) -> usize {
        self.n_curves + 1
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    /// Survival by 0-based (sample, strategy, patient, curve) position and
    /// grid index.
    pub fn survival(
        &self,
        sample: usize,
        strategy: usize,
        patient: usize,
        curve: usize,
        t_index: usize,
    ) -> f64 {
        let n_t = self.t_grid.len();
        let i = (((sample * self.strategy_ids.len() + strategy) * self.patient_ids.len()
            + patient)
            * self.n_curves
            + curve)
            * n_t
            + t_index;
        self.values[i]
    }

    /// Rows in (sample, strategy, patient, curve, t) order.
    pub fn iter_rows(&self) -> impl Iterator<Item = SurvivalRow> + '_ {
        let n_t = self.t_grid.len();
        self.values.iter().enumerate().map(move |(i, &survival)| {
            let ti = i % n_t;
            let rest = i / n_t;
            let c = rest % self.n_curves;
            let rest = rest / self.n_curves;
            let p = rest % self.patient_ids.len();
            let rest = rest / self.patient_ids.len();
            let k = rest % self.strategy_ids.len();
            let s = rest / self.strategy_ids.len();
            SurvivalRow {
                sample: s as u32 + 1,
                strategy_id: self.strategy_ids[k],
                patient_id: self.patient_ids[p],
                grp_id: self.grp_ids[p],
                patient_wt: self.patient_wts[p],
                curve: c as u32 + 1,
                t: self.t_grid[ti],
                survival,
            }
        })
    }
}

/// Splits a strategies-by-patients input expansion into its two axes,
/// normalizing patient weights within each group.
fn axis_from_input(input: &InputData) -> Result<(Vec<u32>, Vec<u32>, Vec<f64>, Vec<u32>)> {
    let not_expansion = || Error::DimensionMismatch {
        what: alloc::string::String::from(
            "input rows must be a strategies x patients expansion",
        ),
    };
    let n = input.n_rows();
    if n == 0 {
        return Err(not_expansion());
    }
    let p = input
        .strategy_ids
        .iter()
        .position(|&k| k != input.strategy_ids[0])
        .unwrap_or(n);
    if n % p != 0 {
        return Err(not_expansion());
    }
    let patients = &input.patient_ids[..p];
    if patients.windows(2).any(|w| w[1] <= w[0]) {
        return Err(not_expansion());
    }
    let mut strategies = Vec::with_capacity(n / p);
    for block in 0..n / p {
        let k = input.strategy_ids[block * p];
        if strategies.contains(&k) {
            return Err(not_expansion());
        }
        strategies.push(k);
        let rows = block * p..(block + 1) * p;
        if input.strategy_ids[rows.clone()].iter().any(|&s| s != k)
            || input.patient_ids[rows] != *patients
        {
            return Err(not_expansion());
        }
    }
    let grps = input.grp_ids[..p].to_vec();
    let mut wts = input.patient_wts[..p].to_vec();
    for g in grps.iter().collect::<alloc::collections::BTreeSet<_>>() {
        let total: f64 = wts
            .iter()
            .zip(&grps)
            .filter(|(_, gg)| *gg == g)
            .map(|(w, _)| w)
            .sum();
        for (w, gg) in wts.iter_mut().zip(&grps) {
            if gg == g {
                *w /= total;
            }
        }
    }
    Ok((strategies, patients.to_vec(), wts, grps))
}

/// Evaluates each curve's survival function on the grid for every sample and
/// input row. Each parameter set either carries one coefficient row per
/// sample or a single row broadcast across samples.
pub fn sim_survival(
    params: &[SurvivalParams],
    input: &InputData,
    t_grid: &[f64],
    n_samples: usize,
) -> Result<SurvivalCurves> {
    if params.is_empty() || n_samples == 0 {
        return Err(Error::DimensionMismatch {
            what: alloc::string::String::from(
                "a partitioned survival model needs curves and samples",
            ),
        });
    }
    for p in params {
        if p.n_samples() != 1 && p.n_samples() != n_samples {
            return Err(Error::UnbalancedSamples);
        }
    }
    let (strategy_ids, patient_ids, patient_wts, grp_ids) = axis_from_input(input)?;
    let bound = params
        .iter()
        .map(|p| p.bind(input))
        .collect::<Result<Vec<_>>>()?;

    let n_curves = params.len();
    let n_t = t_grid.len();
    let mut values = Vec::with_capacity(n_samples * input.n_rows() * n_curves * n_t);
    for s in 0..n_samples {
        for row in 0..input.n_rows() {
            for b in &bound {
                let dist = b.distribution(row, s)?;
                values.extend(t_grid.iter().map(|&t| dist.survival(t)));
            }
        }
    }
    SurvivalCurves::new(
        n_samples,
        strategy_ids,
        patient_ids,
        patient_wts,
        grp_ids,
        n_curves,
        t_grid.to_vec(),
        values,
    )
}

/// Converts curves to state occupancy probabilities, returning the number of
/// grid cells where crossing curves produced a negative difference. Each
/// negative `S_n − S_{n−1}` is clamped to zero and its deficit removed from
/// the states below, which is equivalent to replacing every curve with the
/// running minimum of the curves above it.
pub fn stateprobs_from_survival(sc: &SurvivalCurves) -> Result<(StateProbs, u64)> {
    let n_states = sc.n_states();
    let n_t = sc.t_grid.len();
    let n_strategies = sc.strategy_ids.len();
    let n_patients = sc.patient_ids.len();
    let mut crossings = 0u64;
    let mut probs =
        alloc::vec![0.0f64; sc.n_samples * n_strategies * n_patients * n_states * n_t];
    let mut eff = alloc::vec![0.0f64; sc.n_curves];
    for s in 0..sc.n_samples {
        for k in 0..n_strategies {
            for p in 0..n_patients {
                let base = ((s * n_strategies + k) * n_patients + p) * n_states * n_t;
                for ti in 0..n_t {
                    for c in 1..sc.n_curves {
                        if sc.survival(s, k, p, c, ti) < sc.survival(s, k, p, c - 1, ti) {
                            crossings += 1;
                        }
                    }
                    // Running minimum from the last curve down.
                    for c in (0..sc.n_curves).rev() {
                        let v = sc.survival(s, k, p, c, ti);
                        eff[c] = if c + 1 < sc.n_curves {
                            v.min(eff[c + 1])
                        } else {
                            v
                        };
                    }
                    probs[base + ti] = eff[0];
                    for c in 1..sc.n_curves {
                        probs[base + c * n_t + ti] = eff[c] - eff[c - 1];
                    }
                    probs[base + sc.n_curves * n_t + ti] = 1.0 - eff[sc.n_curves - 1];
                }
            }
        }
    }
    let sp = StateProbs::new(
        sc.n_samples,
        sc.strategy_ids.clone(),
        ProbAxis::Patients {
            ids: sc.patient_ids.clone(),
            wts: sc.patient_wts.clone(),
            grps: sc.grp_ids.clone(),
        },
        n_states,
        sc.t_grid.clone(),
        probs,
    )?;
    Ok((sp, crossings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{expand, Column, ExpandDim, ModelContext, PatientTable, StateTable,
        StrategyTable};
    use crate::math::exp;
    use crate::survival::Family;

    fn psm_ctx(n_strategies: usize, n_patients: usize) -> ModelContext {
        ModelContext::new(
            StrategyTable::new((1..=n_strategies as u32).collect(), None, vec![]).unwrap(),
            PatientTable::new(
                (1..=n_patients as u32).collect(),
                None,
                None,
                None,
                vec![Column::new("age", vec![60.0; n_patients])],
            )
            .unwrap(),
            StateTable::new(vec!["Stable".into(), "Progression".into()]).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn state_probabilities_partition_the_curves() {
        let grid = [0.0, 1.0];
        let sc = SurvivalCurves::single(&[
            (&grid, &[1.0, 0.6]),
            (&grid, &[1.0, 0.8]),
        ])
        .unwrap();
        let (sp, crossings) = stateprobs_from_survival(&sc).unwrap();
        assert_eq!(crossings, 0);
        assert_eq!(
            [sp.prob(0, 0, 0, 0, 0), sp.prob(0, 0, 0, 1, 0), sp.prob(0, 0, 0, 2, 0)],
            [1.0, 0.0, 0.0]
        );
        for (h, want) in [0.6, 0.2, 0.2].into_iter().enumerate() {
            assert!((sp.prob(0, 0, 0, h, 1) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn crossed_curves_are_clamped_and_counted() {
        let grid = [0.0, 1.0];
        let sc = SurvivalCurves::single(&[
            (&grid, &[1.0, 0.7]),
            (&grid, &[1.0, 0.65]),
        ])
        .unwrap();
        let (sp, crossings) = stateprobs_from_survival(&sc).unwrap();
        assert_eq!(crossings, 1);
        for (h, want) in [0.65, 0.0, 0.35].into_iter().enumerate() {
            assert!((sp.prob(0, 0, 0, h, 1) - want).abs() < 1e-12);
        }
        // Deficits cascade below the clamped state when needed.
        let sc = SurvivalCurves::single(&[
            (&grid, &[1.0, 0.5]),
            (&grid, &[1.0, 0.6]),
            (&grid, &[1.0, 0.4]),
        ])
        .unwrap();
        let (sp, crossings) = stateprobs_from_survival(&sc).unwrap();
        assert_eq!(crossings, 1);
        for (h, want) in [0.4, 0.0, 0.0, 0.6].into_iter().enumerate() {
            assert!((sp.prob(0, 0, 0, h, 1) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn malformed_curves_are_rejected() {
        let ok: &[f64] = &[1.0, 0.9];
        assert!(matches!(
            SurvivalCurves::single(&[(&[0.0, 1.0], ok), (&[0.0, 2.0], ok)]),
            Err(Error::CurveGridMismatch)
        ));
        assert!(matches!(
            SurvivalCurves::single(&[(&[0.0, 1.0], &[0.9, 0.8])]),
            Err(Error::CurveStartNotOne { .. })
        ));
        assert!(matches!(
            SurvivalCurves::single(&[(&[0.0, 1.0, 2.0], &[1.0, 0.5, 0.6])]),
            Err(Error::CurveNotMonotone { .. })
        ));
        assert!(matches!(
            SurvivalCurves::single(&[(&[0.0, 1.0], &[1.0, -0.2])]),
            Err(Error::SurvivalOutOfRange { .. })
        ));
    }

    #[test]
    fn survival_evaluation_matches_the_distribution_pointwise() {
        let ctx = psm_ctx(1, 1);
        let input = expand(&ctx, &[ExpandDim::Strategies, ExpandDim::Patients]).unwrap();
        let weibull = SurvivalParams::from_natural(Family::Weibull, &[1.4, 3.0]).unwrap();
        let exp_curve = SurvivalParams::from_natural(Family::Exponential, &[0.2]).unwrap();
        let grid = [0.0, 0.5, 1.0, 2.0, 5.0];
        let sc = sim_survival(
            &[weibull.clone(), exp_curve],
            &input,
            &grid,
            1,
        )
        .unwrap();
        let dist = weibull.bind(&input).unwrap().distribution(0, 0).unwrap();
        for (ti, &t) in grid.iter().enumerate() {
            assert_eq!(sc.survival(0, 0, 0, 0, ti), dist.survival(t));
            assert_eq!(sc.survival(0, 0, 0, 1, ti), exp(-0.2 * t));
        }
        assert_eq!(sc.survival(0, 0, 0, 0, 0), 1.0);
        let rows: Vec<SurvivalRow> = sc.iter_rows().collect();
        assert_eq!(rows.len(), 2 * grid.len());
        assert_eq!((rows[0].curve, rows[0].t), (1, 0.0));
        assert_eq!((rows[5].curve, rows[5].t), (2, 0.0));
    }

    #[test]
    fn ids_expand_across_samples_strategies_and_patients() {
        let ctx = psm_ctx(2, 3);
        let input = expand(&ctx, &[ExpandDim::Strategies, ExpandDim::Patients]).unwrap();
        let curve = SurvivalParams::from_natural(Family::Exponential, &[0.3]).unwrap();
        let sc = sim_survival(&[curve], &input, &[0.0, 1.0], 2).unwrap();
        assert_eq!(sc.n_samples(), 2);
        assert_eq!(sc.iter_rows().count(), 2 * 2 * 3 * 1 * 2);
        let last = sc.iter_rows().last().unwrap();
        assert_eq!((last.sample, last.strategy_id, last.patient_id), (2, 2, 3));
        // A missing model term is reported by name.
        let mut needs_age = SurvivalParams::from_natural(Family::Exponential, &[0.3]).unwrap();
        needs_age.coefs_mut()[0].push_column("age", &[0.01]).unwrap();
        let bare = ModelContext::new(
            StrategyTable::new(vec![1], None, vec![]).unwrap(),
            PatientTable::new(vec![1], None, None, None, vec![]).unwrap(),
            StateTable::new(vec!["Stable".into()]).unwrap(),
            None,
        )
        .unwrap();
        let bare_input = expand(&bare, &[ExpandDim::Strategies, ExpandDim::Patients]).unwrap();
        match sim_survival(&[needs_age], &bare_input, &[0.0, 1.0], 1) {
            Err(Error::MissingTerm { name }) => assert_eq!(name, "age"),
            other => panic!("expected a missing-term error, got {other:?}"),
        }
    }

    #[test]
    fn partitioned_probabilities_match_the_analytic_progressive_process() {
        // Constant hazards: stable -> progression 0.28, stable -> death
        // 0.013, progression -> death 0.10. Stable occupancy is exp(-at)
        // with a the total exit rate; progression occupancy solves a linear
        // ODE; overall survival is their sum.
        let (l12, l13, l23) = (0.28, 0.013, 0.10);
        let a = l12 + l13;
        let p1 = |t: f64| exp(-a * t);
        let p2 = |t: f64| l12 / (l23 - a) * (exp(-a * t) - exp(-l23 * t));
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let pfs: Vec<f64> = grid.iter().map(|&t| p1(t)).collect();
        let os: Vec<f64> = grid.iter().map(|&t| p1(t) + p2(t)).collect();
        let sc = SurvivalCurves::single(&[(&grid, &pfs), (&grid, &os)]).unwrap();
        let (sp, crossings) = stateprobs_from_survival(&sc).unwrap();
        assert_eq!(crossings, 0);
        for (ti, &t) in grid.iter().enumerate() {
            assert!((sp.prob(0, 0, 0, 0, ti) - p1(t)).abs() < 1e-8);
            assert!((sp.prob(0, 0, 0, 1, ti) - p2(t)).abs() < 1e-8);
            assert!((sp.prob(0, 0, 0, 2, ti) - (1.0 - p1(t) - p2(t))).abs() < 1e-8);
        }
    }

    #[test]
    fn non_expansion_inputs_are_rejected() {
        let input = InputData {
            strategy_ids: alloc::vec![1, 1],
            patient_ids: alloc::vec![1, 1],
            patient_pos: alloc::vec![0, 0],
            grp_ids: alloc::vec![1, 1],
            patient_wts: alloc::vec![1.0, 1.0],
            columns: alloc::vec![],
        };
        let curve = SurvivalParams::from_natural(Family::Exponential, &[0.3]).unwrap();
        assert!(sim_survival(&[curve], &input, &[0.0, 1.0], 1).is_err());
    }
}
