//! Parameter machinery for probabilistic sensitivity analysis: multivariate
//! normal coefficient draws, moment matching, linear predictors over input
//! data, survival and multinomial-logit coefficient blocks, and arrays of
//! transition probability matrices.
//!
//! Sampled quantities are organized so that the PSA sample index is always
//! the outermost dimension: linear predictors flatten as all input rows for
//! sample 1, then all rows for sample 2, and so on; transition-probability
//! ids nest strategy, then patient, then time interval inside each sample.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::context::InputData;
use crate::linalg::{expm, Matrix};
use crate::math::{fabs, sqrt};
use crate::rng::std_normal;
use crate::survival::{Distribution, Family, Link};
use crate::{Error, Result};

/// Beta(shape1, shape2) with the requested mean and standard error, by the
/// method of moments. The mean must lie strictly inside (0, 1) and the
/// variance below mean * (1 - mean).
pub fn mom_beta(mean: f64, se: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0 && mean < 1.0) || !mean.is_finite() {
        return Err(Error::InfeasibleMoments {
            reason: alloc::format!("beta mean {mean} must lie strictly inside (0, 1)"),
        });
    }
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::InfeasibleMoments {
            reason: alloc::format!("beta standard error {se} must be positive"),
        });
    }
    let var = se * se;
    if var >= mean * (1.0 - mean) {
        return Err(Error::InfeasibleMoments {
            reason: alloc::format!(
                "beta variance {var} must be below mean*(1-mean) = {}",
                mean * (1.0 - mean)
            ),
        });
    }
    let scale = mean * (1.0 - mean) / var - 1.0;
    Ok((mean * scale, (1.0 - mean) * scale))
}

/// Gamma(shape, rate) with the requested mean and standard error, by the
/// method of moments.
pub fn mom_gamma(mean: f64, se: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0) || !mean.is_finite() || !(se > 0.0) || !se.is_finite() {
        return Err(Error::InfeasibleMoments {
            reason: alloc::format!("gamma moments (mean {mean}, se {se}) must be positive"),
        });
    }
    let var = se * se;
    Ok((mean * mean / var, mean / var))
}

/// Lower-triangular Cholesky factor of a symmetric PSD matrix, with a jitter
/// ladder up to 1e-10 (relative to the diagonal scale) for matrices that are
/// PSD only up to rounding. Exactly singular directions get a zero column.
fn cholesky_psd(cov: &[f64], k: usize) -> Result<Vec<f64>> {
    let scale = (0..k)
        .map(|i| fabs(cov[i * k + i]))
        .fold(0.0f64, f64::max)
        .max(1.0);
    for i in 0..k {
        for j in 0..i {
            if fabs(cov[i * k + j] - cov[j * k + i]) > 1e-10 * scale {
                return Err(Error::AsymmetricCovariance { i, j });
            }
        }
    }
    'jitter: for &jit in &[0.0, 1e-12, 1e-10] {
        let mut l = vec![0.0f64; k * k];
        for i in 0..k {
            for j in 0..=i {
                let mut s = cov[i * k + j];
                if i == j {
                    s += jit * scale;
                }
                for m in 0..j {
                    s -= l[i * k + m] * l[j * k + m];
                }
                if i == j {
                    if s < -1e-10 * scale {
                        continue 'jitter;
                    }
                    l[i * k + i] = if s > 0.0 { sqrt(s) } else { 0.0 };
                } else {
                    let d = l[j * k + j];
                    l[i * k + j] = if d > 0.0 { s / d } else { 0.0 };
                }
            }
        }
        return Ok(l);
    }
    Err(Error::NotPositiveSemiDefinite)
}

/// Draws `n_samples` rows from a multivariate normal with the given mean and
/// row-major covariance. Each draw consumes exactly `len(mean)` uniforms, so
/// stream consumption is schedule-independent. Returns a row-major
/// `n_samples x k` matrix.
pub fn sample_coefs_mvn(
    mean: &[f64],
    cov: &[f64],
    n_samples: usize,
    rng: &mut impl RngCore,
) -> Result<Vec<f64>> {
    let k = mean.len();
    if cov.len() != k * k {
        return Err(Error::DimensionMismatch {
            what: alloc::format!("covariance for {k} coefficients needs {} entries", k * k),
        });
    }
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "multivariate normal parameters",
        });
    }
    let l = cholesky_psd(cov, k)?;
    let mut out = Vec::with_capacity(n_samples * k);
    let mut z = vec![0.0f64; k];
    for _ in 0..n_samples {
        for zj in z.iter_mut() {
            *zj = std_normal(rng);
        }
        for i in 0..k {
            let mut x = mean[i];
            for j in 0..=i {
                x += l[i * k + j] * z[j];
            }
            out.push(x);
        }
    }
    Ok(out)
}

/// A block of sampled regression coefficients: one column per model term and
/// one row per PSA sample. A single-row block broadcasts across samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefMatrix {
    terms: Vec<String>,
    values: Vec<f64>,
    n_samples: usize,
}

impl CoefMatrix {
    pub fn new(terms: Vec<String>, values: Vec<f64>, n_samples: usize) -> Result<Self> {
        if values.len() != terms.len() * n_samples || n_samples == 0 {
            return Err(Error::DimensionMismatch {
                what: alloc::format!(
                    "coefficient block with {} terms and {n_samples} samples needs {} values, \
                     got {}",
                    terms.len(),
                    terms.len() * n_samples,
                    values.len()
                ),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "coefficient block",
            });
        }
        Ok(CoefMatrix {
            terms,
            values,
            n_samples,
        })
    }

    /// Fixed (sample-invariant) coefficients: a single row that broadcasts
    /// across whatever sample count the surrounding parameter set uses.
    pub fn fixed(terms: Vec<String>, values: Vec<f64>) -> Result<Self> {
        Self::new(terms, values, 1)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Coefficient row for a sample; single-row blocks broadcast.
    pub fn row(&self, sample: usize) -> &[f64] {
        let i = if self.n_samples == 1 { 0 } else { sample };
        &self.values[i * self.terms.len()..(i + 1) * self.terms.len()]
    }

    /// Appends a pre-simulated column (for example posterior draws produced
    /// elsewhere), which must have one value per existing sample row.
    pub fn push_column(&mut self, term: impl Into<String>, column: &[f64]) -> Result<()> {
        if column.len() != self.n_samples {
            return Err(Error::DimensionMismatch {
                what: alloc::format!(
                    "extra coefficient column has {} rows, block has {} samples",
                    column.len(),
                    self.n_samples
                ),
            });
        }
        if column.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "coefficient block",
            });
        }
        let k = self.terms.len();
        let mut values = Vec::with_capacity((k + 1) * self.n_samples);
        for (i, &extra) in column.iter().enumerate() {
            values.extend_from_slice(&self.values[i * k..(i + 1) * k]);
            values.push(extra);
        }
        self.terms.push(term.into());
        self.values = values;
        Ok(())
    }
}

/// Linear predictors X * B^T for every (input row, sample) pair, flattened
/// sample-major: all N rows for sample 1, then all N rows for sample 2, ...
pub fn xbeta(input: &InputData, coefs: &CoefMatrix) -> Result<Vec<f64>> {
    let x = input.term_matrix(coefs.terms())?;
    let n = input.n_rows();
    let k = coefs.n_terms();
    let mut out = Vec::with_capacity(n * coefs.n_samples());
    for s in 0..coefs.n_samples() {
        let b = coefs.row(s);
        for i in 0..n {
            let xi = &x[i * k..(i + 1) * k];
            out.push(xi.iter().zip(b).map(|(a, c)| a * c).sum());
        }
    }
    Ok(out)
}

/// Survival coefficient blocks, one per natural parameter of the family in
/// canonical order, with the family's default inverse links.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalParams {
    family: Family,
    coefs: Vec<CoefMatrix>,
    links: Vec<Link>,
}

impl SurvivalParams {
    pub fn new(family: Family, coefs: Vec<CoefMatrix>) -> Result<Self> {
        let expected = family.param_names().len();
        if coefs.len() != expected {
            return Err(Error::DimensionMismatch {
                what: alloc::format!(
                    "{} takes {expected} parameter blocks, got {}",
                    family.name(),
                    coefs.len()
                ),
            });
        }
        let n = coefs.iter().map(|c| c.n_samples()).max().unwrap_or(1);
        if coefs
            .iter()
            .any(|c| c.n_samples() != 1 && c.n_samples() != n)
        {
            return Err(Error::DimensionMismatch {
                what: "parameter blocks disagree on the number of PSA samples".into(),
            });
        }
        let links = family.default_links().to_vec();
        Ok(SurvivalParams {
            family,
            coefs,
            links,
        })
    }

    /// Fixed intercept-only parameters on the natural scale, mostly useful
    /// for tests and deterministic runs.
    pub fn from_natural(family: Family, params: &[f64]) -> Result<Self> {
        family.build(params)?; // validate domain eagerly
        let links = family.default_links();
        let coefs = params
            .iter()
            .zip(links)
            .map(|(&p, link)| {
                let raw = match link {
                    Link::Log => crate::math::log(p),
                    Link::Identity => p,
                };
                CoefMatrix::new(vec!["(Intercept)".into()], vec![raw], 1)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(family, coefs)
    }

    /// Draws all parameter blocks jointly from one multivariate normal over
    /// the stacked coefficients (parameter-major order).
    pub fn from_joint_mvn(
        family: Family,
        param_terms: Vec<Vec<String>>,
        means: &[f64],
        cov: &[f64],
        n_samples: usize,
        rng: &mut impl RngCore,
    ) -> Result<Self> {
        let k_total: usize = param_terms.iter().map(|t| t.len()).sum();
        if means.len() != k_total {
            return Err(Error::DimensionMismatch {
                what: alloc::format!(
                    "stacked coefficient mean has {} entries, terms imply {k_total}",
                    means.len()
                ),
            });
        }
        let draws = sample_coefs_mvn(means, cov, n_samples, rng)?;
        let mut coefs = Vec::with_capacity(param_terms.len());
        let mut offset = 0;
        for terms in param_terms {
            let k = terms.len();
            let mut values = Vec::with_capacity(n_samples * k);
            for s in 0..n_samples {
                values.extend_from_slice(&draws[s * k_total + offset..s * k_total + offset + k]);
            }
            offset += k;
            coefs.push(CoefMatrix::new(terms, values, n_samples)?);
        }
        Self::new(family, coefs)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_samples(&self) -> usize {
        self.coefs.iter().map(|c| c.n_samples()).max().unwrap_or(1)
    }

    pub fn coefs(&self) -> &[CoefMatrix] {
        &self.coefs
    }

    pub fn coefs_mut(&mut self) -> &mut [CoefMatrix] {
        &mut self.coefs
    }

    /// Resolves term columns against an input dataset once, so distributions
    /// can then be built per (row, sample) without repeated lookups.
    pub fn bind<'a>(&'a self, input: &'a InputData) -> Result<BoundSurvival<'a>> {
        let mut cols = Vec::with_capacity(self.coefs.len());
        for c in &self.coefs {
            let mut param_cols: Vec<Option<&'a [f64]>> = Vec::with_capacity(c.n_terms());
            for t in c.terms() {
                match input.column(t) {
                    Some(col) => param_cols.push(Some(col)),
                    None if t == "(Intercept)" => param_cols.push(None),
                    None => return Err(Error::MissingTerm { name: t.clone() }),
                }
            }
            cols.push(param_cols);
        }
        Ok(BoundSurvival { params: self, cols })
    }
}

/// A survival parameter set resolved against one input dataset.
pub struct BoundSurvival<'a> {
    params: &'a SurvivalParams,
    cols: Vec<Vec<Option<&'a [f64]>>>,
}

impl BoundSurvival<'_> {
    /// The fully parameterized distribution for one (input row, sample).
    pub fn distribution(&self, row: usize, sample: usize) -> Result<Distribution> {
        let mut natural = [0.0f64; 2];
        let n_params = self.params.coefs.len();
        for (p, (coef, cols)) in self.params.coefs.iter().zip(&self.cols).enumerate() {
            let b = coef.row(sample);
            let mut lp = 0.0;
            for (c, &beta) in cols.iter().zip(b) {
                lp += beta * c.map_or(1.0, |v| v[row]);
            }
            natural[p] = self.params.links[p].inverse(lp);
        }
        self.params.family.build(&natural[..n_params])
    }
}

/// Multinomial logit coefficients: one block per non-reference category, in
/// ascending category order. The reference category's linear predictor is
/// pinned at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MlogitParams {
    coefs: Vec<CoefMatrix>,
    reference: usize,
    n_categories: usize,
}

impl MlogitParams {
    pub fn new(coefs: Vec<CoefMatrix>, reference: usize, n_categories: usize) -> Result<Self> {
        if n_categories < 2 || coefs.len() != n_categories - 1 {
            return Err(Error::DimensionMismatch {
                what: alloc::format!(
                    "{n_categories} categories need {} coefficient blocks, got {}",
                    n_categories.saturating_sub(1),
                    coefs.len()
                ),
            });
        }
        if reference >= n_categories {
            return Err(Error::DimensionMismatch {
                what: alloc::format!(
                    "reference category {reference} out of range for {n_categories} categories"
                ),
            });
        }
        Ok(MlogitParams {
            coefs,
            reference,
            n_categories,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.coefs.iter().map(|c| c.n_samples()).max().unwrap_or(1)
    }

    /// Category probabilities for one (input row, sample) by softmax over the
    /// linear predictors, computed against the running maximum for stability.
    pub fn predict(&self, input: &InputData, row: usize, sample: usize) -> Result<Vec<f64>> {
        let mut lps = vec![0.0f64; self.n_categories];
        let mut coef_iter = self.coefs.iter();
        for (cat, lp) in lps.iter_mut().enumerate() {
            if cat == self.reference {
                continue;
            }
            let coef = coef_iter.next().expect("checked at construction");
            let b = coef.row(sample);
            let mut acc = 0.0;
            for (t, &beta) in coef.terms().iter().zip(b) {
                let x = match input.column(t) {
                    Some(col) => col[row],
                    None if t == "(Intercept)" => 1.0,
                    None => return Err(Error::MissingTerm { name: t.clone() }),
                };
                acc += beta * x;
            }
            *lp = acc;
        }
        let max = lps.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut probs: Vec<f64> = lps.iter().map(|&lp| crate::math::exp(lp - max)).collect();
        let total: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= total;
        }
        Ok(probs)
    }
}

/// Identifier row for one transition probability matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpId {
    pub sample: u32,
    pub strategy_id: u32,
    pub patient_id: u32,
    pub grp_id: u32,
    pub patient_wt: f64,
    pub time_start: f64,
    pub time_interval: u32,
}

/// Id rows for an array of transition matrices: samples outermost, then the
/// input rows in their (strategy, patient) order, then time intervals
/// innermost.
pub fn tpmatrix_id(
    input: &InputData,
    n_samples: usize,
    interval_starts: &[f64],
) -> Result<Vec<TpId>> {
    let starts = normalize_intervals(interval_starts)?;
    let mut ids = Vec::with_capacity(n_samples * input.n_rows() * starts.len());
    for s in 0..n_samples {
        for i in 0..input.n_rows() {
            for (m, &t0) in starts.iter().enumerate() {
                ids.push(TpId {
                    sample: s as u32 + 1,
                    strategy_id: input.strategy_ids[i],
                    patient_id: input.patient_ids[i],
                    grp_id: input.grp_ids[i],
                    patient_wt: input.patient_wts[i],
                    time_start: t0,
                    time_interval: m as u32 + 1,
                });
            }
        }
    }
    Ok(ids)
}

pub(crate) fn normalize_intervals(interval_starts: &[f64]) -> Result<Vec<f64>> {
    if interval_starts.is_empty() {
        return Ok(vec![0.0]);
    }
    if interval_starts[0] != 0.0 {
        return Err(Error::InvalidIntervals {
            detail: alloc::format!("first interval starts at {}", interval_starts[0]),
        });
    }
    for w in interval_starts.windows(2) {
        if !(w[1] > w[0]) || !w[1].is_finite() {
            return Err(Error::InvalidIntervals {
                detail: alloc::format!("start {} follows {}", w[1], w[0]),
            });
        }
    }
    Ok(interval_starts.to_vec())
}

/// An array of row-stochastic transition matrices, one per id row, with the
/// final state (death) absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct TransProbArray {
    n_states: usize,
    ids: Vec<TpId>,
    interval_starts: Vec<f64>,
    probs: Vec<f64>,
}

impl TransProbArray {
    pub fn new(
        n_states: usize,
        ids: Vec<TpId>,
        interval_starts: &[f64],
        mut probs: Vec<f64>,
    ) -> Result<Self> {
        let starts = normalize_intervals(interval_starts)?;
        let h2 = n_states * n_states;
        if probs.len() != ids.len() * h2 || ids.len() % starts.len() != 0 {
            return Err(Error::DimensionMismatch {
                what: alloc::format!(
                    "{} matrices of dimension {n_states} need {} probabilities, got {}",
                    ids.len(),
                    ids.len() * h2,
                    probs.len()
                ),
            });
        }
        for (m, chunk) in probs.chunks_mut(h2).enumerate() {
            for r in 0..n_states {
                let mut sum = 0.0;
                for c in 0..n_states {
                    let v = chunk[r * n_states + c];
                    if !(v >= -1e-9 && v <= 1.0 + 1e-9) || v.is_nan() {
                        return Err(Error::ProbabilityOutOfBounds {
                            index: m,
                            row: r,
                            col: c,
                            value: v,
                        });
                    }
                    chunk[r * n_states + c] = v.clamp(0.0, 1.0);
                    sum += chunk[r * n_states + c];
                }
                if fabs(sum - 1.0) > 1e-9 {
                    return Err(Error::RowNotStochastic {
                        index: m,
                        row: r,
                        sum,
                    });
                }
            }
            if fabs(chunk[h2 - 1] - 1.0) > 1e-9 {
                return Err(Error::DeathRowNotAbsorbing { index: m });
            }
        }
        Ok(TransProbArray {
            n_states,
            ids,
            interval_starts: starts,
            probs,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_matrices(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[TpId] {
        &self.ids
    }

    pub fn interval_starts(&self) -> &[f64] {
        &self.interval_starts
    }

    pub fn matrix(&self, index: usize) -> &[f64] {
        let h2 = self.n_states * self.n_states;
        &self.probs[index * h2..(index + 1) * h2]
    }

    /// Index of the time interval containing model time `t`.
    pub fn interval_index(&self, t: f64) -> usize {
        match self
            .interval_starts
            .iter()
            .rposition(|&s| s <= t)
        {
            Some(i) => i,
            None => 0,
        }
    }

    /// Multiplies selected entries by relative risks and restores row
    /// stochasticity through each row's complement entry.
    ///
    /// `pairs` are 0-based (row, col) cells; `rr` is laid out pair-major, one
    /// value per matrix within each pair block (matching the sample-major
    /// flattening of `xbeta`). The complement of an affected row defaults to
    /// its diagonal and may be overridden per row via `complements`.
    pub fn apply_rr(
        &self,
        pairs: &[(usize, usize)],
        rr: &[f64],
        complements: &[(usize, usize)],
    ) -> Result<TransProbArray> {
        let h = self.n_states;
        let n_mats = self.n_matrices();
        if rr.len() != pairs.len() * n_mats {
            return Err(Error::DimensionMismatch {
                what: alloc::format!(
                    "{} index pairs over {n_mats} matrices need {} relative risks, got {}",
                    pairs.len(),
                    pairs.len() * n_mats,
                    rr.len()
                ),
            });
        }
        let mut comp_of = vec![usize::MAX; h];
        for &(r, c) in pairs {
            if r >= h || c >= h {
                return Err(Error::DimensionMismatch {
                    what: alloc::format!("index pair ({r}, {c}) outside a {h}-state matrix"),
                });
            }
            comp_of[r] = r; // default: diagonal
        }
        for &(r, c) in complements {
            if r >= h || c >= h || comp_of[r] == usize::MAX {
                return Err(Error::DimensionMismatch {
                    what: alloc::format!("complement ({r}, {c}) does not match an adjusted row"),
                });
            }
            comp_of[r] = c;
        }
        if pairs.iter().any(|&(r, c)| comp_of[r] == c) {
            return Err(Error::DimensionMismatch {
                what: "a relative-risk cell cannot also be its row's complement".into(),
            });
        }

        let mut probs = self.probs.clone();
        let h2 = h * h;
        for m in 0..n_mats {
            let chunk = &mut probs[m * h2..(m + 1) * h2];
            for (j, &(r, c)) in pairs.iter().enumerate() {
                let factor = rr[j * n_mats + m];
                if !(factor >= 0.0) || !factor.is_finite() {
                    return Err(Error::NonFinite {
                        what: "relative risk",
                    });
                }
                chunk[r * h + c] *= factor;
            }
            for r in 0..h {
                let comp = comp_of[r];
                if comp == usize::MAX {
                    continue;
                }
                let others: f64 = (0..h).filter(|&c| c != comp).map(|c| chunk[r * h + c]).sum();
                let value = 1.0 - others;
                if value < -1e-9 {
                    return Err(Error::InfeasibleRelativeRisk {
                        index: m,
                        row: r,
                        value,
                    });
                }
                chunk[r * h + comp] = value.max(0.0);
            }
        }
        TransProbArray::new(h, self.ids.clone(), &self.interval_starts, probs)
    }
}

/// Exponentiates a continuous-time intensity matrix over an elapsed time,
/// producing a transition probability matrix. Off-diagonals must be
/// nonnegative and rows must sum to zero within 1e-6; the residual (typical
/// of matrices published with rounded entries) is folded into the diagonal
/// before exponentiation so the output rows are exactly stochastic.
pub fn expmat(q: &Matrix, t: f64) -> Result<Matrix> {
    let h = q.n();
    let mut q = q.clone();
    for r in 0..h {
        let mut sum = 0.0;
        for c in 0..h {
            let v = q.get(r, c);
            if !v.is_finite() {
                return Err(Error::InvalidIntensityMatrix {
                    reason: alloc::format!("entry ({r}, {c}) is not finite"),
                });
            }
            if r != c && v < 0.0 {
                return Err(Error::InvalidIntensityMatrix {
                    reason: alloc::format!("off-diagonal entry ({r}, {c}) = {v} is negative"),
                });
            }
            sum += v;
        }
        if fabs(sum) > 1e-6 {
            return Err(Error::InvalidIntensityMatrix {
                reason: alloc::format!("row {r} sums to {sum}, not 0"),
            });
        }
        q.set(r, r, q.get(r, r) - sum);
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::QueryOutOfRange {
            what: alloc::format!("elapsed time {t} must be finite and nonnegative"),
        });
    }
    let mut p = expm(&q.scale(t))?;
    for r in 0..h {
        let mut sum = 0.0;
        for c in 0..h {
            let v = p.get(r, c);
            if !(v >= -1e-9 && v <= 1.0 + 1e-9) {
                return Err(Error::ProbabilityOutOfBounds {
                    index: 0,
                    row: r,
                    col: c,
                    value: v,
                });
            }
            p.set(r, c, v.clamp(0.0, 1.0));
            sum += p.get(r, c);
        }
        if fabs(sum - 1.0) > 1e-9 {
            return Err(Error::RowNotStochastic {
                index: 0,
                row: r,
                sum,
            });
        }
    }
    Ok(p)
}

/// Builds a transition probability array from per-(sample, row) intensity
/// matrices over one cycle length. `q` is consulted once per (sample, input
/// row) with samples outermost.
pub fn transprobs_from_intensities(
    input: &InputData,
    n_samples: usize,
    cycle_length: f64,
    mut q: impl FnMut(usize, usize) -> Matrix,
) -> Result<TransProbArray> {
    let ids = tpmatrix_id(input, n_samples, &[])?;
    let mut probs = Vec::new();
    let mut n_states = 0;
    for s in 0..n_samples {
        for i in 0..input.n_rows() {
            let p = expmat(&q(s, i), cycle_length)?;
            n_states = p.n();
            probs.extend_from_slice(p.as_slice());
        }
    }
    TransProbArray::new(n_states, ids, &[], probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{Column, ExpandDim, ModelContext, PatientTable, StateTable, StrategyTable};
    use crate::rng::Streams;

    fn input_rows(n_strat: usize, n_pat: usize) -> InputData {
        let ctx = ModelContext::new(
            StrategyTable::new(
                (1..=n_strat as u32).collect(),
                None,
                vec![Column::new(
                    "new1",
                    (0..n_strat).map(|i| (i == 1) as u8 as f64).collect(),
                )],
            )
            .unwrap(),
            PatientTable::new(
                (1..=n_pat as u32).collect(),
                None,
                None,
                None,
                vec![Column::new("age", (0..n_pat).map(|i| 50.0 + i as f64).collect())],
            )
            .unwrap(),
            StateTable::new(vec!["Healthy".into(), "Sick".into()]).unwrap(),
            None,
        )
        .unwrap();
        crate::context::expand(&ctx, &[ExpandDim::Strategies, ExpandDim::Patients]).unwrap()
    }

    #[test]
    fn moment_matching_reproduces_reference_values() {
        let (a, b) = mom_beta(0.8, 0.02).unwrap();
        assert!((a - 319.2).abs() < 1e-10);
        assert!((b - 79.8).abs() < 1e-10);
        let (shape, rate) = mom_gamma(2000.0, 2000.0).unwrap();
        assert!((shape - 1.0).abs() < 1e-10);
        assert!((rate - 1.0 / 2000.0).abs() < 1e-10);
    }

    #[test]
    fn moment_matching_round_trips_the_moments() {
        for &(m, s) in &[(0.8, 0.02), (0.6, 0.05), (0.31, 0.04)] {
            let (a, b) = mom_beta(m, s).unwrap();
            let mean = a / (a + b);
            let var = a * b / ((a + b) * (a + b) * (a + b + 1.0));
            assert!((mean - m).abs() < 1e-10);
            assert!((sqrt(var) - s).abs() < 1e-10);
        }
        for &(m, s) in &[(2000.0, 2000.0), (9500.0, 9500.0), (3.5, 0.4)] {
            let (shape, rate) = mom_gamma(m, s).unwrap();
            assert!((shape / rate - m).abs() < 1e-10 * m);
            assert!((sqrt(shape) / rate - s).abs() < 1e-10 * s);
        }
    }

    #[test]
    fn infeasible_moments_error() {
        assert!(mom_beta(0.5, 0.5).is_err()); // var == mean(1-mean)
        assert!(mom_beta(0.0, 0.1).is_err());
        assert!(mom_beta(1.2, 0.1).is_err());
        assert!(mom_gamma(-1.0, 1.0).is_err());
        assert!(mom_gamma(1.0, 0.0).is_err());
    }

    #[test]
    fn mvn_with_zero_covariance_returns_the_mean() {
        let streams = Streams::new(1);
        let mut rng = streams.labeled("mvn", 0);
        let mean = [1.5, -2.0, 0.25];
        let cov = [0.0; 9];
        let draws = sample_coefs_mvn(&mean, &cov, 4, &mut rng).unwrap();
        for row in draws.chunks(3) {
            assert_eq!(row, &mean);
        }
    }

    #[test]
    fn mvn_sample_variance_matches_target() {
        let streams = Streams::new(99);
        let mut rng = streams.labeled("mvn", 1);
        let draws = sample_coefs_mvn(&[0.0], &[1.0], 100_000, &mut rng).unwrap();
        let mean: f64 = draws.iter().sum::<f64>() / draws.len() as f64;
        let var: f64 =
            draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / draws.len() as f64;
        assert!(var > 0.98 && var < 1.02, "sample variance {var}");
    }

    #[test]
    fn mvn_handles_singular_psd_and_rejects_indefinite() {
        let streams = Streams::new(5);
        let mut rng = streams.labeled("mvn", 2);
        // Rank-one covariance: both coordinates move together.
        let draws = sample_coefs_mvn(&[0.0, 0.0], &[1.0, 1.0, 1.0, 1.0], 32, &mut rng).unwrap();
        for row in draws.chunks(2) {
            assert!((row[0] - row[1]).abs() < 1e-12);
        }
        let err = sample_coefs_mvn(&[0.0, 0.0], &[1.0, 2.0, 2.0, 1.0], 4, &mut rng).unwrap_err();
        assert_eq!(err, Error::NotPositiveSemiDefinite);
        let err = sample_coefs_mvn(&[0.0, 0.0], &[1.0, 0.5, 0.2, 1.0], 4, &mut rng).unwrap_err();
        assert!(matches!(err, Error::AsymmetricCovariance { .. }));
    }

    #[test]
    fn xbeta_flattens_sample_major() {
        // One strategy, two patients with ages 50 and 51 rescaled to 1 and 2
        // via (age - 49); two samples of a single coefficient: 3 and 4.
        let input = input_rows(1, 2);
        let coefs = CoefMatrix::new(vec!["age".into()], vec![3.0, 4.0], 2).unwrap();
        let lp = xbeta(&input, &coefs).unwrap();
        let expect: Vec<f64> = vec![3.0 * 50.0, 3.0 * 51.0, 4.0 * 50.0, 4.0 * 51.0];
        assert_eq!(lp, expect);
    }

    #[test]
    fn coef_matrix_broadcasts_and_appends_columns() {
        let mut c = CoefMatrix::new(vec!["(Intercept)".into()], vec![2.0, 3.0], 2).unwrap();
        assert_eq!(c.row(0), &[2.0]);
        assert_eq!(c.row(1), &[3.0]);
        c.push_column("new1", &[0.5, 0.7]).unwrap();
        assert_eq!(c.row(1), &[3.0, 0.7]);
        assert!(c.push_column("bad", &[1.0]).is_err());

        let single = CoefMatrix::new(vec!["x".into()], vec![1.5], 1).unwrap();
        assert_eq!(single.row(7), &[1.5]); // broadcasts
    }

    #[test]
    fn survival_params_build_distributions_via_links() {
        let input = input_rows(2, 1);
        // Weibull: shape exp(0.3); scale exp(1.0 + 0.2 * new1).
        let shape = CoefMatrix::new(vec!["(Intercept)".into()], vec![0.3], 1).unwrap();
        let scale =
            CoefMatrix::new(vec!["(Intercept)".into(), "new1".into()], vec![1.0, 0.2], 1).unwrap();
        let params = SurvivalParams::new(Family::Weibull, vec![shape, scale]).unwrap();
        let bound = params.bind(&input).unwrap();
        let d0 = bound.distribution(0, 0).unwrap();
        let d1 = bound.distribution(1, 0).unwrap();
        match (d0, d1) {
            (
                Distribution::Weibull { shape: k0, scale: s0 },
                Distribution::Weibull { shape: k1, scale: s1 },
            ) => {
                assert!((k0 - crate::math::exp(0.3)).abs() < 1e-12);
                assert_eq!(k0, k1);
                assert!((s0 - crate::math::exp(1.0)).abs() < 1e-12);
                assert!((s1 - crate::math::exp(1.2)).abs() < 1e-12);
            }
            other => panic!("unexpected distributions {other:?}"),
        }
    }

    #[test]
    fn joint_mvn_split_preserves_parameter_blocks() {
        let streams = Streams::new(11);
        let mut rng = streams.labeled("coefs", 0);
        let params = SurvivalParams::from_joint_mvn(
            Family::Weibull,
            vec![vec!["(Intercept)".into()], vec!["(Intercept)".into(), "new1".into()]],
            &[0.4, 1.9, -0.3],
            &[0.0; 9],
            3,
            &mut rng,
        )
        .unwrap();
        assert_eq!(params.n_samples(), 3);
        assert_eq!(params.coefs()[0].row(2), &[0.4]);
        assert_eq!(params.coefs()[1].row(1), &[1.9, -0.3]);
    }

    #[test]
    fn mlogit_matches_softmax_hand_value() {
        let input = input_rows(1, 1);
        let coefs = CoefMatrix::new(
            vec!["(Intercept)".into()],
            vec![crate::math::log(3.0)],
            1,
        )
        .unwrap();
        let mp = MlogitParams::new(vec![coefs], 0, 2).unwrap();
        let p = mp.predict(&input, 0, 0).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expmat_reproduces_reference_three_state_matrix() {
        let q = Matrix::from_rows(
            3,
            &[
                -0.3533989, 0.3371267, 0.01627226, //
                0.0, -0.1190753, 0.11907530, //
                0.0, 0.0, 0.0,
            ],
        )
        .unwrap();
        let p = expmat(&q, 0.25).unwrap();
        let expect = [
            0.9154407, 0.07945955, 0.00509979, //
            0.0, 0.97066990, 0.02933010, //
            0.0, 0.0, 1.0,
        ];
        for (a, b) in p.as_slice().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6, "got {a}, expected {b}");
        }
    }

    #[test]
    fn expmat_rejects_malformed_generators() {
        let neg = Matrix::from_rows(2, &[-1.0, 1.0, -0.5, 0.5]).unwrap();
        assert!(matches!(
            expmat(&neg, 1.0),
            Err(Error::InvalidIntensityMatrix { .. })
        ));
        let unbalanced = Matrix::from_rows(2, &[-1.0, 0.9, 0.0, 0.0]).unwrap();
        assert!(matches!(
            expmat(&unbalanced, 1.0),
            Err(Error::InvalidIntensityMatrix { .. })
        ));
        let ok = Matrix::from_rows(2, &[-1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(expmat(&ok, -0.5).is_err());
    }

    #[test]
    fn tpmatrix_ids_nest_intervals_innermost() {
        let input = input_rows(3, 4);
        let ids = tpmatrix_id(&input, 1000, &[]).unwrap();
        assert_eq!(ids.len(), 12_000);
        assert_eq!(
            (ids[0].sample, ids[0].strategy_id, ids[0].patient_id),
            (1, 1, 1)
        );
        assert_eq!(
            (ids[1].sample, ids[1].strategy_id, ids[1].patient_id),
            (1, 1, 2)
        );

        let ids = tpmatrix_id(&input, 2, &[0.0, 2.0]).unwrap();
        assert_eq!(ids.len(), 2 * 12 * 2);
        assert_eq!((ids[0].time_interval, ids[0].time_start), (1, 0.0));
        assert_eq!((ids[1].time_interval, ids[1].time_start), (2, 2.0));
        assert_eq!(ids[2].patient_id, 2);
        // Bad interval grids error.
        assert!(tpmatrix_id(&input, 1, &[1.0]).is_err());
        assert!(tpmatrix_id(&input, 1, &[0.0, 0.0]).is_err());
    }

    fn tiny_tparray() -> TransProbArray {
        let input = input_rows(1, 1);
        let ids = tpmatrix_id(&input, 1, &[]).unwrap();
        TransProbArray::new(
            3,
            ids,
            &[],
            vec![
                0.916, 0.079, 0.005, //
                0.0, 0.97, 0.03, //
                0.0, 0.0, 1.0,
            ],
        )
        .unwrap()
    }

    #[test]
    fn transprob_array_validates_rows() {
        let input = input_rows(1, 1);
        let ids = tpmatrix_id(&input, 1, &[]).unwrap();
        let bad_sum = TransProbArray::new(
            2,
            ids.clone(),
            &[],
            vec![0.7, 0.2, 0.0, 1.0],
        );
        assert!(matches!(bad_sum, Err(Error::RowNotStochastic { row: 0, .. })));
        let bad_entry = TransProbArray::new(
            2,
            ids.clone(),
            &[],
            vec![1.2, -0.2, 0.0, 1.0],
        );
        assert!(matches!(bad_entry, Err(Error::ProbabilityOutOfBounds { .. })));
        let dead_row = TransProbArray::new(
            2,
            ids,
            &[],
            vec![0.5, 0.5, 0.5, 0.5],
        );
        assert!(matches!(dead_row, Err(Error::DeathRowNotAbsorbing { .. })));
    }

    #[test]
    fn apply_rr_rescales_and_restores_stochasticity() {
        let tp = tiny_tparray();
        let out = tp
            .apply_rr(&[(0, 1), (0, 2)], &[0.8, 0.9], &[])
            .unwrap();
        let m = out.matrix(0);
        assert!((m[1] - 0.0632).abs() < 1e-12);
        assert!((m[2] - 0.0045).abs() < 1e-12);
        assert!((m[0] - (1.0 - 0.0632 - 0.0045)).abs() < 1e-12);
        assert!((m[0] + m[1] + m[2] - 1.0).abs() < 1e-12);
        // Row 2 untouched.
        assert_eq!(&m[3..6], &[0.0, 0.97, 0.03]);
    }

    #[test]
    fn apply_rr_rejects_infeasible_rows_and_bad_indexing() {
        let tp = tiny_tparray();
        // Scaling the healthy-row exit probabilities far above 1 drives the
        // complement negative.
        let err = tp
            .apply_rr(&[(0, 1)], &[13.0], &[])
            .unwrap_err();
        assert!(matches!(err, Error::InfeasibleRelativeRisk { row: 0, .. }));
        // Complement may not be one of the adjusted cells.
        let err = tp
            .apply_rr(&[(0, 1)], &[1.0], &[(0, 1)])
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        // rr length must cover every (pair, matrix) combination.
        let err = tp.apply_rr(&[(0, 1)], &[1.0, 1.0], &[]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn intensity_constructor_matches_expmat_per_id() {
        let input = input_rows(2, 2);
        let q = Matrix::from_rows(
            3,
            &[
                -0.293, 0.28, 0.013, //
                0.0, -0.1, 0.1, //
                0.0, 0.0, 0.0,
            ],
        )
        .unwrap();
        let tp = transprobs_from_intensities(&input, 2, 0.25, |_, _| q.clone()).unwrap();
        assert_eq!(tp.n_matrices(), 8);
        let expect = expmat(&q, 0.25).unwrap();
        for m in 0..tp.n_matrices() {
            assert_eq!(tp.matrix(m), expect.as_slice());
        }
    }
}
