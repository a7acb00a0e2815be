//! Command orchestration: load and validate a config, run the requested
//! model family, and write the result files.
//!
//! Work splits into a validation phase (config, input files, parameter
//! construction; failures exit 1) and an execution phase (simulation and
//! output writing; failures exit 2). All randomness is drawn from streams
//! derived from the seed, per-transition sampling from labeled streams and
//! per-trajectory simulation from (sample, row) streams, so results do not
//! depend on the thread count.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use qalysim_core::indiv::DiseaseRow;
use qalysim_core::statevals::MeanValueParams;
use qalysim_core::{
    cea, cea_pw, expand, icer_summary, integrate_statevals, sim_stateprobs_cohort,
    sim_stateprobs_indiv, sim_survival, sim_values_indiv, stateprobs_from_survival, stateval_draw,
    summarize_ce, CeOutput, CohortSettings, DiseaseProgress, ExpandDim, Family, InputData,
    IntegrationMethod, ModelContext, StateProbs, Streams, SurvivalCurves, SurvivalParams,
    TransProbArray, TransitionModel, ValueTotals,
};

use crate::config::{
    load_config, parse_clock, parse_method, LoadedConfig, ModelType, SurvivalSpec,
};
use crate::tables::{
    load_ce_costs, load_ce_qalys, load_coefs, load_patients, load_statevals, load_states,
    load_strategies, load_tmat, load_transprobs, load_vcov, write_ce, write_cea_results,
    write_costs, write_disprog, write_qalys, write_stateprobs, write_survival, CsvTable, OutDir,
};
use crate::{AppError, CommonArgs, Phase};

/// Reads and remembers every input file, for the manifest hash.
struct Inputs {
    base: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Inputs {
    fn new(base: PathBuf) -> Self {
        Inputs {
            base,
            files: Vec::new(),
        }
    }

    /// Reads and records a file, returning its bytes.
    fn read_bytes(&mut self, rel: &str) -> Result<&[u8]> {
        let path = self.base.join(rel);
        let bytes = std::fs::read(&path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        self.files.push((rel.to_string(), bytes));
        Ok(&self.files.last().expect("just pushed").1)
    }

    fn load(&mut self, rel: &str) -> Result<CsvTable> {
        let name = rel.to_string();
        let bytes = self.read_bytes(rel)?;
        CsvTable::parse(&name, bytes)
    }

    /// Hash over the config followed by every input file, length-prefixed so
    /// file boundaries are unambiguous. It changes iff any input byte does.
    fn hash(&self, config_bytes: &[u8]) -> String {
        let mut h = Sha256::new();
        let mut item = |name: &[u8], bytes: &[u8]| {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        item(b"<config>", config_bytes);
        for (name, bytes) in &self.files {
            item(name.as_bytes(), bytes);
        }
        format!("{:x}", h.finalize())
    }
}

/// Everything a validated simulate run needs.
struct Prepared {
    model: ModelType,
    n_samples: usize,
    seed: u64,
    dr_qalys: Vec<f64>,
    dr_costs: Vec<f64>,
    by_grp: bool,
    ctx: ModelContext,
    input: InputData,
    utility: MeanValueParams,
    costs: Vec<(String, MeanValueParams)>,
    plan: ModelPlan,
    config_hash: String,
}

enum ModelPlan {
    Cohort {
        tp: TransProbArray,
        x0: Vec<f64>,
        settings: CohortSettings,
    },
    Indiv {
        tm: TransitionModel,
        t_grid: Vec<f64>,
    },
    Psm {
        params: Vec<SurvivalParams>,
        t_grid: Vec<f64>,
        method: IntegrationMethod,
    },
}

/// Per-model extra output alongside the state probabilities.
enum Extra {
    None,
    Disprog(DiseaseProgress),
    Survival(SurvivalCurves),
}

pub fn run_simulate(args: &CommonArgs) -> Result<(), AppError> {
    let lc = load_config(&args.config).validation()?;
    let prep = prepare(args, &lc).validation()?;
    execute(args, prep).runtime()
}

fn validate_rates(rates: &[f64], what: &str) -> Result<()> {
    if rates.is_empty() {
        bail!("config: `{what}` needs at least one rate");
    }
    if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
        bail!("config: `{what}` rates must be finite and nonnegative");
    }
    Ok(())
}

/// Builds one survival model from its spec, drawing coefficients from a
/// labeled stream when a covariance matrix is given.
fn build_survival(
    spec: &SurvivalSpec,
    what: &str,
    inputs: &mut Inputs,
    streams: &Streams,
    label: &str,
    index: u64,
    n_samples: usize,
) -> Result<SurvivalParams> {
    let family = Family::from_name(&spec.family).with_context(|| {
        format!(
            "{what}: unknown survival family `{}` (expected exponential, weibull, gompertz, \
             lognormal, loglogistic, or gamma)",
            spec.family
        )
    })?;
    match (&spec.params, &spec.coefs) {
        (Some(p), None) => {
            if spec.vcov.is_some() {
                bail!("{what}: `vcov` needs `coefs`, not fixed `params`");
            }
            Ok(SurvivalParams::from_natural(family, p)
                .with_context(|| format!("{what}: invalid natural parameters"))?)
        }
        (None, Some(path)) => {
            let spec_c = load_coefs(&inputs.load(path)?, family)?;
            match &spec.vcov {
                Some(vpath) => {
                    let cov = load_vcov(&inputs.load(vpath)?, &spec_c.labels)?;
                    let mut rng = streams.labeled(label, index);
                    Ok(SurvivalParams::from_joint_mvn(
                        family,
                        spec_c.param_terms,
                        &spec_c.means,
                        &cov,
                        n_samples,
                        &mut rng,
                    )
                    .with_context(|| format!("{what}: cannot sample coefficients"))?)
                }
                None => {
                    let coefs = spec_c
                        .param_terms
                        .into_iter()
                        .scan(0usize, |offset, terms| {
                            let k = terms.len();
                            let vals = spec_c.means[*offset..*offset + k].to_vec();
                            *offset += k;
                            Some(qalysim_core::params::CoefMatrix::fixed(terms, vals))
                        })
                        .collect::<qalysim_core::Result<Vec<_>>>()?;
                    Ok(SurvivalParams::new(family, coefs)?)
                }
            }
        }
        _ => bail!("{what}: give exactly one of `params` or `coefs`"),
    }
}

fn prepare(args: &CommonArgs, lc: &LoadedConfig) -> Result<Prepared> {
    let cfg = &lc.cfg;
    let model = ModelType::parse(
        cfg.model_type
            .as_deref()
            .context("config: `model_type` is required")?,
    )?;
    for w in lc.drift_warnings(Some(model)) {
        eprintln!("warning: {w}");
    }
    let n_samples = cfg.n_samples.context("config: `n_samples` is required")?;
    if n_samples == 0 {
        bail!("config: `n_samples` must be at least 1");
    }
    let seed = args
        .seed
        .or(cfg.seed)
        .context("a seed is required: set `seed` in the config or pass --seed")?;
    let disc = cfg
        .discounting
        .as_ref()
        .context("config: a [discounting] section is required")?;
    validate_rates(&disc.qalys, "discounting.qalys")?;
    validate_rates(&disc.costs, "discounting.costs")?;
    let values = cfg
        .values
        .as_ref()
        .context("config: a [values] section is required for simulate")?;
    let ctxp = cfg
        .context
        .as_ref()
        .context("config: a [context] section is required for simulate")?;

    let mut inputs = Inputs::new(lc.dir.clone());
    let strategies = load_strategies(&inputs.load(&ctxp.strategies)?)?;
    let patients = load_patients(&inputs.load(&ctxp.patients)?)?;
    let states = load_states(&inputs.load(&ctxp.states)?)?;
    let tmat = match &ctxp.tmat {
        Some(path) => {
            let n = states.n() + 1;
            let bytes = inputs.read_bytes(path)?.to_vec();
            Some(load_tmat(path, &bytes, n)?)
        }
        None => None,
    };
    if model == ModelType::IndivCtstm && tmat.is_none() {
        bail!("config: model_type indiv-ctstm needs `context.tmat`");
    }
    let ctx = ModelContext::new(strategies, patients, states, tmat)?;
    let input = expand(&ctx, &[ExpandDim::Strategies, ExpandDim::Patients])?;
    let streams = Streams::new(seed);

    let utility_tbl = load_statevals(&inputs.load(&values.utility)?)?;
    let mut rng = streams.labeled("utility", 0);
    let utility = stateval_draw(&utility_tbl, &ctx, n_samples, values.utility_time_reset, &mut rng)
        .with_context(|| format!("utility table {}", values.utility))?;
    let mut costs = Vec::with_capacity(values.costs.len());
    for (i, cs) in values.costs.iter().enumerate() {
        if cs.name == "total" {
            bail!("config: the cost category name `total` is reserved for the summed column");
        }
        if values.costs[..i].iter().any(|c| c.name == cs.name) {
            bail!("config: duplicate cost category name `{}`", cs.name);
        }
        let tbl = load_statevals(&inputs.load(&cs.table)?)?;
        let mut rng = streams.labeled("cost", i as u64);
        let params = stateval_draw(&tbl, &ctx, n_samples, cs.time_reset, &mut rng)
            .with_context(|| format!("cost table {}", cs.table))?;
        costs.push((cs.name.clone(), params));
    }

    let plan = match model {
        ModelType::CohortDtstm => {
            let sec = cfg
                .cohort
                .as_ref()
                .context("config: a [cohort] section is required for model_type cohort-dtstm")?;
            let method = parse_method(&sec.method)?;
            let settings = CohortSettings {
                cycle_length: sec.cycle_length,
                n_cycles: sec.n_cycles,
                method,
            };
            let tp = load_transprobs(&inputs.load(&sec.transitions)?, &ctx, &input, n_samples)?;
            let h = ctx.n_states() + 1;
            let x0 = match &sec.x0 {
                Some(v) => v.clone(),
                None => {
                    let mut v = vec![0.0; h];
                    v[0] = 1.0;
                    v
                }
            };
            ModelPlan::Cohort { tp, x0, settings }
        }
        ModelType::IndivCtstm => {
            let sec = cfg
                .indiv
                .as_ref()
                .context("config: an [indiv] section is required for model_type indiv-ctstm")?;
            let clock = parse_clock(&sec.clock)?;
            let t_grid = sec.t_grid.points("indiv.t_grid")?;
            let n_trans = ctx.tmat().expect("checked above").n_transitions();
            if sec.transitions.len() != n_trans {
                bail!(
                    "config: the transition matrix defines {n_trans} transitions but \
                     [[indiv.transitions]] lists {}",
                    sec.transitions.len()
                );
            }
            let mut params = Vec::with_capacity(n_trans);
            for (i, spec) in sec.transitions.iter().enumerate() {
                params.push(build_survival(
                    spec,
                    &format!("indiv.transitions[{}]", i + 1),
                    &mut inputs,
                    &streams,
                    "transition",
                    i as u64,
                    n_samples,
                )?);
            }
            let start_age = ctx
                .patients()
                .columns()
                .iter()
                .find(|c| c.name == sec.age_column)
                .map(|c| c.values.clone());
            if sec.max_age.is_some() && start_age.is_none() {
                bail!(
                    "config: indiv.max_age needs a `{}` column in the patient table",
                    sec.age_column
                );
            }
            let tm = TransitionModel::new(&ctx, params, clock, start_age, sec.max_age, sec.max_t)?;
            ModelPlan::Indiv { tm, t_grid }
        }
        ModelType::Psm => {
            let sec = cfg
                .psm
                .as_ref()
                .context("config: a [psm] section is required for model_type psm")?;
            let method = parse_method(&sec.method)?;
            let t_grid = sec.t_grid.points("psm.t_grid")?;
            let n_curves = ctx.n_states();
            if sec.curves.len() != n_curves {
                bail!(
                    "config: {} non-death states need {n_curves} curves but [[psm.curves]] \
                     lists {}",
                    ctx.n_states(),
                    sec.curves.len()
                );
            }
            let mut params = Vec::with_capacity(n_curves);
            for (i, spec) in sec.curves.iter().enumerate() {
                params.push(build_survival(
                    spec,
                    &format!("psm.curves[{}]", i + 1),
                    &mut inputs,
                    &streams,
                    "curve",
                    i as u64,
                    n_samples,
                )?);
            }
            ModelPlan::Psm {
                params,
                t_grid,
                method,
            }
        }
    };

    Ok(Prepared {
        model,
        n_samples,
        seed,
        dr_qalys: disc.qalys.clone(),
        dr_costs: disc.costs.clone(),
        by_grp: cfg.cea.as_ref().is_some_and(|c| c.by_grp),
        ctx,
        input,
        utility,
        costs,
        plan,
        config_hash: inputs.hash(&lc.bytes),
    })
}

fn threads(args: &CommonArgs) -> usize {
    args.threads.unwrap_or_else(|| {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    })
}

fn execute(args: &CommonArgs, p: Prepared) -> Result<()> {
    let lys_vals = MeanValueParams::constant(p.ctx.n_states(), 1.0);
    let (sp, qalys, lys, costs, extra, crossings) = match &p.plan {
        ModelPlan::Cohort { tp, x0, settings } => {
            let sp = sim_stateprobs_cohort(tp, &p.ctx, x0, settings)?;
            let qalys = integrate_statevals(&sp, &p.utility, &p.ctx, &p.dr_qalys, settings.method)?;
            let lys = integrate_statevals(&sp, &lys_vals, &p.ctx, &p.dr_qalys, settings.method)?;
            let costs = integrate_all(&sp, &p.costs, &p.ctx, &p.dr_costs, settings.method)?;
            (sp, qalys, lys, costs, Extra::None, None)
        }
        ModelPlan::Indiv { tm, t_grid } => {
            let streams = Streams::new(p.seed);
            let prepared = tm.prepare(&p.ctx, &p.input)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads(args))
                .build()
                .context("cannot build the worker thread pool")?;
            let n_rows = p.input.n_rows();
            let chunks: Vec<qalysim_core::Result<Vec<DiseaseRow>>> = pool.install(|| {
                (0..p.n_samples)
                    .into_par_iter()
                    .map(|s| {
                        let mut rows = Vec::with_capacity(n_rows * 2);
                        for row in 0..n_rows {
                            prepared.simulate_one(s, row, &streams, &mut rows)?;
                        }
                        Ok(rows)
                    })
                    .collect()
            });
            let mut rows = Vec::new();
            for chunk in chunks {
                rows.append(&mut chunk?);
            }
            let dp = DiseaseProgress::new(rows, p.ctx.death_state_id())?;
            let sp = sim_stateprobs_indiv(&dp, &p.ctx, t_grid)?;
            let qalys = sim_values_indiv(&dp, &p.utility, &p.ctx, &p.dr_qalys)?;
            let lys = sim_values_indiv(&dp, &lys_vals, &p.ctx, &p.dr_qalys)?;
            let costs = p
                .costs
                .iter()
                .map(|(name, vals)| {
                    Ok((
                        name.clone(),
                        sim_values_indiv(&dp, vals, &p.ctx, &p.dr_costs)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            (sp, qalys, lys, costs, Extra::Disprog(dp), None)
        }
        ModelPlan::Psm {
            params,
            t_grid,
            method,
        } => {
            let sc = sim_survival(params, &p.input, t_grid, p.n_samples)?;
            let (sp, crossings) = stateprobs_from_survival(&sc)?;
            let qalys = integrate_statevals(&sp, &p.utility, &p.ctx, &p.dr_qalys, *method)?;
            let lys = integrate_statevals(&sp, &lys_vals, &p.ctx, &p.dr_qalys, *method)?;
            let costs = integrate_all(&sp, &p.costs, &p.ctx, &p.dr_costs, *method)?;
            (sp, qalys, lys, costs, Extra::Survival(sc), Some(crossings))
        }
    };

    let out = OutDir::create(&args.out_dir)?;
    write_stateprobs(&out, &sp)?;
    write_qalys(&out, &qalys, &lys)?;
    write_costs(&out, &costs)?;
    match &extra {
        Extra::Disprog(dp) => write_disprog(&out, dp)?,
        Extra::Survival(sc) => write_survival(&out, sc)?,
        Extra::None => {}
    }

    let cost_refs: Vec<(&str, &ValueTotals)> =
        costs.iter().map(|(n, v)| (n.as_str(), v)).collect();
    let ce = summarize_ce(&qalys, Some(&lys), &cost_refs, &p.ctx, p.by_grp)?;
    write_ce(&out, &ce)?;

    write_manifest(&out, &p, crossings)
}

fn integrate_all(
    sp: &StateProbs,
    costs: &[(String, MeanValueParams)],
    ctx: &ModelContext,
    rates: &[f64],
    method: IntegrationMethod,
) -> Result<Vec<(String, ValueTotals)>> {
    costs
        .iter()
        .map(|(name, vals)| {
            Ok((
                name.clone(),
                integrate_statevals(sp, vals, ctx, rates, method)?,
            ))
        })
        .collect()
}

#[derive(serde::Serialize)]
struct Manifest<'a> {
    config_hash: &'a str,
    seed: u64,
    model_type: &'a str,
    versions: Versions,
    #[serde(skip_serializing_if = "Option::is_none")]
    survival_crossings: Option<u64>,
}

#[derive(serde::Serialize)]
struct Versions {
    qalysim: &'static str,
    #[serde(rename = "qalysim-core")]
    core: &'static str,
}

fn write_manifest(out: &OutDir, p: &Prepared, crossings: Option<u64>) -> Result<()> {
    let manifest = Manifest {
        config_hash: &p.config_hash,
        seed: p.seed,
        model_type: p.model.name(),
        versions: Versions {
            qalysim: env!("CARGO_PKG_VERSION"),
            core: qalysim_core::VERSION,
        },
        survival_crossings: crossings,
    };
    let path = out.path("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).context("serialize manifest")?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn run_cea(args: &CommonArgs) -> Result<(), AppError> {
    let lc = load_config(&args.config).validation()?;
    for w in lc.drift_warnings(None) {
        eprintln!("warning: {w}");
    }
    let (ce, k_grid, comparator, dr_qalys, dr_costs, k_icer) = prepare_cea(args, &lc).validation()?;
    let res = cea(&ce, &k_grid, dr_qalys, dr_costs).validation()?;
    let pw = cea_pw(&ce, comparator, &k_grid, dr_qalys, dr_costs).validation()?;
    let table = icer_summary(&pw, k_icer);
    let out = OutDir::create(&args.out_dir).runtime()?;
    write_cea_results(&out, &res, &pw, &table).runtime()
}

type CeaPlan = (CeOutput, Vec<f64>, u32, f64, f64, f64);

fn prepare_cea(args: &CommonArgs, lc: &LoadedConfig) -> Result<CeaPlan> {
    let sec = lc
        .cfg
        .cea
        .as_ref()
        .context("config: a [cea] section is required for the cea command")?;
    let k_grid = sec
        .k_grid
        .as_ref()
        .context("config: `cea.k_grid` is required")?
        .points("cea.k_grid")?;
    if k_grid[0] < 0.0 {
        bail!("config: `cea.k_grid` values must be nonnegative");
    }
    let comparator = sec
        .comparator
        .context("config: `cea.comparator` is required")?;
    let dr_qalys = sec
        .dr_qalys
        .context("config: `cea.dr_qalys` is required")?;
    let dr_costs = sec
        .dr_costs
        .context("config: `cea.dr_costs` is required")?;
    let (q_path, c_path) = match (&sec.qalys, &sec.costs) {
        (Some(q), Some(c)) => (lc.resolve(q), lc.resolve(c)),
        (None, None) => (
            args.out_dir.join("ce_qalys.csv"),
            args.out_dir.join("ce_costs.csv"),
        ),
        _ => bail!(
            "config: set both `cea.qalys` and `cea.costs`, or neither to read a prior \
             simulate run from the output directory"
        ),
    };
    let read = |path: &Path| -> Result<Vec<u8>> {
        std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))
    };
    let q_bytes = read(&q_path)?;
    let qalys = load_ce_qalys(&CsvTable::parse(&q_path.display().to_string(), &q_bytes)?)?;
    let c_bytes = read(&c_path)?;
    let costs = load_ce_costs(&CsvTable::parse(&c_path.display().to_string(), &c_bytes)?)?;
    let ce = CeOutput::new(costs, qalys)?;
    let k_icer = sec.k_icer.unwrap_or(k_grid[(k_grid.len() - 1) / 2]);
    Ok((ce, k_grid, comparator, dr_qalys, dr_costs, k_icer))
}
