use std::path::PathBuf;

use serde::Serialize;
use serde_json::{json, Value};

use onestate::design::{
    edp_sweep_periodic, profile_cm, sigma_feasibility_curve, tau_opt_constant, window_edp,
    DesignSpec, WindowEdp,
};
use onestate::montecarlo::{
    closed_loop_dep_table, merge_dep_cells, par_trials, validate_dep, EnsembleReport,
};
use onestate::plant::{
    dense_outputs, simulate_one_state, uncompensated_trace, write_trace_csv, LtiPlant, NoiseSpec,
    SampledSystem,
};

use crate::config::{RunMode, ScenarioConfig, SCHEMA_VERSION};
use crate::output::{num, opt, vec, Artifacts};
use crate::CliError;

/// Smallest trial count accepted by `validate-dep`.
pub const MIN_VALIDATION_TRIALS: usize = 10_000;
/// Points of the zoomed EDP table.
pub const ZOOM_POINTS: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Trace,
    MonteCarlo,
    Design,
    Sweep,
    ValidateDep,
    /// Whatever `run.mode` says.
    FromConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub files: Vec<String>,
    /// `false` when a design found no admissible period; artifacts are still
    /// written.
    pub feasible: bool,
}

/// Applies the command-line overrides so the echoed config reproduces the
/// run on its own.
fn effective_config(cfg: &ScenarioConfig, opts: &RunOptions) -> ScenarioConfig {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.noise.seed = seed;
    }
    if let Some(trials) = opts.trials {
        cfg.run.trials = trials;
    }
    cfg
}

pub fn run_command(
    command: Command,
    cfg: &ScenarioConfig,
    opts: &RunOptions,
) -> Result<Report, CliError> {
    let cfg = effective_config(cfg, opts);
    let mode = match command {
        Command::Trace => RunMode::Trace,
        Command::MonteCarlo => RunMode::MonteCarlo,
        Command::Design => RunMode::Design,
        Command::Sweep => RunMode::Sweep,
        Command::ValidateDep => RunMode::ValidateDep,
        Command::FromConfig => cfg.run.mode,
    };
    let mut out = Artifacts::new(&opts.out)?;
    let (name, result, feasible) = match mode {
        RunMode::Trace => ("trace", run_trace(&cfg, &mut out)?, true),
        RunMode::MonteCarlo => ("montecarlo", run_montecarlo(&cfg, &mut out)?, true),
        RunMode::Design => {
            let (v, feasible) = run_design(&cfg, &mut out)?;
            ("design", v, feasible)
        }
        RunMode::Sweep => ("sweep", run_sweep(&cfg, &mut out)?, true),
        RunMode::ValidateDep => ("validate-dep", run_validate_dep(&cfg, &mut out)?, true),
    };
    let mut files = out.written().to_vec();
    files.push("summary.json".into());
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": name,
        "seed": cfg.noise.seed,
        "config": cfg,
        "result": result,
        "files": files,
    });
    out.json("summary.json", &summary)?;
    Ok(Report {
        files: out.written().to_vec(),
        feasible,
    })
}

/// Plant, resolved period, profile and discretization shared by the
/// time-domain commands.
struct Scenario {
    tau: f64,
    tau_designed: Option<f64>,
    profile: onestate::plant::DisturbanceProfile,
    system: SampledSystem,
}

fn scenario(cfg: &ScenarioConfig) -> Result<Scenario, CliError> {
    let plant = cfg.plant()?;
    let resolved = cfg.resolve_tau(&plant)?;
    let profile = cfg.profile(resolved.tau)?;
    let system = SampledSystem::new(&plant, resolved.tau, profile.total_steps())?;
    Ok(Scenario {
        tau: resolved.tau,
        tau_designed: resolved.designed,
        profile,
        system,
    })
}

fn scenario_json(s: &Scenario) -> Value {
    json!({
        "tau": s.tau,
        "tau_designed": s.tau_designed,
        "steps": s.profile.total_steps(),
        "k_fault": s.profile.k_fault(),
    })
}

fn noise(cfg: &ScenarioConfig, seed: u64) -> Result<NoiseSpec, CliError> {
    NoiseSpec::new(cfg.sigma2()?, seed).map_err(|e| CliError::Config(format!("noise: {e}")))
}

pub const COMPARE_CSV_HEADER: &str =
    "k,t,y_nominal,y_compensated,y_uncompensated,r_compensated,r_uncompensated";
pub const DENSE_CSV_HEADER: &str = "t,y_nominal,y_compensated,y_uncompensated";

fn run_trace(cfg: &ScenarioConfig, out: &mut Artifacts) -> Result<Value, CliError> {
    let s = scenario(cfg)?;
    let sys = &s.system;
    let trace = simulate_one_state(sys, &s.profile, &noise(cfg, cfg.noise.seed)?)?;
    out.with_writer("trace.csv", |w| write_trace_csv(&trace, w))?;

    // The uncompensated plant is read through the same noise samples.
    let uncomp = uncompensated_trace(sys, &s.profile)?;
    let c = sys.c();
    let rows = trace.records.iter().zip(&uncomp).map(|(r, xu)| {
        let yu = c * xu;
        let (rc, ru) = match &r.reading {
            Some(reading) => (vec(reading), vec(&(&yu + (reading - &r.y)))),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{}",
            r.k,
            num(r.t),
            vec(&r.y_nominal(sys)),
            vec(&r.y),
            vec(&yu),
            rc,
            ru
        )
    });
    out.csv("trace_compare.csv", COMPARE_CSV_HEADER, rows)?;

    let dense = dense_outputs(sys, &s.profile, &trace, cfg.run.dense_refine)?;
    out.csv(
        "trace_dense.csv",
        DENSE_CSV_HEADER,
        dense.iter().map(|d| {
            format!(
                "{},{},{},{}",
                num(d.t),
                vec(&d.y_nominal),
                vec(&d.y_compensated),
                vec(&d.y_uncompensated)
            )
        }),
    )?;

    let summary = trace.summary(sys);
    let kf = s.profile.k_fault();
    let uncomp_peak_post = kf.map(|kf| {
        trace.records[kf + 1..]
            .iter()
            .map(|r| (c * (&uncomp[r.k] - &r.x_nominal)).norm())
            .fold(0.0, f64::max)
    });
    let mut v = scenario_json(&s);
    v["summary"] = serde_json::to_value(&summary)?;
    v["uncompensated_peak_deviation_post"] = json!(uncomp_peak_post);
    Ok(v)
}

pub const MONTECARLO_CSV_HEADER: &str =
    "trial,seed,error_rate,error_rate_pre,error_rate_post,peak_deviation_post,e_decay_time,first_error";
pub const DEP_TABLE_CSV_HEADER: &str =
    "zeta_cond,z_true,events,errors,expected,std,band_lo,band_hi,inside";

#[derive(Serialize)]
struct EnsembleView<'a> {
    trials: usize,
    base_seed: u64,
    error_rate: &'a Option<onestate::montecarlo::MeanStd>,
    error_rate_pre: &'a Option<onestate::montecarlo::MeanStd>,
    error_rate_post: &'a Option<onestate::montecarlo::MeanStd>,
    peak_deviation_post: &'a Option<onestate::montecarlo::MeanStd>,
    clean_pre_failure: Option<f64>,
}

fn run_montecarlo(cfg: &ScenarioConfig, out: &mut Artifacts) -> Result<Value, CliError> {
    let s = scenario(cfg)?;
    let trials = cfg.run.trials;
    if trials == 0 {
        return Err(CliError::Config("run.trials: must be >= 1".into()));
    }
    let sigma2 = cfg.sigma2()?;
    let scalar = s.system.plant().output_dim() == 1;
    let base = cfg.noise.seed;
    let per_trial = par_trials(trials, base, |seed| {
        let trace = simulate_one_state(&s.system, &s.profile, &NoiseSpec::new(sigma2, seed)?)?;
        let cells = if scalar {
            closed_loop_dep_table(&s.system, std::slice::from_ref(&trace), sigma2.sqrt())?
        } else {
            Vec::new()
        };
        Ok((trace.summary(&s.system), cells))
    })?;
    let (summaries, cells): (Vec<_>, Vec<_>) = per_trial.into_iter().unzip();
    let table = merge_dep_cells(&cells);
    let report = EnsembleReport::from_summaries(summaries, &s.profile, base);

    out.csv(
        "montecarlo.csv",
        MONTECARLO_CSV_HEADER,
        report.summaries.iter().enumerate().map(|(i, r)| {
            format!(
                "{},{},{},{},{},{},{},{}",
                i,
                onestate::montecarlo::trial_seed(base, i),
                num(r.error_rate),
                opt(r.error_rate_pre),
                opt(r.error_rate_post),
                opt(r.peak_deviation_post),
                opt(r.e_decay_time),
                r.first_error.map(|k| k.to_string()).unwrap_or_default()
            )
        }),
    )?;
    if scalar {
        out.csv(
            "dep_closed_loop.csv",
            DEP_TABLE_CSV_HEADER,
            table.iter().map(|c| {
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    num(c.zeta_cond),
                    num(c.z_true),
                    c.events,
                    c.errors,
                    num(c.expected),
                    num(c.std),
                    num((c.expected - 3.0 * c.std).max(0.0)),
                    num(c.expected + 3.0 * c.std),
                    c.inside
                )
            }),
        )?;
    }

    let mut v = scenario_json(&s);
    v["ensemble"] = serde_json::to_value(EnsembleView {
        trials: report.trials,
        base_seed: report.base_seed,
        error_rate: &report.error_rate,
        error_rate_pre: &report.error_rate_pre,
        error_rate_post: &report.error_rate_post,
        peak_deviation_post: &report.peak_deviation_post,
        clean_pre_failure: report.clean_pre_failure,
    })?;
    v["dep_table"] = serde_json::to_value(&table)?;
    Ok(v)
}

pub const CM_CSV_HEADER: &str = "tau,cm";
pub const EDP_CSV_HEADER: &str =
    "tau,cm,peak,steps,edp_ceil,edp_floor,edp_real,ln_edp_ceil,feasible";
pub const SIGMA_CSV_HEADER: &str = "sigma2,tau_opt,tau_opt_real,feasible";
pub const PERIODIC_CSV_HEADER: &str = "tau,steps,edp,ln_edp,suitable";

fn edp_row(tau: f64, cm: f64, peak: f64, e: &WindowEdp, feasible: bool) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        num(tau),
        num(cm),
        num(peak),
        e.steps_ceil,
        num(e.ceil.probability),
        num(e.floor.probability),
        num(e.real.probability),
        num(e.ceil.ln_probability),
        feasible
    )
}

fn run_design(cfg: &ScenarioConfig, out: &mut Artifacts) -> Result<(Value, bool), CliError> {
    let plant = cfg.plant()?;
    if plant.input().constant_level().is_none() {
        if plant.input().is_periodic() {
            return Ok((run_sweep(cfg, out)?, true));
        }
        return Err(CliError::Config(
            "input: design needs a constant or periodic input".into(),
        ));
    }
    let spec = cfg.design_spec()?;
    let profile = profile_cm(&plant, &spec.tau_grid)?;
    out.csv(
        "sweep_cm.csv",
        CM_CSV_HEADER,
        profile
            .taus
            .iter()
            .zip(&profile.cm)
            .map(|(t, c)| format!("{},{}", num(*t), num(*c))),
    )?;

    let r = tau_opt_constant(&spec, &plant)?;
    out.csv(
        "sweep_edp.csv",
        EDP_CSV_HEADER,
        r.sweep
            .iter()
            .map(|row| edp_row(row.tau, row.cm, row.peak, &row.edp, row.feasible)),
    )?;

    let zoom = zoom_rows(&spec, &plant, r.tau_opt.unwrap_or(r.tau0), r.tau0, r.cm_at_tau0, cfg.design.zoom)?;
    out.csv("sweep_edp_zoom.csv", EDP_CSV_HEADER, zoom)?;

    let curve = sigma_feasibility_curve(&spec, &plant, &cfg.sigma2_grid()?)?;
    out.csv(
        "sweep_sigma.csv",
        SIGMA_CSV_HEADER,
        curve.rows.iter().map(|row| {
            format!(
                "{},{},{},{}",
                num(row.sigma2),
                opt(row.tau_opt),
                opt(row.tau_opt_real),
                row.tau_opt.is_some()
            )
        }),
    )?;

    let v = json!({
        "tau_opt": r.tau_opt,
        "tau_opt_real": r.tau_opt_real,
        "tau0": r.tau0,
        "cm_at_tau0": r.cm_at_tau0,
        "peak": r.peak,
        "edp_at_opt": r.edp_at_opt,
        "feasible": r.is_feasible(),
        "sigma2_boundary": curve.boundary,
        "sigma2_boundary_real": curve.boundary_real,
    });
    Ok((v, r.is_feasible()))
}

fn zoom_rows(
    spec: &DesignSpec,
    plant: &LtiPlant,
    center: f64,
    tau0: f64,
    cm_at_tau0: f64,
    half_width: f64,
) -> Result<Vec<String>, CliError> {
    let lo = (center * (1.0 - half_width)).max(f64::MIN_POSITIVE);
    let hi = center * (1.0 + half_width);
    (0..ZOOM_POINTS)
        .map(|i| {
            let tau = lo + (hi - lo) * i as f64 / (ZOOM_POINTS - 1) as f64;
            let (cm, e) = window_edp(plant, tau, spec)?;
            let within = tau <= tau0;
            let peak = if within { cm.abs() } else { cm_at_tau0.abs() };
            let feasible = within && e.ceil.probability > 1.0 - spec.epsilon;
            Ok(edp_row(tau, cm, peak, &e, feasible))
        })
        .collect()
}

fn run_sweep(cfg: &ScenarioConfig, out: &mut Artifacts) -> Result<Value, CliError> {
    let plant = cfg.plant()?;
    if !plant.input().is_periodic() {
        return Err(CliError::Config("input: sweep needs a periodic input".into()));
    }
    let spec = cfg.periodic_spec()?;
    let sweep = edp_sweep_periodic(&spec, &plant, cfg.design.threshold)?;
    out.csv(
        "sweep_periodic.csv",
        PERIODIC_CSV_HEADER,
        sweep.rows.iter().map(|r| {
            format!(
                "{},{},{},{},{}",
                num(r.tau),
                r.steps,
                num(r.edp.probability),
                num(r.edp.ln_probability),
                r.suitable
            )
        }),
    )?;
    Ok(json!({
        "argmax": sweep.argmax,
        "max_edp": sweep.max_edp,
        "threshold": sweep.threshold,
        "suitable": sweep.suitable,
    }))
}

pub const DEP_VALIDATION_CSV_HEADER: &str =
    "k,zeta_cond,z_true,trials,errors,empirical,analytic,band_lo,band_hi,inside";

fn run_validate_dep(cfg: &ScenarioConfig, out: &mut Artifacts) -> Result<Value, CliError> {
    let trials = cfg.run.trials;
    if trials < MIN_VALIDATION_TRIALS {
        return Err(CliError::Config(format!(
            "run.trials: validate-dep needs at least {MIN_VALIDATION_TRIALS} trials, got {trials}"
        )));
    }
    let s = scenario(cfg)?;
    if s.system.plant().output_dim() != 1 {
        return Err(CliError::Config(
            "plant: validate-dep needs a scalar output".into(),
        ));
    }
    let steps = cfg.run.validate_steps.unwrap_or(s.profile.total_steps());
    if steps == 0 || steps > s.profile.total_steps() {
        return Err(CliError::Config(format!(
            "run.validate_steps: must lie in 1..={}",
            s.profile.total_steps()
        )));
    }
    let sigma = cfg.sigma2()?.sqrt();
    let rows = validate_dep(
        &s.system,
        s.profile.levels(),
        sigma,
        steps,
        trials,
        cfg.noise.seed,
    )?;
    out.csv(
        "dep_validation.csv",
        DEP_VALIDATION_CSV_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{}",
                r.k,
                num(r.zeta_cond),
                num(r.z_true),
                r.trials,
                r.errors,
                num(r.empirical),
                num(r.analytic),
                num((r.analytic - r.band).max(0.0)),
                num((r.analytic + r.band).min(1.0)),
                r.inside
            )
        }),
    )?;
    let flagged: Vec<Value> = rows
        .iter()
        .filter(|r| !r.inside)
        .map(|r| json!({"k": r.k, "zeta_cond": r.zeta_cond, "z_true": r.z_true}))
        .collect();
    let mut v = scenario_json(&s);
    v["checks"] = json!(rows.len());
    v["outside_band"] = json!(flagged.len());
    v["flagged"] = Value::Array(flagged);
    Ok(v)
}
