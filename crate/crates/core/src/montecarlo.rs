//! Seeded Monte Carlo ensembles and the empirical check of the DEP formula.
//!
//! Trial `i` draws its noise from seed `base + i` (wrapping), so every trial
//! is reproducible on its own and results do not depend on how the worker
//! pool schedules them.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::analysis::{dep, DepQuery};
use crate::detector::{decide, DetectorState};
use crate::plant::{
    simulate_one_state, ClosedLoopTrace, DisturbanceProfile, Levels, NoiseSpec, NoiseStream,
    SampledSystem, TraceSummary,
};
use crate::{Error, Result};

/// Seed of trial `i`.
pub fn trial_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

/// Runs `f(seed)` for every trial in parallel; results keep trial order.
pub fn par_trials<T, F>(trials: usize, base_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|i| f(trial_seed(base_seed, i)))
        .collect()
}

/// Closed-loop One State traces for `trials` seeds.
pub fn run_traces(
    system: &SampledSystem,
    profile: &DisturbanceProfile,
    sigma2: f64,
    base_seed: u64,
    trials: usize,
) -> Result<Vec<ClosedLoopTrace>> {
    par_trials(trials, base_seed, |seed| {
        simulate_one_state(system, profile, &NoiseSpec::new(sigma2, seed)?)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    /// Sample mean and unbiased standard deviation; `None` entries skipped.
    pub fn of(values: impl Iterator<Item = Option<f64>>) -> Option<Self> {
        let v: Vec<f64> = values.flatten().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Self {
            mean,
            std: var.sqrt(),
            count: v.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub trials: usize,
    pub base_seed: u64,
    pub error_rate: Option<MeanStd>,
    pub error_rate_pre: Option<MeanStd>,
    pub error_rate_post: Option<MeanStd>,
    pub peak_deviation_post: Option<MeanStd>,
    /// Share of trials with no wrong decision before reading `k_F`, i.e.
    /// with `E_{k_F} = 0`.
    pub clean_pre_failure: Option<f64>,
    pub summaries: Vec<TraceSummary>,
}

pub fn run_ensemble(
    system: &SampledSystem,
    profile: &DisturbanceProfile,
    sigma2: f64,
    base_seed: u64,
    trials: usize,
) -> Result<EnsembleReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let summaries = par_trials(trials, base_seed, |seed| {
        let trace = simulate_one_state(system, profile, &NoiseSpec::new(sigma2, seed)?)?;
        Ok(trace.summary(system))
    })?;
    Ok(EnsembleReport::from_summaries(summaries, profile, base_seed))
}

impl EnsembleReport {
    pub fn from_summaries(
        summaries: Vec<TraceSummary>,
        profile: &DisturbanceProfile,
        base_seed: u64,
    ) -> Self {
        let trials = summaries.len();
        let clean_pre_failure = profile.k_fault().filter(|_| trials > 0).map(|kf| {
            let clean = summaries
                .iter()
                .filter(|s| s.first_error.is_none_or(|k| k >= kf))
                .count();
            clean as f64 / trials as f64
        });
        EnsembleReport {
            trials,
            base_seed,
            error_rate: MeanStd::of(summaries.iter().map(|s| Some(s.error_rate))),
            error_rate_pre: MeanStd::of(summaries.iter().map(|s| s.error_rate_pre)),
            error_rate_post: MeanStd::of(summaries.iter().map(|s| s.error_rate_post)),
            peak_deviation_post: MeanStd::of(summaries.iter().map(|s| s.peak_deviation_post)),
            clean_pre_failure,
            summaries,
        }
    }
}

/// A zero count is the only outcome consistent with an expected count far
/// below one, where the binomial band has collapsed.
fn negligible(errors: usize, expected: f64) -> bool {
    errors == 0 && expected < 1e-3
}

/// Two-sided level of the exact binomial test, the Gaussian mass outside
/// three standard deviations.
pub const EXACT_TEST_LEVEL: f64 = 0.0027;

/// Whether `errors` out of `trials` is consistent with probability `p` under
/// the exact binomial test at [`EXACT_TEST_LEVEL`]. Used next to the 3σ band,
/// which is too narrow when the expected count is of order one.
pub fn binomial_consistent(errors: usize, trials: usize, p: f64) -> bool {
    let p = p.clamp(0.0, 1.0);
    let Ok(b) = Binomial::new(p, trials as u64) else {
        return false;
    };
    let x = errors as u64;
    let lower = b.cdf(x);
    let upper = if x == 0 { 1.0 } else { b.sf(x - 1) };
    lower >= EXACT_TEST_LEVEL / 2.0 && upper >= EXACT_TEST_LEVEL / 2.0
}

/// One step of the DEP check: empirical error frequency of [`decide`] with
/// the detector restarted on the true state (`D_{k−1} = 0`) against the
/// analytic value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepCheck {
    pub k: usize,
    pub zeta_cond: f64,
    pub z_true: f64,
    pub trials: usize,
    pub errors: usize,
    pub empirical: f64,
    pub analytic: f64,
    /// Three binomial standard deviations, `3 √(p(1−p)/N)` at the analytic `p`.
    pub band: f64,
    /// Within `band`, or accepted by [`binomial_consistent`].
    pub inside: bool,
}

/// Empirical vs analytic DEP at step `k` over `trials` Gaussian draws.
///
/// The draws come from stream `k` of `seed`, so each step is independent of
/// the others and of scheduling.
pub fn check_dep_step(
    system: &SampledSystem,
    levels: Levels,
    sigma: f64,
    k: usize,
    zeta_cond: f64,
    z_true: f64,
    trials: usize,
    seed: u64,
) -> Result<DepCheck> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let n = system.plant().state_dim();
    let analytic = dep(&DepQuery::at_zero_gap(k, n, zeta_cond, z_true, sigma), system, levels)?;
    let moment = system.moment(k)?;
    let state = DetectorState {
        xhat: nalgebra::DVector::zeros(n),
        zhat_prev: zeta_cond,
        k,
    };
    // With x̂_{k−1} = x_{k−1} = 0 the noiseless reading is (z/ζ) C M_{τ,k}.
    let clean = system.c() * moment * (z_true / zeta_cond);
    let mut noise = NoiseStream::with_stream(sigma, seed, k as u64);
    let mut errors = 0usize;
    for _ in 0..trials {
        let reading = &clean + noise.next(clean.len());
        if decide(&state, &reading, moment, system, levels).zhat != z_true {
            errors += 1;
        }
    }
    let empirical = errors as f64 / trials as f64;
    let band = 3.0 * (analytic * (1.0 - analytic) / trials as f64).sqrt();
    Ok(DepCheck {
        k,
        zeta_cond,
        z_true,
        trials,
        errors,
        empirical,
        analytic,
        band,
        inside: (empirical - analytic).abs() <= band || binomial_consistent(errors, trials, analytic),
    })
}

/// [`check_dep_step`] for steps `1..=steps` and all four combinations of
/// conditioning and true level.
pub fn validate_dep(
    system: &SampledSystem,
    levels: Levels,
    sigma: f64,
    steps: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<DepCheck>> {
    let combos = [
        (levels.zeta0, levels.zeta0),
        (levels.zeta0, levels.zeta1),
        (levels.zeta1, levels.zeta0),
        (levels.zeta1, levels.zeta1),
    ];
    let cells: Vec<(usize, f64, f64)> = (1..=steps)
        .flat_map(|k| combos.iter().map(move |&(c, z)| (k, c, z)))
        .collect();
    cells
        .par_iter()
        .enumerate()
        .map(|(i, &(k, c, z))| {
            // Distinct seed per cell, stream per step.
            check_dep_step(system, levels, sigma, k, c, z, trials, seed.wrapping_add((i % 4) as u64))
        })
        .collect()
}

/// Decisions of closed-loop runs taken with `D_{k−1} = 0`, grouped by
/// `(ẑ_{k−2}, z_{k−1})`. The count of wrong decisions is Poisson-binomial
/// with the analytic DEP of each event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedLoopDepCell {
    pub zeta_cond: f64,
    pub z_true: f64,
    pub events: usize,
    pub errors: usize,
    pub expected: f64,
    /// `√Σ p(1−p)`.
    pub std: f64,
    pub inside: bool,
}

pub fn closed_loop_dep_table(
    system: &SampledSystem,
    traces: &[ClosedLoopTrace],
    sigma: f64,
) -> Result<Vec<ClosedLoopDepCell>> {
    let levels = match traces.first() {
        Some(t) => t.levels,
        None => return Ok(Vec::new()),
    };
    let n = system.plant().state_dim();
    let mut cells = Vec::new();
    for (zeta_cond, z_true) in [
        (levels.zeta0, levels.zeta0),
        (levels.zeta0, levels.zeta1),
        (levels.zeta1, levels.zeta0),
        (levels.zeta1, levels.zeta1),
    ] {
        let (mut events, mut errors, mut expected, mut var) = (0usize, 0usize, 0.0, 0.0);
        for trace in traces {
            for pair in trace.records.windows(2) {
                let (prev, rec) = (&pair[0], &pair[1]);
                if prev.d.iter().any(|&v| v != 0.0)
                    || rec.zhat_prev != zeta_cond
                    || rec.z != z_true
                {
                    continue;
                }
                let p = dep(
                    &DepQuery::at_zero_gap(rec.k, n, zeta_cond, z_true, sigma),
                    system,
                    levels,
                )?;
                events += 1;
                errors += usize::from(!rec.detection_correct());
                expected += p;
                var += p * (1.0 - p);
            }
        }
        let std = var.sqrt();
        cells.push(ClosedLoopDepCell {
            zeta_cond,
            z_true,
            events,
            errors,
            expected,
            std,
            inside: (errors as f64 - expected).abs() <= 3.0 * std || negligible(errors, expected),
        });
    }
    Ok(cells)
}

/// Pools tables computed on disjoint sets of traces.
pub fn merge_dep_cells(parts: &[Vec<ClosedLoopDepCell>]) -> Vec<ClosedLoopDepCell> {
    let mut merged: Vec<ClosedLoopDepCell> = Vec::new();
    let mut variances: Vec<f64> = Vec::new();
    for cell in parts.iter().flatten() {
        match merged
            .iter()
            .position(|m| m.zeta_cond == cell.zeta_cond && m.z_true == cell.z_true)
        {
            Some(i) => {
                let m = &mut merged[i];
                m.events += cell.events;
                m.errors += cell.errors;
                m.expected += cell.expected;
                variances[i] += cell.std * cell.std;
            }
            None => {
                merged.push(*cell);
                variances.push(cell.std * cell.std);
            }
        }
    }
    for (m, v) in merged.iter_mut().zip(variances) {
        m.std = v.sqrt();
        m.inside = (m.errors as f64 - m.expected).abs() <= 3.0 * m.std || negligible(m.errors, m.expected);
    }
    merged
}
