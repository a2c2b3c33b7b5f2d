//! Choice of the sampling period.
//!
//! For a constant input the post-switch deviation is `|C M_τ|`, which grows
//! on `(0, τ0]` where `τ0` minimizes `C M_τ`. The design keeps that peak as
//! small as possible subject to `EDP^{W/τ} > 1 − ε`, i.e. a clean nominal
//! window of length `W` with high probability. For periodic inputs the EDP is
//! swept numerically instead.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{edp_n, edp_power, snr, Edp, EdpQuery};
use crate::linalg::MomentIntegrator;
use crate::plant::{Levels, LtiPlant, SampledSystem};
use crate::{Error, Result};

/// Width below which the bisections stop.
pub const BISECTION_TOL: f64 = 1e-10;
/// Width at which the golden-section search for `τ0` stops.
pub const GOLDEN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauGrid {
    pub lo: f64,
    pub hi: f64,
    /// Number of grid points, both ends included.
    pub resolution: usize,
}

impl TauGrid {
    pub fn new(lo: f64, hi: f64, resolution: usize) -> Result<Self> {
        let g = Self { lo, hi, resolution };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.hi > self.lo) {
            return Err(Error::InvalidParameter(format!(
                "tau grid needs 0 < lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.resolution < 2 {
            return Err(Error::InvalidParameter(
                "tau grid needs at least 2 points".into(),
            ));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let span = self.hi - self.lo;
        let last = (self.resolution - 1) as f64;
        (0..self.resolution)
            .map(|i| self.lo + span * i as f64 / last)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub epsilon: f64,
    /// `W`, the time window that must stay free of wrong detections.
    pub window: f64,
    pub sigma2: f64,
    pub levels: Levels,
    pub tau_grid: TauGrid,
}

impl DesignSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.window.is_finite() && self.window > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "window must be > 0, got {}",
                self.window
            )));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma2 must be > 0, got {}",
                self.sigma2
            )));
        }
        self.tau_grid.validate()
    }

    pub fn with_sigma2(&self, sigma2: f64) -> Self {
        Self { sigma2, ..*self }
    }

    fn threshold(&self) -> f64 {
        1.0 - self.epsilon
    }
}

/// `C M_τ` on a grid together with its global minimizer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CmProfile {
    pub taus: Vec<f64>,
    pub cm: Vec<f64>,
    pub tau0: f64,
    pub cm_at_tau0: f64,
}

/// Evaluates `C M_τ` for the constant input of `plant`.
struct CmCurve {
    integrator: MomentIntegrator,
    plant: LtiPlant,
}

impl CmCurve {
    fn new(plant: &LtiPlant) -> Result<Self> {
        if plant.output_dim() != 1 {
            return Err(Error::ScalarOutputRequired(plant.output_dim()));
        }
        if plant.input().constant_level().is_none() {
            return Err(Error::ConstantInputRequired("sampling-period design"));
        }
        Ok(Self {
            integrator: MomentIntegrator::new(plant.a(), plant.b())?,
            plant: plant.clone(),
        })
    }

    fn eval(&mut self, tau: f64) -> Result<f64> {
        let m: DVector<f64> = self.integrator.moment(self.plant.input(), tau, tau)?;
        Ok((self.plant.c() * m)[0])
    }
}

pub fn profile_cm(plant: &LtiPlant, grid: &TauGrid) -> Result<CmProfile> {
    grid.validate()?;
    let mut curve = CmCurve::new(plant)?;
    let taus = grid.points();
    let cm = taus
        .iter()
        .map(|&t| curve.eval(t))
        .collect::<Result<Vec<_>>>()?;
    let best = (0..cm.len())
        .min_by(|&i, &j| cm[i].total_cmp(&cm[j]))
        .expect("grid is not empty");
    // Refine within the neighbouring grid cells.
    let lo = taus[best.saturating_sub(1)];
    let hi = taus[(best + 1).min(taus.len() - 1)];
    let (tau0, cm_at_tau0) = golden_min(|t| curve.eval(t), lo, hi)?;
    let (tau0, cm_at_tau0) = if cm_at_tau0 <= cm[best] {
        (tau0, cm_at_tau0)
    } else {
        (taus[best], cm[best])
    };
    Ok(CmProfile {
        taus,
        cm,
        tau0,
        cm_at_tau0,
    })
}

fn golden_min(mut f: impl FnMut(f64) -> Result<f64>, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    let t = 0.5 * (a + b);
    Ok((t, f(t)?))
}

/// `EDP^{W/τ}` at `d = 0`, `η = ζ = ζ0` for a constant input, under the three
/// readings of the exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowEdp {
    pub steps_ceil: usize,
    pub ceil: Edp,
    pub floor: Edp,
    pub real: Edp,
}

/// `C M_τ` and the window EDP at one period.
pub fn window_edp(plant: &LtiPlant, tau: f64, spec: &DesignSpec) -> Result<(f64, WindowEdp)> {
    if plant.input().constant_level().is_none() {
        return Err(Error::ConstantInputRequired("window EDP power form"));
    }
    let sys = SampledSystem::new(plant, tau, 1)?;
    let cm = sys.output_moment(1)?;
    let root = snr(spec.levels.zeta0, &sys, spec.levels, 1, spec.sigma2.sqrt())?.sqrt();
    let n = spec.window / tau;
    Ok((
        cm,
        WindowEdp {
            steps_ceil: n.ceil() as usize,
            ceil: edp_power(root, n.ceil()),
            floor: edp_power(root, n.floor()),
            real: edp_power(root, n),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub cm: f64,
    /// `max_{t ≤ τ} |C M_t|` over the grid, clamped to `|C M_{τ0}|` past `τ0`.
    pub peak: f64,
    pub edp: WindowEdp,
    /// `τ ≤ τ0` and `EDP^{⌈W/τ⌉} > 1 − ε`.
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignResult {
    /// `None` when no `τ ∈ (0, τ0]` meets the constraint.
    pub tau_opt: Option<f64>,
    /// The same search with the real exponent `W/τ`.
    pub tau_opt_real: Option<f64>,
    pub tau0: f64,
    pub cm_at_tau0: f64,
    /// `max_{t ∈ (0, τ_opt]} |C M_t|`.
    pub peak: Option<f64>,
    pub edp_at_opt: Option<WindowEdp>,
    pub sweep: Vec<SweepRow>,
}

impl DesignResult {
    pub fn is_feasible(&self) -> bool {
        self.tau_opt.is_some()
    }
}

/// Smallest `τ` in `[lo, hi]` with `pred(τ)`, assuming `pred` is monotone and
/// `pred(hi)` holds. `lo_ok` tells whether `pred(lo)` holds.
fn bisect_first(mut pred: impl FnMut(f64) -> Result<bool>, lo: f64, hi: f64, lo_ok: bool) -> Result<f64> {
    if lo_ok {
        return Ok(lo);
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > BISECTION_TOL {
        let mid = 0.5 * (a + b);
        if pred(mid)? {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(b)
}

/// Minimizes the post-switch peak `|C M_τ|` subject to `EDP^{⌈W/τ⌉} > 1 − ε`.
///
/// On `(0, τ0]` the peak grows and the EDP is monotone in `τ`, so the
/// optimum is the smallest feasible `τ`: the first feasible point of the grid
/// on `[lo, τ0]`, refined by bisection against the previous point.
pub fn tau_opt_constant(spec: &DesignSpec, plant: &LtiPlant) -> Result<DesignResult> {
    spec.validate()?;
    let profile = profile_cm(plant, &spec.tau_grid)?;
    let tau0 = profile.tau0;
    let threshold = spec.threshold();

    let mut taus: Vec<f64> = TauGrid {
        lo: spec.tau_grid.lo,
        hi: tau0.max(spec.tau_grid.lo * (1.0 + 1e-12)),
        resolution: spec.tau_grid.resolution,
    }
    .points();
    taus.extend(profile.taus.iter().copied().filter(|&t| t > tau0));

    let evals = taus
        .par_iter()
        .map(|&t| window_edp(plant, t, spec))
        .collect::<Result<Vec<_>>>()?;
    let peak0 = profile.cm_at_tau0.abs();
    let mut running = 0.0f64;
    let sweep: Vec<SweepRow> = taus
        .iter()
        .zip(&evals)
        .map(|(&tau, &(cm, edp))| {
            running = running.max(cm.abs());
            let within = tau <= tau0;
            SweepRow {
                tau,
                cm,
                peak: if within { running } else { peak0 },
                edp,
                feasible: within && edp.ceil.probability > threshold,
            }
        })
        .collect();

    let first_feasible = |pick: fn(&WindowEdp) -> f64| {
        sweep
            .iter()
            .position(|r| r.tau <= tau0 && pick(&r.edp) > threshold)
    };
    let refine = |idx: usize, pick: fn(&WindowEdp) -> f64| -> Result<f64> {
        let hi = sweep[idx].tau;
        let lo = if idx == 0 { hi } else { sweep[idx - 1].tau };
        bisect_first(
            |t| Ok(pick(&window_edp(plant, t, spec)?.1) > threshold),
            lo,
            hi,
            idx == 0,
        )
    };
    let ceil_pick: fn(&WindowEdp) -> f64 = |e| e.ceil.probability;
    let real_pick: fn(&WindowEdp) -> f64 = |e| e.real.probability;

    let tau_opt = first_feasible(ceil_pick).map(|i| refine(i, ceil_pick)).transpose()?;
    let tau_opt_real = first_feasible(real_pick).map(|i| refine(i, real_pick)).transpose()?;

    let (peak, edp_at_opt) = match tau_opt {
        Some(t) => {
            let (cm, edp) = window_edp(plant, t, spec)?;
            let grid_peak = sweep
                .iter()
                .filter(|r| r.tau <= t)
                .map(|r| r.cm.abs())
                .fold(0.0, f64::max);
            (Some(grid_peak.max(cm.abs())), Some(edp))
        }
        None => (None, None),
    };

    Ok(DesignResult {
        tau_opt,
        tau_opt_real,
        tau0,
        cm_at_tau0: profile.cm_at_tau0,
        peak,
        edp_at_opt,
        sweep,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaRow {
    pub sigma2: f64,
    pub tau_opt: Option<f64>,
    pub tau_opt_real: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaCurve {
    pub rows: Vec<SigmaRow>,
    pub tau0: f64,
    /// Largest `σ²` for which `τ0` still meets the constraint.
    pub boundary: f64,
    /// The same with the real exponent.
    pub boundary_real: f64,
}

/// `τ_opt` across a grid of noise variances, and the variance past which no
/// sampling period is admissible.
pub fn sigma_feasibility_curve(
    spec: &DesignSpec,
    plant: &LtiPlant,
    sigma2_grid: &[f64],
) -> Result<SigmaCurve> {
    if sigma2_grid.is_empty() {
        return Err(Error::InvalidParameter("empty sigma2 grid".into()));
    }
    let rows = sigma2_grid
        .par_iter()
        .map(|&s2| {
            let r = tau_opt_constant(&spec.with_sigma2(s2), plant)?;
            Ok(SigmaRow {
                sigma2: s2,
                tau_opt: r.tau_opt,
                tau_opt_real: r.tau_opt_real,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let tau0 = profile_cm(plant, &spec.tau_grid)?.tau0;
    let boundary_for = |pick: fn(&WindowEdp) -> f64| -> Result<f64> {
        let ok = |s2: f64| -> Result<bool> {
            Ok(pick(&window_edp(plant, tau0, &spec.with_sigma2(s2))?.1) > spec.threshold())
        };
        let mut lo = 1e-12;
        if !ok(lo)? {
            return Ok(0.0);
        }
        let mut hi = 1.0;
        while ok(hi)? {
            lo = hi;
            hi *= 2.0;
            if hi > 1e300 {
                return Ok(f64::INFINITY);
            }
        }
        while hi - lo > BISECTION_TOL * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if ok(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    };
    Ok(SigmaCurve {
        rows,
        tau0,
        boundary: boundary_for(|e| e.ceil.probability)?,
        boundary_real: boundary_for(|e| e.real.probability)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodicRow {
    pub tau: f64,
    pub steps: usize,
    pub edp: Edp,
    pub suitable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicSweep {
    pub rows: Vec<PeriodicRow>,
    pub argmax: f64,
    pub max_edp: f64,
    pub threshold: f64,
    /// Every `τ` whose EDP exceeds the threshold.
    pub suitable: Vec<f64>,
}

/// `EDP^{⌈W/τ⌉}(1, 0, ζ0, ζ0)` on the grid with the time-varying moments of
/// a periodic input.
pub fn edp_sweep_periodic(
    spec: &DesignSpec,
    plant: &LtiPlant,
    threshold: f64,
) -> Result<PeriodicSweep> {
    spec.validate()?;
    if !plant.input().is_periodic() {
        return Err(Error::PeriodicInputRequired("periodic EDP sweep"));
    }
    if plant.output_dim() != 1 {
        return Err(Error::ScalarOutputRequired(plant.output_dim()));
    }
    let sigma = spec.sigma2.sqrt();
    let rows = spec
        .tau_grid
        .points()
        .par_iter()
        .map(|&tau| {
            let steps = (spec.window / tau).ceil() as usize;
            let sys = SampledSystem::new(plant, tau, steps)?;
            let edp = edp_n(
                &EdpQuery {
                    k0: 1,
                    n: steps,
                    d: DVector::zeros(plant.state_dim()),
                    zeta: spec.levels.zeta0,
                    eta: spec.levels.zeta0,
                    sigma,
                },
                &sys,
                spec.levels,
            )?;
            Ok(PeriodicRow {
                tau,
                steps,
                edp,
                suitable: edp.probability > threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = rows
        .iter()
        .max_by(|a, b| a.edp.ln_probability.total_cmp(&b.edp.ln_probability))
        .expect("grid is not empty");
    Ok(PeriodicSweep {
        argmax: best.tau,
        max_edp: best.edp.probability,
        threshold,
        suitable: rows.iter().filter(|r| r.suitable).map(|r| r.tau).collect(),
        rows,
    })
}
