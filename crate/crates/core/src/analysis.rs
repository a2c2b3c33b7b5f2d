//! Closed-form detection error probability (DEP), signal-to-noise ratio and
//! n-step error decay probability (EDP) for scalar-output plants.
//!
//! Conditioned on the estimator gap `D_{k−1} = d` and the previous decision
//! `Ẑ_{k−2} = ζ`, the reading is `R_k = S_k^{z} − C e^{τA} d + N_k` where
//! `z = z_{k−1}` is the true level. The decision compares `R_k` with the
//! midpoint of the two predictions, so every probability below is a
//! Gaussian tail `½ erfc(x / (σ√2))`.

use nalgebra::DVector;
use serde::Serialize;

use crate::linalg::erfc;
use crate::plant::{DisturbanceProfile, Levels, SampledSystem};
use crate::{Error, Result};

/// Products longer than this are accumulated in log space.
pub const LOG_SPACE_THRESHOLD: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct DepQuery {
    /// Reading index `k`; the decision is on `z_{k−1}`.
    pub k: usize,
    /// `D_{k−1}`.
    pub d: DVector<f64>,
    /// `ẑ_{k−2}`.
    pub zeta_cond: f64,
    /// `z_{k−1}`.
    pub z_true: f64,
    pub sigma: f64,
}

impl DepQuery {
    pub fn at_zero_gap(k: usize, state_dim: usize, zeta_cond: f64, z_true: f64, sigma: f64) -> Self {
        Self {
            k,
            d: DVector::zeros(state_dim),
            zeta_cond,
            z_true,
            sigma,
        }
    }
}

/// Pieces shared by every DEP case.
struct Separation {
    /// `|S^{ζ1} − S^{ζ0}| / 2`.
    half_gap: f64,
    /// `C e^{τA} d`.
    gap_output: f64,
    /// `S^{ζ1} > S^{ζ0}`.
    faulty_above: bool,
}

fn validate_level(levels: Levels, v: f64, what: &str) -> Result<()> {
    if levels.contains(v) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{what} = {v} is not one of the levels {} / {}",
            levels.zeta0, levels.zeta1
        )))
    }
}

fn validate_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "noise deviation must be finite and >= 0, got {sigma}"
        )))
    }
}

fn separation(q: &DepQuery, sys: &SampledSystem, levels: Levels) -> Result<Separation> {
    sys.require_scalar()?;
    validate_level(levels, q.zeta_cond, "conditioning level")?;
    validate_level(levels, q.z_true, "true level")?;
    validate_sigma(q.sigma)?;
    if q.d.len() != sys.plant().state_dim() || q.d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "gap vector must be finite with the state dimension".into(),
        ));
    }
    let cm = sys.output_moment(q.k)?;
    let delta = (levels.zeta1 - levels.zeta0) / q.zeta_cond * cm;
    let gap_output = if q.d.iter().all(|&v| v == 0.0) {
        0.0
    } else {
        (sys.c() * (sys.phi() * &q.d))[0]
    };
    Ok(Separation {
        half_gap: delta.abs() / 2.0,
        gap_output,
        faulty_above: delta > 0.0,
    })
}

/// `(P(error), P(correct))` for a decision that errs when `N_k > threshold`.
fn tail_pair(threshold: f64, sigma: f64) -> (f64, f64) {
    let x = threshold / (sigma * std::f64::consts::SQRT_2);
    (0.5 * erfc(x), 0.5 * erfc(-x))
}

/// Error threshold on the noise for the four cases (true level × ordering of
/// the predictions): the decision errs iff `N_k` exceeds the returned value.
fn error_threshold(sep: &Separation, z_true_is_nominal: bool) -> f64 {
    let h = sep.half_gap;
    let g = sep.gap_output;
    match (z_true_is_nominal, sep.faulty_above) {
        // z = ζ1, S1 > S0: wrong iff R < mid  ⇔  N < g − h.
        (false, true) => h - g,
        // z = ζ1, S1 ≤ S0: wrong iff R ≥ mid  ⇔  N ≥ g + h.
        (false, false) => g + h,
        // z = ζ0, S1 > S0: wrong iff R > mid  ⇔  N > g + h.
        (true, true) => g + h,
        // z = ζ0, S1 ≤ S0: wrong iff R < mid  ⇔  N < g − h.
        (true, false) => h - g,
    }
}

fn dep_pair(q: &DepQuery, sys: &SampledSystem, levels: Levels) -> Result<(f64, f64)> {
    let sep = separation(q, sys, levels)?;
    let nominal = q.z_true == levels.zeta0;
    if q.sigma == 0.0 {
        // Noiseless limit: replay the decision rule on the exact reading,
        // including its tie rule.
        let s0 = 0.0;
        let s1 = if sep.faulty_above { 2.0 } else { -2.0 } * sep.half_gap;
        let r = if nominal { s0 } else { s1 } - sep.gap_output;
        let picks_nominal = (r - s0).abs() <= (r - s1).abs();
        let wrong = picks_nominal != nominal;
        return Ok(if wrong { (1.0, 0.0) } else { (0.0, 1.0) });
    }
    Ok(tail_pair(error_threshold(&sep, nominal), q.sigma))
}

/// `DEP = P(Ẑ_{k−1} ≠ z_{k−1} | D_{k−1} = d, Ẑ_{k−2} = ζ)`.
///
/// σ = 0 returns the noiseless limit, 0 or 1.
pub fn dep(q: &DepQuery, sys: &SampledSystem, levels: Levels) -> Result<f64> {
    dep_pair(q, sys, levels).map(|(err, _)| err)
}

/// The same probability written with indicator signs,
/// `½ erfc((|S^{ζ0} − S^{ζ1}|/2 − C e^{τA} d · s) / (σ√2))` with
/// `s = (1 − 2·1{z = ζ0})(1 − 2·1{S^{ζ0} > S^{ζ1}})`. Requires σ > 0.
pub fn dep_indicator_form(q: &DepQuery, sys: &SampledSystem, levels: Levels) -> Result<f64> {
    if q.sigma <= 0.0 {
        return Err(Error::InvalidParameter(
            "indicator form needs sigma > 0".into(),
        ));
    }
    let sep = separation(q, sys, levels)?;
    let first = if q.z_true == levels.zeta0 { -1.0 } else { 1.0 };
    // S^{ζ0} > S^{ζ1} is the strict complement of `faulty_above` unless the
    // predictions coincide, where the gap term does not matter anyway.
    let s0_above = !sep.faulty_above && sep.half_gap > 0.0;
    let second = if s0_above { -1.0 } else { 1.0 };
    let x = (sep.half_gap - sep.gap_output * first * second) / (q.sigma * std::f64::consts::SQRT_2);
    Ok(0.5 * erfc(x))
}

/// Signal-to-noise ratio of the two candidate readings at step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Snr {
    pub ratio: f64,
}

impl Snr {
    pub fn sqrt(&self) -> f64 {
        self.ratio.sqrt()
    }
    pub fn db(&self) -> f64 {
        10.0 * self.ratio.log10()
    }
}

/// `√SNR(η) = |(ζ1 − ζ0)/(2η) C M_{τ,k}| / (σ√2)`.
pub fn snr(eta: f64, sys: &SampledSystem, levels: Levels, k: usize, sigma: f64) -> Result<Snr> {
    sys.require_scalar()?;
    validate_level(levels, eta, "level")?;
    validate_sigma(sigma)?;
    let cm = sys.output_moment(k)?;
    let amplitude = ((levels.zeta1 - levels.zeta0) / (2.0 * eta) * cm).abs();
    let root = if sigma == 0.0 {
        if amplitude == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        amplitude / (sigma * std::f64::consts::SQRT_2)
    };
    Ok(Snr { ratio: root * root })
}

/// A probability together with its natural log; long products are formed in
/// log space so the log stays meaningful after the probability underflows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Edp {
    pub probability: f64,
    pub ln_probability: f64,
}

impl Edp {
    pub const CERTAIN: Edp = Edp {
        probability: 1.0,
        ln_probability: 0.0,
    };

    fn from_factors(factors: impl Iterator<Item = f64>, count: usize) -> Self {
        if count <= LOG_SPACE_THRESHOLD {
            let mut p = 1.0;
            let mut ln = 0.0;
            for f in factors {
                p *= f;
                ln += f.ln();
            }
            Edp {
                probability: p,
                ln_probability: ln,
            }
        } else {
            let ln: f64 = factors.map(f64::ln).sum();
            Edp {
                probability: ln.exp(),
                ln_probability: ln,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdpQuery {
    /// First step of the window, `>= 1`.
    pub k0: usize,
    /// Number of consecutive correct detections asked for.
    pub n: usize,
    /// `D_{k0−1}`.
    pub d: DVector<f64>,
    /// `ẑ_{k0−2}`.
    pub zeta: f64,
    /// The constant true level over the window.
    pub eta: f64,
    pub sigma: f64,
}

impl EdpQuery {
    /// Checks that `z_k = η` for every `k` in `[k0 − 1, k0 + n − 1]`.
    pub fn check_window(&self, profile: &DisturbanceProfile) -> Result<()> {
        let first = self.k0.saturating_sub(1);
        let last = self.k0 + self.n - 1;
        match (first..=last).find(|&k| profile.level(k) != self.eta) {
            None => Ok(()),
            Some(k) => Err(Error::InvalidParameter(format!(
                "window [{first}, {last}] crosses the switch at step {k}"
            ))),
        }
    }
}

/// `EDP^n(k0, d, ζ, η)`: probability that the next `n` decisions are all
/// correct, so that `E_{k0+n} = e^{nτA} E_{k0}`.
///
/// The first factor is conditioned on `ζ` and the gap `d`; factor `m ≥ 1`
/// on `η` and the propagated gap `e^{mτA} d`.
pub fn edp_n(q: &EdpQuery, sys: &SampledSystem, levels: Levels) -> Result<Edp> {
    if q.k0 == 0 {
        return Err(Error::InvalidParameter("window start k0 must be >= 1".into()));
    }
    if q.n == 0 {
        return Err(Error::InvalidParameter("window length n must be >= 1".into()));
    }
    validate_level(levels, q.zeta, "conditioning level")?;
    validate_level(levels, q.eta, "window level")?;
    let zero_gap = q.d.iter().all(|&v| v == 0.0);
    let mut gap = q.d.clone();
    let mut factors = Vec::with_capacity(q.n);
    for m in 0..q.n {
        let query = DepQuery {
            k: q.k0 + m,
            d: gap.clone(),
            zeta_cond: if m == 0 { q.zeta } else { q.eta },
            z_true: q.eta,
            sigma: q.sigma,
        };
        factors.push(dep_pair(&query, sys, levels)?.1);
        if !zero_gap {
            gap = sys.phi() * gap;
        }
    }
    Ok(Edp::from_factors(factors.into_iter(), q.n))
}

/// Probability of no false positive before the failure,
/// `EDP^{k_F − 1}(1, 0, ζ0, ζ0)`; equal to `P(E_{k_F} = 0)`.
pub fn false_positive_window(
    k_fault: usize,
    sys: &SampledSystem,
    levels: Levels,
    sigma: f64,
) -> Result<Edp> {
    if k_fault == 0 {
        return Err(Error::InvalidParameter(
            "pre-failure window needs k_fault >= 1".into(),
        ));
    }
    if k_fault == 1 {
        return Ok(Edp::CERTAIN);
    }
    edp_n(
        &EdpQuery {
            k0: 1,
            n: k_fault - 1,
            d: DVector::zeros(sys.plant().state_dim()),
            zeta: levels.zeta0,
            eta: levels.zeta0,
            sigma,
        },
        sys,
        levels,
    )
}

/// `EDP^n(k_F + 1, 0, ζ0, ζ1)`: the error left by the switch decays for `n`
/// steps, given a clean pre-failure run.
pub fn post_failure_decay(
    k_fault: usize,
    n: usize,
    sys: &SampledSystem,
    levels: Levels,
    sigma: f64,
) -> Result<Edp> {
    edp_n(
        &EdpQuery {
            k0: k_fault + 1,
            n,
            d: DVector::zeros(sys.plant().state_dim()),
            zeta: levels.zeta0,
            eta: levels.zeta1,
            sigma,
        },
        sys,
        levels,
    )
}

/// `[½ erfc(−√SNR)]^n` for a real exponent `n`.
pub fn edp_power(sqrt_snr: f64, n: f64) -> Edp {
    let p = 0.5 * erfc(-sqrt_snr);
    let ln = n * p.ln();
    Edp {
        probability: ln.exp(),
        ln_probability: ln,
    }
}
