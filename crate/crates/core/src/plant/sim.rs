use nalgebra::{DMatrix, DVector};

use super::{DisturbanceProfile, NoiseSpec, NoiseStream, SampledSystem};
use super::trace::{ClosedLoopTrace, StepRecord};
use crate::detector::{Detector, OneStateDetector, StepContext};
use crate::linalg::MomentIntegrator;
use crate::{Error, Result};

/// Loop carry after step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopCarry {
    pub k: usize,
    pub x: DVector<f64>,
    pub x_nominal: DVector<f64>,
    /// `ẑ_{k−1}`; it scales the compensation applied over the next interval.
    pub zhat_last: f64,
}

impl LoopCarry {
    /// `X_0 = 0`, `x^N(0) = 0`, `Ẑ_{−1} = ζ0`.
    pub fn initial(state_dim: usize, zeta0: f64) -> Self {
        Self {
            k: 0,
            x: DVector::zeros(state_dim),
            x_nominal: DVector::zeros(state_dim),
            zhat_last: zeta0,
        }
    }
}

/// Advances the compensated plant over `[(k−1)τ, kτ)`, takes the noisy
/// reading `r_k`, and lets the detector decide on `z_{k−1}`.
///
/// The true state follows `x_k = e^{τA} x_{k−1} + (z_{k−1}/ẑ_{k−2}) M_{τ,k}`
/// and the nominal reference `x^N_k = e^{τA} x^N_{k−1} + M_{τ,k}`, so
/// `E_k = x_k − x^N_k` obeys `E_k = e^{τA}E_{k−1} + (z_{k−1}/ẑ_{k−2} − 1) M_{τ,k}`.
pub fn step_closed_loop(
    system: &SampledSystem,
    profile: &DisturbanceProfile,
    carry: &LoopCarry,
    noise: &mut NoiseStream,
    detector: &mut dyn Detector,
) -> Result<(LoopCarry, StepRecord)> {
    let k = carry.k + 1;
    let levels = profile.levels();
    let z = profile.level(k - 1);
    let zhat_prev = carry.zhat_last;
    assert!(zhat_prev != 0.0, "detected level is never zero");

    let moment = system.moment(k)?;
    let phi = system.phi();
    let u_scale = z / zhat_prev;
    let x = phi * &carry.x + moment * u_scale;
    let x_nominal = phi * &carry.x_nominal + moment;
    let y = system.c() * &x;
    let reading = &y + noise.next(y.len());

    let ctx = StepContext {
        k,
        system,
        moment,
        levels,
    };
    let decision = detector.detect(&reading, &ctx);
    let xhat = detector.estimate().clone();

    let e = &x - &x_nominal;
    let d = &xhat - &x;
    if !(x.iter().chain(xhat.iter()).chain(reading.iter())).all(|v| v.is_finite()) {
        return Err(Error::Divergence(k));
    }

    let record = StepRecord {
        k,
        t: k as f64 * system.tau(),
        x: x.clone(),
        x_nominal: x_nominal.clone(),
        y,
        reading: Some(reading),
        z,
        zhat: decision.zhat,
        zhat_prev,
        xhat,
        e,
        d,
        margin: Some(decision.margin),
    };
    let next = LoopCarry {
        k,
        x,
        x_nominal,
        zhat_last: decision.zhat,
    };
    Ok((next, record))
}

/// Runs `profile.total_steps()` readings with the given detector.
pub fn simulate(
    system: &SampledSystem,
    profile: &DisturbanceProfile,
    noise: &NoiseSpec,
    detector: &mut dyn Detector,
) -> Result<ClosedLoopTrace> {
    let steps = profile.total_steps();
    let n = system.plant().state_dim();
    let levels = profile.levels();
    let mut stream = noise.stream();
    let mut carry = LoopCarry::initial(n, levels.zeta0);
    let mut records = Vec::with_capacity(steps + 1);
    records.push(StepRecord::initial(system, levels.zeta0));
    for _ in 0..steps {
        let (next, rec) = step_closed_loop(system, profile, &carry, &mut stream, detector)?;
        carry = next;
        records.push(rec);
    }
    Ok(ClosedLoopTrace {
        tau: system.tau(),
        k_fault: profile.k_fault(),
        levels,
        records,
    })
}

/// [`simulate`] with a fresh [`OneStateDetector`].
pub fn simulate_one_state(
    system: &SampledSystem,
    profile: &DisturbanceProfile,
    noise: &NoiseSpec,
) -> Result<ClosedLoopTrace> {
    let mut det = OneStateDetector::new(system.plant().state_dim(), profile.levels());
    simulate(system, profile, noise, &mut det)
}

/// `x^N(kτ)` for `k = 0..=steps`: the plant with unit gain and no fault.
pub fn nominal_trace(system: &SampledSystem, steps: usize) -> Result<Vec<DVector<f64>>> {
    let mut x = DVector::zeros(system.plant().state_dim());
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x.clone());
    for k in 1..=steps {
        x = system.phi() * &x + system.moment(k)?;
        out.push(x.clone());
    }
    Ok(out)
}

/// The faulty plant without compensation: `x_k = e^{τA} x_{k−1} + z_{k−1} M_{τ,k}`.
pub fn uncompensated_trace(
    system: &SampledSystem,
    profile: &DisturbanceProfile,
) -> Result<Vec<DVector<f64>>> {
    let mut x = DVector::zeros(system.plant().state_dim());
    let mut out = Vec::with_capacity(profile.total_steps() + 1);
    out.push(x.clone());
    for k in 1..=profile.total_steps() {
        x = system.phi() * &x + system.moment(k)? * profile.level(k - 1);
        out.push(x.clone());
    }
    Ok(out)
}

/// Output of the three trajectories between samples, for plotting only.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSample {
    pub t: f64,
    pub y_nominal: DVector<f64>,
    pub y_compensated: DVector<f64>,
    pub y_uncompensated: DVector<f64>,
}

/// Reconstructs the outputs on a grid `refine` times finer than τ using the
/// same closed forms as the sampled recursion.
pub fn dense_outputs(
    system: &SampledSystem,
    profile: &DisturbanceProfile,
    trace: &ClosedLoopTrace,
    refine: usize,
) -> Result<Vec<DenseSample>> {
    let refine = refine.max(1);
    let plant = system.plant();
    let c = plant.c();
    let tau = system.tau();
    let uncomp = uncompensated_trace(system, profile)?;
    let mut integ = MomentIntegrator::new(plant.a(), plant.b())?;
    let steps: Vec<(f64, DMatrix<f64>)> = (1..=refine)
        .map(|j| {
            let h = tau * j as f64 / refine as f64;
            crate::linalg::mat_exp(plant.a(), h).map(|p| (h, p))
        })
        .collect::<std::result::Result<_, _>>()?;
    let mut out = Vec::with_capacity(trace.records.len() * refine);
    let first = &trace.records[0];
    out.push(DenseSample {
        t: 0.0,
        y_nominal: c * &first.x_nominal,
        y_compensated: c * &first.x,
        y_uncompensated: c * &uncomp[0],
    });
    for rec in trace.records.iter().skip(1) {
        let k = rec.k;
        let prev = &trace.records[k - 1];
        let start = (k - 1) as f64 * tau;
        for (h, prop) in &steps {
            let h = *h;
            let part = integ.moment(plant.input(), h, start + h)?;
            let xn = prop * &prev.x_nominal + &part;
            let xc = prop * &prev.x + &part * rec.u_scale();
            let xu = prop * &uncomp[k - 1] + &part * rec.z;
            out.push(DenseSample {
                t: start + h,
                y_nominal: c * xn,
                y_compensated: c * xc,
                y_uncompensated: c * xu,
            });
        }
    }
    Ok(out)
}
