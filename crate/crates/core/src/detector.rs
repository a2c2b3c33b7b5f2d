//! One State detection: a causal MAP decoder that keeps a single survivor.
//!
//! At reading `k` the decoder predicts the two outputs the plant can produce
//! from its own state estimate,
//!
//! ```text
//! S_k^w = C e^{τA} x̂_{k−1} + (w / ẑ_{k−2}) C M_{τ,k},   w ∈ {ζ0, ζ1}
//! ```
//!
//! picks the level whose prediction is nearest to the reading (ties go to
//! ζ0), and advances `x̂_k = e^{τA} x̂_{k−1} + (ẑ_{k−1}/ẑ_{k−2}) M_{τ,k}`.
//! The carry is one state vector and one level.

use nalgebra::DVector;

use crate::plant::{Levels, SampledSystem};

/// Detector carry before reading `k`: `x̂_{k−1}` and `ẑ_{k−2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    pub xhat: DVector<f64>,
    pub zhat_prev: f64,
    pub k: usize,
}

impl DetectorState {
    /// `x̂_0 = 0`, `ẑ_{−1} = ζ0`, next reading `k = 1`.
    pub fn initial(state_dim: usize, levels: Levels) -> Self {
        Self {
            xhat: DVector::zeros(state_dim),
            zhat_prev: levels.zeta0,
            k: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// `ẑ_{k−1}`.
    pub zhat: f64,
    /// Predicted reading under ζ0.
    pub s0: DVector<f64>,
    /// Predicted reading under ζ1.
    pub s1: DVector<f64>,
    /// `|r − S_loser| − |r − S_winner|`, never negative.
    pub margin: f64,
}

/// Chooses `ẑ_{k−1}` from reading `r_k`. `moment` is `M_{τ,k}`.
pub fn decide(
    state: &DetectorState,
    reading: &DVector<f64>,
    moment: &DVector<f64>,
    system: &SampledSystem,
    levels: Levels,
) -> Decision {
    let c = system.c();
    let base = c * (system.phi() * &state.xhat);
    let cm = c * moment;
    let s0 = &base + &cm * (levels.zeta0 / state.zhat_prev);
    let s1 = &base + &cm * (levels.zeta1 / state.zhat_prev);
    let d0 = (reading - &s0).norm();
    let d1 = (reading - &s1).norm();
    let (zhat, margin) = if d0 <= d1 {
        (levels.zeta0, d1 - d0)
    } else {
        (levels.zeta1, d0 - d1)
    };
    Decision {
        zhat,
        s0,
        s1,
        margin,
    }
}

/// Advances the carry with the decision taken at the same step.
pub fn update(
    state: &DetectorState,
    decision: &Decision,
    moment: &DVector<f64>,
    system: &SampledSystem,
) -> DetectorState {
    let xhat = system.phi() * &state.xhat + moment * (decision.zhat / state.zhat_prev);
    DetectorState {
        xhat,
        zhat_prev: decision.zhat,
        k: state.k + 1,
    }
}

/// What a detector sees at reading `k`.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub k: usize,
    pub system: &'a SampledSystem,
    pub moment: &'a DVector<f64>,
    pub levels: Levels,
}

/// Detection callback used by the closed loop. Implementations consume the
/// reading `r_k`, return their decision on `z_{k−1}` and expose the state
/// estimate `x̂_k` afterwards.
pub trait Detector {
    fn detect(&mut self, reading: &DVector<f64>, ctx: &StepContext<'_>) -> Decision;
    fn estimate(&self) -> &DVector<f64>;
}

#[derive(Debug, Clone)]
pub struct OneStateDetector {
    levels: Levels,
    state: DetectorState,
}

impl OneStateDetector {
    pub fn new(state_dim: usize, levels: Levels) -> Self {
        Self {
            levels,
            state: DetectorState::initial(state_dim, levels),
        }
    }

    pub fn state(&self) -> &DetectorState {
        &self.state
    }
}

impl Detector for OneStateDetector {
    fn detect(&mut self, reading: &DVector<f64>, ctx: &StepContext<'_>) -> Decision {
        debug_assert_eq!(ctx.k, self.state.k, "detector stepped out of order");
        let decision = decide(&self.state, reading, ctx.moment, ctx.system, self.levels);
        self.state = update(&self.state, &decision, ctx.moment, ctx.system);
        decision
    }

    fn estimate(&self) -> &DVector<f64> {
        &self.state.xhat
    }
}
