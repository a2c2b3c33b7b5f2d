use serde::{Deserialize, Serialize};

use super::LinalgError;

/// The known scalar input `f(t)` driving the plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputSignal {
    Constant {
        level: f64,
    },
    /// `amplitude * sin(omega * t + phase)`.
    Sinusoid {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Samples at `t = i * step`, linearly interpolated and held at the ends.
    Sampled {
        values: Vec<f64>,
        step: f64,
    },
}

impl InputSignal {
    pub fn constant(level: f64) -> Self {
        InputSignal::Constant { level }
    }

    /// `sin(t)`.
    pub fn sine() -> Self {
        InputSignal::Sinusoid {
            amplitude: 1.0,
            omega: 1.0,
            phase: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), LinalgError> {
        let bad = |msg: String| Err(LinalgError::InvalidArgument(msg));
        match self {
            InputSignal::Constant { level } if !level.is_finite() => {
                bad(format!("constant level must be finite, got {level}"))
            }
            InputSignal::Sinusoid {
                amplitude,
                omega,
                phase,
            } => {
                if !(amplitude.is_finite() && *amplitude > 0.0) {
                    bad(format!("sinusoid amplitude must be > 0, got {amplitude}"))
                } else if !omega.is_finite() || !phase.is_finite() {
                    bad("sinusoid frequency and phase must be finite".into())
                } else {
                    Ok(())
                }
            }
            InputSignal::Sampled { values, step } => {
                if !(step.is_finite() && *step > 0.0) {
                    bad(format!("sample step must be > 0, got {step}"))
                } else if values.is_empty() {
                    bad("sampled input needs at least one value".into())
                } else if values.iter().any(|v| !v.is_finite()) {
                    bad("sampled input values must be finite".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            InputSignal::Constant { level } => *level,
            InputSignal::Sinusoid {
                amplitude,
                omega,
                phase,
            } => amplitude * (omega * t + phase).sin(),
            InputSignal::Sampled { values, step } => {
                let pos = t / step;
                if pos <= 0.0 {
                    return values[0];
                }
                let i = pos.floor() as usize;
                if i + 1 >= values.len() {
                    return *values.last().expect("validated non-empty");
                }
                let frac = pos - i as f64;
                values[i] + frac * (values[i + 1] - values[i])
            }
        }
    }

    /// The level when the signal is constant.
    pub fn constant_level(&self) -> Option<f64> {
        match self {
            InputSignal::Constant { level } => Some(*level),
            _ => None,
        }
    }

    /// Constant and sinusoidal inputs are periodic; sampled ones are not
    /// assumed to be.
    pub fn is_periodic(&self) -> bool {
        !matches!(self, InputSignal::Sampled { .. })
    }
}
