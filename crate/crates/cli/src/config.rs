//! Declarative scenario files (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use onestate::design::{tau_opt_constant, edp_sweep_periodic, DesignSpec, TauGrid};
use onestate::plant::{Alignment, DisturbanceProfile, Levels, LtiPlant, PlantRows};
use onestate::InputSignal;

use crate::CliError;

/// Version of the scenario file format and of every CSV/JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "schema_default")]
    pub schema: u32,
    pub plant: PlantConfig,
    pub input: InputSignal,
    #[serde(default)]
    pub disturbance: DisturbanceConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub horizon: HorizonConfig,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub run: RunConfig,
}

fn schema_default() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantConfig {
    Builtin { builtin: BuiltinPlant },
    Explicit {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinPlant {
    FlightF4e,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    pub zeta0: f64,
    pub zeta1: f64,
    /// `T_F`; no failure when absent.
    pub fault_time: Option<f64>,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self {
            zeta0: 1.0,
            zeta1: 0.5,
            fault_time: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma2: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma2: 2.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSetting {
    Fixed(f64),
    /// The literal `"auto-design"`.
    Auto(String),
}

pub const AUTO_DESIGN: &str = "auto-design";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    /// `T`.
    pub duration: f64,
    pub tau: TauSetting,
    #[serde(default)]
    pub align: Alignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub epsilon: f64,
    pub window: f64,
    pub tau_grid: GridConfig,
    pub sigma2_grid: GridConfig,
    /// Grid of the periodic-input EDP sweep.
    pub periodic_grid: GridConfig,
    /// EDP above which a period counts as suitable in the periodic sweep.
    pub threshold: f64,
    /// Half-width of the zoomed EDP table around `τ_opt`, relative to it.
    pub zoom: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            window: 20.0,
            tau_grid: GridConfig {
                lo: 0.005,
                hi: 1.5,
                points: 2000,
            },
            sigma2_grid: GridConfig {
                lo: 1.0,
                hi: 50.0,
                points: 50,
            },
            periodic_grid: GridConfig {
                lo: 0.025,
                hi: 1.0,
                points: 40,
            },
            threshold: 0.8,
            zoom: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Trace,
    MonteCarlo,
    Design,
    Sweep,
    ValidateDep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    pub trials: usize,
    /// Sub-steps per sampling interval in `trace_dense.csv`.
    pub dense_refine: usize,
    /// Steps checked by `validate-dep`; all steps of the horizon when absent.
    pub validate_steps: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Trace,
            trials: 200,
            dense_refine: 10,
            validate_steps: None,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if cfg.schema != SCHEMA_VERSION {
            return Err(config_err(format!(
                "schema: unsupported version {} (expected {SCHEMA_VERSION})",
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn plant(&self) -> Result<LtiPlant, CliError> {
        self.input
            .validate()
            .map_err(|e| config_err(format!("input: {e}")))?;
        match &self.plant {
            PlantConfig::Builtin {
                builtin: BuiltinPlant::FlightF4e,
            } => Ok(LtiPlant::flight_f4e(self.input.clone())),
            PlantConfig::Explicit { a, b, c } => LtiPlant::try_from(PlantRows {
                a: a.clone(),
                b: b.clone(),
                c: c.clone(),
                input: self.input.clone(),
            })
            .map_err(|e| config_err(format!("plant: {e}"))),
        }
    }

    pub fn levels(&self) -> Result<Levels, CliError> {
        let d = &self.disturbance;
        let levels =
            Levels::new(d.zeta0, d.zeta1).map_err(|e| config_err(format!("disturbance: {e}")))?;
        if levels.zeta1 >= levels.zeta0 {
            return Err(config_err(format!(
                "disturbance: zeta1 must be strictly below zeta0 (got {} and {})",
                d.zeta1, d.zeta0
            )));
        }
        Ok(levels)
    }

    pub fn sigma2(&self) -> Result<f64, CliError> {
        let s2 = self.noise.sigma2;
        if s2.is_finite() && s2 >= 0.0 {
            Ok(s2)
        } else {
            Err(config_err(format!("noise.sigma2: must be >= 0, got {s2}")))
        }
    }

    fn grid(g: &GridConfig, field: &str) -> Result<TauGrid, CliError> {
        TauGrid::new(g.lo, g.hi, g.points).map_err(|e| config_err(format!("{field}: {e}")))
    }

    /// The design spec at the configured noise level. A noiseless scenario
    /// is designed as if `σ²` were tiny, which admits every period.
    pub fn design_spec(&self) -> Result<DesignSpec, CliError> {
        let d = &self.design;
        let spec = DesignSpec {
            epsilon: d.epsilon,
            window: d.window,
            sigma2: self.sigma2()?.max(f64::MIN_POSITIVE),
            levels: self.levels()?,
            tau_grid: Self::grid(&d.tau_grid, "design.tau_grid")?,
        };
        spec.validate()
            .map_err(|e| config_err(format!("design: {e}")))?;
        if !(d.zoom > 0.0 && d.zoom.is_finite()) {
            return Err(config_err("design.zoom: must be > 0"));
        }
        Ok(spec)
    }

    pub fn periodic_spec(&self) -> Result<DesignSpec, CliError> {
        Ok(DesignSpec {
            tau_grid: Self::grid(&self.design.periodic_grid, "design.periodic_grid")?,
            ..self.design_spec()?
        })
    }

    pub fn sigma2_grid(&self) -> Result<Vec<f64>, CliError> {
        let g = Self::grid(&self.design.sigma2_grid, "design.sigma2_grid")?;
        Ok(g.points())
    }

    /// Resolves `horizon.tau`; `"auto-design"` runs the design for the
    /// input class and snaps the result so that `K τ = T`.
    pub fn resolve_tau(&self, plant: &LtiPlant) -> Result<ResolvedTau, CliError> {
        let duration = self.horizon.duration;
        if !(duration.is_finite() && duration > 0.0) {
            return Err(config_err(format!(
                "horizon.duration: must be > 0, got {duration}"
            )));
        }
        match &self.horizon.tau {
            TauSetting::Fixed(t) if t.is_finite() && *t > 0.0 => Ok(ResolvedTau {
                tau: *t,
                designed: None,
            }),
            TauSetting::Fixed(t) => Err(config_err(format!("horizon.tau: must be > 0, got {t}"))),
            TauSetting::Auto(s) if s == AUTO_DESIGN => {
                let designed = if plant.input().constant_level().is_some() {
                    let r = tau_opt_constant(&self.design_spec()?, plant)?;
                    r.tau_opt.ok_or(CliError::Infeasible(
                        "auto-design: no sampling period meets the EDP constraint".into(),
                    ))?
                } else if plant.input().is_periodic() {
                    edp_sweep_periodic(&self.periodic_spec()?, plant, self.design.threshold)?.argmax
                } else {
                    return Err(config_err(
                        "horizon.tau: auto-design needs a constant or periodic input",
                    ));
                };
                // The largest grid-aligned period not above the design
                // choice would break the EDP constraint; take the smallest
                // one at or above it instead.
                let steps = (duration / designed).floor().max(1.0);
                Ok(ResolvedTau {
                    tau: duration / steps,
                    designed: Some(designed),
                })
            }
            TauSetting::Auto(s) => Err(config_err(format!(
                "horizon.tau: expected a number or \"{AUTO_DESIGN}\", got \"{s}\""
            ))),
        }
    }

    pub fn profile(&self, tau: f64) -> Result<DisturbanceProfile, CliError> {
        DisturbanceProfile::from_times(
            self.levels()?,
            self.disturbance.fault_time,
            self.horizon.duration,
            tau,
            self.horizon.align,
        )
        .map_err(|e| config_err(format!("horizon: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedTau {
    pub tau: f64,
    /// Output of the design before grid alignment, for `auto-design`.
    pub designed: Option<f64>,
}
