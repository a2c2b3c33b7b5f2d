//! Plant model, failure profile, measurement noise and the closed loop.

mod sim;
mod trace;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, InputSignal, LinalgError, MomentIntegrator};
use crate::{Error, Result};

pub use sim::{
    dense_outputs, nominal_trace, simulate, simulate_one_state, step_closed_loop,
    uncompensated_trace, DenseSample, LoopCarry,
};
pub use trace::{write_trace_csv, ClosedLoopTrace, StepRecord, TraceSummary, TRACE_CSV_HEADER};

/// `ẋ = Ax + B z (f + u)`, `y = Cx`, with a single scalar input channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PlantRows", try_from = "PlantRows")]
pub struct LtiPlant {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DMatrix<f64>,
    input: InputSignal,
}

impl LtiPlant {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DMatrix<f64>,
        input: InputSignal,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(LinalgError::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            }
            .into());
        }
        if n == 0 || c.nrows() == 0 {
            return Err(Error::InvalidParameter(
                "state and output dimensions must be >= 1".into(),
            ));
        }
        if b.len() != n || c.ncols() != n {
            return Err(LinalgError::Dimension(format!(
                "A is {n}x{n}, B has {} rows, C is {}x{}",
                b.len(),
                c.nrows(),
                c.ncols()
            ))
            .into());
        }
        linalg::ensure_finite(&a)?;
        linalg::ensure_finite(&b)?;
        linalg::ensure_finite(&c)?;
        input.validate()?;
        Ok(Self { a, b, c, input })
    }

    /// Longitudinal short-period mode of an F-4E with horizontal canards in
    /// supersonic flight. States are normal acceleration, pitch rate and
    /// elevator deflection; the output is the C* response.
    pub fn flight_f4e(input: InputSignal) -> Self {
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                -0.5162, 26.96, 178.9, //
                -0.6896, -1.225, -30.38, //
                0.0, 0.0, -14.0,
            ],
        );
        let b = DVector::from_column_slice(&[-175.6, 0.0, 14.0]);
        let c = DMatrix::from_row_slice(1, 3, &[1.0, 12.43, 0.0]);
        Self::new(a, b, c, input).expect("flight matrices are consistent")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn input(&self) -> &InputSignal {
        &self.input
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn with_input(&self, input: InputSignal) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), self.c.clone(), input)
    }
}

/// Row-major serialized form of [`LtiPlant`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantRows {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<Vec<f64>>,
    pub input: InputSignal,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(LinalgError::Dimension("ragged matrix rows".into()).into());
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        cols,
        rows.iter().flatten().copied(),
    ))
}

impl From<LtiPlant> for PlantRows {
    fn from(p: LtiPlant) -> Self {
        PlantRows {
            a: to_rows(&p.a),
            b: p.b.iter().copied().collect(),
            c: to_rows(&p.c),
            input: p.input,
        }
    }
}

impl TryFrom<PlantRows> for LtiPlant {
    type Error = Error;
    fn try_from(r: PlantRows) -> Result<Self> {
        LtiPlant::new(
            from_rows(&r.a)?,
            DVector::from_vec(r.b),
            from_rows(&r.c)?,
            r.input,
        )
    }
}

/// The two gain levels: nominal `zeta0` and faulty `zeta1`, `0 < ζ1 ≤ ζ0`.
///
/// Equal levels are admitted here only so the degenerate limit of the
/// analysis can be evaluated; a [`DisturbanceProfile`] requires `ζ1 < ζ0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Levels {
    pub zeta0: f64,
    pub zeta1: f64,
}

impl Levels {
    pub fn new(zeta0: f64, zeta1: f64) -> Result<Self> {
        if !(zeta0.is_finite() && zeta1.is_finite() && zeta1 > 0.0 && zeta1 <= zeta0) {
            return Err(Error::InvalidParameter(format!(
                "levels need 0 < zeta1 <= zeta0, got zeta0 = {zeta0}, zeta1 = {zeta1}"
            )));
        }
        Ok(Self { zeta0, zeta1 })
    }

    /// `ζ0 = 1`, `ζ1 = 1/2`: a 50% loss of effectiveness.
    pub fn half_loss() -> Self {
        Self {
            zeta0: 1.0,
            zeta1: 0.5,
        }
    }

    pub fn other(&self, level: f64) -> f64 {
        if level == self.zeta0 {
            self.zeta1
        } else {
            self.zeta0
        }
    }

    pub fn contains(&self, level: f64) -> bool {
        level == self.zeta0 || level == self.zeta1
    }
}

/// How time instants are mapped to the sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    /// Instants must be multiples of τ (to 1e-9); anything else is rejected.
    #[default]
    Strict,
    /// Instants are rounded to the nearest multiple of τ.
    Nearest,
}

const GRID_TOL: f64 = 1e-9;

impl Alignment {
    /// Index `k` with `kτ ≈ t`.
    pub fn to_step(self, what: &'static str, time: f64, tau: f64) -> Result<usize> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{what} must be finite and >= 0, got {time}"
            )));
        }
        let k = (time / tau).round();
        if self == Alignment::Strict && (k * tau - time).abs() > GRID_TOL * time.max(1.0) {
            return Err(Error::OffGrid { what, time, tau });
        }
        Ok(k as usize)
    }
}

/// Single irreversible failure: `z_k = ζ0` for `k < k_fault`, `ζ1` after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceProfile {
    levels: Levels,
    k_fault: Option<usize>,
    total_steps: usize,
}

impl DisturbanceProfile {
    pub fn new(levels: Levels, k_fault: Option<usize>, total_steps: usize) -> Result<Self> {
        let levels = Levels::new(levels.zeta0, levels.zeta1)?;
        if levels.zeta1 >= levels.zeta0 {
            return Err(Error::InvalidParameter(format!(
                "a failure profile needs zeta1 < zeta0, got {} and {}",
                levels.zeta1, levels.zeta0
            )));
        }
        if total_steps == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1 step".into()));
        }
        if let Some(kf) = k_fault {
            if kf >= total_steps {
                return Err(Error::InvalidParameter(format!(
                    "fault step {kf} is outside the horizon of {total_steps} steps"
                )));
            }
        }
        Ok(Self {
            levels,
            k_fault,
            total_steps,
        })
    }

    /// Builds the profile from times: horizon `T`, optional failure time
    /// `T_F`, and sampling period `τ`.
    pub fn from_times(
        levels: Levels,
        fault_time: Option<f64>,
        duration: f64,
        tau: f64,
        align: Alignment,
    ) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling time must be > 0, got {tau}"
            )));
        }
        let total = align.to_step("horizon", duration, tau)?;
        let k_fault = fault_time
            .map(|t| align.to_step("failure time", t, tau))
            .transpose()?;
        Self::new(levels, k_fault, total)
    }

    pub fn levels(&self) -> Levels {
        self.levels
    }
    pub fn k_fault(&self) -> Option<usize> {
        self.k_fault
    }
    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// `z_k`, the level active on `[kτ, (k+1)τ)`.
    pub fn level(&self, k: usize) -> f64 {
        match self.k_fault {
            Some(kf) if k >= kf => self.levels.zeta1,
            _ => self.levels.zeta0,
        }
    }
}

/// Additive Gaussian measurement noise `N(0, σ²)` on every reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma2: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma2: f64, seed: u64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be finite and >= 0, got {sigma2}"
            )));
        }
        Ok(Self { sigma2, seed })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn stream(&self) -> NoiseStream {
        NoiseStream::new(self.sigma(), self.seed)
    }
}

/// ChaCha8 stream seeded by `seed_from_u64`, one standard normal draw per
/// output component per reading, scaled by σ.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    sigma: f64,
}

impl NoiseStream {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            sigma,
        }
    }

    /// Independent stream `stream` of the same seed.
    pub fn with_stream(sigma: f64, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, sigma }
    }

    pub fn next(&mut self, m: usize) -> DVector<f64> {
        DVector::from_fn(m, |_, _| {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            self.sigma * n
        })
    }

    pub fn next_scalar(&mut self) -> f64 {
        let n: f64 = StandardNormal.sample(&mut self.rng);
        self.sigma * n
    }
}

#[derive(Debug, Clone)]
enum Moments {
    Constant(DVector<f64>),
    /// Entry `k - 1` holds `M_{τ,k}`.
    PerStep(Vec<DVector<f64>>),
}

/// The plant discretized at period `τ`: `e^{τA}` and the moments `M_{τ,k}`
/// for `k = 1..=horizon`.
#[derive(Debug, Clone)]
pub struct SampledSystem {
    plant: LtiPlant,
    tau: f64,
    phi: DMatrix<f64>,
    moments: Moments,
    horizon: usize,
}

impl SampledSystem {
    pub fn new(plant: &LtiPlant, tau: f64, horizon: usize) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling time must be > 0, got {tau}"
            )));
        }
        let phi = linalg::mat_exp(plant.a(), tau)?;
        let mut integrator = MomentIntegrator::new(plant.a(), plant.b())?;
        let moments = if plant.input().constant_level().is_some() {
            Moments::Constant(integrator.moment(plant.input(), tau, tau)?)
        } else {
            let per_step = (1..=horizon)
                .map(|k| integrator.moment(plant.input(), tau, k as f64 * tau))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Moments::PerStep(per_step)
        };
        Ok(Self {
            plant: plant.clone(),
            tau,
            phi,
            moments,
            horizon,
        })
    }

    pub fn plant(&self) -> &LtiPlant {
        &self.plant
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    /// `e^{τA}`.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn c(&self) -> &DMatrix<f64> {
        self.plant.c()
    }

    /// `M_{τ,k}`; constant inputs answer for every `k >= 1`.
    pub fn moment(&self, k: usize) -> Result<&DVector<f64>> {
        if k == 0 {
            return Err(Error::InvalidParameter("moment index must be >= 1".into()));
        }
        match &self.moments {
            Moments::Constant(m) => Ok(m),
            Moments::PerStep(v) => v.get(k - 1).ok_or(Error::BeyondHorizon {
                k,
                horizon: self.horizon,
            }),
        }
    }

    /// `C M_{τ,k}` for a scalar output.
    pub fn output_moment(&self, k: usize) -> Result<f64> {
        self.require_scalar()?;
        Ok(self.c().row(0).dot(&self.moment(k)?.transpose()))
    }

    pub(crate) fn require_scalar(&self) -> Result<()> {
        match self.plant.output_dim() {
            1 => Ok(()),
            m => Err(Error::ScalarOutputRequired(m)),
        }
    }
}
