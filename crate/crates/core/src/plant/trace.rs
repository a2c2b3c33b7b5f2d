use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use super::{Levels, SampledSystem};

/// One sampling instant of a closed-loop run.
///
/// Row `k` carries the level `z_{k−1}` that acted over `[(k−1)τ, kτ)` and the
/// decision `ẑ_{k−1}` taken from reading `r_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub x: DVector<f64>,
    pub x_nominal: DVector<f64>,
    pub y: DVector<f64>,
    /// `None` at `k = 0`, where nothing is read.
    pub reading: Option<DVector<f64>>,
    pub z: f64,
    pub zhat: f64,
    /// `ẑ_{k−2}`, the level the compensation over the last interval used.
    pub zhat_prev: f64,
    pub xhat: DVector<f64>,
    /// `E_k = x_k − x^N(kτ)`.
    pub e: DVector<f64>,
    /// `D_k = x̂_k − x_k`.
    pub d: DVector<f64>,
    pub margin: Option<f64>,
}

impl StepRecord {
    pub(crate) fn initial(system: &SampledSystem, zeta0: f64) -> Self {
        let n = system.plant().state_dim();
        let m = system.plant().output_dim();
        let zero = DVector::zeros(n);
        Self {
            k: 0,
            t: 0.0,
            x: zero.clone(),
            x_nominal: zero.clone(),
            y: DVector::zeros(m),
            reading: None,
            z: zeta0,
            zhat: zeta0,
            zhat_prev: zeta0,
            xhat: zero.clone(),
            e: zero.clone(),
            d: zero,
            margin: None,
        }
    }

    /// Gain applied to the input over the last interval, `z_{k−1}/ẑ_{k−2}`.
    pub fn u_scale(&self) -> f64 {
        self.z / self.zhat_prev
    }

    pub fn detection_correct(&self) -> bool {
        self.zhat == self.z
    }

    pub fn y_nominal(&self, system: &SampledSystem) -> DVector<f64> {
        system.c() * &self.x_nominal
    }

    /// `‖y_k − y^N_k‖`.
    pub fn output_deviation(&self, system: &SampledSystem) -> f64 {
        (system.c() * &self.e).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrace {
    pub tau: f64,
    pub k_fault: Option<usize>,
    pub levels: Levels,
    /// Rows `k = 0..=K`.
    pub records: Vec<StepRecord>,
}

impl ClosedLoopTrace {
    pub fn steps(&self) -> usize {
        self.records.len() - 1
    }

    /// Whether reading `k` was taken while the plant was still nominal,
    /// i.e. `z_{k−1} = ζ0`.
    pub fn is_pre_failure(&self, k: usize) -> bool {
        self.k_fault.is_none_or(|kf| k <= kf)
    }

    pub fn summary(&self, system: &SampledSystem) -> TraceSummary {
        TraceSummary::from_trace(self, system)
    }
}

/// Fraction of `‖E‖`'s post-failure peak below which the error counts as
/// decayed.
pub const DECAY_FRACTION: f64 = 0.01;

/// Per-run statistics reported by the scenario runner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub detections_pre: usize,
    pub errors_pre: usize,
    pub detections_post: usize,
    pub errors_post: usize,
    /// Wrong detections over all readings.
    pub error_rate: f64,
    pub error_rate_pre: Option<f64>,
    pub error_rate_post: Option<f64>,
    /// First reading with a wrong decision.
    pub first_error: Option<usize>,
    /// `max ‖y_k − y^N_k‖` over `k ≤ k_F` (all `k` without a fault).
    pub peak_deviation_pre: f64,
    /// `max ‖y_k − y^N_k‖` over `k > k_F`.
    pub peak_deviation_post: Option<f64>,
    /// Time from the failure until `‖E_k‖` drops below
    /// [`DECAY_FRACTION`] of its post-failure peak and stays there.
    pub e_decay_time: Option<f64>,
    pub final_e_norm: f64,
}

impl TraceSummary {
    pub fn from_trace(trace: &ClosedLoopTrace, system: &SampledSystem) -> Self {
        let (mut det_pre, mut err_pre, mut det_post, mut err_post) = (0, 0, 0, 0);
        let mut peak_pre: f64 = 0.0;
        let mut peak_post: Option<f64> = None;
        for rec in &trace.records[1..] {
            let wrong = usize::from(!rec.detection_correct());
            let dev = rec.output_deviation(system);
            if trace.is_pre_failure(rec.k) {
                det_pre += 1;
                err_pre += wrong;
                peak_pre = peak_pre.max(dev);
            } else {
                det_post += 1;
                err_post += wrong;
                peak_post = Some(peak_post.map_or(dev, |p| p.max(dev)));
            }
        }
        let first_error = trace.records[1..]
            .iter()
            .find(|r| !r.detection_correct())
            .map(|r| r.k);
        let rate = |e: usize, n: usize| (n > 0).then(|| e as f64 / n as f64);

        let e_decay_time = trace.k_fault.and_then(|kf| {
            let post = &trace.records[(kf + 1).min(trace.records.len())..];
            let peak = post.iter().map(|r| r.e.norm()).fold(0.0, f64::max);
            if peak == 0.0 {
                return Some(0.0);
            }
            let threshold = DECAY_FRACTION * peak;
            // Last index above the threshold; decay happens right after it.
            let last_above = post.iter().rposition(|r| r.e.norm() > threshold)?;
            let settled = post.get(last_above + 1)?;
            Some(settled.t - kf as f64 * trace.tau)
        });

        TraceSummary {
            steps: trace.steps(),
            detections_pre: det_pre,
            errors_pre: err_pre,
            detections_post: det_post,
            errors_post: err_post,
            error_rate: (err_pre + err_post) as f64 / trace.steps().max(1) as f64,
            error_rate_pre: rate(err_pre, det_pre),
            error_rate_post: rate(err_post, det_post),
            first_error,
            peak_deviation_pre: peak_pre,
            peak_deviation_post: peak_post,
            e_decay_time,
            final_e_norm: trace.records.last().map_or(0.0, |r| r.e.norm()),
        }
    }
}

/// Column order of the trace CSV, schema version 1.
pub const TRACE_CSV_HEADER: &str = "k,t,y,r,zhat,z,e_norm,d_norm";

fn join(v: &DVector<f64>) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";")
}

/// Writes one row per step. Vector outputs are `;`-joined; `r` is empty at
/// `k = 0`. Numbers use Rust's shortest round-trip formatting.
pub fn write_trace_csv<W: Write>(trace: &ClosedLoopTrace, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    for r in &trace.records {
        writeln!(
            w,
            "{},{:?},{},{},{:?},{:?},{:?},{:?}",
            r.k,
            r.t,
            join(&r.y),
            r.reading.as_ref().map(join).unwrap_or_default(),
            r.zhat,
            r.z,
            r.e.norm(),
            r.d.norm()
        )?;
    }
    Ok(())
}
