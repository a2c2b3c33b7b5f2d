//! Dense kernels: matrix exponential, the input moment
//! `M_{τ,k} = ∫_0^τ e^{sA} B f(kτ − s) ds`, and the complementary error
//! function.

mod expm;
pub mod quad;
mod signal;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use expm::mat_exp;
pub use signal::InputSignal;

/// Condition number above which `A` is treated as singular on the
/// constant-input closed form.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(
        "quadrature did not converge: achieved {achieved:e} against tolerance {tolerance:e} \
         with {panels} panels"
    )]
    QuadratureNonConvergence {
        achieved: f64,
        tolerance: f64,
        panels: usize,
    },
}

pub(crate) fn ensure_finite<R: nalgebra::Dim, C: nalgebra::Dim, S>(
    m: &nalgebra::Matrix<f64, R, C, S>,
) -> Result<(), LinalgError>
where
    S: nalgebra::RawStorage<f64, R, C>,
{
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

/// Standard complementary error function, `erfc(x) = 2/√π ∫_x^∞ e^{-s²} ds`.
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Computes `M_{τ,k}`, the contribution of the input over the k-th sampling
/// interval to the state at `kτ`.
///
/// Constant inputs use the closed form `c (e^{τA} − I) A^{-1} B` when `A` is
/// well conditioned; every other case goes through adaptive quadrature with
/// absolute tolerance 1e-10.
pub fn input_moment(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    f: &InputSignal,
    tau: f64,
    k: usize,
) -> Result<DVector<f64>, LinalgError> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(LinalgError::InvalidArgument(format!(
            "sampling time must be > 0, got {tau}"
        )));
    }
    if k == 0 {
        return Err(LinalgError::InvalidArgument(
            "step index must be >= 1".into(),
        ));
    }
    MomentIntegrator::new(a, b)?.moment(f, tau, k as f64 * tau)
}

/// Integrates `∫_0^h e^{sA} B f(t_end − s) ds`, the input contribution over
/// `[t_end − h, t_end]`.
///
/// Holds the expensive pieces (`A^{-1}B`, and `e^{sA}B` at previously visited
/// quadrature nodes) so that many moments of the same plant are cheap.
#[derive(Debug, Clone)]
pub struct MomentIntegrator {
    a: DMatrix<f64>,
    b: DVector<f64>,
    a_inv_b: Option<DVector<f64>>,
    node_cache: HashMap<u64, DVector<f64>>,
}

const NODE_CACHE_LIMIT: usize = 1 << 16;

impl MomentIntegrator {
    pub fn new(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if b.len() != a.nrows() {
            return Err(LinalgError::Dimension(format!(
                "B has {} rows, A is {}x{}",
                b.len(),
                a.nrows(),
                a.ncols()
            )));
        }
        ensure_finite(a)?;
        ensure_finite(b)?;
        Ok(Self {
            a: a.clone(),
            b: b.clone(),
            a_inv_b: well_conditioned_solve(a, b),
            node_cache: HashMap::new(),
        })
    }

    /// Whether the constant-input closed form is available.
    pub fn has_closed_form(&self) -> bool {
        self.a_inv_b.is_some()
    }

    pub fn moment(
        &mut self,
        f: &InputSignal,
        h: f64,
        t_end: f64,
    ) -> Result<DVector<f64>, LinalgError> {
        let n = self.b.len();
        if h == 0.0 || self.b.iter().all(|&v| v == 0.0) {
            return Ok(DVector::zeros(n));
        }
        if let (Some(c), Some(a_inv_b)) = (f.constant_level(), self.a_inv_b.as_ref()) {
            if c == 0.0 {
                return Ok(DVector::zeros(n));
            }
            let mut e = mat_exp(&self.a, h)?;
            for i in 0..n {
                e[(i, i)] -= 1.0;
            }
            return Ok(e * a_inv_b * c);
        }
        self.quadrature(f, h, t_end)
    }

    /// Always integrates numerically, skipping the closed form.
    pub fn quadrature(
        &mut self,
        f: &InputSignal,
        h: f64,
        t_end: f64,
    ) -> Result<DVector<f64>, LinalgError> {
        if !(h.is_finite() && h >= 0.0) {
            return Err(LinalgError::InvalidArgument(format!(
                "integration length must be >= 0, got {h}"
            )));
        }
        f.validate()?;
        if self.node_cache.len() > NODE_CACHE_LIMIT {
            self.node_cache.clear();
        }
        let a = &self.a;
        let b = &self.b;
        let cache = &mut self.node_cache;
        let integral = quad::integrate(
            |s| {
                let propagated = cache
                    .entry(s.to_bits())
                    .or_insert_with(|| expm::expm_unchecked(&(a * s)) * b);
                &*propagated * f.value(t_end - s)
            },
            0.0,
            h,
            quad::DEFAULT_ABS_TOL,
            quad::DEFAULT_MAX_PANELS,
        )?;
        Ok(integral.value)
    }
}

/// `A^{-1}B` when the 1-norm condition number of `A` is below
/// [`SINGULAR_CONDITION`].
fn well_conditioned_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let inv = a.clone().try_inverse()?;
    let cond = expm::one_norm(a) * expm::one_norm(&inv);
    if !cond.is_finite() || cond > SINGULAR_CONDITION {
        return None;
    }
    a.clone().lu().solve(b)
}
