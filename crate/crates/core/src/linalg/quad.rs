//! Globally adaptive Gauss-Kronrod (7/15) quadrature for vector integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DVector;

use super::LinalgError;

/// Default absolute tolerance for moment integrals.
pub const DEFAULT_ABS_TOL: f64 = 1e-10;
/// Default cap on the number of panels (2^20).
pub const DEFAULT_MAX_PANELS: usize = 1 << 20;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Result of an adaptive integration.
#[derive(Debug, Clone)]
pub struct Integral {
    pub value: DVector<f64>,
    /// Sum of per-panel |K15 - G7| estimates (max-norm over components).
    pub abs_error: f64,
    pub panels: usize,
}

struct Panel {
    lo: f64,
    hi: f64,
    value: DVector<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F>(f: &mut F, lo: f64, hi: f64) -> Panel
where
    F: FnMut(f64) -> DVector<f64>,
{
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = &fc * WGK[7];
    let mut gauss = &fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let sum = f(center - dx) + f(center + dx);
        kronrod.axpy(WGK[j], &sum, 1.0);
        if j % 2 == 1 {
            gauss.axpy(WG[j / 2], &sum, 1.0);
        }
    }
    kronrod *= half;
    gauss *= half;
    let error = (&kronrod - &gauss).amax();
    Panel {
        lo,
        hi,
        value: kronrod,
        error,
    }
}

/// Integrates `f` over `[lo, hi]` until the summed error estimate drops to
/// `abs_tol`. Exceeding `max_panels` is reported as
/// [`LinalgError::QuadratureNonConvergence`] with the achieved estimate.
pub fn integrate<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    abs_tol: f64,
    max_panels: usize,
) -> Result<Integral, LinalgError>
where
    F: FnMut(f64) -> DVector<f64>,
{
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(LinalgError::InvalidArgument(
            "integration limits must be finite".into(),
        ));
    }
    let first = gk15(&mut f, lo, hi);
    if !first.value.iter().all(|v| v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let mut total_error = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);

    while total_error > abs_tol {
        if heap.len() >= max_panels {
            return Err(LinalgError::QuadratureNonConvergence {
                achieved: total_error,
                tolerance: abs_tol,
                panels: heap.len(),
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            // Panel cannot be split further in floating point.
            heap.push(worst);
            return Err(LinalgError::QuadratureNonConvergence {
                achieved: total_error,
                tolerance: abs_tol,
                panels: heap.len(),
            });
        }
        let left = gk15(&mut f, worst.lo, mid);
        let right = gk15(&mut f, mid, worst.hi);
        total_error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }

    // Sum in interval order so the result does not depend on heap layout.
    let mut panels = heap.into_vec();
    panels.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let count = panels.len();
    let mut value = DVector::zeros(panels[0].value.len());
    let mut error = 0.0;
    for p in &panels {
        value += &p.value;
        error += p.error;
    }
    Ok(Integral {
        value,
        abs_error: error,
        panels: count,
    })
}
