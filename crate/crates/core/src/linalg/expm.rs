//! Matrix exponential by scaling and squaring around diagonal Padé
//! approximants of degree 3, 5, 7, 9 and 13.
//!
//! The degree is picked from the 1-norm of `tA` using the backward-error
//! thresholds θ_m of Higham (2005). Above θ_13 the argument is scaled by a
//! power of two, the degree-13 approximant is evaluated, and the result is
//! squared back.

use nalgebra::DMatrix;

use super::{ensure_finite, LinalgError};

const THETA_3: f64 = 1.495_585_217_958_292e-2;
const THETA_5: f64 = 2.539_398_330_063_230e-1;
const THETA_7: f64 = 9.504_178_996_162_932e-1;
const THETA_9: f64 = 2.097_847_961_257_068e0;
const THETA_13: f64 = 5.371_920_351_148_152e0;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const PADE_9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Computes `e^{tA}`.
///
/// `a` must be square with finite entries and `t` must be finite and
/// non-negative.
pub fn mat_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    ensure_finite(a)?;
    if !t.is_finite() || t < 0.0 {
        return Err(LinalgError::InvalidArgument(format!(
            "matrix exponential time must be finite and >= 0, got {t}"
        )));
    }
    Ok(expm_unchecked(&(a * t)))
}

/// Computes `e^X` without validating the input. Callers guarantee `x` is
/// square and finite.
pub(crate) fn expm_unchecked(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = one_norm(x);
    if norm == 0.0 {
        return DMatrix::identity(n, n);
    }

    let x2 = x * x;
    if norm <= THETA_3 {
        return pade_low(x, &x2, &PADE_3);
    }
    if norm <= THETA_5 {
        return pade_low(x, &x2, &PADE_5);
    }
    if norm <= THETA_7 {
        return pade_low(x, &x2, &PADE_7);
    }
    if norm <= THETA_9 {
        return pade_low(x, &x2, &PADE_9);
    }

    let squarings = (norm / THETA_13).log2().ceil().max(0.0) as i32;
    let (scaled, x2) = if squarings > 0 {
        let s = x * 2f64.powi(-squarings);
        let s2 = &s * &s;
        (s, s2)
    } else {
        (x.clone(), x2)
    };
    let mut r = pade_13(&scaled, &x2);
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Degree-m approximant with m in {3, 5, 7, 9}, evaluated with even powers.
fn pade_low(x: &DMatrix<f64>, x2: &DMatrix<f64>, b: &[f64]) -> DMatrix<f64> {
    let n = x.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut odd = &eye * b[1];
    let mut even = &eye * b[0];
    let mut power = eye;
    for j in 1..b.len() / 2 {
        power = &power * x2;
        odd += &power * b[2 * j + 1];
        even += &power * b[2 * j];
    }
    let u = x * odd;
    solve_pade(&u, &even)
}

fn pade_13(x: &DMatrix<f64>, x2: &DMatrix<f64>) -> DMatrix<f64> {
    let b = &PADE_13;
    let n = x.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let x4 = x2 * x2;
    let x6 = &x4 * x2;

    let u_inner = &x6 * b[13] + &x4 * b[11] + x2 * b[9];
    let u_outer = &x6 * &u_inner + &x6 * b[7] + &x4 * b[5] + x2 * b[3] + &eye * b[1];
    let u = x * u_outer;

    let v_inner = &x6 * b[12] + &x4 * b[10] + x2 * b[8];
    let v = &x6 * v_inner + &x6 * b[6] + &x4 * b[4] + x2 * b[2] + &eye * b[0];
    solve_pade(&u, &v)
}

/// Solves `(V - U) R = (V + U)`.
fn solve_pade(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let p = v + u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular within the θ_m bounds")
}

pub(crate) fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_gives_identity() {
        let e = mat_exp(&DMatrix::zeros(3, 3), 1.0).unwrap();
        assert_eq!(e, DMatrix::identity(3, 3));
    }

    #[test]
    fn diagonal_exponential() {
        let a = DMatrix::from_diagonal(&nalgebra::dvector![-1.0, -2.0]);
        let e = mat_exp(&a, std::f64::consts::LN_2).unwrap();
        assert!((e[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((e[(1, 1)] - 0.25).abs() < 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
        assert_eq!(e[(1, 0)], 0.0);
    }

    #[test]
    fn every_pade_degree_matches_scalar_exp() {
        // 1x1 inputs land in each θ band in turn.
        for &x in &[1e-3, 0.2, 0.9, 2.0, 5.0, 40.0, -40.0] {
            let a = DMatrix::from_element(1, 1, x);
            let e = mat_exp(&a, 1.0).unwrap()[(0, 0)];
            assert!((e - x.exp()).abs() <= 1e-13 * x.exp(), "x = {x}");
        }
    }

    #[test]
    fn nilpotent_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 0.0, 0.0]);
        let e = mat_exp(&a, 2.0).unwrap();
        assert!((e[(0, 1)] - 6.0).abs() < 1e-12);
        assert!((e[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            mat_exp(&DMatrix::zeros(2, 3), 1.0),
            Err(LinalgError::NotSquare { rows: 2, cols: 3 })
        ));
        let mut a = DMatrix::zeros(2, 2);
        a[(1, 0)] = f64::NAN;
        assert!(matches!(mat_exp(&a, 1.0), Err(LinalgError::NonFinite)));
        assert!(mat_exp(&DMatrix::zeros(2, 2), -1.0).is_err());
    }
}
