//! Adaptive Gauss-Kronrod (7/15) quadrature.

use crate::error::{RefractError, Result};

const XK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: usize = 50;

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let d = h * XK[i];
        let s = f(c - d) + f(c + d);
        k += WK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> Result<f64> {
    let (v, err) = kronrod(f, a, b);
    if !v.is_finite() {
        return Err(RefractError::Domain(format!("non-finite integrand on [{a}, {b}]")));
    }
    if err <= tol || (b - a).abs() < 1e-14 * (1.0 + a.abs()) {
        return Ok(v);
    }
    if depth >= MAX_DEPTH {
        return Err(RefractError::Domain(format!(
            "quadrature did not converge on [{a}, {b}]"
        )));
    }
    let m = 0.5 * (a + b);
    Ok(recurse(f, a, m, 0.5 * tol, depth + 1)? + recurse(f, m, b, 0.5 * tol, depth + 1)?)
}

/// Integral of `f` over the finite interval `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return Ok(-integrate(f, b, a, tol)?);
    }
    recurse(&f, a, b, tol, 0)
}

/// Integral over `[a, inf)` through the map `x = a + t / (1 - t)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> Result<f64> {
    integrate(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let s = 1.0 - t;
            let v = f(a + t / s) / (s * s);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        tol,
    )
}
