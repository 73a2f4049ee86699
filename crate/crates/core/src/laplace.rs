//! Numerical inversion of Laplace transforms in the killing rate.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RefractError, Result};

/// Binomial averaging depth of the Euler method.
const EULER_AVERAGING: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    EulerBromwich,
    GaverStehfest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub method: Method,
    pub terms: usize,
    pub precision_target: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self::euler()
    }
}

impl InversionConfig {
    pub fn euler() -> Self {
        Self { method: Method::EulerBromwich, terms: 40, precision_target: 1e-8 }
    }

    pub fn gaver() -> Self {
        Self { method: Method::GaverStehfest, terms: 16, precision_target: 1e-6 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.method {
            Method::EulerBromwich => (20..=60).contains(&self.terms),
            Method::GaverStehfest => (8..=20).contains(&self.terms) && self.terms % 2 == 0,
        };
        if !ok {
            return Err(RefractError::Inversion(format!(
                "{} terms out of range for {:?}",
                self.terms, self.method
            )));
        }
        if !(self.precision_target > 0.0 && self.precision_target < 1.0) {
            return Err(RefractError::Inversion(format!(
                "precision target {} must lie in (0, 1)",
                self.precision_target
            )));
        }
        Ok(())
    }
}

/// Inverse transform at `t` of `f`, a function of the (complex) transform variable.
pub fn invert<F>(f: F, t: f64, cfg: &InversionConfig) -> Result<f64>
where
    F: Fn(Complex64) -> Result<Complex64> + Sync,
{
    cfg.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(RefractError::Inversion(format!("t must be positive, got {t}")));
    }
    match cfg.method {
        Method::EulerBromwich => euler(&f, t, cfg),
        Method::GaverStehfest => gaver(&f, t, cfg.terms),
    }
}

/// Result of inverting with both methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifiedInversion {
    pub value: f64,
    pub cross_check: f64,
    pub tolerance: f64,
}

/// Inverts with `cfg` and cross-checks against the other method, failing on disagreement
/// beyond `max(1e-6, 1e-4 |value|)`.
pub fn invert_verified<F>(f: F, t: f64, cfg: &InversionConfig) -> Result<VerifiedInversion>
where
    F: Fn(Complex64) -> Result<Complex64> + Sync,
{
    let value = invert(&f, t, cfg)?;
    let other = match cfg.method {
        Method::EulerBromwich => InversionConfig::gaver(),
        Method::GaverStehfest => InversionConfig::euler(),
    };
    let cross_check = invert(&f, t, &other)?;
    let tolerance = (1e-4 * value.abs()).max(1e-6);
    if (value - cross_check).abs() > tolerance {
        return Err(RefractError::Inversion(format!(
            "methods disagree at t = {t}: {value} vs {cross_check} (tolerance {tolerance:e})"
        )));
    }
    Ok(VerifiedInversion { value, cross_check, tolerance })
}

fn euler<F>(f: &F, t: f64, cfg: &InversionConfig) -> Result<f64>
where
    F: Fn(Complex64) -> Result<Complex64> + Sync,
{
    let a = (1.0 / cfg.precision_target).ln();
    let n = cfg.terms;
    let m = EULER_AVERAGING;
    let values: Vec<f64> = (0..=n + m)
        .into_par_iter()
        .map(|k| {
            let s = Complex64::new(a, 2.0 * std::f64::consts::PI * k as f64) / (2.0 * t);
            f(s).map(|v| v.re)
        })
        .collect::<Result<_>>()?;

    let mut partial = Vec::with_capacity(n + m + 1);
    let mut acc = 0.5 * values[0];
    partial.push(acc);
    for (k, v) in values.iter().enumerate().skip(1) {
        acc += if k % 2 == 0 { *v } else { -v };
        partial.push(acc);
    }
    let mut binom = 1.0;
    let mut avg = 0.0;
    for j in 0..=m {
        avg += binom * partial[n + j];
        binom = binom * (m - j) as f64 / (j + 1) as f64;
    }
    avg /= 2f64.powi(m as i32);
    let out = (a / 2.0).exp() / t * avg;
    if !out.is_finite() {
        return Err(RefractError::Inversion("non-finite Euler sum".into()));
    }
    Ok(out)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn stehfest_weights(n: usize) -> Vec<f64> {
    let h = n / 2;
    (1..=n)
        .map(|k| {
            let mut s = 0.0;
            for j in (k + 1) / 2..=k.min(h) {
                s += (j as f64).powi(h as i32) * factorial(2 * j)
                    / (factorial(h - j)
                        * factorial(j)
                        * factorial(j - 1)
                        * factorial(k - j)
                        * factorial(2 * j - k));
            }
            if (k + h) % 2 == 0 {
                s
            } else {
                -s
            }
        })
        .collect()
}

fn gaver<F>(f: &F, t: f64, n: usize) -> Result<f64>
where
    F: Fn(Complex64) -> Result<Complex64> + Sync,
{
    let ln2t = std::f64::consts::LN_2 / t;
    let weights = stehfest_weights(n);
    let values: Vec<f64> = (1..=n)
        .into_par_iter()
        .map(|k| f(Complex64::new(k as f64 * ln2t, 0.0)).map(|v| v.re))
        .collect::<Result<_>>()?;
    let out = ln2t * weights.iter().zip(&values).map(|(w, v)| w * v).sum::<f64>();
    if !out.is_finite() {
        return Err(RefractError::Inversion("non-finite Stehfest sum".into()));
    }
    Ok(out)
}
