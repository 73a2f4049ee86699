//! Sums of complex exponentials and their exact integrals.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{RefractError, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `sum_k coeff_k * exp(rate_k * (v - anchor))`.
///
/// The anchor keeps exponents moderate when the sum is only used near it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpSum {
    pub anchor: f64,
    pub terms: Vec<(Complex64, Complex64)>,
}

impl ExpSum {
    pub fn new(anchor: f64) -> Self {
        Self { anchor, terms: Vec::new() }
    }

    pub fn from_terms(anchor: f64, terms: Vec<(Complex64, Complex64)>) -> Self {
        Self { anchor, terms }
    }

    /// Push `coeff * exp(rate * v)` re-expressed around the anchor.
    pub fn push_absolute(&mut self, coeff: Complex64, rate: Complex64) {
        self.terms.push((coeff * (rate * self.anchor).exp(), rate));
    }

    /// Push `coeff * exp(rate * (v - anchor))`.
    pub fn push(&mut self, coeff: Complex64, rate: Complex64) {
        self.terms.push((coeff, rate));
    }

    pub fn eval(&self, v: f64) -> Complex64 {
        let d = v - self.anchor;
        self.terms.iter().map(|(c, r)| c * (r * d).exp()).sum()
    }

    pub fn derivative(&self) -> Self {
        Self {
            anchor: self.anchor,
            terms: self.terms.iter().map(|(c, r)| (c * r, *r)).collect(),
        }
    }

    /// Multiply every term by `exp(s * v)`.
    pub fn tilt(&self, s: f64) -> Self {
        let shift = (s * self.anchor).exp();
        Self {
            anchor: self.anchor,
            terms: self
                .terms
                .iter()
                .map(|(c, r)| (c * shift, r + s))
                .collect(),
        }
    }

    /// Exact integral over `[lo, hi]`; either end may be infinite when the
    /// corresponding exponentials decay.
    pub fn integrate(&self, lo: f64, hi: f64) -> Result<Complex64> {
        if hi <= lo {
            return Ok(ZERO);
        }
        let mut total = ZERO;
        for &(c, r) in &self.terms {
            if c == ZERO {
                continue;
            }
            total += c * int_exp(r, lo - self.anchor, hi - self.anchor)?;
        }
        Ok(total)
    }
}

/// `(1 - exp(-x)) / x`, continuous at 0.
pub fn phi1(x: Complex64) -> Complex64 {
    if x.norm() < 1e-2 {
        // Taylor to x^6; truncation below 1e-18
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = term;
        for k in 2..=8 {
            term *= -x / k as f64;
            sum += term;
        }
        sum
    } else {
        (1.0 - (-x).exp()) / x
    }
}

/// `int_a^b exp(c u) du` with `a <= b`, stable for small `c` and for
/// infinite endpoints where the integrand decays.
pub fn int_exp(c: Complex64, a: f64, b: f64) -> Result<Complex64> {
    if b <= a {
        return Ok(ZERO);
    }
    match (a.is_finite(), b.is_finite()) {
        (true, true) => {
            let h = b - a;
            if c.re >= 0.0 {
                Ok((c * b).exp() * h * phi1(c * h))
            } else {
                Ok((c * a).exp() * h * phi1(-c * h))
            }
        }
        (false, true) if c.re > 0.0 => Ok((c * b).exp() / c),
        (true, false) if c.re < 0.0 => Ok(-(c * a).exp() / c),
        _ => Err(RefractError::Domain(format!(
            "exponential with rate {c} is not integrable on [{a}, {b}]"
        ))),
    }
}

/// `int_{z1}^{z2} exp(alpha (w - z) + rho z) dz` for `z1 <= z2`, evaluated
/// around the endpoint with the larger exponent.
pub fn conv_exp(alpha: Complex64, rho: Complex64, w: f64, z1: f64, z2: f64) -> Complex64 {
    if z2 <= z1 {
        return ZERO;
    }
    let c = rho - alpha;
    let h = z2 - z1;
    let at = |z: f64| alpha * (w - z) + rho * z;
    if c.re >= 0.0 {
        at(z2).exp() * h * phi1(c * h)
    } else {
        at(z1).exp() * h * phi1(-c * h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cr(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn int_exp_matches_closed_form() {
        let v = int_exp(cr(2.0), 0.0, 1.0).unwrap();
        assert!((v.re - (2f64.exp() - 1.0) / 2.0).abs() < 1e-14);
        let v = int_exp(cr(1e-9), 0.0, 3.0).unwrap();
        assert!((v.re - 3.0).abs() < 1e-8);
        let v = int_exp(cr(0.0), -1.0, 1.0).unwrap();
        assert_eq!(v.re, 2.0);
        let v = int_exp(cr(-2.0), 0.0, f64::INFINITY).unwrap();
        assert!((v.re - 0.5).abs() < 1e-15);
        let v = int_exp(cr(3.0), f64::NEG_INFINITY, 0.0).unwrap();
        assert!((v.re - 1.0 / 3.0).abs() < 1e-15);
        assert!(int_exp(cr(1.0), 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn int_exp_complex_rate() {
        // int_0^pi e^{iu} du = 2i
        let v = int_exp(Complex64::new(0.0, 1.0), 0.0, std::f64::consts::PI).unwrap();
        assert!((v - Complex64::new(0.0, 2.0)).norm() < 1e-14);
    }

    #[test]
    fn conv_exp_matches_direct_formula() {
        let (alpha, rho) = (cr(-1.5), cr(0.7));
        let w = 0.4;
        let direct = (alpha * w).exp() * ((rho - alpha) * 1.0).exp() / (rho - alpha)
            - (alpha * w).exp() * ((rho - alpha) * -2.0).exp() / (rho - alpha);
        let got = conv_exp(alpha, rho, w, -2.0, 1.0);
        assert!((got - direct).norm() < 1e-14);
        // coincident rates reduce to length times constant factor
        let got = conv_exp(cr(-1.0), cr(-1.0), 2.0, 0.0, 2.0);
        assert!((got.re - 2.0 * (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn expsum_anchor_is_transparent() {
        let mut a = ExpSum::new(0.0);
        a.push_absolute(cr(2.0), cr(-1.0));
        let mut b = ExpSum::new(5.0);
        b.push_absolute(cr(2.0), cr(-1.0));
        for v in [-1.0, 0.0, 3.0, 10.0] {
            assert!((a.eval(v) - b.eval(v)).norm() < 1e-14);
        }
        let ia = a.integrate(0.0, f64::INFINITY).unwrap();
        let ib = b.integrate(0.0, f64::INFINITY).unwrap();
        assert!((ia.re - 2.0).abs() < 1e-14 && (ib.re - 2.0).abs() < 1e-13);
        let t = a.tilt(0.5);
        assert!((t.eval(1.0).re - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
    }
}
