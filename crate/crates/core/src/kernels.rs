//! Correction kernels `F1`, `F2` and the convolution kernel `K_q`.
//!
//! `F1` lives on `(0, inf)` with transform `(sup_y(s) / sup_x(s) - 1) / s`,
//! `F2` on `(-inf, 0)` with transform `(inf_x(s) / inf_y(s) - 1) / s`, and
//! `K_q` is the law of `sup X + inf Y` for independent copies at `e(q)`.

use num_complex::Complex64;
use serde::Serialize;

use crate::charroots::{product, RootSet};
use crate::error::{RefractError, Result};
use crate::expsum::ExpSum;
use crate::wiener_hopf::{ensure_real, WienerHopfFactors};

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvolutionKernel {
    /// Decay rates on the positive half line.
    pub beta: Vec<Complex64>,
    /// Growth rates on the negative half line.
    pub gamma_hat: Vec<Complex64>,
    /// `coeffs[i][j]` multiplies `e^{-beta_i x}` (x >= 0) and `e^{gamma_hat_j x}` (x < 0).
    pub coeffs: Vec<Vec<Complex64>>,
}

impl ConvolutionKernel {
    /// Density on `x >= 0` as an exponential sum anchored at 0.
    pub fn positive_side(&self) -> ExpSum {
        ExpSum::from_terms(
            0.0,
            self.beta
                .iter()
                .zip(&self.coeffs)
                .map(|(b, row)| (row.iter().sum(), -b))
                .collect(),
        )
    }

    /// Density on `x < 0` as an exponential sum anchored at 0.
    pub fn negative_side(&self) -> ExpSum {
        ExpSum::from_terms(
            0.0,
            self.gamma_hat
                .iter()
                .enumerate()
                .map(|(j, g)| (self.coeffs.iter().map(|row| row[j]).sum(), *g))
                .collect(),
        )
    }

    pub fn density_complex(&self, x: f64) -> Complex64 {
        if x >= 0.0 {
            self.positive_side().eval(x)
        } else {
            self.negative_side().eval(x)
        }
    }

    pub fn cdf_complex(&self, x: f64) -> Complex64 {
        let mut total = ZERO;
        for (i, b) in self.beta.iter().enumerate() {
            for (j, g) in self.gamma_hat.iter().enumerate() {
                let k = self.coeffs[i][j];
                total += if x < 0.0 {
                    k * (g * x).exp() / g
                } else {
                    k * (ONE / g + (1.0 - (-b * x).exp()) / b)
                };
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSet {
    /// `(beta_hat_i, F1_i)` with `F1'(x) = sum F1_i e^{-beta_hat_i x}`.
    pub f1_coeffs: Vec<(Complex64, Complex64)>,
    /// `(gamma_i, F2_i)` with `F2'(x) = sum F2_i e^{gamma_i x}`.
    pub f2_coeffs: Vec<(Complex64, Complex64)>,
    pub f1_at_zero: Complex64,
    pub f2_at_zero: Complex64,
    pub kq: ConvolutionKernel,
}

pub fn build_kernels(roots: &RootSet, factors: &WienerHopfFactors) -> Result<KernelSet> {
    let (beta, beta_hat) = (&roots.beta, &roots.beta_hat);
    let (gamma, gamma_hat) = (&roots.gamma, &roots.gamma_hat);

    let mut f1_coeffs = Vec::with_capacity(beta_hat.len());
    for (i, &bh) in beta_hat.iter().enumerate() {
        let mut a = ONE;
        for &b in beta {
            a *= (bh - b) / b;
        }
        for (k, &bk) in beta_hat.iter().enumerate() {
            if k != i {
                a *= bk / (bh - bk);
            }
        }
        f1_coeffs.push((bh, -bh * a));
    }

    let mut f2_coeffs = Vec::with_capacity(gamma.len());
    for (n, &g) in gamma.iter().enumerate() {
        let mut c = -ONE;
        for &gh in gamma_hat {
            c *= (gh - g) / gh;
        }
        for (k, &gk) in gamma.iter().enumerate() {
            if k != n {
                c *= gk / (gk - g);
            }
        }
        f2_coeffs.push((g, g * c));
    }

    let cs = &factors.sup_x.residues;
    let ds = &factors.inf_y.residues;
    let coeffs = beta
        .iter()
        .zip(cs)
        .map(|(b, c)| {
            gamma_hat
                .iter()
                .zip(ds)
                .map(|(g, d)| c * d / (b + g))
                .collect()
        })
        .collect();

    let ks = KernelSet {
        f1_coeffs,
        f2_coeffs,
        f1_at_zero: product(beta_hat) / product(beta) - 1.0,
        f2_at_zero: product(gamma) / product(gamma_hat) - 1.0,
        kq: ConvolutionKernel {
            beta: beta.clone(),
            gamma_hat: gamma_hat.clone(),
            coeffs,
        },
    };
    let gap = (ks.f1_at_zero - ks.f2_at_zero).norm();
    if gap > 1e-8 * (1.0 + ks.f1_at_zero.norm()) {
        return Err(RefractError::RootSolver(format!(
            "kernel values at 0 disagree by {gap:e}"
        )));
    }
    Ok(ks)
}

impl KernelSet {
    /// `F1` on `x >= 0` as an exponential sum (vanishes at infinity).
    pub fn f1_sum(&self) -> ExpSum {
        ExpSum::from_terms(
            0.0,
            self.f1_coeffs
                .iter()
                .map(|(bh, d)| (-d / bh, -bh))
                .collect(),
        )
    }

    pub fn f1_derivative_sum(&self) -> ExpSum {
        ExpSum::from_terms(0.0, self.f1_coeffs.iter().map(|(bh, d)| (*d, -bh)).collect())
    }

    /// `F2` on `x <= 0` as an exponential sum (vanishes at minus infinity).
    pub fn f2_sum(&self) -> ExpSum {
        ExpSum::from_terms(
            0.0,
            self.f2_coeffs.iter().map(|(g, d)| (d / g, *g)).collect(),
        )
    }

    pub fn f2_derivative_sum(&self) -> ExpSum {
        ExpSum::from_terms(0.0, self.f2_coeffs.iter().map(|(g, d)| (*d, *g)).collect())
    }

    pub fn f1(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Err(RefractError::Domain(format!("F1 needs x >= 0, got {x}")));
        }
        ensure_real(self.f1_sum().eval(x), "F1", 1e-10)
    }

    pub fn f2(&self, x: f64) -> Result<f64> {
        if x > 0.0 {
            return Err(RefractError::Domain(format!("F2 needs x <= 0, got {x}")));
        }
        ensure_real(self.f2_sum().eval(x), "F2", 1e-10)
    }

    pub fn kq_density(&self, x: f64) -> Result<f64> {
        ensure_real(self.kq.density_complex(x), "K_q density", 1e-10)
    }

    pub fn kq_cdf(&self, x: f64) -> Result<f64> {
        ensure_real(self.kq.cdf_complex(x), "K_q cdf", 1e-10)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charroots::{psi, solve_roots};
    use crate::model::{JumpMixture, JumpTerm, ModelSpec, Side};
    use crate::quad;
    use approx::assert_abs_diff_eq;

    fn cr(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn kernels_for(m: &ModelSpec, q: f64) -> (RootSet, WienerHopfFactors, KernelSet) {
        let r = solve_roots(m, q).unwrap();
        let w = WienerHopfFactors::new(m, &r).unwrap();
        let k = build_kernels(&r, &w).unwrap();
        (r, w, k)
    }

    fn kou() -> ModelSpec {
        ModelSpec::kou(0.05, 0.2, 1.0, 3.0, 0.5, 2.0).with_refraction(0.03, 0.0)
    }

    fn mixed() -> ModelSpec {
        let mut m = kou();
        m.jumps_plus = JumpMixture::new(
            Side::Positive,
            vec![JumpTerm::real(3.0, &[0.3, 0.2]), JumpTerm::real(7.0, &[0.5])],
        );
        m.jumps_minus = JumpMixture::new(
            Side::Negative,
            vec![JumpTerm::real(2.0, &[0.6]), JumpTerm::real(5.0, &[0.1, 0.1, 0.2])],
        );
        m
    }

    #[test]
    fn brownian_closed_forms() {
        let m = ModelSpec::brownian(0.0, 1.0).with_refraction(0.5, 0.0);
        let (_, _, k) = kernels_for(&m, 0.5);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let bh = 1.0 + g;
        assert_abs_diff_eq!(k.f1_at_zero.re, g, epsilon = 1e-12);
        assert_abs_diff_eq!(k.f1(1.0).unwrap(), g * (-bh).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(k.kq.coeffs[0][0].re, g / (1.0 + g), epsilon = 1e-12);
        assert_abs_diff_eq!(k.kq_density(0.0).unwrap(), 0.38197, epsilon = 1e-5);
        // P(Exp(1) - Exp(g) <= 0) = 1 / (1 + g)
        assert_abs_diff_eq!(k.kq_cdf(0.0).unwrap(), 1.0 / (1.0 + g), epsilon = 1e-12);
    }

    #[test]
    fn zero_delta_kernels_vanish() {
        let (_, _, k) = kernels_for(&kou().unrefracted(), 0.1);
        assert_eq!(k.f1_at_zero.norm(), 0.0);
        assert!(k.f1_coeffs.iter().all(|(_, c)| c.norm() == 0.0));
        assert!(k.f2_coeffs.iter().all(|(_, c)| c.norm() == 0.0));
        assert_eq!(k.f1(0.3).unwrap(), 0.0);
    }

    #[test]
    fn values_at_zero_agree() {
        for m in [kou(), mixed()] {
            for q in [0.05, 0.5, 5.0] {
                let (r, _, k) = kernels_for(&m, q);
                let lhs = product(&r.beta_hat) / product(&r.beta);
                let rhs = product(&r.gamma) / product(&r.gamma_hat);
                assert!((lhs - rhs).norm() < 1e-10 * lhs.norm());
                assert!((k.f1_at_zero - k.f2_at_zero).norm() < 1e-10);
                assert!((k.f1_sum().eval(0.0) - k.f1_at_zero).norm() < 1e-10);
                assert!((k.f2_sum().eval(0.0) - k.f2_at_zero).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn laplace_round_trips() {
        let m = mixed();
        let (_, w, k) = kernels_for(&m, 0.1);
        let f1 = k.f1_sum();
        let f2 = k.f2_sum();
        for s in [0.5, 1.0, 2.0, 4.0] {
            let got = f1.tilt(-s).integrate(0.0, f64::INFINITY).unwrap();
            let want = (w.sup_y.eval(cr(s)) / w.sup_x.eval(cr(s)) - 1.0) / s;
            assert!((got - want).norm() < 1e-10, "F1 s={s}");
            let got = f2.tilt(s).integrate(f64::NEG_INFINITY, 0.0).unwrap();
            let want = (w.inf_x.eval(cr(s)) / w.inf_y.eval(cr(s)) - 1.0) / s;
            assert!((got - want).norm() < 1e-10, "F2 s={s}");
        }
    }

    #[test]
    fn f1_transform_by_quadrature() {
        let m = kou();
        let (_, w, k) = kernels_for(&m, 0.1);
        for s in [1.0, 2.0, 5.0] {
            let got = quad::integrate_to_infinity(|x| (-s * x).exp() * k.f1(x).unwrap(), 0.0, 1e-13)
                .unwrap();
            let want = (w.sup_y.eval(cr(s)) / w.sup_x.eval(cr(s)) - 1.0) / s;
            assert!((got - want.re).abs() < 1e-8, "s={s}");
        }
    }

    #[test]
    fn transform_limit_at_zero() {
        let m = mixed();
        let (r, _, k) = kernels_for(&m, 0.5);
        let total = k.f1_sum().integrate(0.0, f64::INFINITY).unwrap();
        let inv = |v: &[Complex64]| v.iter().map(|x| 1.0 / x).sum::<Complex64>();
        let want = inv(&r.beta) - inv(&r.beta_hat);
        assert!((total - want).norm() < 1e-8);
    }

    #[test]
    fn f1_leading_asymptotics_and_lower_bound() {
        for m in [kou(), mixed()] {
            let (r, _, k) = kernels_for(&m, 0.1);
            let b1 = r.beta_hat[0].re;
            let lead = (-k.f1_coeffs[0].1 / k.f1_coeffs[0].0).re;
            let x = 30.0 / b1;
            assert!((k.f1(x).unwrap() * (b1 * x).exp() - lead).abs() < 1e-8);
            for i in 0..1000 {
                let x = 40.0 / b1 * i as f64 / 999.0;
                assert!(k.f1(x).unwrap() + 1.0 >= -1e-10);
            }
        }
    }

    #[test]
    fn kq_is_a_probability_law() {
        let (_, _, k) = kernels_for(&mixed(), 0.1);
        let mass = k.kq.positive_side().integrate(0.0, f64::INFINITY).unwrap()
            + k.kq.negative_side().integrate(f64::NEG_INFINITY, 0.0).unwrap();
        assert!((mass - 1.0).norm() < 1e-10);
        assert!(k.kq_cdf(-200.0).unwrap().abs() < 1e-10);
        assert!((k.kq_cdf(200.0).unwrap() - 1.0).abs() < 1e-10);
        let mut prev = 0.0;
        for i in 0..200 {
            let x = -20.0 + 40.0 * i as f64 / 199.0;
            assert!(k.kq_density(x).unwrap() >= -1e-10);
            let c = k.kq_cdf(x).unwrap();
            assert!(c >= prev - 1e-12);
            prev = c;
        }
    }

    #[test]
    fn zero_delta_kq_matches_fourier_inversion() {
        // K_q is then the density of X at e(q); compare against the inverse
        // Fourier transform of q/(q - psi) with a Laplace-law reference removed.
        let m = kou().unrefracted();
        let q = 0.5;
        let (_, _, k) = kernels_for(&m, q);
        let c = (2.0 * q).sqrt() / m.sigma;
        for x in [-1.0, 0.0, 1.0] {
            let body = |t: f64| {
                let full = q / (q - psi(&m, cr(t)).unwrap());
                let reference = c * c / (c * c + t * t);
                ((full - reference) * Complex64::new(0.0, -t * x).exp()).re
            };
            let mut acc = 0.0;
            let mut a = 0.0;
            while a < 4000.0 {
                acc += quad::integrate(body, a, a + 10.0, 1e-13).unwrap();
                acc += quad::integrate(body, -a - 10.0, -a, 1e-13).unwrap();
                a += 10.0;
            }
            let dens = acc / (2.0 * std::f64::consts::PI) + 0.5 * c * (-c * x.abs()).exp();
            assert!((dens - k.kq_density(x).unwrap()).abs() < 1e-8, "x={x}");
        }
    }
}
