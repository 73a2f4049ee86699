//! Wiener-Hopf factors of `X` and `Y = X - delta t` at an exponential time,
//! stored in pole-residue form.
//!
//! For simple roots every factor has the shape
//!
//! ```text
//! prod_k ((s + eta_k) / eta_k)^{m_k} * prod_i r_i / (s + r_i) = sum_i R_i / (s + r_i)
//! ```
//!
//! with residues given by the product formula
//! `R_i = r_i prod_k ((eta_k - r_i) / eta_k)^{m_k} prod_{l != i} r_l / (r_l - r_i)`.

use num_complex::Complex64;
use serde::Serialize;

use crate::charroots::RootSet;
use crate::error::{RefractError, Result};
use crate::model::{JumpMixture, ModelSpec};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// `constant + sum_k residues[k] / (s - poles[k])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoleResidueForm {
    pub poles: Vec<Complex64>,
    pub residues: Vec<Complex64>,
    pub constant: Complex64,
}

impl PoleResidueForm {
    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.poles
            .iter()
            .zip(&self.residues)
            .fold(self.constant, |acc, (p, r)| acc + r / (s - p))
    }

    /// The root `r_i` attached to each pole, i.e. `-pole`.
    pub fn rates(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.poles.iter().map(|p| -p)
    }

    /// `sum_k R_k / r_k`: the factor at `s = 0`.
    pub fn mass(&self) -> Complex64 {
        self.rates()
            .zip(&self.residues)
            .map(|(r, c)| c / r)
            .sum::<Complex64>()
            + self.constant
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Extreme {
    Sup,
    Inf,
}

/// The four factors at one `q`.
///
/// `sup_x(s) = E[e^{-s sup X}]`, `sup_y(s) = E[e^{-s sup Y}]`,
/// `inf_x(s) = E[e^{s inf X}]`, `inf_y(s) = E[e^{s inf Y}]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WienerHopfFactors {
    pub sup_x: PoleResidueForm,
    pub sup_y: PoleResidueForm,
    pub inf_x: PoleResidueForm,
    pub inf_y: PoleResidueForm,
}

impl WienerHopfFactors {
    pub fn new(spec: &ModelSpec, roots: &RootSet) -> Result<Self> {
        Ok(Self {
            sup_x: factor_sup_x(spec, roots)?,
            sup_y: factor_sup_y(spec, roots)?,
            inf_x: factor_inf_x(spec, roots)?,
            inf_y: factor_inf_y(spec, roots)?,
        })
    }
}

/// Residues of `prod ((s + a_k)/a_k)^{m_k} prod r_i/(s + r_i)` at `s = -r_i`.
pub(crate) fn product_residues(roots: &[Complex64], mix: &JumpMixture) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(roots.len());
    for (i, &ri) in roots.iter().enumerate() {
        let mut c = ri;
        for t in &mix.terms {
            c *= ((t.rate - ri) / t.rate).powu(t.order as u32);
        }
        for (l, &rl) in roots.iter().enumerate() {
            if l != i {
                let gap = rl - ri;
                if gap.norm() == 0.0 {
                    return Err(RefractError::ClusteredPoles(format!("repeated root {ri}")));
                }
                c *= rl / gap;
            }
        }
        out.push(c);
    }
    Ok(out)
}

/// Product form of the same factor, used as an independent evaluation route.
pub fn product_form(roots: &[Complex64], mix: &JumpMixture, s: Complex64) -> Complex64 {
    let mut v = ONE;
    for t in &mix.terms {
        v *= ((s + t.rate) / t.rate).powu(t.order as u32);
    }
    for &r in roots {
        v *= r / (s + r);
    }
    v
}

fn build(roots: &[Complex64], mix: &JumpMixture) -> Result<PoleResidueForm> {
    Ok(PoleResidueForm {
        poles: roots.iter().map(|r| -r).collect(),
        residues: product_residues(roots, mix)?,
        constant: Complex64::new(0.0, 0.0),
    })
}

/// `E[e^{-s sup X_{e(q)}}]`, residues `C_k`.
pub fn factor_sup_x(spec: &ModelSpec, roots: &RootSet) -> Result<PoleResidueForm> {
    build(&roots.beta, &spec.jumps_plus)
}

/// `E[e^{-s sup Y_{e(q)}}]`, residues `C_hat_k`.
pub fn factor_sup_y(spec: &ModelSpec, roots: &RootSet) -> Result<PoleResidueForm> {
    build(&roots.beta_hat, &spec.jumps_plus)
}

/// `E[e^{s inf Y_{e(q)}}]`, residues `D_hat_k`.
pub fn factor_inf_y(spec: &ModelSpec, roots: &RootSet) -> Result<PoleResidueForm> {
    build(&roots.gamma_hat, &spec.jumps_minus)
}

/// `E[e^{s inf X_{e(q)}}]`, residues `D_k`.
pub fn factor_inf_x(spec: &ModelSpec, roots: &RootSet) -> Result<PoleResidueForm> {
    build(&roots.gamma, &spec.jumps_minus)
}

pub(crate) fn ensure_real(z: Complex64, what: &'static str, tol: f64) -> Result<f64> {
    if z.im.abs() > tol * (1.0 + z.re.abs()) {
        return Err(RefractError::ComplexResidue { what, im: z.im });
    }
    Ok(z.re)
}

/// Density of the supremum (`v >= 0`) or infimum (`v <= 0`) whose transform is `factor`.
pub fn extreme_density(factor: &PoleResidueForm, side: Extreme, v: f64) -> Result<f64> {
    let d = extreme_density_complex(factor, side, v)?;
    ensure_real(d, "extreme density", 1e-10)
}

pub fn extreme_density_complex(factor: &PoleResidueForm, side: Extreme, v: f64) -> Result<Complex64> {
    match side {
        Extreme::Sup if v < 0.0 => Err(RefractError::Domain(format!(
            "supremum density needs v >= 0, got {v}"
        ))),
        Extreme::Inf if v > 0.0 => Err(RefractError::Domain(format!(
            "infimum density needs v <= 0, got {v}"
        ))),
        _ => {
            let a = v.abs();
            Ok(factor
                .rates()
                .zip(&factor.residues)
                .map(|(r, c)| c * (-r * a).exp())
                .sum())
        }
    }
}

/// `P(|extreme| > a)` for `a >= 0`.
pub fn extreme_tail(factor: &PoleResidueForm, a: f64) -> Complex64 {
    factor
        .rates()
        .zip(&factor.residues)
        .map(|(r, c)| c / r * (-r * a).exp())
        .sum()
}
