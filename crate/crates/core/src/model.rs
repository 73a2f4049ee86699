//! Model definition: a jump diffusion with mixed-Erlang (rational Laplace
//! transform) jumps on both sides, plus the refraction drift `delta` and the
//! refraction level `b`.
//!
//! Jump densities are stored per Erlang order, i.e. a term with rate `eta` and
//! order `m` carries `m` weights `c_1..c_m` and contributes
//! `sum_j c_j eta^j z^(j-1) e^(-eta z) / (j-1)!` to the density. Rates and
//! weights may be complex as long as they come in conjugate pairs and the
//! resulting density is a genuine probability density.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{RefractError, Result};

/// Tolerance on the total mass of a jump mixture.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Lowest value the density may take on the validation grid.
pub const NONNEGATIVITY_TOL: f64 = -1e-10;
const DENSITY_GRID_POINTS: usize = 1000;
const CONJUGATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Positive,
    Negative,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Positive => f.write_str("positive"),
            Side::Negative => f.write_str("negative"),
        }
    }
}

/// One Erlang block: rate and weights for orders `1..=order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpTerm {
    pub rate: Complex64,
    pub order: usize,
    pub weights: Vec<Complex64>,
}

impl JumpTerm {
    pub fn exponential(rate: f64) -> Self {
        Self {
            rate: Complex64::new(rate, 0.0),
            order: 1,
            weights: vec![Complex64::new(1.0, 0.0)],
        }
    }

    pub fn real(rate: f64, weights: &[f64]) -> Self {
        Self {
            rate: Complex64::new(rate, 0.0),
            order: weights.len(),
            weights: weights.iter().map(|&w| Complex64::new(w, 0.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpMixture {
    pub side: Side,
    pub terms: Vec<JumpTerm>,
}

impl JumpMixture {
    pub fn empty(side: Side) -> Self {
        Self {
            side,
            terms: Vec::new(),
        }
    }

    pub fn new(side: Side, terms: Vec<JumpTerm>) -> Self {
        Self { side, terms }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Sum of Erlang orders, i.e. the number of poles counted with multiplicity.
    pub fn total_order(&self) -> usize {
        self.terms.iter().map(|t| t.order).sum()
    }

    pub fn total_weight(&self) -> Complex64 {
        self.terms.iter().flat_map(|t| t.weights.iter()).sum()
    }

    /// Smallest real part among the rates.
    pub fn min_rate_re(&self) -> Option<f64> {
        self.terms
            .iter()
            .map(|t| t.rate.re)
            .min_by(|a, b| a.total_cmp(b))
    }

    /// Rate with the smallest real part.
    pub fn leading_rate(&self) -> Option<Complex64> {
        self.terms
            .iter()
            .map(|t| t.rate)
            .min_by(|a, b| a.re.total_cmp(&b.re))
    }

    /// Complex density accumulation at `z >= 0`.
    pub fn density_complex(&self, z: f64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for term in &self.terms {
            let decay = (-term.rate * z).exp();
            // eta^j z^(j-1) / (j-1)!, built up incrementally
            let mut factor = term.rate;
            for (j, w) in term.weights.iter().enumerate() {
                if j > 0 {
                    factor = factor * term.rate * z / j as f64;
                }
                acc += w * factor * decay;
            }
        }
        acc
    }

    /// `E[e^{v Z}] = sum_k sum_j c_kj (eta_k / (eta_k - v))^j`.
    pub fn mgf(&self, v: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for term in &self.terms {
            let ratio = term.rate / (term.rate - v);
            let mut power = Complex64::new(1.0, 0.0);
            for w in &term.weights {
                power *= ratio;
                acc += w * power;
            }
        }
        acc
    }

    /// Derivative of [`JumpMixture::mgf`] with respect to `v`.
    pub fn mgf_derivative(&self, v: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for term in &self.terms {
            let inv = Complex64::new(1.0, 0.0) / (term.rate - v);
            let ratio = term.rate * inv;
            let mut power = Complex64::new(1.0, 0.0);
            for (j, w) in term.weights.iter().enumerate() {
                power *= ratio;
                acc += w * power * inv * (j as f64 + 1.0);
            }
        }
        acc
    }

    /// Mean jump size `sum c_kj j / eta_k`.
    pub fn mean(&self) -> Complex64 {
        self.terms
            .iter()
            .flat_map(|t| {
                t.weights
                    .iter()
                    .enumerate()
                    .map(move |(j, w)| w * (j as f64 + 1.0) / t.rate)
            })
            .sum()
    }

    pub fn is_real_nonnegative(&self) -> bool {
        self.terms.iter().all(|t| {
            t.rate.im == 0.0
                && t.rate.re > 0.0
                && t.weights.iter().all(|w| w.im == 0.0 && w.re >= 0.0)
        })
    }
}

/// Full parameterisation of the driving process and the refraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub mu: f64,
    pub sigma: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub jumps_plus: JumpMixture,
    pub jumps_minus: JumpMixture,
    pub delta: f64,
    pub b: f64,
}

impl ModelSpec {
    /// Pure Brownian motion with drift, no refraction.
    pub fn brownian(mu: f64, sigma: f64) -> Self {
        Self {
            mu,
            sigma,
            lambda_plus: 0.0,
            lambda_minus: 0.0,
            jumps_plus: JumpMixture::empty(Side::Positive),
            jumps_minus: JumpMixture::empty(Side::Negative),
            delta: 0.0,
            b: 0.0,
        }
    }

    /// Double-exponential (Kou) model.
    pub fn kou(mu: f64, sigma: f64, lambda_plus: f64, eta: f64, lambda_minus: f64, theta: f64) -> Self {
        let plus = if lambda_plus > 0.0 {
            JumpMixture::new(Side::Positive, vec![JumpTerm::exponential(eta)])
        } else {
            JumpMixture::empty(Side::Positive)
        };
        let minus = if lambda_minus > 0.0 {
            JumpMixture::new(Side::Negative, vec![JumpTerm::exponential(theta)])
        } else {
            JumpMixture::empty(Side::Negative)
        };
        Self {
            mu,
            sigma,
            lambda_plus,
            lambda_minus,
            jumps_plus: plus,
            jumps_minus: minus,
            delta: 0.0,
            b: 0.0,
        }
    }

    pub fn with_refraction(mut self, delta: f64, b: f64) -> Self {
        self.delta = delta;
        self.b = b;
        self
    }

    pub fn mixture(&self, side: Side) -> &JumpMixture {
        match side {
            Side::Positive => &self.jumps_plus,
            Side::Negative => &self.jumps_minus,
        }
    }

    pub fn intensity(&self, side: Side) -> f64 {
        match side {
            Side::Positive => self.lambda_plus,
            Side::Negative => self.lambda_minus,
        }
    }

    /// Same model with the refraction switched off.
    pub fn unrefracted(&self) -> Self {
        Self {
            delta: 0.0,
            ..self.clone()
        }
    }

    pub fn density(&self, side: Side, z: f64) -> Result<f64> {
        let mix = self.mixture(side);
        if mix.is_empty() {
            return Err(RefractError::EmptyMixture(side));
        }
        if !(z >= 0.0) {
            return Err(RefractError::Domain(format!(
                "jump density evaluated at z = {z}; requires z > 0"
            )));
        }
        Ok(mix.density_complex(z).re)
    }

    pub fn density_plus(&self, z: f64) -> Result<f64> {
        self.density(Side::Positive, z)
    }

    pub fn density_minus(&self, z: f64) -> Result<f64> {
        self.density(Side::Negative, z)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_model(self)
    }

    /// Returns an error listing every failed check.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.passed() {
            Ok(())
        } else {
            Err(RefractError::InvalidModel(report.failure_summary()))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        Ok(file.into())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serialises")
    }
}

/// Wire format of a model file. Complex numbers are `[re, im]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub mu: f64,
    pub sigma: f64,
    #[serde(default)]
    pub lambda_plus: f64,
    #[serde(default)]
    pub jumps_plus: Vec<JumpTerm>,
    #[serde(default)]
    pub lambda_minus: f64,
    #[serde(default)]
    pub jumps_minus: Vec<JumpTerm>,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub b: f64,
}

impl From<ModelFile> for ModelSpec {
    fn from(f: ModelFile) -> Self {
        Self {
            mu: f.mu,
            sigma: f.sigma,
            lambda_plus: f.lambda_plus,
            lambda_minus: f.lambda_minus,
            jumps_plus: JumpMixture::new(Side::Positive, f.jumps_plus),
            jumps_minus: JumpMixture::new(Side::Negative, f.jumps_minus),
            delta: f.delta,
            b: f.b,
        }
    }
}

impl From<&ModelSpec> for ModelFile {
    fn from(m: &ModelSpec) -> Self {
        Self {
            mu: m.mu,
            sigma: m.sigma,
            lambda_plus: m.lambda_plus,
            jumps_plus: m.jumps_plus.terms.clone(),
            lambda_minus: m.lambda_minus,
            jumps_minus: m.jumps_minus.terms.clone(),
            delta: m.delta,
            b: m.b,
        }
    }
}

/// Killing rate, start value and evaluation level of a resolvent query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub q: f64,
    pub x: f64,
    pub y: f64,
}

impl QuerySpec {
    pub fn new(q: f64, x: f64, y: f64) -> Result<Self> {
        if !(q > 0.0) || !q.is_finite() {
            return Err(RefractError::NonPositiveQ(q));
        }
        Ok(Self { q, x, y })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    fn push(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn has_failure(&self, name: &str) -> bool {
        self.failures().any(|c| c.name == name)
    }

    pub fn failure_summary(&self) -> String {
        self.failures()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

pub fn validate_model(spec: &ModelSpec) -> ValidationReport {
    let mut report = ValidationReport::default();

    let scalars = [
        ("mu", spec.mu),
        ("sigma", spec.sigma),
        ("lambda_plus", spec.lambda_plus),
        ("lambda_minus", spec.lambda_minus),
        ("delta", spec.delta),
        ("b", spec.b),
    ];
    let non_finite: Vec<_> = scalars
        .iter()
        .filter(|(_, v)| !v.is_finite())
        .map(|(n, _)| *n)
        .collect();
    report.push(
        "finite",
        non_finite.is_empty(),
        if non_finite.is_empty() {
            "all scalar parameters finite".to_string()
        } else {
            format!("non-finite parameters: {}", non_finite.join(", "))
        },
    );
    report.push(
        "sigma",
        spec.sigma > 0.0,
        format!("sigma = {} must be strictly positive", spec.sigma),
    );

    for side in [Side::Positive, Side::Negative] {
        validate_side(&mut report, side, spec.intensity(side), spec.mixture(side));
    }
    report
}

fn validate_side(report: &mut ValidationReport, side: Side, lambda: f64, mix: &JumpMixture) {
    let tag = |name: &str| format!("{name}_{side}");

    let intensity_ok = lambda >= 0.0 && ((lambda == 0.0) == mix.is_empty());
    report.push(
        &tag("intensity"),
        intensity_ok,
        format!(
            "lambda = {lambda} with {} jump terms (zero intensity iff empty mixture)",
            mix.terms.len()
        ),
    );
    if mix.is_empty() {
        return;
    }

    let shape_ok = mix
        .terms
        .iter()
        .all(|t| t.order >= 1 && t.weights.len() == t.order);
    report.push(
        &tag("orders"),
        shape_ok,
        "each term needs order >= 1 and one weight per order",
    );
    if !shape_ok {
        return;
    }

    let finite = mix.terms.iter().all(|t| {
        t.rate.re.is_finite()
            && t.rate.im.is_finite()
            && t.weights.iter().all(|w| w.re.is_finite() && w.im.is_finite())
    });
    report.push(&tag("finite"), finite, "rates and weights finite");
    if !finite {
        return;
    }

    let positive = mix.terms.iter().all(|t| t.rate.re > 0.0);
    report.push(
        &tag("rates"),
        positive,
        "every rate needs a strictly positive real part",
    );

    let mut distinct = true;
    for (i, a) in mix.terms.iter().enumerate() {
        for b in &mix.terms[i + 1..] {
            if (a.rate - b.rate).norm() <= 1e-12 * (1.0 + a.rate.norm()) {
                distinct = false;
            }
        }
    }
    report.push(&tag("distinct"), distinct, "rates must be pairwise distinct");

    let conjugate = conjugate_closed(mix);
    report.push(
        &tag("conjugate"),
        conjugate,
        "non-real rates and their weights must occur in conjugate pairs",
    );

    let total = mix.total_weight();
    let norm_ok = (total - 1.0).norm() <= NORMALIZATION_TOL;
    report.push(
        "normalization",
        norm_ok,
        format!("{side} weights sum to {} + {}i", total.re, total.im),
    );

    if positive {
        let min_re = mix.min_rate_re().unwrap_or(1.0);
        let z_max = 50.0 / min_re;
        let mut lowest = f64::INFINITY;
        let mut at = 0.0;
        for i in 0..DENSITY_GRID_POINTS {
            let frac = i as f64 / (DENSITY_GRID_POINTS - 1) as f64;
            let z = z_max * 10f64.powf(-8.0 + 8.0 * frac);
            let v = mix.density_complex(z).re;
            if v < lowest {
                lowest = v;
                at = z;
            }
        }
        report.push(
            &tag("nonnegativity"),
            lowest >= NONNEGATIVITY_TOL,
            format!("minimum density {lowest:e} at z = {at:e}"),
        );
    }
}

fn conjugate_closed(mix: &JumpMixture) -> bool {
    mix.terms.iter().all(|t| {
        let weights_real = t.weights.iter().all(|w| w.im.abs() <= CONJUGATE_TOL);
        if t.rate.im.abs() <= CONJUGATE_TOL {
            return weights_real;
        }
        mix.terms.iter().any(|u| {
            u.order == t.order
                && (u.rate - t.rate.conj()).norm() <= CONJUGATE_TOL * (1.0 + t.rate.norm())
                && u
                    .weights
                    .iter()
                    .zip(&t.weights)
                    .all(|(a, b)| (a - b.conj()).norm() <= CONJUGATE_TOL * (1.0 + b.norm()))
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single_up(rate: f64, weights: &[f64]) -> ModelSpec {
        let mut m = ModelSpec::brownian(0.0, 0.2);
        m.lambda_plus = 1.0;
        m.jumps_plus = JumpMixture::new(Side::Positive, vec![JumpTerm::real(rate, weights)]);
        m
    }

    #[test]
    fn single_exponential_passes() {
        assert!(single_up(3.0, &[1.0]).validate().passed());
    }

    #[test]
    fn weights_below_one_fail_normalization() {
        let report = single_up(3.0, &[0.9]).validate();
        assert!(!report.passed());
        assert!(report.has_failure("normalization"));
    }

    #[test]
    fn conjugate_complex_pair_passes() {
        // Target density (10/9) e^{-2z} (1 + cos z): one real rate-2 term plus the pair 2 -+ i.
        let k = 10.0 / 9.0;
        let eta1 = c(2.0, -1.0);
        let eta2 = c(2.0, 1.0);
        let terms = vec![
            JumpTerm::real(2.0, &[k * 0.5]),
            JumpTerm {
                rate: eta1,
                order: 1,
                weights: vec![k * 0.5 / eta1],
            },
            JumpTerm {
                rate: eta2,
                order: 1,
                weights: vec![k * 0.5 / eta2],
            },
        ];
        let mut m = ModelSpec::brownian(0.0, 0.2);
        m.lambda_plus = 1.0;
        m.jumps_plus = JumpMixture::new(Side::Positive, terms);
        let report = m.validate();
        assert!(report.passed(), "{}", report.failure_summary());
        // Independent closed form of the target density.
        for z in [0.1, 1.0, 3.0, std::f64::consts::PI] {
            let expected = k * (-2.0 * z).exp() * (1.0 + z.cos());
            assert_abs_diff_eq!(m.density_plus(z).unwrap(), expected, epsilon = 1e-14);
            assert!(m.jumps_plus.density_complex(z).im.abs() <= 1e-12);
        }
    }

    #[test]
    fn unpaired_complex_rate_fails() {
        let mut m = ModelSpec::brownian(0.0, 0.2);
        m.lambda_plus = 1.0;
        m.jumps_plus = JumpMixture::new(
            Side::Positive,
            vec![JumpTerm {
                rate: c(2.0, 1.0),
                order: 1,
                weights: vec![c(1.0, 0.0)],
            }],
        );
        assert!(m.validate().has_failure("conjugate_positive"));
    }

    #[test]
    fn negative_density_detected() {
        // 2 e^{-z} - e^{-2z} ... weights (2, -1) on rates (1, 2): 2e^{-z} - 2e^{-2z} >= 0 fine;
        // use (-1, 2) instead: -e^{-z} + 4 e^{-2z} < 0 for large z.
        let mut m = ModelSpec::brownian(0.0, 0.2);
        m.lambda_plus = 1.0;
        m.jumps_plus = JumpMixture::new(
            Side::Positive,
            vec![JumpTerm::real(1.0, &[-1.0]), JumpTerm::real(2.0, &[2.0])],
        );
        let report = m.validate();
        assert!(report.has_failure("nonnegativity_positive"));
        assert!(!report.has_failure("normalization"));
    }

    #[test]
    fn duplicate_rates_and_bad_sigma_fail() {
        let mut m = ModelSpec::brownian(0.0, 0.0);
        m.lambda_minus = 1.0;
        m.jumps_minus = JumpMixture::new(
            Side::Negative,
            vec![JumpTerm::real(2.0, &[0.5]), JumpTerm::real(2.0, &[0.5])],
        );
        let report = m.validate();
        assert!(report.has_failure("sigma"));
        assert!(report.has_failure("distinct_negative"));
    }

    #[test]
    fn intensity_without_jumps_fails() {
        let mut m = ModelSpec::brownian(0.0, 0.2);
        m.lambda_plus = 1.0;
        assert!(m.validate().has_failure("intensity_positive"));
    }

    #[test]
    fn exponential_density_values() {
        let m = single_up(3.0, &[1.0]);
        assert_abs_diff_eq!(m.density_plus(0.0).unwrap(), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.density_plus(1.0).unwrap(), 3.0 * (-3f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(m.density_plus(1.0).unwrap(), 0.14936, epsilon = 1e-5);
    }

    #[test]
    fn erlang_two_density_value() {
        let m = single_up(2.0, &[0.0, 1.0]);
        assert_abs_diff_eq!(m.density_plus(1.0).unwrap(), 4.0 * (-2f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(m.density_plus(1.0).unwrap(), 0.54134, epsilon = 1e-5);
    }

    #[test]
    fn empty_mixture_density_is_an_error() {
        let m = ModelSpec::brownian(0.0, 1.0);
        assert!(matches!(
            m.density_minus(1.0),
            Err(RefractError::EmptyMixture(Side::Negative))
        ));
    }

    #[test]
    fn mgf_matches_moments() {
        let m = single_up(2.0, &[0.25, 0.75]);
        let mix = &m.jumps_plus;
        assert_abs_diff_eq!(mix.mgf(c(0.0, 0.0)).re, 1.0, epsilon = 1e-15);
        // E[Z] = 0.25/2 + 0.75*2/2
        assert_abs_diff_eq!(mix.mean().re, 0.875, epsilon = 1e-15);
        assert_abs_diff_eq!(mix.mgf_derivative(c(0.0, 0.0)).re, 0.875, epsilon = 1e-15);
    }

    #[test]
    fn json_round_trip_keeps_complex_pairs() {
        let text = r#"{"mu":0.05,"sigma":0.2,"lambda_plus":1.0,
            "jumps_plus":[{"rate":[3.0,0.0],"order":1,"weights":[[1.0,0.0]]}],
            "lambda_minus":0.5,
            "jumps_minus":[{"rate":[2.0,0.0],"order":1,"weights":[[1.0,0.0]]}],
            "delta":0.03,"b":0.0}"#;
        let m = ModelSpec::from_json(text).unwrap();
        assert_eq!(m, ModelSpec::kou(0.05, 0.2, 1.0, 3.0, 0.5, 2.0).with_refraction(0.03, 0.0));
        let again = ModelSpec::from_json(&m.to_json()).unwrap();
        assert_eq!(again, m);
        assert!(m.to_json().contains("[\n        3.0,\n        0.0\n      ]"));
    }
}
