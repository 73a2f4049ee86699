//! Variable-annuity guarantees on an account that pays a fee only while it
//! sits below a threshold, priced under the Esscher martingale measure.
//!
//! The account is `F_t = F0 e^{U_t}` where `U` is the model refracted at
//! `b = ln(B / F0)` with `delta = -fee_rate`: the fee is charged below `B` and
//! switched off above it.

use num_complex::Complex64;
use roots::{find_root_brent, SimpleConvergency};
use serde::{Deserialize, Serialize};

use crate::charroots::cumulant_complex;
use crate::distribution::Resolvent;
use crate::error::{RefractError, Result};
use crate::laplace::{invert, invert_verified, InversionConfig, VerifiedInversion};
use crate::model::{JumpMixture, JumpTerm, ModelSpec};

const MASS_TOL: f64 = 1e-12;
const CALIBRATION_TOL: f64 = 1e-14;

/// Guarantee paid as a function of the account value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Payoff {
    /// `max(x, K)`.
    Floor {
        #[serde(rename = "K")]
        k: f64,
    },
    /// `max(x - K, 0)`.
    Call {
        #[serde(rename = "K")]
        k: f64,
    },
    /// The account value itself.
    Account,
    Constant { value: f64 },
    /// Piecewise-linear through `[account value, payoff]` points, flat outside them.
    Table { points: Vec<[f64; 2]> },
}

impl Payoff {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Payoff::Floor { k } => x.max(*k),
            Payoff::Call { k } => (x - k).max(0.0),
            Payoff::Account => x,
            Payoff::Constant { value } => *value,
            Payoff::Table { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if x <= first[0] {
                    return first[1];
                }
                if x >= last[0] {
                    return last[1];
                }
                let i = points.partition_point(|p| p[0] <= x) - 1;
                let (a, b) = (points[i], points[i + 1]);
                a[1] + (b[1] - a[1]) * (x - a[0]) / (b[0] - a[0])
            }
        }
    }

    fn needs_first_moment(&self) -> bool {
        matches!(self, Payoff::Floor { .. } | Payoff::Call { .. } | Payoff::Account)
    }

    fn validate(&self) -> Result<()> {
        match self {
            Payoff::Floor { k } | Payoff::Call { k } if !(*k > 0.0 && k.is_finite()) => {
                Err(RefractError::Domain(format!("strike must be positive, got {k}")))
            }
            Payoff::Constant { value } if !value.is_finite() => {
                Err(RefractError::Domain("constant payoff must be finite".into()))
            }
            Payoff::Table { points } => {
                if points.len() < 2 {
                    return Err(RefractError::Domain("payoff table needs at least two points".into()));
                }
                if points.iter().any(|p| !(p[0] > 0.0 && p[0].is_finite() && p[1].is_finite())) {
                    return Err(RefractError::Domain(
                        "payoff table needs positive account values and finite payoffs".into(),
                    ));
                }
                if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(RefractError::Domain("payoff table account values must increase".into()));
                }
                let up = points.windows(2).all(|w| w[1][1] >= w[0][1]);
                let down = points.windows(2).all(|w| w[1][1] <= w[0][1]);
                if !(up || down) {
                    return Err(RefractError::Domain("payoff table must be monotone".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// One exponential component of the time-of-death law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MortalityComponent {
    pub w: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingSpec {
    pub r: f64,
    #[serde(rename = "F0")]
    pub f0: f64,
    #[serde(rename = "B")]
    pub threshold: f64,
    pub fee_rate: f64,
    pub payoff: Payoff,
    #[serde(default)]
    pub mortality: Vec<MortalityComponent>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub maturity: Option<f64>,
}

impl PricingSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RefractError::Domain(m));
        if !self.r.is_finite() {
            return bad(format!("r must be finite, got {}", self.r));
        }
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            return bad(format!("F0 must be positive, got {}", self.f0));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return bad(format!("B must be positive and finite, got {}", self.threshold));
        }
        if !(self.fee_rate >= 0.0 && self.fee_rate.is_finite()) {
            return bad(format!("fee_rate must be nonnegative, got {}", self.fee_rate));
        }
        self.payoff.validate()?;
        for m in &self.mortality {
            if !(m.w >= 0.0 && m.q > 0.0 && m.q.is_finite()) {
                return bad(format!("mortality component needs w >= 0 and q > 0, got {m:?}"));
            }
            if !(self.r + m.q > 0.0) {
                return bad(format!("r + q must be positive, got {}", self.r + m.q));
            }
        }
        if !self.mortality.is_empty() {
            let total: f64 = self.mortality.iter().map(|m| m.w).sum();
            if (total - 1.0).abs() > MASS_TOL {
                return bad(format!("mortality weights sum to {total}, not 1"));
            }
        }
        if let Some(t) = self.maturity {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("T must be positive, got {t}"));
            }
        }
        Ok(())
    }

    /// Refraction drift seen by the log-account: minus the fee rate.
    pub fn delta(&self) -> f64 {
        -self.fee_rate
    }

    /// Log-account level of the fee threshold.
    pub fn log_threshold(&self) -> f64 {
        (self.threshold / self.f0).ln()
    }

    fn with_fee(&self, fee_rate: f64) -> Self {
        Self { fee_rate, ..self.clone() }
    }
}

/// Open interval of `u` on which `E[e^{u X_1}]` is finite.
pub fn cumulant_strip(spec: &ModelSpec) -> (f64, f64) {
    let hi = spec.jumps_plus.min_rate_re().filter(|_| spec.lambda_plus > 0.0);
    let lo = spec.jumps_minus.min_rate_re().filter(|_| spec.lambda_minus > 0.0);
    (lo.map_or(f64::NEG_INFINITY, |v| -v), hi.unwrap_or(f64::INFINITY))
}

/// `ln E[e^{u X_1}]` of the unrefracted process.
pub fn cumulant(spec: &ModelSpec, u: f64) -> Result<f64> {
    let (lo, hi) = cumulant_strip(spec);
    if !(u > lo && u < hi) {
        return Err(RefractError::CumulantDivergent(u));
    }
    Ok(cumulant_complex(spec, Complex64::new(u, 0.0), false).re)
}

fn tilt_mixture(mix: &JumpMixture, shift: f64) -> (JumpMixture, f64) {
    let shift = Complex64::new(shift, 0.0);
    let mut terms = Vec::with_capacity(mix.terms.len());
    let mut norm = Complex64::new(0.0, 0.0);
    for t in &mix.terms {
        let rate = t.rate - shift;
        let ratio = t.rate / rate;
        let mut power = Complex64::new(1.0, 0.0);
        let weights = t
            .weights
            .iter()
            .map(|w| {
                power *= ratio;
                norm += w * power;
                w * power
            })
            .collect();
        terms.push(JumpTerm { rate, order: t.order, weights });
    }
    for t in &mut terms {
        t.weights.iter_mut().for_each(|w| *w /= norm);
    }
    (JumpMixture::new(mix.side, terms), norm.re)
}

/// The model under the measure with density `e^{c X_t} / E[e^{c X_t}]`.
/// Refraction parameters are copied unchanged.
pub fn esscher_tilt(spec: &ModelSpec, c: f64) -> Result<ModelSpec> {
    cumulant(spec, c)?;
    let mut out = spec.clone();
    out.mu = spec.mu + spec.sigma * spec.sigma * c;
    if spec.lambda_plus > 0.0 {
        let (mix, norm) = tilt_mixture(&spec.jumps_plus, c);
        out.jumps_plus = mix;
        out.lambda_plus = spec.lambda_plus * norm;
    }
    if spec.lambda_minus > 0.0 {
        let (mix, norm) = tilt_mixture(&spec.jumps_minus, -c);
        out.jumps_minus = mix;
        out.lambda_minus = spec.lambda_minus * norm;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub c_star: f64,
    /// Martingale-measure model with the fee refraction applied.
    pub tilted: ModelSpec,
}

/// Finds `c*` with `kappa(c* + 1) - kappa(c*) = r - fee_rate` and returns the
/// tilted, refracted model.
pub fn esscher_calibrate(spec: &ModelSpec, pricing: &PricingSpec) -> Result<Calibration> {
    spec.ensure_valid()?;
    pricing.validate()?;
    let (lo, hi) = cumulant_strip(spec);
    if hi <= 1.0 {
        return Err(RefractError::Domain(format!(
            "smallest upward jump rate {hi} must exceed 1 for the account to have a finite mean"
        )));
    }
    let (lo, hi) = (lo, hi - 1.0);
    let target = pricing.r + pricing.delta();
    // kappa is convex, so the gap below is increasing in c
    let gap = |c: f64| -> f64 {
        match (cumulant(spec, c + 1.0), cumulant(spec, c)) {
            (Ok(a), Ok(b)) => a - b - target,
            _ if c <= lo => f64::NEG_INFINITY,
            _ => f64::INFINITY,
        }
    };
    let no_root = || RefractError::NoEsscherRoot { lo, hi };
    let inner = |end: f64, toward: f64| end + 1e-12 * (1.0 + end.abs()) * (toward - end).signum();
    let mid = match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo + 1.0,
        (false, true) => hi - 1.0,
        (false, false) => 0.0,
    };
    let mut a = if lo.is_finite() { inner(lo, mid) } else { mid };
    let mut b = if hi.is_finite() { inner(hi, mid) } else { mid };
    let mut step = 1.0;
    while !(gap(a) < 0.0) {
        if lo.is_finite() || step > 1e8 {
            return Err(no_root());
        }
        a = mid - step;
        step *= 2.0;
    }
    step = 1.0;
    while !(gap(b) > 0.0) {
        if hi.is_finite() || step > 1e8 {
            return Err(no_root());
        }
        b = mid + step;
        step *= 2.0;
    }
    let mut conv = SimpleConvergency { eps: CALIBRATION_TOL, max_iter: 500 };
    let c_star = find_root_brent(a, b, gap, &mut conv).map_err(|_| no_root())?;
    let tilted = esscher_tilt(spec, c_star)?.with_refraction(pricing.delta(), pricing.log_threshold());
    tilted.ensure_valid()?;
    Ok(Calibration { c_star, tilted })
}

/// `E[G(F_{e(q)})]` under `tilted` (already refracted), for complex `q` with `Re q > 0`.
pub fn expected_payoff_complex(tilted: &ModelSpec, pricing: &PricingSpec, q: Complex64) -> Result<Complex64> {
    let res = Resolvent::new_complex(tilted, q)?;
    if pricing.payoff.needs_first_moment() {
        let lead = res.roots.beta_hat.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if !(lead > 1.0) {
            return Err(RefractError::PayoffDivergent(format!(
                "upper tail decays at rate {lead}, not faster than the account grows"
            )));
        }
    }
    let dens = res.density(0.0)?;
    let f0 = pricing.f0;
    let w = |lo: f64, hi: f64, tilt: f64| {
        dens.integrate_weighted(lo, hi, tilt)
            .map_err(|e| RefractError::PayoffDivergent(e.to_string()))
    };
    let (ninf, inf) = (f64::NEG_INFINITY, f64::INFINITY);
    match &pricing.payoff {
        Payoff::Constant { value } => Ok(w(ninf, inf, 0.0)? * *value),
        Payoff::Account => Ok(w(ninf, inf, 1.0)? * f0),
        Payoff::Floor { k } => {
            let y = (k / f0).ln();
            Ok(w(ninf, inf, 1.0)? * f0 + w(ninf, y, 0.0)? * *k - w(ninf, y, 1.0)? * f0)
        }
        Payoff::Call { k } => {
            let y = (k / f0).ln();
            Ok(w(y, inf, 1.0)? * f0 - w(y, inf, 0.0)? * *k)
        }
        Payoff::Table { points } => {
            let ys: Vec<f64> = points.iter().map(|p| (p[0] / f0).ln()).collect();
            let n = points.len() - 1;
            let mut total = w(ninf, ys[0], 0.0)? * points[0][1] + w(ys[n], inf, 0.0)? * points[n][1];
            for i in 0..n {
                let (a, b) = (points[i], points[i + 1]);
                let slope = (b[1] - a[1]) / (b[0] - a[0]);
                total += w(ys[i], ys[i + 1], 0.0)? * (a[1] - slope * a[0]) + w(ys[i], ys[i + 1], 1.0)? * (slope * f0);
            }
            Ok(total)
        }
    }
}

pub fn expected_payoff(tilted: &ModelSpec, pricing: &PricingSpec, q: f64) -> Result<f64> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(RefractError::NonPositiveQ(q));
    }
    Ok(expected_payoff_complex(tilted, pricing, Complex64::new(q, 0.0))?.re)
}

/// Death-benefit price `sum w_i q_i / (r + q_i) E[G(F_{e(r + q_i)})]`.
pub fn price_gmdb(tilted: &ModelSpec, pricing: &PricingSpec) -> Result<f64> {
    pricing.validate()?;
    if pricing.mortality.is_empty() {
        return Err(RefractError::Domain("death benefit needs a mortality law".into()));
    }
    let mut total = 0.0;
    for m in &pricing.mortality {
        if m.w == 0.0 {
            continue;
        }
        let rate = pricing.r + m.q;
        total += m.w * m.q / rate * expected_payoff(tilted, pricing, rate)?;
    }
    Ok(total)
}

fn maturity(pricing: &PricingSpec) -> Result<f64> {
    pricing.validate()?;
    pricing
        .maturity
        .ok_or_else(|| RefractError::Domain("maturity benefit needs T".into()))
}

fn maturity_transform(tilted: &ModelSpec, pricing: &PricingSpec, s: Complex64) -> Result<Complex64> {
    let rate = s + pricing.r;
    Ok(expected_payoff_complex(tilted, pricing, rate)? / rate)
}

/// Maturity-benefit price `E[e^{-rT} G(F_T)]`, by inverting
/// `s -> E[G(F_{e(s + r)})] / (s + r)`.
pub fn price_gmmb(tilted: &ModelSpec, pricing: &PricingSpec, cfg: &InversionConfig) -> Result<f64> {
    let t = maturity(pricing)?;
    invert(|s| maturity_transform(tilted, pricing, s), t, cfg)
}

pub fn price_gmmb_verified(tilted: &ModelSpec, pricing: &PricingSpec, cfg: &InversionConfig) -> Result<VerifiedInversion> {
    let t = maturity(pricing)?;
    invert_verified(|s| maturity_transform(tilted, pricing, s), t, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Product {
    Gmdb,
    Gmmb,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceDiagnostics {
    pub delta: f64,
    pub log_threshold: f64,
    /// `kappa_tilted(1) - (r + delta)`.
    pub martingale_residual: f64,
    pub cross_check: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceReport {
    pub price: f64,
    pub c_star: f64,
    pub diagnostics: PriceDiagnostics,
}

/// Calibrates and prices in one step; `verify` cross-checks the maturity inversion.
pub fn price(spec: &ModelSpec, pricing: &PricingSpec, product: Product, cfg: &InversionConfig, verify: bool) -> Result<PriceReport> {
    let cal = esscher_calibrate(spec, pricing)?;
    let (value, cross_check) = match product {
        Product::Gmdb => (price_gmdb(&cal.tilted, pricing)?, None),
        Product::Gmmb if verify => {
            let v = price_gmmb_verified(&cal.tilted, pricing, cfg)?;
            (v.value, Some(v.cross_check))
        }
        Product::Gmmb => (price_gmmb(&cal.tilted, pricing, cfg)?, None),
    };
    Ok(PriceReport {
        price: value,
        c_star: cal.c_star,
        diagnostics: PriceDiagnostics {
            delta: pricing.delta(),
            log_threshold: pricing.log_threshold(),
            martingale_residual: cumulant(&cal.tilted, 1.0)? - (pricing.r + pricing.delta()),
            cross_check,
        },
    })
}

/// Prices on a list of fee rates, holding everything else fixed.
pub fn fee_curve(spec: &ModelSpec, pricing: &PricingSpec, product: Product, fees: &[f64], cfg: &InversionConfig) -> Result<Vec<f64>> {
    fees.iter()
        .map(|&fee| Ok(price(spec, &pricing.with_fee(fee), product, cfg, false)?.price))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;

    fn kou() -> ModelSpec {
        ModelSpec::kou(0.05, 0.2, 1.0, 3.0, 0.5, 2.0)
    }

    fn contract(payoff: Payoff) -> PricingSpec {
        PricingSpec {
            r: 0.04,
            f0: 100.0,
            threshold: 120.0,
            fee_rate: 0.02,
            payoff,
            mortality: vec![MortalityComponent { w: 1.0, q: 0.1 }],
            maturity: Some(1.0),
        }
    }

    #[test]
    fn cumulant_values_and_strip() {
        let bm = ModelSpec::brownian(0.05, 0.2);
        assert_eq!(cumulant(&bm, 0.0).unwrap(), 0.0);
        assert!((cumulant(&bm, 1.0).unwrap() - 0.07).abs() < 1e-15);
        assert!(matches!(cumulant(&kou(), 3.0), Err(RefractError::CumulantDivergent(_))));
        assert!(cumulant(&kou(), -2.0).is_err());
        assert!(cumulant(&kou(), -1.99).is_ok());
    }

    #[test]
    fn brownian_esscher_parameter() {
        let cal = esscher_calibrate(&ModelSpec::brownian(0.05, 0.2), &contract(Payoff::Account)).unwrap();
        assert!((cal.c_star + 1.25).abs() < 1e-10, "{}", cal.c_star);
        assert!((cal.tilted.mu - (0.05 - 0.04 * 1.25)).abs() < 1e-12);
    }

    #[test]
    fn tilted_model_is_a_martingale_model() {
        let p = contract(Payoff::Account);
        let cal = esscher_calibrate(&kou(), &p).unwrap();
        assert!(cal.tilted.validate().passed());
        assert!((cumulant(&cal.tilted, 1.0).unwrap() - (p.r + p.delta())).abs() < 1e-10);
        let base = cumulant(&kou(), cal.c_star).unwrap();
        for u in [0.2, 0.5] {
            let shifted = cumulant(&kou(), u + cal.c_star).unwrap() - base;
            assert!((cumulant(&cal.tilted, u).unwrap() - shifted).abs() < 1e-10);
        }
        assert!((cal.tilted.delta + 0.02).abs() < 1e-15);
        assert!((cal.tilted.b - 1.2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn unit_payoff_prices() {
        let p = contract(Payoff::Constant { value: 1.0 });
        let cal = esscher_calibrate(&kou(), &p).unwrap();
        let d = price_gmdb(&cal.tilted, &p).unwrap();
        assert!((d - 0.1 / 0.14).abs() < 1e-12, "{d}");
        let split = PricingSpec {
            mortality: vec![MortalityComponent { w: 0.5, q: 0.1 }, MortalityComponent { w: 0.5, q: 0.1 }],
            ..p.clone()
        };
        assert!((price_gmdb(&cal.tilted, &split).unwrap() - d).abs() < 1e-14);
        let m = price_gmmb(&cal.tilted, &p, &InversionConfig::euler()).unwrap();
        assert!((m - (-0.04f64).exp()).abs() < 1e-6, "{m}");
    }

    #[test]
    fn fee_free_account_is_a_martingale() {
        let p = PricingSpec { fee_rate: 0.0, ..contract(Payoff::Account) };
        let cal = esscher_calibrate(&kou(), &p).unwrap();
        for q in [0.1, 1.0] {
            let v = expected_payoff(&cal.tilted, &p, q).unwrap();
            let want = p.f0 * q / (q - p.r);
            assert!((v - want).abs() < 1e-8 * want, "{v} vs {want}");
        }
        let m = price_gmmb(&cal.tilted, &p, &InversionConfig::euler()).unwrap();
        assert!((m - p.f0).abs() < 1e-5, "{m}");
    }

    #[test]
    fn prices_fall_as_fees_rise() {
        let p = contract(Payoff::Floor { k: 100.0 });
        let fees = [0.01, 0.02, 0.03];
        for product in [Product::Gmdb, Product::Gmmb] {
            let v = fee_curve(&kou(), &p, product, &fees, &InversionConfig::euler()).unwrap();
            assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-8), "{product:?}: {v:?}");
        }
    }

    #[test]
    fn payoff_integrals_match_quadrature() {
        let base = contract(Payoff::Account);
        let cal = esscher_calibrate(&kou(), &base).unwrap();
        let q = 0.5;
        let dens = Resolvent::new(&cal.tilted, q).unwrap().density(0.0).unwrap();
        let payoffs = [
            Payoff::Floor { k: 110.0 },
            Payoff::Call { k: 90.0 },
            Payoff::Table { points: vec![[80.0, 80.0], [100.0, 110.0], [150.0, 120.0]] },
        ];
        for g in payoffs {
            let p = PricingSpec { payoff: g.clone(), ..base.clone() };
            let exact = expected_payoff(&cal.tilted, &p, q).unwrap();
            let f = |y: f64| g.eval(100.0 * y.exp()) * dens.eval(y).unwrap();
            let mut cuts = vec![-40.0, 0.0, cal.tilted.b, 40.0];
            cuts.extend([80.0f64, 90.0, 100.0, 110.0, 150.0].map(|x| (x / 100.0).ln()));
            cuts.sort_by(f64::total_cmp);
            let numeric: f64 = cuts.windows(2).map(|w| integrate(f, w[0], w[1], 1e-12).unwrap()).sum();
            assert!((exact - numeric).abs() < 1e-7 * exact.abs(), "{g:?}: {exact} vs {numeric}");
        }
    }

    #[test]
    fn heavy_upper_tail_is_refused() {
        let m = ModelSpec::brownian(0.0, 1.0).with_refraction(-0.02, 0.0);
        let p = contract(Payoff::Floor { k: 100.0 });
        assert!(matches!(
            expected_payoff(&m, &p, 0.01),
            Err(RefractError::PayoffDivergent(_))
        ));
        assert!(expected_payoff(&m, &contract(Payoff::Constant { value: 2.0 }), 0.01).is_ok());
    }

    #[test]
    fn pricing_json_round_trip() {
        let text = r#"{"r":0.04,"F0":100,"B":120,"fee_rate":0.02,"payoff":{"type":"floor","K":100},
                       "mortality":[{"w":1,"q":0.1}],"T":1}"#;
        let p = PricingSpec::from_json(text).unwrap();
        assert_eq!(p, contract(Payoff::Floor { k: 100.0 }));
        let bad = r#"{"r":0.04,"F0":100,"B":120,"fee_rate":0.02,"payoff":{"type":"floor","K":100},
                      "mortality":[{"w":0.5,"q":0.1}]}"#;
        assert!(PricingSpec::from_json(bad).is_err());
    }

    #[test]
    fn steep_upward_jumps_are_required() {
        let m = ModelSpec::kou(0.05, 0.2, 1.0, 0.9, 0.5, 2.0);
        assert!(esscher_calibrate(&m, &contract(Payoff::Account)).is_err());
    }
}
