//! Law of the refracted process at an independent exponential time.
//!
//! Everything is built from the roots, the Wiener-Hopf residues and the
//! kernels; convolution integrals are evaluated termwise in closed form.

use num_complex::Complex64;
use serde::Serialize;

use crate::charroots::{solve_roots, solve_roots_complex, RootSet};
use crate::error::{RefractError, Result};
use crate::expsum::{conv_exp, ExpSum};
use crate::kernels::{build_kernels, KernelSet};
use crate::laplace::{invert, invert_verified, InversionConfig, VerifiedInversion};
use crate::model::{JumpMixture, ModelSpec};
use crate::poly::Series;
use crate::wiener_hopf::{ensure_real, WienerHopfFactors};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Levels closer than this to `b` use the closed form at `b`.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// Probabilities may leave `[0, 1]` by this much before it is an error.
pub const CLAMP_TOL: f64 = 1e-8;
const REALNESS_TOL: f64 = 1e-10;

fn clustered(a: Complex64, b: Complex64) -> bool {
    (a - b).norm() <= 1e-9 * (1.0 + a.norm() + b.norm())
}

pub(crate) fn probability(z: Complex64) -> Result<f64> {
    let v = ensure_real(z, "probability", REALNESS_TOL)?;
    if !(-CLAMP_TOL..=1.0 + CLAMP_TOL).contains(&v) {
        return Err(RefractError::ProbabilityOutOfRange { value: v });
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Roots, factors and kernels at one killing rate.
#[derive(Debug, Clone)]
pub struct Resolvent {
    pub spec: ModelSpec,
    pub roots: RootSet,
    pub factors: WienerHopfFactors,
    pub kernels: KernelSet,
}

impl Resolvent {
    pub fn new(spec: &ModelSpec, q: f64) -> Result<Self> {
        spec.ensure_valid()?;
        let roots = solve_roots(spec, q)?;
        Self::from_roots(spec, roots)
    }

    /// Complex killing rate (`Re q > 0`), for Bromwich inversion.
    pub fn new_complex(spec: &ModelSpec, q: Complex64) -> Result<Self> {
        spec.ensure_valid()?;
        let roots = solve_roots_complex(spec, q)?;
        Self::from_roots(spec, roots)
    }

    pub fn from_roots(spec: &ModelSpec, roots: RootSet) -> Result<Self> {
        let factors = WienerHopfFactors::new(spec, &roots)?;
        let kernels = build_kernels(&roots, &factors)?;
        Ok(Self { spec: spec.clone(), roots, factors, kernels })
    }

    pub fn q(&self) -> Complex64 {
        self.roots.q
    }

    /// `P_x(U > y)` for `y >= b`, possibly complex for complex `q`.
    pub fn cdf_upper_complex(&self, x: f64, y: f64) -> Result<Complex64> {
        let b = self.spec.b;
        if y < b - BOUNDARY_TOL {
            return Err(RefractError::Domain(format!(
                "upper tail needs y >= b (y = {y}, b = {b}); use the lower CDF"
            )));
        }
        let kq = &self.kernels.kq;
        if (y - b).abs() < BOUNDARY_TOL {
            return Ok(ONE - kq.cdf_complex(b - x));
        }
        let (w, lo) = (y - x, b - x);
        let f1 = self.kernels.f1_sum();
        let mut integral = ZERO;
        if lo < 0.0 {
            integral += conv_sum(&f1.terms, &kq.negative_side().terms, w, lo, w.min(0.0));
        }
        if w > 0.0 {
            integral += conv_sum(&f1.terms, &kq.positive_side().terms, w, lo.max(0.0), w);
        }
        Ok(ONE - kq.cdf_complex(w) - integral)
    }

    /// `P_x(U < y)` for `y <= b`.
    pub fn cdf_lower_complex(&self, x: f64, y: f64) -> Result<Complex64> {
        let b = self.spec.b;
        if y > b + BOUNDARY_TOL {
            return Err(RefractError::Domain(format!(
                "lower CDF needs y <= b (y = {y}, b = {b}); use the upper tail"
            )));
        }
        let kq = &self.kernels.kq;
        if (y - b).abs() < BOUNDARY_TOL {
            return Ok(kq.cdf_complex(b - x));
        }
        let (w, hi) = (y - x, b - x);
        let f2 = self.kernels.f2_sum();
        let mut integral = ZERO;
        if w < 0.0 {
            integral += conv_sum(&f2.terms, &kq.negative_side().terms, w, w, hi.min(0.0));
        }
        if hi > 0.0 {
            integral += conv_sum(&f2.terms, &kq.positive_side().terms, w, w.max(0.0), hi);
        }
        Ok(kq.cdf_complex(w) - integral)
    }

    /// `P_x(U < y)` for any `y`, through whichever formula covers it.
    pub fn prob_below_complex(&self, x: f64, y: f64) -> Result<Complex64> {
        if y <= self.spec.b {
            self.cdf_lower_complex(x, y)
        } else {
            Ok(ONE - self.cdf_upper_complex(x, y)?)
        }
    }

    pub fn cdf_upper(&self, x: f64, y: f64) -> Result<f64> {
        probability(self.cdf_upper_complex(x, y)?)
    }

    pub fn cdf_lower(&self, x: f64, y: f64) -> Result<f64> {
        probability(self.cdf_lower_complex(x, y)?)
    }

    pub fn prob_below(&self, x: f64, y: f64) -> Result<f64> {
        probability(self.prob_below_complex(x, y)?)
    }

    /// Double transform of the time spent below `y`: `P_x(U < y) / q^2`.
    pub fn occupation_transform(&self, x: f64, y: f64) -> Result<f64> {
        let q = ensure_real(self.q(), "q", 0.0)?;
        Ok(self.prob_below(x, y)? / (q * q))
    }

    pub fn occupation_transform_complex(&self, x: f64, y: f64) -> Result<Complex64> {
        let q = self.q();
        Ok(self.prob_below_complex(x, y)? / (q * q))
    }

    /// Density of `U_{e(q)}` started at `x` as piecewise exponential sums.
    pub fn density(&self, x: f64) -> Result<ResolventDensity> {
        let bb = self.spec.b - x;
        let ks = &self.kernels;
        let kpos = ks.kq.positive_side();
        let kneg = ks.kq.negative_side();
        let f1d = ks.f1_derivative_sum();
        let f2d = ks.f2_derivative_sum();

        let mut cuts = vec![bb.min(0.0), bb.max(0.0)];
        cuts.dedup();
        let mut bounds = vec![f64::NEG_INFINITY];
        bounds.extend(&cuts);
        bounds.push(f64::INFINITY);

        let mut pieces = Vec::with_capacity(bounds.len() - 1);
        for win in bounds.windows(2) {
            let (lo, hi) = (win[0], win[1]);
            let (t, anchor) = match (lo.is_finite(), hi.is_finite()) {
                (false, true) => (hi - 1.0, hi),
                (true, false) => (lo + 1.0, lo),
                _ => (0.5 * (lo + hi), lo),
            };
            let above = t > bb;
            let pos = t > 0.0;
            let side = if pos { &kpos } else { &kneg };
            let amp = ONE + if above { ks.f1_at_zero } else { ks.f2_at_zero };
            let mut sum = ExpSum::new(anchor);
            for &(k, rho) in &side.terms {
                sum.push(amp * k * (rho * anchor).exp(), rho);
            }
            if above {
                if bb < 0.0 {
                    let upper = if pos { End::Fixed(0.0) } else { End::Moving };
                    add_conv(&mut sum, &f1d.terms, &kneg.terms, 1.0, End::Fixed(bb), upper)?;
                }
                if pos {
                    add_conv(&mut sum, &f1d.terms, &kpos.terms, 1.0, End::Fixed(bb.max(0.0)), End::Moving)?;
                }
            } else {
                if bb > 0.0 {
                    let lower = if pos { End::Moving } else { End::Fixed(0.0) };
                    add_conv(&mut sum, &f2d.terms, &kpos.terms, -1.0, lower, End::Fixed(bb))?;
                }
                if !pos {
                    add_conv(&mut sum, &f2d.terms, &kneg.terms, -1.0, End::Moving, End::Fixed(bb.min(0.0)))?;
                }
            }
            sum.anchor += x;
            pieces.push(DensityPiece { lo: lo + x, hi: hi + x, sum });
        }
        Ok(ResolventDensity { pieces })
    }

    /// Pointwise density at `y` for start `x`.
    pub fn pdf(&self, x: f64, y: f64) -> Result<f64> {
        self.density(x)?.eval(y)
    }

    /// Coefficients of the three-branch representation of `x -> P_x(U > y)`, `y > b`.
    pub fn pasting_solution(&self, y: f64) -> Result<PastingSolution> {
        PastingSolution::new(self, y)
    }

    /// Upward passage of `X` over `level >= 0` from 0, killed at rate `q`.
    pub fn first_passage_up(&self, level: f64) -> Result<OvershootLaw> {
        if level < 0.0 {
            return Err(RefractError::Domain(format!("upward passage needs level >= 0, got {level}")));
        }
        overshoot_law(&self.roots.beta, &self.factors.sup_x.residues, &self.spec.jumps_plus, level)
    }

    /// Downward passage of `Y` below `level <= 0` from 0, killed at rate `q`.
    pub fn first_passage_down(&self, level: f64) -> Result<OvershootLaw> {
        if level > 0.0 {
            return Err(RefractError::Domain(format!("downward passage needs level <= 0, got {level}")));
        }
        overshoot_law(
            &self.roots.gamma_hat,
            &self.factors.inf_y.residues,
            &self.spec.jumps_minus,
            -level,
        )
    }
}

/// `sum_{f, k} a_f K_k int_{z1}^{z2} e^{alpha_f (w - z)} e^{rho_k z} dz`.
fn conv_sum(f: &[(Complex64, Complex64)], k: &[(Complex64, Complex64)], w: f64, z1: f64, z2: f64) -> Complex64 {
    let mut total = ZERO;
    for &(a, alpha) in f {
        if a == ZERO {
            continue;
        }
        for &(c, rho) in k {
            total += a * c * conv_exp(alpha, rho, w, z1, z2);
        }
    }
    total
}

#[derive(Debug, Clone, Copy)]
enum End {
    Fixed(f64),
    Moving,
}

/// Adds `sign * int_{z1}^{z2} f(v - z) k(z) dz` as a function of `v` to `out`.
/// `f` and `k` are sums anchored at 0.
fn add_conv(
    out: &mut ExpSum,
    f: &[(Complex64, Complex64)],
    k: &[(Complex64, Complex64)],
    sign: f64,
    z1: End,
    z2: End,
) -> Result<()> {
    let anchor = out.anchor;
    for &(a, alpha) in f {
        if a == ZERO {
            continue;
        }
        for &(kc, rho) in k {
            if kc == ZERO {
                continue;
            }
            if clustered(alpha, rho) {
                return Err(RefractError::ClusteredPoles(format!(
                    "kernel exponent {alpha} meets convolution exponent {rho}; perturb q slightly"
                )));
            }
            let c = rho - alpha;
            let base = a * kc * sign / c;
            for (end, s) in [(z2, 1.0), (z1, -1.0)] {
                match end {
                    End::Moving => out.push(base * s * (rho * anchor).exp(), rho),
                    End::Fixed(z0) => out.push(base * s * (alpha * anchor + c * z0).exp(), alpha),
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityPiece {
    pub lo: f64,
    pub hi: f64,
    pub sum: ExpSum,
}

/// Density of `U_{e(q)}`: exponential sums on consecutive intervals covering the line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventDensity {
    pub pieces: Vec<DensityPiece>,
}

impl ResolventDensity {
    pub fn eval_complex(&self, y: f64) -> Complex64 {
        let p = self
            .pieces
            .iter()
            .find(|p| y < p.hi)
            .unwrap_or_else(|| self.pieces.last().expect("non-empty"));
        p.sum.eval(y)
    }

    pub fn eval(&self, y: f64) -> Result<f64> {
        let v = ensure_real(self.eval_complex(y), "density", REALNESS_TOL)?;
        if v < -CLAMP_TOL {
            return Err(RefractError::ProbabilityOutOfRange { value: v });
        }
        Ok(v.max(0.0))
    }

    /// Limits from the left and right at `y`.
    pub fn one_sided(&self, y: f64) -> (Complex64, Complex64) {
        let left = self.pieces.iter().find(|p| y <= p.hi).expect("covers the line");
        let right = self.pieces.iter().find(|p| y < p.hi).expect("covers the line");
        (left.sum.eval(y), right.sum.eval(y))
    }

    /// `int_lo^hi e^{tilt y} f(y) dy`, exact.
    pub fn integrate_weighted(&self, lo: f64, hi: f64, tilt: f64) -> Result<Complex64> {
        let mut total = ZERO;
        for p in &self.pieces {
            let a = lo.max(p.lo);
            let b = hi.min(p.hi);
            if a < b {
                let s = if tilt == 0.0 { p.sum.clone() } else { p.sum.tilt(tilt) };
                total += s.integrate(a, b)?;
            }
        }
        Ok(total)
    }

    pub fn total_mass(&self) -> Result<Complex64> {
        self.integrate_weighted(f64::NEG_INFINITY, f64::INFINITY, 0.0)
    }
}

/// Coefficients of `x -> P_x(U > y)` for fixed `y > b`:
///
/// ```text
/// x <= b:      sum J_k e^{beta_k (x - b)}
/// b <= x <= y: sum H_k e^{beta_hat_k (x - y)} + sum P_k e^{gamma_hat_k (b - x)}
/// x >= y:      1 + sum Q_k e^{gamma_hat_k (y - x)} + sum P_k e^{gamma_hat_k (b - x)}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PastingSolution {
    pub y: f64,
    pub b: f64,
    pub beta: Vec<Complex64>,
    pub beta_hat: Vec<Complex64>,
    pub gamma_hat: Vec<Complex64>,
    pub j: Vec<Complex64>,
    pub h_hat: Vec<Complex64>,
    pub q_hat: Vec<Complex64>,
    pub p_hat: Vec<Complex64>,
    pub p_hat_star: Vec<Complex64>,
}

impl PastingSolution {
    fn new(r: &Resolvent, y: f64) -> Result<Self> {
        let b = r.spec.b;
        if y <= b {
            return Err(RefractError::Domain(format!(
                "three-branch representation needs y > b (y = {y}, b = {b})"
            )));
        }
        let beta = &r.roots.beta;
        let beta_hat = &r.roots.beta_hat;
        let gamma_hat = &r.roots.gamma_hat;
        for bh in beta_hat {
            if let Some(bk) = beta.iter().find(|bk| clustered(**bk, *bh)) {
                return Err(RefractError::ClusteredPoles(format!(
                    "refracted root {bh} coincides with {bk}; the representation needs delta != 0"
                )));
            }
        }
        let ch = &r.factors.sup_y.residues;
        let dh = &r.factors.inf_y.residues;
        let decay: Vec<Complex64> = beta_hat.iter().map(|bh| (bh * (b - y)).exp()).collect();

        let h_hat: Vec<Complex64> = beta_hat
            .iter()
            .zip(ch)
            .map(|(bh, c)| {
                c / bh * gamma_hat.iter().zip(dh).map(|(g, d)| d / (bh + g)).sum::<Complex64>()
            })
            .collect();
        let q_hat: Vec<Complex64> = gamma_hat
            .iter()
            .zip(dh)
            .map(|(g, d)| {
                d * beta_hat
                    .iter()
                    .zip(ch)
                    .map(|(bh, c)| c / (bh * (bh + g)))
                    .sum::<Complex64>()
                    - d / g
            })
            .collect();
        let p_hat_star: Vec<Complex64> = gamma_hat
            .iter()
            .zip(dh)
            .map(|(g, d)| {
                -beta_hat
                    .iter()
                    .zip(ch)
                    .zip(&decay)
                    .map(|((bh, c), e)| c / bh * d / (bh + g) * e)
                    .sum::<Complex64>()
            })
            .collect();

        // residues of the closed rational form
        let numer = |x: Complex64| jump_poly(&r.spec.jumps_plus, x, -1.0) * jump_poly(&r.spec.jumps_minus, x, 1.0);
        let weights: Vec<Complex64> = beta_hat
            .iter()
            .enumerate()
            .map(|(k, &bh)| {
                let mut g = ONE;
                for &bi in beta {
                    g *= bh - bi;
                }
                for &gi in gamma_hat {
                    g *= bh + gi;
                }
                g / numer(bh) * (-h_hat[k] * decay[k])
            })
            .collect();
        let tail = |x: Complex64| -> Complex64 {
            beta_hat.iter().zip(&weights).map(|(bh, w)| w / (x - bh)).sum()
        };

        let j = beta
            .iter()
            .enumerate()
            .map(|(i, &bi)| {
                let mut den = ONE;
                for (l, &bl) in beta.iter().enumerate() {
                    if l != i {
                        den *= bi - bl;
                    }
                }
                for &g in gamma_hat {
                    den *= bi + g;
                }
                numer(bi) / den * tail(bi)
            })
            .collect();
        let p_hat = gamma_hat
            .iter()
            .enumerate()
            .map(|(i, &gi)| {
                let x = -gi;
                let mut den = ONE;
                for &bl in beta {
                    den *= x - bl;
                }
                for (l, &gl) in gamma_hat.iter().enumerate() {
                    if l != i {
                        den *= x + gl;
                    }
                }
                -numer(x) / den * tail(x)
            })
            .collect();

        Ok(Self {
            y,
            b,
            beta: beta.clone(),
            beta_hat: beta_hat.clone(),
            gamma_hat: gamma_hat.clone(),
            j,
            h_hat,
            q_hat,
            p_hat,
            p_hat_star,
        })
    }

    pub fn eval_complex(&self, x: f64) -> Complex64 {
        let (b, y) = (self.b, self.y);
        let p_part = || -> Complex64 {
            self.gamma_hat.iter().zip(&self.p_hat).map(|(g, p)| p * (g * (b - x)).exp()).sum()
        };
        if x <= b {
            self.beta.iter().zip(&self.j).map(|(bk, jk)| jk * (bk * (x - b)).exp()).sum()
        } else if x <= y {
            self.beta_hat
                .iter()
                .zip(&self.h_hat)
                .map(|(bh, h)| h * (bh * (x - y)).exp())
                .sum::<Complex64>()
                + p_part()
        } else {
            ONE + self
                .gamma_hat
                .iter()
                .zip(&self.q_hat)
                .map(|(g, qk)| qk * (g * (y - x)).exp())
                .sum::<Complex64>()
                + p_part()
        }
    }

    /// `P_x(U > y)`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        probability(self.eval_complex(x))
    }

    /// `sum H - sum Q - 1`, zero in exact arithmetic.
    pub fn mass_gap(&self) -> Complex64 {
        self.h_hat.iter().sum::<Complex64>() - self.q_hat.iter().sum::<Complex64>() - 1.0
    }

    /// Mismatch of the two branch values at `x = b`.
    pub fn value_gap(&self) -> Complex64 {
        let at_b: Complex64 = self
            .beta_hat
            .iter()
            .zip(&self.h_hat)
            .map(|(bh, h)| h * (bh * (self.b - self.y)).exp())
            .sum::<Complex64>()
            + self.p_hat.iter().sum::<Complex64>();
        self.j.iter().sum::<Complex64>() - at_b
    }

    /// Mismatch of the two branch slopes at `x = b`.
    pub fn slope_gap(&self) -> Complex64 {
        let left: Complex64 = self.beta.iter().zip(&self.j).map(|(b, j)| b * j).sum();
        let right: Complex64 = self
            .beta_hat
            .iter()
            .zip(&self.h_hat)
            .map(|(bh, h)| bh * h * (bh * (self.b - self.y)).exp())
            .sum::<Complex64>()
            - self.gamma_hat.iter().zip(&self.p_hat).map(|(g, p)| g * p).sum::<Complex64>();
        left - right
    }
}

/// `prod (x + sign * rate_k)^{order_k}`.
fn jump_poly(mix: &JumpMixture, x: Complex64, sign: f64) -> Complex64 {
    mix.terms
        .iter()
        .fold(ONE, |acc, t| acc * (x + t.rate * sign).powu(t.order as u32))
}

/// One Erlang component of the overshoot: density
/// `coeff * rate^j v^{j-1} e^{-rate v} / (j-1)!` on `v > 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OvershootPart {
    pub rate: Complex64,
    pub order: usize,
    pub coeff: Complex64,
}

/// `E[e^{-q tau}; overshoot in dv]`: an atom at 0 (creeping) plus Erlang parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OvershootLaw {
    pub creep: Complex64,
    pub parts: Vec<OvershootPart>,
}

impl OvershootLaw {
    /// `E[e^{-q tau - s * overshoot}]`.
    pub fn laplace(&self, s: Complex64) -> Complex64 {
        self.parts.iter().fold(self.creep, |acc, p| {
            acc + p.coeff * (p.rate / (p.rate + s)).powu(p.order as u32)
        })
    }

    /// `E[e^{-q tau}]`.
    pub fn total(&self) -> Complex64 {
        self.laplace(ZERO)
    }

    pub fn total_real(&self) -> Result<f64> {
        probability(self.total())
    }
}

/// Partial-fraction expansion in `s` of
/// `prod a^m / prod r * prod (s + r) / prod (s + a)^m * sum R_k e^{-r_k d} / (s + r_k)`.
fn overshoot_law(roots: &[Complex64], residues: &[Complex64], mix: &JumpMixture, dist: f64) -> Result<OvershootLaw> {
    for t in &mix.terms {
        if let Some(r) = roots.iter().find(|r| clustered(**r, t.rate)) {
            return Err(RefractError::ClusteredPoles(format!(
                "root {r} coincides with jump rate {}",
                t.rate
            )));
        }
    }
    let pref = mix
        .terms
        .iter()
        .fold(ONE, |acc, t| acc * t.rate.powu(t.order as u32))
        / roots.iter().product::<Complex64>();
    let weights: Vec<Complex64> = roots
        .iter()
        .zip(residues)
        .map(|(r, c)| pref * c * (-r * dist).exp())
        .collect();
    let creep = weights.iter().sum();

    let mut parts = Vec::new();
    for (p, tp) in mix.terms.iter().enumerate() {
        let m = tp.order;
        // Taylor coefficients in t = s + rate_p of (s + rate_p)^m times the rational function
        let mut acc = vec![ZERO; m];
        for (k, wk) in weights.iter().enumerate() {
            let mut s = Series::one(m);
            for (l, rl) in roots.iter().enumerate() {
                if l != k {
                    s.mul_linear(rl - tp.rate);
                }
            }
            for (o, to) in mix.terms.iter().enumerate() {
                if o != p {
                    for _ in 0..to.order {
                        s.div_linear(to.rate - tp.rate);
                    }
                }
            }
            for (a, c) in acc.iter_mut().zip(s.coeffs()) {
                *a += wk * c;
            }
        }
        for j in 1..=m {
            parts.push(OvershootPart {
                rate: tp.rate,
                order: j,
                coeff: acc[m - j] / tp.rate.powu(j as u32),
            });
        }
    }
    Ok(OvershootLaw { creep, parts })
}

/// `P_x(U_t <= y)` at a fixed time, by inverting `q -> P_x(U_{e(q)} <= y) / q`.
pub fn prob_below_at_time(spec: &ModelSpec, x: f64, y: f64, t: f64, cfg: &InversionConfig) -> Result<f64> {
    invert(|q| Ok(Resolvent::new_complex(spec, q)?.prob_below_complex(x, y)? / q), t, cfg)
}

/// As [`prob_below_at_time`], cross-checked against the other inversion method.
pub fn prob_below_at_time_verified(
    spec: &ModelSpec,
    x: f64,
    y: f64,
    t: f64,
    cfg: &InversionConfig,
) -> Result<VerifiedInversion> {
    invert_verified(|q| Ok(Resolvent::new_complex(spec, q)?.prob_below_complex(x, y)? / q), t, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JumpTerm, Side};
    use crate::wiener_hopf::product_form;
    use approx::assert_abs_diff_eq;

    fn kou() -> ModelSpec {
        ModelSpec::kou(0.05, 0.2, 1.0, 3.0, 0.5, 2.0).with_refraction(0.03, 0.0)
    }

    fn mixed(b: f64) -> ModelSpec {
        let mut m = kou().with_refraction(0.08, b);
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

    fn brownian() -> ModelSpec {
        ModelSpec::brownian(0.0, 1.0).with_refraction(0.5, 0.0)
    }

    #[test]
    fn mass_splits_at_the_threshold() {
        for b in [-0.7, 0.0, 0.4] {
            let r = Resolvent::new(&mixed(b), 0.2).unwrap();
            for x in [-1.0, 0.0, 0.3, 2.0] {
                let up = r.cdf_upper(x, b).unwrap();
                let lo = r.cdf_lower(x, b).unwrap();
                assert_eq!(up + lo, 1.0, "b={b} x={x}");
            }
        }
    }

    #[test]
    fn wrong_side_level_is_rejected() {
        let r = Resolvent::new(&kou(), 0.1).unwrap();
        assert!(r.cdf_upper(0.0, -0.1).is_err());
        assert!(r.cdf_lower(0.0, 0.1).is_err());
        assert!(r.cdf_upper(0.0, -1e-13).is_ok());
    }

    #[test]
    fn zero_delta_reduces_to_unrefracted_law() {
        let m = kou().unrefracted();
        let r = Resolvent::new(&m, 0.1).unwrap();
        for (x, y) in [(0.0, 0.5), (0.3, 1.2), (-1.0, 0.0)] {
            let want = 1.0 - r.kernels.kq_cdf(y - x).unwrap();
            assert_abs_diff_eq!(r.cdf_upper(x, y).unwrap(), want, epsilon = 1e-14);
        }
        // density of X at e(q) from the sup/inf convolution of X itself
        let (cs, ds) = (&r.factors.sup_x, &r.factors.inf_x);
        let law = |v: f64| -> f64 {
            let mut s = ZERO;
            for (b, c) in cs.rates().zip(&cs.residues) {
                for (g, d) in ds.rates().zip(&ds.residues) {
                    let k = c * d / (b + g);
                    s += if v >= 0.0 { k * (-b * v).exp() } else { k * (g * v).exp() };
                }
            }
            s.re
        };
        let dens = r.density(0.0).unwrap();
        for i in 0..401 {
            let y = -10.0 + 20.0 * i as f64 / 400.0;
            assert!((dens.eval(y).unwrap() - law(y)).abs() < 1e-10);
        }
    }

    #[test]
    fn density_has_unit_mass_for_every_case() {
        for b in [-0.7, 0.0, 0.4] {
            let r = Resolvent::new(&mixed(b), 0.2).unwrap();
            for x in [-1.5, 0.0, 0.2, 1.0] {
                let mass = r.density(x).unwrap().total_mass().unwrap();
                assert!((mass - 1.0).norm() < 1e-8, "b={b} x={x} mass={mass}");
            }
        }
    }

    #[test]
    fn density_is_derivative_of_cdf() {
        for b in [-0.7, 0.0, 0.4] {
            let r = Resolvent::new(&mixed(b), 0.2).unwrap();
            let x = 0.1;
            let d = r.density(x).unwrap();
            for y in [-2.0, -0.9, -0.3, 0.05, 0.25, 0.7, 1.5] {
                if (y - b).abs() < 1e-3 {
                    continue;
                }
                let h = 1e-5;
                let num = (r.prob_below(x, y + h).unwrap() - r.prob_below(x, y - h).unwrap()) / (2.0 * h);
                assert!((d.eval(y).unwrap() - num).abs() < 1e-6, "b={b} y={y}");
            }
        }
    }

    #[test]
    fn density_is_continuous_at_threshold() {
        let r = Resolvent::new(&brownian(), 0.5).unwrap();
        let (l, rr) = r.density(0.0).unwrap().one_sided(0.0);
        assert!((l - rr).norm() < 1e-10);
        let r = Resolvent::new(&mixed(0.4), 0.2).unwrap();
        let (l, rr) = r.density(0.1).unwrap().one_sided(0.4);
        assert!((l - rr).norm() < 1e-10);
    }

    #[test]
    fn cdfs_are_monotone_in_level() {
        let r = Resolvent::new(&mixed(0.0), 0.2).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let y = 0.1 * i as f64;
            let v = r.cdf_upper(0.0, y).unwrap();
            assert!(v <= prev + 1e-14);
            prev = v;
        }
        let mut prev = 0.0;
        for i in 0..50 {
            let y = -5.0 + 0.1 * i as f64;
            let v = r.cdf_lower(0.0, y).unwrap();
            assert!(v >= prev - 1e-14);
            prev = v;
        }
    }

    #[test]
    fn three_branch_route_agrees_with_convolution_route() {
        for m in [kou(), mixed(0.3), brownian()] {
            let r = Resolvent::new(&m, 0.1).unwrap();
            let b = m.b;
            for yi in 0..5 {
                let y = b + 0.1 + 0.4 * yi as f64;
                let p = r.pasting_solution(y).unwrap();
                assert!(p.mass_gap().norm() < 1e-10);
                assert!(p.value_gap().norm() < 1e-10);
                assert!(p.slope_gap().norm() < 1e-10);
                for xi in 0..5 {
                    let x = b - 1.0 + 0.7 * xi as f64;
                    let a = r.cdf_upper(x, y).unwrap();
                    let c = p.eval(x).unwrap();
                    assert!((a - c).abs() < 1e-8, "x={x} y={y}: {a} vs {c}");
                }
            }
        }
    }

    #[test]
    fn three_branch_limits() {
        let r = Resolvent::new(&kou(), 0.1).unwrap();
        let p = r.pasting_solution(0.5).unwrap();
        assert!(p.eval(-60.0).unwrap() < 1e-9);
        assert!((p.eval(60.0).unwrap() - 1.0).abs() < 1e-9);
        assert!(r.pasting_solution(0.0).is_err());
        assert!(Resolvent::new(&kou().unrefracted(), 0.1)
            .unwrap()
            .pasting_solution(0.5)
            .is_err());
    }

    #[test]
    fn smooth_pasting_across_threshold() {
        let m = mixed(0.2);
        let r = Resolvent::new(&m, 0.3).unwrap();
        let (b, y) = (m.b, 0.9);
        let h = 1e-5;
        let v0 = r.cdf_upper(b, y).unwrap();
        let vl = r.cdf_upper(b - h, y).unwrap();
        let vr = r.cdf_upper(b + h, y).unwrap();
        assert!((vl - v0).abs() < 1e-4 && (vr - v0).abs() < 1e-4);
        let left = (v0 - r.cdf_upper(b - 2.0 * h, y).unwrap()) / (2.0 * h);
        let right = (r.cdf_upper(b + 2.0 * h, y).unwrap() - v0) / (2.0 * h);
        assert!((left - right).abs() < 1e-4);
        let p = r.pasting_solution(y).unwrap();
        assert!(p.slope_gap().norm() < 1e-10);
    }

    #[test]
    fn occupation_limits() {
        let q = 0.25;
        let r = Resolvent::new(&kou(), q).unwrap();
        assert!((r.occupation_transform(0.0, 80.0).unwrap() - 1.0 / (q * q)).abs() < 1e-8);
        assert!(r.occupation_transform(0.0, -80.0).unwrap().abs() < 1e-8);
    }

    #[test]
    fn complex_q_matches_real_q_on_the_axis() {
        let m = mixed(0.0);
        let a = Resolvent::new(&m, 0.3).unwrap();
        let c = Resolvent::new_complex(&m, Complex64::new(0.3, 0.0)).unwrap();
        let d = (a.cdf_upper(0.0, 0.4).unwrap() - c.cdf_upper_complex(0.0, 0.4).unwrap()).norm();
        assert!(d < 1e-12);
        let z = Resolvent::new_complex(&m, Complex64::new(0.3, 2.0)).unwrap();
        let below = z.prob_below_complex(0.0, 0.4).unwrap();
        let above = z.cdf_upper_complex(0.0, 0.4).unwrap();
        assert!((below + above - 1.0).norm() < 1e-12);
    }

    #[test]
    fn brownian_passage_creeps() {
        let r = Resolvent::new(&ModelSpec::brownian(0.0, 1.0), 0.5).unwrap();
        let law = r.first_passage_up(0.0).unwrap();
        assert!(law.parts.is_empty());
        assert_abs_diff_eq!(law.creep.re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.first_passage_up(2.0).unwrap().total().re, (-2.0f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn passage_total_is_supremum_tail() {
        for m in [kou(), mixed(0.0)] {
            let r = Resolvent::new(&m, 0.1).unwrap();
            let tail: Complex64 = r
                .roots
                .beta
                .iter()
                .zip(&r.factors.sup_x.residues)
                .map(|(b, c)| c / b * (-b).exp())
                .sum();
            let law = r.first_passage_up(1.0).unwrap();
            assert!((law.total() - tail).norm() < 1e-12);
            // expansion reproduces the rational function away from s = 0
            for s in [0.7, 3.0, 11.0] {
                let sc = Complex64::new(s, 0.0);
                let psi_plus = product_form(&r.roots.beta, &m.jumps_plus, sc);
                let direct: Complex64 = r
                    .roots
                    .beta
                    .iter()
                    .zip(&r.factors.sup_x.residues)
                    .map(|(b, c)| c * (-b).exp() / (sc + b))
                    .sum::<Complex64>()
                    / psi_plus;
                assert!((law.laplace(sc) - direct).norm() < 1e-12, "s={s}");
            }
            let down = r.first_passage_down(-1.0).unwrap();
            let tail: Complex64 = r
                .roots
                .gamma_hat
                .iter()
                .zip(&r.factors.inf_y.residues)
                .map(|(g, d)| d / g * (-g).exp())
                .sum();
            assert!((down.total() - tail).norm() < 1e-12);
        }
    }

    #[test]
    fn fixed_time_gaussian_law() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let m = ModelSpec::brownian(0.1, 0.3);
        let t = 1.5;
        for y in [-0.4, 0.0, 0.5] {
            let want = Normal::new(0.1 * t, 0.3 * t.sqrt()).unwrap().cdf(y);
            let got = prob_below_at_time(&m, 0.0, y, t, &InversionConfig::euler()).unwrap();
            assert!((got - want).abs() < 1e-7, "y={y}: {got} vs {want}");
        }
        let v = prob_below_at_time_verified(&kou(), 0.0, 0.2, 1.0, &InversionConfig::euler()).unwrap();
        assert!((0.0..=1.0).contains(&v.value));
    }
}
