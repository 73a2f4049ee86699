//! Characteristic exponents and the roots of `psi(z) = q`, `psi_hat(z) = q`.
//!
//! All root work happens in the variable `u = i z`, where the exponent becomes
//! the cumulant `kappa(u) = ln E[e^{u X_1}]`:
//!
//! ```text
//! kappa(u) = sigma^2 u^2 / 2 + mu u + lambda+ (M+(u) - 1) + lambda- (M-(-u) - 1)
//! ```
//!
//! Roots of `kappa(u) = q` with positive real part are the `beta` family and
//! roots with negative real part are `-gamma`. The refracted exponent subtracts
//! `delta u` and yields the hatted families.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{RefractError, Result};
use crate::model::ModelSpec;
use crate::poly::Poly;

/// Two roots of one family closer than this (relative) are treated as multiple.
pub const SIMPLICITY_TOL: f64 = 1e-6;
const NEWTON_MAX_ITER: usize = 60;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `kappa(u) - delta u` when `refracted`, else `kappa(u)`.
pub fn cumulant_complex(spec: &ModelSpec, u: Complex64, refracted: bool) -> Complex64 {
    let drift = if refracted { spec.mu - spec.delta } else { spec.mu };
    let mut k = u * u * (0.5 * spec.sigma * spec.sigma) + u * drift;
    if !spec.jumps_plus.is_empty() {
        k += (spec.jumps_plus.mgf(u) - 1.0) * spec.lambda_plus;
    }
    if !spec.jumps_minus.is_empty() {
        k += (spec.jumps_minus.mgf(-u) - 1.0) * spec.lambda_minus;
    }
    k
}

fn cumulant_derivative(spec: &ModelSpec, u: Complex64, refracted: bool) -> Complex64 {
    let drift = if refracted { spec.mu - spec.delta } else { spec.mu };
    let mut d = u * (spec.sigma * spec.sigma) + drift;
    if !spec.jumps_plus.is_empty() {
        d += spec.jumps_plus.mgf_derivative(u) * spec.lambda_plus;
    }
    if !spec.jumps_minus.is_empty() {
        d -= spec.jumps_minus.mgf_derivative(-u) * spec.lambda_minus;
    }
    d
}

fn check_pole(spec: &ModelSpec, u: Complex64) -> Result<()> {
    let hits = |rate: Complex64, at: Complex64| (rate - at).norm() <= 1e-14 * (1.0 + rate.norm());
    let plus = spec.jumps_plus.terms.iter().any(|t| hits(t.rate, u));
    let minus = spec.jumps_minus.terms.iter().any(|t| hits(t.rate, -u));
    if plus || minus {
        // report in the z variable, z = -i u
        let z = Complex64::new(0.0, -1.0) * u;
        return Err(RefractError::ExponentPole { re: z.re, im: z.im });
    }
    Ok(())
}

/// Characteristic exponent `psi(z)`; `ln E[e^{i z X_1}]` for real `z`.
pub fn psi(spec: &ModelSpec, z: Complex64) -> Result<Complex64> {
    let u = Complex64::new(0.0, 1.0) * z;
    check_pole(spec, u)?;
    Ok(cumulant_complex(spec, u, false))
}

/// `psi_hat(z) = psi(z) - i delta z`.
pub fn psi_hat(spec: &ModelSpec, z: Complex64) -> Result<Complex64> {
    let u = Complex64::new(0.0, 1.0) * z;
    check_pole(spec, u)?;
    Ok(cumulant_complex(spec, u, true))
}

/// `(kappa(u) - q) * prod (eta_k - u)^{m_k} * prod (theta_k + u)^{n_k}` as a
/// polynomial in `u`. Its roots are `{beta_k} U {-gamma_k}` (hatted families
/// when `refracted`).
pub fn characteristic_polynomial(spec: &ModelSpec, q: Complex64, refracted: bool) -> Poly {
    let drift = if refracted { spec.mu - spec.delta } else { spec.mu };
    let up: Vec<Poly> = spec
        .jumps_plus
        .terms
        .iter()
        .map(|t| Poly::linear(t.rate, c(-1.0)).pow(t.order))
        .collect();
    let down: Vec<Poly> = spec
        .jumps_minus
        .terms
        .iter()
        .map(|t| Poly::linear(t.rate, c(1.0)).pow(t.order))
        .collect();
    let product = |skip_up: Option<usize>, skip_down: Option<usize>| {
        let mut p = Poly::one();
        for (k, f) in up.iter().enumerate() {
            if Some(k) != skip_up {
                p = &p * f;
            }
        }
        for (k, f) in down.iter().enumerate() {
            if Some(k) != skip_down {
                p = &p * f;
            }
        }
        p
    };

    let lam_p = if spec.jumps_plus.is_empty() { 0.0 } else { spec.lambda_plus };
    let lam_m = if spec.jumps_minus.is_empty() { 0.0 } else { spec.lambda_minus };
    let quadratic = Poly::new(vec![
        c(-lam_p - lam_m) - q,
        c(drift),
        c(0.5 * spec.sigma * spec.sigma),
    ]);
    let mut total = &quadratic * &product(None, None);

    for (k, t) in spec.jumps_plus.terms.iter().enumerate() {
        let rest = product(Some(k), None);
        let base = Poly::linear(t.rate, c(-1.0));
        let mut eta_pow = Complex64::new(1.0, 0.0);
        for (j, w) in t.weights.iter().enumerate() {
            eta_pow *= t.rate;
            let order = j + 1;
            let piece = &base.pow(t.order - order) * &rest;
            total = &total + &piece.scale(w * eta_pow * lam_p);
        }
    }
    for (k, t) in spec.jumps_minus.terms.iter().enumerate() {
        let rest = product(None, Some(k));
        let base = Poly::linear(t.rate, c(1.0));
        let mut th_pow = Complex64::new(1.0, 0.0);
        for (j, w) in t.weights.iter().enumerate() {
            th_pow *= t.rate;
            let order = j + 1;
            let piece = &base.pow(t.order - order) * &rest;
            total = &total + &piece.scale(w * th_pow * lam_m);
        }
    }
    total
}

/// The four root families at one killing rate `q`.
///
/// `beta`/`beta_hat` hold the roots of `kappa(u) = q` (resp. the refracted
/// cumulant) with positive real part; `gamma`/`gamma_hat` hold the negated
/// roots with negative real part. Each family is sorted by (Re, Im).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootSet {
    pub q: Complex64,
    pub beta: Vec<Complex64>,
    pub beta_hat: Vec<Complex64>,
    pub gamma: Vec<Complex64>,
    pub gamma_hat: Vec<Complex64>,
}

impl RootSet {
    pub fn is_real_q(&self) -> bool {
        self.q.im == 0.0
    }
}

/// Product of a list of complex numbers.
pub fn product(values: &[Complex64]) -> Complex64 {
    values.iter().product()
}

pub fn solve_roots(spec: &ModelSpec, q: f64) -> Result<RootSet> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(RefractError::NonPositiveQ(q));
    }
    solve_roots_complex(spec, Complex64::new(q, 0.0))
}

/// Root solve for a killing rate with positive real part. Needed by the
/// Bromwich inversion, which evaluates transforms off the real axis.
pub fn solve_roots_complex(spec: &ModelSpec, q: Complex64) -> Result<RootSet> {
    if !(q.re > 0.0) || !q.re.is_finite() || !q.im.is_finite() {
        return Err(RefractError::NonPositiveQ(q.re));
    }
    let (beta, gamma) = solve_families(spec, q, false)?;
    let (beta_hat, gamma_hat) = if spec.delta == 0.0 {
        (beta.clone(), gamma.clone())
    } else {
        solve_families(spec, q, true)?
    };
    Ok(RootSet {
        q,
        beta,
        beta_hat,
        gamma,
        gamma_hat,
    })
}

fn solve_families(
    spec: &ModelSpec,
    q: Complex64,
    refracted: bool,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let poly = characteristic_polynomial(spec, q, refracted);
    let raw = poly.roots()?;
    let polished: Vec<Complex64> = raw
        .into_iter()
        .map(|r| newton_polish(spec, q, refracted, r))
        .collect();

    let mut up: Vec<Complex64> = polished.iter().copied().filter(|r| r.re > 0.0).collect();
    let mut down: Vec<Complex64> = polished
        .iter()
        .copied()
        .filter(|r| r.re < 0.0)
        .map(|r| -r)
        .collect();

    let (name_up, name_down) = if refracted {
        ("beta_hat", "gamma_hat")
    } else {
        ("beta", "gamma")
    };
    let expected_up = 1 + spec.jumps_plus.total_order();
    let expected_down = 1 + spec.jumps_minus.total_order();
    if up.len() != expected_up {
        return Err(RefractError::CountMismatch {
            family: name_up,
            expected: expected_up,
            found: up.len(),
        });
    }
    if down.len() != expected_down {
        return Err(RefractError::CountMismatch {
            family: name_down,
            expected: expected_down,
            found: down.len(),
        });
    }

    let real_q = q.im == 0.0;
    for (family, roots) in [(name_up, &mut up), (name_down, &mut down)] {
        finish_family(family, roots, q, real_q)?;
    }

    let tol = 1e-10 * (1.0 + q.norm());
    for r in up.iter().copied().chain(down.iter().map(|g| -g)) {
        let resid = (cumulant_complex(spec, r, refracted) - q).norm();
        if !(resid <= tol) {
            return Err(RefractError::RootSolver(format!(
                "residual {resid:e} at root {r} exceeds {tol:e}"
            )));
        }
    }
    Ok((up, down))
}

fn finish_family(family: &'static str, roots: &mut [Complex64], q: Complex64, real_q: bool) -> Result<()> {
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    for i in 0..roots.len() {
        for j in i + 1..roots.len() {
            if (roots[i] - roots[j]).norm() < SIMPLICITY_TOL * (1.0 + roots[i].norm()) {
                return Err(RefractError::MultipleRoot {
                    q: format!("{q}"),
                    family,
                    a: format!("{}", roots[i]),
                    b: format!("{}", roots[j]),
                });
            }
        }
    }
    if real_q {
        symmetrize_conjugates(roots);
        // Roots sorted by real part; the leading root is real and strictly dominant.
        let lead = roots[0];
        if lead.im.abs() > 1e-8 * (1.0 + lead.norm()) {
            return Err(RefractError::RootSolver(format!(
                "leading {family} root {lead} is not real"
            )));
        }
        roots[0] = Complex64::new(lead.re, 0.0);
        if roots.len() > 1 && !(roots[1].re > roots[0].re) {
            return Err(RefractError::RootSolver(format!(
                "leading {family} root {} is not strictly dominant",
                roots[0]
            )));
        }
    }
    Ok(())
}

/// Makes conjugate partners exact conjugates and snaps near-real roots to the axis.
fn symmetrize_conjugates(roots: &mut [Complex64]) {
    let n = roots.len();
    let mut used = vec![false; n];
    for i in 0..n {
        if used[i] {
            continue;
        }
        let r = roots[i];
        if r.im.abs() <= 1e-10 * (1.0 + r.norm()) {
            roots[i] = Complex64::new(r.re, 0.0);
            used[i] = true;
            continue;
        }
        let partner = (0..n)
            .filter(|&j| j != i && !used[j])
            .min_by(|&a, &b| {
                (roots[a] - r.conj())
                    .norm()
                    .total_cmp(&(roots[b] - r.conj()).norm())
            });
        if let Some(j) = partner {
            if (roots[j] - r.conj()).norm() <= 1e-8 * (1.0 + r.norm()) {
                let avg = (r + roots[j].conj()) * 0.5;
                let (lo, hi) = if avg.im < 0.0 { (avg, avg.conj()) } else { (avg.conj(), avg) };
                // keep the sort order (Re, Im): negative imaginary part first
                let (first, second) = if i < j { (i, j) } else { (j, i) };
                roots[first] = lo;
                roots[second] = hi;
                used[i] = true;
                used[j] = true;
            }
        }
    }
}

fn newton_polish(spec: &ModelSpec, q: Complex64, refracted: bool, start: Complex64) -> Complex64 {
    let f = |u: Complex64| cumulant_complex(spec, u, refracted) - q;
    let mut u = start;
    let mut fu = f(u);
    for _ in 0..NEWTON_MAX_ITER {
        let d = cumulant_derivative(spec, u, refracted);
        if d.norm() == 0.0 || !fu.norm().is_finite() {
            break;
        }
        let step = fu / d;
        let next = u - step;
        let fnext = f(next);
        if !(fnext.norm() < fu.norm()) {
            break;
        }
        u = next;
        fu = fnext;
        if step.norm() <= 1e-16 * (1.0 + u.norm()) {
            break;
        }
    }
    u
}
