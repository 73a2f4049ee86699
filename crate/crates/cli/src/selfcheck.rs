//! Invariant battery for one model and killing rate.

use num_complex::Complex64;
use serde::Serialize;

use refract_core::charroots::{cumulant_complex, product, psi, psi_hat};
use refract_core::distribution::Resolvent;
use refract_core::error::Result;
use refract_core::model::{validate_model, ModelSpec};

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfCheck {
    pub passed: bool,
    pub checks: Vec<CheckRow>,
}

impl SelfCheck {
    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(4);
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{:<width$}  {}  {:.3e} (tol {:.1e})\n",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.value,
                c.tolerance,
            ));
        }
        s
    }
}

struct Battery(Vec<CheckRow>);

impl Battery {
    /// Records `|value| <= tolerance`.
    fn small(&mut self, name: &str, value: f64, tolerance: f64) {
        self.0.push(CheckRow {
            name: name.to_string(),
            passed: value.abs() <= tolerance,
            value: value.abs(),
            tolerance,
        });
    }

    fn flag(&mut self, name: &str, ok: bool) {
        self.0.push(CheckRow { name: name.to_string(), passed: ok, value: f64::from(!ok), tolerance: 0.0 });
    }
}

pub fn run(spec: &ModelSpec, q: f64) -> Result<SelfCheck> {
    let mut b = Battery(Vec::new());
    let report = validate_model(spec);
    for c in &report.checks {
        b.flag(&format!("model.{}", c.name), c.passed);
    }
    if !report.passed() {
        return Ok(finish(b));
    }
    let res = Resolvent::new(spec, q)?;
    let roots = &res.roots;
    let qc = Complex64::new(q, 0.0);

    let up = 1 + spec.jumps_plus.total_order();
    let down = 1 + spec.jumps_minus.total_order();
    b.flag("roots.count_beta", roots.beta.len() == up);
    b.flag("roots.count_beta_hat", roots.beta_hat.len() == up);
    b.flag("roots.count_gamma", roots.gamma.len() == down);
    b.flag("roots.count_gamma_hat", roots.gamma_hat.len() == down);
    let residual = |u: Complex64, hat: bool| (cumulant_complex(spec, u, hat) - qc).norm();
    let worst = roots
        .beta
        .iter()
        .map(|&u| residual(u, false))
        .chain(roots.beta_hat.iter().map(|&u| residual(u, true)))
        .chain(roots.gamma.iter().map(|&g| residual(-g, false)))
        .chain(roots.gamma_hat.iter().map(|&g| residual(-g, true)))
        .fold(0.0, f64::max);
    b.small("roots.residual", worst, 1e-10 * (1.0 + q));

    let f = &res.factors;
    let mut gap_x: f64 = 0.0;
    let mut gap_y: f64 = 0.0;
    for k in 0..20 {
        let theta = -10.0 + 20.0 * k as f64 / 19.0;
        let it = Complex64::new(0.0, theta);
        let tc = Complex64::new(theta, 0.0);
        let rhs = qc / (qc - psi(spec, tc)?);
        gap_x = gap_x.max((f.sup_x.eval(-it) * f.inf_x.eval(it) - rhs).norm() / rhs.norm());
        let rhs = qc / (qc - psi_hat(spec, tc)?);
        gap_y = gap_y.max((f.sup_y.eval(-it) * f.inf_y.eval(it) - rhs).norm() / rhs.norm());
    }
    b.small("factors.identity_x", gap_x, 1e-9);
    b.small("factors.identity_y", gap_y, 1e-9);
    let mass = [&f.sup_x, &f.sup_y, &f.inf_x, &f.inf_y]
        .iter()
        .map(|p| (p.mass() - 1.0).norm())
        .fold(0.0, f64::max);
    b.small("factors.unit_mass", mass, 1e-10);

    let k = &res.kernels;
    let ratio = product(&roots.beta_hat) / product(&roots.beta);
    b.small("kernels.f1_at_zero", (k.f1_at_zero - (ratio - 1.0)).norm(), 1e-10);
    b.small("kernels.f2_equals_f1_at_zero", (k.f2_at_zero - k.f1_at_zero).norm(), 1e-10);
    let other = product(&roots.gamma) / product(&roots.gamma_hat);
    b.small("kernels.root_products", (ratio - other).norm() / ratio.norm(), 1e-10);
    let lead = roots.beta_hat.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let mut floor: f64 = 0.0;
    for i in 0..=200 {
        let x = 30.0 / lead * i as f64 / 200.0;
        floor = floor.min(k.f1(x)? + 1.0);
    }
    b.small("kernels.f1_plus_one_nonnegative", floor.min(0.0), 1e-10);

    let x0 = 0.0;
    let dens = res.density(x0)?;
    b.small("distribution.density_mass", (dens.total_mass()? - 1.0).norm(), 1e-8);
    let split = res.cdf_upper(x0, spec.b)? + res.cdf_lower(x0, spec.b)? - 1.0;
    b.small("distribution.mass_split", split, 1e-12);
    let grid: Vec<f64> = (0..=40).map(|i| spec.b - 2.0 + 0.1 * i as f64).collect();
    let below: Vec<f64> = grid.iter().map(|&y| res.prob_below(x0, y)).collect::<Result<_>>()?;
    let drop = below.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    b.small("distribution.monotone", drop, 1e-10);

    if spec.delta != 0.0 {
        let y = spec.b + 0.5;
        let p = res.pasting_solution(y)?;
        b.small("distribution.value_gap", p.value_gap().norm(), 1e-10);
        b.small("distribution.slope_gap", p.slope_gap().norm(), 1e-10);
        b.small("distribution.mass_gap", p.mass_gap().norm(), 1e-10);
        let mut worst: f64 = 0.0;
        for i in 0..5 {
            let yy = spec.b + 0.05 + 0.3 * i as f64;
            let p = res.pasting_solution(yy)?;
            for j in 0..5 {
                let x = spec.b - 1.0 + 0.5 * j as f64;
                worst = worst.max((p.eval(x)? - res.cdf_upper(x, yy)?).abs());
            }
        }
        b.small("distribution.route_agreement", worst, 1e-8);
    }
    Ok(finish(b))
}

fn finish(b: Battery) -> SelfCheck {
    SelfCheck { passed: b.0.iter().all(|c| c.passed), checks: b.0 }
}
