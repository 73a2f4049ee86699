//! Monte Carlo simulation of `X`, `Y = X - delta t` and the refracted process `U`.
//!
//! Every path owns a ChaCha stream selected by its index, and per-chunk sums
//! are reduced in chunk order, so estimates depend only on
//! `(seed, paths, dt)` and not on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RefractError, Result};
use crate::model::{JumpMixture, ModelSpec};

const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { paths: 100_000, dt: 1e-3, seed: 20_240_601, threads: 1 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths < 2 {
            return Err(RefractError::Domain("need at least 2 paths".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(RefractError::Domain(format!("dt must be positive, got {}", self.dt)));
        }
        if self.threads == 0 {
            return Err(RefractError::Domain("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub paths: usize,
}

impl McEstimate {
    /// Number of standard errors separating the estimate from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.std_error == 0.0 {
            if (self.value - target).abs() < 1e-15 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.value - target).abs() / self.std_error
        }
    }

    pub fn within(&self, target: f64, k: f64) -> bool {
        self.z_score(target) <= k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Above,
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extreme {
    #[serde(rename = "supX")]
    SupX,
    #[serde(rename = "supY")]
    SupY,
    #[serde(rename = "infX")]
    InfX,
    #[serde(rename = "infY")]
    InfY,
}

/// Erlang mixture sampler for one jump side.
#[derive(Debug, Clone)]
struct JumpSampler {
    cumulative: Vec<f64>,
    laws: Vec<Gamma<f64>>,
}

impl JumpSampler {
    fn new(mix: &JumpMixture) -> Result<Self> {
        let mut cumulative = Vec::new();
        let mut laws = Vec::new();
        let mut acc = 0.0;
        for t in &mix.terms {
            for (j, w) in t.weights.iter().enumerate() {
                acc += w.re;
                cumulative.push(acc);
                laws.push(
                    Gamma::new(j as f64 + 1.0, 1.0 / t.rate.re)
                        .map_err(|e| RefractError::Domain(e.to_string()))?,
                );
            }
        }
        Ok(Self { cumulative, laws })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let total = *self.cumulative.last().expect("non-empty mixture");
        let u: f64 = rng.gen::<f64>() * total;
        let k = self.cumulative.partition_point(|c| *c <= u).min(self.laws.len() - 1);
        self.laws[k].sample(rng)
    }
}

/// Pre-validated simulation model.
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: ModelSpec,
    rate: f64,
    up_share: f64,
    up: Option<JumpSampler>,
    down: Option<JumpSampler>,
}

impl Simulator {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.ensure_valid()?;
        if !spec.jumps_plus.is_real_nonnegative() || !spec.jumps_minus.is_real_nonnegative() {
            return Err(RefractError::McUnsupported);
        }
        let sampler = |lam: f64, mix: &JumpMixture| -> Result<Option<JumpSampler>> {
            if lam > 0.0 {
                Ok(Some(JumpSampler::new(mix)?))
            } else {
                Ok(None)
            }
        };
        let rate = spec.lambda_plus + spec.lambda_minus;
        Ok(Self {
            spec: spec.clone(),
            rate,
            up_share: if rate > 0.0 { spec.lambda_plus / rate } else { 0.0 },
            up: sampler(spec.lambda_plus, &spec.jumps_plus)?,
            down: sampler(spec.lambda_minus, &spec.jumps_minus)?,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn next_gap<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.rate > 0.0 {
            -rng.gen::<f64>().ln_1p_neg() / self.rate
        } else {
            f64::INFINITY
        }
    }

    fn jump<R: Rng>(&self, rng: &mut R) -> f64 {
        if rng.gen::<f64>() < self.up_share {
            self.up.as_ref().expect("positive jumps").sample(rng)
        } else {
            -self.down.as_ref().expect("negative jumps").sample(rng)
        }
    }

    /// Euler path of `U` from `x0` to `horizon`, accumulating time spent
    /// strictly below each level. Returns the terminal value.
    pub fn run_u<R: Rng>(&self, x0: f64, horizon: f64, dt: f64, levels: &[f64], below: &mut [f64], rng: &mut R) -> f64 {
        let s = &self.spec;
        let (mu, mu_hat, sig, b) = (s.mu, s.mu - s.delta, s.sigma, s.b);
        let mut u = x0;
        let mut t = 0.0;
        loop {
            let next = t + self.next_gap(rng);
            let stop = next.min(horizon);
            let span = stop - t;
            if span > 0.0 {
                let n = (span / dt).ceil().max(1.0);
                let h = span / n;
                let sh = sig * h.sqrt();
                for _ in 0..n as usize {
                    for (lv, acc) in levels.iter().zip(below.iter_mut()) {
                        if u < *lv {
                            *acc += h;
                        }
                    }
                    let z: f64 = rng.sample(StandardNormal);
                    u += if u > b { mu_hat } else { mu } * h + sh * z;
                }
            }
            if next >= horizon {
                return u;
            }
            u += self.jump(rng);
            t = next;
        }
    }

    /// Same path at step `dt / 2` and at step `dt` from the same Brownian
    /// increments. Returns `(fine, coarse)` terminal values.
    pub fn run_u_coupled<R: Rng>(&self, x0: f64, horizon: f64, dt: f64, rng: &mut R) -> (f64, f64) {
        let s = &self.spec;
        let (mu, mu_hat, sig, b) = (s.mu, s.mu - s.delta, s.sigma, s.b);
        let (mut fine, mut coarse) = (x0, x0);
        let mut t = 0.0;
        loop {
            let next = t + self.next_gap(rng);
            let stop = next.min(horizon);
            let span = stop - t;
            if span > 0.0 {
                let n = (span / dt).ceil().max(1.0);
                let h = span / n;
                let half = 0.5 * h;
                let sh = sig * half.sqrt();
                for _ in 0..n as usize {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    fine += if fine > b { mu_hat } else { mu } * half + sh * z1;
                    fine += if fine > b { mu_hat } else { mu } * half + sh * z2;
                    coarse += if coarse > b { mu_hat } else { mu } * h + sh * (z1 + z2);
                }
            }
            if next >= horizon {
                return (fine, coarse);
            }
            let j = self.jump(rng);
            fine += j;
            coarse += j;
            t = next;
        }
    }

    /// Euler path of `U` alongside `Y` driven by the same noise; returns both terminal values.
    pub fn run_u_with_y<R: Rng>(&self, x0: f64, horizon: f64, dt: f64, rng: &mut R) -> (f64, f64) {
        let s = &self.spec;
        let (mu, mu_hat, sig, b) = (s.mu, s.mu - s.delta, s.sigma, s.b);
        let (mut u, mut y) = (x0, x0);
        let mut t = 0.0;
        loop {
            let next = t + self.next_gap(rng);
            let stop = next.min(horizon);
            let span = stop - t;
            if span > 0.0 {
                let n = (span / dt).ceil().max(1.0);
                let h = span / n;
                let sh = sig * h.sqrt();
                for _ in 0..n as usize {
                    let z: f64 = rng.sample(StandardNormal);
                    u += if u > b { mu_hat } else { mu } * h + sh * z;
                    y += mu_hat * h + sh * z;
                }
            }
            if next >= horizon {
                return (u, y);
            }
            let j = self.jump(rng);
            u += j;
            y += j;
            t = next;
        }
    }

    /// Exact running supremum and infimum of the Levy process with drift `drift`
    /// on `[0, horizon]`, started at 0.
    pub fn run_extremes<R: Rng>(&self, drift: f64, horizon: f64, rng: &mut R) -> (f64, f64) {
        let sig2 = self.spec.sigma * self.spec.sigma;
        let (mut x, mut hi, mut lo) = (0.0f64, 0.0f64, 0.0f64);
        let mut t = 0.0;
        loop {
            let next = t + self.next_gap(rng);
            let span = next.min(horizon) - t;
            let z: f64 = rng.sample(StandardNormal);
            let x1 = x + drift * span + self.spec.sigma * span.sqrt() * z;
            let d = x1 - x;
            let e: f64 = -rng.gen::<f64>().ln_1p_neg();
            let r = (d * d + 2.0 * sig2 * span * e).sqrt();
            hi = hi.max(0.5 * (x + x1 + r));
            let e: f64 = -rng.gen::<f64>().ln_1p_neg();
            let r = (d * d + 2.0 * sig2 * span * e).sqrt();
            lo = lo.min(0.5 * (x + x1 - r));
            x = x1;
            if next >= horizon {
                return (hi, lo);
            }
            x += self.jump(rng);
            hi = hi.max(x);
            lo = lo.min(x);
            t = next;
        }
    }

    /// First passage of the process with drift `drift` above `level > 0`
    /// (`up`) or below `level < 0`, before `horizon`. Returns the overshoot
    /// (0 when creeping) or `None` if no passage happens.
    pub fn run_passage<R: Rng>(&self, drift: f64, level: f64, up: bool, horizon: f64, rng: &mut R) -> Option<f64> {
        let sig2 = self.spec.sigma * self.spec.sigma;
        let mut x = 0.0f64;
        let mut t = 0.0;
        loop {
            let next = t + self.next_gap(rng);
            let span = next.min(horizon) - t;
            let z: f64 = rng.sample(StandardNormal);
            let x1 = x + drift * span + self.spec.sigma * span.sqrt() * z;
            let d = x1 - x;
            let e: f64 = -rng.gen::<f64>().ln_1p_neg();
            let r = (d * d + 2.0 * sig2 * span * e).sqrt();
            let reached = if up {
                0.5 * (x + x1 + r) > level
            } else {
                0.5 * (x + x1 - r) < level
            };
            if reached {
                return Some(0.0);
            }
            x = x1;
            if next >= horizon {
                return None;
            }
            x += self.jump(rng);
            if up && x > level {
                return Some(x - level);
            }
            if !up && x < level {
                return Some(level - x);
            }
            t = next;
        }
    }

    /// Exact draw of `X_t`.
    pub fn sample_x<R: Rng>(&self, t: f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let mut x = self.spec.mu * t + self.spec.sigma * t.sqrt() * z;
        let mut s = self.next_gap(rng);
        while s < t {
            x += self.jump(rng);
            s += self.next_gap(rng);
        }
        x
    }
}

trait UniformExt {
    /// `ln(1 - self)`, finite for draws in `[0, 1)`.
    fn ln_1p_neg(self) -> f64;
}

impl UniformExt for f64 {
    fn ln_1p_neg(self) -> f64 {
        (-self).ln_1p()
    }
}

fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Runs `body` once per path and returns mean and standard error for each
/// of its `outputs` values.
pub fn run_paths<F>(cfg: &SimConfig, outputs: usize, body: F) -> Result<Vec<McEstimate>>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    cfg.validate()?;
    let n = cfg.paths;
    let chunks = n.div_ceil(CHUNK);
    let work = || -> Vec<Vec<(f64, f64)>> {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![(0.0, 0.0); outputs];
                let mut out = vec![0.0; outputs];
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    let mut rng = path_rng(cfg.seed, i);
                    out.iter_mut().for_each(|v| *v = 0.0);
                    body(&mut rng, &mut out);
                    for (a, v) in acc.iter_mut().zip(&out) {
                        a.0 += v;
                        a.1 += v * v;
                    }
                }
                acc
            })
            .collect()
    };
    let sums = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| RefractError::Domain(e.to_string()))?
        .install(work);
    let nf = n as f64;
    Ok((0..outputs)
        .map(|k| {
            let (s, s2) = sums.iter().fold((0.0, 0.0), |(a, b), c| (a + c[k].0, b + c[k].1));
            let mean = s / nf;
            let var = ((s2 / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
            McEstimate { value: mean, std_error: (var / nf).sqrt(), paths: n }
        })
        .collect())
}

fn check_q(q: f64) -> Result<Exp<f64>> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(RefractError::NonPositiveQ(q));
    }
    Exp::new(q).map_err(|e| RefractError::Domain(e.to_string()))
}

/// One recorded Euler path of `U`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Records every Euler step and jump of `U` on `[0, horizon]` for path `index`.
pub fn simulate_u_path(spec: &ModelSpec, cfg: &SimConfig, x0: f64, horizon: f64, index: usize) -> Result<UPath> {
    cfg.validate()?;
    let sim = Simulator::new(spec)?;
    let mut rng = path_rng(cfg.seed, index);
    let s = &sim.spec;
    let mut path = UPath { times: vec![0.0], values: vec![x0] };
    let (mut u, mut t) = (x0, 0.0);
    loop {
        let next = t + sim.next_gap(&mut rng);
        let stop = next.min(horizon);
        let span = stop - t;
        if span > 0.0 {
            let n = (span / cfg.dt).ceil().max(1.0) as usize;
            let h = span / n as f64;
            for k in 1..=n {
                let z: f64 = rng.sample(StandardNormal);
                let drift = if u > s.b { s.mu - s.delta } else { s.mu };
                u += drift * h + s.sigma * h.sqrt() * z;
                path.times.push(t + h * k as f64);
                path.values.push(u);
            }
        }
        if next >= horizon {
            return Ok(path);
        }
        u += sim.jump(&mut rng);
        t = next;
        path.times.push(t);
        path.values.push(u);
    }
}

/// Estimates of `P_x(U_{e(q)} > y)` (or `< y`) and of the occupation transform,
/// one per level, all from the same paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KilledEstimates {
    pub levels: Vec<f64>,
    pub above: Vec<McEstimate>,
    pub below: Vec<McEstimate>,
    /// `int e^{-qt} E[time below y up to t] dt`, estimated by `(1/q) * time below y before e(q)`.
    pub occupation: Vec<McEstimate>,
}

pub fn estimate_killed(spec: &ModelSpec, cfg: &SimConfig, q: f64, x: f64, levels: &[f64]) -> Result<KilledEstimates> {
    let sim = Simulator::new(spec)?;
    let killing = check_q(q)?;
    let m = levels.len();
    let est = run_paths(cfg, 3 * m, |rng, out| {
        let horizon = killing.sample(rng);
        let mut below = vec![0.0; m];
        let u = sim.run_u(x, horizon, cfg.dt, levels, &mut below, rng);
        for (k, lv) in levels.iter().enumerate() {
            out[k] = f64::from(u > *lv);
            out[m + k] = f64::from(u < *lv);
            out[2 * m + k] = below[k] / q;
        }
    })?;
    Ok(KilledEstimates {
        levels: levels.to_vec(),
        above: est[..m].to_vec(),
        below: est[m..2 * m].to_vec(),
        occupation: est[2 * m..].to_vec(),
    })
}

/// `P_x(U_{e(q)} > y)` or `P_x(U_{e(q)} < y)`.
pub fn estimate_killed_probability(spec: &ModelSpec, cfg: &SimConfig, q: f64, x: f64, y: f64, mode: Mode) -> Result<McEstimate> {
    let e = estimate_killed(spec, cfg, q, x, &[y])?;
    Ok(match mode {
        Mode::Above => e.above[0],
        Mode::Below => e.below[0],
    })
}

/// Step-size sensitivity of `P_x(U_{e(q)} > y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasCheck {
    /// Step `dt / 2`.
    pub fine: McEstimate,
    /// Step `dt`.
    pub coarse: McEstimate,
    /// Path-wise coupled `coarse - fine`.
    pub difference: McEstimate,
}

pub fn estimate_step_bias(spec: &ModelSpec, cfg: &SimConfig, q: f64, x: f64, y: f64) -> Result<BiasCheck> {
    let sim = Simulator::new(spec)?;
    let killing = check_q(q)?;
    let est = run_paths(cfg, 3, |rng, out| {
        let horizon = killing.sample(rng);
        let (f, c) = sim.run_u_coupled(x, horizon, cfg.dt, rng);
        out[0] = f64::from(f > y);
        out[1] = f64::from(c > y);
        out[2] = out[1] - out[0];
    })?;
    Ok(BiasCheck { fine: est[0], coarse: est[1], difference: est[2] })
}

/// `E[e^{-s * extreme}]` (sup) or `E[e^{s * extreme}]` (inf) for each `s`, and
/// the average density of the extreme over each `(lo, hi)` bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremeEstimates {
    pub transforms: Vec<McEstimate>,
    pub bins: Vec<McEstimate>,
}

pub fn estimate_extremes(
    spec: &ModelSpec,
    cfg: &SimConfig,
    q: f64,
    which: Extreme,
    s_values: &[f64],
    bins: &[(f64, f64)],
) -> Result<ExtremeEstimates> {
    let sim = Simulator::new(spec)?;
    let killing = check_q(q)?;
    let drift = match which {
        Extreme::SupX | Extreme::InfX => spec.mu,
        Extreme::SupY | Extreme::InfY => spec.mu - spec.delta,
    };
    let ns = s_values.len();
    let est = run_paths(cfg, ns + bins.len(), |rng, out| {
        let horizon = killing.sample(rng);
        let (hi, lo) = sim.run_extremes(drift, horizon, rng);
        let v = match which {
            Extreme::SupX | Extreme::SupY => hi,
            Extreme::InfX | Extreme::InfY => lo,
        };
        for (k, s) in s_values.iter().enumerate() {
            out[k] = (-s * v.abs()).exp();
        }
        for (k, (a, b)) in bins.iter().enumerate() {
            out[ns + k] = f64::from(v > *a && v <= *b) / (b - a);
        }
    })?;
    Ok(ExtremeEstimates { transforms: est[..ns].to_vec(), bins: est[ns..].to_vec() })
}

/// `P(sup X + inf Y' <= v)` for independent copies at `e(q)`.
pub fn estimate_convolution_cdf(spec: &ModelSpec, cfg: &SimConfig, q: f64, v: f64) -> Result<McEstimate> {
    let sim = Simulator::new(spec)?;
    let killing = check_q(q)?;
    let est = run_paths(cfg, 1, |rng, out| {
        let (hi, _) = sim.run_extremes(spec.mu, killing.sample(rng), rng);
        let (_, lo) = sim.run_extremes(spec.mu - spec.delta, killing.sample(rng), rng);
        out[0] = f64::from(hi + lo <= v);
    })?;
    Ok(est[0])
}

/// `E[e^{-q tau - s * overshoot}]` for each `s`: upward passage of `X` over
/// `level >= 0`, or downward passage of `Y` below `level <= 0`.
pub fn estimate_first_passage(spec: &ModelSpec, cfg: &SimConfig, q: f64, level: f64, s_values: &[f64]) -> Result<Vec<McEstimate>> {
    let sim = Simulator::new(spec)?;
    let killing = check_q(q)?;
    let up = level >= 0.0;
    let drift = if up { spec.mu } else { spec.mu - spec.delta };
    run_paths(cfg, s_values.len(), |rng, out| {
        let horizon = killing.sample(rng);
        if let Some(o) = sim.run_passage(drift, level, up, horizon, rng) {
            for (v, s) in out.iter_mut().zip(s_values) {
                *v = (-s * o).exp();
            }
        }
    })
}

/// `E[g(U_t)]` at a fixed time.
pub fn estimate_fixed_time<G>(spec: &ModelSpec, cfg: &SimConfig, x: f64, t: f64, g: G) -> Result<McEstimate>
where
    G: Fn(f64) -> f64 + Sync,
{
    let sim = Simulator::new(spec)?;
    if !(t > 0.0) {
        return Err(RefractError::Domain(format!("t must be positive, got {t}")));
    }
    Ok(run_paths(cfg, 1, |rng, out| {
        out[0] = g(sim.run_u(x, t, cfg.dt, &[], &mut [], rng));
    })?[0])
}

/// `E[g(U_{e(q)})]`.
pub fn estimate_killed_functional<G>(spec: &ModelSpec, cfg: &SimConfig, x: f64, q: f64, g: G) -> Result<McEstimate>
where
    G: Fn(f64) -> f64 + Sync,
{
    let sim = Simulator::new(spec)?;
    let killing = check_q(q)?;
    Ok(run_paths(cfg, 1, |rng, out| {
        let horizon = killing.sample(rng);
        out[0] = g(sim.run_u(x, horizon, cfg.dt, &[], &mut [], rng));
    })?[0])
}

/// `P_x(U_t > y) - P_x(Y_t > y)` from coupled paths.
pub fn estimate_refraction_gap(spec: &ModelSpec, cfg: &SimConfig, x: f64, t: f64, y: f64) -> Result<McEstimate> {
    let sim = Simulator::new(spec)?;
    Ok(run_paths(cfg, 1, |rng, out| {
        let (u, yy) = sim.run_u_with_y(x, t, cfg.dt, rng);
        out[0] = f64::from(u > y) - f64::from(yy > y);
    })?[0])
}

/// `E[e^{u X_t}]` from exact draws of `X_t`.
pub fn estimate_exp_moment(spec: &ModelSpec, cfg: &SimConfig, u: f64, t: f64) -> Result<McEstimate> {
    let sim = Simulator::new(spec)?;
    Ok(run_paths(cfg, 1, |rng, out| {
        out[0] = (u * sim.sample_x(t, rng)).exp();
    })?[0])
}
