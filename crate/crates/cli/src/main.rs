mod output;
mod selfcheck;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use refract_core::charroots::solve_roots;
use refract_core::distribution::{prob_below_at_time, prob_below_at_time_verified, Resolvent};
use refract_core::error::{RefractError, Result};
use refract_core::laplace::InversionConfig;
use refract_core::mc::{estimate_killed_probability, Mode, SimConfig};
use refract_core::model::ModelSpec;
use refract_core::pricing::{price, PricingSpec, Product};
use refract_core::wiener_hopf::WienerHopfFactors;

use output::{csv_document, emit, fmt_f64, json_document, RunManifest};

#[derive(Parser)]
#[command(name = "refract", version, about = "Resolvent laws of a refracted jump diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roots of the characteristic equations.
    Roots(Common),
    /// Wiener-Hopf factors in pole-residue form.
    Factors(Common),
    /// `P_x(U_{e(q)} <= y)`.
    DistCdf(DistArgs),
    /// Density of `U_{e(q)}` started at x.
    DistPdf(DistArgs),
    /// Laplace transform in time of the expected occupation below y.
    Occupation(DistArgs),
    /// `P_x(U_t <= y)` at a fixed time by Laplace inversion.
    Invert(InvertArgs),
    /// Price a death or maturity guarantee.
    Price(PriceArgs),
    /// Monte Carlo cross-checks.
    Mc {
        #[command(subcommand)]
        command: McCommand,
    },
    /// Run the invariant battery.
    Selfcheck(Common),
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct Common {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    q: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Route {
    Thm4,
    Prop21,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct DistArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.0)]
    x: f64,
    #[arg(long, conflicts_with = "y_grid", required_unless_present = "y_grid")]
    y: Option<f64>,
    /// Linear grid `start:end:count`.
    #[arg(long, value_parser = parse_grid, allow_hyphen_values = true)]
    y_grid: Option<Grid>,
    #[arg(long, value_enum, default_value = "thm4")]
    method: Route,
    #[arg(long, env = "REFRACT_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct InvertArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    t: f64,
    #[arg(long, default_value_t = 0.0)]
    x: f64,
    #[arg(long)]
    y: f64,
    /// Cross-check against the second inversion method.
    #[arg(long)]
    verify: bool,
    #[arg(long, env = "REFRACT_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ProductArg {
    Gmdb,
    Gmmb,
}

#[derive(Args)]
struct PriceArgs {
    #[arg(value_enum)]
    product: ProductArg,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pricing: PathBuf,
    #[arg(long)]
    verify: bool,
    #[arg(long, env = "REFRACT_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum McCommand {
    /// Compare `P_x(U_{e(q)} > y)` with a simulation estimate.
    Validate(McArgs),
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct McArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.0)]
    x: f64,
    #[arg(long)]
    y: f64,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 20_240_601)]
    seed: u64,
    #[arg(long, env = "REFRACT_THREADS")]
    threads: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Grid {
    start: f64,
    end: f64,
    count: usize,
}

impl Grid {
    fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.end - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.start + step * i as f64).collect()
    }

    fn spec(&self) -> String {
        format!("{}:{}:{}", self.start, self.end, self.count)
    }
}

fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts.as_slice() else {
        return Err(format!("expected start:end:count, got {s}"));
    };
    let num = |t: &str| t.parse::<f64>().map_err(|e| format!("{t}: {e}"));
    let count = n.parse::<usize>().map_err(|e| format!("{n}: {e}"))?;
    if count == 0 {
        return Err("grid needs at least one point".into());
    }
    Ok(Grid { start: num(a)?, end: num(b)?, count })
}

struct Loaded {
    spec: ModelSpec,
    bytes: Vec<u8>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| RefractError::Domain(format!("cannot read {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Loaded> {
    let bytes = read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let spec = ModelSpec::from_json(&text)?;
    spec.ensure_valid()?;
    Ok(Loaded { spec, bytes })
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(RefractError::NonPositiveQ(q));
    }
    Ok(())
}

fn threads(requested: Option<usize>) -> Result<usize> {
    let n = requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        return Err(RefractError::Domain("threads must be at least 1".into()));
    }
    // later calls keep the first pool, which is fine for a single dispatch
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(n)
}

fn params(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Roots(c) => {
            check_q(c.q)?;
            let m = load_model(&c.model)?;
            let roots = solve_roots(&m.spec, c.q)?;
            let man = RunManifest::new("roots", &m.bytes, params(&[("q", json!(c.q))]));
            emit(&json_document(&man, &roots), c.out.as_deref())?;
        }
        Command::Factors(c) => {
            check_q(c.q)?;
            let m = load_model(&c.model)?;
            let roots = solve_roots(&m.spec, c.q)?;
            let factors = WienerHopfFactors::new(&m.spec, &roots)?;
            let man = RunManifest::new("factors", &m.bytes, params(&[("q", json!(c.q))]));
            emit(&json_document(&man, &factors), c.out.as_deref())?;
        }
        Command::DistCdf(a) => distribution("dist-cdf", a)?,
        Command::DistPdf(a) => distribution("dist-pdf", a)?,
        Command::Occupation(a) => distribution("occupation", a)?,
        Command::Invert(a) => {
            let m = load_model(&a.model)?;
            threads(a.threads)?;
            let cfg = InversionConfig::euler();
            let result = if a.verify {
                let v = prob_below_at_time_verified(&m.spec, a.x, a.y, a.t, &cfg)?;
                json!({"value": v.value, "cross_check": v.cross_check, "tolerance": v.tolerance})
            } else {
                json!({"value": prob_below_at_time(&m.spec, a.x, a.y, a.t, &cfg)?})
            };
            let man = RunManifest::new(
                "invert",
                &m.bytes,
                params(&[
                    ("t", json!(a.t)),
                    ("x", json!(a.x)),
                    ("y", json!(a.y)),
                    ("verify", json!(a.verify)),
                    ("inversion", json!(cfg)),
                ]),
            );
            emit(&json_document(&man, &result), a.out.as_deref())?;
        }
        Command::Price(a) => {
            let m = load_model(&a.model)?;
            let pbytes = read(&a.pricing)?;
            let pricing = PricingSpec::from_json(&String::from_utf8_lossy(&pbytes))?;
            threads(a.threads)?;
            let product = match a.product {
                ProductArg::Gmdb => Product::Gmdb,
                ProductArg::Gmmb => Product::Gmmb,
            };
            let cfg = InversionConfig::euler();
            let report = price(&m.spec, &pricing, product, &cfg, a.verify)?;
            let man = RunManifest::new(
                "price",
                &m.bytes,
                params(&[
                    ("product", json!(a.product)),
                    ("pricing", serde_json::to_value(&pricing)?),
                    ("pricing_hash", json!(output::sha256_hex(&pbytes))),
                    ("verify", json!(a.verify)),
                ]),
            );
            emit(&json_document(&man, &report), a.out.as_deref())?;
        }
        Command::Mc { command: McCommand::Validate(a) } => {
            let c = &a.common;
            check_q(c.q)?;
            let m = load_model(&c.model)?;
            let cfg = SimConfig { paths: a.paths, dt: a.dt, seed: a.seed, threads: threads(a.threads)? };
            let res = Resolvent::new(&m.spec, c.q)?;
            let analytic = 1.0 - res.prob_below(a.x, a.y)?;
            let est = estimate_killed_probability(&m.spec, &cfg, c.q, a.x, a.y, Mode::Above)?;
            let z = est.z_score(analytic);
            let pass = z <= 3.0;
            let man = RunManifest::new(
                "mc validate",
                &m.bytes,
                params(&[
                    ("q", json!(c.q)),
                    ("x", json!(a.x)),
                    ("y", json!(a.y)),
                    ("paths", json!(a.paths)),
                    ("dt", json!(a.dt)),
                    ("seed", json!(a.seed)),
                    ("threads", json!(cfg.threads)),
                ]),
            );
            let result = json!({
                "quantity": "P_x(U_e(q) > y)",
                "analytic": analytic,
                "mc": est.value,
                "std_error": est.std_error,
                "paths": est.paths,
                "z_score": z,
                "pass": pass,
            });
            emit(&json_document(&man, &result), c.out.as_deref())?;
            return Ok(pass);
        }
        Command::Selfcheck(c) => {
            check_q(c.q)?;
            let m = load_model(&c.model)?;
            let report = selfcheck::run(&m.spec, c.q)?;
            eprint!("{}", report.table());
            let man = RunManifest::new("selfcheck", &m.bytes, params(&[("q", json!(c.q))]));
            emit(&json_document(&man, &report), c.out.as_deref())?;
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn distribution(command: &str, a: DistArgs) -> Result<()> {
    let c = &a.common;
    check_q(c.q)?;
    let m = load_model(&c.model)?;
    threads(a.threads)?;
    let res = Resolvent::new(&m.spec, c.q)?;
    let b = m.spec.b;
    let value = |y: f64| -> Result<(f64, Route)> {
        match command {
            "dist-pdf" => Ok((res.pdf(a.x, y)?, Route::Thm4)),
            "occupation" => Ok((res.occupation_transform(a.x, y)?, Route::Thm4)),
            _ => match a.method {
                Route::Prop21 if y > b && m.spec.delta != 0.0 => {
                    let p = res.pasting_solution(y)?;
                    Ok(((1.0 - p.eval(a.x)?).clamp(0.0, 1.0), Route::Prop21))
                }
                _ => Ok((res.prob_below(a.x, y)?, Route::Thm4)),
            },
        }
    };
    let quantity = match command {
        "dist-pdf" => "f_q(y)",
        "occupation" => "int e^{-qt} E_x[time below y up to t] dt",
        _ => "P_x(U_e(q) <= y)",
    };
    let mut pairs = vec![
        ("q", json!(c.q)),
        ("x", json!(a.x)),
        ("method", json!(a.method)),
    ];
    match (a.y, a.y_grid) {
        (Some(y), _) => {
            pairs.push(("y", json!(y)));
            let man = RunManifest::new(command, &m.bytes, params(&pairs));
            let (v, route) = value(y)?;
            let result = json!({"quantity": quantity, "x": a.x, "y": y, "value": v, "route": route});
            emit(&json_document(&man, &result), c.out.as_deref())?;
        }
        (None, Some(grid)) => {
            pairs.push(("y_grid", json!(grid.spec())));
            let man = RunManifest::new(command, &m.bytes, params(&pairs));
            let rows = grid
                .points()
                .into_iter()
                .map(|y| {
                    let (v, route) = value(y)?;
                    let route = if matches!(route, Route::Prop21) { "prop21" } else { "thm4" };
                    Ok(vec![fmt_f64(y), fmt_f64(v), route.to_string()])
                })
                .collect::<Result<Vec<_>>>()?;
            emit(&csv_document(&man, &["y", "value", "route"], &rows), c.out.as_deref())?;
        }
        (None, None) => unreachable!("clap requires --y or --y-grid"),
    }
    Ok(())
}

fn kind(e: &RefractError) -> &'static str {
    match e {
        RefractError::InvalidModel(_) => "invalid_model",
        RefractError::NonPositiveQ(_) => "invalid_q",
        RefractError::Json(_) => "json",
        RefractError::McUnsupported => "mc_unsupported",
        RefractError::Inversion(_) => "inversion",
        RefractError::PayoffDivergent(_) => "payoff_divergent",
        RefractError::NoEsscherRoot { .. } | RefractError::CumulantDivergent(_) => "calibration",
        _ => "domain",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let err = json!({"error": {"kind": kind(&e), "message": e.to_string()}});
            eprintln!("{}", output::to_json(&err));
            ExitCode::from(1)
        }
    }
}
