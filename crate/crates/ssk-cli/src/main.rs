//! `ssk-lab` command-line front end.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on numerical failures
//! (including a regime gate that rejects the parameters); a report is
//! printed to stderr in the failing cases.

mod config;

use clap::{Parser, Subcommand};
use config::{Resolved, Settings};
use serde_json::json;
use ssk_lab::airy::{approximate_airy_field, field_normals, max_particles, xi_limit, CountertermKind};
use ssk_lab::contour::{field_overlap_exact, log_partition_exact, overlap_moment_exact, QuadratureSpec};
use ssk_lab::experiments::{
    default_reference, load, parallel_map, run_experiment, sphere_oracle, write_summary, ExperimentConfig,
    ReferenceChoice,
};
use ssk_lab::model::{rmt_diagnostics, sample_spectral, ModelParams, SpectralSample};
use ssk_lab::regimes::{
    classify, gaussian_constant, gaussian_pack, intermediate_overlap_taylor, intermediate_pack, micro_pack,
    random_saddle, GateConfig, GateReport, RegimeTag,
};
use ssk_lab::rng::replicate_seed;
use ssk_lab::saddle::{GFunction, GKind};
use ssk_lab::special::{kolmogorov_tail, ks_distance, sorted, ReferenceDistribution};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// `println!` that ignores a closed stdout (e.g. piping into `head`).
macro_rules! out {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Debug, Parser)]
#[command(
    name = "ssk-lab",
    version,
    about = "Free energy and overlaps of the 2-spin spherical SK model: exact evaluators, regime predictions, Monte Carlo",
    after_help = "Precedence: flags > --config file > defaults.  SSK_LAB_CACHE names the TW1 reference cache directory.\nExit status: 0 success, 1 usage error, 2 numerical failure or regime mismatch."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Draw one disorder sample and print its spectral summary and diagnostics
    Sample,
    /// Exact free energy and the regime prediction with its decomposition
    FreeEnergy,
    /// Exact overlap moments (k = 1, 2, 4) and the regime formulas
    Overlap,
    /// Active regime and gate margins
    Regime,
    /// Run a Monte Carlo experiment (needs --statistic)
    Experiment,
    /// Draw ξ and Ξ from the approximate Airy field (--n is the matrix size)
    Airy,
    /// Compare the contour evaluator with the sphere oracle on one sample
    OracleCheck,
    /// Summarize a records file and emit CDF plot data
    Report {
        /// records file written by `experiment`
        records: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::FreeEnergy => "free-energy",
            Command::Overlap => "overlap",
            Command::Regime => "regime",
            Command::Experiment => "experiment",
            Command::Airy => "airy",
            Command::OracleCheck => "oracle-check",
            Command::Report { .. } => "report",
        }
    }
}

/// Why a command stopped.
enum Failure {
    Usage(anyhow::Error),
    Numeric { error: anyhow::Error, report: Option<serde_json::Value> },
}

type CmdResult = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn numeric(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Numeric { error: e.into(), report: None }
}

/// Library errors: bad input is a usage error, everything else numeric.
fn lib(e: ssk_lab::Error) -> Failure {
    match e {
        ssk_lab::Error::InvalidParam(_) => usage(e),
        other => numeric(other),
    }
}

fn gate_failure(e: ssk_lab::Error, gates: &GateReport) -> Failure {
    Failure::Numeric { error: e.into(), report: serde_json::to_value(gates).ok() }
}

fn print_json(v: &serde_json::Value) {
    out!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let cfg = match Resolved::resolve(cli.settings.clone()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    out!("# ssk-lab {} {}", cli.command.name(), cfg.echo());
    let out = match &cli.command {
        Command::Sample => cmd_sample(&cfg),
        Command::FreeEnergy => cmd_free_energy(&cfg),
        Command::Overlap => cmd_overlap(&cfg),
        Command::Regime => cmd_regime(&cfg),
        Command::Experiment => cmd_experiment(&cfg),
        Command::Airy => cmd_airy(&cfg),
        Command::OracleCheck => cmd_oracle_check(&cfg),
        Command::Report { records } => cmd_report(&cfg, records),
    };
    let _ = std::io::stdout().flush();
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric { error, report }) => {
            eprintln!("numerical failure: {error:#}");
            if let Some(r) = report {
                eprintln!("{}", serde_json::to_string_pretty(&r).unwrap_or_default());
            }
            ExitCode::from(2)
        }
    }
}

fn params_of(cfg: &Resolved) -> Result<ModelParams, Failure> {
    cfg.params().map_err(usage)
}

fn draw(cfg: &Resolved, p: &ModelParams) -> Result<SpectralSample, Failure> {
    sample_spectral(p, cfg.seed).map_err(lib)
}

fn cmd_sample(cfg: &Resolved) -> CmdResult {
    let p = params_of(cfg)?;
    let s = draw(cfg, &p)?;
    let n = s.n();
    let nf = n as f64;
    let diag = rmt_diagnostics(&s, 0.1);
    print_json(&json!({
        "n": n,
        "seed": s.seed,
        "lambda_1": s.lambdas[0],
        "lambda_2": s.lambdas.get(1),
        "lambda_n": s.lambdas[n - 1],
        "edge_scaled": nf.powf(2.0 / 3.0) * (s.lambdas[0] - 2.0),
        "v1_sq": s.v1_sq,
        "norm_v_sq": s.v_projs.iter().map(|v| v * v).sum::<f64>(),
        "trace": s.lambdas.iter().sum::<f64>(),
        "ties": s.ties,
        "diagnostics": diag,
    }));
    Ok(())
}

fn cmd_free_energy(cfg: &Resolved) -> CmdResult {
    let p = params_of(cfg)?;
    let s = draw(cfg, &p)?;
    let spec = QuadratureSpec::default();
    let nf = p.n_dim as f64;
    let lz = log_partition_exact(&s, &p, &spec).map_err(lib)?;
    let f = lz.log_magnitude / nf;
    let gate = GateConfig::default();
    let gates = classify(&p, &gate);
    // steepest-descent expansion through the random saddle (any regime where
    // the saddle is well separated from λ₁)
    let expansion = (|| -> ssk_lab::Result<serde_json::Value> {
        let gamma = random_saddle(&s, &p)?;
        let g = GFunction::new(GKind::Random, p.beta, p.theta, Some(&s))?;
        let d = g.derivs(gamma)?;
        let c = gaussian_constant(p.n_dim, p.beta, d[2]);
        Ok(json!({ "gamma": gamma, "half_exponent": 0.5 * d[0], "constant": c, "prediction": 0.5 * d[0] + c }))
    })()
    .ok();
    let regime = match gates.tag {
        RegimeTag::Gaussian => gaussian_pack(&s, &p, &gate).map(|k| {
            json!({
                "half_g_hat": 0.5 * k.g_value,
                "c_n": k.c_n,
                "prediction": k.c_n + 0.5 * k.g_value,
                "statistic": k.free_energy_statistic(f),
                "pack": k,
            })
        }),
        RegimeTag::Microscopic => micro_pack(&s, &p, &gate).map(|k| {
            json!({
                "edge_term": 0.5 * (k.beta - 1.0) * (k.lambda1 - 2.0),
                "c_n": k.c_n,
                "prediction": k.free_energy_prediction,
                "refined": k.free_energy_refined,
                "statistic": k.free_energy_statistic(f),
            })
        }),
        RegimeTag::Intermediate => intermediate_pack(&s, &p, false, &gate).map(|k| {
            json!({
                "k_n": k.k_n,
                "y_n": k.y_n,
                "xi_n": k.xi_n,
                "prediction": k.k_n + k.y_n / (2.0 * nf.powf(2.0 / 3.0)),
                "statistic": k.free_energy_statistic(f),
            })
        }),
        RegimeTag::Outside => Ok(serde_json::Value::Null),
    }
    .map_err(lib)?;
    print_json(&json!({
        "regime": gates.tag.name(),
        "log_z": lz.log_magnitude,
        "log_z_error": lz.error_estimate,
        "free_energy": f,
        "expansion": expansion,
        "regime_prediction": regime,
    }));
    Ok(())
}

fn cmd_overlap(cfg: &Resolved) -> CmdResult {
    let p = params_of(cfg)?;
    let s = draw(cfg, &p)?;
    let spec = QuadratureSpec::default();
    let m = |k| overlap_moment_exact(&s, &p, k, &spec).map_err(lib);
    let (m1, m2, m4) = (m(1)?, m(2)?, m(4)?);
    let field = field_overlap_exact(&s, &p, &spec).map_err(lib)?;
    let gate = GateConfig::default();
    let gates = classify(&p, &gate);
    let regime = match gates.tag {
        RegimeTag::Gaussian => gaussian_pack(&s, &p, &gate).map(|k| {
            json!({
                "field_overlap": k.ext_linear / (p.n_dim as f64).sqrt(),
                "ext_linear": k.ext_linear,
                "ext_quadratic": k.ext_quadratic,
                "overlap_linear": k.overlap_linear,
                "overlap_quadratic": k.overlap_quadratic,
            })
        }),
        RegimeTag::Microscopic => micro_pack(&s, &p, &gate).map(|k| {
            json!({
                "mean": k.overlap_mean,
                "mean_bessel": k.overlap_mean_bessel(),
                "variance": k.overlap_variance,
                "second": k.overlap_second_bessel(),
                "fourth": k.overlap_fourth,
                "parisi_weights": [k.parisi_weights.0, k.parisi_weights.1],
            })
        }),
        RegimeTag::Intermediate => {
            intermediate_overlap_taylor(&s, &p, 4, &gate).map(|t| json!({ "taylor": t.z, "main": t.x, "log_det": t.y }))
        }
        RegimeTag::Outside => Ok(serde_json::Value::Null),
    }
    .map_err(lib)?;
    print_json(&json!({
        "regime": gates.tag.name(),
        "exact": { "k1": m1, "k2": m2, "k4": m4, "variance": m2 - m1 * m1, "field_overlap": field },
        "regime_formulas": regime,
    }));
    Ok(())
}

fn cmd_regime(cfg: &Resolved) -> CmdResult {
    let p = params_of(cfg)?;
    let gates = classify(&p, &GateConfig::default());
    out!("{}", gates.tag.name());
    print_json(&json!({ "params": p, "gates": gates }));
    Ok(())
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("SSK_LAB_CACHE").map(PathBuf::from)
}

fn cmd_experiment(cfg: &Resolved) -> CmdResult {
    let p = params_of(cfg)?;
    let statistic = cfg.statistic.ok_or_else(|| usage(anyhow::anyhow!("experiment needs --statistic")))?;
    let mut e = ExperimentConfig::new(p, statistic, cfg.replicates, cfg.seed);
    e.threads = cfg.threads;
    e.output_path = cfg.out.clone();
    e.cache_dir = cache_dir();
    let gate = e.gate;
    let outcome = run_experiment(&e).map_err(|err| match err {
        ssk_lab::Error::OutsideRegime(_) => gate_failure(err, &classify(&p, &gate)),
        other => lib(other),
    })?;
    if let Some(out) = &cfg.out {
        let path = summary_path(out);
        write_summary(&outcome.summary, &path).map_err(lib)?;
    }
    print_json(&serde_json::to_value(&outcome.summary).expect("summary serializes"));
    Ok(())
}

fn summary_path(records: &Path) -> PathBuf {
    let mut s = records.as_os_str().to_owned();
    s.push(".summary.json");
    PathBuf::from(s)
}

fn writer(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(path) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| usage(anyhow::anyhow!("cannot write {}: {e}", path.display())))?,
        )),
        None => Box::new(std::io::stdout()),
    })
}

fn cmd_airy(cfg: &Resolved) -> CmdResult {
    let p = params_of(cfg)?;
    let n_big = cfg.n;
    let n = cfg.particles;
    if n_big < 1000 || n == 0 || n > max_particles(n_big) {
        return Err(usage(anyhow::anyhow!(
            "airy needs --n >= 1000 and 1 <= --particles <= n^(2/3) (= {})",
            max_particles(n_big.max(1))
        )));
    }
    let theta = p.theta * (p.n_dim as f64).powf(p.scaling.alpha());
    let rows = parallel_map(cfg.replicates, cfg.threads, |i| {
        let seed = replicate_seed(cfg.seed, i as u64);
        let field = approximate_airy_field(n, n_big, seed)?;
        let gs = field_normals(n, seed);
        xi_limit(&field, &gs, p.beta, theta, CountertermKind::Integral).map(|l| (seed, field.chis[0], l))
    });
    let mut w = writer(&cfg.out)?;
    let io = |e: std::io::Error| numeric(e);
    writeln!(w, "seed,chi_1,a,xi,big_xi").map_err(io)?;
    let mut failed = 0;
    for r in rows {
        match r {
            Ok((seed, chi1, l)) => writeln!(w, "{seed},{chi1},{},{},{}", l.a, l.xi, l.big_xi).map_err(io)?,
            Err(_) => failed += 1,
        }
    }
    w.flush().map_err(io)?;
    if failed * 5 > cfg.replicates {
        return Err(numeric(anyhow::anyhow!("{failed} of {} draws failed", cfg.replicates)));
    }
    Ok(())
}

fn cmd_oracle_check(cfg: &Resolved) -> CmdResult {
    let p = params_of(cfg)?;
    let s = draw(cfg, &p)?;
    let spec = QuadratureSpec::default();
    let o = sphere_oracle(&s, &p, cfg.draws, cfg.seed).map_err(lib)?;
    let lz = log_partition_exact(&s, &p, &spec).map_err(lib)?;
    let m1 = overlap_moment_exact(&s, &p, 1, &spec).map_err(lib)?;
    let m2 = overlap_moment_exact(&s, &p, 2, &spec).map_err(lib)?;
    let q = lz.error_estimate;
    let checks = [
        ("log_Z", lz.log_magnitude, o.log_z, 2.0 * (o.log_z_stderr + q)),
        ("overlap_k1", m1, o.overlap[0], 2.0 * (o.overlap_stderr[0] + q * m1.abs())),
        ("overlap_k2", m2, o.overlap[1], 2.0 * (o.overlap_stderr[1] + q * m2.abs())),
    ];
    let mut all = true;
    for (name, exact, oracle, tol) in checks {
        let pass = (exact - oracle).abs() <= tol;
        all &= pass;
        out!(
            "{} {name}: contour={exact:.10} oracle={oracle:.10} |diff|={:.3e} tol={tol:.3e}",
            if pass { "PASS" } else { "FAIL" },
            (exact - oracle).abs()
        );
    }
    out!("ess={:.0} draws={}", o.ess, o.n_draws);
    if all {
        Ok(())
    } else {
        Err(numeric(anyhow::anyhow!("contour and oracle disagree beyond the combined tolerance")))
    }
}

fn cmd_report(cfg: &Resolved, records: &Path) -> CmdResult {
    let loaded = load(records).map_err(lib)?;
    let values: Vec<f64> = loaded.records.iter().filter_map(|r| r.value).collect();
    let failed = loaded.records.len() - values.len();
    if values.is_empty() {
        return Err(numeric(anyhow::anyhow!("no successful records in {}", records.display())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let xs = sorted(values);
    let q = |f: f64| xs[((f * (xs.len() - 1) as f64).round() as usize).min(xs.len() - 1)];
    let mut e = ExperimentConfig::new(loaded.params, loaded.statistic, xs.len(), cfg.seed);
    e.threads = cfg.threads;
    e.cache_dir = cache_dir();
    e.reference = ReferenceChoice::Auto;
    let reference: Option<ReferenceDistribution> = default_reference(&e).map_err(lib)?;
    let ks = reference.as_ref().map(|r| ks_distance(&xs, r));
    out!("statistic   {}", loaded.statistic);
    out!("records     {} ({} failed, {} unreadable rows skipped)", loaded.records.len(), failed, loaded.skipped);
    out!("mean        {mean:.6}");
    out!("variance    {var:.6}");
    out!("quantiles   5%={:.4} 25%={:.4} 50%={:.4} 75%={:.4} 95%={:.4}", q(0.05), q(0.25), q(0.5), q(0.75), q(0.95));
    match (&reference, ks) {
        (Some(r), Some(d)) => {
            out!("reference   {}", r.describe());
            out!("ks          {d:.4} (asymptotic p = {:.3})", kolmogorov_tail(n.sqrt() * d));
        }
        _ => out!("reference   none"),
    }
    let mut w = writer(&cfg.out)?;
    let io = |e: std::io::Error| numeric(e);
    writeln!(w, "series,x,y").map_err(io)?;
    for (i, x) in xs.iter().enumerate() {
        writeln!(w, "empirical,{x},{}", (i + 1) as f64 / n).map_err(io)?;
    }
    if let Some(r) = &reference {
        for x in &xs {
            writeln!(w, "reference,{x},{}", r.cdf(*x)).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}
