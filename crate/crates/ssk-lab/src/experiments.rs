//! Monte Carlo experiments over the disorder, the small-N sphere oracle and
//! record persistence.
//!
//! Replicate `i` of a run uses seed `replicate_seed(seed_base, i)` (see
//! [`crate::rng`]), so the records and the summary do not depend on how many
//! worker threads execute the run.  Summary moments are reduced in replicate
//! order with compensated summation.

use crate::airy::{approximate_airy_field, field_normals, xi_limit, CountertermKind};
use crate::contour::{
    field_laplace_exact, field_overlap_exact, log_partition_exact, overlap_moment_exact, QuadratureSpec,
};
use crate::error::{Error, Result};
use crate::model::{sample_goe_fast, sample_spectral, Ensemble, ModelParams, SpectralSample};
use crate::quad::kahan_sum;
use crate::regimes::{
    gaussian_pack, intermediate_pack, micro_pack, random_exponent_at, require, GateConfig, RegimeTag,
};
use crate::rng::{replicate_seed, stream, stream_rng};
use crate::special::{kolmogorov_tail, ks_distance, sorted, tw1_reference, ReferenceDistribution};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

/// Format tag of record files.
pub const RECORDS_VERSION: &str = "v1";
const RECORDS_MAGIC: &str = "ssk-lab";

/// Code version written into summaries.
pub const CODE_VERSION: &str = concat!("ssk-lab ", env!("CARGO_PKG_VERSION"));

/// Seed of the empirical TW₁ reference used by default.
pub const TW1_REFERENCE_SEED: u64 = 0x7731;
/// Matrices in the default TW₁ reference.
pub const TW1_REFERENCE_SIZE: usize = 5000;

/// What one replicate measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// 2N^{1/2}κ^{1/4}/(θV_N^{1/2})·(F − C_N − g(γ̂)/2); aux: the exponent statistic
    FreeEnergyGaussian,
    /// ξ_N from the edge saddle system; aux: 2N^{2/3}(F − K_N) − θN^{1/3}
    FreeEnergyIntermediate,
    /// N^{2/3}·2/(β−1)·(F − C_N); aux: N^{2/3}(λ₁ − 2)
    FreeEnergyMicro,
    /// exact log⟨exp(N^{−1/2}v·σ)⟩; aux: linear + quadratic Laplace prediction
    ExtOverlapLaplace,
    /// Bessel closed form of ⟨σ¹·σ²⟩/N; aux: exact contour value
    ReplicaOverlapMean,
    /// closed-form Gibbs variance of σ¹·σ²/N; aux: exact contour value
    ReplicaOverlapVar,
    /// p₊ = ½(1 + ⟨R⟩/⟨R²⟩^{1/2}) from exact moments; aux: ½ + ½tanh²(√(v₁²θ(β−1)))
    ParisiWeights,
    /// exact ⟨v·σ⟩/N; aux: Gaussian-regime prediction when that gate passes
    QuenchedExtOverlap,
}

impl Statistic {
    pub const ALL: [Statistic; 8] = [
        Statistic::FreeEnergyGaussian,
        Statistic::FreeEnergyIntermediate,
        Statistic::FreeEnergyMicro,
        Statistic::ExtOverlapLaplace,
        Statistic::ReplicaOverlapMean,
        Statistic::ReplicaOverlapVar,
        Statistic::ParisiWeights,
        Statistic::QuenchedExtOverlap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::FreeEnergyGaussian => "free_energy_gaussian",
            Statistic::FreeEnergyIntermediate => "free_energy_intermediate",
            Statistic::FreeEnergyMicro => "free_energy_micro",
            Statistic::ExtOverlapLaplace => "ext_overlap_laplace",
            Statistic::ReplicaOverlapMean => "replica_overlap_mean",
            Statistic::ReplicaOverlapVar => "replica_overlap_var",
            Statistic::ParisiWeights => "parisi_weights",
            Statistic::QuenchedExtOverlap => "quenched_ext_overlap",
        }
    }

    /// Regime whose gate must pass, if any.
    pub fn regime(self) -> Option<RegimeTag> {
        match self {
            Statistic::FreeEnergyGaussian | Statistic::ExtOverlapLaplace => Some(RegimeTag::Gaussian),
            Statistic::FreeEnergyIntermediate => Some(RegimeTag::Intermediate),
            Statistic::FreeEnergyMicro
            | Statistic::ReplicaOverlapMean
            | Statistic::ReplicaOverlapVar
            | Statistic::ParisiWeights => Some(RegimeTag::Microscopic),
            Statistic::QuenchedExtOverlap => None,
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statistic {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Statistic::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown statistic {s:?}")))
    }
}

/// How disorder is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// dense matrix of the configured ensemble, exact eigenvectors
    Dense,
    /// tridiagonal full-GOE model with a uniform field direction (needs the
    /// full-GOE ensemble)
    Tridiagonal,
}

/// Which reference distribution the KS distance is taken against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReferenceChoice {
    /// the limit law of the statistic, if it has one
    Auto,
    /// no KS comparison
    Skip,
    Given(ReferenceDistribution),
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub statistic: Statistic,
    pub n_replicates: usize,
    pub seed_base: u64,
    pub reference: ReferenceChoice,
    pub quadrature: QuadratureSpec,
    pub gate: GateConfig,
    pub sampler: Sampler,
    /// compute the exact-evaluator aux value where it is optional
    pub exact_aux: bool,
    /// worker threads; 0 uses all available cores
    pub threads: usize,
    /// records file (appended)
    pub output_path: Option<PathBuf>,
    /// directory of the TW₁ reference cache
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(params: ModelParams, statistic: Statistic, n_replicates: usize, seed_base: u64) -> Self {
        ExperimentConfig {
            params,
            statistic,
            n_replicates,
            seed_base,
            reference: ReferenceChoice::Auto,
            quadrature: QuadratureSpec::default(),
            gate: GateConfig::default(),
            sampler: Sampler::Dense,
            exact_aux: true,
            threads: 0,
            output_path: None,
            cache_dir: None,
        }
    }

    /// Check the invariants before any work is done.
    pub fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return Err(Error::InvalidParam("n_replicates must be at least 1".into()));
        }
        self.quadrature.validate()?;
        if let Some(want) = self.statistic.regime() {
            require(&self.params, &self.gate, want)?;
        }
        if self.sampler == Sampler::Tridiagonal && self.params.ensemble != Ensemble::FullGoeH {
            return Err(Error::InvalidParam(
                "the tridiagonal sampler draws the full GOE; set ensemble = full_goe_h".into(),
            ));
        }
        Ok(())
    }
}

/// Machine-readable reason a replicate failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Gate,
    Solver,
    Quadrature,
    Eigensolver,
    NonFinite,
    Other,
}

impl FailureKind {
    pub fn of(e: &Error) -> Self {
        match e {
            Error::OutsideRegime(_) => FailureKind::Gate,
            Error::NoRoot(_) | Error::PoleCollision { .. } | Error::OnCut(_) => FailureKind::Solver,
            Error::Quadrature(_) => FailureKind::Quadrature,
            Error::EigenNoConvergence { .. } => FailureKind::Eigensolver,
            _ => FailureKind::Other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FailureKind::Gate => "gate",
            FailureKind::Solver => "solver",
            FailureKind::Quadrature => "quadrature",
            FailureKind::Eigensolver => "eigensolver",
            FailureKind::NonFinite => "non_finite",
            FailureKind::Other => "other",
        }
    }
}

/// One replicate.  `value` is `None` exactly when `failure` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub index: u64,
    pub seed: u64,
    pub value: Option<f64>,
    pub aux: Option<f64>,
    /// saddle location used by the statistic
    pub saddle: Option<f64>,
    pub lambda1: Option<f64>,
    pub elapsed_ms: f64,
    pub failure: Option<FailureKind>,
    pub reason: Option<String>,
}

/// Aggregate of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub statistic: Statistic,
    pub params: ModelParams,
    pub seed_base: u64,
    /// successful replicates
    pub n: usize,
    pub n_failed: usize,
    pub failures: BTreeMap<String, usize>,
    pub mean: f64,
    /// sample variance (0 for a single replicate)
    pub var: f64,
    pub aux_mean: Option<f64>,
    pub ks: Option<f64>,
    /// asymptotic Kolmogorov p-value of `ks`
    pub ks_p_value: Option<f64>,
    pub reference: Option<String>,
    pub code_version: String,
}

/// Records plus summary of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub records: Vec<ExperimentRecord>,
    pub summary: ExperimentSummary,
    pub reference: Option<ReferenceDistribution>,
}

impl ExperimentOutcome {
    /// Successful values in replicate order.
    pub fn values(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.value).collect()
    }

    pub fn aux_values(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.aux).collect()
    }
}

struct Measured {
    value: f64,
    aux: Option<f64>,
    saddle: Option<f64>,
    lambda1: f64,
}

fn draw(cfg: &ExperimentConfig, seed: u64) -> Result<SpectralSample> {
    match cfg.sampler {
        Sampler::Dense => sample_spectral(&cfg.params, seed),
        Sampler::Tridiagonal => sample_goe_fast(cfg.params.n_dim, seed),
    }
}

fn free_energy(sample: &SpectralSample, params: &ModelParams, spec: &QuadratureSpec) -> Result<f64> {
    Ok(log_partition_exact(sample, params, spec)?.log_magnitude / params.n_dim as f64)
}

fn measure(cfg: &ExperimentConfig, seed: u64) -> Result<Measured> {
    let p = &cfg.params;
    let spec = &cfg.quadrature;
    let sample = draw(cfg, seed)?;
    let lambda1 = sample.lambda1();
    let n = p.n_dim as f64;
    let m = match cfg.statistic {
        Statistic::FreeEnergyGaussian => {
            let pack = gaussian_pack(&sample, p, &cfg.gate)?;
            let f = free_energy(&sample, p, spec)?;
            let g_hat = random_exponent_at(&sample, p, pack.gamma_hat)?;
            Measured {
                value: pack.free_energy_statistic(f),
                aux: Some(pack.exponent_statistic(g_hat)),
                saddle: Some(pack.gamma_random),
                lambda1,
            }
        }
        Statistic::FreeEnergyIntermediate => {
            let pack = intermediate_pack(&sample, p, false, &cfg.gate)?;
            let aux = if cfg.exact_aux {
                Some(pack.free_energy_statistic(free_energy(&sample, p, spec)?) - pack.theta * n.powf(1.0 / 3.0))
            } else {
                None
            };
            Measured { value: pack.xi_n, aux, saddle: Some(pack.x_b), lambda1 }
        }
        Statistic::FreeEnergyMicro => {
            let pack = micro_pack(&sample, p, &cfg.gate)?;
            let f = free_energy(&sample, p, spec)?;
            Measured {
                value: pack.free_energy_statistic(f),
                aux: Some(n.powf(2.0 / 3.0) * (lambda1 - 2.0)),
                saddle: Some(pack.gamma),
                lambda1,
            }
        }
        Statistic::ExtOverlapLaplace => {
            let pack = gaussian_pack(&sample, p, &cfg.gate)?;
            let exact = field_laplace_exact(&sample, p, &[1.0 / n.sqrt()], spec)?[0];
            Measured {
                value: exact,
                aux: Some(pack.ext_linear + pack.ext_quadratic),
                saddle: Some(pack.gamma_random),
                lambda1,
            }
        }
        Statistic::ReplicaOverlapMean => {
            let pack = micro_pack(&sample, p, &cfg.gate)?;
            let aux = if cfg.exact_aux { Some(overlap_moment_exact(&sample, p, 1, spec)?) } else { None };
            Measured { value: pack.overlap_mean_bessel(), aux, saddle: Some(pack.gamma), lambda1 }
        }
        Statistic::ReplicaOverlapVar => {
            let pack = micro_pack(&sample, p, &cfg.gate)?;
            let aux = if cfg.exact_aux {
                let m1 = overlap_moment_exact(&sample, p, 1, spec)?;
                Some(overlap_moment_exact(&sample, p, 2, spec)? - m1 * m1)
            } else {
                None
            };
            Measured { value: pack.overlap_variance, aux, saddle: Some(pack.gamma), lambda1 }
        }
        Statistic::ParisiWeights => {
            let pack = micro_pack(&sample, p, &cfg.gate)?;
            let m1 = overlap_moment_exact(&sample, p, 1, spec)?;
            let m2 = overlap_moment_exact(&sample, p, 2, spec)?;
            if !(m2 > 0.0) {
                return Err(Error::Quadrature(format!("second overlap moment not positive ({m2})")));
            }
            Measured {
                value: 0.5 * (1.0 + m1 / m2.sqrt()),
                aux: Some(pack.parisi_weights.0),
                saddle: Some(pack.gamma),
                lambda1,
            }
        }
        Statistic::QuenchedExtOverlap => {
            let value = field_overlap_exact(&sample, p, spec)?;
            let (aux, saddle) = match gaussian_pack(&sample, p, &cfg.gate) {
                Ok(pack) => (Some(pack.ext_linear / n.sqrt()), Some(pack.gamma_random)),
                Err(_) => (None, None),
            };
            Measured { value, aux, saddle, lambda1 }
        }
    };
    if !m.value.is_finite() || m.aux.is_some_and(|a| !a.is_finite()) {
        return Err(Error::Quadrature("non-finite statistic".into()));
    }
    Ok(m)
}

/// Run one replicate; failures become records with a reason.
pub fn run_replicate(cfg: &ExperimentConfig, index: u64) -> ExperimentRecord {
    let seed = replicate_seed(cfg.seed_base, index);
    let t0 = Instant::now();
    let out = measure(cfg, seed);
    let elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;
    match out {
        Ok(m) => ExperimentRecord {
            index,
            seed,
            value: Some(m.value),
            aux: m.aux,
            saddle: m.saddle,
            lambda1: Some(m.lambda1),
            elapsed_ms,
            failure: None,
            reason: None,
        },
        Err(e) => {
            let kind = match &e {
                Error::Quadrature(s) if s == "non-finite statistic" => FailureKind::NonFinite,
                other => FailureKind::of(other),
            };
            ExperimentRecord {
                index,
                seed,
                value: None,
                aux: None,
                saddle: None,
                lambda1: None,
                elapsed_ms,
                failure: Some(kind),
                reason: Some(e.to_string()),
            }
        }
    }
}

/// Worker count for a requested thread cap (0 = all cores).
pub fn worker_count(threads: usize, jobs: usize) -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let t = if threads == 0 { avail } else { threads };
    t.clamp(1, jobs.max(1))
}

/// Evaluate `f(0..n)` on up to `threads` workers; results in index order.
pub fn parallel_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = worker_count(threads, n);
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result slots poisoned").into_iter().map(|x| x.expect("every slot filled")).collect()
}

/// Empirical law of ξ_n from the approximate Airy₁ field.
pub fn airy_xi_samples(
    beta: f64,
    theta: f64,
    n: usize,
    n_big: usize,
    draws: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<f64>> {
    let out = parallel_map(draws, threads, |i| {
        let s = replicate_seed(seed, i as u64);
        let field = approximate_airy_field(n, n_big, s)?;
        let gs = field_normals(n, s);
        xi_limit(&field, &gs, beta, theta, CountertermKind::Integral).map(|e| e.xi)
    });
    out.into_iter().collect()
}

/// The limit law of a statistic, where one is implemented.
pub fn default_reference(cfg: &ExperimentConfig) -> Result<Option<ReferenceDistribution>> {
    let p = &cfg.params;
    Ok(match cfg.statistic {
        Statistic::FreeEnergyGaussian => Some(ReferenceDistribution::StdNormal),
        Statistic::FreeEnergyMicro => {
            Some(tw1_reference(TW1_REFERENCE_SIZE, p.n_dim, TW1_REFERENCE_SEED, cfg.cache_dir.as_deref())?)
        }
        Statistic::ReplicaOverlapMean => Some(ReferenceDistribution::TanhLaw { beta: p.beta, theta: p.theta_micro() }),
        Statistic::FreeEnergyIntermediate => {
            let (n, n_big) = (100, 2000);
            let samples = airy_xi_samples(
                p.beta,
                p.theta_intermediate(),
                n,
                n_big,
                cfg.n_replicates.max(100),
                cfg.seed_base ^ 0xA1A1,
                cfg.threads,
            )?;
            Some(ReferenceDistribution::Empirical {
                samples: sorted(samples),
                provenance: format!("airy field xi, n={n}, n_big={n_big}"),
            })
        }
        _ => None,
    })
}

fn summarize(
    cfg: &ExperimentConfig,
    records: &[ExperimentRecord],
    reference: Option<&ReferenceDistribution>,
) -> ExperimentSummary {
    let values: Vec<f64> = records.iter().filter_map(|r| r.value).collect();
    let aux: Vec<f64> = records.iter().filter_map(|r| r.aux).collect();
    let n = values.len();
    let mut failures = BTreeMap::new();
    for r in records {
        if let Some(k) = r.failure {
            *failures.entry(k.name().to_string()).or_insert(0) += 1;
        }
    }
    let mean = if n > 0 { kahan_sum(values.iter().copied()) / n as f64 } else { f64::NAN };
    let var = if n > 1 { kahan_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1) as f64 } else { 0.0 };
    let aux_mean = if aux.is_empty() { None } else { Some(kahan_sum(aux.iter().copied()) / aux.len() as f64) };
    let (ks, ks_p_value) = match reference {
        Some(r) if n > 0 => {
            let d = ks_distance(&sorted(values), r);
            let n_eff = match r {
                ReferenceDistribution::Empirical { samples, .. } => {
                    let m = samples.len() as f64;
                    n as f64 * m / (n as f64 + m)
                }
                _ => n as f64,
            };
            (Some(d), Some(kolmogorov_tail(n_eff.sqrt() * d)))
        }
        _ => (None, None),
    };
    ExperimentSummary {
        statistic: cfg.statistic,
        params: cfg.params,
        seed_base: cfg.seed_base,
        n,
        n_failed: records.len() - n,
        failures,
        mean,
        var,
        aux_mean,
        ks,
        ks_p_value,
        reference: reference.map(|r| r.describe()),
        code_version: CODE_VERSION.to_string(),
    }
}

/// Run every replicate, persist, and compare with the reference.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    if let Some(path) = &cfg.output_path {
        check_writable(path)?;
    }
    let reference = match &cfg.reference {
        ReferenceChoice::Auto => default_reference(cfg)?,
        ReferenceChoice::Skip => None,
        ReferenceChoice::Given(r) => Some(r.clone()),
    };
    let records = parallel_map(cfg.n_replicates, cfg.threads, |i| run_replicate(cfg, i as u64));
    if let Some(path) = &cfg.output_path {
        persist(&records, cfg.statistic, &cfg.params, path)?;
    }
    let summary = summarize(cfg, &records, reference.as_ref());
    if summary.n_failed * 5 > records.len() {
        return Err(Error::TooManyFailures {
            failed: summary.n_failed,
            total: records.len(),
            summary: serde_json::to_string(&summary.failures).unwrap_or_default(),
        });
    }
    Ok(ExperimentOutcome { records, summary, reference })
}

// ------------------------------------------------------------ persistence

fn check_writable(path: &Path) -> Result<()> {
    std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    Ok(())
}

fn header_line(statistic: Statistic, params: &ModelParams) -> Result<String> {
    let p = serde_json::to_string(params).map_err(|e| Error::Format(e.to_string()))?;
    Ok(format!("{RECORDS_MAGIC} {RECORDS_VERSION} {statistic} {p}"))
}

/// Append records to `path`, writing the header if the file is new or
/// empty.  An existing file must carry the same header.
pub fn persist(records: &[ExperimentRecord], statistic: Statistic, params: &ModelParams, path: &Path) -> Result<()> {
    let header = header_line(statistic, params)?;
    let existing = std::fs::read_to_string(path).unwrap_or_default();
    if let Some(first) = existing.lines().next() {
        if first.trim_end() != header {
            return Err(Error::Format(format!("cannot append to {}: header differs", path.display())));
        }
    }
    let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = BufWriter::new(f);
    if existing.trim().is_empty() {
        writeln!(w, "{header}")?;
    } else if !existing.ends_with('\n') {
        writeln!(w)?;
    }
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Contents of a records file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRecords {
    pub statistic: Statistic,
    pub params: ModelParams,
    pub records: Vec<ExperimentRecord>,
    /// rows that could not be parsed
    pub skipped: usize,
}

/// Read a records file; unparsable rows are skipped and counted.
pub fn load(path: &Path) -> Result<LoadedRecords> {
    let f = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(f).lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty records file".into()))??;
    let mut parts = header.splitn(4, ' ');
    let (magic, version, stat, params) = (parts.next(), parts.next(), parts.next(), parts.next());
    if magic != Some(RECORDS_MAGIC) {
        return Err(Error::Format(format!("not a records file: {header}")));
    }
    if version != Some(RECORDS_VERSION) {
        return Err(Error::Format(format!(
            "version mismatch: expected {RECORDS_VERSION}, found {}",
            version.unwrap_or("")
        )));
    }
    let statistic: Statistic = stat.ok_or_else(|| Error::Format("header lacks statistic".into()))?.parse()?;
    let params: ModelParams = serde_json::from_str(params.ok_or_else(|| Error::Format("header lacks params".into()))?)
        .map_err(|e| Error::Format(format!("header params: {e}")))?;
    let mut records = Vec::new();
    let mut skipped = 0;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ExperimentRecord>(&line) {
            Ok(r) if r.value.is_some() != r.failure.is_some() => records.push(r),
            _ => skipped += 1,
        }
    }
    Ok(LoadedRecords { statistic, params, records, skipped })
}

/// Write a summary as pretty JSON.
pub fn write_summary(summary: &ExperimentSummary, path: &Path) -> Result<()> {
    let s = serde_json::to_string_pretty(summary).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, s + "\n")?;
    Ok(())
}

// ----------------------------------------------------------- sphere oracle

/// Largest dimension the oracle accepts.
pub const ORACLE_MAX_N: usize = 24;
/// Smallest effective sample size the oracle certifies.
pub const ORACLE_MIN_ESS: f64 = 100.0;
/// Jackknife blocks.
pub const ORACLE_BLOCKS: usize = 50;

/// Importance-sampling estimates of Gibbs quantities of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub n_draws: usize,
    /// (Σw)²/Σw²
    pub ess: f64,
    /// log E_uniform[e^{(β/2)σᵀMσ + βh v·σ}]
    pub log_z: f64,
    pub log_z_stderr: f64,
    /// ⟨(σ¹·σ²/N)^k⟩ for k = 1, 2, 4
    pub overlap: [f64; 3],
    pub overlap_stderr: [f64; 3],
    /// ⟨v·σ⟩/N
    pub ext_overlap: f64,
    pub ext_overlap_stderr: f64,
}

impl OracleEstimate {
    /// Overlap moment and stderr for k ∈ {1, 2, 4}.
    pub fn overlap_moment(&self, k: u32) -> Option<(f64, f64)> {
        let i = match k {
            1 => 0,
            2 => 1,
            4 => 2,
            _ => return None,
        };
        Some((self.overlap[i], self.overlap_stderr[i]))
    }
}

/// Per-block sums of the importance weights w = e^{ℓ − ℓ_max}.
#[derive(Clone)]
struct Block {
    draws: f64,
    w: f64,
    w2: f64,
    /// Σ w·s
    ws: Vec<f64>,
    /// Σ w·s sᵀ (row-major)
    wss: Vec<f64>,
    /// Σ w·(v·s)
    wv: f64,
    /// disjoint consecutive pairs: Σ w_a w_b (s_a·s_b/N)⁴ and Σ w_a w_b
    pair4: f64,
    pairw: f64,
}

impl Block {
    fn new(n: usize) -> Self {
        Block { draws: 0.0, w: 0.0, w2: 0.0, ws: vec![0.0; n], wss: vec![0.0; n * n], wv: 0.0, pair4: 0.0, pairw: 0.0 }
    }

    fn minus(&self, o: &Block) -> Block {
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect();
        Block {
            draws: self.draws - o.draws,
            w: self.w - o.w,
            w2: self.w2 - o.w2,
            ws: sub(&self.ws, &o.ws),
            wss: sub(&self.wss, &o.wss),
            wv: self.wv - o.wv,
            pair4: self.pair4 - o.pair4,
            pairw: self.pairw - o.pairw,
        }
    }

    fn add(&mut self, o: &Block) {
        self.draws += o.draws;
        self.w += o.w;
        self.w2 += o.w2;
        self.ws.iter_mut().zip(&o.ws).for_each(|(a, b)| *a += b);
        self.wss.iter_mut().zip(&o.wss).for_each(|(a, b)| *a += b);
        self.wv += o.wv;
        self.pair4 += o.pair4;
        self.pairw += o.pairw;
    }

    /// (log Z − shift, k=1, k=2, k=4, ext) from these sums.  The k = 1, 2
    /// moments use every ordered pair of distinct draws:
    /// Σ_{a≠b}w_aw_b(s_a·s_b) = |Σw s|² − NΣw², since |s|² = N.
    fn estimates(&self, n: usize) -> [f64; 5] {
        let nf = n as f64;
        let pair_norm = self.w * self.w - self.w2;
        let r1 = (self.ws.iter().map(|x| x * x).sum::<f64>() - nf * self.w2) / nf / pair_norm;
        let r2 = (self.wss.iter().map(|x| x * x).sum::<f64>() - nf * nf * self.w2) / (nf * nf) / pair_norm;
        [(self.w / self.draws).ln(), r1, r2, self.pair4 / self.pairw, self.wv / nf / self.w]
    }
}

fn oracle_draw(rng: &mut impl rand::Rng, n: usize, s: &mut [f64]) {
    let mut norm = 0.0;
    for x in s.iter_mut() {
        *x = StandardNormal.sample(rng);
        norm += *x * *x;
    }
    let scale = (n as f64 / norm).sqrt();
    s.iter_mut().for_each(|x| *x *= scale);
}

/// Uniform-sphere importance sampling of Z and the Gibbs moments of one
/// sample, with block-jackknife standard errors.
pub fn sphere_oracle(
    sample: &SpectralSample,
    params: &ModelParams,
    n_draws: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    let n = sample.n();
    if n > ORACLE_MAX_N {
        return Err(Error::InvalidParam(format!("sphere oracle is limited to N <= {ORACLE_MAX_N}, got {n}")));
    }
    if n != params.n_dim {
        return Err(Error::InvalidParam("sample and params disagree on N".into()));
    }
    if n_draws < 20 * ORACLE_BLOCKS {
        return Err(Error::InvalidParam(format!("sphere oracle needs at least {} draws", 20 * ORACLE_BLOCKS)));
    }
    let (beta, h) = (params.beta, params.h);
    let nf = n as f64;
    let bound = beta * (sample.lambdas.iter().fold(0.0f64, |a, l| a.max(l.abs())) * nf / 2.0 + h * nf);
    if bound > 700.0 {
        return Err(Error::InvalidParam(format!("log-weight bound {bound:.1} exceeds the overflow guard 700")));
    }
    let log_weight = |s: &[f64]| -> f64 {
        let mut e = 0.0;
        for i in 0..n {
            e += 0.5 * beta * sample.lambdas[i] * s[i] * s[i] + beta * h * sample.v_projs[i] * s[i];
        }
        e
    };
    let mut s = vec![0.0; n];
    // pass 1: the largest log-weight, so that every weight is ≤ 1
    let mut rng = stream_rng(seed, stream::ORACLE);
    let mut shift = f64::NEG_INFINITY;
    for _ in 0..n_draws {
        oracle_draw(&mut rng, n, &mut s);
        shift = shift.max(log_weight(&s));
    }
    // pass 2: the same draws, accumulated per block
    let mut rng = stream_rng(seed, stream::ORACLE);
    let per_block = n_draws / ORACLE_BLOCKS;
    let mut blocks = vec![Block::new(n); ORACLE_BLOCKS];
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for d in 0..per_block * ORACLE_BLOCKS {
        oracle_draw(&mut rng, n, &mut s);
        let w = (log_weight(&s) - shift).exp();
        let b = &mut blocks[d / per_block];
        b.draws += 1.0;
        b.w += w;
        b.w2 += w * w;
        let mut vs = 0.0;
        for i in 0..n {
            let ws = w * s[i];
            b.ws[i] += ws;
            vs += sample.v_projs[i] * s[i];
            let row = &mut b.wss[i * n..(i + 1) * n];
            for (r, sj) in row.iter_mut().zip(&s) {
                *r += ws * sj;
            }
        }
        b.wv += w * vs;
        match prev.take() {
            None => prev = Some((w, s.clone())),
            Some((wa, sa)) => {
                let r = sa.iter().zip(&s).map(|(x, y)| x * y).sum::<f64>() / nf;
                b.pair4 += wa * w * r.powi(4);
                b.pairw += wa * w;
            }
        }
    }
    let mut total = Block::new(n);
    for b in &blocks {
        total.add(b);
    }
    let ess = total.w * total.w / total.w2;
    if !(ess >= ORACLE_MIN_ESS) {
        return Err(Error::LowEss { ess, min: ORACLE_MIN_ESS });
    }
    let full = total.estimates(n);
    let loo: Vec<[f64; 5]> = blocks.iter().map(|b| total.minus(b).estimates(n)).collect();
    let nb = ORACLE_BLOCKS as f64;
    let stderr = |k: usize| -> f64 {
        let mean = loo.iter().map(|e| e[k]).sum::<f64>() / nb;
        ((nb - 1.0) / nb * loo.iter().map(|e| (e[k] - mean).powi(2)).sum::<f64>()).sqrt()
    };
    Ok(OracleEstimate {
        n_draws: per_block * ORACLE_BLOCKS,
        ess,
        log_z: full[0] + shift,
        log_z_stderr: stderr(0),
        overlap: [full[1], full[2], full[3]],
        overlap_stderr: [stderr(1), stderr(2), stderr(3)],
        ext_overlap: full[4],
        ext_overlap_stderr: stderr(4),
    })
}

/// [`sphere_oracle`] with the draw count multiplied by 4 until the effective
/// sample size certifies or `max_draws` is exceeded.
pub fn sphere_oracle_certified(
    sample: &SpectralSample,
    params: &ModelParams,
    n_draws: usize,
    max_draws: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    let mut draws = n_draws;
    loop {
        match sphere_oracle(sample, params, draws, seed) {
            Err(Error::LowEss { .. }) if draws * 4 <= max_draws => draws *= 4,
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HScaling;

    fn small_sample(n: usize, seed: u64) -> SpectralSample {
        sample_spectral(&ModelParams::new(n, 1.0, 0.0).unwrap(), seed).unwrap()
    }

    #[test]
    fn statistic_names_round_trip() {
        for s in Statistic::ALL {
            assert_eq!(s.name().parse::<Statistic>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("free_energy".parse::<Statistic>().is_err());
    }

    #[test]
    fn infinite_temperature_oracle_is_uniform() {
        let s = small_sample(8, 3);
        let p = ModelParams::new(8, 0.0, 0.0).unwrap();
        let o = sphere_oracle(&s, &p, 200_000, 1).unwrap();
        assert_eq!(o.log_z, 0.0);
        assert!((o.ess - 200_000.0).abs() < 1e-6);
        assert!(o.overlap[0].abs() < 3.0 * o.overlap_stderr[0] + 1e-12, "{:?}", o);
        // uniform measure: E[(s·t/N)²] = 1/N
        assert!((o.overlap[1] - 1.0 / 8.0).abs() < 4.0 * o.overlap_stderr[1]);
    }

    #[test]
    fn oracle_gates() {
        let s = small_sample(30, 1);
        assert!(sphere_oracle(&s, &ModelParams::new(30, 0.5, 0.1).unwrap(), 10_000, 1).is_err());
        let s = small_sample(8, 1);
        assert!(sphere_oracle(&s, &ModelParams::new(8, 0.5, 0.1).unwrap(), 100, 1).is_err());
        // a single mode carrying all the weight: ESS collapses
        let spiky = SpectralSample::from_parts(vec![60.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![1.0; 8], 0).unwrap();
        match sphere_oracle(&spiky, &ModelParams::new(8, 1.0, 0.0).unwrap(), 20_000, 1) {
            Err(Error::LowEss { .. }) => {}
            other => panic!("expected low ESS, got {other:?}"),
        }
    }

    #[test]
    fn oracle_cauchy_schwarz() {
        let p = ModelParams::new(8, 1.5, 0.3).unwrap();
        let s = sample_spectral(&p, 5).unwrap();
        let o = sphere_oracle(&s, &p, 200_000, 2).unwrap();
        assert!(o.overlap[1] + 2.0 * o.overlap_stderr[1] >= o.overlap[0] * o.overlap[0] - 2.0 * o.overlap_stderr[0]);
        assert!(o.overlap[2] + 2.0 * o.overlap_stderr[2] >= o.overlap[1] * o.overlap[1] - 2.0 * o.overlap_stderr[1]);
    }

    #[test]
    fn jackknife_error_scales_with_draws() {
        let p = ModelParams::new(8, 0.8, 0.3).unwrap();
        let s = sample_spectral(&p, 9).unwrap();
        let a = sphere_oracle(&s, &p, 50_000, 4).unwrap();
        let b = sphere_oracle(&s, &p, 200_000, 4).unwrap();
        for (x, y) in [(a.log_z_stderr, b.log_z_stderr), (a.overlap_stderr[1], b.overlap_stderr[1])] {
            let ratio = x / y;
            assert!(ratio > 1.0 && ratio < 4.0, "stderr ratio {ratio}");
        }
    }

    #[test]
    fn single_replicate_summary_is_the_record() {
        let p = ModelParams::new(300, 0.5, 300f64.powf(-0.2)).unwrap();
        let mut cfg = ExperimentConfig::new(p, Statistic::FreeEnergyGaussian, 1, 11);
        cfg.reference = ReferenceChoice::Skip;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.records.len(), 1);
        let v = out.records[0].value.unwrap();
        assert_eq!(out.summary.mean, v);
        assert_eq!(out.summary.var, 0.0);
        assert_eq!(out.summary.n, 1);
    }

    #[test]
    fn incompatible_statistic_is_refused() {
        let p = ModelParams::new(300, 0.5, 300f64.powf(-0.2)).unwrap();
        let cfg = ExperimentConfig::new(p, Statistic::FreeEnergyMicro, 4, 1);
        assert!(matches!(run_experiment(&cfg), Err(Error::OutsideRegime(_))));
        let cfg = ExperimentConfig::new(p, Statistic::FreeEnergyGaussian, 0, 1);
        assert!(run_experiment(&cfg).is_err());
        let micro = ModelParams::with_scaled_theta(100, 2.0, 1.0, HScaling::Micro).unwrap();
        let mut cfg = ExperimentConfig::new(micro, Statistic::FreeEnergyMicro, 2, 1);
        cfg.sampler = Sampler::Tridiagonal;
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let p = ModelParams::with_scaled_theta(60, 2.0, 1.0, HScaling::Micro).unwrap();
        let mut cfg = ExperimentConfig::new(p, Statistic::ReplicaOverlapMean, 12, 5);
        cfg.exact_aux = false;
        cfg.threads = 1;
        let a = run_experiment(&cfg).unwrap();
        cfg.threads = 3;
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.values(), b.values());
    }
}
