//! Flag / config-file resolution.
//!
//! Precedence is fixed: command-line flags, then the `--config` file, then
//! built-in defaults.  The config file is flat `key=value` text (one or more
//! pairs per line, `#` starts a comment); keys are the long flag names
//! without dashes.  The resolved settings are echoed in the same syntax, so
//! an output header can be fed back as a config file.

use anyhow::{bail, Context, Result};
use ssk_lab::experiments::Statistic;
use ssk_lab::model::{HScaling, ModelParams};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// How the field strength is specified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scaling {
    /// h given directly (or θ = h²β given, h back-derived)
    Fixed,
    /// θ = h²β·N
    Micro,
    /// θ = h²β·N^{1/3}
    Intermediate,
    /// θ = h²β·N^α with α from --alpha
    CustomAlpha,
}

impl Scaling {
    pub fn name(self) -> &'static str {
        match self {
            Scaling::Fixed => "fixed",
            Scaling::Micro => "micro",
            Scaling::Intermediate => "intermediate",
            Scaling::CustomAlpha => "custom-alpha",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "fixed" => Scaling::Fixed,
            "micro" => Scaling::Micro,
            "intermediate" => Scaling::Intermediate,
            "custom-alpha" => Scaling::CustomAlpha,
            _ => bail!("unknown h-scaling {s:?}"),
        })
    }
}

/// Partially specified settings (from flags or from a file).
#[derive(Debug, Clone, Default, PartialEq, clap::Args)]
pub struct Settings {
    /// Dimension N (for `airy`: size of the GOE matrix, at least 1000)
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Inverse temperature β
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Field strength h
    #[arg(long, global = true)]
    pub h: Option<f64>,
    /// Scaled field constant θ = h²β·N^α; h is back-derived
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// How θ scales with N
    #[arg(long = "h-scaling", value_enum, global = true)]
    pub h_scaling: Option<Scaling>,
    /// Exponent α for --h-scaling custom-alpha
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Seed (base seed for experiments)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of replicates (experiments) or draws (airy)
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Sphere-oracle draws
    #[arg(long, global = true)]
    pub draws: Option<usize>,
    /// Statistic measured by `experiment`
    #[arg(long, global = true, value_parser = parse_statistic)]
    pub statistic: Option<Statistic>,
    /// Output file (records for `experiment`, CSV for `airy` and `report`)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Number of Airy particles for `airy`
    #[arg(long, global = true)]
    pub particles: Option<usize>,
    /// Flat key=value file; flags override it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

fn parse_statistic(s: &str) -> std::result::Result<Statistic, String> {
    s.parse::<Statistic>().map_err(|e| e.to_string())
}

impl Settings {
    /// Parse `key=value` pairs; blank lines and `#` comments are ignored.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for line in text.lines() {
            let mut line = line.split('#').next().unwrap_or("").to_string();
            // allow spaces around '='
            while line.contains(" =") || line.contains("= ") {
                line = line.replace(" =", "=").replace("= ", "=");
            }
            for pair in line.split_whitespace() {
                let (k, v) = pair.split_once('=').with_context(|| format!("expected key=value, got {pair:?}"))?;
                s.set(k.trim(), v.trim())?;
            }
        }
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse_text(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let bad = |what: &str| format!("invalid value {v:?} for {what}");
        match key {
            "n" => self.n = Some(v.parse().with_context(|| bad("n"))?),
            "beta" => self.beta = Some(v.parse().with_context(|| bad("beta"))?),
            "h" => self.h = Some(v.parse().with_context(|| bad("h"))?),
            "theta" => self.theta = Some(v.parse().with_context(|| bad("theta"))?),
            "h-scaling" => self.h_scaling = Some(Scaling::parse(v)?),
            "alpha" => self.alpha = Some(v.parse().with_context(|| bad("alpha"))?),
            "seed" => self.seed = Some(v.parse().with_context(|| bad("seed"))?),
            "replicates" => self.replicates = Some(v.parse().with_context(|| bad("replicates"))?),
            "draws" => self.draws = Some(v.parse().with_context(|| bad("draws"))?),
            "statistic" => self.statistic = Some(v.parse().map_err(|e| anyhow::anyhow!("{e}"))?),
            "out" => self.out = Some(PathBuf::from(v)),
            "threads" => self.threads = Some(v.parse().with_context(|| bad("threads"))?),
            "particles" => self.particles = Some(v.parse().with_context(|| bad("particles"))?),
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// `self` wins wherever it is set.
    pub fn over(self, base: Settings) -> Settings {
        Settings {
            n: self.n.or(base.n),
            beta: self.beta.or(base.beta),
            h: self.h.or(base.h),
            theta: self.theta.or(base.theta),
            h_scaling: self.h_scaling.or(base.h_scaling),
            alpha: self.alpha.or(base.alpha),
            seed: self.seed.or(base.seed),
            replicates: self.replicates.or(base.replicates),
            draws: self.draws.or(base.draws),
            statistic: self.statistic.or(base.statistic),
            out: self.out.or(base.out),
            threads: self.threads.or(base.threads),
            particles: self.particles.or(base.particles),
            config: None,
        }
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub n: usize,
    pub beta: f64,
    pub h: Option<f64>,
    pub theta: Option<f64>,
    pub h_scaling: Scaling,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub replicates: usize,
    pub draws: usize,
    pub statistic: Option<Statistic>,
    pub out: Option<PathBuf>,
    pub threads: usize,
    pub particles: usize,
}

pub const DEFAULT_N: usize = 100;
pub const DEFAULT_BETA: f64 = 0.5;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_REPLICATES: usize = 100;
pub const DEFAULT_DRAWS: usize = 1_000_000;
pub const DEFAULT_PARTICLES: usize = 100;

impl Resolved {
    /// Flags over file over defaults.
    pub fn resolve(flags: Settings) -> Result<Self> {
        let file = match &flags.config {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        let s = flags.over(file);
        Ok(Resolved {
            n: s.n.unwrap_or(DEFAULT_N),
            beta: s.beta.unwrap_or(DEFAULT_BETA),
            h: s.h,
            theta: s.theta,
            h_scaling: s.h_scaling.unwrap_or(Scaling::Fixed),
            alpha: s.alpha,
            seed: s.seed.unwrap_or(DEFAULT_SEED),
            replicates: s.replicates.unwrap_or(DEFAULT_REPLICATES),
            draws: s.draws.unwrap_or(DEFAULT_DRAWS),
            statistic: s.statistic,
            out: s.out,
            threads: s.threads.unwrap_or(0),
            particles: s.particles.unwrap_or(DEFAULT_PARTICLES),
        })
    }

    /// `key=value` echo of every resolved setting.
    pub fn echo(&self) -> String {
        let mut e = format!("n={} beta={}", self.n, self.beta);
        if let Some(h) = self.h {
            let _ = write!(e, " h={h}");
        }
        if let Some(t) = self.theta {
            let _ = write!(e, " theta={t}");
        }
        let _ = write!(e, " h-scaling={}", self.h_scaling.name());
        if let Some(a) = self.alpha {
            let _ = write!(e, " alpha={a}");
        }
        let _ = write!(e, " seed={} replicates={} draws={}", self.seed, self.replicates, self.draws);
        if let Some(s) = self.statistic {
            let _ = write!(e, " statistic={s}");
        }
        if let Some(o) = &self.out {
            let _ = write!(e, " out={}", o.display());
        }
        let _ = write!(e, " threads={} particles={}", self.threads, self.particles);
        e
    }

    fn scaling(&self) -> Result<HScaling> {
        Ok(match self.h_scaling {
            Scaling::Fixed => HScaling::Fixed,
            Scaling::Micro => HScaling::Micro,
            Scaling::Intermediate => HScaling::Intermediate,
            Scaling::CustomAlpha => {
                HScaling::CustomAlpha(self.alpha.context("--h-scaling custom-alpha needs --alpha")?)
            }
        })
    }

    /// Model parameters; θ (if given) is read in the configured scaling and
    /// h back-derived from it.
    pub fn params(&self) -> Result<ModelParams> {
        let scaling = self.scaling()?;
        let p = match (self.h, self.theta) {
            (Some(_), Some(_)) => bail!("give either --h or --theta, not both"),
            (_, Some(t)) => ModelParams::with_scaled_theta(self.n, self.beta, t, scaling)?,
            (h, None) => {
                if scaling != HScaling::Fixed && h.is_none() {
                    bail!("--h-scaling {} needs --theta (or --h)", self.h_scaling.name());
                }
                let mut p = ModelParams::new(self.n, self.beta, h.unwrap_or(0.0))?;
                p.scaling = scaling;
                p
            }
        };
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file = Settings::parse_text("n = 50\nbeta=2 # comment\nseed=7 threads=2").unwrap();
        let flags = Settings { n: Some(80), ..Default::default() };
        let s = flags.over(file);
        assert_eq!(s.n, Some(80));
        assert_eq!(s.beta, Some(2.0));
        assert_eq!(s.seed, Some(7));
        assert_eq!(s.threads, Some(2));
    }

    #[test]
    fn echo_round_trips() {
        let flags = Settings {
            n: Some(1000),
            beta: Some(2.0),
            theta: Some(0.1 + 0.2),
            h_scaling: Some(Scaling::Micro),
            statistic: Some(Statistic::FreeEnergyMicro),
            out: Some("runs/a.jsonl".into()),
            ..Default::default()
        };
        let r = Resolved::resolve(flags).unwrap();
        let back = Resolved::resolve(Settings::parse_text(&r.echo()).unwrap()).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn bad_keys_and_values_are_errors() {
        assert!(Settings::parse_text("nn=3").is_err());
        assert!(Settings::parse_text("beta=x").is_err());
        assert!(Settings::parse_text("h-scaling=cubic").is_err());
        assert!(Settings::parse_text("n").is_err());
    }

    #[test]
    fn theta_back_derives_h() {
        let r = Resolved::resolve(Settings {
            n: Some(1000),
            beta: Some(2.0),
            theta: Some(1.0),
            h_scaling: Some(Scaling::Micro),
            ..Default::default()
        })
        .unwrap();
        let p = r.params().unwrap();
        assert!((p.theta_micro() - 1.0).abs() < 1e-12);
        let both = Resolved { h: Some(0.1), ..r };
        assert!(both.params().is_err());
    }
}
