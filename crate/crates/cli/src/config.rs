//! Run configuration loaded from TOML. Every field has a default, so an
//! empty file (or no file) is a valid configuration.

use std::path::{Path, PathBuf};

use figp_inverse::inverse::{McmcSettings, Priors};
use figp_inverse::{Error, Fidelity, KernelVariant, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub benchmark: BenchmarkConfig,
    pub fit: FitConfig,
    pub priors: PriorsConfig,
    pub mcmc: McmcConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Where `generate` writes, and the default home of the three data files.
    pub data: PathBuf,
    pub train: Option<PathBuf>,
    pub observation: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Where `fit`, `invert` and `evaluate` write.
    pub output: PathBuf,
    /// Model file; defaults to `model.json` in the output directory.
    pub model: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: "data".into(),
            train: None,
            observation: None,
            truth: None,
            output: "out".into(),
            model: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Sensor frequencies per axis; the image has `sensors²` pixels.
    pub sensors: usize,
    pub max_frequency: f64,
    pub quadrature: usize,
    pub beta: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            sensors: 32,
            max_frequency: 4.0,
            quadrature: 128,
            beta: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    #[default]
    Auto,
    Linear,
    Nonlinear,
}

impl KernelChoice {
    pub fn forced(self) -> Option<KernelVariant> {
        match self {
            KernelChoice::Auto => None,
            KernelChoice::Linear => Some(KernelVariant::Linear),
            KernelChoice::Nonlinear => Some(KernelVariant::Nonlinear),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Node count `N` written into generated training data.
    pub nodes: usize,
    pub threshold: f64,
    pub kernel: KernelChoice,
    pub fidelity: Fidelity,
    /// Multistart count for the hyperparameter search.
    pub starts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            nodes: 100,
            threshold: 0.99,
            kernel: KernelChoice::Auto,
            fidelity: Fidelity::Single,
            starts: 8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorsConfig {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub a3: f64,
    pub b3: f64,
}

impl Default for PriorsConfig {
    fn default() -> Self {
        let p = Priors::default();
        Self {
            a1: p.a1,
            b1: p.b1,
            a2: p.a2,
            b2: p.b2,
            a3: p.a3,
            b3: p.b3,
        }
    }
}

impl PriorsConfig {
    pub fn priors(&self) -> Priors {
        Priors {
            a1: self.a1,
            b1: self.b1,
            a2: self.a2,
            b2: self.b2,
            a3: self.a3,
            b3: self.b3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub c_g: f64,
    pub c_s: f64,
    pub c_eta: f64,
    pub adapt_target: f64,
    pub adapt_interval: usize,
    pub paper_literal: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        let m = McmcSettings::default();
        Self {
            burn_in: m.burn_in,
            samples: m.samples,
            thin: m.thin,
            c_g: m.c_g,
            c_s: m.c_s,
            c_eta: m.c_eta,
            adapt_target: m.adapt_target,
            adapt_interval: m.adapt_interval,
            paper_literal: m.paper_literal,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Points per axis of the regular evaluation grid for `g`.
    pub grid: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { grid: 101 }
    }
}

fn bad(field: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {why}"))
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive and finite, got {v}")))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(bad(field, format!("must be at least {min}, got {v}")))
    }
}

impl RunConfig {
    /// Reads and validates a config file. Relative paths inside it are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.rebase(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.benchmark;
        at_least("benchmark.sensors", b.sensors, 1)?;
        at_least("benchmark.quadrature", b.quadrature, 1)?;
        if !(b.max_frequency >= 0.0 && b.max_frequency.is_finite()) {
            return Err(bad("benchmark.max_frequency", format!("must be finite and nonnegative, got {}", b.max_frequency)));
        }
        if !(b.beta >= 0.0 && b.beta.is_finite()) {
            return Err(bad("benchmark.beta", format!("must be finite and nonnegative, got {}", b.beta)));
        }

        let f = &self.fit;
        at_least("fit.nodes", f.nodes, 1)?;
        at_least("fit.starts", f.starts, 1)?;
        if !(f.threshold > 0.0 && f.threshold < 1.0) {
            return Err(bad("fit.threshold", format!("must be in (0, 1), got {}", f.threshold)));
        }

        let p = &self.priors;
        for (name, v) in [
            ("priors.a1", p.a1),
            ("priors.b1", p.b1),
            ("priors.a2", p.a2),
            ("priors.b2", p.b2),
            ("priors.a3", p.a3),
            ("priors.b3", p.b3),
        ] {
            positive(name, v)?;
        }

        let m = &self.mcmc;
        at_least("mcmc.burn_in", m.burn_in, 1)?;
        at_least("mcmc.samples", m.samples, 1)?;
        at_least("mcmc.thin", m.thin, 1)?;
        at_least("mcmc.adapt_interval", m.adapt_interval, 1)?;
        for (name, v) in [("mcmc.c_g", m.c_g), ("mcmc.c_s", m.c_s), ("mcmc.c_eta", m.c_eta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        if !(m.adapt_target > 0.0 && m.adapt_target < 1.0) {
            return Err(bad("mcmc.adapt_target", format!("must be in (0, 1), got {}", m.adapt_target)));
        }

        at_least("output.grid", self.output.grid, 2)?;
        Ok(())
    }

    pub fn mcmc_settings(&self) -> McmcSettings {
        let m = &self.mcmc;
        McmcSettings {
            burn_in: m.burn_in,
            samples: m.samples,
            thin: m.thin,
            c_g: m.c_g,
            c_s: m.c_s,
            c_eta: m.c_eta,
            adapt_target: m.adapt_target,
            adapt_interval: m.adapt_interval,
            seed: self.seed,
            paper_literal: m.paper_literal,
        }
    }
}

impl PathsConfig {
    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.data);
        join(&mut self.output);
        for p in [&mut self.train, &mut self.observation, &mut self.truth, &mut self.model]
            .into_iter()
            .flatten()
        {
            join(p);
        }
    }

    pub fn train(&self) -> PathBuf {
        self.train.clone().unwrap_or_else(|| self.data.join("train.json"))
    }

    pub fn observation(&self) -> PathBuf {
        self.observation.clone().unwrap_or_else(|| self.data.join("observation.json"))
    }

    pub fn truth(&self) -> PathBuf {
        self.truth.clone().unwrap_or_else(|| self.data.join("truth.json"))
    }

    pub fn model(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.output.join("model.json"))
    }
}
