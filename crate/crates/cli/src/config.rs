//! Experiment configuration, stored as TOML with one table per concern.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dcsmc::models::LatticeScheme;
use dcsmc::{AlphaStarRule, DcConfig, MergeStrategy, Schedule, TemperingConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ising,
    Gsm,
    Hier,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Ising => "ising",
            ModelKind::Gsm => "gsm",
            ModelKind::Hier => "hier",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DcSir,
    DcMix,
    DcAnn,
    DcMixAnn,
    StdSmc,
    Postorder,
    Mh,
    Gibbs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DcSir => "dc-sir",
            Method::DcMix => "dc-mix",
            Method::DcAnn => "dc-ann",
            Method::DcMixAnn => "dc-mix-ann",
            Method::StdSmc => "std-smc",
            Method::Postorder => "postorder",
            Method::Mh => "mh",
            Method::Gibbs => "gibbs",
        }
    }

    /// Single-chain baselines report no normalizing constant.
    pub fn is_chain(self) -> bool {
        matches!(self, Method::Mh | Method::Gibbs)
    }

    fn allowed_for(self, kind: ModelKind) -> bool {
        match kind {
            ModelKind::Ising | ModelKind::Gsm => self != Method::Gibbs,
            ModelKind::Hier => matches!(self, Method::DcSir | Method::Postorder | Method::Gibbs),
        }
    }
}

/// Model family and its parameters. Fields that do not apply to the chosen
/// family are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Lattice side length.
    pub m: usize,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub obs_sd: f64,
    /// Random-walk step of the Gaussian-squared kernel.
    pub proposal_sd: f64,
    /// `bisection`, `quadrisection`, `binary-with-dummies` or `flat`.
    pub scheme: String,
    /// Row-major whitespace-separated observation grid. When absent, a field
    /// is simulated from the prior with `data_seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observations: Option<PathBuf>,
    #[serde(with = "seed_format")]
    pub data_seed: u64,
    /// Hierarchical dataset in the six-column TSV format.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Node labels (`county/district/...`) whose posteriors are reported.
    pub nodes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub name: Method,
    /// Particles per population.
    pub n: usize,
    /// Chain length for `mh` and `gibbs`.
    pub iterations: usize,
    pub burn_in: usize,
    pub sweeps_per_step: usize,
    /// Explicit tempering exponents; empty means adaptive.
    pub schedule: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub replicates: usize,
    #[serde(with = "seed_format")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Conditional ESS fraction targeted by adaptive tempering.
    pub cess: f64,
    /// Marginal CESS fraction used to pick the mixture warm start.
    pub alpha_star_cess: f64,
    /// Resample during tempering below this ESS fraction.
    pub ess_fraction: f64,
    /// Particles per child used when picking the warm start (0 = all).
    pub alpha_star_subsample: usize,
    pub mixture_budget: f64,
    /// Skip resampling children whose ESS fraction is at least this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub child_ess_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributedSection {
    /// Control addresses of `dcsmc worker` processes, in rank order.
    pub roster: Vec<String>,
    /// Listen address of a worker when `DCSMC_BIND` is unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bind: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub method: MethodSection,
    pub run: RunSection,
    pub thresholds: Thresholds,
    #[serde(default)]
    pub distributed: DistributedSection,
}

impl ExperimentConfig {
    /// Defaults for one model family.
    pub fn defaults(kind: ModelKind) -> Self {
        let (m, method) = match kind {
            ModelKind::Ising => (16, Method::DcMixAnn),
            ModelKind::Gsm => (8, Method::DcMixAnn),
            ModelKind::Hier => (0, Method::DcSir),
        };
        ExperimentConfig {
            model: ModelSection {
                kind,
                m,
                beta: 0.4407,
                lambda1: 10.0,
                lambda2: 0.01,
                obs_sd: 0.05,
                proposal_sd: 0.132,
                scheme: "bisection".into(),
                observations: None,
                data_seed: 1,
                dataset: None,
                nodes: Vec::new(),
            },
            method: MethodSection {
                name: method,
                n: 256,
                iterations: 10_000,
                burn_in: 1_000,
                sweeps_per_step: 1,
                schedule: Vec::new(),
            },
            run: RunSection { replicates: 1, seed: 1 },
            thresholds: Thresholds {
                cess: 0.995,
                alpha_star_cess: 0.95,
                ess_fraction: 0.5,
                alpha_star_subsample: 256,
                mixture_budget: 1e7,
                child_ess_fraction: None,
            },
            distributed: DistributedSection::default(),
        }
    }

    /// Parses a config; keys that are left out take the defaults of the
    /// file's model family (`model.kind`, itself defaulting to `fallback`).
    pub fn parse_with_default(text: &str, fallback: ModelKind) -> Result<Self> {
        let user: toml::Table = toml::from_str(text)?;
        let kind = match user.get("model").and_then(|m| m.get("kind")) {
            Some(v) => v.clone().try_into::<ModelKind>()?,
            None => fallback,
        };
        let mut merged = toml::Table::try_from(Self::defaults(kind))?;
        overlay(&mut merged, user);
        let cfg: Self = merged.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_default(text, ModelKind::Ising)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Reads a config file; relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path, fallback: ModelKind) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        let mut cfg = Self::parse_with_default(&text, fallback)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.model.observations, &mut cfg.model.dataset].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::InvalidConfig(msg));
        if self.run.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        let t = &self.thresholds;
        for (name, v) in [("cess", t.cess), ("alpha_star_cess", t.alpha_star_cess), ("ess_fraction", t.ess_fraction)]
            .into_iter()
            .chain(t.child_ess_fraction.map(|v| ("child_ess_fraction", v)))
        {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("threshold {name} = {v} is outside (0, 1]"));
            }
        }
        if !(t.mixture_budget >= 1.0) {
            return bad(format!("mixture_budget = {} is below 1", t.mixture_budget));
        }
        let method = self.method.name;
        if !method.allowed_for(self.model.kind) {
            return bad(format!("method {} is not available for the {} model", method.name(), self.model.kind));
        }
        if method.is_chain() {
            if self.method.iterations <= self.method.burn_in {
                return bad("iterations must exceed burn_in".into());
            }
        } else if self.method.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.model.kind != ModelKind::Hier {
            if self.model.m == 0 {
                return bad("lattice side m must be at least 1".into());
            }
            self.scheme()?;
        }
        if self.model.kind == ModelKind::Hier && self.model.dataset.is_none() {
            return bad("the hierarchical model needs model.dataset".into());
        }
        if self.method.sweeps_per_step == 0 {
            return bad("sweeps_per_step must be at least 1".into());
        }
        if self.method.schedule.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return bad("schedule exponents must lie in (0, 1]".into());
        }
        Ok(())
    }

    /// Lattice decomposition; the standard sampler always uses the flat one.
    pub fn scheme(&self) -> Result<LatticeScheme> {
        if self.method.name == Method::StdSmc {
            return Ok(LatticeScheme::Flat);
        }
        self.model.scheme.parse().map_err(|e: dcsmc::DcError| CliError::InvalidConfig(e.to_string()))
    }

    pub fn tempering(&self) -> TemperingConfig {
        TemperingConfig {
            schedule: if self.method.schedule.is_empty() {
                Schedule::Adaptive { cess_threshold: self.thresholds.cess }
            } else {
                Schedule::Fixed(self.method.schedule.clone())
            },
            resample_ess_fraction: Some(self.thresholds.ess_fraction),
            sweeps_per_step: self.method.sweeps_per_step,
            ..TemperingConfig::default()
        }
    }

    /// Engine settings for the divide-and-conquer methods.
    pub fn dc_config(&self) -> DcConfig {
        let n = self.method.n;
        let mut cfg = match self.method.name {
            Method::DcMix => DcConfig::dc_mix(n),
            Method::DcAnn => DcConfig::dc_ann(n),
            Method::DcMixAnn => DcConfig::dc_mix_ann(n),
            _ => DcConfig::dc_sir(n),
        };
        if let MergeStrategy::Mixture(AlphaStarRule::Adaptive { .. }) = cfg.merge {
            cfg.merge = MergeStrategy::Mixture(AlphaStarRule::Adaptive {
                cess_threshold: self.thresholds.alpha_star_cess,
                subsample: self.thresholds.alpha_star_subsample,
            });
        }
        if cfg.tempering.is_some() {
            cfg.tempering = Some(self.tempering());
        }
        cfg.mixture_budget = self.thresholds.mixture_budget;
        cfg.child_ess_fraction = self.thresholds.child_ess_fraction;
        cfg
    }
}

/// TOML integers are signed, so seeds above `i64::MAX` are written as
/// decimal strings. Both forms are accepted on input.
mod seed_format {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*v) {
            Ok(i) => s.serialize_i64(i),
            Err(_) => s.serialize_str(&v.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(u64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(v),
            Raw::Text(t) => t.trim().parse().map_err(serde::de::Error::custom),
        }
    }
}

fn overlay(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => overlay(b, u),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for kind in [ModelKind::Ising, ModelKind::Gsm] {
            let cfg = ExperimentConfig::defaults(kind);
            assert_eq!(ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_file_takes_family_defaults() {
        let cfg = ExperimentConfig::parse("[model]\nkind = \"gsm\"\n[method]\nn = 64\n").unwrap();
        assert_eq!(cfg.model.m, 8);
        assert_eq!(cfg.method.n, 64);
        assert_eq!(cfg.method.name, Method::DcMixAnn);
        assert!(ExperimentConfig::parse("[model]\ncolour = 3\n").is_err());
    }

    #[test]
    fn method_must_fit_model() {
        let mut cfg = ExperimentConfig::defaults(ModelKind::Hier);
        cfg.model.dataset = Some("x.tsv".into());
        cfg.method.name = Method::DcAnn;
        assert!(matches!(cfg.validate(), Err(CliError::InvalidConfig(_))));
        cfg.method.name = Method::Gibbs;
        cfg.validate().unwrap();
    }

    #[test]
    fn thresholds_are_checked() {
        let mut cfg = ExperimentConfig::defaults(ModelKind::Ising);
        cfg.thresholds.cess = 1.2;
        assert!(cfg.validate().is_err());
        cfg.thresholds.cess = 1.0;
        cfg.run.replicates = 0;
        assert!(cfg.validate().is_err());
    }
}
