//! The single JSON document that drives every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coupling::CouplingKind;
use crate::baselines::IdppConfig;
use crate::error::{Error, Result};
use crate::gfm::{Integrator, TrainConfig};
use crate::potential::{AutoencoderConfig, RbfFitConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    /// Langevin steps per endpoint.
    pub steps: usize,
    pub dt: f64,
    pub xi: f64,
    pub samples: usize,
    pub seed_a: u64,
    pub seed_b: u64,
    /// Defaults to the first registered minimum.
    pub start_a: Option<Vec<f64>>,
    /// Defaults to the second registered minimum.
    pub start_b: Option<Vec<f64>>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            steps: 12_000,
            dt: 1e-4,
            xi: 5.0,
            samples: 2000,
            seed_a: 0,
            seed_b: 1,
            start_a: None,
            start_b: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    #[default]
    Metric,
    Latent,
    None,
}

impl std::str::FromStr for PotentialKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metric" => Ok(Self::Metric),
            "latent" => Ok(Self::Latent),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown potential kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PotentialConfig {
    pub kind: PotentialKind,
    pub rbf: RbfFitConfig,
    pub autoencoder: AutoencoderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub n_paths: usize,
    pub ode_steps: usize,
    pub integrator: Integrator,
    /// Keep only the `k` highest-weighted paths; weighting uses the true potential.
    pub top_k: Option<usize>,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            ode_steps: 500,
            integrator: Integrator::Rk4,
            top_k: None,
            seed: 123,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    #[default]
    Linear,
    Idpp,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "idpp" => Ok(Self::Idpp),
            other => Err(Error::Config(format!("unknown baseline `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// `product` for random pairs or `minibatch-ot`.
    pub coupling: CouplingKind,
    pub n_paths: usize,
    pub n_points: usize,
    pub seed: u64,
    /// Pairs of the synthetic cluster system used by the IDPP baseline.
    pub idpp_pairs: usize,
    pub idpp: IdppConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kind: BaselineKind::Linear,
            coupling: CouplingKind::Product,
            n_paths: 1000,
            n_points: 500,
            seed: 123,
            idpp_pairs: 8,
            idpp: IdppConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub surface: String,
    pub out_dir: PathBuf,
    pub simulate: SimulateConfig,
    pub potential: PotentialConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            surface: "mueller-brown".into(),
            out_dir: PathBuf::from("runs/mueller-brown"),
            simulate: SimulateConfig::default(),
            potential: PotentialConfig::default(),
            train: TrainConfig::default(),
            sample: SampleConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.simulate;
        if s.steps == 0 || s.samples == 0 || s.samples > s.steps {
            return Err(Error::Config(format!(
                "need 0 < samples ({}) <= steps ({})",
                s.samples, s.steps
            )));
        }
        if !(s.dt > 0.0 && s.xi >= 0.0) {
            return Err(Error::Config("dt must be positive and xi non-negative".into()));
        }
        self.train.validate()?;
        if self.sample.n_paths == 0 || self.sample.ode_steps == 0 {
            return Err(Error::Config("sampling needs paths and ODE steps".into()));
        }
        if self.sample.top_k == Some(0) {
            return Err(Error::Config("top_k must be positive".into()));
        }
        Ok(())
    }
}
