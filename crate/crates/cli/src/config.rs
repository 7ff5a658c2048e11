//! Config files: TOML with one table per concern. Every key is optional;
//! unknown keys are rejected.

use std::path::PathBuf;

use gmcf_core::harness::ExperimentConfig;
use gmcf_core::kernel::{CircleGeometry, KernelName};
use gmcf_core::twopoint::FBoundSweepConfig;
use gmcf_core::brownian::Monitoring;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    pub kernel: KernelName,
    pub geometry: CircleGeometry,
    pub t: f64,
    pub layer_width: f64,
    pub grid_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosSection {
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoodEventSection {
    pub a: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub n_list: Vec<u64>,
    pub replicas: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelCheckSection {
    pub r_max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovarianceSection {
    pub lags: usize,
    pub min_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrownianSection {
    pub dt: f64,
    pub replicas: u64,
    pub monitoring: Monitoring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoPointSection {
    pub t: f64,
    pub n: u64,
    pub gaps: usize,
    pub dt: f64,
    pub replicas: u64,
    pub pilot_replicas: u64,
    pub pilot_stride: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub field: FieldSection,
    pub chaos: ChaosSection,
    pub good_event: GoodEventSection,
    pub experiment: ExperimentSection,
    pub kernel_check: KernelCheckSection,
    pub covariance: CovarianceSection,
    pub brownian: BrownianSection,
    pub twopoint: TwoPointSection,
}

impl Default for FieldSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self {
            kernel: d.kernel,
            geometry: d.geometry,
            t: d.t,
            layer_width: d.layer_width,
            grid_size: d.grid_size,
        }
    }
}

impl Default for ChaosSection {
    fn default() -> Self {
        Self {
            gamma: ExperimentConfig::default().gamma,
        }
    }
}

impl Default for GoodEventSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self { a: d.a, delta: d.delta }
    }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self {
            n_list: d.n_list,
            replicas: d.replicas,
            seed: d.seed,
            workers: d.workers,
            output: d.output,
        }
    }
}

impl Default for KernelCheckSection {
    fn default() -> Self {
        Self { r_max: 12 }
    }
}

impl Default for CovarianceSection {
    fn default() -> Self {
        Self {
            lags: 20,
            min_offset: 10,
        }
    }
}

impl Default for BrownianSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            replicas: 1_000_000,
            monitoring: Monitoring::BridgeCorrected,
        }
    }
}

impl Default for TwoPointSection {
    fn default() -> Self {
        Self {
            t: 12.0,
            n: 256,
            gaps: 20,
            dt: 0.01,
            replicas: 100_000,
            pilot_replicas: 100_000,
            pilot_stride: 3,
            c: None,
        }
    }
}

impl Config {
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            kernel: self.field.kernel,
            geometry: self.field.geometry,
            gamma: self.chaos.gamma,
            delta: self.good_event.delta,
            a: self.good_event.a,
            t: self.field.t,
            layer_width: self.field.layer_width,
            grid_size: self.field.grid_size,
            n_list: self.experiment.n_list.clone(),
            replicas: self.experiment.replicas,
            seed: self.experiment.seed,
            workers: self.experiment.workers,
            output: self.experiment.output.clone(),
        }
    }

    pub fn fbound(&self) -> FBoundSweepConfig {
        let tp = &self.twopoint;
        FBoundSweepConfig {
            t: tp.t,
            n: tp.n,
            delta: self.good_event.delta,
            a: self.good_event.a,
            gaps: tp.gaps,
            dt: tp.dt,
            replicas: tp.replicas,
            pilot_replicas: tp.pilot_replicas,
            pilot_stride: tp.pilot_stride,
            c: tp.c,
            seed: self.experiment.seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.experiment()
            .validate(1)
            .map_err(|e| ConfigError::Invalid(strip_prefix(e.to_string())))?;
        let tp = &self.twopoint;
        if tp.n < 2 {
            return Err(ConfigError::Invalid(format!("twopoint.n: must be >= 2, got {}", tp.n)));
        }
        if !(tp.dt > 0.0 && tp.dt <= 0.01) {
            return Err(ConfigError::Invalid(format!("twopoint.dt: must satisfy 0 < dt <= 0.01, got {}", tp.dt)));
        }
        if tp.gaps < 3 || tp.replicas < 2 || tp.pilot_replicas < 2 || tp.pilot_stride == 0 {
            return Err(ConfigError::Invalid(
                "twopoint: need gaps >= 3, replicas >= 2, pilot_replicas >= 2, pilot_stride >= 1".into(),
            ));
        }
        if let Some(c) = tp.c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(ConfigError::Invalid(format!("twopoint.c: must be finite and > 0, got {c}")));
            }
        }
        let b = &self.brownian;
        if !(b.dt > 0.0 && b.dt <= 0.01) || b.replicas < 2 {
            return Err(ConfigError::Invalid(format!(
                "brownian: need 0 < dt <= 0.01 and replicas >= 2, got dt = {}, replicas = {}",
                b.dt, b.replicas
            )));
        }
        if self.covariance.lags < 2 || self.covariance.min_offset == 0 {
            return Err(ConfigError::Invalid("covariance: need lags >= 2 and min_offset >= 1".into()));
        }
        if self.kernel_check.r_max == 0 {
            return Err(ConfigError::Invalid("kernel_check.r_max: must be >= 1".into()));
        }
        Ok(())
    }

    /// The full effective configuration as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}

fn strip_prefix(msg: String) -> String {
    msg.strip_prefix("invalid argument: ").map(str::to_string).unwrap_or(msg)
}

pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
