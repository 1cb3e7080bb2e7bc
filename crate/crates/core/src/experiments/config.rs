use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::ManifestEntry;
use crate::error::{Error, Result};
use crate::reverse::LambdaMode;
use crate::state_space::Q0Source;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Forward,
    Tau,
    Unif,
    Bounds,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Forward, Scenario::Tau, Scenario::Unif, Scenario::Bounds];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Forward => "forward",
            Scenario::Tau => "tau",
            Scenario::Unif => "unif",
            Scenario::Bounds => "bounds",
        }
    }
}

/// Sweep description for one scenario. Axes that a scenario does not use
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(rename = "S")]
    pub vocab: usize,
    #[serde(default)]
    pub mask: Option<u32>,
    #[serde(default)]
    pub q0: Vec<Q0Source>,
    #[serde(default)]
    pub d: Vec<usize>,
    #[serde(rename = "T", default)]
    pub horizons: Vec<f64>,
    #[serde(rename = "N", default)]
    pub steps: Vec<usize>,
    #[serde(default)]
    pub delta: Vec<f64>,
    #[serde(default = "zero_eta")]
    pub eta: Vec<f64>,
    /// Each preset `g` adds the product data source with γ = g.
    #[serde(default)]
    pub gamma_presets: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "one")]
    pub kappa_lambda: f64,
    #[serde(default = "analytic")]
    pub lambda_mode: LambdaMode,
    #[serde(default = "one")]
    pub kappa_clip: f64,
    #[serde(default = "yes")]
    pub exact_law: bool,
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Bound-checking manifest; `None` means the built-in default.
    #[serde(default)]
    pub manifest: Option<Vec<ManifestEntry>>,
}

fn zero_eta() -> Vec<f64> {
    vec![0.0]
}

fn default_trials() -> usize {
    10_000
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn one() -> f64 {
    1.0
}

fn analytic() -> LambdaMode {
    LambdaMode::Analytic
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    /// Desk-scale defaults for a scenario.
    pub fn default_for(scenario: Scenario) -> Self {
        let base = ExperimentConfig {
            scenario,
            vocab: 3,
            mask: None,
            q0: vec![],
            d: vec![],
            horizons: vec![],
            steps: vec![],
            delta: vec![],
            eta: zero_eta(),
            gamma_presets: vec![],
            trials: default_trials(),
            seed: 0,
            out: default_out(),
            kappa_lambda: 1.0,
            lambda_mode: LambdaMode::Analytic,
            kappa_clip: 1.0,
            exact_law: true,
            jobs: None,
            manifest: None,
        };
        match scenario {
            Scenario::Forward => ExperimentConfig {
                q0: vec![
                    Q0Source::Product(vec![0.5, 0.3, 0.2]),
                    Q0Source::Uniform,
                    Q0Source::Point(0),
                ],
                d: vec![1, 2, 3],
                horizons: (2..=12).map(f64::from).collect(),
                ..base
            },
            Scenario::Tau => ExperimentConfig {
                q0: vec![Q0Source::Product(vec![0.5, 0.3, 0.2])],
                d: vec![1, 2, 3],
                horizons: vec![12.0],
                steps: vec![32, 64, 128, 256, 512],
                delta: vec![1e-3],
                ..base
            },
            Scenario::Unif => ExperimentConfig {
                vocab: 2,
                q0: vec![Q0Source::Uniform],
                d: vec![1, 2],
                horizons: vec![10.0],
                steps: vec![1000],
                delta: vec![1e-3, 0.0],
                ..base
            },
            Scenario::Bounds => ExperimentConfig {
                horizons: (4..=12).map(f64::from).collect(),
                ..base
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(Error::Config(format!("S must be >= 2, got {}", self.vocab)));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.d.contains(&0) {
            return Err(Error::Config("d must be >= 1".into()));
        }
        if self.horizons.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Config("every T must be positive and finite".into()));
        }
        if self.steps.contains(&0) {
            return Err(Error::Config("every N must be >= 1".into()));
        }
        if self.delta.iter().any(|&d| d.is_nan() || d < 0.0) {
            return Err(Error::Config("every delta must be >= 0".into()));
        }
        if self.eta.iter().any(|&e| e.is_nan() || e < 0.0) {
            return Err(Error::Config("every eta must be >= 0".into()));
        }
        if self.kappa_lambda < 1.0 || self.kappa_clip <= 0.0 {
            return Err(Error::Config("need kappa_lambda >= 1 and kappa_clip > 0".into()));
        }
        Ok(())
    }

    /// Data sources including the γ presets.
    pub fn sources(&self) -> Vec<Q0Source> {
        let mut out = self.q0.clone();
        out.extend(self.gamma_presets.iter().map(|&g| Q0Source::Gamma(g)));
        out
    }
}
