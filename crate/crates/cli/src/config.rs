//! The experiment configuration: one JSON document, every field defaulted.

use std::path::{Path, PathBuf};

use edgeprior::circle::{Mesh, PriorParams};
use edgeprior::forward::{Kernel, KernelSpec};
use edgeprior::posterior::CoordinateSystem;
use edgeprior::scam::ScamConfig;
use edgeprior::signals::SignalSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn d_epsilon() -> f64 {
    1e-3
}
fn d_q() -> f64 {
    4.0
}
fn d_n() -> u32 {
    6
}
fn d_k() -> u32 {
    6
}
fn d_truth_level() -> u32 {
    10
}
fn d_snr() -> f64 {
    10.0
}
fn d_quad() -> usize {
    8
}
fn d_seed() -> u64 {
    1
}
fn d_out() -> PathBuf {
    PathBuf::from("out")
}
fn d_mcmc() -> ScamConfig {
    ScamConfig {
        sweeps: 20_000,
        ..ScamConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_q")]
    pub q: f64,
    /// Level of the unknown, `N = 2^n`.
    #[serde(default = "d_n")]
    pub n: u32,
    /// Level of the measurement, `K = 2^k`.
    #[serde(default = "d_k")]
    pub k: u32,
    /// Level at which synthetic data are generated from the truth.
    #[serde(default = "d_truth_level")]
    pub truth_level: u32,
    #[serde(default)]
    pub kernel: KernelSpec,
    /// Noise standard deviation; derived from `snr` when absent.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// `rms(A u_true) / σ`, used when `sigma` is absent.
    #[serde(default = "d_snr")]
    pub snr: f64,
    #[serde(default)]
    pub signal: SignalSpec,
    #[serde(default = "d_quad")]
    pub quad_order: usize,
    #[serde(default)]
    pub coordinates: CoordinateSystem,
    #[serde(default = "d_mcmc")]
    pub mcmc: ScamConfig,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
    /// Directory for cached bases; no caching when absent.
    #[serde(default)]
    pub basis_cache: Option<PathBuf>,
    #[serde(default = "d_out")]
    pub out: PathBuf,
    /// Seed of the measurement noise; the sampler uses `mcmc.seed`.
    #[serde(default = "d_seed")]
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn d_diag_eps() -> f64 {
    0.25
}
fn d_diag_q() -> f64 {
    2.0
}
fn d_mult_levels() -> Vec<u32> {
    vec![5, 6, 7, 8, 9]
}
fn d_proj_levels() -> Vec<u32> {
    vec![2, 3, 4, 5, 6]
}
fn d_t() -> Vec<f64> {
    vec![0.0, 0.4]
}
fn d_weak_levels() -> Vec<u32> {
    vec![2, 3, 4, 5, 6]
}
fn d_exp_levels() -> Vec<u32> {
    vec![3, 4, 5]
}
fn d_b() -> f64 {
    1.0
}
fn d_samples() -> usize {
    100_000
}
fn d_min_ratio() -> f64 {
    1.8
}

/// Parameters of the convergence suite. It runs with its own `(ε, q)`:
/// the checks probe asymptotics in `n`, which moderate parameters reach at
/// small levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    #[serde(default = "d_diag_eps")]
    pub epsilon: f64,
    #[serde(default = "d_diag_q")]
    pub q: f64,
    #[serde(default = "d_mult_levels")]
    pub mult_levels: Vec<u32>,
    #[serde(default = "d_min_ratio")]
    pub mult_min_ratio: f64,
    #[serde(default = "d_proj_levels")]
    pub proj_levels: Vec<u32>,
    #[serde(default = "d_t")]
    pub proj_t: Vec<f64>,
    #[serde(default = "d_weak_levels")]
    pub weak_levels: Vec<u32>,
    /// `v` for the Gaussian-layer check: `"constant"` or `"smooth"`.
    #[serde(default = "d_weak_v")]
    pub weak_v: String,
    #[serde(default = "d_exp_levels")]
    pub exp_levels: Vec<u32>,
    #[serde(default = "d_b")]
    pub exp_b: f64,
    #[serde(default = "d_samples")]
    pub exp_samples: usize,
}

fn d_weak_v() -> String {
    "smooth".into()
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn bad(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {reason}"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn params(&self) -> Result<PriorParams, CliError> {
        PriorParams::new(self.epsilon, self.q).map_err(|e| bad("epsilon/q", e))
    }

    /// Checks every precondition before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        self.params()?;
        Mesh::new(self.n).map_err(|e| bad("n", e))?;
        Mesh::new(self.k).map_err(|e| bad("k", e))?;
        Mesh::new(self.truth_level).map_err(|e| bad("truth_level", e))?;
        if self.truth_level < self.n {
            return Err(bad("truth_level", "must be at least n"));
        }
        Kernel::new(self.kernel.clone()).map_err(|e| bad("kernel", e))?;
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(bad("sigma", "must be >= 0"));
            }
        } else if !(self.snr.is_finite() && self.snr > 0.0) {
            return Err(bad("snr", "must be > 0"));
        }
        if self.quad_order < 2 || self.quad_order > 64 {
            return Err(bad("quad_order", "must lie in 2..=64"));
        }
        self.mcmc
            .validate(2usize << self.n)
            .map_err(|e| bad("mcmc", e))?;
        let d = &self.diagnose;
        PriorParams::new(d.epsilon, d.q).map_err(|e| bad("diagnose.epsilon/q", e))?;
        for (name, levels) in [
            ("diagnose.mult_levels", &d.mult_levels),
            ("diagnose.proj_levels", &d.proj_levels),
            ("diagnose.weak_levels", &d.weak_levels),
            ("diagnose.exp_levels", &d.exp_levels),
        ] {
            if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) {
                return Err(bad(name, "must be non-empty and strictly increasing"));
            }
            if *levels.last().expect("non-empty") > 11 {
                return Err(bad(name, "levels above 11 are too expensive for dense diagnostics"));
            }
        }
        if !matches!(d.weak_v.as_str(), "constant" | "smooth") {
            return Err(bad("diagnose.weak_v", "expected \"constant\" or \"smooth\""));
        }
        if d.exp_samples < 2 {
            return Err(bad("diagnose.exp_samples", "need at least 2"));
        }
        Ok(())
    }
}
