//! Run configuration: a TOML file with fixed key names, validated with
//! field-level diagnostics.

use serde::Deserialize;

use kfo_core::error_analysis::ExperimentConfig;
use kfo_core::maintainers::{LambdaMode, Strategy};
use kfo_core::stream::StreamConfig;

use crate::CliError;

fn default_d() -> usize {
    64
}
fn default_n_bs() -> usize {
    8
}
fn default_rho() -> f64 {
    0.95
}
fn default_decay() -> f64 {
    4.0
}
fn default_drift() -> f64 {
    0.05
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn default_t_updt() -> u64 {
    10
}
fn default_steps() -> u64 {
    300
}
fn default_lambda_mode() -> String {
    "relative".into()
}
fn default_phi_lambda() -> f64 {
    0.1
}
fn default_continuation() -> bool {
    true
}
fn default_r() -> usize {
    12
}
fn default_r_o() -> usize {
    10
}
fn default_n_pwr() -> usize {
    4
}
fn default_phi_crc() -> f64 {
    0.5
}
fn default_t_inv() -> u64 {
    50
}
fn default_t_brand() -> u64 {
    10
}
fn default_t_rsvd() -> u64 {
    50
}
fn default_t_corct() -> u64 {
    50
}

/// Top-level simulate configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_n_bs")]
    pub n_bs: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_drift")]
    pub drift: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_t_updt")]
    pub t_updt: u64,
    #[serde(default = "default_steps")]
    pub steps: u64,
    /// "relative" (lambda = phi_lambda * max eigenvalue of the benchmark)
    /// or "fixed" (lambda given directly).
    #[serde(default = "default_lambda_mode")]
    pub lambda_mode: String,
    #[serde(default = "default_phi_lambda")]
    pub phi_lambda: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_continuation")]
    pub continuation: bool,
    #[serde(default)]
    pub out_dir: Option<String>,
    pub strategies: Vec<StrategySpec>,
}

/// One strategy entry; unused keys for a given kind are rejected.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum StrategySpec {
    #[serde(rename = "exact-kfac")]
    ExactKfac {
        #[serde(default = "default_t_inv")]
        t_inv: u64,
    },
    #[serde(rename = "r-kfac")]
    RKfac {
        #[serde(default = "default_t_inv")]
        t_inv: u64,
        #[serde(default = "default_r")]
        r: usize,
        #[serde(default = "default_r_o")]
        r_o: usize,
        #[serde(default = "default_n_pwr")]
        n_pwr: usize,
    },
    #[serde(rename = "b-kfac")]
    BKfac {
        #[serde(default = "default_t_brand")]
        t_brand: u64,
        #[serde(default = "default_r")]
        r: usize,
    },
    #[serde(rename = "b-r-kfac")]
    BRKfac {
        #[serde(default = "default_t_brand")]
        t_brand: u64,
        #[serde(default = "default_t_rsvd")]
        t_rsvd: u64,
        #[serde(default = "default_r")]
        r: usize,
        #[serde(default = "default_r_o")]
        r_o: usize,
        #[serde(default = "default_n_pwr")]
        n_pwr: usize,
    },
    #[serde(rename = "b-kfac-c")]
    BKfacC {
        #[serde(default = "default_t_brand")]
        t_brand: u64,
        #[serde(default = "default_t_corct")]
        t_corct: u64,
        #[serde(default = "default_phi_crc")]
        phi_crc: f64,
        #[serde(default = "default_r")]
        r: usize,
    },
}

impl StrategySpec {
    pub fn to_strategy(&self) -> Strategy {
        match *self {
            StrategySpec::ExactKfac { t_inv } => Strategy::ExactKfac { t_inv },
            StrategySpec::RKfac {
                t_inv,
                r,
                r_o,
                n_pwr,
            } => Strategy::RKfac {
                t_inv,
                r,
                r_o,
                n_pwr,
            },
            StrategySpec::BKfac { t_brand, r } => Strategy::BKfac { t_brand, r },
            StrategySpec::BRKfac {
                t_brand,
                t_rsvd,
                r,
                r_o,
                n_pwr,
            } => Strategy::BRKfac {
                t_brand,
                t_rsvd,
                r,
                r_o,
                n_pwr,
            },
            StrategySpec::BKfacC {
                t_brand,
                t_corct,
                phi_crc,
                r,
            } => Strategy::BKfacC {
                t_brand,
                t_corct,
                phi_crc,
                r,
            },
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::config(format!("parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(CliError::config(format!(
                "field `rho` must be in (0, 1), got {}",
                self.rho
            )));
        }
        if self.n_bs < 1 {
            return Err(CliError::config("field `n_bs` must be >= 1".to_string()));
        }
        if self.d < self.n_bs + 1 {
            return Err(CliError::config(format!(
                "field `d` must be >= n_bs + 1, got {}",
                self.d
            )));
        }
        if self.steps < 1 {
            return Err(CliError::config("field `steps` must be >= 1".to_string()));
        }
        if self.t_updt < 1 {
            return Err(CliError::config("field `t_updt` must be >= 1".to_string()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::config(
                "field `seeds` must list at least one seed".to_string(),
            ));
        }
        if self.strategies.is_empty() {
            return Err(CliError::config(
                "field `strategies` must list at least one strategy".to_string(),
            ));
        }
        match self.lambda_mode.as_str() {
            "relative" => {
                if self.phi_lambda <= 0.0 {
                    return Err(CliError::config(
                        "field `phi_lambda` must be > 0".to_string(),
                    ));
                }
            }
            "fixed" => match self.lambda {
                Some(l) if l > 0.0 => {}
                _ => {
                    return Err(CliError::config(
                        "field `lambda` must be set and > 0 when lambda_mode = \"fixed\""
                            .to_string(),
                    ))
                }
            },
            other => {
                return Err(CliError::config(format!(
                    "field `lambda_mode` must be \"relative\" or \"fixed\", got \"{other}\""
                )))
            }
        }
        Ok(())
    }

    pub fn lambda_mode(&self) -> LambdaMode {
        match self.lambda_mode.as_str() {
            "fixed" => LambdaMode::Fixed(self.lambda.expect("validated")),
            _ => LambdaMode::Relative(self.phi_lambda),
        }
    }

    pub fn experiment_config(&self, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            stream: StreamConfig {
                dim: self.d,
                update_cols: self.n_bs,
                rho: self.rho,
                decay: self.decay,
                drift: self.drift,
                seed,
            },
            t_updt: self.t_updt,
            steps: self.steps,
            lambda_mode: self.lambda_mode(),
            continuation: self.continuation,
        }
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        self.strategies.iter().map(|s| s.to_strategy()).collect()
    }
}

/// Configuration for the `apply` subcommand.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplyConfig {
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Truncation rank for the inverses; 0 keeps the full spectrum.
    #[serde(default)]
    pub r: usize,
    #[serde(default = "default_lambda_mode")]
    pub lambda_mode: String,
    #[serde(default = "default_phi_lambda")]
    pub phi_lambda: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_continuation")]
    pub continuation: bool,
    /// "dense", "linear", or "both".
    #[serde(default = "default_apply_mode")]
    pub mode: String,
    pub factors_a: String,
    pub factors_g: String,
    pub grad_a: String,
    pub grad_g: String,
    #[serde(default = "default_out_dense")]
    pub out_dense: String,
    #[serde(default = "default_out_linear")]
    pub out_linear: String,
}

fn default_apply_mode() -> String {
    "both".into()
}
fn default_out_dense() -> String {
    "steps_dense.kfst".into()
}
fn default_out_linear() -> String {
    "steps_linear.kfst".into()
}

impl ApplyConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ApplyConfig =
            toml::from_str(text).map_err(|e| CliError::config(format!("parse error: {e}")))?;
        if !(cfg.rho > 0.0 && cfg.rho < 1.0) {
            return Err(CliError::config(format!(
                "field `rho` must be in (0, 1), got {}",
                cfg.rho
            )));
        }
        match cfg.mode.as_str() {
            "dense" | "linear" | "both" => {}
            other => {
                return Err(CliError::config(format!(
                    "field `mode` must be \"dense\", \"linear\" or \"both\", got \"{other}\""
                )))
            }
        }
        match cfg.lambda_mode.as_str() {
            "relative" | "fixed" => {}
            other => {
                return Err(CliError::config(format!(
                    "field `lambda_mode` must be \"relative\" or \"fixed\", got \"{other}\""
                )))
            }
        }
        Ok(cfg)
    }

    pub fn lambda_mode(&self) -> Result<LambdaMode, CliError> {
        match self.lambda_mode.as_str() {
            "fixed" => match self.lambda {
                Some(l) if l > 0.0 => Ok(LambdaMode::Fixed(l)),
                _ => Err(CliError::config(
                    "field `lambda` must be set and > 0 when lambda_mode = \"fixed\"".to_string(),
                )),
            },
            _ => Ok(LambdaMode::Relative(self.phi_lambda)),
        }
    }
}
