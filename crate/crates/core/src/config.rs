//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::capacity::{CondenserSpec, SolverConfig};
use crate::error::{LabError, Result};
use crate::mapping::{Domain, MappingSpec, Scheme};
use crate::verify::{FamilySpec, Integrand, Subset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Distortion,
    Capacity,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exponents {
    #[serde(
        default,
        with = "crate::report::extended_opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub p: Option<f64>,
    #[serde(
        default,
        with = "crate::report::extended_opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub q: Option<f64>,
    #[serde(
        default,
        with = "crate::report::extended_opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub s: Option<f64>,
    #[serde(
        default,
        with = "crate::report::extended_opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub r: Option<f64>,
}

impl Exponents {
    pub fn need(&self, name: &str) -> Result<f64> {
        let v = match name {
            "p" => self.p,
            "q" => self.q,
            "s" => self.s,
            _ => self.r,
        };
        v.ok_or_else(|| {
            LabError::validation(format!("exponents.{name}"), "required for this command")
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Format,
}

/// `family` accepts a single family or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Families {
    One(FamilySpec),
    Many(Vec<FamilySpec>),
}

impl Families {
    pub fn to_vec(&self) -> Vec<FamilySpec> {
        match self {
            Families::One(f) => vec![f.clone()],
            Families::Many(v) => v.clone(),
        }
    }
}

/// One check of the `verify` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    TransferIdentity,
    ChangeOfVariables {
        #[serde(default = "unit_integrand")]
        integrand: Integrand,
        #[serde(default)]
        subset: Subset,
    },
    CapacityDistortion {
        #[serde(default)]
        same_exponent: bool,
    },
    EnergyBounds,
    OperatorNorm,
}

fn unit_integrand() -> Integrand {
    Integrand::Constant { value: 1.0 }
}

fn identity_map() -> MappingSpec {
    MappingSpec::Identity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "identity_map")]
    pub map: MappingSpec,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_domain: Option<Domain>,
    #[serde(default)]
    pub exponents: Exponents,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condenser: Option<CondenserSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Families>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<CheckSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    /// Relative tolerance of every verdict; defaults per check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Output>,
    /// Reserved for randomized inputs.
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if let Some(d) = &self.image_domain {
            d.validate().map_err(|e| prefix(e, "image_domain"))?;
        }
        self.solver.validate()?;
        if let Some(t) = self.tolerance {
            if !(t.is_finite() && t >= 0.0) {
                return Err(LabError::validation(
                    "tolerance",
                    "must be a non-negative number",
                ));
            }
        }
        match self.command {
            Command::Distortion => {
                self.exponents.need("q")?;
                self.exponents.need("r")?;
            }
            Command::Capacity => {
                if self.condenser.is_none() {
                    return Err(LabError::validation(
                        "condenser",
                        "required for the capacity command",
                    ));
                }
            }
            Command::Verify => {
                if self.image_domain.is_none() {
                    return Err(LabError::validation(
                        "image_domain",
                        "required for the verify command",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Same configuration with every grid resolution replaced.
    pub fn with_grid(mut self, grid: usize) -> ExperimentConfig {
        self.domain = self.domain.with_grid(grid);
        self.image_domain = self.image_domain.map(|d| d.with_grid(grid));
        self
    }
}

/// Serde reports misspelled keys and wrong shapes; keep its message, which
/// names the field, but classify it as a validation error.
fn config_error(e: serde_json::Error) -> LabError {
    let msg = e.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("config")
        .to_string();
    LabError::validation(field, msg)
}

fn prefix(e: LabError, with: &str) -> LabError {
    match e {
        LabError::Validation { field, message } => LabError::Validation {
            field: field.replacen("domain", with, 1),
            message,
        },
        other => other,
    }
}
