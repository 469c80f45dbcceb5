//! JSON run configurations with a strict schema: unknown keys are rejected,
//! exactly one of `dt` / `dt_policy` must be present, and all tolerances must
//! be positive.

use std::path::PathBuf;

use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshSpec,
    pub epsilon: CoefficientSpec,
    pub mu_inv: CoefficientSpec,
    pub sigma: CoefficientSpec,
    pub source: SourceSpec,
    pub initial: InitialSpec,
    pub b_init: BInitSpec,
    pub t_final: f64,
    pub dt: Option<f64>,
    pub dt_policy: Option<DtPolicySpec>,
    #[serde(default)]
    pub stepper: StepperSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub output: RunOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub levels: Vec<usize>,
    pub t_final: f64,
    pub dt: Option<f64>,
    pub dt_policy: Option<DtPolicySpec>,
    pub output: CsvOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub n: Option<usize>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Keyword(String),
    Scalar(f64),
    PerCellFile(PerCellFileSpec),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerCellFileSpec {
    pub per_cell_file: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum SourceSpec {
    #[serde(rename = "zero")]
    Zero,
    #[serde(rename = "cavity-consistent")]
    CavityConsistent,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", deny_unknown_fields, rename_all = "lowercase")]
pub enum InitialSpec {
    Zero,
    Cavity {
        #[serde(default)]
        t0: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum BInitSpec {
    #[serde(rename = "potential")]
    Potential,
    #[serde(rename = "constrained")]
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum DtPolicySpec {
    #[serde(rename = "h_over_8")]
    HOverEight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
pub enum StepperSpec {
    #[default]
    #[serde(rename = "crank-nicolson")]
    CrankNicolson,
    #[serde(rename = "backward-euler")]
    BackwardEuler,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_cg_tol")]
    pub cg: f64,
    #[serde(default = "default_schur_tol")]
    pub schur: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            cg: default_cg_tol(),
            schur: default_schur_tol(),
        }
    }
}

fn default_cg_tol() -> f64 {
    1e-12
}

fn default_schur_tol() -> f64 {
    1e-11
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOutput {
    pub csv: PathBuf,
    /// Summary JSON path; stdout when absent.
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvOutput {
    pub csv: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.mesh.validate()?;
        if self.t_final <= 0.0 || !self.t_final.is_finite() {
            return Err(format!("t_final must be positive, got {}", self.t_final));
        }
        validate_dt_choice(&self.dt, &self.dt_policy)?;
        self.tolerances.validate()?;
        Ok(())
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.levels.is_empty() {
            return Err("levels must be non-empty".into());
        }
        if self.t_final < 0.0 || !self.t_final.is_finite() {
            return Err(format!("t_final must be nonnegative, got {}", self.t_final));
        }
        validate_dt_choice(&self.dt, &self.dt_policy)?;
        Ok(())
    }
}

impl MeshSpec {
    pub fn validate(&self) -> Result<(), String> {
        match (&self.n, &self.file) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err("mesh spec needs exactly one of `n` or `file`".into()),
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<(), String> {
        if self.cg <= 0.0 || !self.cg.is_finite() {
            return Err(format!("tolerances.cg must be positive, got {}", self.cg));
        }
        if self.schur <= 0.0 || !self.schur.is_finite() {
            return Err(format!(
                "tolerances.schur must be positive, got {}",
                self.schur
            ));
        }
        Ok(())
    }
}

fn validate_dt_choice(dt: &Option<f64>, policy: &Option<DtPolicySpec>) -> Result<(), String> {
    match (dt, policy) {
        (Some(v), None) => {
            if *v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(format!("dt must be positive, got {v}"))
            }
        }
        (None, Some(_)) => Ok(()),
        (None, None) => Err("one of `dt` or `dt_policy` is required".into()),
        (Some(_), Some(_)) => Err("`dt` and `dt_policy` are mutually exclusive".into()),
    }
}
