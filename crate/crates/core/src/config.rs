//! Run configuration, read from TOML with one table per concern.
//!
//! ```toml
//! [grid]
//! nx = 32
//! ny = 32
//!
//! [fluid]
//! rho1 = 1.0
//! rho2 = 2.0
//! mu1 = 0.1
//! mu2 = 0.2
//! alpha1 = 0.0
//! alpha2 = 0.5
//!
//! [scheme]
//! dt = 0.005
//! r = 0.2
//! theta = 0.25
//!
//! [scenario]
//! name = "cavity"
//!
//! [run]
//! t_end = 0.5
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{Integrator, SimState, SolverSettings};
use crate::momentum::SchemeParams;
use crate::scenario::{ScenarioSpec, Setup};
use crate::solvers::SolverConfig;
use crate::transport::{CoefficientLaw, FluidParams};
use crate::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

fn default_length() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "default_length")]
    pub lx: f64,
    #[serde(default = "default_length")]
    pub ly: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawName {
    #[default]
    Affine,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidSection {
    pub rho1: f64,
    pub rho2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(default)]
    pub law: LawName,
    /// Table columns for `law = "tabulated"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_rho: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_alpha: Option<Vec<f64>>,
}

fn default_fp_max_iter() -> usize {
    200
}
fn default_transport_tol() -> f64 {
    1e-13
}
fn default_linear_tol() -> f64 {
    1e-12
}
fn default_max_iter() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub dt: f64,
    pub r: f64,
    pub theta: f64,
    /// Defaults to `1e-8 sqrt(area)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fp_tol: Option<f64>,
    #[serde(default = "default_fp_max_iter")]
    pub fp_max_iter: usize,
    #[serde(default)]
    pub stability_mode: bool,
    #[serde(default = "default_transport_tol")]
    pub transport_tol: f64,
    #[serde(default = "default_linear_tol")]
    pub momentum_tol: f64,
    #[serde(default = "default_linear_tol")]
    pub poisson_tol: f64,
    #[serde(default = "default_max_iter")]
    pub solver_max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub t_end: f64,
}

fn default_directory() -> PathBuf {
    PathBuf::from("output")
}
fn default_csv_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    /// Write a snapshot every this many steps; 0 writes only the final state.
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default = "default_csv_every")]
    pub csv_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            snapshot_every: 0,
            csv_every: default_csv_every(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub fluid: FluidSection,
    pub scheme: SchemeSection,
    pub scenario: ScenarioSpec,
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn fluid_params(&self) -> Result<FluidParams, ConfigError> {
        let f = &self.fluid;
        let law = match f.law {
            LawName::Affine => CoefficientLaw::Affine,
            LawName::Tabulated => match (&f.table_rho, &f.table_mu, &f.table_alpha) {
                (Some(rho), Some(mu), Some(alpha)) => CoefficientLaw::Tabulated {
                    rho: rho.clone(),
                    mu: mu.clone(),
                    alpha: alpha.clone(),
                },
                _ => {
                    return Err(ConfigError::Validation(
                        "law = \"tabulated\" needs table_rho, table_mu and table_alpha".into(),
                    ))
                }
            },
        };
        FluidParams::new(f.rho1, f.rho2, f.mu1, f.mu2, f.alpha1, f.alpha2, law).map_err(validation)
    }

    pub fn fp_tol(&self) -> f64 {
        self.scheme
            .fp_tol
            .unwrap_or_else(|| SchemeParams::default_fp_tol(self.grid.lx * self.grid.ly))
    }

    pub fn scheme_params(&self, fluid: &FluidParams) -> Result<SchemeParams, ConfigError> {
        let s = &self.scheme;
        SchemeParams::new(
            s.dt,
            s.r,
            s.theta,
            self.fp_tol(),
            s.fp_max_iter,
            s.stability_mode,
            fluid,
        )
        .map_err(validation)
    }

    pub fn solver_settings(&self) -> Result<SolverSettings, ConfigError> {
        let s = &self.scheme;
        let mk = |tol: f64| {
            SolverConfig::new(tol, 1e-15, s.solver_max_iter)
                .map_err(|e| ConfigError::Validation(e.to_string()))
        };
        Ok(SolverSettings {
            transport: mk(s.transport_tol)?,
            momentum: mk(s.momentum_tol)?,
            poisson: mk(s.poisson_tol)?,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fluid = self.fluid_params()?;
        self.scheme_params(&fluid)?;
        self.solver_settings()?;
        if !(self.run.t_end > 0.0 && self.run.t_end.is_finite()) {
            return Err(ConfigError::Validation(format!(
                "t_end must be positive, got {}",
                self.run.t_end
            )));
        }
        if self.output.csv_every == 0 {
            return Err(ConfigError::Validation(
                "csv_every must be at least 1".into(),
            ));
        }
        self.scenario
            .validate(&fluid)
            .map_err(ConfigError::Validation)?;
        let g = &self.grid;
        crate::grid::MacGrid::new(g.nx, g.ny, g.lx, g.ly).map_err(validation)?;
        Ok(())
    }

    /// Builds the integrator and the initial state.
    pub fn build(&self) -> Result<(Integrator, SimState, Setup), Error> {
        let fluid = self.fluid_params()?;
        let scheme = self.scheme_params(&fluid)?;
        let setup = self.scenario.build(
            self.grid.nx,
            self.grid.ny,
            self.grid.lx,
            self.grid.ly,
            &fluid,
        )?;
        let integrator = Integrator::new(fluid, scheme)
            .with_solvers(self.solver_settings()?)
            .with_forcing(setup.forcing.clone());
        let state = integrator.initialize(setup.rho0.clone(), setup.u0.clone())?;
        Ok((integrator, state, setup))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

fn validation(e: Error) -> ConfigError {
    match e {
        Error::InvalidScheme(m) | Error::InvalidFluid(m) | Error::InvalidGrid(m) => {
            ConfigError::Validation(m)
        }
        other => ConfigError::Validation(other.to_string()),
    }
}
