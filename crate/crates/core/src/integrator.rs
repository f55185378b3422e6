//! Time stepping: initialization, the full fractional step and run loops.

use crate::grid::{
    divergence, face_density, gradient_to_faces, mass_flux, ScalarField, TensorField,
    VelocityField, ViscousOperator,
};
use crate::momentum::{fixed_point_solve, FixedPointReport, SchemeParams};
use crate::pressure::{accumulate_pressure, correct_velocity, pressure_increment};
use crate::solvers::{SolveStats, SolverConfig};
use crate::transport::{advect_density, eval_coefficients, FluidParams, DENSITY_BOUND_TOL};
use crate::Error;

/// Everything carried from one time level to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub n: usize,
    pub rho: ScalarField,
    pub p: ScalarField,
    pub q: ScalarField,
    pub u: VelocityField,
    /// Divergence-free velocity used to transport the density.
    pub u_hat: VelocityField,
    pub sigma: TensorField,
}

/// Optional source added to the momentum right-hand side.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Forcing {
    #[default]
    None,
    /// Uniform force per unit volume.
    Uniform { fx: f64, fy: f64 },
    /// Gravity acting on the updated density, `rho g`.
    Buoyancy { gx: f64, gy: f64 },
    /// Arbitrary fixed face field.
    Field(VelocityField),
}

impl Forcing {
    fn evaluate(&self, rho_new: &ScalarField) -> Option<VelocityField> {
        let g = rho_new.grid;
        match self {
            Forcing::None => None,
            Forcing::Uniform { fx, fy } => Some(VelocityField::from_fn(&g, |_, _| *fx, |_, _| *fy)),
            Forcing::Buoyancy { gx, gy } => {
                let rf = face_density(rho_new);
                let mut f = VelocityField {
                    grid: g,
                    ux: rf.ux.iter().map(|r| r * gx).collect(),
                    uy: rf.uy.iter().map(|r| r * gy).collect(),
                };
                f.enforce_boundary();
                Some(f)
            }
            Forcing::Field(f) => Some(f.clone()),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Forcing::None)
    }
}

/// Tolerances for the three linear systems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub transport: SolverConfig,
    pub momentum: SolverConfig,
    pub poisson: SolverConfig,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            transport: SolverConfig::new(1e-13, 1e-15, 10_000).expect("valid"),
            momentum: SolverConfig::new(1e-12, 1e-15, 10_000).expect("valid"),
            poisson: SolverConfig::new(1e-12, 1e-15, 20_000).expect("valid"),
        }
    }
}

/// Energy terms of one time level.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyTerms {
    /// `||sqrt(rho) u||^2`.
    pub kinetic: f64,
    /// `dt^2 / rho1 ||grad p||^2`.
    pub pressure_term: f64,
    /// `2 theta / r dt ||sigma||^2`.
    pub sigma_term: f64,
}

impl EnergyTerms {
    pub fn of(state: &SimState, fluid: &FluidParams, scheme: &SchemeParams) -> Self {
        let gp = gradient_to_faces(&state.p);
        let sn = state.sigma.norm_l2();
        let sigma_term = if scheme.r.is_finite() {
            2.0 * scheme.theta / scheme.r * scheme.dt * sn * sn
        } else {
            0.0
        };
        Self {
            kinetic: mass_flux(&state.rho, &state.u).dot(&state.u),
            pressure_term: scheme.dt * scheme.dt / fluid.rho1 * gp.dot(&gp),
            sigma_term,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub n: usize,
    pub t: f64,
    pub fixed_point: FixedPointReport,
    /// `||div u_hat||_inf` after the correction.
    pub div_residual: f64,
    pub transport: SolveStats,
    pub poisson: SolveStats,
    pub rho_min: f64,
    pub rho_max: f64,
    pub mass: f64,
    pub sigma_max: f64,
    pub energy: EnergyTerms,
    /// `dt ||sqrt(2 mu) D u||^2` of this step.
    pub dissipation: f64,
}

/// Receives every step of a run.
pub trait Observer {
    fn observe(&mut self, state: &SimState, report: &StepReport) -> Result<(), Error>;
}

impl<F: FnMut(&SimState, &StepReport) -> Result<(), Error>> Observer for F {
    fn observe(&mut self, state: &SimState, report: &StepReport) -> Result<(), Error> {
        self(state, report)
    }
}

#[derive(Debug, Clone)]
pub struct Integrator {
    pub fluid: FluidParams,
    pub scheme: SchemeParams,
    pub solvers: SolverSettings,
    pub forcing: Forcing,
}

impl Integrator {
    pub fn new(fluid: FluidParams, scheme: SchemeParams) -> Self {
        Self {
            fluid,
            scheme,
            solvers: SolverSettings::default(),
            forcing: Forcing::None,
        }
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn with_solvers(mut self, solvers: SolverSettings) -> Self {
        self.solvers = solvers;
        self
    }

    /// Builds the state at `t = 0` with `q = p = 0` and `sigma = 0`. A
    /// velocity that is not discretely divergence-free is projected once.
    pub fn initialize(&self, rho0: ScalarField, u0: VelocityField) -> Result<SimState, Error> {
        if let Err((cell, value)) = self.fluid.density_within(&rho0, 0.0) {
            return Err(Error::InvalidInitialDensity {
                cell,
                value,
                lower: self.fluid.rho1,
                upper: self.fluid.rho2,
            });
        }
        if !u0.all_finite() {
            return Err(Error::NonFinite("initial velocity"));
        }
        let g = rho0.grid;
        let mut u = u0;
        u.enforce_boundary();
        let tol = 1e-12 * (u.max_abs() / g.min_spacing()).max(f64::MIN_POSITIVE);
        if divergence(&u).max_abs() > tol {
            let (q, _) = pressure_increment(&u, self.fluid.rho1, 1.0, &self.solvers.poisson)?;
            u = correct_velocity(&u, &q, self.fluid.rho1, 1.0);
        }
        Ok(SimState {
            t: 0.0,
            n: 0,
            rho: rho0,
            p: ScalarField::zeros(&g),
            q: ScalarField::zeros(&g),
            u_hat: u.clone(),
            u,
            sigma: TensorField::zeros(&g),
        })
    }

    pub fn energy(&self, state: &SimState) -> EnergyTerms {
        EnergyTerms::of(state, &self.fluid, &self.scheme)
    }

    /// One full step: transport, coefficients, coupled momentum, pressure.
    pub fn step(&self, state: &SimState) -> Result<(SimState, StepReport), Error> {
        let dt = self.scheme.dt;
        let (rho, transport) = advect_density(
            &state.rho,
            &state.u_hat,
            dt,
            &self.fluid,
            &self.solvers.transport,
        )?;
        let (mu, alpha) = eval_coefficients(&rho, &self.fluid);
        let forcing = self.forcing.evaluate(&rho);
        let (u, sigma, fixed_point) = fixed_point_solve(
            state,
            &rho,
            &mu,
            &alpha,
            forcing.as_ref(),
            &self.scheme,
            &self.solvers.momentum,
        )?;
        if !u.all_finite() {
            return Err(Error::NonFinite("velocity"));
        }
        let (q, poisson) = pressure_increment(&u, self.fluid.rho1, dt, &self.solvers.poisson)?;
        let p = accumulate_pressure(&state.p, &q);
        let u_hat = correct_velocity(&u, &q, self.fluid.rho1, dt);
        let dissipation = dt * ViscousOperator::new(&mu).dissipation(&u);

        let next = SimState {
            t: state.t + dt,
            n: state.n + 1,
            rho,
            p,
            q,
            u,
            u_hat,
            sigma,
        };
        if let Err((cell, value)) = self.fluid.density_within(&next.rho, DENSITY_BOUND_TOL) {
            return Err(Error::MaxPrincipleViolation {
                cell,
                value,
                lower: self.fluid.rho1,
                upper: self.fluid.rho2,
            });
        }
        let report = StepReport {
            n: next.n,
            t: next.t,
            fixed_point,
            div_residual: divergence(&next.u_hat).max_abs(),
            transport,
            poisson,
            rho_min: next.rho.min(),
            rho_max: next.rho.max(),
            mass: next.rho.integral(),
            sigma_max: next.sigma.max_invariant(),
            energy: self.energy(&next),
            dissipation,
        };
        Ok((next, report))
    }

    /// Number of steps needed to reach `t_end` (rounded to the nearest step).
    pub fn steps_for(&self, t_end: f64) -> usize {
        (t_end / self.scheme.dt).round().max(0.0) as usize
    }

    /// Repeats [`Integrator::step`] until `t_end`, handing every step to the observer.
    pub fn run(
        &self,
        state0: SimState,
        t_end: f64,
        observer: &mut dyn Observer,
    ) -> Result<SimState, Error> {
        if !(t_end > 0.0) {
            return Err(Error::InvalidScheme(format!(
                "t_end must be positive, got {t_end}"
            )));
        }
        let mut state = state0;
        for _ in 0..self.steps_for(t_end) {
            let (next, report) = self.step(&state)?;
            observer.observe(&next, &report)?;
            state = next;
        }
        Ok(state)
    }

    /// Runs a fixed number of steps, discarding reports.
    pub fn advance(&self, state0: SimState, steps: usize) -> Result<SimState, Error> {
        let mut state = state0;
        for _ in 0..steps {
            state = self.step(&state)?.0;
        }
        Ok(state)
    }
}
