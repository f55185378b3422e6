//! Velocity prediction coupled with the plastic tensor.
//!
//! For a fixed plastic-tensor iterate `s_k` the velocity solves the linear
//! elliptic problem
//!
//! ```text
//! (1/dt) 1/2 (rho' + rho) u + B(rho' u_hat, u) - Div(2 mu' D u)
//!     = (1/dt) rho u_old - grad(p + q) + Div(alpha' s_k) + f
//! ```
//!
//! and the tensor is then updated by the relaxed projection
//! `s_{k+1} = P(s_k + r alpha' D u + theta (s_n - s_k))`. The sweep is
//! repeated until successive tensors agree.

use crate::grid::{
    add_skew_convection, face_density, gradient_to_faces, mass_flux, strain_rate,
    tensor_divergence, ScalarField, TensorField, VelocityField, ViscousOperator,
};
use crate::integrator::SimState;
use crate::solvers::{bicgstab_solve, SolveStats, SolverConfig};
use crate::tensor::{project_lambda, SymTensor2};
use crate::transport::FluidParams;
use crate::Error;

/// Relative slack on the fixed-point admissibility inequality, so that a
/// saturating `r` computed in floating point is not rejected.
const ADMISSIBILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeParams {
    pub dt: f64,
    pub r: f64,
    pub theta: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub stability_mode: bool,
}

impl SchemeParams {
    /// Validates the fixed-point admissibility `4 theta + r alpha2^2 / mu1 <= 4`
    /// and, in stability mode, `theta <= 1/2` and `r alpha2^2 / mu1 <= 3/2`.
    pub fn new(
        dt: f64,
        r: f64,
        theta: f64,
        fp_tol: f64,
        fp_max_iter: usize,
        stability_mode: bool,
        fluid: &FluidParams,
    ) -> Result<Self, Error> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidScheme(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidScheme(format!("r must be positive, got {r}")));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidScheme(format!(
                "theta must lie in (0, 1), got {theta}"
            )));
        }
        if !(fp_tol > 0.0) || fp_max_iter == 0 {
            return Err(Error::InvalidScheme(
                "fp_tol must be positive and fp_max_iter >= 1".into(),
            ));
        }
        let load = r * fluid.alpha2 * fluid.alpha2 / fluid.mu1;
        if 4.0 * theta + load > 4.0 * (1.0 + ADMISSIBILITY_SLACK) {
            return Err(Error::InvalidScheme(format!(
                "fixed-point admissibility 4θ + r α₂²/μ₁ ≤ 4 violated: 4·{theta} + {load} = {}",
                4.0 * theta + load
            )));
        }
        if stability_mode {
            if theta > 0.5 {
                return Err(Error::InvalidScheme(format!(
                    "stability requires theta ≤ 1/2, got {theta}"
                )));
            }
            if load > 1.5 * (1.0 + ADMISSIBILITY_SLACK) {
                return Err(Error::InvalidScheme(format!(
                    "stability requires r α₂²/μ₁ ≤ 3/2, got {load}"
                )));
            }
        }
        Ok(Self {
            dt,
            r,
            theta,
            fp_tol,
            fp_max_iter,
            stability_mode,
        })
    }

    /// The largest `r` allowed by `4 theta + r alpha2^2 / mu1 <= 4`.
    pub fn saturating_r(theta: f64, fluid: &FluidParams) -> f64 {
        if fluid.alpha2 == 0.0 {
            f64::INFINITY
        } else {
            4.0 * (1.0 - theta) * fluid.mu1 / (fluid.alpha2 * fluid.alpha2)
        }
    }

    /// Default stopping tolerance `1e-8 sqrt(area)`.
    pub fn default_fp_tol(area: f64) -> f64 {
        1e-8 * area.sqrt()
    }

    /// True when the energy-stability hypotheses hold for `fluid`.
    pub fn satisfies_stability(&self, fluid: &FluidParams) -> bool {
        self.theta <= 0.5
            && self.r * fluid.alpha2 * fluid.alpha2 / fluid.mu1 <= 1.5 * (1.0 + ADMISSIBILITY_SLACK)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FixedPointReport {
    pub iterations: usize,
    /// `||s_{k+1} - s_k||` after every sweep.
    pub residual_history: Vec<f64>,
    /// Geometric mean of consecutive residual ratios over residuals above
    /// `10 fp_tol`; present only after at least three sweeps.
    pub observed_ratio: Option<f64>,
    /// Iteration cap reached with the residual above `fp_tol`.
    pub stalled: bool,
    /// Krylov iterations spent on all velocity solves of this step.
    pub linear_iterations: usize,
}

impl FixedPointReport {
    /// Consecutive ratios `res[k+1] / res[k]` restricted to `res[k] > floor`.
    pub fn ratios_above(&self, floor: f64) -> Vec<f64> {
        self.residual_history
            .windows(2)
            .filter(|w| w[0] > floor && w[1] > floor)
            .map(|w| w[1] / w[0])
            .collect()
    }

    fn finish(&mut self, fp_tol: f64) {
        self.iterations = self.residual_history.len();
        if self.iterations >= 3 {
            let ratios = self.ratios_above(10.0 * fp_tol);
            if !ratios.is_empty() {
                let mean_log = ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64;
                self.observed_ratio = Some(mean_log.exp());
            }
        }
    }
}

/// `(1/dt) rho_old u_old - grad(p + q) + Div(alpha s)`.
pub fn assemble_momentum_rhs(
    rho_old: &ScalarField,
    u_old: &VelocityField,
    p_old: &ScalarField,
    q_old: &ScalarField,
    alpha_new: &ScalarField,
    sigma_iter: &TensorField,
    dt: f64,
) -> VelocityField {
    let mut rhs = explicit_rhs(rho_old, u_old, p_old, q_old, dt, None);
    rhs.axpy(1.0, &tensor_divergence(&sigma_iter.scaled_by(alpha_new)));
    rhs
}

fn explicit_rhs(
    rho_old: &ScalarField,
    u_old: &VelocityField,
    p_old: &ScalarField,
    q_old: &ScalarField,
    dt: f64,
    forcing: Option<&VelocityField>,
) -> VelocityField {
    let mut rhs = mass_flux(rho_old, u_old).scaled(1.0 / dt);
    rhs.axpy(-1.0, &gradient_to_faces(&p_old.add(q_old)));
    if let Some(f) = forcing {
        rhs.axpy(1.0, f);
    }
    rhs.enforce_boundary();
    rhs
}

/// The linear operator of the velocity prediction.
pub struct MomentumOperator {
    mass: VelocityField,
    flux: VelocityField,
    viscous: ViscousOperator,
    diag: Vec<f64>,
}

impl MomentumOperator {
    pub fn new(
        rho_new: &ScalarField,
        rho_old: &ScalarField,
        mu_new: &ScalarField,
        u_hat_old: &VelocityField,
        dt: f64,
    ) -> Self {
        let mass = face_density(&rho_new.add(rho_old)).scaled(0.5 / dt);
        let viscous = ViscousOperator::new(mu_new);
        let mut d = viscous.diagonal();
        d.axpy(1.0, &mass);
        Self {
            flux: mass_flux(rho_new, u_hat_old),
            diag: d.pack(),
            mass,
            viscous,
        }
    }

    pub fn apply_into(&self, v: &VelocityField, out: &mut VelocityField) {
        self.viscous.apply_into(v, out);
        add_skew_convection(&self.flux, v, out);
        for (o, (m, x)) in out.ux.iter_mut().zip(self.mass.ux.iter().zip(&v.ux)) {
            *o += m * x;
        }
        for (o, (m, x)) in out.uy.iter_mut().zip(self.mass.uy.iter().zip(&v.uy)) {
            *o += m * x;
        }
        out.enforce_boundary();
    }

    pub fn apply(&self, v: &VelocityField) -> VelocityField {
        let mut out = VelocityField::zeros(&v.grid);
        self.apply_into(v, &mut out);
        out
    }

    /// Diagonal on the unknowns, in packed order.
    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Solves `A u = rhs`, starting from `guess`.
    pub fn solve(
        &self,
        rhs: &VelocityField,
        guess: &VelocityField,
        cfg: &SolverConfig,
    ) -> Result<(VelocityField, SolveStats), Error> {
        let g = rhs.grid;
        let b = rhs.pack();
        let mut vin = VelocityField::zeros(&g);
        let mut vout = VelocityField::zeros(&g);
        let apply = |x: &[f64], y: &mut [f64]| {
            vin.unpack_into(x);
            self.apply_into(&vin, &mut vout);
            vout.pack_into(y);
        };
        let (x, stats) = bicgstab_solve(apply, &b, Some(&guess.pack()), Some(&self.diag), cfg)
            .map_err(Error::solver("momentum"))?;
        Ok((VelocityField::unpack(&g, &x), stats))
    }
}

/// `A v` for the velocity-prediction operator.
pub fn apply_momentum_operator(
    v: &VelocityField,
    rho_new: &ScalarField,
    rho_old: &ScalarField,
    mu_new: &ScalarField,
    u_hat_old: &VelocityField,
    dt: f64,
) -> VelocityField {
    MomentumOperator::new(rho_new, rho_old, mu_new, u_hat_old, dt).apply(v)
}

/// One relaxed projection sweep on every cell.
pub fn project_sweep(
    sigma_iter: &TensorField,
    sigma_old: &TensorField,
    du: &TensorField,
    alpha: &ScalarField,
    r: f64,
    theta: f64,
) -> TensorField {
    let values = sigma_iter
        .values
        .iter()
        .zip(&sigma_old.values)
        .zip(du.values.iter().zip(&alpha.values))
        .map(|((sk, sn), (d, &a))| {
            let target: SymTensor2 = *sk + (r * a) * *d + theta * (*sn - *sk);
            project_lambda(&target).inner()
        })
        .collect();
    TensorField {
        grid: sigma_iter.grid,
        values,
    }
}

/// Fixed-point iteration of the coupled velocity / plastic-tensor step.
///
/// Returns the last velocity iterate, the last tensor iterate and the report.
/// Hitting the cap is not an error; the report is flagged as stalled.
#[allow(clippy::too_many_arguments)]
pub fn fixed_point_solve(
    state: &SimState,
    rho_new: &ScalarField,
    mu_new: &ScalarField,
    alpha_new: &ScalarField,
    forcing: Option<&VelocityField>,
    params: &SchemeParams,
    cfg: &SolverConfig,
) -> Result<(VelocityField, TensorField, FixedPointReport), Error> {
    let op = MomentumOperator::new(rho_new, &state.rho, mu_new, &state.u_hat, params.dt);
    let base = explicit_rhs(&state.rho, &state.u, &state.p, &state.q, params.dt, forcing);
    let plastic = alpha_new.values.iter().any(|&a| a != 0.0);

    let mut report = FixedPointReport::default();
    let mut sigma = state.sigma.clone();
    let mut u = state.u.clone();
    loop {
        let mut rhs = base.clone();
        if plastic {
            rhs.axpy(1.0, &tensor_divergence(&sigma.scaled_by(alpha_new)));
        }
        let (u_k, stats) = op.solve(&rhs, &u, cfg)?;
        report.linear_iterations += stats.iterations;
        u = u_k;
        let next = project_sweep(
            &sigma,
            &state.sigma,
            &strain_rate(&u),
            alpha_new,
            params.r,
            params.theta,
        );
        let res = next.sub(&sigma).norm_l2();
        if !res.is_finite() {
            return Err(Error::NonFinite("plastic tensor"));
        }
        report.residual_history.push(res);
        sigma = next;
        if res <= params.fp_tol {
            break;
        }
        if report.residual_history.len() >= params.fp_max_iter {
            report.stalled = true;
            log::warn!(
                "fixed point stalled after {} sweeps (residual {:.3e} > {:.3e})",
                params.fp_max_iter,
                res,
                params.fp_tol
            );
            break;
        }
    }
    report.finish(params.fp_tol);
    Ok((u, sigma, report))
}
