//! Implicit upwind transport of the density by a solenoidal face velocity,
//! and evaluation of the density-dependent viscosity and yield stress.

use std::fmt;
use std::sync::Arc;

use crate::grid::{ScalarField, VelocityField};
use crate::solvers::{bicgstab_solve, SolveStats, SolverConfig};
use crate::Error;

/// Slack allowed on the density bounds after a transport step.
pub const DENSITY_BOUND_TOL: f64 = 1e-12;

/// How `mu(rho)` and `alpha(rho)` are obtained.
#[derive(Clone)]
pub enum CoefficientLaw {
    /// Linear interpolation between `(rho1, mu1/alpha1)` and `(rho2, mu2/alpha2)`.
    Affine,
    /// Piecewise-linear table, `rho` strictly increasing and covering `[rho1, rho2]`.
    Tabulated {
        rho: Vec<f64>,
        mu: Vec<f64>,
        alpha: Vec<f64>,
    },
    /// Arbitrary user maps.
    Custom {
        mu: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        alpha: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for CoefficientLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientLaw::Affine => write!(f, "Affine"),
            CoefficientLaw::Tabulated { rho, .. } => write!(f, "Tabulated({} points)", rho.len()),
            CoefficientLaw::Custom { .. } => write!(f, "Custom"),
        }
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    for k in 1..xs.len() {
        if x <= xs[k] {
            let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
            return ys[k - 1] + t * (ys[k] - ys[k - 1]);
        }
    }
    ys[ys.len() - 1]
}

fn max_slope(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| ((y[1] - y[0]) / (x[1] - x[0])).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct FluidParams {
    pub rho1: f64,
    pub rho2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub law: CoefficientLaw,
    /// Bounds on `|mu'|` and `|alpha'|` over `[rho1, rho2]` (sampled for custom laws).
    pub lipschitz_mu: f64,
    pub lipschitz_alpha: f64,
}

impl FluidParams {
    pub fn new(
        rho1: f64,
        rho2: f64,
        mu1: f64,
        mu2: f64,
        alpha1: f64,
        alpha2: f64,
        law: CoefficientLaw,
    ) -> Result<Self, Error> {
        if !(rho1 > 0.0 && rho1 <= rho2) {
            return Err(Error::InvalidFluid(format!(
                "need 0 < rho1 <= rho2, got {rho1}, {rho2}"
            )));
        }
        if !(mu1 > 0.0 && mu1 <= mu2) {
            return Err(Error::InvalidFluid(format!(
                "need 0 < mu1 <= mu2, got {mu1}, {mu2}"
            )));
        }
        if !(alpha1 >= 0.0 && alpha1 <= alpha2) {
            return Err(Error::InvalidFluid(format!(
                "need 0 <= alpha1 <= alpha2, got {alpha1}, {alpha2}"
            )));
        }
        if let CoefficientLaw::Tabulated { rho, mu, alpha } = &law {
            if rho.len() < 2 || rho.len() != mu.len() || rho.len() != alpha.len() {
                return Err(Error::InvalidFluid(
                    "tables need at least two matching rows".into(),
                ));
            }
            if rho.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidFluid(
                    "table densities must increase strictly".into(),
                ));
            }
            if rho[0] > rho1 || rho[rho.len() - 1] < rho2 {
                return Err(Error::InvalidFluid("table must cover [rho1, rho2]".into()));
            }
        }
        let mut p = Self {
            rho1,
            rho2,
            mu1,
            mu2,
            alpha1,
            alpha2,
            law,
            lipschitz_mu: 0.0,
            lipschitz_alpha: 0.0,
        };
        let (lm, la) = match &p.law {
            CoefficientLaw::Affine if rho2 > rho1 => (
                (mu2 - mu1) / (rho2 - rho1),
                (alpha2 - alpha1) / (rho2 - rho1),
            ),
            CoefficientLaw::Affine => (0.0, 0.0),
            CoefficientLaw::Tabulated { rho, mu, alpha } => {
                (max_slope(rho, mu), max_slope(rho, alpha))
            }
            CoefficientLaw::Custom { .. } => {
                let n = 64;
                let xs: Vec<f64> = (0..=n)
                    .map(|k| rho1 + (rho2 - rho1) * k as f64 / n as f64)
                    .collect();
                let mus: Vec<f64> = xs.iter().map(|&r| p.mu(r)).collect();
                let als: Vec<f64> = xs.iter().map(|&r| p.alpha(r)).collect();
                if rho2 > rho1 {
                    (max_slope(&xs, &mus), max_slope(&xs, &als))
                } else {
                    (0.0, 0.0)
                }
            }
        };
        p.lipschitz_mu = lm;
        p.lipschitz_alpha = la;
        p.check_bounds_by_sampling()?;
        Ok(p)
    }

    /// Single-fluid parameters: constant density, viscosity and yield stress.
    pub fn uniform(rho: f64, mu: f64, alpha: f64) -> Result<Self, Error> {
        Self::new(rho, rho, mu, mu, alpha, alpha, CoefficientLaw::Affine)
    }

    /// Two-fluid parameters with the affine law.
    pub fn affine(rho: (f64, f64), mu: (f64, f64), alpha: (f64, f64)) -> Result<Self, Error> {
        Self::new(
            rho.0,
            rho.1,
            mu.0,
            mu.1,
            alpha.0,
            alpha.1,
            CoefficientLaw::Affine,
        )
    }

    fn fraction(&self, rho: f64) -> f64 {
        if self.rho2 > self.rho1 {
            (rho - self.rho1) / (self.rho2 - self.rho1)
        } else {
            0.0
        }
    }

    pub fn mu(&self, rho: f64) -> f64 {
        match &self.law {
            CoefficientLaw::Affine => self.mu1 + (self.mu2 - self.mu1) * self.fraction(rho),
            CoefficientLaw::Tabulated { rho: xs, mu, .. } => interpolate(xs, mu, rho),
            CoefficientLaw::Custom { mu, .. } => mu(rho),
        }
    }

    pub fn alpha(&self, rho: f64) -> f64 {
        match &self.law {
            CoefficientLaw::Affine => {
                self.alpha1 + (self.alpha2 - self.alpha1) * self.fraction(rho)
            }
            CoefficientLaw::Tabulated { rho: xs, alpha, .. } => interpolate(xs, alpha, rho),
            CoefficientLaw::Custom { alpha, .. } => alpha(rho),
        }
    }

    fn check_bounds_by_sampling(&self) -> Result<(), Error> {
        let n = 100;
        let slack = 1e-12;
        for k in 0..=n {
            let rho = self.rho1 + (self.rho2 - self.rho1) * k as f64 / n as f64;
            let (m, a) = (self.mu(rho), self.alpha(rho));
            if !(m >= self.mu1 - slack * self.mu2 && m <= self.mu2 * (1.0 + slack)) {
                return Err(Error::InvalidFluid(format!(
                    "mu({rho}) = {m} leaves [{}, {}]",
                    self.mu1, self.mu2
                )));
            }
            if !(a >= self.alpha1 - slack * self.alpha2.max(1.0)
                && a <= self.alpha2 + slack * self.alpha2.max(1.0))
            {
                return Err(Error::InvalidFluid(format!(
                    "alpha({rho}) = {a} leaves [{}, {}]",
                    self.alpha1, self.alpha2
                )));
            }
        }
        Ok(())
    }

    /// True when the density satisfies `rho1 - tol <= rho <= rho2 + tol`.
    pub fn density_within(&self, rho: &ScalarField, tol: f64) -> Result<(), (usize, f64)> {
        for (c, &v) in rho.values.iter().enumerate() {
            if !(v >= self.rho1 - tol && v <= self.rho2 + tol) {
                return Err((c, v));
            }
        }
        Ok(())
    }
}

/// Applies `(I + dt U(u)) x` with first-order upwinding in conservative form.
pub struct TransportOperator<'a> {
    u: &'a VelocityField,
    dt: f64,
}

impl<'a> TransportOperator<'a> {
    pub fn new(u: &'a VelocityField, dt: f64) -> Self {
        Self { u, dt }
    }

    /// Adds `dt U(u) x` to `out`.
    fn add_flux_terms(&self, x: &[f64], out: &mut [f64]) {
        let u = self.u;
        let g = u.grid;
        let cx = self.dt / g.hx;
        let cy = self.dt / g.hy;
        for j in 0..g.ny {
            for i in g.xface_columns() {
                let l = g.cell(if i == 0 { g.nx - 1 } else { i - 1 }, j);
                let r = g.cell(i % g.nx, j);
                let f = cx * u.ux[g.xface(i, j)];
                let up = if f > 0.0 { x[l] } else { x[r] };
                out[l] += f * up;
                out[r] -= f * up;
            }
        }
        for j in g.yface_rows() {
            for i in 0..g.nx {
                let b = g.cell(i, j - 1);
                let t = g.cell(i, j);
                let f = cy * u.uy[g.yface(i, j)];
                let up = if f > 0.0 { x[b] } else { x[t] };
                out[b] += f * up;
                out[t] -= f * up;
            }
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        self.add_flux_terms(x, out);
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let u = self.u;
        let g = u.grid;
        let mut d = vec![1.0; g.cell_count()];
        for j in 0..g.ny {
            for i in g.xface_columns() {
                let l = g.cell(if i == 0 { g.nx - 1 } else { i - 1 }, j);
                let r = g.cell(i % g.nx, j);
                let f = self.dt / g.hx * u.ux[g.xface(i, j)];
                if f > 0.0 {
                    d[l] += f;
                } else {
                    d[r] -= f;
                }
            }
        }
        for j in g.yface_rows() {
            for i in 0..g.nx {
                let f = self.dt / g.hy * u.uy[g.yface(i, j)];
                if f > 0.0 {
                    d[g.cell(i, j - 1)] += f;
                } else {
                    d[g.cell(i, j)] -= f;
                }
            }
        }
        d
    }
}

/// One implicit transport step `(I + dt U(u_hat)) rho = rho_prev`.
///
/// The system is solved for the increment `rho - rho_prev`, whose
/// right-hand side vanishes wherever the density is locally uniform, so the
/// solver tolerance acts on the change rather than on the density itself.
pub fn advect_density(
    rho_prev: &ScalarField,
    u_hat: &VelocityField,
    dt: f64,
    fluid: &FluidParams,
    cfg: &SolverConfig,
) -> Result<(ScalarField, SolveStats), Error> {
    let g = rho_prev.grid;
    let op = TransportOperator::new(u_hat, dt);
    let mut rhs = vec![0.0; g.cell_count()];
    op.add_flux_terms(&rho_prev.values, &mut rhs);
    rhs.iter_mut().for_each(|v| *v = -*v);

    let (delta, stats) = if rhs.iter().all(|v| *v == 0.0) {
        (
            vec![0.0; g.cell_count()],
            SolveStats {
                converged: true,
                ..Default::default()
            },
        )
    } else {
        let diag = op.diagonal();
        bicgstab_solve(|x, y| op.apply(x, y), &rhs, None, Some(&diag), cfg)
            .map_err(Error::solver("density transport"))?
    };
    let rho = ScalarField {
        grid: g,
        values: rho_prev
            .values
            .iter()
            .zip(&delta)
            .map(|(r, d)| r + d)
            .collect(),
    };
    if let Err((cell, value)) = fluid.density_within(&rho, DENSITY_BOUND_TOL) {
        return Err(Error::MaxPrincipleViolation {
            cell,
            value,
            lower: fluid.rho1,
            upper: fluid.rho2,
        });
    }
    Ok((rho, stats))
}

/// Pointwise `mu(rho)` and `alpha(rho)`.
pub fn eval_coefficients(rho: &ScalarField, fluid: &FluidParams) -> (ScalarField, ScalarField) {
    (rho.map(|r| fluid.mu(r)), rho.map(|r| fluid.alpha(r)))
}
