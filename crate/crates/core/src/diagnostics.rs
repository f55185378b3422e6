//! Energy bookkeeping, temporal self-convergence, plug detection, the
//! analytic channel profile and randomized structural checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{
    divergence, gradient_to_faces, skew_advection, strain_rate, tensor_divergence, MacGrid,
    ScalarField, TensorField, VelocityField,
};
use crate::integrator::{EnergyTerms, Integrator, SimState, StepReport};
use crate::momentum::SchemeParams;
use crate::tensor::SymTensor2;
use crate::transport::FluidParams;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LedgerRow {
    pub n: usize,
    pub t: f64,
    pub kinetic: f64,
    pub pressure_term: f64,
    pub sigma_term: f64,
    pub dissipation_cum: f64,
    pub total: f64,
}

/// Running record of the discrete energy of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyLedger {
    pub rows: Vec<LedgerRow>,
}

impl EnergyLedger {
    pub fn new(initial: EnergyTerms) -> Self {
        let total = initial.kinetic + initial.pressure_term + initial.sigma_term;
        Self {
            rows: vec![LedgerRow {
                n: 0,
                t: 0.0,
                kinetic: initial.kinetic,
                pressure_term: initial.pressure_term,
                sigma_term: initial.sigma_term,
                dissipation_cum: 0.0,
                total,
            }],
        }
    }

    pub fn for_state(integrator: &Integrator, state: &SimState) -> Self {
        let mut l = Self::new(integrator.energy(state));
        l.rows[0].n = state.n;
        l.rows[0].t = state.t;
        l
    }

    pub fn record(&mut self, report: &StepReport) -> LedgerRow {
        let prev = self.rows.last().map_or(0.0, |r| r.dissipation_cum);
        let e = report.energy;
        let dissipation_cum = prev + report.dissipation;
        let row = LedgerRow {
            n: report.n,
            t: report.t,
            kinetic: e.kinetic,
            pressure_term: e.pressure_term,
            sigma_term: e.sigma_term,
            dissipation_cum,
            total: e.kinetic + e.pressure_term + e.sigma_term + dissipation_cum,
        };
        self.rows.push(row);
        row
    }

    pub fn initial_total(&self) -> f64 {
        self.rows.first().map_or(0.0, |r| r.total)
    }

    /// Largest single-step increase of the total.
    pub fn max_increase(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|w| w[1].total - w[0].total)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Checks `total(n+1) <= total(n) + tol_rel * total(0)` for every step.
    /// The bound is only claimed when the stability hypotheses hold.
    pub fn check_monotone(
        &self,
        fluid: &FluidParams,
        scheme: &SchemeParams,
        tol_rel: f64,
    ) -> Result<Option<usize>, Error> {
        if !scheme.satisfies_stability(fluid) {
            return Err(Error::HypothesisViolation(format!(
                "energy bound needs theta ≤ 1/2 and r α₂²/μ₁ ≤ 3/2 (theta = {}, r α₂²/μ₁ = {})",
                scheme.theta,
                scheme.r * fluid.alpha2 * fluid.alpha2 / fluid.mu1
            )));
        }
        let tol = tol_rel * self.initial_total();
        Ok(self
            .rows
            .windows(2)
            .find(|w| w[1].total > w[0].total + tol)
            .map(|w| w[1].n))
    }
}

/// How `theta` depends on the time step in a convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaRule {
    EqualsDt,
    Fixed(f64),
}

impl ThetaRule {
    pub fn theta(&self, dt: f64) -> f64 {
        match self {
            ThetaRule::EqualsDt => dt,
            ThetaRule::Fixed(t) => *t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub theta: f64,
    pub error_u: f64,
    pub error_rho: f64,
    /// Largest fixed-point sweep count over the run.
    pub max_fp_iterations: usize,
    pub stalled_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub order_u: f64,
    pub order_rho: f64,
    pub reference_stalled_steps: usize,
}

impl ConvergenceTable {
    /// True when each halving of `dt` strictly decreases both errors.
    pub fn errors_decrease(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].error_u < w[0].error_u && w[1].error_rho < w[0].error_rho)
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

struct RunSummary {
    state: SimState,
    max_fp_iterations: usize,
    stalled_steps: usize,
}

fn run_to(integrator: &Integrator, state: SimState, t_end: f64) -> Result<RunSummary, Error> {
    let mut max_fp = 0;
    let mut stalled = 0;
    let state = integrator.run(state, t_end, &mut |_: &SimState, rep: &StepReport| {
        max_fp = max_fp.max(rep.fixed_point.iterations);
        stalled += rep.fixed_point.stalled as usize;
        Ok(())
    })?;
    Ok(RunSummary {
        state,
        max_fp_iterations: max_fp,
        stalled_steps: stalled,
    })
}

/// Self-convergence in time against a fine reference run on the same grid.
///
/// `setup(dt, theta)` must return the integrator and initial state for one
/// run; only `dt` and `theta` may differ between runs.
pub fn temporal_convergence_study(
    setup: impl Fn(f64, f64) -> Result<(Integrator, SimState), Error>,
    dt_list: &[f64],
    dt_ref: f64,
    t_end: f64,
    theta_rule: ThetaRule,
) -> Result<ConvergenceTable, Error> {
    if dt_list.len() < 2 {
        return Err(Error::InvalidScheme("need at least two time steps".into()));
    }
    let dt_min = dt_list.iter().cloned().fold(f64::INFINITY, f64::min);
    if dt_ref > dt_min / 16.0 * (1.0 + 1e-12) {
        return Err(Error::InvalidScheme(format!(
            "reference step {dt_ref} must be at most min(dt)/16 = {}",
            dt_min / 16.0
        )));
    }
    for &dt in dt_list.iter().chain(std::iter::once(&dt_ref)) {
        let k = t_end / dt;
        if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
            return Err(Error::InvalidScheme(format!(
                "t_end = {t_end} is not a multiple of dt = {dt}"
            )));
        }
    }

    let (it_ref, s_ref) = setup(dt_ref, theta_rule.theta(dt_ref))?;
    let reference = run_to(&it_ref, s_ref, t_end)?;
    log::info!(
        "reference run dt = {dt_ref}: max fixed-point sweeps {}, stalled steps {}",
        reference.max_fp_iterations,
        reference.stalled_steps
    );

    let mut rows = Vec::with_capacity(dt_list.len());
    for &dt in dt_list {
        let theta = theta_rule.theta(dt);
        let (it, s0) = setup(dt, theta)?;
        let run = run_to(&it, s0, t_end)?;
        let row = ConvergenceRow {
            dt,
            theta,
            error_u: run.state.u.sub(&reference.state.u).norm_l2(),
            error_rho: run.state.rho.sub(&reference.state.rho).norm_l2(),
            max_fp_iterations: run.max_fp_iterations,
            stalled_steps: run.stalled_steps,
        };
        log::info!(
            "dt = {dt}: |u - u_ref| = {:.4e}, |rho - rho_ref| = {:.4e}",
            row.error_u,
            row.error_rho
        );
        rows.push(row);
    }
    let dts: Vec<f64> = rows.iter().map(|r| r.dt).collect();
    let eu: Vec<f64> = rows
        .iter()
        .map(|r| r.error_u.max(f64::MIN_POSITIVE))
        .collect();
    let er: Vec<f64> = rows
        .iter()
        .map(|r| r.error_rho.max(f64::MIN_POSITIVE))
        .collect();
    Ok(ConvergenceTable {
        order_u: log_log_slope(&dts, &eu),
        order_rho: log_log_slope(&dts, &er),
        rows,
        reference_stalled_steps: reference.stalled_steps,
    })
}

/// Steady plane Bingham flow between walls at `y = -h` and `y = h` under a
/// uniform drive `g` (force per unit volume).
///
/// In simple shear `|D u| = |u'| / 2` and the plastic tensor's shear entry is
/// `sign(u')`, so the yield shear stress is `alpha` and the momentum balance
/// `mu u' + alpha sign(u') = -g y` integrates to the profile below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoiseuilleProfile {
    pub h: f64,
    pub g: f64,
    pub mu: f64,
    pub alpha: f64,
    /// Half-width of the rigid core, `alpha / g`.
    pub y0: f64,
    /// False when `g h <= alpha`; the profile is then identically zero.
    pub flowing: bool,
}

pub fn poiseuille_reference(h: f64, g: f64, mu: f64, alpha: f64) -> PoiseuilleProfile {
    let flowing = g * h > alpha;
    PoiseuilleProfile {
        h,
        g,
        mu,
        alpha,
        y0: if g > 0.0 { (alpha / g).min(h) } else { h },
        flowing,
    }
}

impl PoiseuilleProfile {
    /// Velocity at signed distance `y` from the centre line.
    pub fn velocity(&self, y: f64) -> f64 {
        if !self.flowing {
            return 0.0;
        }
        let a = y.abs().min(self.h);
        if a >= self.y0 {
            self.g / (2.0 * self.mu) * (self.h * self.h - a * a)
                - self.alpha / self.mu * (self.h - a)
        } else {
            self.g / (2.0 * self.mu) * (self.h - self.y0).powi(2)
        }
    }

    pub fn plug_speed(&self) -> f64 {
        self.velocity(0.0)
    }
}

/// Cells classified by the plastic tensor: plug where `|sigma| < 1 - tol`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlugMask {
    pub grid: MacGrid,
    pub plug: Vec<bool>,
}

impl PlugMask {
    pub fn is_plug(&self, i: usize, j: usize) -> bool {
        self.plug[self.grid.cell(i, j)]
    }

    pub fn plug_count(&self) -> usize {
        self.plug.iter().filter(|p| **p).count()
    }
}

pub const DEFAULT_TOL_PLUG: f64 = 1e-3;

pub fn plug_mask(sigma: &TensorField, tol_plug: f64) -> PlugMask {
    PlugMask {
        grid: sigma.grid,
        plug: sigma
            .values
            .iter()
            .map(|s| s.second_invariant() < 1.0 - tol_plug)
            .collect(),
    }
}

/// Outcome of one randomized identity check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub trials: usize,
    pub worst_relative: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst_relative <= self.tolerance
    }
}

fn random_velocity(g: &MacGrid, rng: &mut ChaCha8Rng) -> VelocityField {
    let mut u = VelocityField::zeros(g);
    u.ux.iter_mut()
        .chain(u.uy.iter_mut())
        .for_each(|v| *v = rng.gen_range(-1.0..1.0));
    u.enforce_boundary();
    u
}

fn random_grid(rng: &mut ChaCha8Rng) -> MacGrid {
    let nx = rng.gen_range(4..14);
    let ny = rng.gen_range(4..14);
    let lx = rng.gen_range(0.5..2.0);
    let ly = rng.gen_range(0.5..2.0);
    if rng.gen_bool(0.3) {
        MacGrid::periodic_channel(nx, ny, lx, ly).expect("valid grid")
    } else {
        MacGrid::new(nx, ny, lx, ly).expect("valid grid")
    }
}

/// Randomized checks of the discrete identities the scheme relies on:
/// skew-symmetric convection, gradient/divergence and strain/tensor
/// divergence adjointness.
pub fn structural_checks(seed: u64, trials: usize, tolerance: f64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut skew = 0.0f64;
    let mut graddiv = 0.0f64;
    let mut strain = 0.0f64;
    for _ in 0..trials {
        let g = random_grid(&mut rng);
        let rho = ScalarField::from_values(
            &g,
            (0..g.cell_count())
                .map(|_| rng.gen_range(1.0..3.0))
                .collect(),
        )
        .expect("sizes match");
        let w = random_velocity(&g, &mut rng);
        let v = random_velocity(&g, &mut rng);
        let b = skew_advection(&rho, &w, &v);
        skew = skew.max(b.dot(&v).abs() / (b.norm_l2() * v.norm_l2()));

        let s = ScalarField::from_values(
            &g,
            (0..g.cell_count())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
        .expect("sizes match");
        let gs = gradient_to_faces(&s);
        let dv = divergence(&v);
        let (a, c) = (gs.dot(&v), s.dot(&dv));
        graddiv =
            graddiv.max((a + c).abs() / (gs.norm_l2() * v.norm_l2() + s.norm_l2() * dv.norm_l2()));

        let mut t = TensorField::zeros(&g);
        for x in &mut t.values {
            *x = SymTensor2::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
        }
        let div_t = tensor_divergence(&t);
        let du = strain_rate(&v);
        let (a, c) = (div_t.dot(&v), t.dot(&du));
        let scale = div_t.norm_l2() * v.norm_l2() + t.dot(&t).sqrt() * du.dot(&du).sqrt();
        strain = strain.max((a + c).abs() / scale);
    }
    vec![
        CheckOutcome {
            name: "skew-symmetric convection",
            trials,
            worst_relative: skew,
            tolerance,
        },
        CheckOutcome {
            name: "gradient/divergence adjoint",
            trials,
            worst_relative: graddiv,
            tolerance,
        },
        CheckOutcome {
            name: "strain/tensor-divergence adjoint",
            trials,
            worst_relative: strain,
            tolerance,
        },
    ]
}
