//! A complete configured run: output directory, time series, snapshots and
//! invariant monitoring.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::diagnostics::{
    structural_checks, temporal_convergence_study, ConvergenceTable, EnergyLedger, ThetaRule,
};
use crate::integrator::{Integrator, SimState, StepReport};
use crate::momentum::SchemeParams;
use crate::output::{write_snapshot, TimeseriesRow, TimeseriesWriter};
use crate::scenario::{DensityProfile, ScenarioSpec};
use crate::transport::{FluidParams, DENSITY_BOUND_TOL};
use crate::Error;

/// Relative energy slack used when monitoring stability-mode runs.
pub const ENERGY_TOL_REL: f64 = 1e-8;
/// Slack on `|sigma| <= 1`.
pub const SIGMA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub n: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub steps: usize,
    pub final_state: SimState,
    pub ledger: EnergyLedger,
    pub violations: Vec<Violation>,
    pub directory: PathBuf,
}

/// Checks the per-step invariants that are not already hard errors.
pub fn step_violations(
    integrator: &Integrator,
    state: &SimState,
    report: &StepReport,
) -> Vec<String> {
    let mut out = Vec::new();
    if report.sigma_max > 1.0 + SIGMA_TOL {
        out.push(format!("|sigma| = {:.17e} exceeds 1", report.sigma_max));
    }
    if report.fixed_point.stalled {
        out.push(format!(
            "fixed point stalled after {} sweeps (residual {:.3e})",
            report.fixed_point.iterations,
            report
                .fixed_point
                .residual_history
                .last()
                .copied()
                .unwrap_or(f64::NAN)
        ));
    }
    let g = state.rho.grid;
    let h = g.min_spacing();
    let scale = integrator.scheme.dt / integrator.fluid.rho1;
    let bound =
        10.0 * scale * report.poisson.final_residual / h + 1e-13 * (1.0 + state.u.max_abs()) / h;
    if report.div_residual > bound {
        out.push(format!(
            "divergence residual {:.3e} above {:.3e}",
            report.div_residual, bound
        ));
    }
    out
}

/// Runs `cfg`, writing into `directory`: the configuration echo, the time
/// series, periodic snapshots and the final snapshot.
pub fn run_case(cfg: &RunConfig, config_text: &str, directory: &Path) -> Result<RunOutcome, Error> {
    fs::create_dir_all(directory)?;
    fs::write(directory.join("config.toml"), config_text)?;
    let (integrator, state0, _) = cfg.build()?;
    let mut ledger = EnergyLedger::for_state(&integrator, &state0);
    let monitor_energy = integrator.scheme.stability_mode && integrator.forcing.is_none();
    let energy_tol = ENERGY_TOL_REL * ledger.initial_total();
    let mut csv = TimeseriesWriter::create(&directory.join("timeseries.csv"))?;
    let mut violations = Vec::new();
    let mut steps = 0;
    let out = &cfg.output;

    let final_state = integrator.run(
        state0,
        cfg.run.t_end,
        &mut |state: &SimState, report: &StepReport| {
            steps += 1;
            let prev_total = ledger.rows.last().map_or(0.0, |r| r.total);
            let row = ledger.record(report);
            for message in step_violations(&integrator, state, report) {
                log::warn!("step {}: {message}", report.n);
                violations.push(Violation {
                    n: report.n,
                    message,
                });
            }
            if monitor_energy && row.total > prev_total + energy_tol {
                let message = format!(
                    "energy increased from {prev_total:.17e} to {:.17e}",
                    row.total
                );
                log::warn!("step {}: {message}", report.n);
                violations.push(Violation {
                    n: report.n,
                    message,
                });
            }
            if report.n % out.csv_every == 0 {
                csv.write(&TimeseriesRow::new(report, &row))?;
            }
            if out.snapshot_every > 0 && report.n % out.snapshot_every == 0 {
                write_snapshot(
                    state,
                    &directory.join(format!("snapshot_{:06}.vtk", report.n)),
                )?;
            }
            log::debug!(
                "step {} t = {:.6} fp = {} total = {:.6e}",
                report.n,
                report.t,
                report.fixed_point.iterations,
                row.total
            );
            Ok(())
        },
    )?;
    csv.finish()?;
    write_snapshot(&final_state, &directory.join("final.vtk"))?;
    Ok(RunOutcome {
        steps,
        final_state,
        ledger,
        violations,
        directory: directory.to_path_buf(),
    })
}

/// Temporal self-convergence of the configured case; only `dt` and `theta`
/// are overridden per run.
pub fn convergence_from_config(
    cfg: &RunConfig,
    dts: &[f64],
    dt_ref: f64,
    rule: ThetaRule,
) -> Result<ConvergenceTable, Error> {
    let setup = |dt: f64, theta: f64| {
        let mut c = cfg.clone();
        c.scheme.dt = dt;
        c.scheme.theta = theta;
        c.validate()?;
        let (integrator, state, _) = c.build()?;
        Ok((integrator, state))
    };
    temporal_convergence_study(setup, dts, dt_ref, cfg.run.t_end, rule)
}

/// Result of one check of the verification suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> SuiteCheck {
    SuiteCheck {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// The property suite on tiny grids: structural identities, maximum
/// principle, fixed-point contraction, energy decay and `|sigma| <= 1`.
pub fn verification_suite(seed: u64) -> Result<Vec<SuiteCheck>, Error> {
    let mut out: Vec<SuiteCheck> = structural_checks(seed, 100, 1e-11)
        .into_iter()
        .map(|c| {
            check(
                c.name,
                c.passed(),
                format!(
                    "worst relative {:.2e} over {} trials",
                    c.worst_relative, c.trials
                ),
            )
        })
        .collect();
    let mut sigma_max = 0.0f64;

    let fluid = FluidParams::affine((1.0, 3.0), (0.02, 0.04), (0.0, 0.1))?;
    let theta = 0.5;
    let scheme = SchemeParams::new(
        0.005,
        SchemeParams::saturating_r(theta, &fluid),
        theta,
        1e-9,
        10_000,
        false,
        &fluid,
    )?;
    let setup = ScenarioSpec::Dambreak {
        gravity: 1.0,
        radius: 0.2,
        center_x: 0.5,
        center_y: 0.65,
    }
    .build(16, 16, 1.0, 1.0, &fluid)?;
    let it = Integrator::new(fluid.clone(), scheme).with_forcing(setup.forcing.clone());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    it.run(
        it.initialize(setup.rho0, setup.u0)?,
        0.25,
        &mut |_: &SimState, rep: &StepReport| {
            lo = lo.min(rep.rho_min);
            hi = hi.max(rep.rho_max);
            sigma_max = sigma_max.max(rep.sigma_max);
            Ok(())
        },
    )?;
    out.push(check(
        "maximum principle",
        lo >= fluid.rho1 - DENSITY_BOUND_TOL && hi <= fluid.rho2 + DENSITY_BOUND_TOL,
        format!("rho in [{lo:.15}, {hi:.15}]"),
    ));

    let fluid = FluidParams::affine((1.0, 2.0), (0.1, 0.2), (0.5, 1.0))?;
    let theta = 0.1;
    let fp_tol = 1e-9;
    let scheme = SchemeParams::new(
        0.01,
        SchemeParams::saturating_r(theta, &fluid),
        theta,
        fp_tol,
        100_000,
        false,
        &fluid,
    )?;
    let cavity = ScenarioSpec::Cavity {
        amplitude: 1.0,
        density: DensityProfile::SmoothBlob,
        drive: 0.0,
        band: 0.1,
    };
    let setup = cavity.build(12, 12, 1.0, 1.0, &fluid)?;
    let it = Integrator::new(fluid.clone(), scheme);
    let mut worst = 0.0f64;
    it.run(
        it.initialize(setup.rho0, setup.u0)?,
        0.05,
        &mut |_: &SimState, rep: &StepReport| {
            if rep.fixed_point.iterations >= 4 {
                worst = rep
                    .fixed_point
                    .ratios_above(10.0 * fp_tol)
                    .into_iter()
                    .fold(worst, f64::max);
            }
            sigma_max = sigma_max.max(rep.sigma_max);
            Ok(())
        },
    )?;
    out.push(check(
        "fixed-point contraction",
        worst <= 1.0 - theta + 0.02,
        format!("max ratio {worst:.4} vs bound {:.2}", 1.0 - theta + 0.02),
    ));

    let theta = 0.25;
    let r = fluid.mu1 / (fluid.alpha2 * fluid.alpha2);
    let scheme = SchemeParams::new(0.01, r, theta, 1e-11, 100_000, true, &fluid)?;
    let setup = cavity.build(12, 12, 1.0, 1.0, &fluid)?;
    let it = Integrator::new(fluid.clone(), scheme.clone());
    let s0 = it.initialize(setup.rho0, setup.u0)?;
    let mut ledger = EnergyLedger::for_state(&it, &s0);
    it.run(s0, 0.3, &mut |_: &SimState, rep: &StepReport| {
        ledger.record(rep);
        sigma_max = sigma_max.max(rep.sigma_max);
        Ok(())
    })?;
    let violation = ledger.check_monotone(&fluid, &scheme, ENERGY_TOL_REL)?;
    out.push(check(
        "energy decay",
        violation.is_none(),
        format!(
            "max step increase {:.3e}, initial total {:.3e}",
            ledger.max_increase(),
            ledger.initial_total()
        ),
    ));

    out.push(check(
        "plastic tensor admissibility",
        sigma_max <= 1.0 + SIGMA_TOL,
        format!("max |sigma| {sigma_max:.15}"),
    ));
    Ok(out)
}
