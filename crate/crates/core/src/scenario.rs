//! Initial and forcing data for the built-in test cases.

use serde::{Deserialize, Serialize};

use crate::grid::{MacGrid, ScalarField, VelocityField};
use crate::integrator::Forcing;
use crate::transport::FluidParams;
use crate::Error;

/// Initial density layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityProfile {
    /// `rho1` everywhere.
    #[default]
    Uniform,
    /// `rho2` in the upper half, `rho1` below.
    Layer,
    /// Disc of `rho2` in `rho1`.
    Blob,
    /// Disc of `rho2` with a `tanh` rim.
    SmoothBlob,
}

fn one() -> f64 {
    1.0
}
fn default_radius() -> f64 {
    0.2
}
fn default_center_x() -> f64 {
    0.5
}
fn default_center_y() -> f64 {
    0.65
}
fn default_band() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    /// Fluid at rest, no forcing.
    Rest {
        #[serde(default)]
        density: DensityProfile,
    },
    /// Closed box with an initial recirculating vortex and an optional
    /// tangential force in a band below the top wall.
    Cavity {
        /// Peak speed of the initial vortex.
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        density: DensityProfile,
        /// Force per unit volume in the top band (zero for decaying flow).
        #[serde(default)]
        drive: f64,
        /// Band thickness as a fraction of the height.
        #[serde(default = "default_band")]
        band: f64,
    },
    /// Channel periodic in `x` between no-slip walls, driven by a uniform
    /// force `drive` along `x`, starting from rest.
    Poiseuille { drive: f64 },
    /// Heavy disc released in lighter fluid under gravity.
    Dambreak {
        #[serde(default = "one")]
        gravity: f64,
        /// Radius as a fraction of `min(lx, ly)`.
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_center_x")]
        center_x: f64,
        #[serde(default = "default_center_y")]
        center_y: f64,
    },
}

/// Everything needed to start a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub grid: MacGrid,
    pub rho0: ScalarField,
    pub u0: VelocityField,
    pub forcing: Forcing,
}

pub fn density_field(grid: &MacGrid, profile: DensityProfile, fluid: &FluidParams) -> ScalarField {
    let (r1, r2) = (fluid.rho1, fluid.rho2);
    let (cx, cy) = (0.5 * grid.lx, 0.5 * grid.ly);
    let radius = 0.2 * grid.lx.min(grid.ly);
    match profile {
        DensityProfile::Uniform => ScalarField::constant(grid, r1),
        DensityProfile::Layer => ScalarField::from_fn(grid, |_, y| if y > cy { r2 } else { r1 }),
        DensityProfile::Blob => ScalarField::from_fn(grid, |x, y| {
            if (x - cx).powi(2) + (y - cy).powi(2) < radius * radius {
                r2
            } else {
                r1
            }
        }),
        DensityProfile::SmoothBlob => {
            let width = 0.25 * radius;
            ScalarField::from_fn(grid, |x, y| {
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                let w = 0.5 * (1.0 - ((d - radius) / width).tanh());
                (r1 + (r2 - r1) * w).clamp(r1, r2)
            })
        }
    }
}

/// Velocity from a node stream function, `u = d psi / dy`, `v = -d psi / dx`.
/// Divergence-free to round-off by construction.
pub fn velocity_from_stream_function(
    grid: &MacGrid,
    psi: impl Fn(f64, f64) -> f64,
) -> VelocityField {
    let g = grid;
    let node = |i: usize, j: usize| psi(i as f64 * g.hx, j as f64 * g.hy);
    let mut u = VelocityField::zeros(g);
    for j in 0..g.ny {
        for i in 0..=g.nx {
            u.ux[g.xface(i, j)] = (node(i, j + 1) - node(i, j)) / g.hy;
        }
    }
    for j in 0..=g.ny {
        for i in 0..g.nx {
            u.uy[g.yface(i, j)] = -(node(i + 1, j) - node(i, j)) / g.hx;
        }
    }
    u.enforce_boundary();
    u
}

/// Vortex filling the box with peak speed about `amplitude`, vanishing with
/// its normal derivative on the walls.
pub fn cavity_vortex(grid: &MacGrid, amplitude: f64) -> VelocityField {
    let pi = std::f64::consts::PI;
    let (lx, ly) = (grid.lx, grid.ly);
    velocity_from_stream_function(grid, |x, y| {
        amplitude * ly / pi * (pi * x / lx).sin().powi(2) * (pi * y / ly).sin().powi(2)
    })
}

impl ScenarioSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioSpec::Rest { .. } => "rest",
            ScenarioSpec::Cavity { .. } => "cavity",
            ScenarioSpec::Poiseuille { .. } => "poiseuille",
            ScenarioSpec::Dambreak { .. } => "dambreak",
        }
    }

    pub fn validate(&self, fluid: &FluidParams) -> Result<(), String> {
        match self {
            ScenarioSpec::Poiseuille { drive } if !(*drive > 0.0) => {
                Err(format!("poiseuille needs a positive drive G, got {drive}"))
            }
            ScenarioSpec::Cavity {
                amplitude, band, ..
            } if !amplitude.is_finite() || !(*band > 0.0 && *band <= 1.0) => {
                Err("cavity needs a finite amplitude and 0 < band <= 1".into())
            }
            ScenarioSpec::Dambreak { radius, .. } if !(*radius > 0.0 && *radius < 0.5) => Err(
                format!("dambreak radius must lie in (0, 0.5), got {radius}"),
            ),
            ScenarioSpec::Dambreak { .. } if fluid.rho2 <= fluid.rho1 => {
                Err("dambreak needs rho2 > rho1".into())
            }
            _ => Ok(()),
        }
    }

    pub fn build(
        &self,
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        fluid: &FluidParams,
    ) -> Result<Setup, Error> {
        self.validate(fluid).map_err(Error::InvalidScheme)?;
        match *self {
            ScenarioSpec::Rest { density } => {
                let grid = MacGrid::new(nx, ny, lx, ly)?;
                Ok(Setup {
                    rho0: density_field(&grid, density, fluid),
                    u0: VelocityField::zeros(&grid),
                    forcing: Forcing::None,
                    grid,
                })
            }
            ScenarioSpec::Cavity {
                amplitude,
                density,
                drive,
                band,
            } => {
                let grid = MacGrid::new(nx, ny, lx, ly)?;
                let forcing = if drive != 0.0 {
                    let y_band = ly * (1.0 - band);
                    let f = VelocityField::from_fn(
                        &grid,
                        |_, y| if y > y_band { drive } else { 0.0 },
                        |_, _| 0.0,
                    );
                    Forcing::Field(f)
                } else {
                    Forcing::None
                };
                Ok(Setup {
                    rho0: density_field(&grid, density, fluid),
                    u0: cavity_vortex(&grid, amplitude),
                    forcing,
                    grid,
                })
            }
            ScenarioSpec::Poiseuille { drive } => {
                let grid = MacGrid::periodic_channel(nx, ny, lx, ly)?;
                Ok(Setup {
                    rho0: ScalarField::constant(&grid, fluid.rho1),
                    u0: VelocityField::zeros(&grid),
                    forcing: Forcing::Uniform { fx: drive, fy: 0.0 },
                    grid,
                })
            }
            ScenarioSpec::Dambreak {
                gravity,
                radius,
                center_x,
                center_y,
            } => {
                let grid = MacGrid::new(nx, ny, lx, ly)?;
                let (cx, cy, rad) = (center_x * lx, center_y * ly, radius * lx.min(ly));
                let rho0 = ScalarField::from_fn(&grid, |x, y| {
                    if (x - cx).powi(2) + (y - cy).powi(2) < rad * rad {
                        fluid.rho2
                    } else {
                        fluid.rho1
                    }
                });
                Ok(Setup {
                    rho0,
                    u0: VelocityField::zeros(&grid),
                    forcing: Forcing::Buoyancy {
                        gx: 0.0,
                        gy: -gravity,
                    },
                    grid,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::divergence;

    fn fluid() -> FluidParams {
        FluidParams::affine((1.0, 3.0), (0.1, 0.1), (0.0, 1.0)).unwrap()
    }

    #[test]
    fn cavity_vortex_is_solenoidal_no_slip() {
        let g = MacGrid::new(20, 16, 1.0, 0.8).unwrap();
        let u = cavity_vortex(&g, 1.0);
        assert!(divergence(&u).max_abs() < 1e-12);
        assert!(u.satisfies_boundary());
        assert!(u.max_abs() > 0.8 && u.max_abs() < 1.1);
    }

    #[test]
    fn density_profiles_stay_in_bounds() {
        let g = MacGrid::new(16, 16, 1.0, 1.0).unwrap();
        for p in [
            DensityProfile::Uniform,
            DensityProfile::Layer,
            DensityProfile::Blob,
            DensityProfile::SmoothBlob,
        ] {
            let r = density_field(&g, p, &fluid());
            assert!(r.min() >= 1.0 && r.max() <= 3.0);
        }
    }

    #[test]
    fn poiseuille_needs_drive() {
        let s = ScenarioSpec::Poiseuille { drive: 0.0 };
        assert!(s.build(4, 16, 0.25, 1.0, &fluid()).is_err());
        let s = ScenarioSpec::Poiseuille { drive: 1.0 };
        let setup = s.build(4, 16, 0.25, 1.0, &fluid()).unwrap();
        assert!(setup.grid.periodic_x);
    }

    #[test]
    fn dambreak_blob_ratio() {
        let s = ScenarioSpec::Dambreak {
            gravity: 1.0,
            radius: 0.2,
            center_x: 0.5,
            center_y: 0.65,
        };
        let setup = s.build(32, 32, 1.0, 1.0, &fluid()).unwrap();
        assert_eq!(setup.rho0.max() / setup.rho0.min(), 3.0);
        assert!(matches!(setup.forcing, Forcing::Buoyancy { .. }));
    }
}
