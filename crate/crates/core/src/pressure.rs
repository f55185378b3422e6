//! Pressure increment, pressure accumulation and velocity correction.
//!
//! The Poisson problem always uses the smallest density `rho1`, so a single
//! constant-coefficient Neumann solve is needed per step.

use crate::grid::{divergence, MacGrid};
use crate::grid::{gradient_to_faces, ScalarField, VelocityField};
use crate::solvers::{cg_solve, SolveStats, SolverConfig};
use crate::Error;

/// `y = -Lap x` for the Neumann MAC Laplacian, on flat cell vectors.
pub fn neg_laplacian_apply(g: &MacGrid, x: &[f64], y: &mut [f64]) {
    let (ax, ay) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
    for j in 0..g.ny {
        for i in 0..g.nx {
            let c = g.cell(i, j);
            let xc = x[c];
            let mut s = 0.0;
            if i > 0 {
                s += ax * (xc - x[c - 1]);
            } else if g.periodic_x {
                s += ax * (xc - x[g.cell(g.nx - 1, j)]);
            }
            if i + 1 < g.nx {
                s += ax * (xc - x[c + 1]);
            } else if g.periodic_x {
                s += ax * (xc - x[g.cell(0, j)]);
            }
            if j > 0 {
                s += ay * (xc - x[c - g.nx]);
            }
            if j + 1 < g.ny {
                s += ay * (xc - x[c + g.nx]);
            }
            y[c] = s;
        }
    }
}

/// Mean-zero `q` with `Lap q = (rho1 / dt) div u`.
pub fn pressure_increment(
    u_new: &VelocityField,
    rho1: f64,
    dt: f64,
    cfg: &SolverConfig,
) -> Result<(ScalarField, SolveStats), Error> {
    let g = u_new.grid;
    let scale = rho1 / dt;
    let rhs: Vec<f64> = divergence(u_new)
        .values
        .iter()
        .map(|d| -scale * d)
        .collect();
    let (q, stats) = cg_solve(|x, y| neg_laplacian_apply(&g, x, y), &rhs, None, cfg)
        .map_err(Error::solver("pressure increment"))?;
    Ok((ScalarField { grid: g, values: q }, stats))
}

pub fn accumulate_pressure(p_old: &ScalarField, q_new: &ScalarField) -> ScalarField {
    p_old.add(q_new)
}

/// `u - (dt / rho1) grad q`.
pub fn correct_velocity(
    u_new: &VelocityField,
    q_new: &ScalarField,
    rho1: f64,
    dt: f64,
) -> VelocityField {
    let mut out = u_new.clone();
    out.axpy(-dt / rho1, &gradient_to_faces(q_new));
    out.enforce_boundary();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::laplacian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SolverConfig {
        SolverConfig::new(1e-13, 1e-15, 10_000).unwrap()
    }

    fn random_field(g: &MacGrid, seed: u64) -> VelocityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = VelocityField::zeros(g);
        u.ux.iter_mut()
            .chain(u.uy.iter_mut())
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        u.enforce_boundary();
        u
    }

    fn mean_zero_scalar(g: &MacGrid) -> ScalarField {
        let s = ScalarField::from_fn(g, |x, y| (3.0 * x).sin() + y * y - x * y);
        let m = s.mean();
        s.map(|v| v - m)
    }

    #[test]
    fn stencil_matches_field_laplacian() {
        for g in [
            MacGrid::new(6, 5, 1.0, 2.0).unwrap(),
            MacGrid::periodic_channel(6, 5, 1.0, 2.0).unwrap(),
        ] {
            let s = mean_zero_scalar(&g);
            let mut y = vec![0.0; g.cell_count()];
            neg_laplacian_apply(&g, &s.values, &mut y);
            let l = laplacian(&s);
            for (a, b) in y.iter().zip(&l.values) {
                assert!((a + b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn divergence_free_input_gives_zero_increment() {
        let g = MacGrid::new(8, 8, 1.0, 1.0).unwrap();
        let (q, _) = pressure_increment(&VelocityField::zeros(&g), 1.0, 0.1, &cfg()).unwrap();
        assert_eq!(q.max_abs(), 0.0);
    }

    #[test]
    fn gradient_input_is_recovered_and_removed() {
        let g = MacGrid::new(12, 10, 1.0, 1.0).unwrap();
        let s = mean_zero_scalar(&g);
        let u = gradient_to_faces(&s);
        let (rho1, dt) = (1.5, 0.02);
        let (q, _) = pressure_increment(&u, rho1, dt, &cfg()).unwrap();
        let expected = s.scaled(rho1 / dt);
        assert!(q.sub(&expected).max_abs() <= 1e-9 * expected.max_abs());
        let uh = correct_velocity(&u, &q, rho1, dt);
        assert!(uh.max_abs() <= 1e-9 * u.max_abs());

        let (q2, _) = pressure_increment(&u, 2.0 * rho1, dt, &cfg()).unwrap();
        assert!(q2.sub(&q.scaled(2.0)).max_abs() <= 1e-9 * q2.max_abs());
    }

    #[test]
    fn correction_is_orthogonal_splitting() {
        for g in [
            MacGrid::new(10, 9, 1.0, 1.0).unwrap(),
            MacGrid::periodic_channel(8, 8, 1.0, 1.0).unwrap(),
        ] {
            let u = random_field(&g, 4);
            let (rho1, dt) = (1.0, 0.1);
            let (q, _) = pressure_increment(&u, rho1, dt, &cfg()).unwrap();
            let uh = correct_velocity(&u, &q, rho1, dt);
            let gq = gradient_to_faces(&q);
            let lhs = uh.dot(&uh) + (dt / rho1).powi(2) * gq.dot(&gq);
            assert!((lhs - u.dot(&u)).abs() <= 1e-10 * u.dot(&u));
            assert!(uh.dot(&gq).abs() <= 1e-10 * uh.norm_l2() * gq.norm_l2());
            assert!(divergence(&uh).max_abs() <= 1e-9);
            assert!(uh.satisfies_boundary());
        }
    }

    #[test]
    fn accumulate_examples() {
        let g = MacGrid::new(4, 4, 1.0, 1.0).unwrap();
        let p = mean_zero_scalar(&g).map(|v| v + 3.0);
        let z = ScalarField::zeros(&g);
        assert_eq!(accumulate_pressure(&p, &z), p);
        assert_eq!(accumulate_pressure(&z, &p), p);
        let q = mean_zero_scalar(&g);
        assert!((accumulate_pressure(&p, &q).mean() - p.mean()).abs() < 1e-14);
    }
}
