//! Matrix-free Krylov solvers on flat `f64` vectors.
//!
//! Operators are closures `apply(x, y)` writing `y = A x`. Residuals are
//! plain Euclidean norms of the unknown vector.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub max_iter: usize,
}

impl SolverConfig {
    pub fn new(tol_rel: f64, tol_abs: f64, max_iter: usize) -> Result<Self, SolverError> {
        if !(tol_rel > 0.0 && tol_rel < 1.0) {
            return Err(SolverError::InvalidConfig(format!(
                "tol_rel must lie in (0, 1), got {tol_rel}"
            )));
        }
        if tol_abs < 0.0 || max_iter == 0 {
            return Err(SolverError::InvalidConfig(
                "tol_abs must be >= 0 and max_iter >= 1".into(),
            ));
        }
        Ok(Self {
            tol_rel,
            tol_abs,
            max_iter,
        })
    }

    fn target(&self, reference: f64) -> f64 {
        (self.tol_rel * reference).max(self.tol_abs)
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_rel: 1e-12,
            tol_abs: 1e-15,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    /// True residual `||b - A x||`, recomputed after the last iteration.
    pub final_residual: f64,
    /// `||b||`, the reference for the relative tolerance.
    pub initial_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("no convergence after {} iterations (residual {:.3e}, rhs norm {:.3e})", .0.iterations, .0.final_residual, .0.initial_residual)]
    NonConvergence(SolveStats),
    #[error("right-hand side mean {mean:.3e} is not compatible with the constant nullspace")]
    IncompatibleRhs { mean: f64 },
    #[error("BiCGStab breakdown after {iterations} iterations")]
    Breakdown { iterations: usize },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

fn residual(apply: &mut impl FnMut(&[f64], &mut [f64]), b: &[f64], x: &[f64], r: &mut [f64]) {
    apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

/// Conjugate gradients for a symmetric positive semidefinite operator whose
/// nullspace is the constant vector. The right-hand side must have zero mean
/// (relative to its largest entry); the returned solution has zero mean.
pub fn cg_solve(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    rhs: &[f64],
    x0: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveStats), SolverError> {
    let n = rhs.len();
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mean = rhs.iter().sum::<f64>() / n as f64;
    if mean.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) && mean.abs() > cfg.tol_abs {
        return Err(SolverError::IncompatibleRhs { mean });
    }
    let mut b = rhs.to_vec();
    remove_mean(&mut b);
    let bnorm = norm(&b);
    let target = cfg.target(bnorm);

    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    remove_mean(&mut x);
    let mut r = vec![0.0; n];
    residual(&mut apply, &b, &x, &mut r);
    remove_mean(&mut r);
    let mut rnorm = norm(&r);
    let mut stats = SolveStats {
        iterations: 0,
        final_residual: rnorm,
        initial_residual: bnorm,
        converged: rnorm <= target,
    };
    if stats.converged {
        return Ok((x, stats));
    }

    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    while stats.iterations < cfg.max_iter {
        apply(&p, &mut ap);
        remove_mean(&mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        stats.iterations += 1;
        let rr_new = dot(&r, &r);
        rnorm = rr_new.sqrt();
        if rnorm <= target {
            // confirm with the true residual; restart from it if it disagrees
            remove_mean(&mut x);
            residual(&mut apply, &b, &x, &mut r);
            remove_mean(&mut r);
            rnorm = norm(&r);
            if rnorm <= target {
                stats.final_residual = rnorm;
                stats.converged = true;
                return Ok((x, stats));
            }
            p.copy_from_slice(&r);
            rr = dot(&r, &r);
            continue;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    remove_mean(&mut x);
    residual(&mut apply, &b, &x, &mut r);
    remove_mean(&mut r);
    stats.final_residual = norm(&r);
    Err(SolverError::NonConvergence(stats))
}

/// Jacobi-preconditioned BiCGStab. `diag` is the operator diagonal; a zero
/// entry is treated as one. The recurrence is restarted from the true
/// residual on breakdown a few times before giving up.
pub fn bicgstab_solve(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    rhs: &[f64],
    x0: Option<&[f64]>,
    diag: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveStats), SolverError> {
    const MAX_RESTARTS: usize = 5;
    let n = rhs.len();
    let inv_diag: Vec<f64> = match diag {
        Some(d) => d
            .iter()
            .map(|&v| if v != 0.0 { 1.0 / v } else { 1.0 })
            .collect(),
        None => vec![1.0; n],
    };
    let precondition = |src: &[f64], dst: &mut [f64]| {
        for i in 0..n {
            dst[i] = inv_diag[i] * src[i];
        }
    };

    let bnorm = norm(rhs);
    let target = cfg.target(bnorm);
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    residual(&mut apply, rhs, &x, &mut r);
    let mut stats = SolveStats {
        iterations: 0,
        final_residual: norm(&r),
        initial_residual: bnorm,
        converged: false,
    };
    if stats.final_residual <= target {
        stats.converged = true;
        return Ok((x, stats));
    }

    let mut r_hat = r.clone();
    let (mut p, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (mut y, mut z) = (vec![0.0; n], vec![0.0; n]);
    let (mut s, mut t) = (vec![0.0; n], vec![0.0; n]);
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut restarts = 0;

    while stats.iterations < cfg.max_iter {
        let rho_new = dot(&r_hat, &r);
        let breakdown = rho_new.abs() < 1e-300 || omega == 0.0;
        if breakdown {
            if restarts == MAX_RESTARTS {
                return Err(SolverError::Breakdown {
                    iterations: stats.iterations,
                });
            }
            restarts += 1;
            residual(&mut apply, rhs, &x, &mut r);
            r_hat.copy_from_slice(&r);
            p.iter_mut().for_each(|e| *e = 0.0);
            v.iter_mut().for_each(|e| *e = 0.0);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precondition(&p, &mut y);
        apply(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            omega = 0.0;
            continue;
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        stats.iterations += 1;
        if norm(&s) <= target {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            residual(&mut apply, rhs, &x, &mut r);
            let rn = norm(&r);
            if rn <= target {
                stats.final_residual = rn;
                stats.converged = true;
                return Ok((x, stats));
            }
            omega = 0.0;
            continue;
        }
        precondition(&s, &mut z);
        apply(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= target {
            residual(&mut apply, rhs, &x, &mut r);
            let rn = norm(&r);
            if rn <= target {
                stats.final_residual = rn;
                stats.converged = true;
                return Ok((x, stats));
            }
            omega = 0.0;
        }
    }
    residual(&mut apply, rhs, &x, &mut r);
    stats.final_residual = norm(&r);
    Err(SolverError::NonConvergence(stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{divergence, laplacian, MacGrid, ScalarField, VelocityField};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn neg_laplacian(g: MacGrid) -> impl FnMut(&[f64], &mut [f64]) {
        move |x, y| {
            let s = ScalarField {
                grid: g,
                values: x.to_vec(),
            };
            let l = laplacian(&s);
            for (yi, li) in y.iter_mut().zip(&l.values) {
                *yi = -li;
            }
        }
    }

    #[test]
    fn cg_zero_rhs() {
        let g = MacGrid::new(8, 8, 1.0, 1.0).unwrap();
        let (x, stats) = cg_solve(
            neg_laplacian(g),
            &vec![0.0; 64],
            None,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
        assert!(stats.converged);
    }

    #[test]
    fn cg_divergence_rhs_meets_tolerance() {
        let g = MacGrid::new(16, 12, 1.0, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut u = VelocityField::zeros(&g);
        u.ux.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        u.uy.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        u.enforce_boundary();
        let rhs = divergence(&u).values;
        let cfg = SolverConfig::default();
        let (x, stats) = cg_solve(neg_laplacian(g), &rhs, None, &cfg).unwrap();
        assert!(stats.converged);
        assert!(stats.final_residual <= cfg.tol_rel * stats.initial_residual);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        assert!(mean.abs() < 1e-12);
        // reported residual equals an independent recomputation
        let mut ax = vec![0.0; x.len()];
        neg_laplacian(g)(&x, &mut ax);
        let true_res = norm(&rhs.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>());
        assert!((true_res - stats.final_residual).abs() <= 1e-10 * stats.initial_residual);
    }

    #[test]
    fn cg_manufactured_cosine() {
        let pi = std::f64::consts::PI;
        let errs: Vec<f64> = [16usize, 32]
            .iter()
            .map(|&n| {
                let g = MacGrid::new(n, n, 1.0, 1.0).unwrap();
                let exact = ScalarField::from_fn(&g, |x, y| (pi * x).cos() * (pi * y).cos());
                // continuous -lap s = 2 pi^2 s
                let rhs = exact.scaled(2.0 * pi * pi).values;
                let (x, _) =
                    cg_solve(neg_laplacian(g), &rhs, None, &SolverConfig::default()).unwrap();
                x.iter()
                    .zip(&exact.values)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            })
            .collect();
        assert!(errs[0] < 1e-2);
        // second order: halving h quarters the error
        assert!(errs[1] < 0.3 * errs[0], "{errs:?}");
    }

    #[test]
    fn cg_rejects_incompatible_rhs() {
        let g = MacGrid::new(8, 8, 1.0, 1.0).unwrap();
        let err = cg_solve(
            neg_laplacian(g),
            &vec![1.0; 64],
            None,
            &SolverConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SolverError::IncompatibleRhs { .. }));
    }

    #[test]
    fn bicgstab_identity() {
        let b: Vec<f64> = (0..20).map(|i| i as f64 - 3.5).collect();
        let (x, stats) = bicgstab_solve(
            |x, y| y.copy_from_slice(x),
            &b,
            None,
            None,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(stats.converged);
        for (a, e) in x.iter().zip(&b) {
            assert!((a - e).abs() < 1e-14);
        }
    }

    #[test]
    fn bicgstab_diagonal_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d: Vec<f64> = (0..50).map(|_| rng.gen_range(0.1..10.0)).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dd = d.clone();
        let (x, _) = bicgstab_solve(
            move |x, y| {
                for i in 0..x.len() {
                    y[i] = dd[i] * x[i];
                }
            },
            &b,
            None,
            None,
            &SolverConfig::default(),
        )
        .unwrap();
        for i in 0..50 {
            assert!((x[i] - b[i] / d[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn bicgstab_nonsymmetric_tridiagonal() {
        let n = 40;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..x.len() {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < x.len() { x[i + 1] } else { 0.0 };
                y[i] = 3.0 * x[i] - 1.5 * l - 0.5 * r;
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let cfg = SolverConfig::default();
        let (x, stats) = bicgstab_solve(apply, &b, None, Some(&vec![3.0; n]), &cfg).unwrap();
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        let res = norm(&b.iter().zip(&ax).map(|(p, q)| p - q).collect::<Vec<_>>());
        assert!((res - stats.final_residual).abs() <= 1e-10 * norm(&b));
        assert!(res <= cfg.tol_rel * norm(&b));
    }

    #[test]
    fn nonconvergence_is_reported() {
        let g = MacGrid::new(16, 16, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        remove_mean(&mut b);
        let cfg = SolverConfig::new(1e-12, 0.0, 3).unwrap();
        let err = cg_solve(neg_laplacian(g), &b, None, &cfg).unwrap_err();
        match err {
            SolverError::NonConvergence(s) => assert_eq!(s.iterations, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(0.0, 0.0, 10).is_err());
        assert!(SolverConfig::new(1.5, 0.0, 10).is_err());
        assert!(SolverConfig::new(1e-6, 0.0, 0).is_err());
    }
}
