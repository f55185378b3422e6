//! Pointwise algebra on symmetric 2x2 tensors.
//!
//! The magnitude used throughout is the second invariant
//! `|t|^2 = 1/2 tr(t^T t)`, and the plastic tensor lives in the closed
//! convex set of symmetric, trace-free tensors with `|t| <= 1`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Symmetric 2x2 tensor with the off-diagonal entry stored once.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl SymTensor2 {
    pub const ZERO: SymTensor2 = SymTensor2 {
        xx: 0.0,
        yy: 0.0,
        xy: 0.0,
    };

    pub const fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Self { xx, yy, xy }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 1.0, 0.0)
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Full contraction `a : b = sum_ij a_ij b_ij` (off-diagonal counted twice).
    pub fn contract(&self, other: &SymTensor2) -> f64 {
        self.xx * other.xx + self.yy * other.yy + 2.0 * self.xy * other.xy
    }

    /// Squared second invariant, `1/2 (xx^2 + yy^2) + xy^2`.
    pub fn second_invariant_sq(&self) -> f64 {
        0.5 * (self.xx * self.xx + self.yy * self.yy) + self.xy * self.xy
    }

    pub fn second_invariant(&self) -> f64 {
        self.second_invariant_sq().sqrt()
    }

    pub fn deviatoric(&self) -> SymTensor2 {
        let mean = 0.5 * self.trace();
        SymTensor2::new(self.xx - mean, self.yy - mean, self.xy)
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite()
    }
}

impl Add for SymTensor2 {
    type Output = SymTensor2;
    fn add(self, rhs: SymTensor2) -> SymTensor2 {
        SymTensor2::new(self.xx + rhs.xx, self.yy + rhs.yy, self.xy + rhs.xy)
    }
}

impl AddAssign for SymTensor2 {
    fn add_assign(&mut self, rhs: SymTensor2) {
        self.xx += rhs.xx;
        self.yy += rhs.yy;
        self.xy += rhs.xy;
    }
}

impl Sub for SymTensor2 {
    type Output = SymTensor2;
    fn sub(self, rhs: SymTensor2) -> SymTensor2 {
        SymTensor2::new(self.xx - rhs.xx, self.yy - rhs.yy, self.xy - rhs.xy)
    }
}

impl Neg for SymTensor2 {
    type Output = SymTensor2;
    fn neg(self) -> SymTensor2 {
        SymTensor2::new(-self.xx, -self.yy, -self.xy)
    }
}

impl Mul<SymTensor2> for f64 {
    type Output = SymTensor2;
    fn mul(self, rhs: SymTensor2) -> SymTensor2 {
        SymTensor2::new(self * rhs.xx, self * rhs.yy, self * rhs.xy)
    }
}

impl Mul<f64> for SymTensor2 {
    type Output = SymTensor2;
    fn mul(self, rhs: f64) -> SymTensor2 {
        rhs * self
    }
}

/// A tensor known to be symmetric, trace-free and of second invariant at
/// most one. Only obtainable through [`project_lambda`] or the checked
/// constructor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LambdaTensor(SymTensor2);

impl LambdaTensor {
    pub const ZERO: LambdaTensor = LambdaTensor(SymTensor2::ZERO);

    /// Accepts `t` only if it already belongs to the admissible set.
    pub fn try_new(t: SymTensor2) -> Option<Self> {
        if t.trace().abs() <= 1e-14 && t.second_invariant() <= 1.0 + 1e-12 {
            Some(Self(t))
        } else {
            None
        }
    }

    pub fn inner(&self) -> SymTensor2 {
        self.0
    }
}

impl From<LambdaTensor> for SymTensor2 {
    fn from(l: LambdaTensor) -> SymTensor2 {
        l.0
    }
}

pub fn second_invariant(t: &SymTensor2) -> f64 {
    t.second_invariant()
}

pub fn deviatoric(t: &SymTensor2) -> SymTensor2 {
    t.deviatoric()
}

/// Projection onto the admissible set: remove the trace, then pull the
/// result back onto the unit ball of the second invariant if it lies outside.
pub fn project_lambda(t: &SymTensor2) -> LambdaTensor {
    let d = t.deviatoric();
    let norm = d.second_invariant();
    if norm <= 1.0 {
        LambdaTensor(d)
    } else {
        LambdaTensor((1.0 / norm) * d)
    }
}

/// The argument of the projection in one fixed-point sweep:
/// `s_k + r alpha Du + theta (s_n - s_k)`.
pub fn relaxed_projection_target(
    sigma_prev_iter: &LambdaTensor,
    sigma_time_prev: &LambdaTensor,
    du: &SymTensor2,
    r: f64,
    alpha_local: f64,
    theta: f64,
) -> SymTensor2 {
    let sk = sigma_prev_iter.inner();
    let sn = sigma_time_prev.inner();
    sk + (r * alpha_local) * *du + theta * (sn - sk)
}
