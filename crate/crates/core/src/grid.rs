//! Uniform staggered (MAC) grid on a rectangle, the discrete fields that
//! live on it and the discrete differential operators.
//!
//! Layout:
//! - scalars (density, pressure, coefficients) and tensors at cell centers,
//! - `ux` on vertical faces, `uy` on horizontal faces,
//! - shear components of the strain rate at nodes.
//!
//! Walls carry no-slip: normal faces on the boundary are zero and tangential
//! components are reflected through the wall with a ghost value. The grid can
//! optionally be periodic in `x`; then x-face `nx` is a mirror of face `0`.
//!
//! All inner products are area weighted. The operators are built so that the
//! discrete gradient is minus the adjoint of the divergence, the tensor
//! divergence is minus the adjoint of the cell strain rate and the
//! convective term is exactly skew-symmetric.

use crate::tensor::SymTensor2;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacGrid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
    pub periodic_x: bool,
}

impl MacGrid {
    /// Closed box with no-slip walls on all four sides.
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self, Error> {
        Self::build(nx, ny, lx, ly, false)
    }

    /// Channel, periodic in `x`, with no-slip walls at `y = 0` and `y = ly`.
    pub fn periodic_channel(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self, Error> {
        Self::build(nx, ny, lx, ly, true)
    }

    fn build(nx: usize, ny: usize, lx: f64, ly: f64, periodic_x: bool) -> Result<Self, Error> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidGrid(format!(
                "need at least 4x4 cells, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "domain lengths must be positive, got {lx} x {ly}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            hx: lx / nx as f64,
            hy: ly / ny as f64,
            periodic_x,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn min_spacing(&self) -> f64 {
        self.hx.min(self.hy)
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn xface(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn yface(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn xface_len(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    pub fn yface_len(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    pub fn node_len(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
    }

    pub fn xface_pos(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.hx, (j as f64 + 0.5) * self.hy)
    }

    pub fn yface_pos(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx, j as f64 * self.hy)
    }

    /// Column indices of x-faces that carry unknowns.
    pub fn xface_columns(&self) -> std::ops::Range<usize> {
        if self.periodic_x {
            0..self.nx
        } else {
            1..self.nx
        }
    }

    /// Row indices of y-faces that carry unknowns.
    pub fn yface_rows(&self) -> std::ops::Range<usize> {
        1..self.ny
    }

    /// Column indices of nodes that are distinct points of the domain.
    fn node_columns(&self) -> std::ops::Range<usize> {
        if self.periodic_x {
            0..self.nx
        } else {
            0..self.nx + 1
        }
    }

    /// Cell column to the left of cell column `i`, if any.
    #[inline]
    fn left_cell(&self, i: usize) -> Option<usize> {
        if i > 0 {
            Some(i - 1)
        } else if self.periodic_x {
            Some(self.nx - 1)
        } else {
            None
        }
    }

    /// Cell column to the right of cell column `i`, if any.
    #[inline]
    fn right_cell(&self, i: usize) -> Option<usize> {
        if i + 1 < self.nx {
            Some(i + 1)
        } else if self.periodic_x {
            Some(0)
        } else {
            None
        }
    }

    /// Storage index of x-face column `i`, or `None` for a wall face.
    #[inline]
    fn xface_dof_column(&self, i: usize) -> Option<usize> {
        if self.periodic_x {
            Some(i % self.nx)
        } else if i == 0 || i == self.nx {
            None
        } else {
            Some(i)
        }
    }

    /// Quadrature weight attached to node `(i, j)`.
    fn node_weight(&self, i: usize, j: usize) -> f64 {
        let mut w = self.cell_area();
        if j == 0 || j == self.ny {
            w *= 0.5;
        }
        if !self.periodic_x && (i == 0 || i == self.nx) {
            w *= 0.5;
        }
        w
    }

    /// Number of velocity unknowns.
    pub fn velocity_dofs(&self) -> usize {
        self.xface_columns().len() * self.ny + self.nx * self.yface_rows().len()
    }
}

/// A reference to one velocity unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Face {
    X(usize),
    Y(usize),
}

/// Visit every linear term of the node shear rate
/// `s = 1/2 (du/dy + dv/dx)` as `(node, face, coefficient)`.
fn visit_shear_terms(g: &MacGrid, mut f: impl FnMut(usize, usize, usize, Face, f64)) {
    let (nx, ny) = (g.nx, g.ny);
    let (cy, cx) = (0.5 / g.hy, 0.5 / g.hx);
    for j in 0..=ny {
        for i in g.node_columns() {
            let node = g.node(i, j);
            // du/dy through the x-face column i
            if let Some(ic) = g.xface_dof_column(i) {
                if j == 0 {
                    f(i, j, node, Face::X(g.xface(ic, 0)), 2.0 * cy);
                } else if j == ny {
                    f(i, j, node, Face::X(g.xface(ic, ny - 1)), -2.0 * cy);
                } else {
                    f(i, j, node, Face::X(g.xface(ic, j)), cy);
                    f(i, j, node, Face::X(g.xface(ic, j - 1)), -cy);
                }
            }
            // dv/dx through the y-face row j
            if j > 0 && j < ny {
                if g.periodic_x {
                    let il = if i == 0 { nx - 1 } else { i - 1 };
                    f(i, j, node, Face::Y(g.yface(i, j)), cx);
                    f(i, j, node, Face::Y(g.yface(il, j)), -cx);
                } else if i == 0 {
                    f(i, j, node, Face::Y(g.yface(0, j)), 2.0 * cx);
                } else if i == nx {
                    f(i, j, node, Face::Y(g.yface(nx - 1, j)), -2.0 * cx);
                } else {
                    f(i, j, node, Face::Y(g.yface(i, j)), cx);
                    f(i, j, node, Face::Y(g.yface(i - 1, j)), -cx);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: MacGrid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &MacGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &MacGrid, c: f64) -> Self {
        Self {
            grid: *grid,
            values: vec![c; grid.cell_count()],
        }
    }

    /// Samples `f(x, y)` at cell centers.
    pub fn from_fn(grid: &MacGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.cell_count());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.cell_center(i, j);
                values.push(f(x, y));
            }
        }
        Self {
            grid: *grid,
            values,
        }
    }

    pub fn from_values(grid: &MacGrid, values: Vec<f64>) -> Result<Self, Error> {
        if values.len() != grid.cell_count() {
            return Err(Error::SizeMismatch {
                expected: grid.cell_count(),
                found: values.len(),
            });
        }
        Ok(Self {
            grid: *grid,
            values,
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.cell(i, j)]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Integral over the domain (midpoint rule).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.grid.cell_area()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: MacGrid,
    /// x-components, `(nx + 1) * ny`, indexed by [`MacGrid::xface`].
    pub ux: Vec<f64>,
    /// y-components, `nx * (ny + 1)`, indexed by [`MacGrid::yface`].
    pub uy: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(grid: &MacGrid) -> Self {
        Self {
            grid: *grid,
            ux: vec![0.0; grid.xface_len()],
            uy: vec![0.0; grid.yface_len()],
        }
    }

    /// Samples `(fx, fy)` at face centers; boundary conditions are then
    /// enforced so the result is a valid no-slip field.
    pub fn from_fn(
        grid: &MacGrid,
        fx: impl Fn(f64, f64) -> f64,
        fy: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let mut u = Self::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..=grid.nx {
                let (x, y) = grid.xface_pos(i, j);
                u.ux[grid.xface(i, j)] = fx(x, y);
            }
        }
        for j in 0..=grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.yface_pos(i, j);
                u.uy[grid.yface(i, j)] = fy(x, y);
            }
        }
        u.enforce_boundary();
        u
    }

    /// Zero the wall-normal faces and refresh the periodic mirror.
    pub fn enforce_boundary(&mut self) {
        let g = self.grid;
        for j in 0..g.ny {
            if g.periodic_x {
                self.ux[g.xface(g.nx, j)] = self.ux[g.xface(0, j)];
            } else {
                self.ux[g.xface(0, j)] = 0.0;
                self.ux[g.xface(g.nx, j)] = 0.0;
            }
        }
        for i in 0..g.nx {
            self.uy[g.yface(i, 0)] = 0.0;
            self.uy[g.yface(i, g.ny)] = 0.0;
        }
    }

    /// True when wall-normal faces vanish and the periodic mirror is consistent.
    pub fn satisfies_boundary(&self) -> bool {
        let g = self.grid;
        let xs = (0..g.ny).all(|j| {
            if g.periodic_x {
                self.ux[g.xface(g.nx, j)] == self.ux[g.xface(0, j)]
            } else {
                self.ux[g.xface(0, j)] == 0.0 && self.ux[g.xface(g.nx, j)] == 0.0
            }
        });
        let ys =
            (0..g.nx).all(|i| self.uy[g.yface(i, 0)] == 0.0 && self.uy[g.yface(i, g.ny)] == 0.0);
        xs && ys
    }

    /// Copies the unknowns into a flat vector (x-faces first).
    pub fn pack(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.velocity_dofs()];
        self.pack_into(&mut out);
        out
    }

    pub fn pack_into(&self, out: &mut [f64]) {
        let g = self.grid;
        let mut k = 0;
        for j in 0..g.ny {
            for i in g.xface_columns() {
                out[k] = self.ux[g.xface(i, j)];
                k += 1;
            }
        }
        for j in g.yface_rows() {
            for i in 0..g.nx {
                out[k] = self.uy[g.yface(i, j)];
                k += 1;
            }
        }
    }

    /// Inverse of [`VelocityField::pack`].
    pub fn unpack(grid: &MacGrid, dofs: &[f64]) -> Self {
        let mut u = Self::zeros(grid);
        u.unpack_into(dofs);
        u
    }

    pub fn unpack_into(&mut self, dofs: &[f64]) {
        let g = self.grid;
        let mut k = 0;
        for j in 0..g.ny {
            for i in g.xface_columns() {
                self.ux[g.xface(i, j)] = dofs[k];
                k += 1;
            }
        }
        for j in g.yface_rows() {
            for i in 0..g.nx {
                self.uy[g.yface(i, j)] = dofs[k];
                k += 1;
            }
        }
        self.enforce_boundary();
    }

    /// Area-weighted inner product over the unknowns.
    pub fn dot(&self, other: &VelocityField) -> f64 {
        self.weighted_dot(other, |_| 1.0, |_| 1.0)
    }

    /// `sum_f V w_f a_f b_f` with separate weights on x- and y-faces.
    pub fn weighted_dot(
        &self,
        other: &VelocityField,
        wx: impl Fn(usize) -> f64,
        wy: impl Fn(usize) -> f64,
    ) -> f64 {
        let g = self.grid;
        let mut s = 0.0;
        for j in 0..g.ny {
            for i in g.xface_columns() {
                let k = g.xface(i, j);
                s += wx(k) * self.ux[k] * other.ux[k];
            }
        }
        for j in g.yface_rows() {
            for i in 0..g.nx {
                let k = g.yface(i, j);
                s += wy(k) * self.uy[k] * other.uy[k];
            }
        }
        s * g.cell_area()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.ux
            .iter()
            .chain(&self.uy)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.ux.iter().chain(&self.uy).all(|v| v.is_finite())
    }

    pub fn axpy(&mut self, a: f64, x: &VelocityField) {
        for (s, v) in self.ux.iter_mut().zip(&x.ux) {
            *s += a * v;
        }
        for (s, v) in self.uy.iter_mut().zip(&x.uy) {
            *s += a * v;
        }
    }

    pub fn scaled(&self, c: f64) -> VelocityField {
        VelocityField {
            grid: self.grid,
            ux: self.ux.iter().map(|v| c * v).collect(),
            uy: self.uy.iter().map(|v| c * v).collect(),
        }
    }

    pub fn sub(&self, other: &VelocityField) -> VelocityField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Velocity averaged to cell centers.
    pub fn cell_centered(&self) -> Vec<(f64, f64)> {
        let g = self.grid;
        let mut out = Vec::with_capacity(g.cell_count());
        for j in 0..g.ny {
            for i in 0..g.nx {
                let u = 0.5 * (self.ux[g.xface(i, j)] + self.ux[g.xface(i + 1, j)]);
                let v = 0.5 * (self.uy[g.yface(i, j)] + self.uy[g.yface(i, j + 1)]);
                out.push((u, v));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub grid: MacGrid,
    pub values: Vec<SymTensor2>,
}

impl TensorField {
    pub fn zeros(grid: &MacGrid) -> Self {
        Self {
            grid: *grid,
            values: vec![SymTensor2::ZERO; grid.cell_count()],
        }
    }

    /// `sqrt(sum_c V |t_c|^2)` with the second-invariant magnitude.
    pub fn norm_l2(&self) -> f64 {
        (self
            .values
            .iter()
            .map(SymTensor2::second_invariant_sq)
            .sum::<f64>()
            * self.grid.cell_area())
        .sqrt()
    }

    /// Area-weighted full contraction `sum_c V a_c : b_c`.
    pub fn dot(&self, other: &TensorField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.contract(b))
            .sum::<f64>()
            * self.grid.cell_area()
    }

    pub fn max_invariant(&self) -> f64 {
        self.values
            .iter()
            .fold(0.0, |m, t| m.max(t.second_invariant()))
    }

    pub fn sub(&self, other: &TensorField) -> TensorField {
        TensorField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| *a - *b)
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(SymTensor2::is_finite)
    }

    /// Pointwise product with a cell scalar.
    pub fn scaled_by(&self, s: &ScalarField) -> TensorField {
        TensorField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&s.values)
                .map(|(t, &c)| c * *t)
                .collect(),
        }
    }
}

/// Cell divergence of a face field.
pub fn divergence(u: &VelocityField) -> ScalarField {
    let g = u.grid;
    let mut d = ScalarField::zeros(&g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            d.values[g.cell(i, j)] = (u.ux[g.xface(i + 1, j)] - u.ux[g.xface(i, j)]) / g.hx
                + (u.uy[g.yface(i, j + 1)] - u.uy[g.yface(i, j)]) / g.hy;
        }
    }
    d
}

/// Face gradient of a cell field; wall-normal faces are zero.
pub fn gradient_to_faces(s: &ScalarField) -> VelocityField {
    let g = s.grid;
    let mut out = VelocityField::zeros(&g);
    for j in 0..g.ny {
        for i in g.xface_columns() {
            let left = g.left_cell(i).expect("interior x-face has a left cell");
            let right = i % g.nx;
            out.ux[g.xface(i, j)] = (s.values[g.cell(right, j)] - s.values[g.cell(left, j)]) / g.hx;
        }
    }
    for j in g.yface_rows() {
        for i in 0..g.nx {
            out.uy[g.yface(i, j)] = (s.values[g.cell(i, j)] - s.values[g.cell(i, j - 1)]) / g.hy;
        }
    }
    out.enforce_boundary();
    out
}

/// Neumann Laplacian `div(grad s)`.
pub fn laplacian(s: &ScalarField) -> ScalarField {
    divergence(&gradient_to_faces(s))
}

/// Shear rate `1/2 (du/dy + dv/dx)` at every node (mirror column included
/// for periodic grids).
pub fn node_shear(u: &VelocityField) -> Vec<f64> {
    let g = u.grid;
    let mut s = vec![0.0; g.node_len()];
    visit_shear_terms(&g, |_, _, node, face, c| {
        s[node] += c * match face {
            Face::X(k) => u.ux[k],
            Face::Y(k) => u.uy[k],
        };
    });
    if g.periodic_x {
        for j in 0..=g.ny {
            s[g.node(g.nx, j)] = s[g.node(0, j)];
        }
    }
    s
}

/// Gradient with respect to the face unknowns of `sum_n c_n s_n(u)`.
fn node_shear_adjoint(g: &MacGrid, coef: &[f64], out: &mut VelocityField) {
    visit_shear_terms(g, |_, _, node, face, c| match face {
        Face::X(k) => out.ux[k] += c * coef[node],
        Face::Y(k) => out.uy[k] += c * coef[node],
    });
}

/// Cell-centered strain rate `Du = 1/2 (grad u + grad u^T)`; the shear entry
/// is the average of the four surrounding node values.
pub fn strain_rate(u: &VelocityField) -> TensorField {
    let g = u.grid;
    let s = node_shear(u);
    let mut out = TensorField::zeros(&g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let xx = (u.ux[g.xface(i + 1, j)] - u.ux[g.xface(i, j)]) / g.hx;
            let yy = (u.uy[g.yface(i, j + 1)] - u.uy[g.yface(i, j)]) / g.hy;
            let xy = 0.25
                * (s[g.node(i, j)]
                    + s[g.node(i + 1, j)]
                    + s[g.node(i, j + 1)]
                    + s[g.node(i + 1, j + 1)]);
            out.values[g.cell(i, j)] = SymTensor2::new(xx, yy, xy);
        }
    }
    out
}

/// Adds `-(1/V) d/du sum_c V (t_xx du_xx + t_yy du_yy)` for the cell
/// normal strains, i.e. the normal-stress part of `Div t`.
fn add_normal_stress_divergence(g: &MacGrid, txx: &[f64], tyy: &[f64], out: &mut VelocityField) {
    for j in 0..g.ny {
        for i in g.xface_columns() {
            let left = g.left_cell(i).expect("interior x-face has a left cell");
            let right = i % g.nx;
            out.ux[g.xface(i, j)] += (txx[g.cell(right, j)] - txx[g.cell(left, j)]) / g.hx;
        }
    }
    for j in g.yface_rows() {
        for i in 0..g.nx {
            out.uy[g.yface(i, j)] += (tyy[g.cell(i, j)] - tyy[g.cell(i, j - 1)]) / g.hy;
        }
    }
}

/// Tensor divergence, defined as minus the adjoint of [`strain_rate`] so that
/// `<Div t, v> = -<t, Dv>` for every no-slip `v`.
pub fn tensor_divergence(t: &TensorField) -> VelocityField {
    let g = t.grid;
    let mut out = VelocityField::zeros(&g);
    let txx: Vec<f64> = t.values.iter().map(|v| v.xx).collect();
    let tyy: Vec<f64> = t.values.iter().map(|v| v.yy).collect();
    add_normal_stress_divergence(&g, &txx, &tyy, &mut out);

    // The shear part pairs 2 V t_xy with the average of four node shears.
    let mut coef = vec![0.0; g.node_len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let c = 0.5 * t.values[g.cell(i, j)].xy;
            let ir = if g.periodic_x && i + 1 == g.nx {
                0
            } else {
                i + 1
            };
            coef[g.node(i, j)] += c;
            coef[g.node(ir, j)] += c;
            coef[g.node(i, j + 1)] += c;
            coef[g.node(ir, j + 1)] += c;
        }
    }
    let mut shear = VelocityField::zeros(&g);
    node_shear_adjoint(&g, &coef, &mut shear);
    out.axpy(-1.0, &shear);
    out.enforce_boundary();
    out
}

/// Density interpolated to faces (arithmetic mean of the adjacent cells;
/// wall faces take the single neighbouring cell).
pub fn face_density(rho: &ScalarField) -> VelocityField {
    let g = rho.grid;
    let mut out = VelocityField::zeros(&g);
    for j in 0..g.ny {
        for i in 0..=g.nx {
            let right = if i < g.nx {
                Some(i)
            } else if g.periodic_x {
                Some(0)
            } else {
                None
            };
            let left = if i == g.nx {
                Some(g.nx - 1)
            } else {
                g.left_cell(i)
            };
            let v = match (left, right) {
                (Some(l), Some(r)) => 0.5 * (rho.values[g.cell(l, j)] + rho.values[g.cell(r, j)]),
                (Some(c), None) | (None, Some(c)) => rho.values[g.cell(c, j)],
                (None, None) => unreachable!(),
            };
            out.ux[g.xface(i, j)] = v;
        }
    }
    for j in 0..=g.ny {
        for i in 0..g.nx {
            let v = if j == 0 {
                rho.values[g.cell(i, 0)]
            } else if j == g.ny {
                rho.values[g.cell(i, g.ny - 1)]
            } else {
                0.5 * (rho.values[g.cell(i, j)] + rho.values[g.cell(i, j - 1)])
            };
            out.uy[g.yface(i, j)] = v;
        }
    }
    out
}

/// Mass flux `rho u` at faces.
pub fn mass_flux(rho: &ScalarField, u: &VelocityField) -> VelocityField {
    let rf = face_density(rho);
    VelocityField {
        grid: u.grid,
        ux: rf.ux.iter().zip(&u.ux).map(|(r, v)| r * v).collect(),
        uy: rf.uy.iter().zip(&u.uy).map(|(r, v)| r * v).collect(),
    }
}

/// Skew-symmetric convection `(w . grad) v + 1/2 v div w` for a face mass
/// flux `w` with zero wall-normal components.
///
/// Each velocity component has its own control volume; the flux through a
/// control-volume face is interpolated from `w`, and only the neighbour
/// value enters (`sum_e F_e v_nb / 2V`). Two neighbouring control volumes see
/// opposite fluxes through their shared face, which makes the operator
/// exactly skew-symmetric.
pub fn skew_convection(w: &VelocityField, v: &VelocityField) -> VelocityField {
    let mut out = VelocityField::zeros(&v.grid);
    add_skew_convection(w, v, &mut out);
    out
}

/// Adds [`skew_convection`] of `v` to the unknowns of `out`.
pub fn add_skew_convection(w: &VelocityField, v: &VelocityField, out: &mut VelocityField) {
    let g = v.grid;
    let scale_x = 0.5 / g.cell_area();
    for j in 0..g.ny {
        for i in g.xface_columns() {
            let il = g.left_cell(i).expect("interior x-face has a left cell");
            let ic = i % g.nx;
            let ip = if g.periodic_x { (i + 1) % g.nx } else { i + 1 };
            let mut acc = 0.0;
            // east / west through cell centers
            let fe = 0.5 * (w.ux[g.xface(ic, j)] + w.ux[g.xface(ic + 1, j)]) * g.hy;
            acc += fe * v.ux[g.xface(ip, j)];
            let fw = -0.5 * (w.ux[g.xface(il, j)] + w.ux[g.xface(il + 1, j)]) * g.hy;
            acc += fw * v.ux[g.xface(if i == 0 { g.nx - 1 } else { i - 1 }, j)];
            // north / south through nodes
            if j + 1 < g.ny {
                let fnorth = 0.5 * (w.uy[g.yface(il, j + 1)] + w.uy[g.yface(ic, j + 1)]) * g.hx;
                acc += fnorth * v.ux[g.xface(i, j + 1)];
            }
            if j > 0 {
                let fs = -0.5 * (w.uy[g.yface(il, j)] + w.uy[g.yface(ic, j)]) * g.hx;
                acc += fs * v.ux[g.xface(i, j - 1)];
            }
            out.ux[g.xface(i, j)] += scale_x * acc;
        }
    }
    for j in g.yface_rows() {
        for i in 0..g.nx {
            let mut acc = 0.0;
            let fnorth = 0.5 * (w.uy[g.yface(i, j)] + w.uy[g.yface(i, j + 1)]) * g.hx;
            acc += fnorth * v.uy[g.yface(i, j + 1)];
            let fs = -0.5 * (w.uy[g.yface(i, j - 1)] + w.uy[g.yface(i, j)]) * g.hx;
            acc += fs * v.uy[g.yface(i, j - 1)];
            if let Some(ir) = g.right_cell(i) {
                let fe = 0.5 * (w.ux[g.xface(i + 1, j - 1)] + w.ux[g.xface(i + 1, j)]) * g.hy;
                acc += fe * v.uy[g.yface(ir, j)];
            }
            if let Some(il) = g.left_cell(i) {
                let fw = -0.5 * (w.ux[g.xface(i, j - 1)] + w.ux[g.xface(i, j)]) * g.hy;
                acc += fw * v.uy[g.yface(il, j)];
            }
            out.uy[g.yface(i, j)] += scale_x * acc;
        }
    }
    out.enforce_boundary();
}

/// `B(rho u, v)` in skew form.
pub fn skew_advection(
    rho_conv: &ScalarField,
    u_conv: &VelocityField,
    v: &VelocityField,
) -> VelocityField {
    skew_convection(&mass_flux(rho_conv, u_conv), v)
}

/// Harmonic mean of the cells around each node (mirror column included).
pub fn node_harmonic_mean(mu: &ScalarField) -> Vec<f64> {
    let g = mu.grid;
    let mut out = vec![0.0; g.node_len()];
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let mut inv = 0.0;
            let mut n = 0;
            for cj in [j.checked_sub(1), (j < g.ny).then_some(j)]
                .into_iter()
                .flatten()
            {
                let cols = [
                    if i == 0 {
                        g.periodic_x.then(|| g.nx - 1)
                    } else {
                        Some(i - 1)
                    },
                    if i < g.nx {
                        Some(i)
                    } else if g.periodic_x {
                        Some(0)
                    } else {
                        None
                    },
                ];
                for ci in cols.into_iter().flatten() {
                    inv += 1.0 / mu.values[g.cell(ci, cj)];
                    n += 1;
                }
            }
            out[g.node(i, j)] = n as f64 / inv;
        }
    }
    out
}

/// Variable-viscosity diffusion `-Div(2 mu D v)` built from cell normal
/// strains and node shear strains, so that `<A v, v> = sum 2 mu D v : D v`.
pub struct ViscousOperator {
    grid: MacGrid,
    mu_cell: Vec<f64>,
    mu_node: Vec<f64>,
}

impl ViscousOperator {
    pub fn new(mu: &ScalarField) -> Self {
        Self {
            grid: mu.grid,
            mu_cell: mu.values.clone(),
            mu_node: node_harmonic_mean(mu),
        }
    }

    pub fn apply_into(&self, v: &VelocityField, out: &mut VelocityField) {
        let g = &self.grid;
        let mut txx = vec![0.0; g.cell_count()];
        let mut tyy = vec![0.0; g.cell_count()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.cell(i, j);
                let m = 2.0 * self.mu_cell[c];
                txx[c] = m * (v.ux[g.xface(i + 1, j)] - v.ux[g.xface(i, j)]) / g.hx;
                tyy[c] = m * (v.uy[g.yface(i, j + 1)] - v.uy[g.yface(i, j)]) / g.hy;
            }
        }
        out.ux.iter_mut().for_each(|x| *x = 0.0);
        out.uy.iter_mut().for_each(|x| *x = 0.0);
        add_normal_stress_divergence(g, &txx, &tyy, out);
        let s = node_shear(v);
        let inv_area = 1.0 / g.cell_area();
        let mut coef = vec![0.0; g.node_len()];
        for j in 0..=g.ny {
            for i in g.node_columns() {
                let n = g.node(i, j);
                coef[n] = 4.0 * self.mu_node[n] * s[n] * g.node_weight(i, j) * inv_area;
            }
        }
        // -Div has the opposite sign of the normal-stress divergence above.
        out.ux.iter_mut().for_each(|x| *x = -*x);
        out.uy.iter_mut().for_each(|x| *x = -*x);
        node_shear_adjoint(g, &coef, out);
        out.enforce_boundary();
    }

    pub fn apply(&self, v: &VelocityField) -> VelocityField {
        let mut out = VelocityField::zeros(&self.grid);
        self.apply_into(v, &mut out);
        out
    }

    /// Diagonal of the operator on every face (zero on wall faces).
    pub fn diagonal(&self) -> VelocityField {
        let g = &self.grid;
        let mut d = VelocityField::zeros(g);
        let (ax, ay) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
        for j in 0..g.ny {
            for i in g.xface_columns() {
                let l = g.left_cell(i).expect("interior x-face has a left cell");
                let r = i % g.nx;
                d.ux[g.xface(i, j)] +=
                    2.0 * (self.mu_cell[g.cell(l, j)] + self.mu_cell[g.cell(r, j)]) * ax;
            }
        }
        for j in g.yface_rows() {
            for i in 0..g.nx {
                d.uy[g.yface(i, j)] +=
                    2.0 * (self.mu_cell[g.cell(i, j)] + self.mu_cell[g.cell(i, j - 1)]) * ay;
            }
        }
        let inv_area = 1.0 / g.cell_area();
        visit_shear_terms(g, |i, j, node, face, c| {
            let v = 4.0 * self.mu_node[node] * g.node_weight(i, j) * inv_area * c * c;
            match face {
                Face::X(k) => d.ux[k] += v,
                Face::Y(k) => d.uy[k] += v,
            }
        });
        d.enforce_boundary();
        d
    }

    /// `||sqrt(2 mu) D v||^2` with the second-invariant norm, i.e. one half of
    /// `<A v, v>`.
    pub fn dissipation(&self, v: &VelocityField) -> f64 {
        let g = &self.grid;
        let mut e = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.cell(i, j);
                let xx = (v.ux[g.xface(i + 1, j)] - v.ux[g.xface(i, j)]) / g.hx;
                let yy = (v.uy[g.yface(i, j + 1)] - v.uy[g.yface(i, j)]) / g.hy;
                e += self.mu_cell[c] * (xx * xx + yy * yy) * g.cell_area();
            }
        }
        let s = node_shear(v);
        for j in 0..=g.ny {
            for i in g.node_columns() {
                let n = g.node(i, j);
                e += 2.0 * self.mu_node[n] * s[n] * s[n] * g.node_weight(i, j);
            }
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grids() -> Vec<MacGrid> {
        vec![
            MacGrid::new(7, 5, 1.3, 0.9).unwrap(),
            MacGrid::periodic_channel(6, 5, 1.0, 0.7).unwrap(),
        ]
    }

    fn random_velocity(g: &MacGrid, rng: &mut ChaCha8Rng) -> VelocityField {
        let mut u = VelocityField::zeros(g);
        u.ux.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        u.uy.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        u.enforce_boundary();
        u
    }

    fn random_scalar(g: &MacGrid, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ScalarField {
        let mut s = ScalarField::zeros(g);
        s.values.iter_mut().for_each(|v| *v = rng.gen_range(lo..hi));
        s
    }

    #[test]
    fn rejects_small_grid() {
        assert!(MacGrid::new(3, 8, 1.0, 1.0).is_err());
        assert!(MacGrid::new(8, 8, 0.0, 1.0).is_err());
    }

    #[test]
    fn divergence_of_affine_fields() {
        let g = MacGrid::new(8, 6, 1.0, 1.0).unwrap();
        let u = VelocityField::from_fn(&g, |x, _| x, |_, y| -y);
        let d = divergence(&u);
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                assert!(d.at(i, j).abs() < 1e-12);
            }
        }
        let u = VelocityField::from_fn(&g, |x, _| x, |_, _| 0.0);
        let d = divergence(&u);
        for j in 0..g.ny {
            for i in 1..g.nx - 1 {
                assert!((d.at(i, j) - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(divergence(&VelocityField::zeros(&g)).max_abs(), 0.0);
    }

    #[test]
    fn strain_rate_of_affine_fields() {
        let g = MacGrid::new(8, 8, 1.0, 1.0).unwrap();
        let a = 0.7;
        let u = VelocityField::from_fn(&g, |_, y| a * y, |_, _| 0.0);
        let d = strain_rate(&u);
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                let t = d.values[g.cell(i, j)];
                assert!((t.xy - a / 2.0).abs() < 1e-12);
                assert!(t.xx.abs() < 1e-12 && t.yy.abs() < 1e-12);
            }
        }
        let u = VelocityField::from_fn(&g, |x, _| x, |_, y| -y);
        let d = strain_rate(&u);
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                let t = d.values[g.cell(i, j)];
                assert!((t.xx - 1.0).abs() < 1e-12 && (t.yy + 1.0).abs() < 1e-12);
                assert!(t.xy.abs() < 1e-12);
            }
        }
        let z = strain_rate(&VelocityField::zeros(&g));
        assert!(z.values.iter().all(|t| *t == SymTensor2::ZERO));
    }

    #[test]
    fn gradient_examples() {
        let g = MacGrid::new(6, 6, 1.0, 1.0).unwrap();
        let c = gradient_to_faces(&ScalarField::constant(&g, 3.2));
        assert_eq!(c.max_abs(), 0.0);
        let s = ScalarField::from_fn(&g, |x, _| x);
        let gr = gradient_to_faces(&s);
        for j in 0..g.ny {
            for i in 1..g.nx {
                assert!((gr.ux[g.xface(i, j)] - 1.0).abs() < 1e-12);
            }
            assert_eq!(gr.ux[g.xface(0, j)], 0.0);
        }
    }

    #[test]
    fn gradient_divergence_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for g in grids() {
            for _ in 0..20 {
                let s = random_scalar(&g, &mut rng, -1.0, 1.0);
                let u = random_velocity(&g, &mut rng);
                let lhs = gradient_to_faces(&s).dot(&u);
                let rhs = -s.dot(&divergence(&u));
                assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn divergence_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for g in grids() {
            let u = random_velocity(&g, &mut rng);
            assert!(divergence(&u).integral().abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_divergence_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in grids() {
            for _ in 0..20 {
                let mut t = TensorField::zeros(&g);
                for v in &mut t.values {
                    *v = SymTensor2::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    );
                }
                let v = random_velocity(&g, &mut rng);
                let a = tensor_divergence(&t).dot(&v);
                let b = t.dot(&strain_rate(&v));
                assert!((a + b).abs() <= 1e-12 * a.abs().max(1.0), "{a} {b}");
            }
        }
    }

    #[test]
    fn skew_convection_vanishes_on_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for g in grids() {
            for _ in 0..20 {
                let rho = random_scalar(&g, &mut rng, 1.0, 3.0);
                let u = random_velocity(&g, &mut rng);
                let v = random_velocity(&g, &mut rng);
                let b = skew_advection(&rho, &u, &v).dot(&v);
                assert!(b.abs() <= 1e-13 * v.dot(&v), "{b}");
            }
        }
    }

    #[test]
    fn skew_convection_trivial_inputs() {
        let g = MacGrid::new(6, 6, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = random_scalar(&g, &mut rng, 1.0, 2.0);
        let v = random_velocity(&g, &mut rng);
        let z = VelocityField::zeros(&g);
        assert_eq!(skew_advection(&rho, &z, &v).max_abs(), 0.0);
        assert_eq!(skew_advection(&rho, &v, &z).max_abs(), 0.0);
    }

    #[test]
    fn viscous_operator_is_symmetric_and_matches_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for g in grids() {
            let mu = random_scalar(&g, &mut rng, 0.5, 4.0);
            let op = ViscousOperator::new(&mu);
            let a = random_velocity(&g, &mut rng);
            let b = random_velocity(&g, &mut rng);
            let ab = op.apply(&a).dot(&b);
            let ba = op.apply(&b).dot(&a);
            assert!((ab - ba).abs() < 1e-10 * ab.abs().max(1.0));
            let quad = op.apply(&a).dot(&a);
            assert!((quad - 2.0 * op.dissipation(&a)).abs() < 1e-10 * quad);

            // probe the diagonal with unit vectors
            let d = op.diagonal();
            let n = g.velocity_dofs();
            let dd = d.pack();
            for k in 0..n {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                let col = op.apply(&VelocityField::unpack(&g, &e)).pack();
                assert!((col[k] - dd[k]).abs() < 1e-9 * dd[k].abs(), "dof {k}");
            }
        }
    }

    #[test]
    fn viscous_operator_on_smooth_field() {
        // -Div(2 mu D u) with constant mu equals -mu lap u for solenoidal u.
        let g = MacGrid::new(32, 32, 1.0, 1.0).unwrap();
        let pi = std::f64::consts::PI;
        let mu = ScalarField::constant(&g, 0.3);
        let op = ViscousOperator::new(&mu);
        // stream function sin^2(pi x) sin^2(pi y)
        let psi = |x: f64, y: f64| (pi * x).sin().powi(2) * (pi * y).sin().powi(2);
        let ux =
            |x: f64, y: f64| 2.0 * pi * (pi * x).sin().powi(2) * (pi * y).sin() * (pi * y).cos();
        let _ = psi;
        let u = VelocityField::from_fn(&g, ux, |x, y| -ux(y, x));
        let r = op.apply(&u);
        // analytic lap of ux
        let lap = |x: f64, y: f64| {
            let sx = (pi * x).sin();
            let cx = (pi * x).cos();
            let s2y = (2.0 * pi * y).sin();
            // ux = pi sin^2(pi x) sin(2 pi y)
            pi * (2.0 * pi * pi * (cx * cx - sx * sx)) * s2y - pi * sx * sx * 4.0 * pi * pi * s2y
        };
        let mut err: f64 = 0.0;
        for j in 4..g.ny - 4 {
            for i in 4..g.nx - 4 {
                let (x, y) = g.xface_pos(i, j);
                err = err.max((r.ux[g.xface(i, j)] + 0.3 * lap(x, y)).abs());
            }
        }
        assert!(err < 0.05 * 0.3 * 8.0 * pi.powi(3), "err {err}");
    }
}
