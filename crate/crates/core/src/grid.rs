//! Discrete calculus on a uniform pixel grid.
//!
//! Images live on an `nx × ny` node grid with spacing `h`; the outermost ring
//! of nodes sits on the boundary of the unit domain. The gradient uses forward
//! differences and the divergence is defined as its exact negative adjoint with
//! respect to the quadrature-weighted inner product `(a, b) = h² Σ aᵢ bᵢ`, so
//! that `(∇u, q) = -(u, div q)` holds to round-off for every boundary closure.
//!
//! Under [`Boundary::Dirichlet`] the boundary nodes are treated as zero:
//! `grad` reads `u` through the interior mask and `div` writes through it.

use crate::error::{Error, Result};

/// Boundary closure used by [`grad`] and [`div`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Homogeneous Dirichlet: the image vanishes on the boundary nodes.
    #[default]
    Dirichlet,
    /// Homogeneous Neumann: the normal difference across the outer edge is zero.
    Neumann,
}

/// A scalar field sampled on the nodes of a uniform grid, stored row-major
/// (`values[iy * nx + ix]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    nx: usize,
    ny: usize,
    h: f64,
    values: Vec<f64>,
}

impl ImageGrid {
    /// Builds a grid from row-major values, deriving `h = 1/(min(nx, ny) - 1)`.
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidParameter(format!(
                "grid must be at least 3x3, got {nx}x{ny}"
            )));
        }
        let h = 1.0 / (nx.min(ny) - 1) as f64;
        Self::with_spacing(nx, ny, h, values)
    }

    pub fn with_spacing(nx: usize, ny: usize, h: f64, values: Vec<f64>) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidParameter(format!(
                "grid must be at least 3x3, got {nx}x{ny}"
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid spacing must be positive, got {h}"
            )));
        }
        if values.len() != nx * ny {
            return Err(Error::InvalidParameter(format!(
                "expected {} values for a {nx}x{ny} grid, got {}",
                nx * ny,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(Self { nx, ny, h, values })
    }

    pub fn zeros(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, vec![0.0; nx * ny])
    }

    pub fn constant(nx: usize, ny: usize, value: f64) -> Result<Self> {
        Self::new(nx, ny, vec![value; nx * ny])
    }

    /// Samples `f(x, y)` at the node coordinates `(ix·h, iy·h)`.
    pub fn from_fn(nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let h = 1.0 / (nx.min(ny).max(2) - 1) as f64;
        let mut values = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                values.push(f(ix as f64 * h, iy as f64 * h));
            }
        }
        Self::new(nx, ny, values)
    }

    /// A grid with the same shape and spacing but new values.
    pub fn like(&self, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            self.len(),
            "value count does not match grid shape"
        );
        Self {
            nx: self.nx,
            ny: self.ny,
            h: self.h,
            values,
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.like(vec![0.0; self.len()])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        self.values[iy * self.nx + ix] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.like(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_dims(self.dims(), other.dims())?;
        Ok(self.like(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        check_dims(self.dims(), other.dims())?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// The `nx × ny` window with corner `(x0, y0)`, as a grid of its own
    /// (spacing `1/(min(nx, ny) - 1)`).
    pub fn crop(&self, x0: usize, y0: usize, nx: usize, ny: usize) -> Result<Self> {
        if x0 + nx > self.nx || y0 + ny > self.ny {
            return Err(Error::InvalidParameter(format!(
                "window {nx}x{ny} at ({x0}, {y0}) exceeds {}x{}",
                self.nx, self.ny
            )));
        }
        let values = (y0..y0 + ny)
            .flat_map(|iy| {
                self.values[iy * self.nx + x0..iy * self.nx + x0 + nx]
                    .iter()
                    .copied()
            })
            .collect();
        Self::new(nx, ny, values)
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

    /// Sample mean and (population) variance of the pixel values.
    pub fn mean_variance(&self) -> (f64, f64) {
        let n = self.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }
}

/// A two-component field on the same nodes as an [`ImageGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    nx: usize,
    ny: usize,
    h: f64,
    pub qx: Vec<f64>,
    pub qy: Vec<f64>,
}

impl VectorField {
    pub fn zeros_like(u: &ImageGrid) -> Self {
        Self {
            nx: u.nx,
            ny: u.ny,
            h: u.h,
            qx: vec![0.0; u.len()],
            qy: vec![0.0; u.len()],
        }
    }

    pub fn from_components(like: &ImageGrid, qx: Vec<f64>, qy: Vec<f64>) -> Result<Self> {
        if qx.len() != like.len() || qy.len() != like.len() {
            return Err(Error::DimensionMismatch {
                expected: like.dims(),
                found: (qx.len(), qy.len()),
            });
        }
        Ok(Self {
            nx: like.nx,
            ny: like.ny,
            h: like.h,
            qx,
            qy,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.qx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qx.is_empty()
    }

    pub fn at(&self, i: usize) -> [f64; 2] {
        [self.qx[i], self.qy[i]]
    }

    pub fn set(&mut self, i: usize, v: [f64; 2]) {
        self.qx[i] = v[0];
        self.qy[i] = v[1];
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> Vec<f64> {
        self.qx
            .iter()
            .zip(&self.qy)
            .map(|(a, b)| a.hypot(*b))
            .collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitude().into_iter().fold(0.0, f64::max)
    }
}

pub(crate) fn check_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Forward-difference gradient scaled by `1/h`.
pub fn grad(u: &ImageGrid, bc: Boundary) -> VectorField {
    let (nx, ny) = u.dims();
    let inv_h = 1.0 / u.h;
    let masked;
    let v = match bc {
        Boundary::Dirichlet => {
            masked = masked_values(u);
            &masked
        }
        Boundary::Neumann => &u.values,
    };
    let mut q = VectorField::zeros_like(u);
    for iy in 0..ny {
        for ix in 0..nx {
            let i = iy * nx + ix;
            if ix + 1 < nx {
                q.qx[i] = (v[i + 1] - v[i]) * inv_h;
            }
            if iy + 1 < ny {
                q.qy[i] = (v[i + nx] - v[i]) * inv_h;
            }
        }
    }
    q
}

/// Backward-difference divergence, the negative adjoint of [`grad`] under the
/// same boundary closure.
pub fn div(q: &VectorField, bc: Boundary) -> ImageGrid {
    let (nx, ny) = q.dims();
    let inv_h = 1.0 / q.h;
    let mut out = vec![0.0; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let i = iy * nx + ix;
            if bc == Boundary::Dirichlet && is_boundary(nx, ny, i) {
                continue;
            }
            // the last forward difference in each direction is identically zero
            let own_x = if ix + 1 < nx { q.qx[i] } else { 0.0 };
            let own_y = if iy + 1 < ny { q.qy[i] } else { 0.0 };
            let west = if ix > 0 { q.qx[i - 1] } else { 0.0 };
            let south = if iy > 0 { q.qy[i - nx] } else { 0.0 };
            out[i] = (own_x - west + own_y - south) * inv_h;
        }
    }
    ImageGrid {
        nx,
        ny,
        h: q.h,
        values: out,
    }
}

/// True for nodes on the outer ring of the grid.
#[inline]
pub fn is_boundary(nx: usize, ny: usize, i: usize) -> bool {
    let (ix, iy) = (i % nx, i / nx);
    ix == 0 || iy == 0 || ix + 1 == nx || iy + 1 == ny
}

fn masked_values(u: &ImageGrid) -> Vec<f64> {
    let (nx, ny) = u.dims();
    u.values
        .iter()
        .enumerate()
        .map(|(i, &v)| if is_boundary(nx, ny, i) { 0.0 } else { v })
        .collect()
}

/// Zeroes the boundary ring under Dirichlet closure; a no-op for Neumann.
pub fn apply_boundary(u: &mut ImageGrid, bc: Boundary) {
    if bc == Boundary::Dirichlet {
        let (nx, ny) = u.dims();
        for (i, v) in u.values.iter_mut().enumerate() {
            if is_boundary(nx, ny, i) {
                *v = 0.0;
            }
        }
    }
}

/// `div(grad u)`, a symmetric negative semidefinite operator.
pub fn laplacian(u: &ImageGrid, bc: Boundary) -> ImageGrid {
    div(&grad(u, bc), bc)
}

/// Quadrature-weighted inner product `h² Σ aᵢ bᵢ`.
pub fn inner(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    Ok(a.h * a.h * dot(&a.values, &b.values))
}

pub fn inner_vec(a: &VectorField, b: &VectorField) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    Ok(a.h * a.h * (dot(&a.qx, &b.qx) + dot(&a.qy, &b.qy)))
}

pub fn norm_l2(a: &ImageGrid) -> f64 {
    (a.h * a.h * dot(&a.values, &a.values)).sqrt()
}

pub fn norm_inf(a: &ImageGrid) -> f64 {
    a.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nonzero coefficients of the forward difference in direction `axis`
/// (0 = x, 1 = y) evaluated at node `i`, as `(node, coefficient)` pairs.
/// Boundary nodes are dropped under Dirichlet closure.
pub(crate) fn forward_stencil(
    nx: usize,
    ny: usize,
    h: f64,
    bc: Boundary,
    i: usize,
    axis: usize,
) -> ([(usize, f64); 2], usize) {
    let (ix, iy) = (i % nx, i / nx);
    let inv_h = 1.0 / h;
    let (inside, step) = if axis == 0 {
        (ix + 1 < nx, 1)
    } else {
        (iy + 1 < ny, nx)
    };
    let mut out = [(0, 0.0); 2];
    let mut len = 0;
    if !inside {
        return (out, 0);
    }
    let keep = |j: usize| bc == Boundary::Neumann || !is_boundary(nx, ny, j);
    if keep(i + step) {
        out[len] = (i + step, inv_h);
        len += 1;
    }
    if keep(i) {
        out[len] = (i, -inv_h);
        len += 1;
    }
    (out, len)
}
