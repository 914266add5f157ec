//! Assembly of the scalar Newton systems
//!
//! ```text
//! A = diag(c) + diag(s) · (ε GᵀG + Gᵀ D G)
//! ```
//!
//! where `G` is the forward-difference gradient, `D` a 2×2 diffusion matrix per
//! node, `c` a diagonal reaction field and `s` an optional row scaling. With
//! row-major node numbering the cross terms of `GᵀDG` couple nodes `nx ± 1`
//! apart, so the band has half-width `nx`. Under Dirichlet closure the rows of
//! boundary nodes are replaced by the identity.

use crate::band::BandMatrix;
use crate::error::Result;
use crate::grid::{
    check_dims, div, forward_stencil, grad, is_boundary, laplacian, Boundary, ImageGrid,
    VectorField,
};
use crate::regularizer::Mat2;

pub struct OperatorParts<'a> {
    pub epsilon: f64,
    pub diffusion: &'a [Mat2],
    pub reaction: &'a [f64],
    pub row_scale: Option<&'a [f64]>,
    pub boundary: Boundary,
}

/// Assembles `A` on the grid of `like`.
pub fn assemble_operator(like: &ImageGrid, parts: &OperatorParts<'_>) -> BandMatrix {
    let (nx, ny) = like.dims();
    let n = nx * ny;
    assert_eq!(parts.diffusion.len(), n);
    assert_eq!(parts.reaction.len(), n);
    let mut a = BandMatrix::zeros(n, nx, nx);
    let dirichlet = parts.boundary == Boundary::Dirichlet;
    for (i, &c) in parts.reaction.iter().enumerate() {
        let c = if dirichlet && is_boundary(nx, ny, i) {
            1.0
        } else {
            c
        };
        a.add(i, i, c);
    }
    let eps = parts.epsilon;
    for cell in 0..n {
        let d = parts.diffusion[cell];
        let e = [[d[0][0] + eps, d[0][1]], [d[1][0], d[1][1] + eps]];
        let stencils = [
            forward_stencil(nx, ny, like.h(), parts.boundary, cell, 0),
            forward_stencil(nx, ny, like.h(), parts.boundary, cell, 1),
        ];
        for (ra, (sa, la)) in stencils.iter().enumerate() {
            for &(row, ca) in &sa[..*la] {
                let scale = parts.row_scale.map_or(1.0, |s| s[row]);
                for (cb, (sb, lb)) in stencils.iter().enumerate() {
                    let coef = e[ra][cb];
                    if coef == 0.0 {
                        continue;
                    }
                    for &(col, cc) in &sb[..*lb] {
                        a.add(row, col, scale * ca * coef * cc);
                    }
                }
            }
        }
    }
    a
}

/// Matrix-free application of the same operator, built from [`grad`] and
/// [`div`].
pub fn apply_operator(v: &ImageGrid, parts: &OperatorParts<'_>) -> Result<ImageGrid> {
    let bc = parts.boundary;
    let g = grad(v, bc);
    let mut flux = VectorField::zeros_like(v);
    for i in 0..v.len() {
        let d = parts.diffusion[i];
        let z = g.at(i);
        flux.set(
            i,
            [
                d[0][0] * z[0] + d[0][1] * z[1],
                d[1][0] * z[0] + d[1][1] * z[1],
            ],
        );
    }
    let dv = div(&flux, bc);
    let lap = laplacian(v, bc);
    check_dims(v.dims(), dv.dims())?;
    let (nx, ny) = v.dims();
    let out = (0..v.len())
        .map(|i| {
            if bc == Boundary::Dirichlet && is_boundary(nx, ny, i) {
                return v.values()[i];
            }
            let s = parts.row_scale.map_or(1.0, |s| s[i]);
            parts.reaction[i] * v.values()[i]
                + s * (-parts.epsilon * lap.values()[i] - dv.values()[i])
        })
        .collect();
    Ok(v.like(out))
}
