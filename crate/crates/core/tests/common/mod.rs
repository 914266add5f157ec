//! Oracles and fixtures shared by the integration suites. The oracles are
//! written against the discrete energy directly and share no code with the
//! solvers under test.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvlearn::grid::ImageGrid;
use tvlearn::io::{add_noise, NoiseSpec, Phantom};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid(rng: &mut ChaCha8Rng, nx: usize, ny: usize, lo: f64, hi: f64) -> ImageGrid {
    let v = (0..nx * ny).map(|_| rng.random_range(lo..hi)).collect();
    ImageGrid::new(nx, ny, v).unwrap()
}

/// `10^U(lo, hi)`.
pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo..hi))
}

pub fn shapes(n: usize) -> ImageGrid {
    Phantom::Shapes.render(n, n).unwrap()
}

pub fn gaussian_noisy(clean: &ImageGrid, variance: f64, seed: u64) -> ImageGrid {
    add_noise(
        clean,
        &NoiseSpec::Gaussian {
            mean: 0.0,
            variance,
        },
        seed,
    )
    .unwrap()
}

/// Poisson counts at scale 200 followed by Gaussian noise of variance 5e-4.
pub fn gauss_poisson_noisy(clean: &ImageGrid, seed: u64) -> ImageGrid {
    let p = add_noise(clean, &NoiseSpec::Poisson { scale: 200.0 }, seed).unwrap();
    add_noise(
        &p,
        &NoiseSpec::Gaussian {
            mean: 0.0,
            variance: 5e-4,
        },
        seed + 1,
    )
    .unwrap()
}

/// Minimizer of the Dirichlet Gaussian denoising energy
///
/// ```text
/// E(u) = h² Σ [ε/2 |Du|² + ψ_γ(Du)] + λ h²/2 Σ (u - f)²,   u = 0 on the ring
/// ```
///
/// with `Du` forward differences over `h` and `ψ_γ` the max-form Huber
/// function, by projected gradient descent with step `1/L`. Stops when the
/// largest component of `∇E / h²` drops below `tol`.
pub fn pgd_gaussian(
    f: &ImageGrid,
    lambda: f64,
    gamma: f64,
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> (ImageGrid, f64) {
    let (nx, ny) = f.dims();
    let h = f.h();
    let ring = |ix: usize, iy: usize| ix == 0 || iy == 0 || ix + 1 == nx || iy + 1 == ny;
    let idx = |ix: usize, iy: usize| iy * nx + ix;
    let mut u: Vec<f64> = (0..nx * ny)
        .map(|i| {
            if ring(i % nx, i / nx) {
                0.0
            } else {
                f.values()[i]
            }
        })
        .collect();
    // ‖DᵀD‖ ≤ 8/h², the Huber Hessian is bounded by γ
    let lip = 8.0 * (gamma + eps) + lambda * h * h;
    let step = 1.0 / lip;
    let mut g = vec![0.0; nx * ny];
    let mut worst = f64::INFINITY;
    for _ in 0..max_iter {
        g.iter_mut().for_each(|v| *v = 0.0);
        for iy in 0..ny {
            for ix in 0..nx {
                let i = idx(ix, iy);
                let zx = if ix + 1 < nx {
                    (u[i + 1] - u[i]) / h
                } else {
                    0.0
                };
                let zy = if iy + 1 < ny {
                    (u[i + nx] - u[i]) / h
                } else {
                    0.0
                };
                let r = zx.hypot(zy);
                // ∂ψ/∂z = γz/max(1, γ|z|), plus the elliptic term
                let s = gamma / (gamma * r).max(1.0) + eps;
                let (wx, wy) = (s * zx, s * zy);
                // h² · (w · ∂z/∂u) with ∂z/∂u = ±1/h
                if ix + 1 < nx {
                    g[i + 1] += h * wx;
                    g[i] -= h * wx;
                }
                if iy + 1 < ny {
                    g[i + nx] += h * wy;
                    g[i] -= h * wy;
                }
            }
        }
        worst = 0.0;
        for i in 0..nx * ny {
            if ring(i % nx, i / nx) {
                continue;
            }
            g[i] += lambda * h * h * (u[i] - f.values()[i]);
            worst = f64::max(worst, (g[i] / (h * h)).abs());
        }
        if worst <= tol {
            break;
        }
        for i in 0..nx * ny {
            if !ring(i % nx, i / nx) {
                u[i] -= step * g[i];
            }
        }
    }
    (f.like(u), worst)
}
