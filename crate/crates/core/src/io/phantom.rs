//! Synthetic test images, defined on the unit square and sampled at the grid
//! nodes so that the same scene can be rendered at any resolution.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phantom {
    /// Piecewise-constant rectangle, disc and triangle on a dark background.
    Shapes,
    /// A smooth bilinear ramp with a bright disc.
    Ramp,
    /// Concentric squares.
    Squares,
    /// A 28 × 28 checkerboard of tiles with pseudo-random gray levels in
    /// `[0.15, 0.85]`. Its statistics do not depend on the window, so crops
    /// of different sizes see the same kind of scene.
    Mosaic,
}

pub const MOSAIC_TILES: usize = 28;

impl Phantom {
    pub const ALL: [Phantom; 4] = [
        Phantom::Shapes,
        Phantom::Ramp,
        Phantom::Squares,
        Phantom::Mosaic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Phantom::Shapes => "shapes",
            Phantom::Ramp => "ramp",
            Phantom::Squares => "squares",
            Phantom::Mosaic => "mosaic",
        }
    }

    /// Intensity at `(x, y) ∈ [0, 1]²`.
    pub fn intensity(&self, x: f64, y: f64) -> f64 {
        match self {
            Phantom::Shapes => {
                let in_rect = (0.15..=0.45).contains(&x) && (0.2..=0.75).contains(&y);
                let in_disc = (x - 0.68).powi(2) + (y - 0.35).powi(2) <= 0.15 * 0.15;
                // triangle with vertices (0.55,0.6), (0.85,0.6), (0.7,0.88)
                let in_tri = y >= 0.6
                    && (y - 0.6) <= 1.8667 * (x - 0.55)
                    && (y - 0.6) <= 1.8667 * (0.85 - x);
                if in_rect {
                    0.8
                } else if in_disc {
                    0.55
                } else if in_tri {
                    0.95
                } else {
                    0.15
                }
            }
            Phantom::Ramp => {
                let disc = (x - 0.45).powi(2) + (y - 0.5).powi(2) <= 0.2 * 0.2;
                let base = 0.15 + 0.5 * x * y;
                if disc {
                    (base + 0.35).min(1.0)
                } else {
                    base
                }
            }
            Phantom::Squares => {
                let d = (x - 0.5).abs().max((y - 0.5).abs());
                if d <= 0.12 {
                    0.9
                } else if d <= 0.25 {
                    0.5
                } else if d <= 0.38 {
                    0.75
                } else {
                    0.2
                }
            }
            Phantom::Mosaic => {
                let t = MOSAIC_TILES as f64;
                // the slack keeps nodes on tile edges in the upper tile
                let tile = |c: f64| ((c * t + 1e-9).floor() as u64).min(MOSAIC_TILES as u64 - 1);
                let r = splitmix64(tile(x) * 0x9E37_79B9 + tile(y));
                0.15 + 0.7 * ((r >> 11) as f64 / (1u64 << 53) as f64)
            }
        }
    }

    pub fn render(&self, nx: usize, ny: usize) -> Result<ImageGrid> {
        ImageGrid::from_fn(nx, ny, |x, y| self.intensity(x, y))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl FromStr for Phantom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Phantom::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown phantom {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantoms_lie_in_unit_range_and_have_contrast() {
        for p in Phantom::ALL {
            let g = p.render(40, 40).unwrap();
            assert!(g.min() >= 0.0 && g.max() <= 1.0);
            assert!(g.max() - g.min() > 0.3, "{}", p.name());
            assert_eq!(p.name().parse::<Phantom>().unwrap(), p);
        }
        assert!("nope".parse::<Phantom>().is_err());
    }

    #[test]
    fn mosaic_tiles_are_three_nodes_wide_at_85() {
        let g = Phantom::Mosaic.render(85, 85).unwrap();
        // the last tile also holds the closing node x = 1
        for ix in 0..83 {
            let same = g.get(ix, 10) == g.get(ix + 1, 10);
            assert_eq!(same, ix % 3 != 2, "{ix}");
        }
    }

    #[test]
    fn rendering_is_resolution_independent_at_shared_nodes() {
        // nodes of the 21-grid are every other node of the 41-grid
        let a = Phantom::Ramp.render(21, 21).unwrap();
        let b = Phantom::Ramp.render(41, 41).unwrap();
        for iy in 0..21 {
            for ix in 0..21 {
                assert!((a.get(ix, iy) - b.get(2 * ix, 2 * iy)).abs() < 1e-12);
            }
        }
    }
}
