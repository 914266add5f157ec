//! Seeded synthetic noise.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`), seeded with
//! `seed_from_u64`. Pixels are visited in row-major order. Gaussian and
//! salt-and-pepper noise consume a fixed number of draws per pixel, so a seed
//! fixes the noise field independently of the image content.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    Gaussian {
        mean: f64,
        variance: f64,
    },
    /// `Poisson(scale · u) / scale`
    Poisson {
        scale: f64,
    },
    /// A `density` fraction of pixels set to 0 or 1 with equal probability.
    SaltPepper {
        density: f64,
    },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseSpec::Gaussian { mean, variance } => {
                mean.is_finite() && variance >= 0.0 && variance.is_finite()
            }
            NoiseSpec::Poisson { scale } => scale > 0.0 && scale.is_finite(),
            NoiseSpec::SaltPepper { density } => (0.0..=1.0).contains(&density),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid noise parameters {self}"
            )))
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseSpec::Gaussian { mean, variance } => write!(f, "gaussian:{variance}:{mean}"),
            NoiseSpec::Poisson { scale } => write!(f, "poisson:{scale}"),
            NoiseSpec::SaltPepper { density } => write!(f, "salt_pepper:{density}"),
        }
    }
}

/// Parses `gaussian:VAR[:MEAN]`, `poisson:SCALE` or `salt_pepper:DENSITY`.
impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::Config(format!("noise spec {s:?} is missing a parameter")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("noise spec {s:?}: {e}")))
        };
        let spec = match parts[0] {
            "gaussian" => NoiseSpec::Gaussian {
                variance: num(1)?,
                mean: if parts.len() > 2 { num(2)? } else { 0.0 },
            },
            "poisson" => NoiseSpec::Poisson { scale: num(1)? },
            "salt_pepper" | "impulse" => NoiseSpec::SaltPepper { density: num(1)? },
            other => return Err(Error::Config(format!("unknown noise kind {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn add_noise(grid: &ImageGrid, spec: &NoiseSpec, seed: u64) -> Result<ImageGrid> {
    spec.validate()?;
    if grid.min() < 0.0 || grid.max() > 1.0 {
        return Err(Error::InvalidParameter(
            "noise expects intensities in [0, 1]".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out: Vec<f64> = match *spec {
        NoiseSpec::Gaussian { mean, variance } => {
            let normal = Normal::new(mean, variance.sqrt())
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            grid.values()
                .iter()
                .map(|&u| (u + normal.sample(&mut rng)).clamp(0.0, 1.0))
                .collect()
        }
        NoiseSpec::Poisson { scale } => grid
            .values()
            .iter()
            .map(|&u| {
                let rate = scale * u;
                if rate <= 0.0 {
                    return 0.0;
                }
                let k: f64 = Poisson::new(rate)
                    .expect("positive finite rate")
                    .sample(&mut rng);
                (k / scale).clamp(0.0, 1.0)
            })
            .collect(),
        NoiseSpec::SaltPepper { density } => grid
            .values()
            .iter()
            .map(|&u| {
                let hit: f64 = rng.random();
                let salt: bool = rng.random();
                if hit < density {
                    if salt {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    u
                }
            })
            .collect(),
    };
    Ok(grid.like(out))
}

/// `10 log₁₀(1 / MSE)` for intensities in `[0, 1]`.
pub fn psnr(u: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    let d = u.sub(reference)?;
    let mse = d.values().iter().map(|v| v * v).sum::<f64>() / d.len() as f64;
    Ok(10.0 * (1.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize) -> ImageGrid {
        ImageGrid::constant(n, n, 0.5).unwrap()
    }

    #[test]
    fn zero_strength_is_identity() {
        let g = ImageGrid::from_fn(20, 20, |x, y| 0.5 * x + 0.3 * y).unwrap();
        for spec in [
            NoiseSpec::Gaussian {
                mean: 0.0,
                variance: 0.0,
            },
            NoiseSpec::SaltPepper { density: 0.0 },
        ] {
            assert_eq!(add_noise(&g, &spec, 1).unwrap(), g);
        }
    }

    #[test]
    fn gaussian_sample_variance() {
        let spec = NoiseSpec::Gaussian {
            mean: 0.0,
            variance: 0.002,
        };
        let n = add_noise(&flat(120), &spec, 42).unwrap();
        let (_, var) = n.mean_variance();
        assert!((var / 0.002 - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn salt_and_pepper_fraction() {
        let n = add_noise(&flat(120), &NoiseSpec::SaltPepper { density: 0.1 }, 3).unwrap();
        let extreme = n.values().iter().filter(|&&v| v == 0.0 || v == 1.0).count();
        let frac = extreme as f64 / n.len() as f64;
        assert!((0.08..=0.12).contains(&frac), "{frac}");
    }

    #[test]
    fn poisson_mean_is_preserved() {
        let n = add_noise(&flat(100), &NoiseSpec::Poisson { scale: 100.0 }, 5).unwrap();
        let (mean, var) = n.mean_variance();
        assert!((mean - 0.5).abs() < 0.01);
        // Var(K/s) = u/s
        assert!((var / 0.005 - 1.0).abs() < 0.15, "{var}");
    }

    #[test]
    fn seeded_and_reproducible() {
        let spec = NoiseSpec::Gaussian {
            mean: 0.0,
            variance: 0.01,
        };
        let a = add_noise(&flat(16), &spec, 9).unwrap();
        assert_eq!(a, add_noise(&flat(16), &spec, 9).unwrap());
        assert_ne!(a, add_noise(&flat(16), &spec, 10).unwrap());
    }

    #[test]
    fn spec_round_trips_through_text() {
        for s in [
            "gaussian:0.002",
            "gaussian:0.02:0.1",
            "poisson:50",
            "salt_pepper:0.1",
        ] {
            let spec: NoiseSpec = s.parse().unwrap();
            assert_eq!(spec.to_string().parse::<NoiseSpec>().unwrap(), spec);
        }
        assert!("gaussian:-1".parse::<NoiseSpec>().is_err());
        assert!("speckle:1".parse::<NoiseSpec>().is_err());
    }

    #[test]
    fn psnr_of_known_error() {
        let a = flat(10);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&b, &a).unwrap() - 20.0).abs() < 1e-9);
    }
}
