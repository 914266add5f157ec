//! Drivers shared by the command-line tool and the test suites: weight
//! sweeps over image size and noise level, and the adjoint gradient check.

use crate::bilevel::{
    average_gradient, fd_gradient, train_on_set, BfgsOutcome, BilevelConfig, FdScheme,
    LearningProblem, Objective, TrainingPair,
};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::io::noise::{add_noise, psnr, NoiseSpec};
use crate::io::phantom::Phantom;
use crate::ssn::{SolverConfig, StateModel};

/// How the images of a mesh sweep are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeshMode {
    /// Centered windows of one noisy image rendered at the largest size:
    /// pixel statistics stay fixed while the number of pixels grows.
    #[default]
    Crop,
    /// The scene re-rendered at each size with fresh noise.
    Resample,
}

impl MeshMode {
    pub fn name(&self) -> &'static str {
        match self {
            MeshMode::Crop => "crop",
            MeshMode::Resample => "resample",
        }
    }
}

impl std::str::FromStr for MeshMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crop" => Ok(MeshMode::Crop),
            "resample" => Ok(MeshMode::Resample),
            other => Err(Error::Config(format!("unknown mesh mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// Image side length for mesh sweeps, sweep index otherwise.
    pub size: usize,
    pub h: f64,
    pub noise: NoiseSpec,
    pub lambda: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
}

fn point(
    size: usize,
    noise: NoiseSpec,
    pair: &TrainingPair,
    out: &BfgsOutcome,
    model: StateModel,
    solver: &SolverConfig,
    beta: f64,
) -> Result<SweepPoint> {
    let pb = LearningProblem::single(model, pair.noisy.clone(), pair.clean.clone(), *solver, beta)?;
    let (_, states) = pb.reduced_cost(&out.lambda)?;
    Ok(SweepPoint {
        size,
        h: pair.noisy.h(),
        noise,
        lambda: out.lambda.clone(),
        cost: out.cost,
        iterations: out.trace.iterates.len() - 1,
        converged: out.trace.converged,
        psnr_noisy: psnr(&pair.noisy, &pair.clean)?,
        psnr_denoised: psnr(&states[0], &pair.clean)?,
    })
}

/// Learned weights for square images of the given side lengths.
#[allow(clippy::too_many_arguments)]
pub fn mesh_sweep(
    model: StateModel,
    solver: &SolverConfig,
    cfg: &BilevelConfig,
    phantom: Phantom,
    sizes: &[usize],
    noise: &NoiseSpec,
    seed: u64,
    mode: MeshMode,
    observe: &mut dyn FnMut(&SweepPoint),
) -> Result<Vec<SweepPoint>> {
    let largest = *sizes
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidParameter("no sizes to sweep".into()))?;
    let master = phantom.render(largest, largest)?;
    let master_noisy = add_noise(&master, noise, seed)?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let pair = match mode {
            MeshMode::Crop => {
                let o = (largest - n) / 2;
                TrainingPair {
                    noisy: master_noisy.crop(o, o, n, n)?,
                    clean: master.crop(o, o, n, n)?,
                }
            }
            MeshMode::Resample => {
                let clean = phantom.render(n, n)?;
                TrainingPair {
                    noisy: add_noise(&clean, noise, seed)?,
                    clean,
                }
            }
        };
        let out = train_on_set(model, vec![pair.clone()], solver, cfg)?;
        let p = point(n, *noise, &pair, &out, model, solver, cfg.beta)?;
        observe(&p);
        rows.push(p);
    }
    Ok(rows)
}

/// Learned weights for one clean image under each noise setting, all with
/// the same seed.
pub fn noise_sweep(
    model: StateModel,
    solver: &SolverConfig,
    cfg: &BilevelConfig,
    clean: &ImageGrid,
    noises: &[NoiseSpec],
    seed: u64,
    observe: &mut dyn FnMut(&SweepPoint),
) -> Result<Vec<SweepPoint>> {
    noises
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let pair = TrainingPair {
                noisy: add_noise(clean, spec, seed)?,
                clean: clean.clone(),
            };
            let out = train_on_set(model, vec![pair.clone()], solver, cfg)?;
            let p = point(k, *spec, &pair, &out, model, solver, cfg.beta)?;
            observe(&p);
            Ok(p)
        })
        .collect()
}

/// `(max - min) / min` of the first weight over the sweep.
pub fn relative_span(rows: &[SweepPoint]) -> f64 {
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.lambda[0]), hi.max(r.lambda[0]))
        });
    (hi - lo) / lo
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub lambda: Vec<f64>,
    pub adjoint: Vec<f64>,
    pub fd: Vec<f64>,
    /// `‖adjoint - fd‖ / ‖fd‖`
    pub rel_error: f64,
}

/// Adjoint against central-difference reduced gradients at each weight
/// vector.
pub fn gradient_check(pb: &mut LearningProblem, lambdas: &[Vec<f64>]) -> Result<Vec<GradCheckRow>> {
    lambdas
        .iter()
        .map(|lambda| {
            pb.forget_states();
            let f0 = pb.value(lambda, true)?.value;
            let adjoint = average_gradient(&pb.adjoint(lambda)?);
            let (fd, _) = fd_gradient(pb, lambda, f0, FdScheme::Central)?;
            let diff = adjoint
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
            Ok(GradCheckRow {
                lambda: lambda.clone(),
                adjoint,
                fd,
                rel_error: if norm > 0.0 { diff / norm } else { diff },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_sweep_shares_the_noise_field() {
        let solver = SolverConfig::default();
        let cfg = BilevelConfig {
            max_iter: 2,
            lambda0: Some(vec![200.0]),
            ..Default::default()
        };
        let noise = NoiseSpec::Gaussian {
            mean: 0.0,
            variance: 0.002,
        };
        let rows = mesh_sweep(
            StateModel::Gaussian,
            &solver,
            &cfg,
            Phantom::Mosaic,
            &[12, 16],
            &noise,
            3,
            MeshMode::Crop,
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].size, 12);
        assert!((rows[0].h - 1.0 / 11.0).abs() < 1e-15);
        assert!(rows.iter().all(|r| r.lambda[0] >= 0.0));
    }

    #[test]
    fn span_of_constant_rows_is_zero() {
        let r = SweepPoint {
            size: 1,
            h: 0.1,
            noise: NoiseSpec::Poisson { scale: 1.0 },
            lambda: vec![5.0],
            cost: 0.0,
            iterations: 0,
            converged: true,
            psnr_noisy: 0.0,
            psnr_denoised: 0.0,
        };
        assert_eq!(relative_span(&[r.clone(), r.clone()]), 0.0);
        let mut s = r.clone();
        s.lambda = vec![7.5];
        assert!((relative_span(&[r, s]) - 0.5).abs() < 1e-15);
    }
}
