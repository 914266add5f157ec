// Learned weight against noise level and against image size. Sizes here are
// small so the example finishes quickly; the command-line `sweep-mesh`
// defaults to 60..85.

use tvlearn::bilevel::BilevelConfig;
use tvlearn::experiment::{mesh_sweep, noise_sweep, relative_span, MeshMode};
use tvlearn::io::{NoiseSpec, Phantom};
use tvlearn::ssn::{SolverConfig, StateModel};

pub struct Sweeps {
    /// `(variance, λ*)`
    pub noise: Vec<(f64, f64)>,
    /// `(size, λ*)`
    pub mesh: Vec<(usize, f64)>,
    pub mesh_span: f64,
}

pub fn run_example() -> tvlearn::Result<Sweeps> {
    let (solver, cfg) = (SolverConfig::default(), BilevelConfig::default());
    let variances = [0.002, 0.01, 0.02];
    let specs: Vec<NoiseSpec> = variances
        .iter()
        .map(|&variance| NoiseSpec::Gaussian {
            mean: 0.0,
            variance,
        })
        .collect();
    let clean = Phantom::Shapes.render(32, 32)?;
    let by_noise = noise_sweep(
        StateModel::Gaussian,
        &solver,
        &cfg,
        &clean,
        &specs,
        1,
        &mut |_| {},
    )?;

    let by_size = mesh_sweep(
        StateModel::Gaussian,
        &solver,
        &cfg,
        Phantom::Mosaic,
        &[24, 28, 32],
        &specs[0],
        1,
        MeshMode::Crop,
        &mut |_| {},
    )?;
    Ok(Sweeps {
        noise: variances
            .iter()
            .zip(&by_noise)
            .map(|(&v, p)| (v, p.lambda[0]))
            .collect(),
        mesh: by_size.iter().map(|p| (p.size, p.lambda[0])).collect(),
        mesh_span: relative_span(&by_size),
    })
}

#[allow(dead_code)]
fn main() -> tvlearn::Result<()> {
    let s = run_example()?;
    for (v, l) in &s.noise {
        println!("variance {v:<6} lambda* {l:.2}");
    }
    for (n, l) in &s.mesh {
        println!("size {n:<3} lambda* {l:.2}");
    }
    println!("relative span over sizes {:.3}", s.mesh_span);
    Ok(())
}
