// Denoise a synthetic image at a fixed weight and compare PSNR before and
// after, with the Dirichlet closure the learning problems use and with the
// Neumann closure meant for practical denoising.

use tvlearn::grid::Boundary;
use tvlearn::io::{add_noise, psnr, NoiseSpec, Phantom};
use tvlearn::ssn::{solve_gaussian, SolverConfig};

pub struct Denoised {
    pub psnr_noisy: f64,
    pub psnr_dirichlet: f64,
    pub psnr_neumann: f64,
    pub ssn_iterations: usize,
}

pub fn run_example() -> tvlearn::Result<Denoised> {
    let clean = Phantom::Shapes.render(48, 48)?;
    let noisy = add_noise(
        &clean,
        &NoiseSpec::Gaussian {
            mean: 0.0,
            variance: 0.005,
        },
        7,
    )?;
    let lambda = 400.0;

    let dirichlet = solve_gaussian(&noisy, lambda, &SolverConfig::default())?;
    let neumann_cfg = SolverConfig {
        boundary: Boundary::Neumann,
        ..Default::default()
    };
    let neumann = solve_gaussian(&noisy, lambda, &neumann_cfg)?;

    Ok(Denoised {
        psnr_noisy: psnr(&noisy, &clean)?,
        psnr_dirichlet: psnr(&dirichlet.u, &clean)?,
        psnr_neumann: psnr(&neumann.u, &clean)?,
        ssn_iterations: dirichlet.trace.iterations,
    })
}

#[allow(dead_code)]
fn main() -> tvlearn::Result<()> {
    let d = run_example()?;
    println!("noisy     {:.2} dB", d.psnr_noisy);
    println!(
        "dirichlet {:.2} dB ({} SSN iterations)",
        d.psnr_dirichlet, d.ssn_iterations
    );
    println!("neumann   {:.2} dB", d.psnr_neumann);
    Ok(())
}
