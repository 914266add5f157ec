// Image and trace files: write a noisy phantom as 16-bit PNG and 8-bit PGM,
// read both back, and save a solver trace as CSV with its provenance header.

use tvlearn::io::config::Config;
use tvlearn::io::trace::{ssn_table, CsvHeader};
use tvlearn::io::{add_noise, read_image, write_image, BitDepth, NoiseSpec, Phantom};
use tvlearn::ssn::{solve_gaussian, SolverConfig};

pub struct RoundTrip {
    /// Largest pixel error after the 16-bit PNG round trip.
    pub png_error: f64,
    /// Largest pixel error after the 8-bit PGM round trip.
    pub pgm_error: f64,
    pub trace_csv: String,
}

pub fn run_example() -> tvlearn::Result<RoundTrip> {
    let dir = std::env::temp_dir().join(format!("tvlearn-image-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let clean = Phantom::Ramp.render(20, 20)?;
    let noisy = add_noise(&clean, &NoiseSpec::Poisson { scale: 100.0 }, 2)?;

    let max_err = |a: &tvlearn::grid::ImageGrid, b: &tvlearn::grid::ImageGrid| {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let png = dir.join("noisy.png");
    let pgm = dir.join("noisy.pgm");
    write_image(&noisy, &png, BitDepth::Sixteen)?;
    write_image(&noisy, &pgm, BitDepth::Eight)?;
    let png_error = max_err(&read_image(&png)?, &noisy);
    let pgm_error = max_err(&read_image(&pgm)?, &noisy);

    let config = Config::parse("seed = 2\nnoise = poisson:100\n")?;
    let sol = solve_gaussian(&noisy, 300.0, &SolverConfig::default())?;
    let table = ssn_table(CsvHeader::new(&config.hash(), config.seed()?), &sol.trace);
    let trace_path = dir.join("ssn_trace.csv");
    table.save(&trace_path)?;
    let trace_csv = std::fs::read_to_string(&trace_path)?;
    std::fs::remove_dir_all(&dir)?;
    Ok(RoundTrip {
        png_error,
        pgm_error,
        trace_csv,
    })
}

#[allow(dead_code)]
fn main() -> tvlearn::Result<()> {
    let r = run_example()?;
    println!("16-bit PNG round trip error {:.1e}", r.png_error);
    println!("8-bit PGM round trip error  {:.1e}", r.pgm_error);
    print!("{}", r.trace_csv);
    Ok(())
}
