//! The runnable examples double as end-to-end checks.

macro_rules! example {
    ($name:ident) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/examples/",
                stringify!($name),
                ".rs"
            ));
        }
    };
}

example!(denoise);
example!(learn);
example!(train_set);
example!(gradcheck);
example!(image_io);
example!(gauss_poisson);

#[test]
fn denoise_improves_on_noisy_input() {
    let d = denoise::run_example().unwrap();
    assert!(d.psnr_neumann > d.psnr_dirichlet);
    assert!(d.psnr_dirichlet > d.psnr_noisy);
}

#[test]
fn learn_converges_to_positive_weight() {
    let l = learn::run_example().unwrap();
    assert!(l.lambda > 0.0);
    assert!(l.cost < l.initial_cost);
}

#[test]
fn heavier_noise_learns_smaller_weight() {
    let [light, both, heavy] = train_set::run_example().unwrap();
    assert!(heavy < both && both < light, "{light} {both} {heavy}");
}

#[test]
fn gradcheck_example_agrees() {
    assert!(gradcheck::run_example().unwrap() < 1e-3);
}

#[test]
fn image_round_trip_is_accurate() {
    let r = image_io::run_example().unwrap();
    assert!(r.png_error < 1e-4);
    assert!(r.pgm_error <= 0.5 / 255.0 + 1e-12);
    assert!(r.trace_csv.lines().count() > 1);
}

#[test]
fn mixed_noise_learns_both_weights() {
    let m = gauss_poisson::run_example().unwrap();
    assert!(m.converged);
    assert!(m.lambda.iter().all(|&l| l > 0.0));
}
