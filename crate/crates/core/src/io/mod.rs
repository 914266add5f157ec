//! Images, synthetic data, configuration files and CSV traces.

pub mod config;
pub mod image;
pub mod noise;
pub mod phantom;
pub mod trace;

pub use self::image::{decode_pgm, read_image, write_image, BitDepth};
pub use noise::{add_noise, psnr, NoiseSpec};
pub use phantom::Phantom;
