//! Grayscale PGM (P2/P5) and PNG files. Intensities are mapped to `[0, 1]`;
//! file row 0 becomes grid row `iy = 0`.

use std::fs;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        parse_pgm(&bytes)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes)
    } else {
        Err(Error::ImageFormat(format!(
            "{}: neither PGM (P2/P5) nor PNG",
            path.display()
        )))
    }
}

/// Writes PNG for a `.png` extension and binary PGM otherwise. Values are
/// clipped to `[0, 1]` and rounded to the nearest level.
pub fn write_image(grid: &ImageGrid, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let max = depth.max_value();
    let levels: Vec<u32> = grid
        .values()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * max as f64).round() as u32)
        .collect();
    let (nx, ny) = grid.dims();
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let img = match depth {
            BitDepth::Eight => DynamicImage::ImageLuma8(
                ImageBuffer::<Luma<u8>, _>::from_raw(
                    nx as u32,
                    ny as u32,
                    levels.iter().map(|&l| l as u8).collect(),
                )
                .expect("buffer matches dimensions"),
            ),
            BitDepth::Sixteen => DynamicImage::ImageLuma16(
                ImageBuffer::<Luma<u16>, _>::from_raw(
                    nx as u32,
                    ny as u32,
                    levels.iter().map(|&l| l as u16).collect(),
                )
                .expect("buffer matches dimensions"),
            ),
        };
        img.save(path)
            .map_err(|e| Error::ImageFormat(format!("{}: {e}", path.display())))
    } else {
        let mut out = format!("P5\n{nx} {ny}\n{max}\n").into_bytes();
        for l in levels {
            match depth {
                BitDepth::Eight => out.push(l as u8),
                BitDepth::Sixteen => out.extend_from_slice(&(l as u16).to_be_bytes()),
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}

fn decode_png(bytes: &[u8]) -> Result<ImageGrid> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::ImageFormat(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = match img.color() {
        ColorType::L8 => img
            .into_luma8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
        ColorType::L16 => img
            .into_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        other => {
            return Err(Error::ImageFormat(format!(
                "unsupported PNG color type {other:?}; convert to single-channel grayscale"
            )))
        }
    };
    ImageGrid::new(w, h, values)
}

/// Header tokens and the offset of the first byte after the header.
fn pgm_header(bytes: &[u8]) -> Result<([usize; 3], usize)> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::ImageFormat("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::ImageFormat("malformed PGM header".into()))?;
    }
    // exactly one whitespace byte separates the header from binary data
    Ok((fields, pos + 1))
}

fn parse_pgm(bytes: &[u8]) -> Result<ImageGrid> {
    let (w, h, values) = decode_pgm(bytes)?;
    ImageGrid::new(w, h, values)
}

/// Width, height and row-major samples scaled to `[0, 1]`, without the
/// grid-size check applied by [`read_image`].
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if !(bytes.starts_with(b"P2") || bytes.starts_with(b"P5")) {
        return Err(Error::ImageFormat("missing P2/P5 magic".into()));
    }
    let binary = bytes[1] == b'5';
    let ([w, h, maxval], offset) = pgm_header(bytes)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::ImageFormat(format!(
            "PGM maxval {maxval} out of range"
        )));
    }
    let n = w * h;
    let raw: Vec<u32> = if binary {
        let data = bytes.get(offset..).unwrap_or(&[]);
        if maxval < 256 {
            data.iter().take(n).map(|&b| b as u32).collect()
        } else {
            data.chunks_exact(2)
                .take(n)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
                .collect()
        }
    } else {
        let text = std::str::from_utf8(&bytes[offset.min(bytes.len())..])
            .map_err(|_| Error::ImageFormat("P2 body is not ASCII".into()))?;
        text.lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_ascii_whitespace)
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|_| Error::ImageFormat(format!("bad P2 sample {t:?}")))
            })
            .take(n)
            .collect::<Result<_>>()?
    };
    if raw.len() != n {
        return Err(Error::ImageFormat(format!(
            "PGM holds {} of {n} samples",
            raw.len()
        )));
    }
    if let Some(v) = raw.iter().find(|&&v| v as usize > maxval) {
        return Err(Error::ImageFormat(format!(
            "PGM sample {v} exceeds maxval {maxval}"
        )));
    }
    Ok((
        w,
        h,
        raw.into_iter().map(|v| v as f64 / maxval as f64).collect(),
    ))
}
