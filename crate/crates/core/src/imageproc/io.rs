use std::path::Path;

use image::{GrayImage, ImageFormat};

use super::{Plane8, RgbImage};
use crate::error::{Error, Result};

/// Reads an 8-bit PNG, JPEG, PGM or PPM as RGB. Grayscale inputs are
/// replicated into all three channels.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.pixels().map(|p| p.0).collect();
    RgbImage::new(w as usize, h as usize, pixels)
}

/// Writes a plane as PNG or binary PGM, chosen by the file extension.
pub fn save_plane(p: &Plane8, path: &Path) -> Result<()> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => ImageFormat::Png,
        Some(e) if e.eq_ignore_ascii_case("pgm") => ImageFormat::Pnm,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unsupported output extension for {}",
                path.display()
            )))
        }
    };
    let img = GrayImage::from_raw(p.width() as u32, p.height() as u32, p.values().to_vec())
        .expect("plane buffer matches dimensions");
    img.save_with_format(path, format)?;
    Ok(())
}
