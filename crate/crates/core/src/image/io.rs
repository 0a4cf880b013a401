use std::path::Path;

use image::{DynamicImage, ExtendedColorType, ImageFormat};

use super::ImagePlane;
use crate::error::{Error, Result};

/// Loads an 8-bit grayscale or RGB PNG scaled into `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| {
        Error::Decode {
            path: path.into(),
            reason: e.to_string(),
        }
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        other => {
            return Err(Error::Decode {
                path: path.into(),
                reason: format!("unsupported pixel format {:?}", other.color()),
            })
        }
    };
    let data = raw.into_iter().map(|b| b as f32 / 255.0).collect();
    ImagePlane::new(height, width, channels, data)
}

/// Writes an 8-bit PNG, rounding to the nearest code value. Missing parent
/// directories are created.
pub fn save_image(img: &ImagePlane, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let color = match img.channels() {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        n => {
            return Err(Error::Encode {
                path: path.into(),
                reason: format!("cannot encode {n} channels"),
            })
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::save_buffer_with_format(
        path,
        &bytes,
        img.width() as u32,
        img.height() as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Encode {
            path: path.into(),
            reason: other.to_string(),
        },
    })
}
