//! PNG and binary PGM/PPM reading and writing.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, ImageFormat, Luma, RgbImage};

use crate::error::{invalid, Error, Result};
use crate::raster::{BinaryMask, LabelMap, RasterImage};

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm") | Some("ppm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => invalid(format!("unsupported image extension: {}", path.display())),
    }
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads an image as gray (if it has a single luminance channel) or RGB.
/// Alpha is dropped and 16-bit samples are reduced to 8 bits.
pub fn read_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let dynimg = image::open(path).map_err(image_err(path))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    match dynimg {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) => {
            RasterImage::new(w, h, 1, dynimg.to_luma8().into_raw())
        }
        other => RasterImage::new(w, h, 3, other.to_rgb8().into_raw()),
    }
}

/// Writes PNG, or binary P5/P6 when the extension is `.pgm`/`.ppm`.
pub fn write_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynimg = if img.is_gray() {
        DynamicImage::ImageLuma8(
            GrayImage::from_raw(w, h, img.data().to_vec()).expect("buffer sized by RasterImage"),
        )
    } else {
        DynamicImage::ImageRgb8(
            RgbImage::from_raw(w, h, img.data().to_vec()).expect("buffer sized by RasterImage"),
        )
    };
    dynimg.save_with_format(path, format).map_err(image_err(path))
}

pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    write_image(&mask.to_image(), path)
}

/// Reads a mask; any nonzero pixel is foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = crate::raster::to_grayscale(&read_image(path)?);
    let bits = img.data().iter().map(|&v| v > 0).collect();
    BinaryMask::new(img.width(), img.height(), bits)
}

/// Writes a label map as a 16-bit grayscale PNG.
pub fn write_label_map(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if labels.max_label() > u16::MAX as u32 {
        return invalid("label map has more than 65535 labels");
    }
    let raw: Vec<u16> = labels.labels().iter().map(|&l| l as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(labels.width() as u32, labels.height() as u32, raw)
            .expect("buffer sized by LabelMap");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(image_err(path))
}

/// Reads a label map from an 8- or 16-bit grayscale image; values are labels.
pub fn read_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let dynimg = image::open(path).map_err(image_err(path))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let labels = match dynimg {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        _ => return Err(Error::Format(format!("{}: label maps must be grayscale", path.display()))),
    };
    LabelMap::new(w, h, labels)
}
