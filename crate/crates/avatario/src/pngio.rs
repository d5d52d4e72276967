//! PNG image I/O: 8-bit color, 16-bit signed-normal maps, 8-bit masks.
//!
//! Normals store `(n + 1) / 2` per channel in 16 bits, so the quantization
//! error after unmapping is below 1e-4 and the sign always survives the
//! round trip. Images are row-major `Vec` planes matching the rasterizer's
//! layout.

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use nalgebra::Vector3;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PngError {
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{path}: expected {expected} image, got {got}")]
    WrongFormat {
        path: PathBuf,
        expected: &'static str,
        got: &'static str,
    },
    #[error("plane holds {len} pixels, dimensions say {expected}")]
    BadPlane { len: usize, expected: usize },
}

fn img_err(path: &Path) -> impl FnOnce(image::ImageError) -> PngError + '_ {
    move |source| PngError::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn check_plane<T>(plane: &[T], width: usize, height: usize) -> Result<(), PngError> {
    if plane.len() != width * height {
        return Err(PngError::BadPlane {
            len: plane.len(),
            expected: width * height,
        });
    }
    Ok(())
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn save_color_png(
    path: &Path,
    plane: &[Vector3<f64>],
    width: usize,
    height: usize,
) -> Result<(), PngError> {
    check_plane(plane, width, height)?;
    let mut img = RgbImage::new(width as u32, height as u32);
    for (i, p) in plane.iter().enumerate() {
        let (x, y) = ((i % width) as u32, (i / width) as u32);
        img.put_pixel(x, y, Rgb([quantize8(p.x), quantize8(p.y), quantize8(p.z)]));
    }
    img.save(path).map_err(img_err(path))
}

pub fn load_color_png(path: &Path) -> Result<(Vec<Vector3<f64>>, usize, usize), PngError> {
    let img = image::open(path).map_err(img_err(path))?;
    let rgb = match img {
        DynamicImage::ImageRgb8(b) => b,
        other => {
            return Err(PngError::WrongFormat {
                path: path.to_path_buf(),
                expected: "8-bit RGB",
                got: kind_name(&other),
            })
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let plane = rgb
        .pixels()
        .map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
        .collect();
    Ok((plane, w, h))
}

pub fn save_normal_png(
    path: &Path,
    plane: &[Vector3<f64>],
    width: usize,
    height: usize,
) -> Result<(), PngError> {
    check_plane(plane, width, height)?;
    let mut img: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::new(width as u32, height as u32);
    for (i, n) in plane.iter().enumerate() {
        let (x, y) = ((i % width) as u32, (i / width) as u32);
        let m = (n + Vector3::repeat(1.0)) * 0.5;
        img.put_pixel(
            x,
            y,
            Rgb([quantize16(m.x), quantize16(m.y), quantize16(m.z)]),
        );
    }
    DynamicImage::ImageRgb16(img)
        .save(path)
        .map_err(img_err(path))
}

pub fn load_normal_png(path: &Path) -> Result<(Vec<Vector3<f64>>, usize, usize), PngError> {
    let img = image::open(path).map_err(img_err(path))?;
    let rgb = match img {
        DynamicImage::ImageRgb16(b) => b,
        other => {
            return Err(PngError::WrongFormat {
                path: path.to_path_buf(),
                expected: "16-bit RGB",
                got: kind_name(&other),
            })
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let plane = rgb
        .pixels()
        .map(|p| {
            Vector3::new(
                p[0] as f64 / 65535.0 * 2.0 - 1.0,
                p[1] as f64 / 65535.0 * 2.0 - 1.0,
                p[2] as f64 / 65535.0 * 2.0 - 1.0,
            )
        })
        .collect();
    Ok((plane, w, h))
}

pub fn save_mask_png(
    path: &Path,
    mask: &[bool],
    width: usize,
    height: usize,
) -> Result<(), PngError> {
    check_plane(mask, width, height)?;
    let mut img = GrayImage::new(width as u32, height as u32);
    for (i, &m) in mask.iter().enumerate() {
        let (x, y) = ((i % width) as u32, (i / width) as u32);
        img.put_pixel(x, y, Luma([if m { 255 } else { 0 }]));
    }
    img.save(path).map_err(img_err(path))
}

pub fn load_mask_png(path: &Path) -> Result<(Vec<bool>, usize, usize), PngError> {
    let img = image::open(path).map_err(img_err(path))?;
    let gray = match img {
        DynamicImage::ImageLuma8(b) => b,
        other => {
            return Err(PngError::WrongFormat {
                path: path.to_path_buf(),
                expected: "8-bit gray",
                got: kind_name(&other),
            })
        }
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mask = gray.pixels().map(|p| p[0] > 127).collect();
    Ok((mask, w, h))
}

/// Quantizes a float image to the 8-bit grid, the values a color PNG round
/// trip would produce. Evaluation metrics run on these.
pub fn quantize_color_plane(plane: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    plane
        .iter()
        .map(|p| {
            Vector3::new(
                quantize8(p.x) as f64 / 255.0,
                quantize8(p.y) as f64 / 255.0,
                quantize8(p.z) as f64 / 255.0,
            )
        })
        .collect()
}

fn kind_name(img: &DynamicImage) -> &'static str {
    match img {
        DynamicImage::ImageLuma8(_) => "8-bit gray",
        DynamicImage::ImageLumaA8(_) => "8-bit gray+alpha",
        DynamicImage::ImageRgb8(_) => "8-bit RGB",
        DynamicImage::ImageRgba8(_) => "8-bit RGBA",
        DynamicImage::ImageLuma16(_) => "16-bit gray",
        DynamicImage::ImageLumaA16(_) => "16-bit gray+alpha",
        DynamicImage::ImageRgb16(_) => "16-bit RGB",
        DynamicImage::ImageRgba16(_) => "16-bit RGBA",
        _ => "other",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn color_round_trip_hits_quantization_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let mut rng = ChaCha12Rng::seed_from_u64(50);
        let (w, h) = (9, 7);
        let plane: Vec<Vector3<f64>> = (0..w * h)
            .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        save_color_png(&path, &plane, w, h).unwrap();
        let (loaded, lw, lh) = load_color_png(&path).unwrap();
        assert_eq!((lw, lh), (w, h));
        for (a, b) in plane.iter().zip(&loaded) {
            assert!((a - b).amax() <= 0.5 / 255.0 + 1e-12);
        }
        // Quantize-then-load is exact.
        let q = quantize_color_plane(&plane);
        for (a, b) in q.iter().zip(&loaded) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn normal_round_trip_preserves_sign_within_1e_4() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.png");
        let mut rng = ChaCha12Rng::seed_from_u64(51);
        let (w, h) = (8, 8);
        let plane: Vec<Vector3<f64>> = (0..w * h)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalize()
            })
            .collect();
        save_normal_png(&path, &plane, w, h).unwrap();
        let (loaded, _, _) = load_normal_png(&path).unwrap();
        for (a, b) in plane.iter().zip(&loaded) {
            assert!((a - b).amax() < 1e-4);
        }
    }

    #[test]
    fn mask_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        save_mask_png(&path, &mask, 6, 5).unwrap();
        let (loaded, w, h) = load_mask_png(&path).unwrap();
        assert_eq!((w, h), (6, 5));
        assert_eq!(mask, loaded);
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        let plane: Vec<Vector3<f64>> = (0..16).map(|i| Vector3::repeat(i as f64 / 15.0)).collect();
        save_color_png(&a, &plane, 4, 4).unwrap();
        save_color_png(&b, &plane, 4, 4).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
