//! RGB images, preprocessing and PNM (PPM/PGM) file I/O.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};

/// Interleaved RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Interleaved H x W x 3 tensor after channel standardization; model input.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

macro_rules! hwc_accessors {
    ($t:ty) => {
        impl $t {
            pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
                ensure(data.len() == height * width * 3, || {
                    format!(
                        "image data length {} does not match {height}x{width}x3",
                        data.len()
                    )
                })?;
                Ok(Self {
                    height,
                    width,
                    data,
                })
            }

            pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
                let mut data = Vec::with_capacity(height * width * 3);
                for _ in 0..height * width {
                    data.extend_from_slice(&rgb);
                }
                Self {
                    height,
                    width,
                    data,
                }
            }

            #[inline]
            pub fn height(&self) -> usize {
                self.height
            }

            #[inline]
            pub fn width(&self) -> usize {
                self.width
            }

            #[inline]
            pub fn data(&self) -> &[f32] {
                &self.data
            }

            #[inline]
            pub fn data_mut(&mut self) -> &mut [f32] {
                &mut self.data
            }

            #[inline]
            pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
                let i = (y * self.width + x) * 3;
                [self.data[i], self.data[i + 1], self.data[i + 2]]
            }

            #[inline]
            pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
                let i = (y * self.width + x) * 3;
                self.data[i..i + 3].copy_from_slice(&rgb);
            }

            /// Bilinear resampling with half-pixel centers (no antialiasing).
            pub fn resized(&self, out_h: usize, out_w: usize) -> Result<Self> {
                ensure(out_h >= 1 && out_w >= 1 && self.height >= 1 && self.width >= 1, || {
                    format!(
                        "cannot resize {}x{} image to {out_h}x{out_w}",
                        self.height, self.width
                    )
                })?;
                Ok(Self {
                    height: out_h,
                    width: out_w,
                    data: resize_hwc(&self.data, self.height, self.width, out_h, out_w),
                })
            }

            /// Sub-image with top-left corner `(top, left)`.
            pub fn cropped(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
                ensure(top + h <= self.height && left + w <= self.width, || {
                    format!(
                        "crop {h}x{w} at ({top},{left}) exceeds {}x{} image",
                        self.height, self.width
                    )
                })?;
                let mut data = Vec::with_capacity(h * w * 3);
                for y in top..top + h {
                    let start = (y * self.width + left) * 3;
                    data.extend_from_slice(&self.data[start..start + w * 3]);
                }
                Ok(Self {
                    height: h,
                    width: w,
                    data,
                })
            }
        }
    };
}

hwc_accessors!(RgbImage);
hwc_accessors!(ImageTensor);

impl RgbImage {
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

impl ImageTensor {
    /// SHA-256 over the tensor's little-endian bytes, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn resize_hwc(src: &[f32], in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    if in_h == out_h && in_w == out_w {
        return src.to_vec();
    }
    let taps = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f64)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
                let lo = pos.floor() as usize;
                (lo, (lo + 1).min(in_len - 1), pos - lo as f64)
            })
            .collect()
    };
    let ys = taps(out_h, in_h);
    let xs = taps(out_w, in_w);
    let mut out = Vec::with_capacity(out_h * out_w * 3);
    let at = |y: usize, x: usize, c: usize| src[(y * in_w + x) * 3 + c] as f64;
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for c in 0..3 {
                let top = at(y0, x0, c) * (1.0 - tx) + at(y0, x1, c) * tx;
                let bottom = at(y1, x0, c) * (1.0 - tx) + at(y1, x1, c) * tx;
                out.push((top * (1.0 - ty) + bottom * ty) as f32);
            }
        }
    }
    out
}

/// Resize/crop/standardize settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Target length of the shorter side before cropping.
    pub resize_short: usize,
    /// Side of the square center crop.
    pub crop: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessConfig {
    /// Shorter side to 256, 224 center crop, ImageNet channel statistics.
    fn default() -> Self {
        Self {
            resize_short: 256,
            crop: 224,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl PreprocessConfig {
    /// Same geometry, identity normalization.
    pub fn unnormalized(&self) -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
            ..self.clone()
        }
    }
}

/// Output size of the aspect-preserving resize: shorter side becomes
/// `short`, longer side is rounded to nearest. Returns `(height, width)`.
pub fn resized_dims(height: usize, width: usize, short: usize) -> (usize, usize) {
    let scale = |long: usize, small: usize| ((long * short) as f64 / small as f64).round() as usize;
    if height <= width {
        (short, scale(width, height))
    } else {
        (scale(height, width), short)
    }
}

/// Aspect-preserving resize followed by the square center crop.
pub fn resize_and_crop(raw: &RgbImage, cfg: &PreprocessConfig) -> Result<RgbImage> {
    ensure(cfg.crop <= cfg.resize_short, || {
        format!("crop {} larger than resize target {}", cfg.crop, cfg.resize_short)
    })?;
    let (h, w) = resized_dims(raw.height, raw.width, cfg.resize_short);
    let resized = raw.resized(h, w)?;
    let top = (h - cfg.crop) / 2;
    let left = (w - cfg.crop) / 2;
    resized.cropped(top, left, cfg.crop, cfg.crop)
}

/// Per-channel `(v - mean) / std`.
pub fn normalize(rgb: &RgbImage, cfg: &PreprocessConfig) -> Result<ImageTensor> {
    ensure(cfg.std.iter().all(|&s| s > 0.0), || "channel std must be positive".into())?;
    let data = rgb
        .data
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| (px[c] - cfg.mean[c]) / cfg.std[c]))
        .collect();
    ImageTensor::new(rgb.height, rgb.width, data)
}

pub fn preprocess(raw: &RgbImage, cfg: &PreprocessConfig) -> Result<ImageTensor> {
    normalize(&resize_and_crop(raw, cfg)?, cfg)
}

/// Decodes any binary or ASCII PNM file into RGB.
pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_rgb32f();
    let (w, h) = img.dimensions();
    RgbImage::new(h as usize, w as usize, img.into_raw())
}

/// Writes a binary PPM (P6, maxval 255).
pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write_pnm(path, "P6", img.width, img.height, &img.to_u8())
}

/// Writes a binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    ensure(gray.len() == width * height, || "PGM buffer size mismatch".into())?;
    write_pnm(path, "P5", width, height, gray)
}

fn write_pnm(path: &Path, magic: &str, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "{magic}\n{width} {height}\n255\n")
        .and_then(|_| out.write_all(bytes))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads a PGM as `(height, width, values in [0, 1])`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_luma32f();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_dims_landscape() {
        assert_eq!(resized_dims(480, 640, 256), (256, 341));
        assert_eq!(resized_dims(256, 256, 256), (256, 256));
        assert_eq!(resized_dims(640, 480, 256), (341, 256));
    }

    #[test]
    fn square_256_crops_at_16() {
        let raw = RgbImage::new(256, 256, (0..256 * 256 * 3).map(|i| (i % 251) as f32 / 251.0).collect())
            .unwrap();
        let cfg = PreprocessConfig::default();
        let out = resize_and_crop(&raw, &cfg).unwrap();
        assert_eq!((out.height(), out.width()), (224, 224));
        assert_eq!(out.pixel(0, 0), raw.pixel(16, 16));
        assert_eq!(out.pixel(223, 223), raw.pixel(239, 239));
    }

    #[test]
    fn landscape_to_224() {
        let raw = RgbImage::filled(480, 640, [0.2, 0.4, 0.6]);
        let t = preprocess(&raw, &PreprocessConfig::default()).unwrap();
        assert_eq!((t.height(), t.width()), (224, 224));
    }

    #[test]
    fn constant_gray_normalizes_to_constant() {
        let cfg = PreprocessConfig::default();
        let t = preprocess(&RgbImage::filled(300, 400, [0.5; 3]), &cfg).unwrap();
        for c in 0..3 {
            let expect = (0.5 - cfg.mean[c]) / cfg.std[c];
            assert!(t.data().chunks(3).all(|px| (px[c] - expect).abs() < 1e-6));
        }
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let bytes: Vec<u8> = (0..5 * 7 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let img = RgbImage::from_u8(5, 7, &bytes).unwrap();
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.to_u8(), bytes);
        let raw = std::fs::read(&path).unwrap();
        assert!(raw.starts_with(b"P6\n7 5\n255\n"));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let gray: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        write_pgm(&path, 4, 3, &gray).unwrap();
        let (h, w, v) = read_pgm(&path).unwrap();
        assert_eq!((h, w), (3, 4));
        let back: Vec<u8> = v.iter().map(|x| (x * 255.0).round() as u8).collect();
        assert_eq!(back, gray);
    }

    #[test]
    fn garbage_file_is_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"not an image").unwrap();
        let err = read_ppm(&path).unwrap_err();
        assert!(matches!(err, Error::Decode { .. }));
        assert!(err.to_string().contains("bad.ppm"));
    }
}
