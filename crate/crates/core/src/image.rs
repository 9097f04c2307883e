//! Float RGB images and their PNG / resize plumbing.

use std::path::Path;

use image::imageops::FilterType;
use image::{Rgb, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// An RGB image with channel values in `[0, 1]`, stored row-major and
/// channel-interleaved (`(y * width + x) * 3 + c`).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("image dimensions must be positive"));
        }
        if data.len() != width * height * 3 {
            return Err(Error::validation(format!(
                "expected {} channel values for {width}x{height}, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * 3 + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = self.index(x, y, 0);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = self.index(x, y, 0);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// True when every channel value is finite and inside `[0, 1]`.
    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Luminance (Rec. 601) per pixel.
    pub fn grayscale(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// Quantizes to 8-bit RGB.
    pub fn to_rgb8(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width as u32, self.height as u32);
        for (px, chunk) in out.pixels_mut().zip(self.data.chunks_exact(3)) {
            *px = Rgb([quantize(chunk[0]), quantize(chunk[1]), quantize(chunk[2])]);
        }
        out
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
        Image {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        Ok(Image::from_rgb8(&img))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }

    /// Bilinear resize to an exact size. Aspect ratio is not preserved.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Vec::with_capacity(width * height * 3);
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                for c in 0..3 {
                    let a = self.data[self.index(x0, y0, c)];
                    let b = self.data[self.index(x1, y0, c)];
                    let d = self.data[self.index(x0, y1, c)];
                    let e = self.data[self.index(x1, y1, c)];
                    let top = a + (b - a) * tx;
                    let bottom = d + (e - d) * tx;
                    out.push(top + (bottom - top) * ty);
                }
            }
        }
        Image {
            width,
            height,
            data: out,
        }
    }

    /// SHA-256 over the dimensions and the exact bit patterns of every value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Resize an 8-bit image with the triangle (bilinear) filter. Used at ingestion,
/// where sources are PNG/JPEG files of arbitrary size.
pub fn resize_rgb8(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    image::imageops::resize(img, width as u32, height as u32, FilterType::Triangle)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_buffer_length() {
        assert!(Image::new(2, 2, vec![0.0; 11]).is_err());
        assert!(Image::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn resize_non_square_to_square() {
        let src = Image::filled(576 / 8, 720 / 8, [0.25, 0.5, 0.75]);
        let out = src.resize_bilinear(64, 64);
        assert_eq!((out.width(), out.height()), (64, 64));
        for p in out.data().chunks_exact(3) {
            assert!((p[0] - 0.25).abs() < 1e-12 && (p[2] - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn rgb8_round_trip_is_quantized() {
        let img = Image::new(1, 1, vec![0.0, 0.5, 1.0]).unwrap();
        let back = Image::from_rgb8(&img.to_rgb8());
        assert_eq!(back.get(0, 0)[0], 0.0);
        assert_eq!(back.get(0, 0)[2], 1.0);
        assert!((back.get(0, 0)[1] - 128.0 / 255.0).abs() < 1e-12);
    }
}
