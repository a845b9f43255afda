//! 8-bit raster images with one (gray) or three (RGB) interleaved channels.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

/// Rec. 601 luma, rounded half up, in exact integer arithmetic.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "raster must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                expected: width * height * channels,
                actual: data.len(),
            });
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Raster::new(width, height, channels, vec![value; width * height * channels])
            .expect("filled raster has consistent size")
    }

    pub fn gray_from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Raster {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Gray value of a pixel (luma for RGB).
    #[inline]
    pub fn gray_at(&self, x: usize, y: usize) -> u8 {
        let i = (y * self.width + x) * self.channels;
        if self.channels == 1 {
            self.data[i]
        } else {
            luma(self.data[i], self.data[i + 1], self.data[i + 2])
        }
    }

    pub fn to_gray(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| luma(p[0], p[1], p[2]))
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Raster> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{} raster",
                self.width, self.height
            )));
        }
        let row_len = width * self.channels;
        let mut data = Vec::with_capacity(row_len * height);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + row_len]);
        }
        Ok(Raster {
            width,
            height,
            channels: self.channels,
            data,
        })
    }

    /// Rotate by 90 degrees counter-clockwise.
    pub fn rotate90(&self) -> Raster {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut data = vec![0u8; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                // (x, y) -> (y, w - 1 - x) in an h-wide, w-tall image
                let (nx, ny) = (y, w - 1 - x);
                let src = (y * w + x) * c;
                let dst = (ny * h + nx) * c;
                data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        Raster {
            width: h,
            height: w,
            channels: c,
            data,
        }
    }

    pub fn from_dynamic(img: DynamicImage) -> Raster {
        match img {
            DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Raster {
                    width: w as usize,
                    height: h as usize,
                    channels: 1,
                    data: g.into_raw(),
                }
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Raster {
                    width: w as usize,
                    height: h as usize,
                    channels: 3,
                    data: rgb.into_raw(),
                }
            }
        }
    }

    pub fn load(path: &Path) -> Result<Raster> {
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()?;
        Ok(Raster::from_dynamic(img))
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            DynamicImage::ImageLuma8(
                GrayImage::from_raw(w, h, self.data.clone()).expect("consistent raster size"),
            )
        } else {
            DynamicImage::ImageRgb8(
                RgbImage::from_raw(w, h, self.data.clone()).expect("consistent raster size"),
            )
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_dynamic().write_to(&mut buf, image::ImageFormat::Png)?;
        crate::artifact::write_atomic(path, buf.get_ref())
    }
}
