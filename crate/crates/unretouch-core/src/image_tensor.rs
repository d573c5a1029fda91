//! Floating-point images in channels-major layout.
//!
//! Two value conventions are used throughout the crate: *file space* holds
//! pixel values in `[0, 255]` (what PNG files carry), and *model space*
//! holds values in `[-1, 1]` (what the networks consume). Conversion is
//! `model = pixel / 127.5 - 1`.

use ndarray::Array3;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("failed to decode image {path}: {source}")]
    Decode {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to encode image {path}: {source}")]
    Encode {
        path: String,
        source: image::ImageError,
    },
    #[error("image i/o failed for {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// An image as channels x height x width of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((channels, height, width)),
        }
    }

    pub fn from_fill(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            data: Array3::from_elem((channels, height, width), value),
        }
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2])
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.data.shape() == other.data.shape()
    }

    /// File space (`[0, 255]`) to model space (`[-1, 1]`).
    pub fn to_model_space(&self) -> ImageTensor {
        ImageTensor::new(self.data.mapv(|v| v / 127.5 - 1.0))
    }

    /// Model space back to file space, clamped to `[0, 255]`.
    pub fn to_file_space(&self) -> ImageTensor {
        ImageTensor::new(self.data.mapv(|v| ((v + 1.0) * 127.5).clamp(0.0, 255.0)))
    }

    /// Mean over every element.
    pub fn mean(&self) -> f64 {
        let n = self.data.len();
        if n == 0 {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / n as f64
    }

    /// Root of the mean squared difference against `other`.
    pub fn l2_distance(&self, other: &ImageTensor) -> f64 {
        assert!(self.same_shape(other), "l2_distance on mismatched shapes");
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = a - b;
            acc += d * d;
        }
        (acc / self.data.len() as f64).sqrt()
    }

    /// Rec. 601 luminance, averaged over all pixels. Expects 3 channels.
    pub fn mean_luminance(&self) -> f64 {
        assert_eq!(self.channels(), 3, "mean_luminance expects RGB");
        let (_, h, w) = self.shape();
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w {
                acc += 0.299 * self.data[[0, y, x]]
                    + 0.587 * self.data[[1, y, x]]
                    + 0.114 * self.data[[2, y, x]];
            }
        }
        acc / (h * w) as f64
    }

    /// Decode a PNG (or other supported) file into file-space RGB.
    pub fn load_file(path: &Path) -> Result<ImageTensor, ImageError> {
        let img = image::open(path)
            .map_err(|source| ImageError::Decode {
                path: path.display().to_string(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let mut data = Array3::zeros((3, h as usize, w as usize));
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[c, y as usize, x as usize]] = p.0[c] as f64;
            }
        }
        Ok(ImageTensor::new(data))
    }

    /// Encode file-space RGB to a PNG on disk. Values are rounded and
    /// clamped to `[0, 255]`.
    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        assert_eq!(self.channels(), 3, "save_png expects RGB");
        let (_, h, w) = self.shape();
        let mut buf = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = [
                    self.data[[0, y, x]].round().clamp(0.0, 255.0) as u8,
                    self.data[[1, y, x]].round().clamp(0.0, 255.0) as u8,
                    self.data[[2, y, x]].round().clamp(0.0, 255.0) as u8,
                ];
                buf.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        buf.save(path).map_err(|source| ImageError::Encode {
            path: path.display().to_string(),
            source,
        })
    }

    /// Quantize to 8-bit and back, i.e. what a PNG round trip does to the
    /// pixel values.
    pub fn quantized(&self) -> ImageTensor {
        ImageTensor::new(self.data.mapv(|v| v.round().clamp(0.0, 255.0)))
    }
}
