//! Planar grayscale and interleaved RGB images with `f64` samples in `[0, 1]`.

use crate::error::{Error, Result};

/// Single-channel image; also used for edge maps (ground truth or prediction).
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

pub type EdgeMap = GrayImage;

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get(x, self.height - 1 - y)
        })
    }

    /// Zero-pads on the right and bottom up to at least `width`×`height`.
    pub fn pad_to(&self, width: usize, height: usize) -> Self {
        let w = width.max(self.width);
        let h = height.max(self.height);
        Self::from_fn(w, h, |x, y| {
            if x < self.width && y < self.height {
                self.get(x, y)
            } else {
                0.0
            }
        })
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Shape(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// Nearest-neighbour resampling.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |x, y| {
            let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            self.get(sx.min(self.width - 1), sy.min(self.height - 1))
        })
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |x, y| {
            let fx = (x as f64 + 0.5) * self.width as f64 / width as f64 - 0.5;
            let fy = (y as f64 + 0.5) * self.height as f64 / height as f64 - 0.5;
            bilinear(self, fx, fy)
        })
    }
}

/// Bilinear interpolation with border clamping.
pub fn bilinear(img: &GrayImage, fx: f64, fy: f64) -> f64 {
    let x0 = fx.floor();
    let y0 = fy.floor();
    let ax = fx - x0;
    let ay = fy - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let v00 = img.get_clamped(x0, y0);
    let v10 = img.get_clamped(x0 + 1, y0);
    let v01 = img.get_clamped(x0, y0 + 1);
    let v11 = img.get_clamped(x0 + 1, y0 + 1);
    (1.0 - ay) * ((1.0 - ax) * v00 + ax * v10) + ay * ((1.0 - ax) * v01 + ax * v11)
}

/// Three-channel image stored as three planes.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    planes: [GrayImage; 3],
}

impl RgbImage {
    pub fn from_planes(planes: [GrayImage; 3]) -> Result<Self> {
        let (w, h) = (planes[0].width, planes[0].height);
        if planes.iter().any(|p| p.width != w || p.height != h) {
            return Err(Error::Shape("RGB planes differ in size".into()));
        }
        Ok(Self { planes })
    }

    pub fn from_gray(g: &GrayImage) -> Self {
        Self {
            planes: [g.clone(), g.clone(), g.clone()],
        }
    }

    pub fn width(&self) -> usize {
        self.planes[0].width
    }

    pub fn height(&self) -> usize {
        self.planes[0].height
    }

    pub fn plane(&self, c: usize) -> &GrayImage {
        &self.planes[c]
    }

    pub fn planes(&self) -> &[GrayImage; 3] {
        &self.planes
    }

    /// Rec. 601 luma.
    pub fn luma(&self) -> GrayImage {
        let [r, g, b] = &self.planes;
        GrayImage::from_fn(self.width(), self.height(), |x, y| {
            0.299 * r.get(x, y) + 0.587 * g.get(x, y) + 0.114 * b.get(x, y)
        })
    }

    pub fn map_planes(&self, f: impl Fn(&GrayImage) -> GrayImage) -> Self {
        Self {
            planes: [f(&self.planes[0]), f(&self.planes[1]), f(&self.planes[2])],
        }
    }

    pub fn try_map_planes(&self, f: impl Fn(&GrayImage) -> Result<GrayImage>) -> Result<Self> {
        Ok(Self {
            planes: [f(&self.planes[0])?, f(&self.planes[1])?, f(&self.planes[2])?],
        })
    }
}
