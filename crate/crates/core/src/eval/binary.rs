use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Boolean pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMap {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} mask needs {} entries, got {}",
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

    /// `img ≥ threshold`.
    pub fn threshold(img: &GrayImage, threshold: f64) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.data().iter().map(|&v| v >= threshold).collect(),
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
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Out-of-range coordinates read as `false`.
    #[inline]
    pub fn get_or_false(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_vec(
            self.width,
            self.height,
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("same size")
    }

    /// Mask pixels with a 4-neighbor inside the image that is off.
    pub fn boundary(&self) -> Self {
        let mut out = Self::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) {
                    continue;
                }
                let (xi, yi) = (x as isize, y as isize);
                let edge = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dx, dy)| {
                    let (nx, ny) = (xi + dx, yi + dy);
                    nx >= 0
                        && ny >= 0
                        && (nx as usize) < self.width
                        && (ny as usize) < self.height
                        && !self.get(nx as usize, ny as usize)
                });
                out.set(x, y, edge);
            }
        }
        out
    }
}
