//! Binary netpbm: P5 grayscale and P6 color, maxval 255 only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};

fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    let [r, g, b] = img.planes();
    for i in 0..r.data().len() {
        out.extend([
            quantize(r.data()[i]),
            quantize(g.data()[i]),
            quantize(b.data()[i]),
        ]);
    }
    out
}

struct Header {
    width: usize,
    height: usize,
    raster: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos,
            message: message.into(),
        })
    }

    fn skip_space(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return self.fail(format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        match text.parse::<usize>() {
            Ok(n) => Ok(n),
            Err(_) => {
                self.pos = start;
                self.fail(format!("{what} out of range"))
            }
        }
    }
}

fn parse_header(bytes: &[u8], path: &Path, magic: &[u8; 2], channels: usize) -> Result<Header> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    if bytes.len() < 2 || &bytes[..2] != magic {
        return c.fail(format!("expected magic {}", String::from_utf8_lossy(magic)));
    }
    c.pos = 2;
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval_at = c.pos;
    let maxval = c.number("maxval")?;
    if maxval != 255 {
        c.pos = maxval_at;
        c.skip_space();
        return c.fail(format!("maxval {maxval} unsupported, expected 255"));
    }
    if width == 0 || height == 0 {
        return c.fail("zero image dimension");
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return c.fail("expected single whitespace before raster"),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels));
    match need {
        Some(n) if bytes.len() - c.pos >= n => Ok(Header {
            width,
            height,
            raster: c.pos,
        }),
        Some(n) => {
            c.pos = bytes.len();
            c.fail(format!("raster truncated: need {n} bytes"))
        }
        None => c.fail("image dimensions overflow"),
    }
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let h = parse_header(bytes, path, b"P5", 1)?;
    let n = h.width * h.height;
    let data = bytes[h.raster..h.raster + n]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    GrayImage::from_vec(h.width, h.height, data)
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let h = parse_header(bytes, path, b"P6", 3)?;
    let n = h.width * h.height;
    let raster = &bytes[h.raster..h.raster + 3 * n];
    let plane = |c: usize| {
        GrayImage::from_vec(
            h.width,
            h.height,
            (0..n).map(|i| raster[3 * i + c] as f64 / 255.0).collect(),
        )
    };
    RgbImage::from_planes([plane(0)?, plane(1)?, plane(2)?])
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}
