//! Paired geometric preprocessing for training and evaluation.

use super::Sample;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PreprocessMode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub target: usize,
    pub patch: usize,
    /// Floor-plan data: vertical flips in training, aspect-preserving
    /// resize in evaluation.
    pub floor_plan: bool,
    /// Random flips in training mode.
    pub flips: bool,
}

/// A preprocessed sample plus what is needed to map a prediction on it back
/// to the original frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub sample: Sample,
    /// Original `(width, height)`.
    pub original: (usize, usize),
    /// Size of the content region at the top-left of the processed frame.
    pub content: (usize, usize),
}

impl Prepared {
    /// Crops away padding and undoes any resize.
    pub fn restore(&self, pred: &GrayImage) -> Result<GrayImage> {
        let (cw, ch) = self.content;
        let cropped = pred.crop(0, 0, cw, ch)?;
        if self.content == self.original {
            Ok(cropped)
        } else {
            Ok(cropped.resize_bilinear(self.original.0, self.original.1))
        }
    }
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

fn pad(s: &Sample, w: usize, h: usize) -> Sample {
    Sample {
        id: s.id.clone(),
        image: s.image.map_planes(|p| p.pad_to(w, h)),
        gt: s.gt.pad_to(w, h),
        walls: s.walls.as_ref().map(|m| m.pad_to(w, h)),
    }
}

/// Zero padding to at least `target` on each side, then a random
/// `target × target` crop and random flips in training mode; padding (and
/// for floor plans a longest-side resize) in evaluation mode.
pub fn preprocess(
    sample: &Sample,
    cfg: &PreprocessConfig,
    mode: PreprocessMode,
    rng: &mut Rng,
) -> Result<Prepared> {
    if cfg.patch == 0 || cfg.target == 0 || !cfg.target.is_multiple_of(cfg.patch) {
        return Err(Error::Config(format!(
            "target size {} is not divisible by patch {}",
            cfg.target, cfg.patch
        )));
    }
    sample.check()?;
    let original = (sample.width(), sample.height());
    let t = cfg.target;
    match mode {
        PreprocessMode::Train => {
            let padded = pad(sample, t, t);
            let x0 = rng.range_inclusive(0, (padded.width() - t) as i64) as usize;
            let y0 = rng.range_inclusive(0, (padded.height() - t) as i64) as usize;
            let hflip = rng.bernoulli(0.5);
            let vflip = rng.bernoulli(0.5);
            let crop = |g: &GrayImage| g.crop(x0, y0, t, t);
            let mut out = Sample {
                id: sample.id.clone(),
                image: padded.image.try_map_planes(crop)?,
                gt: crop(&padded.gt)?,
                walls: padded.walls.as_ref().map(crop).transpose()?,
            };
            if cfg.flips && hflip {
                out = out.flip_horizontal();
            }
            if cfg.flips && cfg.floor_plan && vflip {
                out = out.flip_vertical();
            }
            Ok(Prepared {
                sample: out,
                original,
                content: (t, t),
            })
        }
        PreprocessMode::Eval if cfg.floor_plan => {
            let (w, h) = original;
            let scale = t as f64 / w.max(h) as f64;
            let nw = ((w as f64 * scale).round() as usize).clamp(1, t);
            let nh = ((h as f64 * scale).round() as usize).clamp(1, t);
            let resized = Sample {
                id: sample.id.clone(),
                image: sample.image.map_planes(|p| p.resize_bilinear(nw, nh)),
                gt: sample.gt.resize_bilinear(nw, nh),
                walls: sample.walls.as_ref().map(|m| m.resize_nearest(nw, nh)),
            };
            Ok(Prepared {
                sample: pad(&resized, t, t),
                original,
                content: (nw, nh),
            })
        }
        PreprocessMode::Eval => {
            let (w, h) = original;
            let pw = round_up(w.max(t), cfg.patch);
            let ph = round_up(h.max(t), cfg.patch);
            Ok(Prepared {
                sample: pad(sample, pw, ph),
                original,
                content: original,
            })
        }
    }
}
