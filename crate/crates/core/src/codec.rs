//! Exactly invertible patch codec standing in for a learned autoencoder.
//!
//! `encode` folds each `p×p` patch into `p²` channels (space-to-depth),
//! applies a fixed orthogonal mixing matrix `M`, and subtracts `0.5·M·1`, so
//! a flat 0.5 patch maps to the zero latent. `decode` inverts every step
//! exactly: `y = Mᵀz + 0.5`, then depth-to-space.
//!
//! Latents are `[p², H/p, W/p]` tensors.

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};
use crate::numerics::{Rng, Tensor};

/// Lower bound of the probability clamp applied before log-domain losses.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct PatchCodec {
    patch: usize,
    seed: u64,
    /// Row-major `p² × p²` orthogonal matrix.
    mix: Vec<f64>,
    /// Per-channel constant subtracted after mixing.
    shift: Vec<f64>,
}

impl PatchCodec {
    /// Codec with a seeded random orthogonal mixing matrix.
    pub fn new(patch: usize, seed: u64) -> Result<Self> {
        if patch == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        let c = patch * patch;
        let mix = random_orthogonal(c, seed);
        Ok(Self::with_matrix(patch, seed, mix, true))
    }

    /// Identity mixing with no shift: the latent is the image rearranged.
    pub fn identity(patch: usize) -> Self {
        let c = patch * patch;
        let mut mix = vec![0.0; c * c];
        for i in 0..c {
            mix[i * c + i] = 1.0;
        }
        Self::with_matrix(patch, 0, mix, false)
    }

    fn with_matrix(patch: usize, seed: u64, mix: Vec<f64>, centered: bool) -> Self {
        let c = patch * patch;
        let shift = (0..c)
            .map(|k| {
                if centered {
                    0.5 * mix[k * c..(k + 1) * c].iter().sum::<f64>()
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            patch,
            seed,
            mix,
            shift,
        }
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn channels(&self) -> usize {
        self.patch * self.patch
    }

    pub fn mix(&self) -> &[f64] {
        &self.mix
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    /// Latent grid `(rows, cols)` for an image, or the padding needed.
    pub fn grid(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        let p = self.patch;
        if !width.is_multiple_of(p) || !height.is_multiple_of(p) || width == 0 || height == 0 {
            return Err(Error::NotDivisible {
                height,
                width,
                patch: p,
                pad_h: (p - height % p) % p,
                pad_w: (p - width % p) % p,
            });
        }
        Ok((height / p, width / p))
    }

    pub fn encode(&self, y: &GrayImage) -> Result<Tensor> {
        let (gh, gw) = self.grid(y.width(), y.height())?;
        let p = self.patch;
        let c = self.channels();
        let cells = gh * gw;
        let mut out = vec![0.0; c * cells];
        let mut patch = vec![0.0; c];
        for bi in 0..gh {
            for bj in 0..gw {
                for u in 0..p {
                    for v in 0..p {
                        patch[u * p + v] = y.get(bj * p + v, bi * p + u);
                    }
                }
                let cell = bi * gw + bj;
                for k in 0..c {
                    let row = &self.mix[k * c..(k + 1) * c];
                    let dot: f64 = row.iter().zip(&patch).map(|(m, x)| m * x).sum();
                    out[k * cells + cell] = dot - self.shift[k];
                }
            }
        }
        Tensor::new(&[c, gh, gw], out)
    }

    /// Encodes each plane and stacks the results: `[n·p², H/p, W/p]`.
    pub fn encode_planes(&self, planes: &[GrayImage]) -> Result<Tensor> {
        if planes.is_empty() {
            return Err(Error::Shape("no planes to encode".into()));
        }
        let encoded: Vec<Tensor> = planes.iter().map(|p| self.encode(p)).collect::<Result<_>>()?;
        let shape = encoded[0].shape().to_vec();
        if encoded.iter().any(|t| t.shape() != shape.as_slice()) {
            return Err(Error::Shape("planes differ in size".into()));
        }
        let data: Vec<f64> = encoded.into_iter().flat_map(Tensor::into_data).collect();
        Tensor::new(&[planes.len() * shape[0], shape[1], shape[2]], data)
    }

    /// Encodes each color plane and stacks them: `[3p², H/p, W/p]`.
    pub fn encode_rgb(&self, x: &RgbImage) -> Result<Tensor> {
        self.encode_planes(x.planes())
    }

    /// Inverse of [`encode`](Self::encode). With `clamp`, output samples are
    /// limited to `[0, 1]`.
    pub fn decode(&self, z: &Tensor, clamp: bool) -> Result<GrayImage> {
        let c = self.channels();
        let (gh, gw) = match z.shape() {
            [ch, gh, gw] if *ch == c => (*gh, *gw),
            s => {
                return Err(Error::Shape(format!(
                    "latent must be [{c}, h, w], got {s:?}"
                )))
            }
        };
        let p = self.patch;
        let cells = gh * gw;
        let zd = z.data();
        let mut img = GrayImage::new(gw * p, gh * p);
        let mut lat = vec![0.0; c];
        for bi in 0..gh {
            for bj in 0..gw {
                let cell = bi * gw + bj;
                for k in 0..c {
                    lat[k] = zd[k * cells + cell] + self.shift[k];
                }
                for j in 0..c {
                    // column j of M, i.e. row j of Mᵀ
                    let mut v = 0.0;
                    for k in 0..c {
                        v += self.mix[k * c + j] * lat[k];
                    }
                    if clamp {
                        v = v.clamp(0.0, 1.0);
                    }
                    img.set(bj * p + j % p, bi * p + j / p, v);
                }
            }
        }
        Ok(img)
    }

    /// Decoded prediction clamped into `[PROB_EPS, 1 − PROB_EPS]` for
    /// log-domain losses.
    pub fn decode_probabilities(&self, z: &Tensor) -> Result<GrayImage> {
        Ok(self
            .decode(z, false)?
            .map(|v| v.clamp(PROB_EPS, 1.0 - PROB_EPS)))
    }
}

/// Orthonormalizes a seeded Gaussian matrix by two passes of modified
/// Gram–Schmidt over its rows.
fn random_orthogonal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::derive(seed, 0x636f_6465_63);
    let mut m: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
    for _ in 0..2 {
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|c| m[i * n + c] * m[j * n + c]).sum();
                for c in 0..n {
                    m[i * n + c] -= dot * m[j * n + c];
                }
            }
            let norm = (0..n).map(|c| m[i * n + c].powi(2)).sum::<f64>().sqrt();
            for c in 0..n {
                m[i * n + c] /= norm;
            }
        }
    }
    m
}
