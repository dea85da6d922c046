//! Pixel-space weighted cross-entropy with an uncertainty band, its time
//! weighting, and the decoder-free proxy-gradient operator that feeds it
//! back into latent training.

use crate::error::{Error, Result};
use crate::flow::make_path_sample;
use crate::image::GrayImage;
use crate::net::{Condition, VelocityNet};
use crate::numerics::{Graph, NodeId, Tensor};

/// Ground-truth values below this count as exact zeros (half an 8-bit step).
pub const ZERO_LEVEL: f64 = 1.0 / 510.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelLossConfig {
    /// Uncertainty threshold: `0 < y < eta` is ignored.
    pub eta: f64,
    /// Positive-class weight multiplier.
    pub lambda: f64,
}

impl Default for PixelLossConfig {
    fn default() -> Self {
        Self {
            eta: 0.3,
            lambda: 1.1,
        }
    }
}

impl PixelLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta {} must lie in (0, 1)", self.eta)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be positive", self.lambda)));
        }
        Ok(())
    }
}

/// Pixel class under the three-way split of the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelClass {
    Negative,
    Uncertain,
    Positive,
}

pub fn classify(y: f64, eta: f64) -> PixelClass {
    if y < ZERO_LEVEL {
        PixelClass::Negative
    } else if y < eta {
        PixelClass::Uncertain
    } else {
        PixelClass::Positive
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelLoss {
    pub value: f64,
    pub alpha: f64,
    pub beta: f64,
    pub positives: usize,
    pub negatives: usize,
    /// Set when every pixel fell in the uncertainty band.
    pub all_uncertain: bool,
}

/// Class-balanced cross-entropy of a prediction `yhat ∈ (0, 1)` against soft
/// ground truth `y`, averaged over the non-ambiguous pixels.
pub fn pixel_loss(yhat: &GrayImage, y: &GrayImage, cfg: &PixelLossConfig) -> Result<PixelLoss> {
    if yhat.width() != y.width() || yhat.height() != y.height() {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            yhat.width(),
            yhat.height(),
            y.width(),
            y.height()
        )));
    }
    let (mut pos, mut neg) = (0usize, 0usize);
    for &v in y.data() {
        match classify(v, cfg.eta) {
            PixelClass::Positive => pos += 1,
            PixelClass::Negative => neg += 1,
            PixelClass::Uncertain => {}
        }
    }
    let valid = pos + neg;
    if valid == 0 {
        return Ok(PixelLoss {
            value: 0.0,
            alpha: 0.0,
            beta: 0.0,
            positives: 0,
            negatives: 0,
            all_uncertain: true,
        });
    }
    let n = valid as f64;
    let alpha = cfg.lambda * pos as f64 / n;
    let beta = neg as f64 / n;
    let mut sum = 0.0;
    for (&p, &t) in yhat.data().iter().zip(y.data()) {
        sum += match classify(t, cfg.eta) {
            PixelClass::Negative => -alpha * (1.0 - p).ln(),
            PixelClass::Uncertain => 0.0,
            PixelClass::Positive => -beta * p.ln(),
        };
    }
    Ok(PixelLoss {
        value: sum / n,
        alpha,
        beta,
        positives: pos,
        negatives: neg,
        all_uncertain: false,
    })
}

/// `σ_t = (1 − t)²`.
pub fn sigma_weight(t: f64) -> f64 {
    (1.0 - t) * (1.0 - t)
}

/// Scalar node valued `l_pix` whose backward pass hands `l_pix·1` to
/// `clean` and nothing to anything else.
pub fn inject_proxy_gradient(g: &mut Graph, clean: NodeId, l_pix: f64) -> Result<NodeId> {
    if !l_pix.is_finite() {
        return Err(Error::Numeric(format!("pixel loss {l_pix} is not finite")));
    }
    let loss = g.constant(Tensor::scalar(l_pix));
    g.specify_gradient(clean, loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub pixel: PixelLossConfig,
    /// When false the pixel term is left out of the graph entirely.
    pub pixel_enabled: bool,
    /// Multiplies the injected pixel term (and its gradient).
    pub proxy_weight: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            pixel: PixelLossConfig::default(),
            pixel_enabled: true,
            proxy_weight: 1.0,
        }
    }
}

/// One training draw.
#[derive(Clone, Debug)]
pub struct TrainItem<'a> {
    pub z0: &'a Tensor,
    pub y: &'a GrayImage,
    pub cond: Option<&'a Condition>,
    pub eps: Tensor,
    pub t: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub fm: f64,
    pub pix: f64,
    pub sigma: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct SampleLoss {
    pub loss: NodeId,
    pub velocity: NodeId,
    /// One-step clean latent estimate, present when the pixel term is active.
    pub clean: Option<NodeId>,
    pub terms: LossTerms,
}

/// Records `L_FM + σ_t·L_pix` for one item. The pixel term needs a
/// condition and is skipped when disabled or when `σ_t = 0`.
pub fn sample_loss(
    g: &mut Graph,
    net: &VelocityNet,
    item: &TrainItem<'_>,
    cfg: &ObjectiveConfig,
) -> Result<SampleLoss> {
    let z_t = make_path_sample(item.z0, &item.eps, item.t)?;
    let trace = net.forward_graph(g, &z_t, item.t, item.cond, item.cond.is_some())?;
    let v = trace.velocity;
    let target = g.constant(item.eps.sub(item.z0)?);
    let fm = g.mse_mean(v, target)?;
    let fm_value = g.value(fm).data()[0];
    let sigma = sigma_weight(item.t);
    let mut terms = LossTerms {
        fm: fm_value,
        pix: 0.0,
        sigma,
        total: fm_value,
    };
    let use_pixel = cfg.pixel_enabled && item.cond.is_some() && sigma > 0.0;
    if !use_pixel {
        return Ok(SampleLoss {
            loss: fm,
            velocity: v,
            clean: None,
            terms,
        });
    }
    let step = g.scale(v, -item.t);
    let zt_node = g.constant(z_t);
    let clean = g.add(zt_node, step)?;
    let yhat = net.codec().decode_probabilities(g.value(clean))?;
    let pix = pixel_loss(&yhat, item.y, &cfg.pixel)?;
    let proxy = inject_proxy_gradient(g, clean, pix.value)?;
    let weighted = g.scale(proxy, cfg.proxy_weight * sigma);
    let loss = g.add(fm, weighted)?;
    terms.pix = pix.value;
    terms.total = fm_value + cfg.proxy_weight * sigma * pix.value;
    Ok(SampleLoss {
        loss,
        velocity: v,
        clean: Some(clean),
        terms,
    })
}

/// Batch mean of [`sample_loss`] recorded on one graph.
pub fn total_loss(
    g: &mut Graph,
    net: &VelocityNet,
    items: &[TrainItem<'_>],
    cfg: &ObjectiveConfig,
) -> Result<(NodeId, Vec<SampleLoss>)> {
    if items.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let parts = items
        .iter()
        .map(|it| sample_loss(g, net, it, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = parts[0].loss;
    for p in &parts[1..] {
        acc = g.add(acc, p.loss)?;
    }
    let mean = g.scale(acc, 1.0 / items.len() as f64);
    Ok((mean, parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: &[f64]) -> GrayImage {
        GrayImage::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn worked_example() {
        let y = img(&[0.0, 0.2, 0.5, 1.0]);
        let yhat = img(&[0.1, 0.9, 0.5, 0.8]);
        let l = pixel_loss(&yhat, &y, &PixelLossConfig::default()).unwrap();
        assert_eq!((l.positives, l.negatives), (2, 1));
        assert!((l.alpha - 2.2 / 3.0).abs() < 1e-15);
        assert!((l.beta - 1.0 / 3.0).abs() < 1e-15);
        assert!((l.value - 0.127565).abs() < 1e-6);
    }

    #[test]
    fn all_uncertain_is_zero() {
        let y = img(&[0.1, 0.2, 0.25]);
        let yhat = img(&[0.3, 0.3, 0.3]);
        let l = pixel_loss(&yhat, &y, &PixelLossConfig::default()).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.all_uncertain);
    }

    #[test]
    fn balanced_weights() {
        let y = img(&[0.0, 1.0, 0.0, 1.0]);
        let yhat = img(&[0.5; 4]);
        let cfg = PixelLossConfig {
            eta: 0.3,
            lambda: 1.7,
        };
        let l = pixel_loss(&yhat, &y, &cfg).unwrap();
        assert!((l.alpha - 0.85).abs() < 1e-15);
        assert!((l.beta - 0.5).abs() < 1e-15);
    }

    #[test]
    fn near_perfect_prediction() {
        let y = img(&[0.0, 1.0, 1.0, 0.0, 0.0]);
        let yhat = y.map(|v| v.clamp(crate::codec::PROB_EPS, 1.0 - crate::codec::PROB_EPS));
        let l = pixel_loss(&yhat, &y, &PixelLossConfig::default()).unwrap();
        assert!(l.value < 1e-4);
    }

    #[test]
    fn sigma_values() {
        assert_eq!(sigma_weight(1.0), 0.0);
        assert_eq!(sigma_weight(0.0), 1.0);
        assert_eq!(sigma_weight(0.5), 0.25);
    }

    #[test]
    fn config_bounds() {
        assert!(PixelLossConfig { eta: 1.0, lambda: 1.0 }.validate().is_err());
        assert!(PixelLossConfig { eta: 0.3, lambda: 0.0 }.validate().is_err());
        assert!(PixelLossConfig::default().validate().is_ok());
    }
}
