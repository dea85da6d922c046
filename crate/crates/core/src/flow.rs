//! Linear probability path, flow-matching loss, Euler sampler and guided
//! field composition.

use crate::error::{Error, Result};
use crate::net::{Condition, VelocityNet};
use crate::numerics::{Rng, Tensor};

/// Decreasing time grid `t_0 = 1 > t_1 > … > t_K = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    times: Vec<f64>,
}

impl Schedule {
    /// Uniform grid `t_k = 1 − k/K`.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("step count must be at least 1".into()));
        }
        let k = steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|i| 1.0 - i as f64 / k).collect();
        times[0] = 1.0;
        times[steps] = 0.0;
        Ok(Self { times })
    }

    /// Arbitrary strictly decreasing grid from 1 to 0.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        let ok = times.len() >= 2
            && times[0] == 1.0
            && *times.last().unwrap() == 0.0
            && times.windows(2).all(|w| w[1] < w[0]);
        if !ok {
            return Err(Error::Config(
                "schedule must decrease strictly from 1 to 0".into(),
            ));
        }
        Ok(Self { times })
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("time {t} outside [0, 1]")))
    }
}

/// `z_t = (1 − t)·z0 + t·eps`.
pub fn make_path_sample(z0: &Tensor, eps: &Tensor, t: f64) -> Result<Tensor> {
    check_time(t)?;
    z0.zip_map(eps, |a, b| (1.0 - t) * a + t * b)
}

/// Regression target of the velocity: `eps − z0`.
pub fn velocity_target(z0: &Tensor, eps: &Tensor) -> Result<Tensor> {
    eps.sub(z0)
}

/// `ẑ0 = z_t − t·v`.
pub fn clean_estimate(z_t: &Tensor, t: f64, v: &Tensor) -> Result<Tensor> {
    check_time(t)?;
    z_t.zip_map(v, |z, v| z - t * v)
}

/// Element-mean squared error between a velocity and its target.
pub fn fm_loss_value(v: &Tensor, z0: &Tensor, eps: &Tensor) -> Result<f64> {
    let target = velocity_target(z0, eps)?;
    let d = v.sub(&target)?;
    Ok(d.data().iter().map(|x| x * x).sum::<f64>() / d.len().max(1) as f64)
}

/// Flow-matching loss of `net` at one `(z0, eps, t)` draw. With a condition
/// the adapted conditional field is used, otherwise the base field.
pub fn fm_loss(
    net: &VelocityNet,
    z0: &Tensor,
    eps: &Tensor,
    t: f64,
    cond: Option<&Condition>,
) -> Result<f64> {
    let z_t = make_path_sample(z0, eps, t)?;
    let v = net.velocity(&z_t, t, cond, cond.is_some())?;
    fm_loss_value(&v, z0, eps)
}

/// A time-dependent velocity field on latents.
pub trait VelocityField {
    fn eval(&self, z: &Tensor, t: f64) -> Result<Tensor>;
}

impl<F> VelocityField for F
where
    F: Fn(&Tensor, f64) -> Result<Tensor>,
{
    fn eval(&self, z: &Tensor, t: f64) -> Result<Tensor> {
        self(z, t)
    }
}

/// The unconditional backbone field: no condition tokens, no adapter.
pub struct BaseField<'a>(pub &'a VelocityNet);

impl VelocityField for BaseField<'_> {
    fn eval(&self, z: &Tensor, t: f64) -> Result<Tensor> {
        self.0.base_velocity(z, t)
    }
}

/// The adapted field conditioned on one image.
pub struct CondField<'a> {
    pub net: &'a VelocityNet,
    pub cond: &'a Condition,
}

impl VelocityField for CondField<'_> {
    fn eval(&self, z: &Tensor, t: f64) -> Result<Tensor> {
        self.net.cond_velocity(z, t, self.cond)
    }
}

/// `v_base + γ·(v_cond − v_base)`, returning either input unchanged at
/// `γ = 0` and `γ = 1`.
pub fn guide(v_base: &Tensor, v_cond: &Tensor, gamma: f64) -> Result<Tensor> {
    if gamma == 1.0 {
        v_base.same_shape(v_cond)?;
        return Ok(v_cond.clone());
    }
    if gamma == 0.0 {
        v_base.same_shape(v_cond)?;
        return Ok(v_base.clone());
    }
    v_base.zip_map(v_cond, |b, c| b + gamma * (c - b))
}

/// Guided combination of a base and a conditional field.
pub struct GuidedField<B, C> {
    pub base: B,
    pub cond: C,
    pub gamma: f64,
}

impl<B, C> GuidedField<B, C> {
    pub fn new(base: B, cond: C, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("guidance scale {gamma} must be >= 0")));
        }
        Ok(Self { base, cond, gamma })
    }
}

impl<B: VelocityField, C: VelocityField> VelocityField for GuidedField<B, C> {
    fn eval(&self, z: &Tensor, t: f64) -> Result<Tensor> {
        if self.gamma == 1.0 {
            return self.cond.eval(z, t);
        }
        if self.gamma == 0.0 {
            return self.base.eval(z, t);
        }
        let vb = self.base.eval(z, t)?;
        let vc = self.cond.eval(z, t)?;
        guide(&vb, &vc, self.gamma)
    }
}

/// Integrates `field` from `z_init` at `t = 1` to `t = 0` with explicit
/// Euler steps.
pub fn integrate(field: &impl VelocityField, schedule: &Schedule, z_init: Tensor) -> Result<Tensor> {
    let mut z = z_init;
    for (k, w) in schedule.times().windows(2).enumerate() {
        let (t, t_next) = (w[0], w[1]);
        let v = field.eval(&z, t)?;
        z.axpy(t_next - t, &v)?;
        if !z.is_finite() {
            return Err(Error::NonFiniteSample { step: k });
        }
    }
    Ok(z)
}

/// Draws `z_1 ~ N(0, I)` of the given shape and integrates to `t = 0`.
pub fn sample(
    field: &impl VelocityField,
    schedule: &Schedule,
    rng: &mut Rng,
    shape: &[usize],
) -> Result<Tensor> {
    integrate(field, schedule, rng.randn(shape))
}
