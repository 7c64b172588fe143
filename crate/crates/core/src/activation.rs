//! Forward activations applied after pooling.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::math;
use crate::plasticity::soft_competition_into;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationSpec {
    /// `u^p` for positive `u`, zero otherwise.
    Repu {
        power: f32,
    },
    /// RePU of the value minus the cross-channel mean at its position.
    Triangle {
        power: f32,
    },
    /// Softmax across channels at each position.
    SoftmaxFwd {
        inverse_temperature: f32,
    },
    Relu,
}

impl ActivationSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationSpec::Repu { power } | ActivationSpec::Triangle { power }
                if !(power > 0.0 && power.is_finite()) =>
            {
                Err(config_err!("activation power must be positive, got {power}"))
            }
            ActivationSpec::SoftmaxFwd { inverse_temperature }
                if !(inverse_temperature > 0.0 && inverse_temperature.is_finite()) =>
            {
                Err(config_err!("softmax inverse temperature must be positive, got {inverse_temperature}"))
            }
            _ => Ok(()),
        }
    }

    /// Applies the activation in place over an `(n, c, h, w)` tensor.
    pub fn apply(&self, t: &mut Tensor) {
        let s = t.shape();
        match *self {
            ActivationSpec::Relu => t.data_mut().iter_mut().for_each(|v| *v = relu(*v)),
            ActivationSpec::Repu { power } => t.data_mut().iter_mut().for_each(|v| *v = repu(*v, power)),
            ActivationSpec::Triangle { power } => {
                let plane = s.plane();
                for item in t.data_mut().chunks_mut(s.item_len()) {
                    for pos in 0..plane {
                        let mean = (0..s.c).map(|c| item[c * plane + pos]).sum::<f32>() / s.c as f32;
                        for c in 0..s.c {
                            let v = &mut item[c * plane + pos];
                            *v = repu(*v - mean, power);
                        }
                    }
                }
            }
            ActivationSpec::SoftmaxFwd { inverse_temperature } => {
                let plane = s.plane();
                let mut u = alloc::vec![0.0f32; s.c];
                let mut y = alloc::vec![0.0f32; s.c];
                for item in t.data_mut().chunks_mut(s.item_len()) {
                    for pos in 0..plane {
                        for c in 0..s.c {
                            u[c] = item[c * plane + pos];
                        }
                        soft_competition_into(&u, inverse_temperature, &mut y);
                        for c in 0..s.c {
                            item[c * plane + pos] = y[c];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub fn relu(u: f32) -> f32 {
    if u > 0.0 {
        u
    } else {
        0.0
    }
}

#[inline]
pub fn repu(u: f32, p: f32) -> f32 {
    if u <= 0.0 || u.is_nan() {
        0.0
    } else if p == 1.0 {
        u
    } else {
        math::powf(u, p)
    }
}

/// Triangle over one position's channel vector.
pub fn triangle(u: &[f32], p: f32) -> alloc::vec::Vec<f32> {
    let mean = u.iter().sum::<f32>() / u.len() as f32;
    u.iter().map(|&v| repu(v - mean, p)).collect()
}

/// Channel softmax over one position's channel vector.
pub fn softmax_fwd(u: &[f32], inverse_temperature: f32) -> alloc::vec::Vec<f32> {
    crate::plasticity::soft_competition(u, inverse_temperature)
}
