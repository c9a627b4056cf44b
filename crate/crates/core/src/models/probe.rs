//! A quadratic test objective wearing the [`TargetModel`] trait.
//!
//! Value `-(x - t)^2` summed over pixels, gradient `-2(x - t)`. The
//! constrained maximizer inside an L-infinity ball of radius `epsilon`
//! around `origin` (intersected with `[0, 1]`) is known in closed form:
//! clamp `t` into the feasible box per element. That makes this the probe
//! of choice for convergence tests of the projected-gradient optimizer.

use crate::error::{Error, Result};
use crate::models::TargetModel;
use crate::numerics::{GradTensor, ImageTensor};

/// Value and gradient of `-sum((x - t)^2)`.
pub fn quad_probe_value_grad(x: &ImageTensor, target: &ImageTensor) -> Result<(f64, GradTensor)> {
    if x.shape() != target.shape() {
        return Err(Error::shape(
            format!("{:?}", x.shape()),
            format!("{:?}", target.shape()),
        ));
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(x.len());
    for (&xi, &ti) in x.data().iter().zip(target.data()) {
        let diff = xi - ti;
        value -= diff * diff;
        grad.push(-2.0 * diff);
    }
    let (h, w, c) = x.shape();
    Ok((value, GradTensor::from_data(h, w, c, grad)?))
}

/// The closed-form constrained maximizer: `t` clamped into
/// `[max(0, origin - eps), min(1, origin + eps)]` per element.
pub fn quad_probe_optimum(
    target: &ImageTensor,
    origin: &ImageTensor,
    epsilon: f64,
) -> Result<ImageTensor> {
    if target.shape() != origin.shape() {
        return Err(Error::shape(
            format!("{:?}", target.shape()),
            format!("{:?}", origin.shape()),
        ));
    }
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::invalid("epsilon", "must be finite and nonnegative"));
    }
    let data = target
        .data()
        .iter()
        .zip(origin.data())
        .map(|(&t, &o)| t.clamp((o - epsilon).max(0.0), (o + epsilon).min(1.0)))
        .collect();
    let (h, w, c) = target.shape();
    ImageTensor::new(h, w, c, data)
}

/// Probe model. Ignores all text; refuses to generate.
#[derive(Debug, Clone)]
pub struct QuadraticProbe {
    target: ImageTensor,
}

impl QuadraticProbe {
    pub fn new(target: ImageTensor) -> Self {
        Self { target }
    }

    pub fn target(&self) -> &ImageTensor {
        &self.target
    }
}

impl TargetModel for QuadraticProbe {
    fn identity(&self) -> String {
        let (h, w, c) = self.target.shape();
        format!("quadratic-probe(h={h},w={w},c={c})")
    }

    fn white_box_gradient(&self) -> bool {
        true
    }

    fn log_likelihood(&self, image: &ImageTensor, _prompt: &str, _target: &str) -> Result<f64> {
        Ok(quad_probe_value_grad(image, &self.target)?.0)
    }

    fn grad_image(&self, image: &ImageTensor, _prompt: &str, _target: &str) -> Result<GradTensor> {
        Ok(quad_probe_value_grad(image, &self.target)?.1)
    }

    fn generate(
        &self,
        _image: &ImageTensor,
        _prompt: &str,
        _max_new_tokens: usize,
        _temperature: f64,
    ) -> Result<String> {
        Err(Error::Capability {
            model: self.identity(),
            operation: "generate",
        })
    }
}
