//! Target models: the white-box toy vision-language model the gradient
//! attack is developed against, a quadratic probe for optimizer tests, and
//! a trivial echo target for wiring tests. Remote black-box targets live in
//! [`crate::remote`] and implement the same trait.

pub mod probe;
pub mod toy;
pub mod vocab;

use crate::error::{Error, Result};
use crate::numerics::{GradTensor, ImageTensor};

/// A model the attacks run against. Implementations are either white-box
/// (closed-form image gradients available) or black-box (generation only;
/// gradient and likelihood queries fail with [`Error::Capability`], never
/// a silent approximation).
pub trait TargetModel: Send + Sync {
    /// Stable, human-readable identity string recorded in transcripts and
    /// reports, e.g. `toy-lvlm(seed=7,h=32,w=32,c=3,d=16,v=64)`.
    fn identity(&self) -> String;

    /// Whether [`TargetModel::grad_image`] is expected to succeed.
    fn white_box_gradient(&self) -> bool;

    /// Log-likelihood of `target` given the image and `prompt`; always
    /// `<= 0` for probability-normalized models.
    fn log_likelihood(&self, image: &ImageTensor, prompt: &str, target: &str) -> Result<f64>;

    /// Gradient of [`TargetModel::log_likelihood`] with respect to the
    /// image pixels.
    fn grad_image(&self, image: &ImageTensor, prompt: &str, target: &str) -> Result<GradTensor>;

    /// Generates a response to `prompt` while looking at `image`.
    /// `temperature == 0` must be deterministic greedy decoding.
    fn generate(
        &self,
        image: &ImageTensor,
        prompt: &str,
        max_new_tokens: usize,
        temperature: f64,
    ) -> Result<String>;
}

/// Degenerate target that parrots the prompt back. Useful for exercising
/// the judge/rephrase loop without any model behavior in the way.
#[derive(Debug, Clone, Default)]
pub struct EchoTarget;

impl TargetModel for EchoTarget {
    fn identity(&self) -> String {
        "echo".to_string()
    }

    fn white_box_gradient(&self) -> bool {
        false
    }

    fn log_likelihood(&self, _image: &ImageTensor, _prompt: &str, _target: &str) -> Result<f64> {
        Err(Error::Capability {
            model: self.identity(),
            operation: "log_likelihood",
        })
    }

    fn grad_image(&self, _image: &ImageTensor, _prompt: &str, _target: &str) -> Result<GradTensor> {
        Err(Error::Capability {
            model: self.identity(),
            operation: "grad_image",
        })
    }

    fn generate(
        &self,
        _image: &ImageTensor,
        prompt: &str,
        _max_new_tokens: usize,
        _temperature: f64,
    ) -> Result<String> {
        Ok(prompt.to_string())
    }
}
