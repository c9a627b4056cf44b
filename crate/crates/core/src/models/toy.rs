//! A tiny, fully differentiable vision-language model.
//!
//! The model exists so the image-perturbation attack has a white-box
//! target whose gradients are exact and cheap. It is a bag-of-context
//! language model:
//!
//! * the image embeds linearly: `h_v = W_v * flatten(x) + b_v`;
//! * before emitting the j-th target token the context is the mean of
//!   `h_v`, all prompt-token embeddings, and the embeddings of the
//!   already-emitted target tokens (`n_j = 1 + |prompt| + (j - 1)`
//!   vectors in total);
//! * next-token logits are `W_o * context + b_o`.
//!
//! Because everything upstream of the softmax is linear, the image
//! gradient of the target log-likelihood has the closed form
//! `W_v^T * sum_j (1/n_j) * W_o^T * (onehot(y_j) - softmax_j)`, which the
//! finite-difference oracle in [`crate::numerics`] can verify to near
//! machine precision.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::vocab::{Vocabulary, EOS_ID};
use crate::models::TargetModel;
use crate::numerics::{GradTensor, ImageTensor};

/// Parameter bundle. Fields are public so tests can build degenerate
/// configurations (e.g. zeroed output weights) directly.
#[derive(Debug, Clone)]
pub struct ToyLvlmParams {
    /// d x (H*W*C) visual projection.
    pub w_visual: Array2<f64>,
    /// d-dimensional visual bias.
    pub b_visual: Array1<f64>,
    /// V x d token embedding table.
    pub token_embed: Array2<f64>,
    /// V x d output projection.
    pub w_out: Array2<f64>,
    /// V-dimensional output bias.
    pub b_out: Array1<f64>,
}

impl ToyLvlmParams {
    /// Draws every parameter i.i.d. uniform on [-0.1, 0.1) from a ChaCha8
    /// stream seeded with `seed`. Fill order is fixed and part of the
    /// reproducibility contract: `w_visual` row-major, `b_visual`,
    /// `token_embed` row-major, `w_out` row-major, `b_out`.
    pub fn seeded(
        seed: u64,
        height: usize,
        width: usize,
        channels: usize,
        embed_dim: usize,
        vocab_size: usize,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect() };
        let pixels = height * width * channels;
        let w_visual =
            Array2::from_shape_vec((embed_dim, pixels), draw(embed_dim * pixels)).unwrap();
        let b_visual = Array1::from_vec(draw(embed_dim));
        let token_embed =
            Array2::from_shape_vec((vocab_size, embed_dim), draw(vocab_size * embed_dim)).unwrap();
        let w_out =
            Array2::from_shape_vec((vocab_size, embed_dim), draw(vocab_size * embed_dim)).unwrap();
        let b_out = Array1::from_vec(draw(vocab_size));
        Self {
            w_visual,
            b_visual,
            token_embed,
            w_out,
            b_out,
        }
    }
}

/// The toy model: parameters, vocabulary, and the image shape it accepts.
#[derive(Debug, Clone)]
pub struct ToyLvlm {
    params: ToyLvlmParams,
    vocab: Vocabulary,
    height: usize,
    width: usize,
    channels: usize,
    label: String,
}

impl ToyLvlm {
    /// Validates that all parameter shapes agree with each other, the
    /// image shape, and the vocabulary size.
    pub fn new(
        params: ToyLvlmParams,
        vocab: Vocabulary,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<Self> {
        let label = format!(
            "toy-lvlm(custom,h={height},w={width},c={channels},d={},v={})",
            params.w_visual.nrows(),
            vocab.len()
        );
        Self::with_label(params, vocab, height, width, channels, label)
    }

    /// Seeded model; the seed becomes part of the identity string so
    /// transfer experiments can tell source and victim apart.
    pub fn seeded(
        seed: u64,
        height: usize,
        width: usize,
        channels: usize,
        embed_dim: usize,
        vocab: Vocabulary,
    ) -> Result<Self> {
        let params = ToyLvlmParams::seeded(seed, height, width, channels, embed_dim, vocab.len());
        let label = format!(
            "toy-lvlm(seed={seed},h={height},w={width},c={channels},d={embed_dim},v={})",
            vocab.len()
        );
        Self::with_label(params, vocab, height, width, channels, label)
    }

    /// The reference configuration: 32x32 RGB input, 16-dimensional
    /// embedding, default 64-token vocabulary.
    pub fn default_toy(seed: u64) -> Self {
        Self::seeded(seed, 32, 32, 3, 16, Vocabulary::default_toy())
            .expect("reference configuration is consistent")
    }

    fn with_label(
        params: ToyLvlmParams,
        vocab: Vocabulary,
        height: usize,
        width: usize,
        channels: usize,
        label: String,
    ) -> Result<Self> {
        let pixels = height * width * channels;
        let d = params.w_visual.nrows();
        let v = vocab.len();
        if params.w_visual.ncols() != pixels {
            return Err(Error::shape(
                format!("w_visual {:?}", params.w_visual.dim()),
                format!("(d, {pixels})"),
            ));
        }
        if params.b_visual.len() != d {
            return Err(Error::shape(
                format!("b_visual len {}", params.b_visual.len()),
                format!("({d})"),
            ));
        }
        if params.token_embed.dim() != (v, d) {
            return Err(Error::shape(
                format!("token_embed {:?}", params.token_embed.dim()),
                format!("({v}, {d})"),
            ));
        }
        if params.w_out.dim() != (v, d) {
            return Err(Error::shape(
                format!("w_out {:?}", params.w_out.dim()),
                format!("({v}, {d})"),
            ));
        }
        if params.b_out.len() != v {
            return Err(Error::shape(
                format!("b_out len {}", params.b_out.len()),
                format!("({v})"),
            ));
        }
        Ok(Self {
            params,
            vocab,
            height,
            width,
            channels,
            label,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    fn check_tokens(&self, ids: &[usize]) -> Result<()> {
        let v = self.vocab.len();
        for &id in ids {
            if id >= v {
                return Err(Error::TokenOutOfRange { id, vocab_size: v });
            }
        }
        Ok(())
    }

    fn visual_embed(&self, image: &ImageTensor) -> Result<Array1<f64>> {
        if image.shape() != self.image_shape() {
            return Err(Error::shape(
                format!("{:?}", image.shape()),
                format!("{:?}", self.image_shape()),
            ));
        }
        let x = ArrayView1::from(image.data());
        Ok(self.params.w_visual.dot(&x) + &self.params.b_visual)
    }

    fn embed_sum(&self, ids: &[usize]) -> Array1<f64> {
        let d = self.params.w_visual.nrows();
        let mut sum = Array1::zeros(d);
        for &id in ids {
            sum += &self.params.token_embed.row(id);
        }
        sum
    }

    /// Token-level log-likelihood of `target` given `image` and `prompt`.
    pub fn loglik_tokens(
        &self,
        image: &ImageTensor,
        prompt: &[usize],
        target: &[usize],
    ) -> Result<f64> {
        self.check_tokens(prompt)?;
        self.check_tokens(target)?;
        if target.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let h_v = self.visual_embed(image)?;
        let mut context_sum = &h_v + &self.embed_sum(prompt);
        let mut total = 0.0;
        // context length n counts the image slot, the prompt, and every
        // target token already emitted
        for (n, &y) in (1 + prompt.len()..).zip(target) {
            let logits = self.params.w_out.dot(&(&context_sum / n as f64)) + &self.params.b_out;
            total += logits[y] - log_sum_exp(&logits);
            context_sum += &self.params.token_embed.row(y);
        }
        Ok(total)
    }

    /// Closed-form gradient of [`Self::loglik_tokens`] with respect to the
    /// image pixels.
    pub fn grad_image_tokens(
        &self,
        image: &ImageTensor,
        prompt: &[usize],
        target: &[usize],
    ) -> Result<GradTensor> {
        self.check_tokens(prompt)?;
        self.check_tokens(target)?;
        if target.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let h_v = self.visual_embed(image)?;
        let mut context_sum = &h_v + &self.embed_sum(prompt);
        let d = self.params.w_visual.nrows();
        let mut g_visual: Array1<f64> = Array1::zeros(d);
        for (n, &y) in (1 + prompt.len()..).zip(target) {
            let logits = self.params.w_out.dot(&(&context_sum / n as f64)) + &self.params.b_out;
            let probs = softmax(&logits);
            let mut residual = -probs;
            residual[y] += 1.0;
            g_visual += &(self.params.w_out.t().dot(&residual) / n as f64);
            context_sum += &self.params.token_embed.row(y);
        }
        let grad = self.params.w_visual.t().dot(&g_visual);
        GradTensor::from_data(self.height, self.width, self.channels, grad.to_vec())
    }

    /// Autoregressive decoding. Greedy when `temperature == 0` (ties go to
    /// the lowest id); otherwise samples from the tempered softmax using a
    /// PRNG seeded from the image bytes, prompt, and decode settings, so
    /// identical calls always return identical text.
    pub fn generate_tokens(
        &self,
        image: &ImageTensor,
        prompt: &[usize],
        max_new_tokens: usize,
        temperature: f64,
    ) -> Result<Vec<usize>> {
        self.check_tokens(prompt)?;
        if !temperature.is_finite() || temperature < 0.0 {
            return Err(Error::invalid(
                "temperature",
                "must be finite and nonnegative",
            ));
        }
        let h_v = self.visual_embed(image)?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(decode_seed(image, prompt, max_new_tokens, temperature));
        let mut context_sum = &h_v + &self.embed_sum(prompt);
        let mut out = Vec::new();
        for n in (1 + prompt.len()..).take(max_new_tokens) {
            let logits = self.params.w_out.dot(&(&context_sum / n as f64)) + &self.params.b_out;
            let next = if temperature == 0.0 {
                argmax(&logits)
            } else {
                sample(&(logits / temperature), &mut rng)
            };
            out.push(next);
            if next == EOS_ID {
                break;
            }
            context_sum += &self.params.token_embed.row(next);
        }
        Ok(out)
    }
}

impl TargetModel for ToyLvlm {
    fn identity(&self) -> String {
        self.label.clone()
    }

    fn white_box_gradient(&self) -> bool {
        true
    }

    fn log_likelihood(&self, image: &ImageTensor, prompt: &str, target: &str) -> Result<f64> {
        let target_ids = self.vocab.tokenize(target);
        self.loglik_tokens(image, &self.vocab.tokenize(prompt), &target_ids)
    }

    fn grad_image(&self, image: &ImageTensor, prompt: &str, target: &str) -> Result<GradTensor> {
        let target_ids = self.vocab.tokenize(target);
        self.grad_image_tokens(image, &self.vocab.tokenize(prompt), &target_ids)
    }

    fn generate(
        &self,
        image: &ImageTensor,
        prompt: &str,
        max_new_tokens: usize,
        temperature: f64,
    ) -> Result<String> {
        let ids = self.generate_tokens(
            image,
            &self.vocab.tokenize(prompt),
            max_new_tokens,
            temperature,
        )?;
        self.vocab.render(&ids)
    }
}

fn log_sum_exp(logits: &Array1<f64>) -> f64 {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(logits);
    logits.mapv(|l| (l - lse).exp())
}

fn argmax(logits: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

fn sample(scaled_logits: &Array1<f64>, rng: &mut ChaCha8Rng) -> usize {
    let probs = softmax(scaled_logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// FNV-1a over the decode inputs; keeps sampled generation reproducible
/// without threading an explicit seed through every call site.
fn decode_seed(
    image: &ImageTensor,
    prompt: &[usize],
    max_new_tokens: usize,
    temperature: f64,
) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&image.to_bytes());
    for &id in prompt {
        eat(&(id as u64).to_le_bytes());
    }
    eat(&(max_new_tokens as u64).to_le_bytes());
    eat(&temperature.to_bits().to_le_bytes());
    h
}
