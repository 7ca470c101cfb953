//! Imperfect-span generators.
//!
//! A generator fills the masked spans of a [`SpanMask`] with "imperfect"
//! text and reports per-token negative log-likelihoods under its own full
//! output distribution. Implementations range from a trivial copy
//! ([`IdentityGenerator`]) through rule noise and an n-gram language model to
//! an external child process speaking a line-JSON protocol.

mod external;
mod ngram;
mod rule;

pub use external::ExternalGenerator;
pub use ngram::{train_ngram, NgramGenerator, NgramLM};
pub use rule::{rule_noise, RuleNoiseConfig, RuleNoiseGenerator};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::masking::SpanMask;

/// Imperfect content for a single span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanOutput {
    pub tokens: Vec<u32>,
    /// One entry per token: negative log-likelihood in nats, under the
    /// generator's full (pre-truncation) distribution.
    pub nll: Vec<f64>,
    pub is_exact_copy: bool,
}

impl SpanOutput {
    pub fn total_nll(&self) -> f64 {
        self.nll.iter().sum()
    }
}

/// Generator output for every span of one mask, in span order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOutput {
    pub spans: Vec<SpanOutput>,
}

impl GeneratorOutput {
    pub fn total_nll(&self) -> f64 {
        self.spans.iter().map(SpanOutput::total_nll).sum()
    }

    /// Structural checks shared by every generator: per-span alignment of
    /// tokens and losses, finite non-negative losses, no sentinel ids.
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        for (i, span) in self.spans.iter().enumerate() {
            if span.tokens.len() != span.nll.len() {
                return Err(Error::ShapeMismatch(format!(
                    "span {}: {} tokens but {} loss entries",
                    i + 1,
                    span.tokens.len(),
                    span.nll.len()
                )));
            }
            for &v in &span.nll {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::ShapeMismatch(format!(
                        "span {}: bad loss value {v}",
                        i + 1
                    )));
                }
            }
            for &t in &span.tokens {
                if vocab.is_sentinel(t) {
                    return Err(Error::ShapeMismatch(format!(
                        "span {}: sentinel id {t} in generated output",
                        i + 1
                    )));
                }
                vocab.surface(t)?;
            }
        }
        Ok(())
    }
}

/// Generation knobs shared by the samplers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    /// Nucleus threshold.
    pub top_p: f64,
    /// Hard cap on generated span length.
    pub max_gen_len: usize,
    /// Poisson rate for generated span lengths (generators that draw one).
    pub lambda: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            top_p: 0.9,
            max_gen_len: 12,
            lambda: 3.0,
        }
    }
}

/// Anything that can fill the spans of a mask.
pub trait SpanGenerator {
    fn name(&self) -> &str;

    /// Fill every span of `mask`, left to right. Implementations must return
    /// exactly one [`SpanOutput`] per span and must be deterministic given
    /// the RNG stream.
    fn generate(
        &self,
        mask: &SpanMask,
        vocab: &Vocab,
        cfg: &GenConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<GeneratorOutput>;
}

/// Copies the ground truth; every loss is zero. The degenerate baseline and
/// the reference point for protocol-conformance checks.
#[derive(Debug, Clone, Default)]
pub struct IdentityGenerator;

impl SpanGenerator for IdentityGenerator {
    fn name(&self) -> &str {
        "identity"
    }

    fn generate(
        &self,
        mask: &SpanMask,
        _vocab: &Vocab,
        _cfg: &GenConfig,
        _rng: &mut ChaCha8Rng,
    ) -> Result<GeneratorOutput> {
        Ok(GeneratorOutput {
            spans: mask
                .spans
                .iter()
                .map(|s| SpanOutput {
                    tokens: s.gt_ids.clone(),
                    nll: vec![0.0; s.gt_ids.len()],
                    is_exact_copy: true,
                })
                .collect(),
        })
    }
}

/// Nucleus (top-p) sampling. Sorts the distribution descending (ties broken
/// by token id), keeps the smallest prefix with cumulative mass >= p,
/// renormalizes, samples, and returns the chosen id together with its
/// probability under the ORIGINAL distribution.
pub fn nucleus_sample<R: Rng + ?Sized>(dist: &[f64], p: f64, rng: &mut R) -> Result<(u32, f64)> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidDistribution(format!(
            "nucleus threshold must lie in (0,1], got {p}"
        )));
    }
    if dist.is_empty() {
        return Err(Error::InvalidDistribution("empty distribution".to_string()));
    }
    let mut sum = 0.0;
    for &q in dist {
        if !q.is_finite() || q < 0.0 {
            return Err(Error::InvalidDistribution(format!("bad entry {q}")));
        }
        sum += q;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!(
            "probabilities sum to {sum}"
        )));
    }

    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| {
        dist[b]
            .partial_cmp(&dist[a])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });
    let mut nucleus_len = order.len();
    let mut cum = 0.0;
    for (i, &idx) in order.iter().enumerate() {
        cum += dist[idx];
        if cum >= p - 1e-12 {
            nucleus_len = i + 1;
            break;
        }
    }
    let mass: f64 = order[..nucleus_len].iter().map(|&i| dist[i]).sum();
    let mut r = rng.random::<f64>() * mass;
    for &idx in &order[..nucleus_len] {
        r -= dist[idx];
        if r <= 0.0 {
            return Ok((idx as u32, dist[idx]));
        }
    }
    let last = order[nucleus_len - 1];
    Ok((last as u32, dist[last]))
}
