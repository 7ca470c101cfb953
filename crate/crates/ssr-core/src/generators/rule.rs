//! Rule-based noising: per-token deletion, replacement, neighbor swaps, and
//! duplication. Stands in for learned generators in denoising baselines and
//! for synthesizing corrupted task inputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::Result;
use crate::masking::SpanMask;

use super::{GenConfig, GeneratorOutput, SpanGenerator, SpanOutput};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleNoiseConfig {
    pub p_delete: f64,
    pub p_replace: f64,
    pub p_shuffle: f64,
    pub p_duplicate: f64,
}

impl Default for RuleNoiseConfig {
    fn default() -> Self {
        Self {
            p_delete: 0.1,
            p_replace: 0.1,
            p_shuffle: 0.1,
            p_duplicate: 0.05,
        }
    }
}

/// Noise one token span. The pseudo-loss assigned to every surviving token
/// is `edits / max(1, |output|)`, so the summed span loss equals the edit
/// count and curriculum scoring stays defined for rule-noised data.
pub fn rule_noise<R: Rng + ?Sized>(
    gt_ids: &[u32],
    cfg: &RuleNoiseConfig,
    rng: &mut R,
    vocab: &Vocab,
) -> SpanOutput {
    let n_plain = vocab.len() - vocab.n_special();
    let mut edits = 0usize;

    // deletion and replacement, token by token
    let mut tmp: Vec<u32> = Vec::with_capacity(gt_ids.len());
    for &tok in gt_ids {
        if rng.random::<f64>() < cfg.p_delete {
            edits += 1;
            continue;
        }
        let mut t = tok;
        if rng.random::<f64>() < cfg.p_replace && n_plain > 0 {
            t = (vocab.n_special() + rng.random_range(0..n_plain)) as u32;
            edits += 1;
        }
        tmp.push(t);
    }
    // local shuffle: swap with the right neighbor, skipping past a swap
    let mut i = 0usize;
    while i + 1 < tmp.len() {
        if rng.random::<f64>() < cfg.p_shuffle {
            tmp.swap(i, i + 1);
            edits += 1;
            i += 2;
        } else {
            i += 1;
        }
    }
    // duplication
    let mut out: Vec<u32> = Vec::with_capacity(tmp.len() + 2);
    for &t in &tmp {
        out.push(t);
        if rng.random::<f64>() < cfg.p_duplicate {
            out.push(t);
            edits += 1;
        }
    }

    let per_token = edits as f64 / out.len().max(1) as f64;
    let nll = vec![per_token; out.len()];
    let is_exact_copy = out == gt_ids;
    SpanOutput {
        tokens: out,
        nll,
        is_exact_copy,
    }
}

/// Applies [`rule_noise`] independently to each masked span.
#[derive(Debug, Clone, Default)]
pub struct RuleNoiseGenerator {
    pub cfg: RuleNoiseConfig,
}

impl RuleNoiseGenerator {
    pub fn new(cfg: RuleNoiseConfig) -> Self {
        Self { cfg }
    }
}

impl SpanGenerator for RuleNoiseGenerator {
    fn name(&self) -> &str {
        "rule"
    }

    fn generate(
        &self,
        mask: &SpanMask,
        vocab: &Vocab,
        _cfg: &GenConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<GeneratorOutput> {
        Ok(GeneratorOutput {
            spans: mask
                .spans
                .iter()
                .map(|s| rule_noise(&s.gt_ids, &self.cfg, rng, vocab))
                .collect(),
        })
    }
}
