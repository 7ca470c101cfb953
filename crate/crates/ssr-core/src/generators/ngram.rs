//! N-gram language model with stupid-backoff smoothing, used as the default
//! local imperfect-span generator.
//!
//! Scoring backs off context by context: the longest context with any
//! observed continuation supplies the distribution (count ratios, scaled by
//! `alpha` per backoff level), and a fully unseen context falls back to the
//! add-one-smoothed unigram. The result is renormalized into a proper
//! distribution at query time; specials and sentinels never receive mass.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSeq, Vocab};
use crate::error::{Error, Result};
use crate::masking::SpanMask;

use super::{nucleus_sample, GenConfig, GeneratorOutput, SpanGenerator, SpanOutput};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ContextEntry {
    total: u64,
    conts: HashMap<u32, u64>,
}

/// Count tables for orders `1..=order` plus the smoothing factor.
#[derive(Debug, Clone)]
pub struct NgramLM {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    n_special: usize,
    unigram: Vec<u64>,
    unigram_total: u64,
    /// `higher[k]` maps a context of length `k+1` to its continuations.
    higher: Vec<HashMap<Vec<u32>, ContextEntry>>,
}

/// Serialized snapshot with deterministic ordering, for artifact files.
#[derive(Debug, Serialize, Deserialize)]
pub struct NgramSnapshot {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    n_special: usize,
    unigram: Vec<u64>,
    contexts: Vec<(Vec<u32>, Vec<(u32, u64)>)>,
}

impl NgramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn is_trained(&self) -> bool {
        self.unigram_total > 0
    }

    /// Full next-token distribution given (up to `order-1` tokens of) left
    /// context. Sums to 1; every non-special token has nonzero mass only via
    /// the unigram floor when all longer contexts are unseen.
    pub fn next_token_dist(&self, context: &[u32]) -> Vec<f64> {
        let mut dist = vec![0.0; self.vocab_size];
        // longest seen context wins; the per-level alpha scaling cancels
        // under renormalization but is kept for score transparency
        for k in (1..self.order).rev() {
            if context.len() < k {
                continue;
            }
            let ctx = &context[context.len() - k..];
            if let Some(entry) = self.higher[k - 1].get(ctx) {
                let alpha_scale = self.alpha.powi((self.order - 1 - k) as i32);
                for (&tok, &c) in &entry.conts {
                    dist[tok as usize] = alpha_scale * c as f64 / entry.total as f64;
                }
                let sum: f64 = dist.iter().sum();
                for v in &mut dist {
                    *v /= sum;
                }
                return dist;
            }
        }
        self.smoothed_unigram()
    }

    /// Add-one-smoothed unigram over non-special tokens.
    pub fn smoothed_unigram(&self) -> Vec<f64> {
        let mut dist = vec![0.0; self.vocab_size];
        let n_plain = (self.vocab_size - self.n_special) as f64;
        let denom = self.unigram_total as f64 + n_plain;
        for id in self.n_special..self.vocab_size {
            dist[id] = (self.unigram[id] as f64 + 1.0) / denom;
        }
        dist
    }

    pub fn to_snapshot(&self) -> NgramSnapshot {
        let mut contexts: Vec<(Vec<u32>, Vec<(u32, u64)>)> = Vec::new();
        for table in &self.higher {
            for (ctx, entry) in table {
                let mut conts: Vec<(u32, u64)> = entry.conts.iter().map(|(&t, &c)| (t, c)).collect();
                conts.sort_unstable();
                contexts.push((ctx.clone(), conts));
            }
        }
        contexts.sort();
        NgramSnapshot {
            order: self.order,
            alpha: self.alpha,
            vocab_size: self.vocab_size,
            n_special: self.n_special,
            unigram: self.unigram.clone(),
            contexts,
        }
    }

    pub fn from_snapshot(snap: NgramSnapshot) -> Result<Self> {
        if snap.order < 1 {
            return Err(Error::InvalidConfig("n-gram order must be at least 1".into()));
        }
        let mut higher = vec![HashMap::new(); snap.order.saturating_sub(1)];
        for (ctx, conts) in snap.contexts {
            if ctx.is_empty() || ctx.len() > snap.order - 1 {
                return Err(Error::InvalidConfig(format!(
                    "context of length {} in an order-{} model",
                    ctx.len(),
                    snap.order
                )));
            }
            let entry: &mut ContextEntry = higher[ctx.len() - 1].entry(ctx).or_default();
            for (tok, c) in conts {
                entry.total += c;
                entry.conts.insert(tok, c);
            }
        }
        let unigram_total = snap.unigram.iter().sum();
        Ok(Self {
            order: snap.order,
            alpha: snap.alpha,
            vocab_size: snap.vocab_size,
            n_special: snap.n_special,
            unigram: snap.unigram,
            unigram_total,
            higher,
        })
    }
}

/// Count all k-grams for `k <= order` over a corpus of token sequences.
pub fn train_ngram<'a, I>(corpus: I, order: usize, alpha: f64, vocab: &Vocab) -> Result<NgramLM>
where
    I: IntoIterator<Item = &'a TokenSeq>,
{
    if order < 1 {
        return Err(Error::InvalidConfig("n-gram order must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "backoff factor must lie in (0,1], got {alpha}"
        )));
    }
    let mut lm = NgramLM {
        order,
        alpha,
        vocab_size: vocab.len(),
        n_special: vocab.n_special(),
        unigram: vec![0; vocab.len()],
        unigram_total: 0,
        higher: vec![HashMap::new(); order - 1],
    };
    for seq in corpus {
        for (i, &tok) in seq.ids.iter().enumerate() {
            lm.unigram[tok as usize] += 1;
            lm.unigram_total += 1;
            for k in 1..order {
                if i >= k {
                    let ctx = seq.ids[i - k..i].to_vec();
                    let entry = lm.higher[k - 1].entry(ctx).or_default();
                    entry.total += 1;
                    *entry.conts.entry(tok).or_insert(0) += 1;
                }
            }
        }
    }
    if lm.unigram_total == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(lm)
}

/// Fills spans by autoregressive nucleus sampling from the n-gram model.
/// Conditions only on left context: the original tokens before each span
/// plus everything generated so far. Span length is a fresh Poisson draw,
/// independent of the ground-truth length.
pub struct NgramGenerator {
    lm: NgramLM,
}

impl NgramGenerator {
    pub fn new(lm: NgramLM) -> Self {
        Self { lm }
    }

    pub fn lm(&self) -> &NgramLM {
        &self.lm
    }
}

impl SpanGenerator for NgramGenerator {
    fn name(&self) -> &str {
        "ngram"
    }

    fn generate(
        &self,
        mask: &SpanMask,
        _vocab: &Vocab,
        cfg: &GenConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<GeneratorOutput> {
        if !self.lm.is_trained() {
            return Err(Error::GeneratorNotReady("n-gram model has no counts".into()));
        }
        let mut context: Vec<u32> = Vec::with_capacity(mask.seq.len());
        let mut spans = Vec::with_capacity(mask.spans.len());
        let mut pos = 0usize;
        for span in &mask.spans {
            context.extend_from_slice(&mask.seq.ids[pos..span.start]);
            let gen_len = crate::masking::poisson_sample(rng, cfg.lambda)?.min(cfg.max_gen_len);
            let mut tokens = Vec::with_capacity(gen_len);
            let mut nll = Vec::with_capacity(gen_len);
            for _ in 0..gen_len {
                let ctx_start = context.len().saturating_sub(self.lm.order - 1);
                let dist = self.lm.next_token_dist(&context[ctx_start..]);
                let (tok, p_full) = nucleus_sample(&dist, cfg.top_p, rng)?;
                tokens.push(tok);
                // 0.0f64.max also squashes the -0.0 from certain tokens
                nll.push(0.0f64.max(-p_full.ln()));
                context.push(tok);
            }
            let is_exact_copy = tokens == span.gt_ids;
            spans.push(SpanOutput {
                tokens,
                nll,
                is_exact_copy,
            });
            pos = span.start + span.len();
        }
        Ok(GeneratorOutput { spans })
    }
}
