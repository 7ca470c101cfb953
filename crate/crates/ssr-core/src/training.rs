//! Optimization loops: infilling pre-training, rewrite continual
//! pre-training under a curriculum, distillation/denoising baselines, and
//! task fine-tuning with early stopping. Also exports a trained infilling
//! checkpoint as a span generator.
//!
//! Adam with linear warmup then a constant rate; gradients are clipped to a
//! global norm before every update. Batches come from
//! [`curriculum::schedule_order`], so the full run is a deterministic
//! function of (dataset, config, seed).

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{SentinelKind, Vocab};
use crate::curriculum::{self, CurriculumSchedule, Strategy};
use crate::dataset::{Mode, SsrExample};
use crate::error::{Error, Result};
use crate::generators::{nucleus_sample, GenConfig, GeneratorOutput, SpanGenerator, SpanOutput};
use crate::masking::{apply_mask, SpanMask};
use crate::model::{
    decode_greedy, encode_source, loss_and_grad, next_distribution, AdamState, Checkpoint,
    ModelConfig, ModelParams, Pair,
};
use crate::rng::stream_rng;
use crate::tasks::payload;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    pub eval_every: usize,
    /// Fine-tuning stops after this many evals without a dev improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 32,
            lr: 3e-4,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            eval_every: 50,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.steps {
            return Err(Error::InvalidConfig(format!(
                "warmup_steps {} exceeds steps {}",
                self.warmup_steps, self.steps
            )));
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::InvalidConfig("rates must be positive".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and eval_every must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("betas must lie in [0,1)".into()));
        }
        Ok(())
    }
}

/// Linear warmup to `lr`, then constant. `step` is 1-based.
pub fn lr_at(cfg: &TrainConfig, step: usize) -> f64 {
    if cfg.warmup_steps == 0 || step >= cfg.warmup_steps {
        cfg.lr
    } else {
        cfg.lr * step as f64 / cfg.warmup_steps as f64
    }
}

/// Scale gradients down to the configured global norm. Returns the post-clip
/// norm.
pub fn clip_gradients(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale_all(max_norm / norm);
        max_norm
    } else {
        norm
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
    lr: f64,
) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let g_flat = grads.tensors();
    let mut m_flat = state.m.tensors_mut();
    let mut v_flat = state.v.tensors_mut();
    for (idx, p) in params.tensors_mut().into_iter().enumerate() {
        let g = &g_flat[idx].data;
        let m = &mut m_flat[idx].data;
        let v = &mut v_flat[idx].data;
        for i in 0..p.data.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// One metrics-log record; serialized as JSONL by the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub phase: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    /// Batch composition by bucket (1-based; empty when unbucketized).
    pub bucket_hist: Vec<usize>,
    pub dev_metric: Option<f64>,
}

fn pairs_for(batch: &[usize], examples: &[SsrExample]) -> Vec<Pair> {
    batch
        .iter()
        .map(|&i| Pair {
            source: examples[i].source.clone(),
            target: examples[i].target.clone(),
        })
        .collect()
}

fn bucket_histogram(batch: &[usize], examples: &[SsrExample], k: usize) -> Vec<usize> {
    let mut hist = vec![0usize; k];
    for &i in batch {
        match examples[i].bucket {
            Some(b) if (b as usize) <= k && b >= 1 => hist[b as usize - 1] += 1,
            _ => return Vec::new(),
        }
    }
    hist
}

/// Pre-train (or continue pre-training) on one objective. `init` supplies
/// the starting checkpoint; pass `None` to start from a fresh
/// initialization of `model_cfg`. `on_eval` fires every `eval_every` steps
/// and at the end with a checkpoint snapshot.
#[allow(clippy::too_many_arguments)]
pub fn pretrain(
    init: Option<&Checkpoint>,
    examples: &[SsrExample],
    objective: Mode,
    schedule: &CurriculumSchedule,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_eval: impl FnMut(&Checkpoint, &MetricsRecord) -> Result<()>,
) -> Result<(Checkpoint, Vec<MetricsRecord>)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for ex in examples {
        if ex.mode != objective {
            return Err(Error::ModeMismatch {
                expected: objective.to_string(),
                got: format!("{} (example {})", ex.mode, ex.id),
            });
        }
    }
    let mut params = match init {
        Some(ckpt) => ckpt.params.clone(),
        None => ModelParams::init(model_cfg, &mut stream_rng(cfg.seed, "init", ""))?,
    };
    if cfg.steps == 0 {
        let ckpt = Checkpoint {
            params,
            step: 0,
            objective,
            seed: cfg.seed,
            opt: None,
        };
        return Ok((ckpt, Vec::new()));
    }

    // the schedule's phase layout must match this run's step count
    let schedule = CurriculumSchedule::new(
        schedule.strategy,
        schedule.k,
        schedule.mix_current,
        cfg.steps,
    )?;
    let label = format!("schedule-{objective}");
    let batches = curriculum::schedule_order(
        examples,
        &schedule,
        cfg.steps,
        cfg.batch_size,
        &mut stream_rng(cfg.seed, &label, ""),
    )?;

    let mut state = AdamState::new(&params);
    let mut log = Vec::new();
    for (step0, batch) in batches.iter().enumerate() {
        let step = step0 + 1;
        let pairs = pairs_for(batch, examples);
        let (train_loss, mut grads) = loss_and_grad(&params, &pairs)?;
        let grad_norm = clip_gradients(&mut grads, cfg.grad_clip);
        let lr = lr_at(cfg, step);
        adam_step(&mut params, &grads, &mut state, cfg, lr);

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let record = MetricsRecord {
                step,
                phase: schedule.phase_of(step0),
                train_loss,
                lr,
                grad_norm,
                bucket_hist: bucket_histogram(batch, examples, schedule.k),
                dev_metric: None,
            };
            let snapshot = Checkpoint {
                params: params.clone(),
                step: step as u64,
                objective,
                seed: cfg.seed,
                opt: Some(state.clone()),
            };
            on_eval(&snapshot, &record)?;
            log.push(record);
        }
    }
    let ckpt = Checkpoint {
        params,
        step: cfg.steps as u64,
        objective,
        seed: cfg.seed,
        opt: Some(state),
    };
    Ok((ckpt, log))
}

/// Fraction of dev examples whose greedy decode matches the target payload
/// exactly.
pub fn exact_match_rate(params: &ModelParams, dev: &[SsrExample], vocab: &Vocab) -> Result<f64> {
    if dev.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for ex in dev {
        let decoded = decode_greedy(params, &ex.source)?;
        if payload(&decoded, vocab) == payload(&ex.target, vocab) {
            hits += 1;
        }
    }
    Ok(hits as f64 / dev.len() as f64)
}

/// Fine-tune on rewrite pairs with early stopping on dev exact match.
/// Returns the best-dev checkpoint, not the last one.
pub fn finetune(
    init: &Checkpoint,
    train: &[SsrExample],
    dev: &[SsrExample],
    vocab: &Vocab,
    cfg: &TrainConfig,
    mut on_eval: impl FnMut(&Checkpoint, &MetricsRecord) -> Result<()>,
) -> Result<(Checkpoint, Vec<MetricsRecord>)> {
    cfg.validate()?;
    if vocab.len() != init.params.config.vocab_size {
        return Err(Error::VocabMismatch {
            model: init.params.config.vocab_size,
            got: vocab.len(),
        });
    }
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for ex in train {
        if ex.mode != Mode::Finetune {
            return Err(Error::ModeMismatch {
                expected: Mode::Finetune.to_string(),
                got: ex.mode.to_string(),
            });
        }
    }

    let mut params = init.params.clone();
    let schedule = CurriculumSchedule::new(Strategy::None, 1, 1.0, cfg.steps)?;
    let batches = curriculum::schedule_order(
        train,
        &schedule,
        cfg.steps,
        cfg.batch_size,
        &mut stream_rng(cfg.seed, "schedule-finetune", ""),
    )?;

    let mut state = AdamState::new(&params);
    let mut log = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut evals_since_best = 0usize;
    for (step0, batch) in batches.iter().enumerate() {
        let step = step0 + 1;
        let pairs = pairs_for(batch, train);
        let (train_loss, mut grads) = loss_and_grad(&params, &pairs)?;
        let grad_norm = clip_gradients(&mut grads, cfg.grad_clip);
        let lr = lr_at(cfg, step);
        adam_step(&mut params, &grads, &mut state, cfg, lr);

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let em = exact_match_rate(&params, dev, vocab)?;
            let record = MetricsRecord {
                step,
                phase: 1,
                train_loss,
                lr,
                grad_norm,
                bucket_hist: Vec::new(),
                dev_metric: Some(em),
            };
            let snapshot = Checkpoint {
                params: params.clone(),
                step: step as u64,
                objective: Mode::Finetune,
                seed: cfg.seed,
                opt: None,
            };
            on_eval(&snapshot, &record)?;
            log.push(record);
            let improved = best.as_ref().map_or(true, |(b, _)| em > *b);
            if improved {
                best = Some((em, snapshot));
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
                if evals_since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    let (_, best_ckpt) = best.expect("at least one eval ran");
    Ok((best_ckpt, log))
}

/// A trained infilling model acting as the imperfect-span generator: it
/// fills each masked span by nucleus sampling between forced mask
/// sentinels, reporting true per-token losses from its full softmax.
pub struct SelfGenerator {
    params: ModelParams,
}

/// Wrap an infilling checkpoint as a span generator. Rewrite-objective
/// checkpoints are refused: their decoder emits span-open sentinels, which
/// do not line up with the infilling target format.
pub fn as_self_generator(ckpt: &Checkpoint) -> Result<SelfGenerator> {
    if ckpt.objective != Mode::Infill {
        log::warn!(
            "checkpoint objective is {}, not infill; refusing to use it as a span generator",
            ckpt.objective
        );
        return Err(Error::ModeMismatch {
            expected: Mode::Infill.to_string(),
            got: ckpt.objective.to_string(),
        });
    }
    Ok(SelfGenerator {
        params: ckpt.params.clone(),
    })
}

impl SpanGenerator for SelfGenerator {
    fn name(&self) -> &str {
        "self"
    }

    fn generate(
        &self,
        mask: &SpanMask,
        vocab: &Vocab,
        cfg: &GenConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<GeneratorOutput> {
        if vocab.len() != self.params.config.vocab_size {
            return Err(Error::VocabMismatch {
                model: self.params.config.vocab_size,
                got: vocab.len(),
            });
        }
        let (source, _) = apply_mask(mask, vocab)?;
        let enc = encode_source(&self.params, &source.ids)?;
        let mut prefix: Vec<u32> = Vec::new();
        let mut spans = Vec::with_capacity(mask.spans.len());
        for span in &mask.spans {
            // force the sentinel that opens this span in the target format
            prefix.push(vocab.mask_id(span.index)?);
            let mut tokens = Vec::new();
            let mut nll = Vec::new();
            while tokens.len() < cfg.max_gen_len {
                let dist = next_distribution(&self.params, &enc, &prefix)?;
                let (tok, p_full) = nucleus_sample(&dist, cfg.top_p, rng)?;
                // any reserved id ends the span: the next sentinel, EOS, or
                // format junk from an undertrained model
                if vocab.is_special(tok) {
                    break;
                }
                tokens.push(tok);
                nll.push(-p_full.ln());
                prefix.push(tok);
            }
            let is_exact_copy = tokens == span.gt_ids;
            spans.push(SpanOutput {
                tokens,
                nll,
                is_exact_copy,
            });
        }
        let out = GeneratorOutput { spans };
        out.validate(vocab)?;
        Ok(out)
    }
}

/// How far the decoded infill target respects the sentinel format; used by
/// tests and diagnostics.
pub fn sentinel_format_ok(ids: &[u32], vocab: &Vocab, n_spans: usize) -> bool {
    let mut expected = 1usize;
    for &t in ids {
        if let Some((SentinelKind::Mask, i)) = vocab.sentinel_info(t) {
            if i != expected {
                return false;
            }
            expected += 1;
        }
    }
    expected == n_spans + 1
}
