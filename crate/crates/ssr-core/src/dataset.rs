//! Training-example assembly and JSONL persistence.
//!
//! The five example modes:
//! - `ssr`: source delimits each imperfect span with `<s_i> ... </s_i>`;
//!   the target lists the ground-truth spans as `<s_1> gt_1 <s_2> gt_2 ...`.
//! - `infill`: source masks spans with `<m_i>`; target is
//!   `<m_1> gt_1 <m_2> gt_2 ...`.
//! - `distill`: infilling source, but the target carries the generator's
//!   imperfect spans instead of the ground truth.
//! - `denoise`: source is the rule-noised full sequence, target the original.
//! - `finetune`: source is `<s_1> src </s_1>`, target `<s_1> tgt` — the
//!   whole-sequence rewrite format used by downstream tasks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{detokenize, TokenSeq, Vocab};
use crate::error::{Error, Result};
use crate::generators::{rule_noise, GeneratorOutput, RuleNoiseConfig};
use crate::masking::{apply_mask, SpanMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ssr,
    Infill,
    Distill,
    Denoise,
    Finetune,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Ssr => "ssr",
            Mode::Infill => "infill",
            Mode::Distill => "distill",
            Mode::Denoise => "denoise",
            Mode::Finetune => "finetune",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssr" => Ok(Mode::Ssr),
            "infill" => Ok(Mode::Infill),
            "distill" => Ok(Mode::Distill),
            "denoise" => Ok(Mode::Denoise),
            "finetune" => Ok(Mode::Finetune),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

/// Per-span metadata carried inside an example. `start` is build-time
/// bookkeeping and is not part of the record schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub index: usize,
    #[serde(skip)]
    pub start: usize,
    pub gt: Vec<u32>,
    pub imp: Vec<u32>,
    pub nll: Vec<f64>,
}

/// One training pair plus provenance. Serialized one-per-line as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsrExample {
    pub id: String,
    pub mode: Mode,
    pub source: Vec<u32>,
    pub target: Vec<u32>,
    pub source_text: String,
    pub target_text: String,
    pub spans: Vec<SpanRecord>,
    pub difficulty: f64,
    pub bucket: Option<u32>,
}

impl SsrExample {
    pub fn total_nll(&self) -> f64 {
        self.spans.iter().map(|s| s.nll.iter().sum::<f64>()).sum()
    }
}

fn check_alignment(mask: &SpanMask, gen: &GeneratorOutput) -> Result<()> {
    if mask.spans.len() != gen.spans.len() {
        return Err(Error::SpanCountMismatch {
            mask: mask.spans.len(),
            gen: gen.spans.len(),
        });
    }
    Ok(())
}

fn span_records(mask: &SpanMask, gen: &GeneratorOutput) -> Vec<SpanRecord> {
    mask.spans
        .iter()
        .zip(&gen.spans)
        .map(|(m, g)| SpanRecord {
            index: m.index,
            start: m.start,
            gt: m.gt_ids.clone(),
            imp: g.tokens.clone(),
            nll: g.nll.clone(),
        })
        .collect()
}

/// Rewrite example: delimited imperfect spans in the source, ground truth in
/// the target, difficulty = summed generator loss.
pub fn build_ssr_example(
    mask: &SpanMask,
    gen: &GeneratorOutput,
    vocab: &Vocab,
) -> Result<SsrExample> {
    check_alignment(mask, gen)?;
    if mask.spans.len() > vocab.max_sentinels() {
        return Err(Error::TooManySpans {
            got: mask.spans.len(),
            max: vocab.max_sentinels(),
        });
    }
    let mut source = Vec::with_capacity(mask.seq.len() + 2 * mask.spans.len());
    let mut target = Vec::new();
    let mut pos = 0usize;
    for (span, out) in mask.spans.iter().zip(&gen.spans) {
        source.extend_from_slice(&mask.seq.ids[pos..span.start]);
        source.push(vocab.open_id(span.index)?);
        source.extend_from_slice(&out.tokens);
        source.push(vocab.close_id(span.index)?);
        target.push(vocab.open_id(span.index)?);
        target.extend_from_slice(&span.gt_ids);
        pos = span.start + span.len();
    }
    source.extend_from_slice(&mask.seq.ids[pos..]);
    Ok(SsrExample {
        id: mask.seq.doc_id.clone(),
        mode: Mode::Ssr,
        source_text: detokenize(&source, vocab)?,
        target_text: detokenize(&target, vocab)?,
        source,
        target,
        spans: span_records(mask, gen),
        difficulty: gen.total_nll(),
        bucket: None,
    })
}

/// Plain text-infilling example; difficulty is undefined and stored as 0.
pub fn build_infill_example(mask: &SpanMask, vocab: &Vocab) -> Result<SsrExample> {
    let (source, target) = apply_mask(mask, vocab)?;
    let spans = mask
        .spans
        .iter()
        .map(|m| SpanRecord {
            index: m.index,
            start: m.start,
            gt: m.gt_ids.clone(),
            imp: Vec::new(),
            nll: Vec::new(),
        })
        .collect();
    Ok(SsrExample {
        id: mask.seq.doc_id.clone(),
        mode: Mode::Infill,
        source_text: detokenize(&source.ids, vocab)?,
        target_text: detokenize(&target.ids, vocab)?,
        source: source.ids,
        target: target.ids,
        spans,
        difficulty: 0.0,
        bucket: None,
    })
}

/// Sequence-level distillation: infilling source, generator output as target.
pub fn build_distill_example(
    mask: &SpanMask,
    gen: &GeneratorOutput,
    vocab: &Vocab,
) -> Result<SsrExample> {
    check_alignment(mask, gen)?;
    let (source, _) = apply_mask(mask, vocab)?;
    let mut target = Vec::new();
    for (span, out) in mask.spans.iter().zip(&gen.spans) {
        target.push(vocab.mask_id(span.index)?);
        target.extend_from_slice(&out.tokens);
    }
    Ok(SsrExample {
        id: mask.seq.doc_id.clone(),
        mode: Mode::Distill,
        source_text: detokenize(&source.ids, vocab)?,
        target_text: detokenize(&target, vocab)?,
        source: source.ids,
        target,
        spans: span_records(mask, gen),
        difficulty: gen.total_nll(),
        bucket: None,
    })
}

/// Denoising example: rule-noise the whole sequence, no delimiters.
/// Difficulty records the edit count (the noiser's summed pseudo-loss).
pub fn build_denoise_example(
    seq: &TokenSeq,
    cfg: &RuleNoiseConfig,
    vocab: &Vocab,
    rng: &mut ChaCha8Rng,
) -> Result<SsrExample> {
    let noised = rule_noise(&seq.ids, cfg, rng, vocab);
    Ok(SsrExample {
        id: seq.doc_id.clone(),
        mode: Mode::Denoise,
        source_text: detokenize(&noised.tokens, vocab)?,
        target_text: detokenize(&seq.ids, vocab)?,
        source: noised.tokens.clone(),
        target: seq.ids.clone(),
        spans: Vec::new(),
        difficulty: noised.total_nll(),
        bucket: None,
    })
}

/// Whole-sequence rewrite pair in the span-rewriting format.
pub fn build_finetune_example(src: &TokenSeq, tgt: &TokenSeq, vocab: &Vocab) -> Result<SsrExample> {
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::InvalidConfig(
            "finetune pairs need nonempty source and target".into(),
        ));
    }
    let mut source = Vec::with_capacity(src.len() + 2);
    source.push(vocab.open_id(1)?);
    source.extend_from_slice(&src.ids);
    source.push(vocab.close_id(1)?);
    let mut target = Vec::with_capacity(tgt.len() + 1);
    target.push(vocab.open_id(1)?);
    target.extend_from_slice(&tgt.ids);
    Ok(SsrExample {
        id: src.doc_id.clone(),
        mode: Mode::Finetune,
        source_text: detokenize(&source, vocab)?,
        target_text: detokenize(&target, vocab)?,
        source,
        target,
        spans: Vec::new(),
        difficulty: 0.0,
        bucket: None,
    })
}

/// Constrained-rewrite pair: only `region` of the input is delimited for
/// rewriting; the target replaces just that region.
pub fn build_constrained_example(
    seq: &TokenSeq,
    region: std::ops::Range<usize>,
    replacement: &TokenSeq,
    vocab: &Vocab,
) -> Result<SsrExample> {
    if region.end > seq.len() || region.start >= region.end {
        return Err(Error::ShapeMismatch(format!(
            "region {region:?} out of bounds for a {}-token sequence",
            seq.len()
        )));
    }
    let mut source = Vec::with_capacity(seq.len() + 2);
    source.extend_from_slice(&seq.ids[..region.start]);
    source.push(vocab.open_id(1)?);
    source.extend_from_slice(&seq.ids[region.clone()]);
    source.push(vocab.close_id(1)?);
    source.extend_from_slice(&seq.ids[region.end..]);
    let mut target = Vec::with_capacity(replacement.len() + 1);
    target.push(vocab.open_id(1)?);
    target.extend_from_slice(&replacement.ids);
    Ok(SsrExample {
        id: seq.doc_id.clone(),
        mode: Mode::Finetune,
        source_text: detokenize(&source, vocab)?,
        target_text: detokenize(&target, vocab)?,
        source,
        target,
        spans: Vec::new(),
        difficulty: 0.0,
        bucket: None,
    })
}

/// Drop exact-copy spans from a (mask, output) pair, renumbering the rest.
/// Returns `None` when nothing is left to rewrite.
pub fn filter_exact_copies(
    mask: &SpanMask,
    gen: &GeneratorOutput,
) -> Result<Option<(SpanMask, GeneratorOutput)>> {
    check_alignment(mask, gen)?;
    let mut spans = Vec::new();
    let mut outs = Vec::new();
    for (m, g) in mask.spans.iter().zip(&gen.spans) {
        if !g.is_exact_copy {
            let mut m = m.clone();
            m.index = spans.len() + 1;
            spans.push(m);
            outs.push(g.clone());
        }
    }
    if spans.is_empty() {
        return Ok(None);
    }
    Ok(Some((
        SpanMask {
            spans,
            seq: mask.seq.clone(),
        },
        GeneratorOutput { spans: outs },
    )))
}

/// Deterministically sample up to `cap` windows for dataset construction
/// (seeded shuffle, truncate, then restore id order), dropping windows too
/// short to mask.
pub fn sample_windows(
    mut windows: Vec<TokenSeq>,
    cap: usize,
    seed: u64,
    label: &str,
) -> Vec<TokenSeq> {
    use rand::seq::SliceRandom;
    windows.retain(|w| w.len() >= 2);
    if windows.len() > cap {
        windows.shuffle(&mut crate::rng::stream_rng(seed, label, ""));
        windows.truncate(cap);
    }
    windows.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    windows
}

/// Write line-delimited JSON records; returns the record count.
pub fn write_dataset<'a, I>(examples: I, path: &Path) -> Result<usize>
where
    I: IntoIterator<Item = &'a SsrExample>,
{
    let mut w = BufWriter::new(File::create(path)?);
    let mut n = 0usize;
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

/// Stream records back; malformed lines are reported with their 1-based
/// line number.
pub fn read_dataset_iter(path: &Path) -> Result<impl Iterator<Item = Result<SsrExample>>> {
    let reader = BufReader::new(File::open(path)?);
    Ok(reader.lines().enumerate().map(|(i, line)| {
        let line = line?;
        serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            msg: e.to_string(),
        })
    }))
}

pub fn read_dataset(path: &Path) -> Result<Vec<SsrExample>> {
    read_dataset_iter(path)?.collect()
}
