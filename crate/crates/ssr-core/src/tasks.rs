//! Synthetic rewriting tasks and evaluation metrics: exact match, an
//! edit-based F0.5 (minimal Levenshtein alignment in place of an annotated
//! edit lattice), and ROUGE-L.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSeq, Vocab};
use crate::dataset::{build_finetune_example, SsrExample};
use crate::error::{Error, Result};
use crate::generators::{rule_noise, RuleNoiseConfig};
use crate::model::{decode_greedy, ModelParams};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Insert,
    Delete,
    Substitute,
}

/// One token-level edit against a source sequence. `tokens` carries the
/// inserted/substituted content; deletions carry none.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edit {
    /// Source position the edit applies at; insertions go before it.
    pub pos: usize,
    pub kind: EditKind,
    pub tokens: Vec<u32>,
}

pub type EditSet = Vec<Edit>;

/// Minimal token-level edit script via dynamic programming. Ties prefer
/// substitute over delete over insert, leftmost-first, so the script is
/// unique and deterministic.
pub fn align_edits(source: &[u32], hypothesis: &[u32]) -> EditSet {
    let (m, n) = (source.len(), hypothesis.len());
    // dp[i][j] = cost of aligning source[i..] to hypothesis[j..]
    let mut dp = vec![vec![0usize; n + 1]; m + 1];
    for i in (0..=m).rev() {
        for j in (0..=n).rev() {
            dp[i][j] = if i == m {
                n - j
            } else if j == n {
                m - i
            } else if source[i] == hypothesis[j] {
                dp[i + 1][j + 1]
            } else {
                1 + dp[i + 1][j + 1].min(dp[i + 1][j]).min(dp[i][j + 1])
            };
        }
    }
    let mut edits = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < m || j < n {
        if i < m && j < n && source[i] == hypothesis[j] && dp[i][j] == dp[i + 1][j + 1] {
            i += 1;
            j += 1;
        } else if i < m && j < n && dp[i][j] == 1 + dp[i + 1][j + 1] {
            edits.push(Edit {
                pos: i,
                kind: EditKind::Substitute,
                tokens: vec![hypothesis[j]],
            });
            i += 1;
            j += 1;
        } else if i < m && dp[i][j] == 1 + dp[i + 1][j] {
            edits.push(Edit {
                pos: i,
                kind: EditKind::Delete,
                tokens: vec![],
            });
            i += 1;
        } else {
            edits.push(Edit {
                pos: i,
                kind: EditKind::Insert,
                tokens: vec![hypothesis[j]],
            });
            j += 1;
        }
    }
    edits
}

/// Apply an edit script produced by [`align_edits`] back onto its source.
pub fn apply_edits(source: &[u32], edits: &EditSet) -> Vec<u32> {
    let mut out = Vec::with_capacity(source.len());
    let mut pending = edits.iter().peekable();
    for (i, &tok) in source.iter().enumerate() {
        let mut consumed = false;
        while let Some(e) = pending.peek() {
            if e.pos != i {
                break;
            }
            match e.kind {
                EditKind::Insert => out.extend_from_slice(&e.tokens),
                EditKind::Delete => consumed = true,
                EditKind::Substitute => {
                    out.extend_from_slice(&e.tokens);
                    consumed = true;
                }
            }
            pending.next();
        }
        if !consumed {
            out.push(tok);
        }
    }
    for e in pending {
        debug_assert_eq!(e.pos, source.len());
        out.extend_from_slice(&e.tokens);
    }
    out
}

/// Precision/recall/F triple; all values fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecallF {
    pub p: f64,
    pub r: f64,
    pub f: f64,
}

fn f_beta(p: f64, r: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * p + r;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / denom
    }
}

/// Edit-level F-beta. A match is an edit identical in (position, kind,
/// tokens); both sets must be derived against the same source. Empty
/// hypothesis and reference count as perfect; a single empty side zeroes
/// the undefined ratio.
pub fn edit_f_beta(hyp: &EditSet, reference: &EditSet, beta: f64) -> PrecisionRecallF {
    if hyp.is_empty() && reference.is_empty() {
        return PrecisionRecallF {
            p: 1.0,
            r: 1.0,
            f: 1.0,
        };
    }
    let mut ref_counts: std::collections::HashMap<&Edit, usize> = Default::default();
    for e in reference {
        *ref_counts.entry(e).or_insert(0) += 1;
    }
    let mut matches = 0usize;
    for e in hyp {
        if let Some(c) = ref_counts.get_mut(e) {
            if *c > 0 {
                *c -= 1;
                matches += 1;
            }
        }
    }
    let p = if hyp.is_empty() {
        0.0
    } else {
        matches as f64 / hyp.len() as f64
    };
    let r = if reference.is_empty() {
        0.0
    } else {
        matches as f64 / reference.len() as f64
    };
    PrecisionRecallF {
        p,
        r,
        f: f_beta(p, r, beta),
    }
}

/// Longest common subsequence length (classic quadratic DP).
pub fn lcs_len(a: &[u32], b: &[u32]) -> usize {
    let mut dp = vec![0usize; b.len() + 1];
    for &x in a {
        let mut diag = 0;
        for (j, &y) in b.iter().enumerate() {
            let up = dp[j + 1];
            dp[j + 1] = if x == y { diag + 1 } else { up.max(dp[j]) };
            diag = up;
        }
    }
    dp[b.len()]
}

/// ROUGE-L: LCS-based precision/recall with a plain F1 combination.
pub fn rouge_l(hyp: &[u32], reference: &[u32]) -> PrecisionRecallF {
    if hyp.is_empty() && reference.is_empty() {
        return PrecisionRecallF {
            p: 1.0,
            r: 1.0,
            f: 1.0,
        };
    }
    if hyp.is_empty() || reference.is_empty() {
        return PrecisionRecallF {
            p: 0.0,
            r: 0.0,
            f: 0.0,
        };
    }
    let lcs = lcs_len(hyp, reference) as f64;
    let p = lcs / hyp.len() as f64;
    let r = lcs / reference.len() as f64;
    PrecisionRecallF {
        p,
        r,
        f: f_beta(p, r, 1.0),
    }
}

/// Strip every reserved id, leaving the text payload.
pub fn payload(ids: &[u32], vocab: &Vocab) -> Vec<u32> {
    ids.iter().copied().filter(|&t| !vocab.is_special(t)).collect()
}

/// Noised-rewriting splits built from a clean corpus: target = the clean
/// window, source = its rule-noised corruption. Documents are assigned to
/// exactly one split.
#[derive(Debug, Clone)]
pub struct TaskSplits {
    pub train: Vec<SsrExample>,
    pub dev: Vec<SsrExample>,
    pub test: Vec<SsrExample>,
}

pub fn make_synth_gec(
    windows: &[TokenSeq],
    noise: &RuleNoiseConfig,
    vocab: &Vocab,
    seed: u64,
    train_frac: f64,
    dev_frac: f64,
) -> Result<TaskSplits> {
    if windows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(train_frac > 0.0 && dev_frac > 0.0 && train_frac + dev_frac < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "bad split fractions: train {train_frac}, dev {dev_frac}"
        )));
    }
    // group windows by document so a document never straddles splits
    let mut doc_ids: Vec<&str> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for w in windows {
        let base = w.doc_id.split('w').next().unwrap_or(&w.doc_id);
        if seen.insert(base) {
            doc_ids.push(base);
        }
    }
    let mut order: Vec<usize> = (0..doc_ids.len()).collect();
    order.shuffle(&mut stream_rng(seed, "task-split", ""));
    let mut rank_of = vec![0usize; doc_ids.len()];
    for (rank, &doc) in order.iter().enumerate() {
        rank_of[doc] = rank;
    }
    let n = order.len();
    let n_train = ((n as f64) * train_frac).round() as usize;
    let n_dev = (((n as f64) * dev_frac).round() as usize).max(1);
    let mut doc_index: std::collections::HashMap<&str, usize> = Default::default();
    for (i, id) in doc_ids.iter().enumerate() {
        doc_index.insert(id, i);
    }

    let mut splits = TaskSplits {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for w in windows {
        if w.is_empty() {
            continue;
        }
        let base = w.doc_id.split('w').next().unwrap_or(&w.doc_id);
        let mut rng = stream_rng(seed, "task-noise", &w.doc_id);
        let noised = rule_noise(&w.ids, noise, &mut rng, vocab);
        if noised.tokens.is_empty() {
            continue; // fully deleted sources cannot form a pair
        }
        let src = TokenSeq::new(noised.tokens, w.doc_id.clone());
        let ex = build_finetune_example(&src, w, vocab)?;
        let rank = rank_of[doc_index[base]];
        if rank < n_train {
            splits.train.push(ex);
        } else if rank < n_train + n_dev {
            splits.dev.push(ex);
        } else {
            splits.test.push(ex);
        }
    }
    Ok(splits)
}

/// Metric block reported for both the model and the copy baseline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricSet {
    pub exact_match: f64,
    pub p: f64,
    pub r: f64,
    pub f05: f64,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub task: String,
    pub n_examples: usize,
    pub metrics: MetricSet,
    pub copy_baseline: MetricSet,
}

struct MetricAccum {
    exact: usize,
    matches: usize,
    hyp_edits: usize,
    ref_edits: usize,
    rouge_sum: f64,
    n: usize,
}

impl MetricAccum {
    fn new() -> Self {
        Self {
            exact: 0,
            matches: 0,
            hyp_edits: 0,
            ref_edits: 0,
            rouge_sum: 0.0,
            n: 0,
        }
    }

    fn push(&mut self, src: &[u32], hyp: &[u32], reference: &[u32]) {
        self.n += 1;
        if hyp == reference {
            self.exact += 1;
        }
        let hyp_edits = align_edits(src, hyp);
        let ref_edits = align_edits(src, reference);
        let mut ref_counts: std::collections::HashMap<&Edit, usize> = Default::default();
        for e in &ref_edits {
            *ref_counts.entry(e).or_insert(0) += 1;
        }
        for e in &hyp_edits {
            if let Some(c) = ref_counts.get_mut(e) {
                if *c > 0 {
                    *c -= 1;
                    self.matches += 1;
                }
            }
        }
        self.hyp_edits += hyp_edits.len();
        self.ref_edits += ref_edits.len();
        self.rouge_sum += rouge_l(hyp, reference).f;
    }

    /// Corpus-level (micro) edit scores; macro-averaged ROUGE.
    fn finish(&self) -> MetricSet {
        let (p, r, f05) = if self.hyp_edits == 0 && self.ref_edits == 0 {
            (1.0, 1.0, 1.0)
        } else {
            let p = if self.hyp_edits == 0 {
                0.0
            } else {
                self.matches as f64 / self.hyp_edits as f64
            };
            let r = if self.ref_edits == 0 {
                0.0
            } else {
                self.matches as f64 / self.ref_edits as f64
            };
            (p, r, f_beta(p, r, 0.5))
        };
        MetricSet {
            exact_match: self.exact as f64 / self.n.max(1) as f64,
            p,
            r,
            f05,
            rouge_l: self.rouge_sum / self.n.max(1) as f64,
        }
    }
}

/// Greedy-decode every test source and score the payloads against the
/// references; the copy baseline (hypothesis = source payload) is always
/// reported alongside.
pub fn evaluate(
    params: &ModelParams,
    test: &[SsrExample],
    vocab: &Vocab,
    checkpoint_name: &str,
    task_name: &str,
) -> Result<EvalReport> {
    if vocab.len() != params.config.vocab_size {
        return Err(Error::VocabMismatch {
            model: params.config.vocab_size,
            got: vocab.len(),
        });
    }
    let mut model_acc = MetricAccum::new();
    let mut copy_acc = MetricAccum::new();
    for ex in test {
        let src_payload = payload(&ex.source, vocab);
        let ref_payload = payload(&ex.target, vocab);
        let decoded = decode_greedy(params, &ex.source)?;
        let hyp_payload = payload(&decoded, vocab);
        model_acc.push(&src_payload, &hyp_payload, &ref_payload);
        copy_acc.push(&src_payload, &src_payload, &ref_payload);
    }
    Ok(EvalReport {
        checkpoint: checkpoint_name.to_string(),
        task: task_name.to_string(),
        n_examples: test.len(),
        metrics: model_acc.finish(),
        copy_baseline: copy_acc.finish(),
    })
}
