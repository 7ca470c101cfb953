//! Span masking: sample non-overlapping spans from a token sequence and
//! produce the infilling source/target pair.
//!
//! Span lengths follow a Poisson(lambda) draw clamped to `[0, max_span_len]`;
//! a zero-length span is an insertion point. Sampling keeps placing spans
//! until roughly `budget` of the tokens are masked, never exceeding
//! `budget + 0.05` and (for sequences of 20+ tokens) never undershooting
//! `budget - 0.05`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSeq, Vocab};
use crate::error::{Error, Result};

/// One masked span. `gt_ids` is the ground-truth content; empty means the
/// span is a pure insertion point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    /// 1-based sentinel number, assigned left to right.
    pub index: usize,
    /// Token offset of the span start in the underlying sequence.
    pub start: usize,
    pub gt_ids: Vec<u32>,
}

impl Span {
    pub fn len(&self) -> usize {
        self.gt_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt_ids.is_empty()
    }
}

/// A set of non-overlapping spans over one sequence, sorted by start, with
/// at least one unmasked token between consecutive spans.
#[derive(Debug, Clone)]
pub struct SpanMask {
    pub spans: Vec<Span>,
    pub seq: TokenSeq,
}

/// Knobs for [`sample_spans`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Poisson rate for span lengths.
    pub lambda: f64,
    /// Target masked-token fraction.
    pub budget: f64,
    /// Hard clamp on a single span length.
    pub max_span_len: usize,
    /// Hard cap on span count; must not exceed the vocab sentinel count.
    pub max_spans: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            lambda: 3.0,
            budget: 0.30,
            max_span_len: 10,
            max_spans: 40,
        }
    }
}

/// Exact Poisson draw via Knuth's product method.
pub fn poisson_sample<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> Result<usize> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "poisson rate must be positive and finite, got {lambda}"
        )));
    }
    let limit = (-lambda).exp();
    let mut k = 0usize;
    let mut p = 1.0f64;
    loop {
        p *= rng.random::<f64>();
        if p <= limit {
            return Ok(k);
        }
        k += 1;
    }
}

/// A candidate span `[start, start+len)` is legal when it stays in bounds
/// and keeps at least one unmasked token between itself and every existing
/// span. Zero-length spans occupy the boundary before token `start`.
fn is_legal(start: usize, len: usize, n: usize, taken: &[(usize, usize)]) -> bool {
    if start + len > n {
        return false;
    }
    taken
        .iter()
        .all(|&(t, m)| start + len + 1 <= t || t + m + 1 <= start)
}

fn legal_starts(len: usize, n: usize, taken: &[(usize, usize)]) -> Vec<usize> {
    (0..=n - len.min(n))
        .filter(|&s| is_legal(s, len, n, taken))
        .collect()
}

/// Sample a span mask. Deterministic given the RNG stream, which callers
/// derive from `(seed, doc_id)` so document order never matters.
pub fn sample_spans(seq: &TokenSeq, rng: &mut ChaCha8Rng, cfg: &MaskConfig) -> Result<SpanMask> {
    let n = seq.len();
    if n < 2 {
        return Err(Error::SequenceTooShort);
    }
    if !(cfg.budget >= 0.0 && cfg.budget <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "budget must lie in [0,1], got {}",
            cfg.budget
        )));
    }

    let target_units = cfg.budget * n as f64;
    let cap = ((cfg.budget + 0.05) * n as f64).ceil() as usize;
    let low = (cfg.budget - 0.05).max(0.0);
    let min_cover = if n >= 20 { (low * n as f64).floor() as usize } else { 0 };
    // randomized rounding of the fractional unit target keeps the corpus-level
    // masked fraction centered on `budget` despite short windows
    let round_up = rng.random::<f64>() < target_units.fract();
    let unit_goal = target_units.floor() as usize + usize::from(round_up);

    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut units = 0usize; // insertions count one unit so the loop terminates
    let mut masked = 0usize;
    let mut insertions = 0usize;
    let mut stalled = 0usize;

    while taken.len() < cfg.max_spans {
        if units >= unit_goal && masked >= min_cover {
            break;
        }
        if stalled > 200 {
            break;
        }
        let room = cap.saturating_sub(masked);
        if room == 0 {
            break;
        }
        let mut len = poisson_sample(rng, cfg.lambda)?.min(cfg.max_span_len).min(room);
        if len > 0 {
            // trim the final span so the budget is met without drifting
            // toward the overshoot cap on short windows
            let still_needed = (unit_goal.saturating_sub(units))
                .max(min_cover.saturating_sub(masked))
                .max(1);
            len = len.min(still_needed);
        }
        if len == 0 {
            // insertions are capped at 20% of spans
            if (insertions + 1) * 5 > taken.len() + 1 {
                stalled += 1;
                continue;
            }
        }
        // up to 50 uniform placement attempts, then fall back to sampling
        // uniformly over the exact legal set (shrinking the length if needed)
        let mut placed = None;
        for _ in 0..50 {
            let s = rng.random_range(0..=n - len);
            if is_legal(s, len, n, &taken) {
                placed = Some(s);
                break;
            }
        }
        if placed.is_none() {
            let mut l = len;
            loop {
                let starts = legal_starts(l, n, &taken);
                if !starts.is_empty() {
                    placed = Some(starts[rng.random_range(0..starts.len())]);
                    len = l;
                    break;
                }
                if l <= 1 {
                    break;
                }
                l -= 1;
            }
        }
        let Some(start) = placed else {
            break; // no slot left for any length
        };
        taken.push((start, len));
        masked += len;
        units += len.max(1);
        if len == 0 {
            insertions += 1;
        }
    }

    taken.sort_unstable();
    let spans = taken
        .into_iter()
        .enumerate()
        .map(|(i, (start, len))| Span {
            index: i + 1,
            start,
            gt_ids: seq.ids[start..start + len].to_vec(),
        })
        .collect();
    Ok(SpanMask {
        spans,
        seq: seq.clone(),
    })
}

impl SpanMask {
    pub fn total_masked(&self) -> usize {
        self.spans.iter().map(Span::len).sum()
    }

    /// Check the structural invariants; used by tests and the dataset layer.
    pub fn validate(&self) -> Result<()> {
        let n = self.seq.len();
        let mut prev_end: Option<usize> = None;
        for (i, span) in self.spans.iter().enumerate() {
            if span.index != i + 1 {
                return Err(Error::ShapeMismatch(format!(
                    "sentinel index {} at position {i}",
                    span.index
                )));
            }
            if span.start + span.len() > n {
                return Err(Error::ShapeMismatch("span out of bounds".to_string()));
            }
            if let Some(end) = prev_end {
                if span.start < end + 1 {
                    return Err(Error::ShapeMismatch("adjacent or overlapping spans".to_string()));
                }
            }
            prev_end = Some(span.start + span.len());
        }
        Ok(())
    }
}

/// Replace each span with its mask sentinel and emit the infilling target
/// `<m_1> gt_1 <m_2> gt_2 ...`.
pub fn apply_mask(mask: &SpanMask, vocab: &Vocab) -> Result<(TokenSeq, TokenSeq)> {
    if mask.spans.len() > vocab.max_sentinels() {
        return Err(Error::TooManySpans {
            got: mask.spans.len(),
            max: vocab.max_sentinels(),
        });
    }
    let mut source = Vec::with_capacity(mask.seq.len() + mask.spans.len());
    let mut target = Vec::new();
    let mut pos = 0usize;
    for span in &mask.spans {
        source.extend_from_slice(&mask.seq.ids[pos..span.start]);
        source.push(vocab.mask_id(span.index)?);
        target.push(vocab.mask_id(span.index)?);
        target.extend_from_slice(&span.gt_ids);
        pos = span.start + span.len();
    }
    source.extend_from_slice(&mask.seq.ids[pos..]);
    Ok((
        TokenSeq::new(source, mask.seq.doc_id.clone()),
        TokenSeq::new(target, mask.seq.doc_id.clone()),
    ))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{build_vocab, synth_corpus, tokenize, CorpusConfig};
    use crate::rng::stream_rng;

    fn test_vocab() -> Vocab {
        let docs = synth_corpus(500, 3);
        build_vocab(&docs, &CorpusConfig::default()).unwrap()
    }

    fn windows(n: usize, seed: u64, vocab: &Vocab) -> Vec<TokenSeq> {
        synth_corpus(n, seed)
            .iter()
            .enumerate()
            .map(|(i, line)| {
                let mut t = tokenize(line, vocab, false, format!("d{i:06}w00"));
                t.doc_id = format!("d{i:06}w00");
                t
            })
            .collect()
    }

    #[test]
    fn poisson_rejects_bad_rate() {
        let mut rng = stream_rng(1, "t", "");
        assert!(poisson_sample(&mut rng, 0.0).is_err());
        assert!(poisson_sample(&mut rng, -3.0).is_err());
    }

    #[test]
    fn poisson_pmf_at_zero_matches_closed_form() {
        let mut rng = stream_rng(42, "poisson", "");
        let n = 1_000_000usize;
        let mut zeros = 0usize;
        for _ in 0..n {
            if poisson_sample(&mut rng, 3.0).unwrap() == 0 {
                zeros += 1;
            }
        }
        let expected = (-3.0f64).exp(); // ~0.0498
        let freq = zeros as f64 / n as f64;
        assert!(
            (freq - expected).abs() < 0.002,
            "P(X=0) = {freq}, expected {expected}"
        );
    }

    #[test]
    fn poisson_mean_and_variance_match_lambda() {
        let mut rng = stream_rng(7, "poisson", "");
        let n = 1_000_000usize;
        let draws: Vec<f64> = (0..n)
            .map(|_| poisson_sample(&mut rng, 3.0).unwrap() as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        assert!((mean - 3.0).abs() < 0.05, "mean {mean}");
        assert!((var - 3.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn poisson_chi_square_goodness_of_fit() {
        // bins 0..9 plus a lumped tail; critical value for df=10 at alpha=0.001
        let mut rng = stream_rng(13, "poisson-gof", "");
        let n = 100_000usize;
        let mut observed = [0f64; 11];
        for _ in 0..n {
            let k = poisson_sample(&mut rng, 3.0).unwrap();
            observed[k.min(10)] += 1.0;
        }
        let mut pmf = [0f64; 11];
        pmf[0] = (-3.0f64).exp();
        for k in 1..10 {
            pmf[k] = pmf[k - 1] * 3.0 / k as f64;
        }
        pmf[10] = 1.0 - pmf[..10].iter().sum::<f64>();
        let chi2: f64 = (0..11)
            .map(|k| {
                let e = pmf[k] * n as f64;
                (observed[k] - e) * (observed[k] - e) / e
            })
            .sum();
        assert!(chi2 < 29.588, "chi-square {chi2} exceeds the 0.001 critical value");
    }

    #[test]
    fn sample_mean_of_preclamp_lengths_is_lambda() {
        let mut rng = stream_rng(5, "lens", "");
        let n = 100_000usize;
        let mean = (0..n)
            .map(|_| poisson_sample(&mut rng, 3.0).unwrap() as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 3.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn too_short_sequence_errors() {
        let seq = TokenSeq::new(vec![100], "d0");
        let mut rng = stream_rng(1, "mask", "d0");
        assert!(matches!(
            sample_spans(&seq, &mut rng, &MaskConfig::default()),
            Err(Error::SequenceTooShort)
        ));
    }

    #[test]
    fn zero_budget_yields_no_spans() {
        let seq = TokenSeq::new((100..140).collect(), "d0");
        let mut rng = stream_rng(1, "mask", "d0");
        let cfg = MaskConfig {
            budget: 0.0,
            ..MaskConfig::default()
        };
        let mask = sample_spans(&seq, &mut rng, &cfg).unwrap();
        assert!(mask.spans.is_empty());
    }

    #[test]
    fn sampling_is_deterministic_per_doc() {
        let vocab = test_vocab();
        for seq in windows(20, 17, &vocab) {
            let cfg = MaskConfig::default();
            let a = sample_spans(&seq, &mut stream_rng(3, "mask", &seq.doc_id), &cfg).unwrap();
            let b = sample_spans(&seq, &mut stream_rng(3, "mask", &seq.doc_id), &cfg).unwrap();
            assert_eq!(a.spans, b.spans);
        }
    }

    #[test]
    fn masks_satisfy_structure_and_budget_invariants() {
        let vocab = test_vocab();
        let cfg = MaskConfig::default();
        let mut total_tokens = 0usize;
        let mut total_masked = 0usize;
        let mut per_doc_ok = 0usize;
        let mut docs = 0usize;
        // templated sentences are short; stitch a few together for length variety
        let all = windows(3000, 23, &vocab);
        for group in all.chunks(3) {
            let mut ids = Vec::new();
            for w in group {
                ids.extend_from_slice(&w.ids);
            }
            let seq = TokenSeq::new(ids, group[0].doc_id.clone());
            if seq.len() < 2 {
                continue;
            }
            docs += 1;
            let mask = sample_spans(&seq, &mut stream_rng(5, "mask", &seq.doc_id), &cfg).unwrap();
            mask.validate().unwrap();
            let m = mask.total_masked();
            let n = seq.len();
            assert!(
                m <= ((cfg.budget + 0.05) * n as f64).ceil() as usize,
                "doc {} masked {m}/{n}",
                seq.doc_id
            );
            if n >= 20 {
                assert!(
                    m >= ((cfg.budget - 0.05) * n as f64).floor() as usize,
                    "doc {} masked {m}/{n} below the floor",
                    seq.doc_id
                );
            }
            let frac = m as f64 / n as f64;
            if (0.25..=0.35).contains(&frac) {
                per_doc_ok += 1;
            }
            total_tokens += n;
            total_masked += m;
        }
        assert!(docs >= 1000, "need 1000+ documents, got {docs}");
        let mean = total_masked as f64 / total_tokens as f64;
        assert!((mean - 0.30).abs() <= 0.02, "corpus masked fraction {mean}");
        assert!(per_doc_ok as f64 / docs as f64 > 0.9);
    }

    #[test]
    fn sentinel_numbering_is_left_to_right() {
        let vocab = test_vocab();
        for seq in windows(50, 31, &vocab) {
            if seq.len() < 2 {
                continue;
            }
            let mask =
                sample_spans(&seq, &mut stream_rng(9, "mask", &seq.doc_id), &MaskConfig::default())
                    .unwrap();
            for (i, s) in mask.spans.iter().enumerate() {
                assert_eq!(s.index, i + 1);
                if i > 0 {
                    assert!(s.start > mask.spans[i - 1].start);
                }
            }
        }
    }

    /// Hand-built mask for the running example sentence, matching the
    /// three-span corruption used throughout the crate's docs.
    pub(crate) fn elon_fixture() -> (Vocab, SpanMask) {
        let doc = "In 2002 , Elon Musk founded SpaceX , an aerospace manufacturer company .";
        let cfg = CorpusConfig {
            max_vocab: 200,
            ..CorpusConfig::default()
        };
        let vocab = build_vocab([doc, "2001 joined a"], &cfg).unwrap();
        let seq = tokenize(doc, &vocab, false, "elon");
        let spans = vec![
            Span {
                index: 1,
                start: 1,
                gt_ids: seq.ids[1..2].to_vec(), // 2002
            },
            Span {
                index: 2,
                start: 5,
                gt_ids: seq.ids[5..6].to_vec(), // founded
            },
            Span {
                index: 3,
                start: 8,
                gt_ids: seq.ids[8..11].to_vec(), // an aerospace manufacturer
            },
        ];
        (vocab.clone(), SpanMask { spans, seq })
    }

    #[test]
    fn apply_mask_produces_infilling_pair() {
        let (vocab, mask) = elon_fixture();
        let (source, target) = apply_mask(&mask, &vocab).unwrap();
        assert_eq!(
            crate::corpus::detokenize(&source.ids, &vocab).unwrap(),
            "In <m_1> , Elon Musk <m_2> SpaceX , <m_3> company ."
        );
        assert_eq!(
            crate::corpus::detokenize(&target.ids, &vocab).unwrap(),
            "<m_1> 2002 <m_2> founded <m_3> an aerospace manufacturer"
        );
    }

    #[test]
    fn apply_mask_empty_spans_is_identity() {
        let (vocab, mask) = elon_fixture();
        let empty = SpanMask {
            spans: vec![],
            seq: mask.seq.clone(),
        };
        let (source, target) = apply_mask(&empty, &vocab).unwrap();
        assert_eq!(source.ids, mask.seq.ids);
        assert!(target.ids.is_empty());
    }

    #[test]
    fn apply_mask_rejects_span_overflow() {
        let vocab = test_vocab();
        let n_sent = vocab.max_sentinels();
        let ids: Vec<u32> = (0..2 * (n_sent as u32 + 1) + 2).map(|_| UNK_LIKE).collect();
        let seq = TokenSeq::new(ids, "d0");
        let spans: Vec<Span> = (0..n_sent + 1)
            .map(|i| Span {
                index: i + 1,
                start: 2 * i,
                gt_ids: vec![UNK_LIKE],
            })
            .collect();
        let mask = SpanMask { spans, seq };
        assert!(matches!(
            apply_mask(&mask, &vocab),
            Err(Error::TooManySpans { .. })
        ));
    }

    const UNK_LIKE: u32 = crate::corpus::UNK;

    #[test]
    fn substituting_gt_back_reconstructs_the_document() {
        let vocab = test_vocab();
        for seq in windows(1000, 77, &vocab) {
            if seq.len() < 2 {
                continue;
            }
            let mask =
                sample_spans(&seq, &mut stream_rng(2, "mask", &seq.doc_id), &MaskConfig::default())
                    .unwrap();
            let (source, _) = apply_mask(&mask, &vocab).unwrap();
            // replace each sentinel with its ground-truth span
            let mut rebuilt = Vec::new();
            let mut span_iter = mask.spans.iter();
            for &id in &source.ids {
                if vocab.is_sentinel(id) {
                    let span = span_iter.next().unwrap();
                    assert_eq!(id, vocab.mask_id(span.index).unwrap());
                    rebuilt.extend_from_slice(&span.gt_ids);
                } else {
                    rebuilt.push(id);
                }
            }
            assert_eq!(rebuilt, seq.ids);
        }
    }
}
