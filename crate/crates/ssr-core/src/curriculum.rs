//! Difficulty scoring, quantile bucketing, and easy-to-hard batch schedules.
//!
//! Rewrite examples are scored by the generator's summed per-token loss,
//! split into `k` equal-size buckets (bucket 1 = easiest), and visited in `k`
//! sequential phases. Within phase `i` each batch element comes from bucket
//! `i` with probability `mix_current`, otherwise uniformly from the buckets
//! already visited. The `anti` strategy runs the same schedule over reversed
//! bucket labels; `loss_only` and `length_only` swap in alternative scores.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Mode, SsrExample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Curriculum,
    None,
    Anti,
    LossOnly,
    LengthOnly,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Curriculum => "curriculum",
            Strategy::None => "none",
            Strategy::Anti => "anti",
            Strategy::LossOnly => "loss_only",
            Strategy::LengthOnly => "length_only",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curriculum" => Ok(Strategy::Curriculum),
            "none" => Ok(Strategy::None),
            "anti" => Ok(Strategy::Anti),
            "loss-only" | "loss_only" => Ok(Strategy::LossOnly),
            "length-only" | "length_only" => Ok(Strategy::LengthOnly),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

pub const ALL_STRATEGIES: [Strategy; 5] = [
    Strategy::Curriculum,
    Strategy::None,
    Strategy::Anti,
    Strategy::LossOnly,
    Strategy::LengthOnly,
];

/// Phase layout for one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub strategy: Strategy,
    pub k: usize,
    /// Probability mass on the current bucket within its phase.
    pub mix_current: f64,
    /// End step (exclusive) of each phase; the last entry equals the total
    /// step count.
    pub phase_boundaries: Vec<usize>,
}

impl CurriculumSchedule {
    pub fn new(strategy: Strategy, k: usize, mix_current: f64, total_steps: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidConfig("bucket count must be at least 1".into()));
        }
        if !(mix_current > 0.0 && mix_current <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mix_current must lie in (0,1], got {mix_current}"
            )));
        }
        let k_eff = if strategy == Strategy::None { 1 } else { k };
        let phase_boundaries = (1..=k_eff).map(|i| i * total_steps / k_eff).collect();
        Ok(Self {
            strategy,
            k,
            mix_current,
            phase_boundaries,
        })
    }

    /// 1-based phase of a 0-based step index.
    pub fn phase_of(&self, step: usize) -> usize {
        match self.phase_boundaries.iter().position(|&b| step < b) {
            Some(i) => i + 1,
            None => self.phase_boundaries.len(),
        }
    }
}

/// Difficulty of one rewrite example under a strategy's own score.
pub fn score(example: &SsrExample, strategy: Strategy) -> Result<f64> {
    if example.mode != Mode::Ssr {
        return Err(Error::ModeMismatch {
            expected: Mode::Ssr.to_string(),
            got: example.mode.to_string(),
        });
    }
    let total_nll = example.total_nll();
    let total_len: usize = example.spans.iter().map(|s| s.imp.len()).sum();
    Ok(match strategy {
        Strategy::Curriculum | Strategy::None | Strategy::Anti => total_nll,
        Strategy::LossOnly => {
            if total_len == 0 {
                0.0
            } else {
                total_nll / total_len as f64
            }
        }
        Strategy::LengthOnly => total_len as f64,
    })
}

/// Sort ascending by score (ties by id) and assign equal-size quantile
/// buckets `1..=k`; sizes differ by at most one, earliest buckets take the
/// remainder. Bucket 1 is the easiest.
pub fn bucketize(examples: &mut [SsrExample], k: usize, strategy: Strategy) -> Result<()> {
    let n = examples.len();
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("bucket count must be at least 1".into()));
    }
    if k > n {
        return Err(Error::BucketCountTooLarge { k, n });
    }
    let mut order: Vec<(f64, &str, usize)> = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| Ok((score(ex, strategy)?, ex.id.as_str(), i)))
        .collect::<Result<_>>()?;
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores").then(a.1.cmp(b.1)));

    let base = n / k;
    let rem = n % k;
    let mut assignments = vec![0u32; n];
    let mut pos = 0usize;
    for bucket in 1..=k {
        let size = base + usize::from(bucket <= rem);
        for _ in 0..size {
            assignments[order[pos].2] = bucket as u32;
            pos += 1;
        }
    }
    for (ex, &b) in examples.iter_mut().zip(&assignments) {
        ex.bucket = Some(b);
    }
    Ok(())
}

/// Per-bucket summary used by the reporting CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketStats {
    pub bucket: u32,
    pub count: usize,
    pub min_score: f64,
    pub mean_score: f64,
    pub max_score: f64,
}

pub fn bucket_stats(examples: &[SsrExample], strategy: Strategy) -> Result<Vec<BucketStats>> {
    let mut by_bucket: std::collections::BTreeMap<u32, Vec<f64>> = Default::default();
    for ex in examples {
        let b = ex.bucket.ok_or(Error::NotBucketized)?;
        by_bucket.entry(b).or_default().push(score(ex, strategy)?);
    }
    Ok(by_bucket
        .into_iter()
        .map(|(bucket, scores)| {
            let count = scores.len();
            let sum: f64 = scores.iter().sum();
            BucketStats {
                bucket,
                count,
                min_score: scores.iter().cloned().fold(f64::INFINITY, f64::min),
                mean_score: sum / count as f64,
                max_score: scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect())
}

/// Emit `total_steps` batches of dataset indices. Deterministic in the RNG
/// stream. `none` ignores buckets entirely; `anti` replays the curriculum
/// schedule over reversed bucket labels.
pub fn schedule_order(
    examples: &[SsrExample],
    schedule: &CurriculumSchedule,
    total_steps: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let n = examples.len();
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    if schedule.strategy == Strategy::None {
        return Ok((0..total_steps)
            .map(|_| (0..batch_size).map(|_| rng.random_range(0..n)).collect())
            .collect());
    }

    let k = schedule.k;
    // effective label: anti walks the buckets hardest-first
    let mut by_bucket: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, ex) in examples.iter().enumerate() {
        let b = ex.bucket.ok_or(Error::NotBucketized)? as usize;
        if b == 0 || b > k {
            return Err(Error::NotBucketized);
        }
        let eff = match schedule.strategy {
            Strategy::Anti => k + 1 - b,
            _ => b,
        };
        by_bucket[eff - 1].push(i);
    }
    if by_bucket.iter().any(Vec::is_empty) {
        return Err(Error::BucketCountTooLarge { k, n });
    }
    // union of buckets < phase, grown incrementally
    let mut earlier: Vec<usize> = Vec::new();
    let mut batches = Vec::with_capacity(total_steps);
    let mut phase = 1usize;
    for step in 0..total_steps {
        let new_phase = schedule.phase_of(step).min(k);
        while phase < new_phase {
            earlier.extend_from_slice(&by_bucket[phase - 1]);
            phase += 1;
        }
        let current = &by_bucket[phase - 1];
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let from_current = earlier.is_empty() || rng.random::<f64>() < schedule.mix_current;
            let pool = if from_current { current } else { &earlier };
            batch.push(pool[rng.random_range(0..pool.len())]);
        }
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SpanRecord;
    use crate::rng::stream_rng;

    fn ssr_example(id: &str, nll: Vec<Vec<f64>>, lens: Vec<usize>) -> SsrExample {
        let spans = nll
            .into_iter()
            .zip(lens)
            .enumerate()
            .map(|(i, (nll, len))| SpanRecord {
                index: i + 1,
                start: 0,
                gt: vec![0; len],
                imp: vec![0; nll.len()],
                nll,
            })
            .collect();
        SsrExample {
            id: id.to_string(),
            mode: Mode::Ssr,
            source: vec![],
            target: vec![],
            source_text: String::new(),
            target_text: String::new(),
            spans,
            difficulty: 0.0,
            bucket: None,
        }
    }

    #[test]
    fn score_sums_span_losses() {
        let ex = ssr_example("a", vec![vec![0.7], vec![1.4]], vec![1, 1]);
        assert!((score(&ex, Strategy::Curriculum).unwrap() - 2.1).abs() < 1e-12);
        assert_eq!(score(&ex, Strategy::LengthOnly).unwrap(), 2.0);
        assert!((score(&ex, Strategy::LossOnly).unwrap() - 1.05).abs() < 1e-12);
    }

    #[test]
    fn identity_examples_score_zero() {
        let ex = ssr_example("a", vec![vec![0.0, 0.0]], vec![2]);
        assert_eq!(score(&ex, Strategy::Curriculum).unwrap(), 0.0);
        assert_eq!(score(&ex, Strategy::LossOnly).unwrap(), 0.0);
    }

    #[test]
    fn non_rewrite_modes_are_rejected() {
        let mut ex = ssr_example("a", vec![], vec![]);
        ex.mode = Mode::Infill;
        assert!(matches!(
            score(&ex, Strategy::Curriculum),
            Err(Error::ModeMismatch { .. })
        ));
    }

    fn dataset_with_scores(scores: &[f64]) -> Vec<SsrExample> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ssr_example(&format!("d{i:04}"), vec![vec![s]], vec![1]))
            .collect()
    }

    #[test]
    fn bucketize_splits_into_equal_quantiles() {
        let mut ds = dataset_with_scores(&[5.0, 1.0, 4.0, 0.5, 3.0, 2.0, 2.5, 0.1, 4.5, 1.5]);
        bucketize(&mut ds, 5, Strategy::Curriculum).unwrap();
        let mut sizes = vec![0usize; 5];
        for ex in &ds {
            sizes[ex.bucket.unwrap() as usize - 1] += 1;
        }
        assert_eq!(sizes, vec![2; 5]);
        let stats = bucket_stats(&ds, Strategy::Curriculum).unwrap();
        for w in stats.windows(2) {
            assert!(w[1].mean_score >= w[0].mean_score);
        }
    }

    #[test]
    fn bucketize_breaks_ties_by_id_and_balances() {
        let mut ds = dataset_with_scores(&[1.0; 7]);
        bucketize(&mut ds, 3, Strategy::Curriculum).unwrap();
        let sizes: Vec<usize> = (1..=3)
            .map(|b| ds.iter().filter(|e| e.bucket == Some(b)).count())
            .collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        // id order decides the assignment
        assert_eq!(ds[0].bucket, Some(1));
        assert_eq!(ds[6].bucket, Some(3));
    }

    #[test]
    fn bucketize_rejects_more_buckets_than_examples() {
        let mut ds = dataset_with_scores(&[1.0, 2.0]);
        assert!(matches!(
            bucketize(&mut ds, 5, Strategy::Curriculum),
            Err(Error::BucketCountTooLarge { k: 5, n: 2 })
        ));
    }

    #[test]
    fn bucket_means_increase_on_random_scores() {
        let mut rng = stream_rng(3, "scores", "");
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() * 10.0).collect();
        let mut ds = dataset_with_scores(&scores);
        bucketize(&mut ds, 5, Strategy::Curriculum).unwrap();
        let stats = bucket_stats(&ds, Strategy::Curriculum).unwrap();
        for w in stats.windows(2) {
            assert!(
                w[1].mean_score > w[0].mean_score,
                "bucket {} mean {} not above bucket {} mean {}",
                w[1].bucket,
                w[1].mean_score,
                w[0].bucket,
                w[0].mean_score
            );
        }
        // partition: every example in exactly one bucket, sizes differ <= 1
        let total: usize = stats.iter().map(|s| s.count).sum();
        assert_eq!(total, 10_000);
        let min = stats.iter().map(|s| s.count).min().unwrap();
        let max = stats.iter().map(|s| s.count).max().unwrap();
        assert!(max - min <= 1);
    }

    #[test]
    fn scores_are_invariant_to_dataset_order() {
        let scores = [3.0, 1.0, 2.0, 5.0, 4.0, 0.5];
        let mut a = dataset_with_scores(&scores);
        let mut b = a.clone();
        b.reverse();
        bucketize(&mut a, 3, Strategy::Curriculum).unwrap();
        bucketize(&mut b, 3, Strategy::Curriculum).unwrap();
        for ex in &a {
            let twin = b.iter().find(|e| e.id == ex.id).unwrap();
            assert_eq!(ex.bucket, twin.bucket);
        }
    }

    #[test]
    fn schedule_phase_one_draws_only_the_easiest_bucket() {
        let mut ds = dataset_with_scores(&(0..100).map(|i| i as f64).collect::<Vec<_>>());
        bucketize(&mut ds, 5, Strategy::Curriculum).unwrap();
        let sched = CurriculumSchedule::new(Strategy::Curriculum, 5, 0.8, 100).unwrap();
        let batches = schedule_order(&ds, &sched, 100, 8, &mut stream_rng(1, "sched", "")).unwrap();
        assert_eq!(batches.len(), 100);
        for batch in &batches[..20] {
            for &i in batch {
                assert_eq!(ds[i].bucket, Some(1));
            }
        }
    }

    #[test]
    fn schedule_mixture_rate_matches_config() {
        let mut ds = dataset_with_scores(&(0..500).map(|i| i as f64).collect::<Vec<_>>());
        bucketize(&mut ds, 5, Strategy::Curriculum).unwrap();
        let sched = CurriculumSchedule::new(Strategy::Curriculum, 5, 0.8, 5000).unwrap();
        let batches =
            schedule_order(&ds, &sched, 5000, 16, &mut stream_rng(2, "sched", "")).unwrap();
        // phases 2..=5 have earlier buckets to fall back to
        let mut current = 0usize;
        let mut total = 0usize;
        for (step, batch) in batches.iter().enumerate().skip(1000) {
            let phase = sched.phase_of(step);
            for &i in batch {
                let b = ds[i].bucket.unwrap() as usize;
                assert!(b <= phase, "step {step} drew bucket {b} in phase {phase}");
                total += 1;
                if b == phase {
                    current += 1;
                }
            }
        }
        let rate = current as f64 / total as f64;
        assert!((rate - 0.8).abs() < 0.02, "current-bucket rate {rate}");
    }

    #[test]
    fn single_bucket_equals_uniform_strategy() {
        // k=1 draws every batch uniformly from the whole dataset, like none
        let mut ds = dataset_with_scores(&(0..50).map(|i| i as f64).collect::<Vec<_>>());
        bucketize(&mut ds, 1, Strategy::Curriculum).unwrap();
        let sched = CurriculumSchedule::new(Strategy::Curriculum, 1, 0.8, 200).unwrap();
        let batches = schedule_order(&ds, &sched, 200, 4, &mut stream_rng(7, "s", "")).unwrap();
        let mut seen = vec![false; 50];
        for b in &batches {
            for &i in b {
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn anti_equals_curriculum_with_reversed_labels() {
        let scores: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let mut ds = dataset_with_scores(&scores);
        bucketize(&mut ds, 5, Strategy::Curriculum).unwrap();

        let anti = CurriculumSchedule::new(Strategy::Anti, 5, 0.8, 300).unwrap();
        let batches_anti =
            schedule_order(&ds, &anti, 300, 8, &mut stream_rng(9, "sched", "")).unwrap();

        // manually reverse the labels and run the plain curriculum
        let mut reversed = ds.clone();
        for ex in &mut reversed {
            ex.bucket = Some(5 + 1 - ex.bucket.unwrap());
        }
        let curriculum = CurriculumSchedule::new(Strategy::Curriculum, 5, 0.8, 300).unwrap();
        let batches_cur =
            schedule_order(&reversed, &curriculum, 300, 8, &mut stream_rng(9, "sched", ""))
                .unwrap();
        assert_eq!(batches_anti, batches_cur);

        // phase-1 pools are disjoint between anti and curriculum
        let batches_plain =
            schedule_order(&ds, &curriculum, 300, 8, &mut stream_rng(9, "sched", "")).unwrap();
        for (a, c) in batches_anti[..60].iter().zip(&batches_plain[..60]) {
            for &i in a {
                assert_eq!(ds[i].bucket, Some(5));
            }
            for &i in c {
                assert_eq!(ds[i].bucket, Some(1));
            }
        }
    }

    #[test]
    fn unbucketized_dataset_is_rejected() {
        let ds = dataset_with_scores(&[1.0, 2.0, 3.0]);
        let sched = CurriculumSchedule::new(Strategy::Curriculum, 3, 0.8, 10).unwrap();
        assert!(matches!(
            schedule_order(&ds, &sched, 10, 2, &mut stream_rng(1, "s", "")),
            Err(Error::NotBucketized)
        ));
        // strategy none works without buckets
        let sched = CurriculumSchedule::new(Strategy::None, 3, 0.8, 10).unwrap();
        assert!(schedule_order(&ds, &sched, 10, 2, &mut stream_rng(1, "s", "")).is_ok());
    }
}
