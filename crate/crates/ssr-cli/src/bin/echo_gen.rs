//! Reference external span generator: an echo stub that speaks the
//! line-JSON protocol and answers every request with the ground-truth
//! spans at zero loss.
//!
//! It has no access to ground truth through the protocol, so it re-derives
//! each document's span mask from the same corpus, vocab, seed, and masking
//! knobs the pipeline used — the masks are a deterministic function of
//! those inputs. Useful as a conformance oracle: a pipeline run with this
//! stub must produce a dataset identical to the identity generator's.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::Parser;
use serde::{Deserialize, Serialize};

use ssr_core::corpus::{load_windows, read_lines, CorpusConfig, TokenSeq, Vocab};
use ssr_core::masking::{sample_spans, MaskConfig};
use ssr_core::rng::stream_rng;

#[derive(Parser)]
#[command(name = "ssr-echo-gen", about = "Echo stub for the external generator protocol")]
struct Args {
    /// Corpus files, in pipeline order.
    #[arg(long, required = true)]
    corpus: Vec<PathBuf>,
    /// Vocabulary file written by build-vocab.
    #[arg(long)]
    vocab: PathBuf,
    /// Pipeline seed.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = false)]
    lowercase: bool,
    #[arg(long, default_value_t = 64)]
    max_seq_len: usize,
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.30)]
    budget: f64,
    #[arg(long, default_value_t = 10)]
    max_span_len: usize,
    #[arg(long, default_value_t = 40)]
    max_spans: usize,
}

#[derive(Deserialize)]
struct GenRequest {
    id: String,
    #[allow(dead_code)]
    masked: Vec<String>,
    n_spans: usize,
}

#[derive(Serialize)]
struct GenResponse {
    id: String,
    spans: Vec<RespSpan>,
}

#[derive(Serialize)]
struct RespSpan {
    tokens: Vec<String>,
    nll: Vec<f64>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let vocab = Vocab::load(&args.vocab).map_err(|e| anyhow!("loading vocab: {e}"))?;
    let corpus_cfg = CorpusConfig {
        lowercase: args.lowercase,
        max_seq_len: args.max_seq_len,
        max_sentinels: vocab.max_sentinels(),
        ..CorpusConfig::default()
    };
    let lines = read_lines(&args.corpus).context("reading corpus")?;
    let windows: std::collections::HashMap<String, TokenSeq> = load_windows(&lines, &vocab, &corpus_cfg)
        .into_iter()
        .map(|w| (w.doc_id.clone(), w))
        .collect();
    let mask_cfg = MaskConfig {
        lambda: args.lambda,
        budget: args.budget,
        max_span_len: args.max_span_len,
        max_spans: args.max_spans,
    };

    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: GenRequest = serde_json::from_str(&line)
            .with_context(|| format!("bad request line {line:?}"))?;
        let window = windows
            .get(&req.id)
            .ok_or_else(|| anyhow!("unknown document id {:?}", req.id))?;
        let mask = sample_spans(window, &mut stream_rng(args.seed, "mask", &req.id), &mask_cfg)
            .map_err(|e| anyhow!("masking {}: {e}", req.id))?;
        if mask.spans.len() != req.n_spans {
            return Err(anyhow!(
                "derived {} spans for {} but the request says {}; \
                 check that the seed and masking flags match the pipeline",
                mask.spans.len(),
                req.id,
                req.n_spans
            ));
        }
        let spans = mask
            .spans
            .iter()
            .map(|s| {
                let tokens = s
                    .gt_ids
                    .iter()
                    .map(|&t| vocab.surface(t).map(str::to_string))
                    .collect::<ssr_core::Result<Vec<_>>>()?;
                Ok(RespSpan {
                    nll: vec![0.0; tokens.len()],
                    tokens,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let resp = GenResponse {
            id: req.id,
            spans,
        };
        serde_json::to_writer(&mut stdout, &resp)?;
        stdout.write_all(b"\n")?;
        stdout.flush()?;
    }
    Ok(())
}
