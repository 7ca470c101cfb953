//! Adapter for an out-of-process span generator.
//!
//! Protocol: line-delimited JSON over the child's stdin/stdout, one request
//! and one response line per example, UTF-8, flushed after each line.
//!
//! Request:  `{"id": "...", "masked": ["In", "M_1", ...], "n_spans": 2}`
//! Response: `{"id": "...", "spans": [{"tokens": ["2001"], "nll": [1.2]}]}`
//!
//! Mask sentinels are rendered literally as `M_1`, `M_2`, ... in the request.
//! Response tokens are surface strings; anything outside the vocabulary maps
//! to UNK.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{SentinelKind, Vocab, UNK};
use crate::error::{Error, Result};
use crate::masking::SpanMask;

use super::{GenConfig, GeneratorOutput, SpanGenerator, SpanOutput};

#[derive(Serialize)]
struct GenRequest<'a> {
    id: &'a str,
    masked: Vec<String>,
    n_spans: usize,
}

#[derive(Deserialize)]
struct GenResponse {
    id: String,
    spans: Vec<RespSpan>,
}

#[derive(Deserialize)]
struct RespSpan {
    tokens: Vec<String>,
    nll: Vec<f64>,
}

struct ChildHandle {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// Serializes requests to one child process; one in-flight request at a time.
pub struct ExternalGenerator {
    handle: Mutex<ChildHandle>,
    timeout: Duration,
    cmdline: String,
}

impl ExternalGenerator {
    /// Spawn `cmd[0] cmd[1..]` and wire up the protocol.
    pub fn spawn(cmd: &[String], timeout: Duration) -> Result<Self> {
        if cmd.is_empty() {
            return Err(Error::InvalidConfig("empty external generator command".into()));
        }
        let mut child = Command::new(&cmd[0])
            .args(&cmd[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::ExternalProtocol(format!("spawn {:?}: {e}", cmd[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            handle: Mutex::new(ChildHandle {
                child,
                stdin,
                lines: rx,
            }),
            timeout,
            cmdline: cmd.join(" "),
        })
    }

    fn masked_surfaces(mask: &SpanMask, vocab: &Vocab) -> Result<Vec<String>> {
        let (source, _) = crate::masking::apply_mask(mask, vocab)?;
        source
            .ids
            .iter()
            .map(|&id| match vocab.sentinel_info(id) {
                Some((SentinelKind::Mask, i)) => Ok(format!("M_{i}")),
                _ => vocab.surface(id).map(str::to_string),
            })
            .collect()
    }

    fn round_trip(&self, request: &str) -> Result<String> {
        let mut handle = self.handle.lock().expect("generator lock");
        handle.stdin.write_all(request.as_bytes())?;
        handle.stdin.write_all(b"\n")?;
        handle.stdin.flush()?;
        match handle.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::ExternalProtocol(format!("read: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::ExternalTimeout),
            Err(RecvTimeoutError::Disconnected) => Err(Error::ExternalProtocol(format!(
                "child {:?} closed its stdout",
                self.cmdline
            ))),
        }
    }
}

impl SpanGenerator for ExternalGenerator {
    fn name(&self) -> &str {
        "external"
    }

    fn generate(
        &self,
        mask: &SpanMask,
        vocab: &Vocab,
        _cfg: &GenConfig,
        _rng: &mut ChaCha8Rng,
    ) -> Result<GeneratorOutput> {
        let request = serde_json::to_string(&GenRequest {
            id: &mask.seq.doc_id,
            masked: Self::masked_surfaces(mask, vocab)?,
            n_spans: mask.spans.len(),
        })?;
        let line = self.round_trip(&request)?;
        let resp: GenResponse = serde_json::from_str(&line)
            .map_err(|e| Error::ExternalProtocol(format!("bad response line {line:?}: {e}")))?;
        if resp.id != mask.seq.doc_id {
            return Err(Error::ExternalProtocol(format!(
                "response id {:?} does not match request id {:?}",
                resp.id, mask.seq.doc_id
            )));
        }
        if resp.spans.len() != mask.spans.len() {
            return Err(Error::SpanCountMismatch {
                mask: mask.spans.len(),
                gen: resp.spans.len(),
            });
        }
        let mut spans = Vec::with_capacity(resp.spans.len());
        for (i, (span, gt)) in resp.spans.into_iter().zip(&mask.spans).enumerate() {
            if span.tokens.len() != span.nll.len() {
                return Err(Error::ExternalProtocol(format!(
                    "span {}: {} tokens but {} nll entries in line {line:?}",
                    i + 1,
                    span.tokens.len(),
                    span.nll.len()
                )));
            }
            let tokens: Vec<u32> = span
                .tokens
                .iter()
                .map(|t| match vocab.lookup(t) {
                    Some(id) if !vocab.is_sentinel(id) => id,
                    _ => UNK,
                })
                .collect();
            let is_exact_copy = tokens == gt.gt_ids;
            spans.push(SpanOutput {
                tokens,
                nll: span.nll,
                is_exact_copy,
            });
        }
        let out = GeneratorOutput { spans };
        out.validate(vocab)?;
        Ok(out)
    }
}

impl Drop for ExternalGenerator {
    fn drop(&mut self) {
        if let Ok(mut handle) = self.handle.lock() {
            let _ = handle.child.kill();
            let _ = handle.child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::tests::elon_fixture;
    use crate::rng::stream_rng;

    fn sh(script: &str) -> Vec<String> {
        vec!["/bin/sh".to_string(), "-c".to_string(), script.to_string()]
    }

    #[test]
    fn request_renders_mask_sentinels_literally() {
        let (vocab, mask) = elon_fixture();
        let surfaces = ExternalGenerator::masked_surfaces(&mask, &vocab).unwrap();
        assert_eq!(
            surfaces.join(" "),
            "In M_1 , Elon Musk M_2 SpaceX , M_3 company ."
        );
    }

    #[test]
    fn well_formed_response_is_accepted() {
        let (vocab, mask) = elon_fixture();
        // echo a canned response for the fixture's three spans
        let reply = r#"{\"id\":\"elon\",\"spans\":[{\"tokens\":[\"2001\"],\"nll\":[1.2]},{\"tokens\":[\"joined\"],\"nll\":[0.7]},{\"tokens\":[\"a\",\"manufacturer\"],\"nll\":[0.5,0.9]}]}"#;
        let gen = ExternalGenerator::spawn(
            &sh(&format!("while read line; do echo \"{reply}\"; done")),
            Duration::from_secs(10),
        )
        .unwrap();
        let out = gen
            .generate(&mask, &vocab, &GenConfig::default(), &mut stream_rng(1, "x", ""))
            .unwrap();
        assert_eq!(out.spans.len(), 3);
        assert_eq!(out.spans[0].nll, vec![1.2]);
        assert_eq!(
            out.spans[2]
                .tokens
                .iter()
                .map(|&t| vocab.surface(t).unwrap())
                .collect::<Vec<_>>(),
            vec!["a", "manufacturer"]
        );
        assert!((out.total_nll() - (1.2 + 0.7 + 0.5 + 0.9)).abs() < 1e-12);
    }

    #[test]
    fn missing_nll_is_rejected_with_the_offending_line() {
        let (vocab, mask) = elon_fixture();
        let reply = r#"{\"id\":\"elon\",\"spans\":[{\"tokens\":[\"2001\"]},{\"tokens\":[\"joined\"],\"nll\":[0.7]},{\"tokens\":[\"a\"],\"nll\":[0.5]}]}"#;
        let gen = ExternalGenerator::spawn(
            &sh(&format!("while read line; do echo \"{reply}\"; done")),
            Duration::from_secs(10),
        )
        .unwrap();
        let err = gen
            .generate(&mask, &vocab, &GenConfig::default(), &mut stream_rng(1, "x", ""))
            .unwrap_err();
        match err {
            Error::ExternalProtocol(msg) => assert!(msg.contains("2001"), "message: {msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn misaligned_nll_is_rejected() {
        let (vocab, mask) = elon_fixture();
        let reply = r#"{\"id\":\"elon\",\"spans\":[{\"tokens\":[\"2001\"],\"nll\":[1.0,2.0]},{\"tokens\":[],\"nll\":[]},{\"tokens\":[],\"nll\":[]}]}"#;
        let gen = ExternalGenerator::spawn(
            &sh(&format!("while read line; do echo \"{reply}\"; done")),
            Duration::from_secs(10),
        )
        .unwrap();
        let err = gen
            .generate(&mask, &vocab, &GenConfig::default(), &mut stream_rng(1, "x", ""))
            .unwrap_err();
        assert!(matches!(err, Error::ExternalProtocol(_)));
    }

    #[test]
    fn unresponsive_child_times_out() {
        let (vocab, mask) = elon_fixture();
        let gen = ExternalGenerator::spawn(
            &sh("while read line; do sleep 30; done"),
            Duration::from_millis(300),
        )
        .unwrap();
        let err = gen
            .generate(&mask, &vocab, &GenConfig::default(), &mut stream_rng(1, "x", ""))
            .unwrap_err();
        assert!(matches!(err, Error::ExternalTimeout));
    }
}
