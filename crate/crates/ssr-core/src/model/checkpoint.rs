//! Checkpoint container: one line of JSON (config, tensor table, training
//! metadata, RNG seed) followed by each tensor's raw little-endian f64 data,
//! in header order. Optimizer moments ride along as `opt.m.*` / `opt.v.*`
//! tensors when present.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Mode;
use crate::error::{Error, Result};

use super::{ModelConfig, ModelParams};

/// Adam first/second moments, shaped like the parameters they track.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    /// Update count for bias correction.
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub step: u64,
    pub objective: Mode,
    pub seed: u64,
    pub opt: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    step: u64,
    objective: Mode,
    seed: u64,
    adam_t: Option<u64>,
    tensors: Vec<TensorEntry>,
}

const FORMAT: &str = "ssr-ckpt-v1";

fn collect<'a>(params: &'a ModelParams, prefix: &str) -> Vec<(String, &'a super::tensor::Tensor)> {
    let mut out = Vec::new();
    params.visit(|name, t| out.push((format!("{prefix}{name}"), t)));
    out
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut tensors = collect(&ckpt.params, "");
    if let Some(opt) = &ckpt.opt {
        tensors.extend(collect(&opt.m, "opt.m."));
        tensors.extend(collect(&opt.v, "opt.v."));
    }
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in &tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: [t.rows, t.cols],
            offset,
        });
        offset += (t.data.len() * 8) as u64;
    }
    let header = Header {
        format: FORMAT.to_string(),
        config: ckpt.params.config.clone(),
        step: ckpt.step,
        objective: ckpt.objective,
        seed: ckpt.seed,
        adam_t: ckpt.opt.as_ref().map(|o| o.t),
        tensors: entries,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (_, t) in &tensors {
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)
            .map_err(|_| Error::Checkpoint("missing header terminator".into()))?;
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported format {:?}",
            header.format
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;

    let read_tensor = |entry: &TensorEntry| -> Result<Vec<f64>> {
        let n = entry.shape[0] * entry.shape[1];
        let start = entry.offset as usize;
        let end = start + n * 8;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} extends past the payload",
                entry.name
            )));
        }
        Ok(payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };

    let by_name: std::collections::HashMap<&str, &TensorEntry> = header
        .tensors
        .iter()
        .map(|e| (e.name.as_str(), e))
        .collect();

    let fill = |target: &mut ModelParams, prefix: &str| -> Result<()> {
        let mut missing: Option<String> = None;
        let mut failed: Option<Error> = None;
        target.visit_mut(|name, t| {
            if failed.is_some() || missing.is_some() {
                return;
            }
            let key = format!("{prefix}{name}");
            match by_name.get(key.as_str()) {
                None => missing = Some(key),
                Some(entry) => {
                    if entry.shape != [t.rows, t.cols] {
                        failed = Some(Error::Checkpoint(format!(
                            "tensor {key} has shape {:?}, expected {:?}",
                            entry.shape,
                            [t.rows, t.cols]
                        )));
                        return;
                    }
                    match read_tensor(entry) {
                        Ok(data) => t.data = data,
                        Err(e) => failed = Some(e),
                    }
                }
            }
        });
        if let Some(e) = failed {
            return Err(e);
        }
        if let Some(name) = missing {
            return Err(Error::Checkpoint(format!("missing tensor {name}")));
        }
        Ok(())
    };

    let mut params = {
        // deterministic shapes from config; contents replaced below
        let mut rng = crate::rng::stream_rng(0, "ckpt-shape", "");
        ModelParams::init(&header.config, &mut rng)
            .map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?
    };
    fill(&mut params, "")?;

    let opt = match header.adam_t {
        None => None,
        Some(t) => {
            let mut state = AdamState::new(&params);
            state.t = t;
            fill(&mut state.m, "opt.m.")?;
            fill(&mut state.v, "opt.v.")?;
            Some(state)
        }
    };

    Ok(Checkpoint {
        params,
        step: header.step,
        objective: header.objective,
        seed: header.seed,
        opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn tiny_params() -> ModelParams {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: 140,
            max_rel_distance: 3,
            dropout: 0.0,
            max_decode_len: 16,
        };
        ModelParams::init(&cfg, &mut stream_rng(5, "init", "")).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let params = tiny_params();
        let mut opt = AdamState::new(&params);
        opt.t = 17;
        opt.m.visit_mut(|_, t| t.data.iter_mut().for_each(|v| *v = 0.5));
        let ckpt = Checkpoint {
            params,
            step: 123,
            objective: Mode::Infill,
            seed: 42,
            opt: Some(opt),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.step, 123);
        assert_eq!(back.objective, Mode::Infill);
        assert_eq!(back.seed, 42);
        assert_eq!(back.opt.as_ref().unwrap().t, 17);

        let mut orig = Vec::new();
        ckpt.params.visit(|_, t| orig.extend_from_slice(&t.data));
        let mut loaded = Vec::new();
        back.params.visit(|_, t| loaded.extend_from_slice(&t.data));
        assert_eq!(orig, loaded);

        // save(load(x)) is byte-identical to save(x)
        let path2 = dir.path().join("model2.bin");
        save_checkpoint(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_payload_is_reported() {
        let ckpt = Checkpoint {
            params: tiny_params(),
            step: 0,
            objective: Mode::Ssr,
            seed: 1,
            opt: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&ckpt, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 128]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
