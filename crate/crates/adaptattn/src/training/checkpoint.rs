//! Checkpoint container: a plain-text header of `name dim dim ...` lines
//! (with `#`-prefixed metadata echoing the vocabulary path and the bin and
//! model configuration), a blank line, then the tensors' row-major 32-bit
//! little-endian float payloads concatenated in header order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::BinConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::numcore::{Scalar, Tensor};

const MAGIC: &str = "# adaptattn checkpoint";

/// Metadata carried in the checkpoint header.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    /// Path of the vocabulary file the model was trained with.
    pub vocab_path: String,
    pub model: ModelConfig,
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    params: &ModelParams<T>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let named = params.named();
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    let bins = &meta.model.bin_config;
    let kv = [
        ("vocab", meta.vocab_path.clone()),
        ("l1", bins.l1.to_string()),
        ("l2", bins.l2.to_string()),
        ("max_len_cap", bins.max_len_cap.to_string()),
        (
            "heads",
            format!("{},{},{}", bins.heads[0], bins.heads[1], bins.heads[2]),
        ),
        (
            "pad_len",
            format!("{},{},{}", bins.pad_len[0], bins.pad_len[1], bins.pad_len[2]),
        ),
        ("single_bin", bins.single_bin.to_string()),
        ("d_model", meta.model.d_model.to_string()),
        ("n_layers", meta.model.n_layers.to_string()),
        ("d_ff", meta.model.d_ff.to_string()),
        ("vocab_size", meta.model.vocab_size.to_string()),
    ];
    for (key, value) in kv {
        header.push_str(&format!("# {key} = {value}\n"));
    }
    for (name, tensor) in &named {
        header.push_str(name);
        for dim in tensor.shape() {
            header.push_str(&format!(" {dim}"));
        }
        header.push('\n');
    }
    header.push('\n');

    let payload_len: usize = named.iter().map(|(_, t)| t.len() * 4).sum();
    let mut bytes = Vec::with_capacity(header.len() + payload_len);
    bytes.extend_from_slice(header.as_bytes());
    for (_, tensor) in &named {
        for &v in tensor.data() {
            bytes.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ModelParams<T>, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |what: &str| Error::Data(format!("corrupted checkpoint {}: {what}", path.display()));

    let split = find_blank_line(&bytes).ok_or_else(|| corrupt("missing blank line after header"))?;
    let header =
        std::str::from_utf8(&bytes[..split]).map_err(|_| corrupt("header is not UTF-8"))?;
    let payload = &bytes[split + 2..];

    let mut meta_kv: HashMap<String, String> = HashMap::new();
    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("bad magic line"));
    }
    for line in lines {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((key, value)) = rest.split_once('=') {
                meta_kv.insert(key.trim().to_string(), value.trim().to_string());
            }
            continue;
        }
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| corrupt("empty tensor line"))?
            .to_string();
        let dims: Vec<usize> = parts
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| corrupt("non-numeric dimension"))?;
        shapes.push((name, dims));
    }

    let meta = meta_from_kv(&meta_kv, &corrupt)?;

    let expect_payload: usize = shapes
        .iter()
        .map(|(_, dims)| dims.iter().product::<usize>() * 4)
        .sum();
    if payload.len() != expect_payload {
        return Err(corrupt(&format!(
            "payload holds {} bytes, header promises {}",
            payload.len(),
            expect_payload
        )));
    }

    let mut tensors = Vec::with_capacity(shapes.len());
    let mut offset = 0;
    for (name, dims) in shapes {
        let count: usize = dims.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let raw: [u8; 4] = payload[offset..offset + 4].try_into().unwrap();
            data.push(T::from_f32(f32::from_le_bytes(raw)));
            offset += 4;
        }
        tensors.push((name, Tensor::new(dims, data)?));
    }

    let params = ModelParams::from_named(&meta.model, tensors)?;
    Ok((params, meta))
}

fn find_blank_line(bytes: &[u8]) -> Option<usize> {
    bytes.windows(2).position(|w| w == b"\n\n")
}

fn meta_from_kv(
    kv: &HashMap<String, String>,
    corrupt: &dyn Fn(&str) -> Error,
) -> Result<CheckpointMeta> {
    let get = |key: &str| -> Result<&String> {
        kv.get(key)
            .ok_or_else(|| corrupt(&format!("header is missing `{key}`")))
    };
    let num = |key: &str| -> Result<usize> {
        get(key)?
            .parse::<usize>()
            .map_err(|_| corrupt(&format!("`{key}` is not a number")))
    };
    let triple = |key: &str| -> Result<[usize; 3]> {
        let raw = get(key)?;
        let parts: Vec<usize> = raw
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| corrupt(&format!("`{key}` is not a comma triple")))?;
        parts
            .try_into()
            .map_err(|_| corrupt(&format!("`{key}` needs exactly three values")))
    };

    let bin_config = BinConfig {
        l1: num("l1")?,
        l2: num("l2")?,
        max_len_cap: num("max_len_cap")?,
        heads: triple("heads")?,
        pad_len: triple("pad_len")?,
        single_bin: get("single_bin")? == "true",
    };
    bin_config.validate()?;
    let model = ModelConfig::new(
        num("d_model")?,
        num("n_layers")?,
        num("d_ff")?,
        num("vocab_size")?,
        bin_config,
    )?;
    Ok(CheckpointMeta {
        vocab_path: get("vocab")?.clone(),
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (ModelConfig, ModelParams<f32>, CheckpointMeta) {
        let bins = BinConfig::new(4, 8, 16).unwrap();
        let cfg = ModelConfig::new(8, 2, 16, 20, bins).unwrap();
        let params = ModelParams::<f32>::init(&cfg, 3).unwrap();
        let meta = CheckpointMeta {
            vocab_path: "vocab.txt".into(),
            model: cfg.clone(),
        };
        (cfg, params, meta)
    }

    #[test]
    fn round_trip_is_bit_exact_in_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (_cfg, params, meta) = tiny();
        save_checkpoint(&path, &params, &meta).unwrap();
        let (loaded, loaded_meta) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(loaded_meta, meta);
        for ((name_a, a), (name_b, b)) in params.named().iter().zip(loaded.named().iter()) {
            assert_eq!(name_a, name_b);
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{name_a}");
            }
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        // f64 params lose precision at the f32 payload, but a second pass
        // through the container is exactly idempotent
        let dir = tempfile::tempdir().unwrap();
        let (_cfg, params, meta) = tiny();
        let params64: ModelParams<f64> = params.cast();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&p1, &params64, &meta).unwrap();
        let (loaded, _) = load_checkpoint::<f64>(&p1).unwrap();
        save_checkpoint(&p2, &loaded, &meta).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (_cfg, params, meta) = tiny();
        save_checkpoint(&path, &params, &meta).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'!';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (_cfg, params, meta) = tiny();
        save_checkpoint(&path, &params, &meta).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (_cfg, params, meta) = tiny();
        save_checkpoint(&path, &params, &meta).unwrap();
        // claim a different vocabulary size in the header metadata
        let bytes = fs::read(&path).unwrap();
        let split = bytes.windows(2).position(|w| w == b"\n\n").unwrap();
        let header = std::str::from_utf8(&bytes[..split])
            .unwrap()
            .replace("vocab_size = 20", "vocab_size = 21");
        let mut patched = header.into_bytes();
        patched.extend_from_slice(&bytes[split..]);
        fs::write(&path, &patched).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[20, 8]") && msg.contains("[21, 8]"), "{msg}");
    }
}
