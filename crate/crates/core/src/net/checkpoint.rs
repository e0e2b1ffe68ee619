//! Versioned binary checkpoint: a JSON header (config + vocabulary) followed
//! by a parameter manifest of `(name, shape, checksum, little-endian f64
//! data)` entries in canonical walk order. Saves are atomic (temp file +
//! rename); loads verify magic, version, shapes, and checksums and never
//! yield a partial model.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{EncoderConfig, GuardrailModel};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::util::fnv1a64;

const MAGIC: &[u8; 4] = b"GGRD";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    vocab: Vec<String>,
}

/// Writes the model and its vocabulary to one file.
pub fn save(model: &GuardrailModel, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    model.check_finite()?;
    if vocab.size() != model.config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary size {} does not match model vocab_size {}",
            vocab.size(),
            model.config.vocab_size
        )));
    }
    let path = path.as_ref();
    let tmp = path.with_extension("ckpt.tmp");
    {
        let file = File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let header = serde_json::to_vec(&Header {
            config: model.config,
            vocab: vocab.tokens().to_vec(),
        })?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;

        let mut count = 0u64;
        model.for_each_param(|_, _, _| count += 1);
        w.write_all(&count.to_le_bytes())?;

        let mut io_err: Option<std::io::Error> = None;
        model.for_each_param(|name, shape, data| {
            if io_err.is_some() {
                return;
            }
            let result = write_param(&mut w, name, shape, data);
            if let Err(e) = result {
                io_err = Some(e);
            }
        });
        if let Some(e) = io_err {
            return Err(e.into());
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_param(
    w: &mut impl Write,
    name: &str,
    shape: &[usize],
    data: &[f64],
) -> std::io::Result<()> {
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[shape.len() as u8])?;
    for &dim in shape {
        w.write_all(&(dim as u64).to_le_bytes())?;
    }
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for &v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&fnv1a64(&bytes).to_le_bytes())?;
    w.write_all(&bytes)?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated(what.to_string())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

/// Loads a checkpoint written by [`save`]. Round trip is bit-exact on every
/// parameter and on the config.
pub fn load(path: impl AsRef<Path>) -> Result<(GuardrailModel, Vocabulary)> {
    let file = File::open(path.as_ref())?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut version_bytes = [0u8; 4];
    read_exact(&mut r, &mut version_bytes, "version")?;
    let version = u32::from_le_bytes(version_bytes);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }

    let header_len = read_u64(&mut r, "header length")? as usize;
    let mut header_bytes = vec![0u8; header_len];
    read_exact(&mut r, &mut header_bytes, "header")?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    let vocab = Vocabulary::from_tokens(header.vocab)?;
    if vocab.size() != header.config.vocab_size {
        return Err(Error::Config(format!(
            "header vocabulary size {} does not match config vocab_size {}",
            vocab.size(),
            header.config.vocab_size
        )));
    }

    let mut model = GuardrailModel::zeros(header.config)?;
    let expected_params = {
        let mut n = 0u64;
        model.for_each_param(|_, _, _| n += 1);
        n
    };
    let stored_params = read_u64(&mut r, "parameter count")?;
    if stored_params != expected_params {
        return Err(Error::Config(format!(
            "checkpoint has {stored_params} parameters, model expects {expected_params}"
        )));
    }

    // Expected names and shapes in canonical order.
    let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
    model.for_each_param(|name, shape, _| expected.push((name.to_string(), shape.to_vec())));

    let mut loaded: Vec<Vec<f64>> = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let mut len_bytes = [0u8; 2];
        read_exact(&mut r, &mut len_bytes, "parameter name length")?;
        let name_len = u16::from_le_bytes(len_bytes) as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, "parameter name")?;
        let stored_name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Truncated("parameter name not utf-8".to_string()))?;
        if &stored_name != name {
            return Err(Error::Config(format!(
                "unexpected parameter `{stored_name}` (expected `{name}`)"
            )));
        }
        let mut ndim = [0u8; 1];
        read_exact(&mut r, &mut ndim, "parameter rank")?;
        let mut stored_shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            stored_shape.push(read_u64(&mut r, "parameter shape")? as usize);
        }
        if &stored_shape != shape {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: shape.clone(),
                found: stored_shape,
            });
        }
        let checksum = read_u64(&mut r, "parameter checksum")?;
        let count: usize = shape.iter().product();
        let mut bytes = vec![0u8; count * 8];
        read_exact(&mut r, &mut bytes, "parameter data")?;
        if fnv1a64(&bytes) != checksum {
            return Err(Error::ChecksumMismatch(name.clone()));
        }
        let mut data = Vec::with_capacity(count);
        for chunk in bytes.chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        loaded.push(data);
    }

    let mut cursor = 0usize;
    model.for_each_param_mut(|_, data| {
        data.copy_from_slice(&loaded[cursor]);
        cursor += 1;
    });
    Ok((model, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PromptRecord, SafetyLabel};

    fn fixture() -> (GuardrailModel, Vocabulary) {
        let records: Vec<PromptRecord> = ["alpha beta gamma", "delta beta epsilon zeta"]
            .iter()
            .map(|t| PromptRecord {
                id: "x".into(),
                text: t.to_string(),
                label: SafetyLabel::Safe,
                explanation_words: None,
                category: None,
            })
            .collect();
        let vocab = Vocabulary::from_records(&records, 1);
        let config = EncoderConfig {
            vocab_size: vocab.size(),
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 12,
            max_len: 6,
            dropout: 0.0,
        };
        (GuardrailModel::new(config, 11).unwrap(), vocab)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (model, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&model, &vocab, &path).unwrap();
        let (loaded, loaded_vocab) = load(&path).unwrap();
        assert_eq!(model, loaded);
        assert_eq!(vocab, loaded_vocab);
        assert_eq!(model.count_params(), loaded.count_params());
    }

    #[test]
    fn truncated_file_is_a_truncation_error() {
        let (model, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&model, &vocab, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = path.with_extension("cut");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load(&cut), Err(Error::Truncated(_))));
    }

    #[test]
    fn corrupted_data_is_a_checksum_error() {
        let (model, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&model, &vocab, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 4] ^= 0xff; // flip a data byte near the tail
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::ChecksumMismatch(_))));
    }

    #[test]
    fn wrong_version_is_a_version_error() {
        let (model, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&model, &vocab, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"NOPEnope").unwrap();
        assert!(matches!(load(&path), Err(Error::BadMagic)));
    }

    #[test]
    fn edited_d_model_in_header_is_a_shape_error() {
        let (model, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&model, &vocab, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len =
            u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_str = String::from_utf8(bytes[16..16 + header_len].to_vec()).unwrap();
        let edited = header_str.replace("\"d_model\":8", "\"d_model\":4");
        assert_ne!(header_str, edited);
        let mut out = Vec::new();
        out.extend_from_slice(&bytes[..8]);
        out.extend_from_slice(&(edited.len() as u64).to_le_bytes());
        out.extend_from_slice(edited.as_bytes());
        out.extend_from_slice(&bytes[16 + header_len..]);
        std::fs::write(&path, &out).unwrap();
        assert!(matches!(load(&path), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_params_refuse_to_save() {
        let (mut model, vocab) = fixture();
        model.pool_b = f64::INFINITY;
        let dir = tempfile::tempdir().unwrap();
        assert!(save(&model, &vocab, dir.path().join("m.ckpt")).is_err());
    }
}
