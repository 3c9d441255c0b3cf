//! Versioned binary checkpoint format.
//!
//! Layout: magic `RTCK`, a little-endian u32 version, a length-prefixed
//! JSON header (dims, vocabulary in id order, classifier presence), then
//! every parameter as little-endian f64 bits in the canonical slot order.
//! Round trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderDims, EncoderParams, Vocabulary};
use crate::error::{Error, Result};
use crate::trainer::ClassifierParams;

const MAGIC: &[u8; 4] = b"RTCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dims: EncoderDims,
    vocab: Vec<String>,
    has_classifier: bool,
}

/// A deserialized checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub encoder: EncoderParams,
    pub classifier: Option<ClassifierParams>,
    pub vocab: Vocabulary,
}

/// Writes encoder (and optionally classifier) parameters plus the
/// vocabulary.
pub fn save_checkpoint(
    path: &Path,
    encoder: &EncoderParams,
    classifier: Option<&ClassifierParams>,
    vocab: &Vocabulary,
) -> Result<()> {
    let header = Header {
        dims: encoder.dims,
        vocab: vocab.tokens().to_vec(),
        has_classifier: classifier.is_some(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Validation(format!("serialize checkpoint header: {e}")))?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for slot in encoder.slots() {
        out.write_all(&slot.to_le_bytes())?;
    }
    if let Some(clf) = classifier {
        for slot in clf.slots() {
            out.write_all(&slot.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_f64(reader: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut reader = std::io::BufReader::new(std::fs::File::open(path)?);

    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Validation(format!(
            "not a checkpoint file: bad magic {magic:?}"
        )));
    }
    let mut version = [0u8; 4];
    reader.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(Error::Validation(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let mut len = [0u8; 8];
    reader.read_exact(&mut len)?;
    let header_len = u64::from_le_bytes(len) as usize;
    let mut header_bytes = vec![0u8; header_len];
    reader.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Validation(format!("parse checkpoint header: {e}")))?;

    let vocab = Vocabulary::from_id_ordered(header.vocab)?;
    if vocab.size() != header.dims.vocab_size {
        return Err(Error::Validation(format!(
            "checkpoint vocabulary size {} does not match dims {}",
            vocab.size(),
            header.dims.vocab_size
        )));
    }

    let mut encoder = EncoderParams::init(header.dims, 0);
    for slot in encoder.slots_mut() {
        *slot = read_f64(&mut reader)?;
    }
    let classifier = if header.has_classifier {
        let mut clf = ClassifierParams::init(header.dims.dim, 0);
        for slot in clf.slots_mut() {
            *slot = read_f64(&mut reader)?;
        }
        Some(clf)
    } else {
        None
    };

    // Trailing data means a corrupt or mismatched file.
    let mut rest = [0u8; 1];
    if reader.read(&mut rest)? != 0 {
        return Err(Error::Validation("checkpoint has trailing bytes".into()));
    }

    Ok(Checkpoint {
        encoder,
        classifier,
        vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::build_vocabulary;
    use crate::preprocess::{Passage, ProcessedUser, Sentence};

    fn fixture() -> (EncoderParams, ClassifierParams, Vocabulary) {
        let corpus = vec![ProcessedUser {
            user_id: "u".into(),
            passages: vec![Passage {
                origin_post_id: "p".into(),
                sentences: vec![Sentence::new(
                    ["hollow", "night", "静か", "rain"].map(String::from).to_vec(),
                )],
            }],
        }];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let dims = EncoderDims {
            vocab_size: vocab.size(),
            dim: 8,
            layers: 2,
            max_len: 16,
        };
        (EncoderParams::init(dims, 11), ClassifierParams::init(8, 12), vocab)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (encoder, clf, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rtck");
        save_checkpoint(&path, &encoder, Some(&clf), &vocab).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.encoder, encoder);
        assert_eq!(loaded.classifier.as_ref(), Some(&clf));
        assert_eq!(loaded.vocab, vocab);

        // Bytes, not just values: a second save of the loaded state must be
        // identical.
        let path2 = dir.path().join("model2.rtck");
        save_checkpoint(&path2, &loaded.encoder, loaded.classifier.as_ref(), &loaded.vocab)
            .unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn encoder_only_checkpoint() {
        let (encoder, _, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.rtck");
        save_checkpoint(&path, &encoder, None, &vocab).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.encoder, encoder);
        assert!(loaded.classifier.is_none());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.rtck");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
