//! Checkpoint file: 8-byte magic, little-endian `u64` header length, a JSON
//! header, then every parameter as a little-endian `f64` in layout order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::types::GlossVocabulary;

const MAGIC: &[u8; 8] = b"XAUGCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: ModelConfig,
    pub vocabulary: GlossVocabulary,
    pub seed: u64,
    /// `(name, rows, cols)` per tensor.
    pub shapes: Vec<(String, usize, usize)>,
    /// Free-form run metadata (training config, epoch).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, vocabulary: GlossVocabulary, seed: u64, meta: serde_json::Value) -> Self {
        let shapes = params
            .config
            .layout()
            .into_iter()
            .map(|(n, r, c)| (n.to_string(), r, c))
            .collect();
        Self {
            header: CheckpointHeader {
                version: VERSION,
                model: params.config.clone(),
                vocabulary,
                seed,
                shapes,
                meta,
            },
            params,
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for t in &self.params.tensors {
            for x in t.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        if header.version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", header.version)));
        }
        header.model.validate()?;
        let layout = header.model.layout();
        let expected: Vec<(String, usize, usize)> =
            layout.iter().map(|&(n, a, b)| (n.to_string(), a, b)).collect();
        if expected != header.shapes {
            return Err(Error::Format("tensor shapes disagree with the model config".into()));
        }
        if header.vocabulary.len() != header.model.num_glosses {
            return Err(Error::Format("vocabulary size disagrees with the model config".into()));
        }
        let mut tensors = Vec::with_capacity(layout.len());
        let mut buf = [0u8; 8];
        for (_, rows, cols) in layout {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            tensors.push(Matrix::from_vec(rows, cols, data));
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Format("trailing bytes after parameter payload".into()));
        }
        let params = ModelParams {
            config: header.model.clone(),
            tensors,
        };
        Ok(Self { header, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            input_dim: 3,
            conv_dim: 4,
            rnn_hidden: 2,
            num_glosses: 2,
        };
        let mut params = ModelParams::init(cfg, 7).unwrap();
        // values that do not survive a decimal round trip
        params.tensors[0][(0, 0)] = 0.1 + 0.2;
        params.tensors[1][(0, 1)] = f64::MIN_POSITIVE / 3.0;
        let vocab = GlossVocabulary::new(vec!["A".into(), "B".into()]).unwrap();
        Checkpoint::new(params, vocab, 7, serde_json::json!({"epoch": 3}))
    }

    #[test]
    fn bit_exact_roundtrip() {
        let ck = sample();
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.tensors.iter().zip(&ck.params.tensors) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'Y';
        assert!(matches!(Checkpoint::read_from(bad.as_slice()), Err(Error::Format(_))));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(Checkpoint::read_from(truncated).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(Checkpoint::read_from(longer.as_slice()), Err(Error::Format(_))));
    }
}
