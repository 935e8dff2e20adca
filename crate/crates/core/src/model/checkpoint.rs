//! Binary checkpoint format.
//!
//! ```text
//! magic   8 bytes  "O1TRCKPT"
//! version u32 LE
//! count   u32 LE   number of sections
//! section tag (4 ASCII bytes), payload length (u64 LE), payload
//! ```
//!
//! Sections, in order: `CONF` (feature_dim, vocab, hidden, embed as u64),
//! `STEP` (u64), `PARM` (f64 × n), `ADAM` (u64 step, f64 × n first moments,
//! f64 × n second moments), `FPRT` (opaque config fingerprint bytes).
//! All numbers are little-endian.

use std::path::Path;

use super::{AdamState, ModelConfig, ModelParams};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"O1TRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub step: u64,
    pub optimizer: AdamState,
    pub fingerprint: Vec<u8>,
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        let n = params.param_count();
        Self {
            params,
            step: 0,
            optimizer: AdamState::new(n),
            fingerprint: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&5u32.to_le_bytes());

        let c = self.params.config();
        let conf: Vec<u8> = [c.feature_dim, c.vocab, c.hidden, c.embed]
            .iter()
            .flat_map(|&v| (v as u64).to_le_bytes())
            .collect();
        section(&mut out, b"CONF", &conf);
        section(&mut out, b"STEP", &self.step.to_le_bytes());
        section(&mut out, b"PARM", &floats(self.params.flat()));
        let mut adam = self.optimizer.step.to_le_bytes().to_vec();
        adam.extend(floats(&self.optimizer.m));
        adam.extend(floats(&self.optimizer.v));
        section(&mut out, b"ADAM", &adam);
        section(&mut out, b"FPRT", &self.fingerprint);
        out
    }

    /// Parses bytes produced by [`Checkpoint::to_bytes`]; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, at: 0, path };
        let magic = r.take(8, "magic header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.error(0, "bad magic header, not a checkpoint"));
        }
        let version = r.u32("format version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                what: "checkpoint format",
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let count = r.u32("section count")?;
        if count != 5 {
            return Err(r.error(r.at - 4, &format!("expected 5 sections, found {count}")));
        }

        let conf = r.section(b"CONF")?;
        if conf.len() != 32 {
            return Err(r.error(r.at, "CONF section must hold four u64 values"));
        }
        let dim = |i: usize| u64::from_le_bytes(conf[i * 8..i * 8 + 8].try_into().expect("8 bytes")) as usize;
        let config = ModelConfig {
            feature_dim: dim(0),
            vocab: dim(1),
            hidden: dim(2),
            embed: dim(3),
        };
        let n = config.param_count();

        let step_bytes = r.section(b"STEP")?;
        let step = u64::from_le_bytes(
            step_bytes
                .try_into()
                .map_err(|_| r.error(r.at, "STEP section must hold one u64"))?,
        );

        let start = r.at;
        let parm = r.section(b"PARM")?;
        if parm.len() != n * 8 {
            return Err(r.error(
                start,
                &format!("PARM holds {} bytes, model needs {}", parm.len(), n * 8),
            ));
        }
        let params = ModelParams::from_flat(config, read_floats(parm))
            .map_err(|e| r.error(start, &e.to_string()))?;

        let start = r.at;
        let adam = r.section(b"ADAM")?;
        if adam.len() != 8 + 16 * n {
            return Err(r.error(start, "ADAM section length does not match the parameter count"));
        }
        let optimizer = AdamState {
            step: u64::from_le_bytes(adam[..8].try_into().expect("8 bytes")),
            m: read_floats(&adam[8..8 + 8 * n]),
            v: read_floats(&adam[8 + 8 * n..]),
        };

        let fingerprint = r.section(b"FPRT")?.to_vec();
        if r.at != bytes.len() {
            return Err(r.error(r.at, "trailing bytes after the last section"));
        }
        Ok(Self {
            params,
            step,
            optimizer,
            fingerprint,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn floats(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_floats(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn error(&self, offset: usize, message: &str) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            location: format!("byte offset {offset}"),
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.at..end];
                self.at = end;
                Ok(s)
            }
            None => Err(self.error(
                self.at,
                &format!("truncated while reading {what} ({n} bytes needed, {} left)", self.bytes.len() - self.at),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn section(&mut self, tag: &[u8; 4]) -> Result<&'a [u8]> {
        let at = self.at;
        let found = self.take(4, "section tag")?;
        if found != tag {
            return Err(self.error(
                at,
                &format!(
                    "expected section {}, found {}",
                    String::from_utf8_lossy(tag),
                    String::from_utf8_lossy(found)
                ),
            ));
        }
        let len = u64::from_le_bytes(self.take(8, "section length")?.try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| self.error(at, "section length overflows"))?;
        self.take(len, "section payload")
    }
}
