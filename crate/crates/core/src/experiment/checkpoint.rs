//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | field        | bytes                         |
//! |--------------|-------------------------------|
//! | magic        | `IMPCKPT\0`                   |
//! | version      | u32 (= 1)                     |
//! | flat length  | u64                           |
//! | model id     | u16 length + UTF-8 bytes      |
//! | round        | u32                           |
//! | seeds        | u64 init, u64 data, u64 reinit|
//! | kind         | u8 (0 init, 1 trained round)  |
//! | mask         | ⌈len/8⌉ bytes, LSB first      |
//! | weights      | len × f32                     |
//! | checksum     | u64: first 8 bytes of SHA-256 over everything above |

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imp::Seeds;
use crate::pruning::Mask;

const MAGIC: &[u8; 8] = b"IMPCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Init,
    Trained,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_id: String,
    pub round: usize,
    pub seeds: Seeds,
    pub kind: CheckpointKind,
    pub mask: Mask,
    pub weights: Vec<f32>,
}

fn checksum(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = self.weights.len();
        if self.mask.len() != n {
            return Err(Error::dim("checkpoint", &[n], &[self.mask.len()]));
        }
        let id = self.model_id.as_bytes();
        let mut out = Vec::with_capacity(64 + id.len() + n.div_ceil(8) + 4 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(self.round as u32).to_le_bytes());
        for s in [self.seeds.init, self.seeds.data, self.seeds.reinit] {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.push(match self.kind {
            CheckpointKind::Init => 0,
            CheckpointKind::Trained => 1,
        });
        let mut packed = vec![0u8; n.div_ceil(8)];
        for (i, &b) in self.mask.bits().iter().enumerate() {
            if b {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&packed);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |m: &str| Error::Corrupt {
            path: path.to_path_buf(),
            message: m.to_string(),
        };
        if bytes.len() < MAGIC.len() + 12 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic or truncated header"));
        }
        let mut r = Reader { bytes, pos: 8 };
        let version = r.u32().ok_or_else(|| corrupt("truncated header"))?;
        if version != FORMAT_VERSION {
            return Err(corrupt(&format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let n = r.u64().ok_or_else(|| corrupt("truncated header"))? as usize;
        let id_len = r.u16().ok_or_else(|| corrupt("truncated header"))? as usize;
        let id = r.take(id_len).ok_or_else(|| corrupt("truncated model id"))?;
        let model_id = String::from_utf8(id.to_vec()).map_err(|_| corrupt("model id is not UTF-8"))?;
        let round = r.u32().ok_or_else(|| corrupt("truncated header"))? as usize;
        let (init, data, reinit) = match (r.u64(), r.u64(), r.u64()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(corrupt("truncated seeds")),
        };
        let kind = match r.take(1).ok_or_else(|| corrupt("truncated header"))?[0] {
            0 => CheckpointKind::Init,
            1 => CheckpointKind::Trained,
            k => return Err(corrupt(&format!("unknown checkpoint kind {k}"))),
        };
        let expected = r.pos + n.div_ceil(8) + 4 * n + 8;
        if bytes.len() != expected {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                message: format!("expected {expected} bytes, found {}", bytes.len()),
            });
        }
        let body = &bytes[..expected - 8];
        let stored = u64::from_le_bytes(bytes[expected - 8..].try_into().expect("8 bytes"));
        if checksum(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let packed = r.take(n.div_ceil(8)).expect("length checked");
        let bits = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
        let weights = r
            .take(4 * n)
            .expect("length checked")
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Checkpoint {
            model_id,
            round,
            seeds: Seeds { init, data, reinit },
            kind,
            mask: Mask::from_bits(bits, round),
            weights,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}
