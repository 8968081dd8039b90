//! `FTB1` tensor container.
//!
//! ```text
//! "FTB1"                      4 bytes magic
//! u32 entry count
//! per entry:
//!   u16 name length, UTF-8 name
//!   u32 rank, rank × u32 dims
//!   product(dims) × f32 payload, row-major
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::Tensor;

pub const MAGIC: &[u8; 4] = b"FTB1";
const MAX_RANK: u32 = 3;

/// Named tensors in file order.
pub type FeatureMap = Vec<(String, Tensor)>;

pub fn encode_ftb(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32::try_from(entries.len()).map_err(|_| too_many())?.to_le_bytes());
    for (name, t) in entries {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::Format {
            offset: out.len(),
            message: format!("name `{name}` too long"),
        })?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.dims() {
            let d = u32::try_from(d).map_err(|_| too_many())?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.data() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::Numeric(format!("`{name}`: value {v} does not fit in f32")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

fn too_many() -> Error {
    Error::Format {
        offset: 0,
        message: "count exceeds u32".into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.pos,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            }),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_ftb(bytes: &[u8]) -> Result<FeatureMap> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected FTB1".into(),
        });
    }
    let count = r.u32("entry count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format {
                offset: name_at,
                message: "name is not UTF-8".into(),
            })?
            .to_string();
        let rank_at = r.pos;
        let rank = r.u32("rank")?;
        if rank > MAX_RANK {
            return Err(Error::Format {
                offset: rank_at,
                message: format!("rank {rank} exceeds {MAX_RANK}"),
            });
        }
        let mut dims = Vec::with_capacity(rank as usize);
        let mut total: usize = 1;
        for _ in 0..rank {
            let at = r.pos;
            let d = r.u32("dimension")? as usize;
            if d == 0 {
                return Err(Error::Format {
                    offset: at,
                    message: "zero dimension".into(),
                });
            }
            total = total
                .checked_mul(d)
                .filter(|t| t.checked_mul(4).is_some())
                .ok_or_else(|| Error::Format {
                    offset: at,
                    message: "dimension product overflows".into(),
                })?;
            dims.push(d);
        }
        let payload_at = r.pos;
        let payload = r.take(total * 4, "payload")?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Format {
            offset: payload_at,
            message: format!("entry `{name}`: {e}"),
        })?;
        entries.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            message: "trailing bytes after last entry".into(),
        });
    }
    Ok(entries)
}

pub fn save_features(path: impl AsRef<Path>, entries: &[(String, Tensor)]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ftb(entries)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ftb(&bytes)
}
