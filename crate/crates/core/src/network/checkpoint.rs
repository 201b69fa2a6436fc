//! `FADW` parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FADW" | version: u32 = 1
//! config_len: u32 | config text (UTF-8, `key = value` lines)
//! record_count: u32
//! record_count x { name_len: u32 | name | rank: u32 | rank x extent: u64 | values: f64 }
//! ```
//!
//! Record names carry a `netc.` or `nets.` prefix selecting the network.

use std::io::{Read, Write};

use super::{NetKind, Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FADW";
const VERSION: u32 = 1;

/// Networks restored from a checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub correlation: Network,
    pub refinement: Option<Network>,
}

pub fn write_checkpoint<W: Write>(
    mut out: W,
    correlation: &Network,
    refinement: Option<&Network>,
) -> Result<()> {
    let cfg_text = correlation.config().to_text();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(cfg_text.len() as u32).to_le_bytes())?;
    out.write_all(cfg_text.as_bytes())?;

    let nets: Vec<&Network> = std::iter::once(correlation).chain(refinement).collect();
    let count: usize = nets.iter().map(|n| n.params().len()).sum();
    out.write_all(&(count as u32).to_le_bytes())?;
    for net in nets {
        for (name, tensor) in net.named_params() {
            let full = format!("{}.{name}", net.kind().prefix());
            out.write_all(&(full.len() as u32).to_le_bytes())?;
            out.write_all(full.as_bytes())?;
            out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
            for &e in tensor.shape() {
                out.write_all(&(e as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(tensor.len() * 8);
            for v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.pos, format!("truncated while reading {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "not a FADW checkpoint"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = cur.u32("config length")? as usize;
    let cfg_at = cur.pos;
    let cfg_text = std::str::from_utf8(cur.take(cfg_len, "config")?)
        .map_err(|_| Error::format(cfg_at, "config text is not UTF-8"))?;
    let config: NetworkConfig = cfg_text.parse()?;

    let count = cur.u32("record count")? as usize;
    let mut sections: [Vec<(String, Tensor)>; 2] = [Vec::new(), Vec::new()];
    for _ in 0..count {
        let at = cur.pos;
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::format(at, "record name is not UTF-8"))?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64("extent").map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = cur.take(n.checked_mul(8).ok_or_else(|| Error::format(at, "record too large"))?, &name)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let (slot, local) = if let Some(rest) = name.strip_prefix("netc.") {
            (0, rest)
        } else if let Some(rest) = name.strip_prefix("nets.") {
            (1, rest)
        } else {
            return Err(Error::format(at, format!("record {name:?} has no network prefix")));
        };
        sections[slot].push((local.to_string(), Tensor::new(&shape, values)?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(cur.pos, "trailing bytes after last record"));
    }
    let [c, s] = sections;
    let correlation = Network::from_params(&config, NetKind::Correlation, c)?;
    let refinement = if s.is_empty() {
        None
    } else {
        Some(Network::from_params(&config, NetKind::Refinement, s)?)
    };
    Ok(Checkpoint { config, correlation, refinement })
}
