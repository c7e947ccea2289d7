//! Binary model checkpoints.
//!
//! Layout, all little-endian:
//!
//! | field            | type                          |
//! |------------------|-------------------------------|
//! | magic            | `b"WDMK"`                     |
//! | version          | u16                           |
//! | steps            | u32                           |
//! | beta_1, beta_T   | f64, f64                      |
//! | input_dim        | u32                           |
//! | hidden layers    | u32 count, then u32 per width |
//! | emb_dim          | u32                           |
//! | parameter count  | u64                           |
//! | parameters       | f32 each                      |
//! | checksum         | u64                           |
//!
//! The checksum is the first eight bytes (little-endian) of the SHA-256
//! digest of everything before it.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::denoiser::{Architecture, Denoiser};
use crate::error::{Result, WdmError};
use crate::schedule::NoiseSchedule;

pub const MAGIC: &[u8; 4] = b"WDMK";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Denoiser,
    pub steps: usize,
    pub beta_1: f64,
    pub beta_t: f64,
}

impl Checkpoint {
    pub fn new(model: &Denoiser, sched: &NoiseSchedule) -> Self {
        Checkpoint {
            model: model.clone(),
            steps: sched.steps(),
            beta_1: sched.beta(1),
            beta_t: sched.beta(sched.steps()),
        }
    }

    /// The linear schedule described by the stored summary.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_1, self.beta_t)
    }
}

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| WdmError::Parameter(format!("{what} {v} does not fit in 32 bits")))
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let arch = ckpt.model.arch();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(ckpt.steps, "step count")?.to_le_bytes());
    out.extend_from_slice(&ckpt.beta_1.to_le_bytes());
    out.extend_from_slice(&ckpt.beta_t.to_le_bytes());
    out.extend_from_slice(&to_u32(arch.input_dim, "input dim")?.to_le_bytes());
    out.extend_from_slice(&to_u32(arch.hidden.len(), "layer count")?.to_le_bytes());
    for &w in &arch.hidden {
        out.extend_from_slice(&to_u32(w, "width")?.to_le_bytes());
    }
    out.extend_from_slice(&to_u32(arch.emb_dim, "embedding dim")?.to_le_bytes());
    let flat = ckpt.model.flat_params();
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            WdmError::Corrupt(format!(
                "truncated checkpoint: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(WdmError::Corrupt("bad magic, not a WDMK checkpoint".into()));
    }
    let version = u16::from_le_bytes(r.array()?);
    if version != FORMAT_VERSION {
        return Err(WdmError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 8 {
        return Err(WdmError::Corrupt("truncated checkpoint".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if checksum(body) != stored {
        return Err(WdmError::Corrupt("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 6 };
    let steps = r.u32()?;
    let beta_1 = r.f64()?;
    let beta_t = r.f64()?;
    let input_dim = r.u32()?;
    let layers = r.u32()?;
    if layers > (body.len() - r.pos) / 4 {
        return Err(WdmError::Corrupt(format!("implausible layer count {layers}")));
    }
    let hidden = (0..layers).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let emb_dim = r.u32()?;
    let count = u64::from_le_bytes(r.array()?);
    let arch = Architecture::new(input_dim, hidden, emb_dim);
    arch.validate()
        .map_err(|e| WdmError::Corrupt(format!("invalid architecture: {e}")))?;
    if count != arch.param_count() as u64 {
        return Err(WdmError::Corrupt(format!(
            "{count} parameters stored, architecture needs {}",
            arch.param_count()
        )));
    }
    let raw = r.take(count as usize * 4)?;
    if r.pos != body.len() {
        return Err(WdmError::Corrupt(format!(
            "{} trailing bytes before the checksum",
            body.len() - r.pos
        )));
    }
    let flat: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Checkpoint {
        model: Denoiser::from_flat(arch, &flat)?,
        steps,
        beta_1,
        beta_t,
    })
}

pub fn save_checkpoint(model: &Denoiser, sched: &NoiseSchedule, path: &Path) -> Result<()> {
    let bytes = encode(&Checkpoint::new(model, sched))?;
    std::fs::write(path, bytes).map_err(|e| WdmError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| WdmError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
