use std::path::Path;

use sha2::{Digest, Sha256};

use super::data::StreamCursor;
use super::optim::AdamState;
use super::DivergenceMonitor;
use crate::codec::{put_f64s, put_u32, put_u64, ByteCursor};
use crate::model::Blt;
use crate::rng::RngState;
use crate::tensor::{Mat, ParamKind, ParamStore};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"BLTCKPT\0";
const FORMAT_VERSION: u32 = 1;

/// Complete training state: resuming from it reproduces the uninterrupted run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub step: u64,
    pub params: ParamStore,
    pub adam: AdamState,
    pub cursor: StreamCursor,
    pub monitor: DivergenceMonitor,
    pub skipped_steps: u64,
    pub bytes_seen: u64,
}

fn kind_code(k: ParamKind) -> u8 {
    match k {
        ParamKind::Matrix => 0,
        ParamKind::Gain => 1,
        ParamKind::Embedding => 2,
    }
}

fn kind_from(c: u8) -> Result<ParamKind> {
    Ok(match c {
        0 => ParamKind::Matrix,
        1 => ParamKind::Gain,
        2 => ParamKind::Embedding,
        _ => return Err(Error::Format(format!("unknown parameter kind {c}"))),
    })
}

fn put_rng(out: &mut Vec<u8>, s: &RngState) {
    out.extend_from_slice(&s.seed);
    put_u64(out, s.stream);
    out.extend_from_slice(&s.word_pos.to_le_bytes());
}

fn read_rng(cur: &mut ByteCursor<'_>) -> Result<RngState> {
    Ok(RngState {
        seed: cur.take(32)?.try_into().unwrap(),
        stream: cur.u64()?,
        word_pos: cur.u128()?,
    })
}

fn put_opt_f64(out: &mut Vec<u8>, v: Option<f64>) {
    out.push(v.is_some() as u8);
    out.extend_from_slice(&v.unwrap_or(0.0).to_le_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        out.extend_from_slice(&self.config_hash);
        put_u64(&mut out, self.step);
        put_u64(&mut out, self.skipped_steps);
        put_u64(&mut out, self.bytes_seen);
        put_u64(&mut out, self.cursor.epoch);
        put_rng(&mut out, &self.cursor.epoch_rng);
        put_u64(&mut out, self.cursor.pos as u64);
        put_u64(&mut out, self.cursor.patch_offset as u64);
        put_opt_f64(&mut out, self.monitor.initial);
        put_u64(&mut out, self.monitor.streak as u64);
        put_u64(&mut out, self.adam.t);
        put_u32(&mut out, self.params.len() as u32);
        for id in self.params.ids() {
            let name = self.params.name(id).as_bytes();
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name);
            out.push(kind_code(self.params.kind(id)));
            let m = self.params.value(id);
            put_u32(&mut out, m.rows as u32);
            put_u32(&mut out, m.cols as u32);
            put_f64s(&mut out, &m.data);
            put_f64s(&mut out, &self.adam.m[id.0]);
            put_f64s(&mut out, &self.adam.v[id.0]);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 32 {
            return Err(Error::Format("checkpoint too short".into()));
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }
        let mut cur = ByteCursor::new(body);
        if cur.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config_hash: [u8; 32] = cur.take(32)?.try_into().unwrap();
        let step = cur.u64()?;
        let skipped_steps = cur.u64()?;
        let bytes_seen = cur.u64()?;
        let cursor = StreamCursor {
            epoch: cur.u64()?,
            epoch_rng: read_rng(&mut cur)?,
            pos: cur.u64()? as usize,
            patch_offset: cur.u64()? as usize,
        };
        let has_initial = cur.u8()? != 0;
        let initial = cur.f64()?;
        let streak = cur.u64()? as usize;
        let t = cur.u64()?;
        let n = cur.u32()? as usize;
        let mut params = ParamStore::new();
        let mut adam = AdamState {
            t,
            m: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let kind = kind_from(cur.u8()?)?;
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let len = rows.checked_mul(cols).ok_or_else(|| Error::Format("parameter shape overflow".into()))?;
            let data = cur.f64s(len)?;
            if params.find(&name).is_some() {
                return Err(Error::Format(format!("duplicate parameter {name}")));
            }
            params.add(name, Mat::from_vec(rows, cols, data), kind);
            adam.m.push(cur.f64s(len)?);
            adam.v.push(cur.f64s(len)?);
        }
        cur.finish()?;
        Ok(Checkpoint {
            config_hash,
            step,
            params,
            adam,
            cursor,
            monitor: DivergenceMonitor {
                initial: has_initial.then_some(initial),
                streak,
            },
            skipped_steps,
            bytes_seen,
        })
    }

    /// Write atomically: a temporary sibling file is renamed over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Copy the stored weights into `model`, which must have the same layout.
    pub fn restore_params(&self, model: &mut Blt) -> Result<()> {
        let store = &mut model.params.store;
        if store.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for id in self.params.ids() {
            let (src, dst) = (self.params.value(id), store.value(id));
            if self.params.name(id) != store.name(id) || (src.rows, src.cols) != (dst.rows, dst.cols) {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {} {}x{} does not match model tensor {} {}x{}",
                    self.params.name(id),
                    src.rows,
                    src.cols,
                    store.name(id),
                    dst.rows,
                    dst.cols
                )));
            }
        }
        for id in self.params.ids() {
            *store.value_mut(id) = self.params.value(id).clone();
        }
        Ok(())
    }
}
