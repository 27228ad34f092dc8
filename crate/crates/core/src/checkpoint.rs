//! Binary scene container.
//!
//! Layout, little-endian: `"SVRX"`, version `u32`, header length `u32`, JSON
//! header, octpath codes `u64 x N`, levels `u8 x N`, corner indices
//! `u32 x 8N`, densities `f32 x P`, SH coefficients `f32 x N*stride`, and a
//! CRC-32 of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::octree::{OctPath, SceneBounds};
use crate::scene::SparseScene;

pub const MAGIC: &[u8; 4] = b"SVRX";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    voxel_count: usize,
    pool_count: usize,
    sh_degree: usize,
    center: [f64; 3],
    size: f64,
}

pub fn encode(scene: &SparseScene<f32>) -> Vec<u8> {
    let header = Header {
        voxel_count: scene.len(),
        pool_count: scene.pool_len(),
        sh_degree: scene.sh_degree,
        center: scene.bounds.center,
        size: scene.bounds.size,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let n = scene.len();
    let mut out = Vec::with_capacity(16 + json.len() + n * (8 + 1 + 32) + 4 * (scene.pool_len() + scene.sh.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &scene.octpaths {
        out.extend_from_slice(&p.code().to_le_bytes());
    }
    out.extend(scene.octpaths.iter().map(|p| p.level()));
    for idx in &scene.corner_index {
        for i in idx {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    for d in &scene.density {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for s in &scene.sh {
        out.extend_from_slice(&s.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Format("checkpoint is truncated".into())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn array<const W: usize, T>(&mut self, n: usize, f: impl Fn([u8; W]) -> T) -> Result<Vec<T>> {
        let len = n.checked_mul(W).ok_or_else(|| Error::Format("checkpoint counts overflow".into()))?;
        Ok(self.take(len)?.chunks_exact(W).map(|c| f(c.try_into().expect("chunk width"))).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<SparseScene<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a scene checkpoint (bad magic)".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    if bytes.len() < 16 {
        return Err(Error::Format("checkpoint is truncated".into()));
    }
    let body = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body..].try_into().expect("4 bytes"));
    if crc32fast::hash(&bytes[..body]) != stored {
        return Err(Error::Format("checkpoint checksum mismatch".into()));
    }
    r.bytes = &bytes[..body];
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    let n = header.voxel_count;
    let codes = r.array(n, u64::from_le_bytes)?;
    let levels = r.array(n, |[b]: [u8; 1]| b)?;
    let flat = r.array(8 * n, u32::from_le_bytes)?;
    let density = r.array(header.pool_count, f32::from_le_bytes)?;
    let stride = (header.sh_degree + 1) * (header.sh_degree + 1) * 3;
    let sh = r.array(n * stride, f32::from_le_bytes)?;
    if r.pos != body {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", body - r.pos)));
    }
    let bounds = SceneBounds::new(header.center, header.size).map_err(|e| Error::Format(e.to_string()))?;
    let mut scene = SparseScene::empty(bounds, header.sh_degree).map_err(|e| Error::Format(e.to_string()))?;
    scene.octpaths = codes
        .into_iter()
        .zip(levels)
        .map(|(c, l)| OctPath::new(c, l))
        .collect::<Result<_>>()
        .map_err(|e| Error::Format(e.to_string()))?;
    scene.corner_index = flat.chunks_exact(8).map(|c| c.try_into().expect("8 indices")).collect();
    scene.density = density;
    scene.sh = sh;
    scene.validate().map_err(|e| Error::Format(format!("inconsistent checkpoint: {e}")))?;
    Ok(scene)
}

pub fn save_checkpoint(scene: &SparseScene<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode(scene)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SparseScene<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
