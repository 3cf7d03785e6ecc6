//! Run snapshots: every network plus the worst-case candidates, in one
//! little-endian file made of named sections.
//!
//! Layout: magic `M2CK`, u32 version, env name, variant name, u64 step,
//! u32 section count, then per section a name and a u64-length blob.
//! Strings are a u32 length followed by UTF-8 bytes. Network sections use
//! the [`Mlp`] blob format; the `adversary` section holds u32 N, u32 dim,
//! N*dim candidate coordinates, N frequencies and u64 `t_last`.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::config::Variant;
use crate::error::{Error, Result};
use crate::nn::Mlp;

const MAGIC: &[u8; 4] = b"M2CK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarySnapshot {
    pub omegas: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub t_last: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub env: String,
    pub variant: Variant,
    pub step: u64,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub q1: Mlp,
    pub q1_target: Mlp,
    pub q2: Option<Mlp>,
    pub q2_target: Option<Mlp>,
    /// Absent for omega-blind training.
    pub adversary: Option<AdversarySnapshot>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(&str, Vec<u8>)> = vec![
            ("actor", self.actor.to_bytes()),
            ("actor_target", self.actor_target.to_bytes()),
            ("q1", self.q1.to_bytes()),
        ];
        if let Some(q) = &self.q2 {
            sections.push(("q2", q.to_bytes()));
        }
        sections.push(("q1_target", self.q1_target.to_bytes()));
        if let Some(q) = &self.q2_target {
            sections.push(("q2_target", q.to_bytes()));
        }
        if let Some(a) = &self.adversary {
            sections.push(("adversary", adversary_bytes(a)));
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.write_u32::<LittleEndian>(VERSION).unwrap();
        write_str(&mut buf, &self.env);
        write_str(&mut buf, self.variant.name());
        buf.write_u64::<LittleEndian>(self.step).unwrap();
        buf.write_u32::<LittleEndian>(sections.len() as u32).unwrap();
        for (name, blob) in sections {
            write_str(&mut buf, name);
            buf.write_u64::<LittleEndian>(blob.len() as u64).unwrap();
            buf.extend_from_slice(&blob);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let env = read_str(&mut r)?;
        let variant: Variant = read_str(&mut r)?.parse().map_err(|e: Error| bad(&e.to_string()))?;
        let step = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))?;
        let count = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
        let mut nets: Vec<(String, Mlp)> = Vec::new();
        let mut adversary = None;
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let len = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated section"))? as usize;
            let start = r.position() as usize;
            let blob = bytes
                .get(start..start.saturating_add(len))
                .ok_or_else(|| bad(&format!("section `{name}` truncated")))?;
            r.set_position((start + len) as u64);
            if name == "adversary" {
                adversary = Some(read_adversary(blob)?);
            } else {
                nets.push((name, Mlp::from_bytes(blob)?));
            }
        }
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let mut take = |key: &str| nets.iter().position(|(n, _)| n == key).map(|i| nets.remove(i).1);
        let need = |m: Option<Mlp>, key: &str| m.ok_or_else(|| bad(&format!("missing section `{key}`")));
        let ck = Checkpoint {
            env,
            variant,
            step,
            actor: need(take("actor"), "actor")?,
            actor_target: need(take("actor_target"), "actor_target")?,
            q1: need(take("q1"), "q1")?,
            q1_target: need(take("q1_target"), "q1_target")?,
            q2: take("q2"),
            q2_target: take("q2_target"),
            adversary,
        };
        if let Some((name, _)) = nets.first() {
            return Err(bad(&format!("unknown section `{name}`")));
        }
        if ck.q2.is_some() != ck.q2_target.is_some() {
            return Err(bad("q2 and q2_target must both be present or both absent"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

fn bad(what: &str) -> Error {
    Error::Checkpoint(what.to_string())
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.write_u32::<LittleEndian>(s.len() as u32).unwrap();
    buf.extend_from_slice(s.as_bytes());
}

fn read_str(r: &mut Cursor<&[u8]>) -> Result<String> {
    let n = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated string"))? as usize;
    if n > 1 << 16 {
        return Err(bad("implausible string length"));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|_| bad("truncated string"))?;
    String::from_utf8(b).map_err(|_| bad("string is not UTF-8"))
}

fn adversary_bytes(a: &AdversarySnapshot) -> Vec<u8> {
    let dim = a.omegas.first().map_or(0, Vec::len);
    let mut buf = Vec::new();
    buf.write_u32::<LittleEndian>(a.omegas.len() as u32).unwrap();
    buf.write_u32::<LittleEndian>(dim as u32).unwrap();
    for v in a.omegas.iter().flatten().chain(&a.p) {
        buf.write_f64::<LittleEndian>(*v).unwrap();
    }
    buf.write_u64::<LittleEndian>(a.t_last).unwrap();
    buf
}

fn read_adversary(blob: &[u8]) -> Result<AdversarySnapshot> {
    let mut r = Cursor::new(blob);
    let trunc = |_| bad("adversary section truncated");
    let n = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let dim = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    if n.saturating_mul(dim.saturating_add(1)).saturating_mul(8) > blob.len() {
        return Err(bad("adversary section truncated"));
    }
    let mut f = || r.read_f64::<LittleEndian>().map_err(trunc);
    let omegas = (0..n).map(|_| (0..dim).map(|_| f()).collect()).collect::<Result<Vec<Vec<f64>>>>()?;
    let p = (0..n).map(|_| f()).collect::<Result<Vec<f64>>>()?;
    let t_last = r.read_u64::<LittleEndian>().map_err(trunc)?;
    if r.position() as usize != blob.len() {
        return Err(bad("adversary section has trailing bytes"));
    }
    Ok(AdversarySnapshot { omegas, p, t_last })
}
