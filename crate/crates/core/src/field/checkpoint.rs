//! Binary little-endian field checkpoints.
//!
//! Layout: magic `VSDF`, version `u32`, site count `u64`, level `u32`, then
//! per site: position `f32 × 3`, sdf `f32`, coarse features `f32 × 8`, fine
//! features `f32 × 8`. Site kinds are not stored; loaded sites are free.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::FieldState;
use crate::geom::{SiteSet, Vec3};
use crate::{Error, Result, FEATURE_DIM};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VSDF";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(mut w: impl Write, sites: &SiteSet, field: &FieldState) -> Result<()> {
    field.check(sites.len())?;
    let io = |e| Error::io("<checkpoint>", e);
    let mut buf = Vec::with_capacity(20 + sites.len() * 4 * (4 + 2 * FEATURE_DIM));
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(sites.len() as u64).to_le_bytes());
    buf.extend_from_slice(&sites.level.to_le_bytes());
    for i in 0..sites.len() {
        let p = sites.positions[i];
        let values = [p.x, p.y, p.z, field.sdf[i]].into_iter().chain(field.f_cse[i]).chain(field.f_fine[i]);
        for v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(SiteSet, FieldState)> {
    let bad = |m: &str| Error::invalid(format!("checkpoint: {m}"));
    let mut head = [0u8; 20];
    r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    if head[..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let level = u32::from_le_bytes(head[16..20].try_into().unwrap());
    let per_site = 4 + 2 * FEATURE_DIM;
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io("<checkpoint>", e))?;
    if body.len() != n * per_site * 4 {
        return Err(bad(&format!("expected {} payload bytes, found {}", n * per_site * 4, body.len())));
    }
    let vals: Vec<f64> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    let mut positions = Vec::with_capacity(n);
    let mut field = FieldState { sdf: Vec::with_capacity(n), f_cse: Vec::with_capacity(n), f_fine: Vec::with_capacity(n) };
    for rec in vals.chunks_exact(per_site) {
        positions.push(Vec3::new(rec[0], rec[1], rec[2]));
        field.sdf.push(rec[3]);
        field.f_cse.push(rec[4..4 + FEATURE_DIM].try_into().unwrap());
        field.f_fine.push(rec[4 + FEATURE_DIM..].try_into().unwrap());
    }
    let mut sites = SiteSet::free(positions);
    sites.level = level;
    field.check(n)?;
    Ok((sites, field))
}

pub fn save_checkpoint(path: &Path, sites: &SiteSet, field: &FieldState) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(f), sites, field)
}

pub fn load_checkpoint(path: &Path) -> Result<(SiteSet, FieldState)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}
