//! Binary field snapshots.
//!
//! Layout, little-endian: magic `SNSF`, version `u16 = 1`, `dim: u8`,
//! `gamma: f64`, `t: f64`, `n: u32` per axis, then the density nodes and the
//! momentum components as `f64`, row-major (last axis fastest). The box length is
//! not stored; readers assume `2π`.

use std::io::Write;
use std::path::Path;

use crate::dynamics::FluidState;
use crate::error::{Error, Result};
use crate::fields::{Grid, ScalarField, VectorField};

pub const MAGIC: &[u8; 4] = b"SNSF";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub gamma: f64,
    pub t: f64,
    pub state: FluidState,
}

fn header_len(dim: usize) -> usize {
    4 + 2 + 1 + 8 + 8 + 4 * dim
}

pub fn encode(snap: &Snapshot) -> Vec<u8> {
    let g = snap.state.grid();
    let d = g.dim();
    let mut buf = Vec::with_capacity(header_len(d) + (1 + d) * g.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(d as u8);
    buf.extend_from_slice(&snap.gamma.to_le_bytes());
    buf.extend_from_slice(&snap.t.to_le_bytes());
    for _ in 0..d {
        buf.extend_from_slice(&(g.n() as u32).to_le_bytes());
    }
    for v in snap.state.rho.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for c in snap.state.m.components() {
        for v in c {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::MalformedSnapshot(format!("truncated while reading {what}")))?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn f64s(&mut self, count: usize) -> Vec<f64> {
        let out = self.bytes[self.pos..self.pos + 8 * count]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        self.pos += 8 * count;
        out
    }
}

pub fn decode(bytes: &[u8]) -> Result<Snapshot> {
    let mut r = Reader { bytes, pos: 0 };
    if &r.take::<4>("magic")? != MAGIC {
        return Err(Error::MalformedSnapshot("bad magic, not an SNSF file".into()));
    }
    let version = u16::from_le_bytes(r.take("version")?);
    if version != VERSION {
        return Err(Error::MalformedSnapshot(format!("unsupported version {version}, expected {VERSION}")));
    }
    let dim = r.take::<1>("dimension")?[0] as usize;
    if !(1..=3).contains(&dim) {
        return Err(Error::MalformedSnapshot(format!("dimension {dim} out of range")));
    }
    let gamma = f64::from_le_bytes(r.take("gamma")?);
    let t = f64::from_le_bytes(r.take("time")?);
    let mut ns = Vec::with_capacity(dim);
    for _ in 0..dim {
        ns.push(u32::from_le_bytes(r.take("grid size")?) as usize);
    }
    if ns.iter().any(|n| *n != ns[0]) {
        return Err(Error::MalformedSnapshot(format!("non-cubic grid {ns:?}")));
    }
    let grid = Grid::periodic(dim, ns[0]).map_err(|e| Error::MalformedSnapshot(e.to_string()))?;
    let expected = header_len(dim) + (1 + dim) * grid.len() * 8;
    if bytes.len() != expected {
        return Err(Error::MalformedSnapshot(format!(
            "length {} does not match the header ({expected} bytes expected)",
            bytes.len()
        )));
    }
    let rho = ScalarField::from_values(grid, r.f64s(grid.len()))?;
    let comps = (0..dim).map(|_| r.f64s(grid.len())).collect();
    let m = VectorField::from_components(grid, comps)?;
    Ok(Snapshot { gamma, t, state: FluidState { rho, m } })
}

pub fn write_snapshot(snap: &Snapshot, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(snap))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    decode(&std::fs::read(path)?)
}

/// Reads a snapshot that must live on `grid`.
pub fn read_snapshot_into(path: &Path, grid: &Grid) -> Result<Snapshot> {
    let snap = read_snapshot(path)?;
    let g = snap.state.grid();
    if g.dim() != grid.dim() || g.n() != grid.n() {
        return Err(Error::GridMismatch(format!(
            "snapshot has dim {} and n {}, expected dim {} and n {}",
            g.dim(),
            g.n(),
            grid.dim(),
            grid.n()
        )));
    }
    if g.length() != grid.length() {
        let rho = ScalarField::from_values(*grid, snap.state.rho.into_values())?;
        let m = VectorField::from_components(*grid, snap.state.m.into_components())?;
        return Ok(Snapshot { state: FluidState { rho, m }, ..snap });
    }
    Ok(snap)
}
