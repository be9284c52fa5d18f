//! Raw little-endian binary checkpoints, one file per rank plus a manifest.
//!
//! Layout: `[u64 magic][u32 version][u32 itot,jtot,ktot,px,py,h,nsv][f64 time][u64 step]`
//! followed by the interior of every payload field, i-fastest.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{allocate_fields, FieldSet, GlobalFields, Shape, PROGNOSTIC};
use crate::grid::{Decomposition, Grid, GridConfig, Vertical};

pub const MAGIC: u64 = 0x4C45_5343_4B50_5401;
pub const VERSION: u32 = 1;
const HEADER_BYTES: usize = 8 + 4 + 7 * 4 + 8 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic number {0:#x}")]
    BadMagic(u64),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub itot: u32,
    pub jtot: u32,
    pub ktot: u32,
    pub px: u32,
    pub py: u32,
    pub halo: u32,
    pub nsv: u32,
    pub time: f64,
    pub step: u64,
}

impl CheckpointMeta {
    pub fn new(decomp: &Decomposition, nsv: usize, time: f64, step: u64) -> CheckpointMeta {
        CheckpointMeta {
            itot: decomp.itot as u32,
            jtot: decomp.jtot as u32,
            ktot: decomp.ktot as u32,
            px: decomp.px as u32,
            py: decomp.py as u32,
            halo: decomp.halo as u32,
            nsv: nsv as u32,
            time,
            step,
        }
    }

    fn local_shape(&self) -> Result<Shape, CheckpointError> {
        if self.px == 0 || self.py == 0 || self.itot % self.px != 0 || self.jtot % self.py != 0 || self.halo == 0 {
            return Err(CheckpointError::Inconsistent(format!(
                "extents {}x{} do not split over {}x{} ranks with halo {}",
                self.itot, self.jtot, self.px, self.py, self.halo
            )));
        }
        Ok(Shape::new(
            (self.itot / self.px) as usize,
            (self.jtot / self.py) as usize,
            self.ktot as usize,
            self.halo as usize,
        ))
    }

    fn n_fields(&self) -> usize {
        PROGNOSTIC.len() + self.nsv as usize + 1
    }

    /// Decomposition of the saved run (unit spacing; only the extents matter).
    pub fn decomposition(&self) -> Result<Decomposition, CheckpointError> {
        let grid = Grid::build(&GridConfig {
            itot: self.itot as usize,
            jtot: self.jtot as usize,
            ktot: self.ktot as usize,
            dx: 1.0,
            dy: 1.0,
            vertical: Vertical::Uniform { height: self.ktot as f64 },
        })
        .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;
        Decomposition::new(&grid, self.px as usize, self.py as usize, self.halo as usize)
            .map_err(|e| CheckpointError::Inconsistent(e.to_string()))
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.to_path_buf(), source }
}

pub fn encode(fields: &FieldSet, meta: &CheckpointMeta) -> Vec<u8> {
    let cells = fields.shape.interior_cells();
    let mut buf = Vec::with_capacity(HEADER_BYTES + 8 * cells * meta.n_fields());
    buf.extend_from_slice(&MAGIC.to_le_bytes());
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [meta.itot, meta.jtot, meta.ktot, meta.px, meta.py, meta.halo, meta.nsv] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&meta.time.to_le_bytes());
    buf.extend_from_slice(&meta.step.to_le_bytes());
    for f in fields.payload() {
        for x in f.interior() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

pub fn decode(bytes: &[u8]) -> Result<(FieldSet, CheckpointMeta), CheckpointError> {
    if bytes.len() < HEADER_BYTES {
        return Err(CheckpointError::Truncated { expected: HEADER_BYTES, found: bytes.len() });
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let magic = u64_at(0);
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = u32_at(8);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let h: Vec<u32> = (0..7).map(|n| u32_at(12 + 4 * n)).collect();
    let meta = CheckpointMeta {
        itot: h[0],
        jtot: h[1],
        ktot: h[2],
        px: h[3],
        py: h[4],
        halo: h[5],
        nsv: h[6],
        time: f64::from_le_bytes(bytes[40..48].try_into().unwrap()),
        step: u64_at(48),
    };
    let shape = meta.local_shape()?;
    let cells = shape.interior_cells();
    let expected = HEADER_BYTES + 8 * cells * meta.n_fields();
    if bytes.len() != expected {
        return Err(CheckpointError::Truncated { expected, found: bytes.len() });
    }
    let mut fields = FieldSet::zeros(shape, meta.nsv as usize);
    let mut off = HEADER_BYTES;
    let mut values = vec![0.0; cells];
    for f in fields.payload_mut() {
        for v in values.iter_mut() {
            *v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
        }
        f.set_interior(&values);
    }
    Ok((fields, meta))
}

pub fn save_checkpoint(fields: &FieldSet, meta: &CheckpointMeta, path: &Path) -> Result<(), CheckpointError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&encode(fields, meta)).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<(FieldSet, CheckpointMeta), CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(path))?;
    decode(&bytes)
}

pub fn rank_file(dir: &Path, rank: usize) -> PathBuf {
    dir.join(format!("rank_{rank:04}.bin"))
}

pub const MANIFEST: &str = "manifest.txt";

pub fn write_manifest(dir: &Path, meta: &CheckpointMeta) -> Result<(), CheckpointError> {
    let path = dir.join(MANIFEST);
    let text = format!(
        "itot={}\njtot={}\nktot={}\npx={}\npy={}\nhalo={}\nnsv={}\ntime={}\nstep={}\nranks={}\n",
        meta.itot,
        meta.jtot,
        meta.ktot,
        meta.px,
        meta.py,
        meta.halo,
        meta.nsv,
        meta.time,
        meta.step,
        meta.px * meta.py
    );
    fs::write(&path, text).map_err(io_err(&path))
}

fn read_manifest(dir: &Path) -> Result<(usize, usize), CheckpointError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let get = |key: &str| -> Result<usize, CheckpointError> {
        text.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| CheckpointError::Inconsistent(format!("manifest lacks {key}")))
    };
    Ok((get("px")?, get("py")?))
}

/// Reads every rank file of a checkpoint directory and assembles the global state.
pub fn load_global(dir: &Path) -> Result<(GlobalFields, CheckpointMeta), CheckpointError> {
    let (px, py) = read_manifest(dir)?;
    let mut parts = Vec::with_capacity(px * py);
    let mut first: Option<CheckpointMeta> = None;
    for rank in 0..px * py {
        let (fs, meta) = load_checkpoint(&rank_file(dir, rank))?;
        if let Some(m) = first {
            if m != meta {
                return Err(CheckpointError::Inconsistent(format!("rank {rank} header differs from rank 0")));
            }
        } else if (meta.px as usize, meta.py as usize) != (px, py) {
            return Err(CheckpointError::Inconsistent("manifest and header rank layout differ".into()));
        }
        first = Some(meta);
        parts.push(fs);
    }
    let meta = first.expect("at least one rank");
    let decomp = meta.decomposition()?;
    let refs: Vec<_> = parts.iter().collect();
    Ok((GlobalFields::gather(&decomp, &refs), meta))
}

/// Zero fields with the payload of `global` for `rank`; halos still need an exchange.
pub fn scatter_global(global: &GlobalFields, decomp: &Decomposition, rank: usize) -> FieldSet {
    if global.arrays.is_empty() {
        return allocate_fields(decomp, 0);
    }
    global.scatter(decomp, rank)
}

#[cfg(test)]
mod tests {
    use super::super::Field3;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fields(shape: Shape, nsv: usize, seed: u64) -> FieldSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fs = FieldSet::zeros(shape, nsv);
        for f in fs.payload_mut() {
            *f = Field3::from_fn(shape, |_, _, _| rng.random::<f64>() * 2.0 - 1.0);
        }
        fs
    }

    fn meta(shape: Shape, nsv: usize) -> CheckpointMeta {
        CheckpointMeta {
            itot: shape.imax as u32,
            jtot: shape.jmax as u32,
            ktot: shape.ktot as u32,
            px: 1,
            py: 1,
            halo: shape.halo as u32,
            nsv: nsv as u32,
            time: 123.456,
            step: 42,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let shape = Shape::new(6, 5, 4, 2);
        let fs = random_fields(shape, 2, 7);
        let m = meta(shape, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        save_checkpoint(&fs, &m, &path).unwrap();
        let (back, m2) = load_checkpoint(&path).unwrap();
        assert_eq!(m2, m);
        for (a, b) in fs.payload().iter().zip(back.payload()) {
            let ab: Vec<u64> = a.interior().iter().map(|x| x.to_bits()).collect();
            let bb: Vec<u64> = b.interior().iter().map(|x| x.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn corrupt_and_truncated_files_are_rejected() {
        let shape = Shape::new(4, 4, 4, 1);
        let fs = random_fields(shape, 0, 1);
        let mut bytes = encode(&fs, &meta(shape, 0));
        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic(_))));
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(decode(&v), Err(CheckpointError::Version(9))));
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(decode(&bytes), Err(CheckpointError::Truncated { .. })));
        assert!(matches!(decode(&[0u8; 10]), Err(CheckpointError::Truncated { .. })));
    }
}
