//! Binary field snapshots shared between the variational and dynamics sides.
//!
//! Layout, all little-endian after the magic bytes "BCNLS1":
//!   u32 kind          0 = radial-real, 1 = periodic-complex
//!   u32 dim           N (radial) or d (periodic)
//!   u32 m             component count
//!   u32 n             nodes (radial) or points per dimension (periodic)
//!   f64 extent        R (radial) or L (periodic half period)
//!   f64 time
//!   f64 payload       m * n reals, or m * n^d complex interleaved re/im

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

const MAGIC: &[u8; 6] = b"BCNLS1";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes; not a snapshot file")]
    BadMagic,
    #[error("unknown snapshot kind {0}")]
    BadKind(u32),
    #[error("payload truncated: wanted {want} f64 values, got {got}")]
    Truncated { want: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    RadialReal {
        n_dim: u32,
        m: u32,
        n: u32,
        r_max: f64,
        time: f64,
        components: Vec<Vec<f64>>,
    },
    PeriodicComplex {
        d: u32,
        m: u32,
        n_per_dim: u32,
        half_len: f64,
        time: f64,
        components: Vec<Vec<Complex64>>,
    },
}

fn write_header<W: Write>(
    w: &mut W,
    kind: u32,
    dim: u32,
    m: u32,
    n: u32,
    extent: f64,
    time: f64,
) -> Result<(), SnapshotError> {
    w.write_all(MAGIC)?;
    w.write_all(&kind.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&m.to_le_bytes())?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&extent.to_le_bytes())?;
    w.write_all(&time.to_le_bytes())?;
    Ok(())
}

pub fn write_snapshot<W: Write>(w: &mut W, snap: &Snapshot) -> Result<(), SnapshotError> {
    match snap {
        Snapshot::RadialReal {
            n_dim,
            m,
            n,
            r_max,
            time,
            components,
        } => {
            write_header(w, 0, *n_dim, *m, *n, *r_max, *time)?;
            for comp in components {
                for v in comp {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Snapshot::PeriodicComplex {
            d,
            m,
            n_per_dim,
            half_len,
            time,
            components,
        } => {
            write_header(w, 1, *d, *m, *n_per_dim, *half_len, *time)?;
            for comp in components {
                for z in comp {
                    w.write_all(&z.re.to_le_bytes())?;
                    w.write_all(&z.im.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, SnapshotError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, SnapshotError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

pub fn read_snapshot<R: Read>(r: &mut R) -> Result<Snapshot, SnapshotError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let kind = read_u32(r)?;
    let dim = read_u32(r)?;
    let m = read_u32(r)?;
    let n = read_u32(r)?;
    let extent = read_f64(r)?;
    let time = read_f64(r)?;
    match kind {
        0 => {
            let per = n as usize;
            let mut components = Vec::with_capacity(m as usize);
            for _ in 0..m {
                let mut comp = Vec::with_capacity(per);
                for _ in 0..per {
                    comp.push(read_f64(r)?);
                }
                components.push(comp);
            }
            Ok(Snapshot::RadialReal {
                n_dim: dim,
                m,
                n,
                r_max: extent,
                time,
                components,
            })
        }
        1 => {
            let per = (n as usize).pow(dim);
            let mut components = Vec::with_capacity(m as usize);
            for _ in 0..m {
                let mut comp = Vec::with_capacity(per);
                for _ in 0..per {
                    let re = read_f64(r)?;
                    let im = read_f64(r)?;
                    comp.push(Complex64::new(re, im));
                }
                components.push(comp);
            }
            Ok(Snapshot::PeriodicComplex {
                d: dim,
                m,
                n_per_dim: n,
                half_len: extent,
                time,
                components,
            })
        }
        k => Err(SnapshotError::BadKind(k)),
    }
}

pub fn write_snapshot_file<P: AsRef<Path>>(path: P, snap: &Snapshot) -> Result<(), SnapshotError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_snapshot(&mut file, snap)
}

pub fn read_snapshot_file<P: AsRef<Path>>(path: P) -> Result<Snapshot, SnapshotError> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_snapshot(&mut file)
}
