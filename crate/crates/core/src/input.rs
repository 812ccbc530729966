//! Synthetic point sets and the binary file formats.
//!
//! Every file starts with a 7-byte magic, a precision byte (32 or 64) and a
//! little-endian `u64` count, followed by little-endian values. Points are
//! stored as `x y z` triples.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};
use crate::geometry::Point3;

pub const POINTS_MAGIC: &[u8; 7] = b"FMMPTS1";
pub const CHARGES_MAGIC: &[u8; 7] = b"FMMCHG1";
pub const POTENTIALS_MAGIC: &[u8; 7] = b"FMMPOT1";

/// Name of the generator recorded in manifests.
pub const RNG_NAME: &str = "ChaCha8 (rand_chacha 0.9), points on stream 0, charges on stream 1";

/// Point distributions for synthetic runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// Uniform in the unit cube `[0, 1)^3`.
    UniformCube,
    /// Area-uniform on the unit sphere.
    SphereSurface,
}

impl FromStr for Distribution {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" | "uniform_cube" | "cube" => Ok(Distribution::UniformCube),
            "sphere" | "sphere_surface" => Ok(Distribution::SphereSurface),
            other => Err(format!("unknown distribution {other:?} (expected uniform or sphere)")),
        }
    }
}

/// Floating point width of a run or file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    fn from_bits(bits: u8) -> Result<Self> {
        match bits {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            b => Err(FmmError::BadFile(format!("unsupported precision byte {b}"))),
        }
    }
}

impl FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" | "32" | "single" => Ok(Precision::F32),
            "f64" | "64" | "double" => Ok(Precision::F64),
            other => Err(format!("unknown precision {other:?} (expected f32 or f64)")),
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `n` points drawn from `dist`, rounded to `precision`.
pub fn generate_points(dist: Distribution, n: usize, seed: u64, precision: Precision) -> Result<Vec<Point3>> {
    if n == 0 {
        return Err(FmmError::NoPoints);
    }
    let mut rng = stream(seed, 0);
    let round = |x: f64| match precision {
        Precision::F32 => x as f32 as f64,
        Precision::F64 => x,
    };
    Ok((0..n)
        .map(|_| {
            let p = match dist {
                Distribution::UniformCube => [rng.random::<f64>(), rng.random(), rng.random()],
                Distribution::SphereSurface => loop {
                    let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    if r > 1e-12 {
                        break v.map(|c| c / r);
                    }
                },
            };
            Point3::from_array(p.map(round))
        })
        .collect())
}

/// `n` charges uniform in `[0, 1)`.
pub fn generate_charges(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, 1);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn write_header(w: &mut impl Write, magic: &[u8; 7], precision: Precision, count: usize) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&[precision.bits() as u8])?;
    w.write_all(&(count as u64).to_le_bytes())?;
    Ok(())
}

fn write_values(w: &mut impl Write, values: impl Iterator<Item = f64>, precision: Precision) -> Result<()> {
    for v in values {
        match precision {
            Precision::F32 => w.write_all(&(v as f32).to_le_bytes())?,
            Precision::F64 => w.write_all(&v.to_le_bytes())?,
        }
    }
    Ok(())
}

fn read_file(path: &Path, magic: &[u8; 7], per_item: usize) -> Result<(Precision, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|_| FmmError::BadFile(format!("{}: truncated header", path.display())))?;
    if &head[..7] != magic {
        return Err(FmmError::BadFile(format!("{}: wrong magic", path.display())));
    }
    let precision = Precision::from_bits(head[7])?;
    let count = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes")) as usize;
    let width = precision.bits() as usize / 8;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let expected = count
        .checked_mul(per_item * width)
        .ok_or_else(|| FmmError::BadFile(format!("{}: count {count} overflows", path.display())))?;
    if body.len() != expected {
        return Err(FmmError::BadFile(format!(
            "{}: expected {expected} payload bytes, found {}",
            path.display(),
            body.len()
        )));
    }
    let values = body
        .chunks_exact(width)
        .map(|c| match precision {
            Precision::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
            Precision::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
        })
        .collect();
    Ok((precision, values))
}

pub fn write_points(path: &Path, points: &[Point3], precision: Precision) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, POINTS_MAGIC, precision, points.len())?;
    write_values(&mut w, points.iter().flat_map(|p| p.to_array()), precision)?;
    w.flush()?;
    Ok(())
}

pub fn read_points(path: &Path) -> Result<(Precision, Vec<Point3>)> {
    let (precision, values) = read_file(path, POINTS_MAGIC, 3)?;
    let points = values.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
    Ok((precision, points))
}

pub fn write_charges(path: &Path, charges: &[f64], precision: Precision) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, CHARGES_MAGIC, precision, charges.len())?;
    write_values(&mut w, charges.iter().copied(), precision)?;
    w.flush()?;
    Ok(())
}

pub fn read_charges(path: &Path) -> Result<(Precision, Vec<f64>)> {
    read_file(path, CHARGES_MAGIC, 1)
}

pub fn write_potentials(path: &Path, potentials: &[f64], precision: Precision) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, POTENTIALS_MAGIC, precision, potentials.len())?;
    write_values(&mut w, potentials.iter().copied(), precision)?;
    w.flush()?;
    Ok(())
}

pub fn read_potentials(path: &Path) -> Result<(Precision, Vec<f64>)> {
    read_file(path, POTENTIALS_MAGIC, 1)
}
