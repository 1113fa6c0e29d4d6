//! Readers and writers for the `.fvecs` / `.bvecs` / `.ivecs` vector file
//! formats used by the SIFT dataset distributions: per vector, a 32-bit
//! little-endian dimension followed by that many elements (f32, u8, or i32).

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::dataset::{Dataset, DistanceMetric, VectorKind};
use crate::error::{Error, Result};

fn read_all<R: Read, T, F>(mut r: R, mut read_row: F) -> Result<(Vec<T>, usize, usize)>
where
    F: FnMut(&mut R, usize, &mut Vec<T>) -> std::io::Result<()>,
{
    let mut data = Vec::new();
    let mut dim = 0usize;
    let mut count = 0usize;
    loop {
        let d = match r.read_u32::<LittleEndian>() {
            Ok(d) => d as usize,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        if count == 0 {
            if d == 0 {
                return Err(Error::InvalidParameter("vector dimension 0 in file".into()));
            }
            dim = d;
        } else if d != dim {
            return Err(Error::InvalidParameter(format!(
                "inconsistent vector dimension: expected {dim}, got {d}"
            )));
        }
        read_row(&mut r, d, &mut data)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok((data, dim, count))
}

/// Read an fvecs file into a flat row-major buffer; returns (data, dim, count).
pub fn read_fvecs(path: impl AsRef<Path>) -> Result<(Vec<f32>, usize, usize)> {
    let r = BufReader::new(File::open(path)?);
    read_all(r, |r, d, out| {
        let start = out.len();
        out.resize(start + d, 0.0);
        r.read_f32_into::<LittleEndian>(&mut out[start..])
    })
}

/// Read a bvecs file into a flat row-major buffer; returns (data, dim, count).
pub fn read_bvecs(path: impl AsRef<Path>) -> Result<(Vec<u8>, usize, usize)> {
    let r = BufReader::new(File::open(path)?);
    read_all(r, |r, d, out| {
        let start = out.len();
        out.resize(start + d, 0);
        r.read_exact(&mut out[start..])
    })
}

/// Read an ivecs file as one row per vector. Used for ground-truth id lists.
pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    let r = BufReader::new(File::open(path)?);
    let (flat, dim, count) = read_all(r, |r, d, out: &mut Vec<i32>| {
        let start = out.len();
        out.resize(start + d, 0);
        r.read_i32_into::<LittleEndian>(&mut out[start..])
    })?;
    Ok((0..count).map(|i| flat[i * dim..(i + 1) * dim].to_vec()).collect())
}

/// Ground-truth rows as unsigned node ids.
pub fn read_groundtruth(path: impl AsRef<Path>) -> Result<Vec<Vec<u32>>> {
    Ok(read_ivecs(path)?
        .into_iter()
        .map(|row| row.into_iter().map(|x| x as u32).collect())
        .collect())
}

pub fn write_fvecs(path: impl AsRef<Path>, data: &[f32], dim: usize) -> Result<()> {
    debug_assert_eq!(data.len() % dim, 0);
    let mut w = BufWriter::new(File::create(path)?);
    for row in data.chunks_exact(dim) {
        w.write_u32::<LittleEndian>(dim as u32)?;
        for &x in row {
            w.write_f32::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_bvecs(path: impl AsRef<Path>, data: &[u8], dim: usize) -> Result<()> {
    debug_assert_eq!(data.len() % dim, 0);
    let mut w = BufWriter::new(File::create(path)?);
    for row in data.chunks_exact(dim) {
        w.write_u32::<LittleEndian>(dim as u32)?;
        w.write_all(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ivecs(path: impl AsRef<Path>, rows: &[Vec<i32>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        w.write_u32::<LittleEndian>(row.len() as u32)?;
        for &x in row {
            w.write_i32::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Infer the vector file format from a path extension.
pub fn kind_from_extension(path: &Path) -> Option<VectorKind> {
    match path.extension()?.to_str()? {
        "fvecs" => Some(VectorKind::F32),
        "bvecs" => Some(VectorKind::U8),
        _ => None,
    }
}

/// Load an fvecs or bvecs file as a [`Dataset`], inferring the element kind
/// from the extension.
pub fn load_dataset(path: impl AsRef<Path>, metric: DistanceMetric) -> Result<Dataset> {
    let path = path.as_ref();
    match kind_from_extension(path) {
        Some(VectorKind::F32) => {
            let (data, dim, _) = read_fvecs(path)?;
            Dataset::from_f32(data, dim, metric)
        }
        Some(VectorKind::U8) => {
            let (data, dim, _) = read_bvecs(path)?;
            Dataset::from_u8(data, dim, metric)
        }
        None => Err(Error::InvalidParameter(format!(
            "cannot infer vector format from {:?} (expected .fvecs or .bvecs)",
            path
        ))),
    }
}

/// Load a query file as row-major f32 data (bvecs queries are widened).
pub fn load_queries(path: impl AsRef<Path>) -> Result<(Vec<f32>, usize, usize)> {
    let path = path.as_ref();
    match kind_from_extension(path) {
        Some(VectorKind::F32) => read_fvecs(path),
        Some(VectorKind::U8) => {
            let (data, dim, count) = read_bvecs(path)?;
            Ok((data.into_iter().map(|x| x as f32).collect(), dim, count))
        }
        None => Err(Error::InvalidParameter(format!(
            "cannot infer vector format from {:?} (expected .fvecs or .bvecs)",
            path
        ))),
    }
}
