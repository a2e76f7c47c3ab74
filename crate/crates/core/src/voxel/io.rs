//! Binary voxel file.
//!
//! Layout (little-endian): magic `OCGR`, version `u32`, dims `3 x u32`,
//! resolution `f64`, origin `3 x f64`, then `Dx*Dy*Dz` cells as `f32` in
//! x-major order with `-1.0` for UNKNOWN.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::num::Real;

use super::{Geometry, OccupancyGrid, Point, UNKNOWN};

pub const GRID_MAGIC: &[u8; 4] = b"OCGR";
pub const GRID_VERSION: u32 = 1;

pub fn write_grid_to<T: Real, W: Write>(grid: &OccupancyGrid<T>, mut w: W) -> Result<()> {
    let g = grid.geometry();
    w.write_all(GRID_MAGIC)?;
    w.write_all(&GRID_VERSION.to_le_bytes())?;
    for d in g.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&g.resolution.to_le_bytes())?;
    for o in g.origin {
        w.write_all(&o.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(grid.len() * 4);
    for &c in grid.raw() {
        let v = if c < T::zero() { UNKNOWN as f32 } else { c.wide() as f32 };
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn write_grid<T: Real>(grid: &OccupancyGrid<T>, path: impl AsRef<Path>) -> Result<()> {
    write_grid_to(grid, BufWriter::new(File::create(path)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_grid_from<T: Real, R: Read>(mut r: R) -> Result<OccupancyGrid<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GRID_MAGIC {
        return Err(Error::Format(format!("bad voxel file magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != GRID_VERSION {
        return Err(Error::Format(format!("unsupported voxel file version {version}")));
    }
    let dims = [read_u32(&mut r)? as usize, read_u32(&mut r)? as usize, read_u32(&mut r)? as usize];
    let resolution = read_f64(&mut r)?;
    let origin = Point::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?);
    let geom = Geometry::new(dims, resolution, origin).map_err(|e| Error::Format(e.to_string()))?;
    let n = geom.len();
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    let cells = bytes
        .chunks_exact(4)
        .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect();
    OccupancyGrid::from_raw(geom, cells).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_grid<T: Real>(path: impl AsRef<Path>) -> Result<OccupancyGrid<T>> {
    read_grid_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::{GridIndex, VoxelValue};

    #[test]
    fn header_layout_is_exact() {
        let mut g = OccupancyGrid::<f32>::new([2, 1, 1], 0.05, Point::new(1.0, 2.0, 3.0)).unwrap();
        g.set(GridIndex::new(1, 0, 0), VoxelValue::Known(0.25));
        let mut buf = Vec::new();
        write_grid_to(&g, &mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 12 + 8 + 24 + 8);
        assert_eq!(&buf[0..4], b"OCGR");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[20..28], &0.05f64.to_le_bytes());
        assert_eq!(&buf[28..36], &1.0f64.to_le_bytes());
        assert_eq!(&buf[52..56], &(-1.0f32).to_le_bytes());
        assert_eq!(&buf[56..60], &0.25f32.to_le_bytes());
        let back: OccupancyGrid<f32> = read_grid_from(&buf[..]).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let g = OccupancyGrid::<f32>::new([2, 2, 2], 0.1, Point::zeros()).unwrap();
        let mut buf = Vec::new();
        write_grid_to(&g, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_grid_from::<f32, _>(&bad[..]), Err(Error::Format(_))));
        assert!(read_grid_from::<f32, _>(&buf[..buf.len() - 1]).is_err());
        let mut out_of_range = buf.clone();
        let n = out_of_range.len();
        out_of_range[n - 4..].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(read_grid_from::<f32, _>(&out_of_range[..]), Err(Error::Format(_))));
    }
}
