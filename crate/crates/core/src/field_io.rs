//! The shared on-disk field format (`.ensf`) and CSV export.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   "ENSF"  (4 bytes)
//! version u16     (currently 1)
//! dtype   u8      (1 = float32)
//! pad     u8      (0)
//! nlat    u32
//! nlon    u32
//! lat_start, lat_step, lon_start, lon_step  f64
//! values  nlat·nlon × f32, row-major (latitude rows, longitude fastest)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

pub const FIELD_MAGIC: &[u8; 4] = b"ENSF";
pub const FIELD_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;

pub fn write_field<W: Write>(mut w: W, field: &Field) -> Result<()> {
    let g = &field.grid;
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&FIELD_VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F32, 0])?;
    w.write_all(&(g.nlat as u32).to_le_bytes())?;
    w.write_all(&(g.nlon as u32).to_le_bytes())?;
    for v in [g.lat_start, g.lat_step, g.lon_start, g.lon_step] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(field.values.len() * 4);
    for v in &field.values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_field<R: Read>(mut r: R, path: &str) -> Result<Field> {
    let fail = |reason: &str| Error::Format {
        path: path.to_string(),
        reason: reason.to_string(),
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(fail("bad magic"));
    }
    let mut two = [0u8; 2];
    r.read_exact(&mut two)?;
    if u16::from_le_bytes(two) != FIELD_VERSION {
        return Err(fail("unsupported version"));
    }
    r.read_exact(&mut two)?;
    if two[0] != DTYPE_F32 {
        return Err(fail("unsupported dtype"));
    }
    let mut four = [0u8; 4];
    r.read_exact(&mut four)?;
    let nlat = u32::from_le_bytes(four) as usize;
    r.read_exact(&mut four)?;
    let nlon = u32::from_le_bytes(four) as usize;

    let mut geo = [0f64; 4];
    let mut eight = [0u8; 8];
    for g in &mut geo {
        r.read_exact(&mut eight)?;
        *g = f64::from_le_bytes(eight);
    }
    let grid = GridSpec::new(nlat, nlon, geo[0], geo[1], geo[2], geo[3])
        .map_err(|e| fail(&e.to_string()))?;

    let mut buf = vec![0u8; nlat * nlon * 4];
    r.read_exact(&mut buf)?;
    let values = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Field::new(grid, values).map_err(|e| fail(&e.to_string()))
}

pub fn save_field(path: &Path, field: &Field) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_field(std::io::BufWriter::new(f), field)
}

pub fn load_field(path: &Path) -> Result<Field> {
    let f = std::fs::File::open(path)?;
    read_field(std::io::BufReader::new(f), &path.display().to_string())
}

/// Export a field as `lat,lon,value` CSV rows.
pub fn write_field_csv<W: Write>(mut w: W, field: &Field) -> Result<()> {
    writeln!(w, "lat,lon,value")?;
    let g = &field.grid;
    for i in 0..g.nlat {
        for j in 0..g.nlon {
            writeln!(w, "{},{},{}", g.lat(i), g.lon(j), field.get(i, j))?;
        }
    }
    Ok(())
}
