//! Binary parameter blobs.
//!
//! Layout (little endian): magic `UNRNPAR1`, `u32` record count, then per
//! record: `u32` name length, UTF-8 name, `u32` rank, `u32` dims, `f32` data.

use std::io::{Read, Write};

use crate::error::NnError;
use crate::param::Param;

const MAGIC: &[u8; 8] = b"UNRNPAR1";

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Writes named arrays; `(name, shape, data)` triples.
pub fn write_params<'a>(
    w: &mut impl Write,
    records: impl IntoIterator<Item = (&'a str, &'a [usize], &'a [f32])>,
) -> Result<(), NnError> {
    let records: Vec<_> = records.into_iter().collect();
    w.write_all(MAGIC)?;
    write_u32(w, records.len() as u32)?;
    for (name, shape, data) in records {
        write_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(w, shape.len() as u32)?;
        for &d in shape {
            write_u32(w, d as u32)?;
        }
        let mut buf = Vec::with_capacity(data.len() * 4);
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Reads a blob written by [`write_params`] as `Param`s with zero gradients.
pub fn read_params(r: &mut impl Read) -> Result<Vec<Param>, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| NnError::Format("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        if name_len > 4096 {
            return Err(NnError::Format("implausible name length".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| NnError::Format("name is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        if rank > 8 {
            return Err(NnError::Format(format!("{name}: implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes).map_err(|_| NnError::Format(format!("{name}: truncated data")))?;
        let mut p = Param::zeros(name, shape);
        for (v, chunk) in p.value.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        out.push(p);
    }
    Ok(out)
}
