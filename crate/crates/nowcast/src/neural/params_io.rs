//! Model checkpoint container ("W4CP"): versioned header followed by
//! named, shape-tagged little-endian float32 arrays. Round trips are
//! bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::model::{Arch, CellKind, NetParams};

const MAGIC: &[u8; 4] = b"W4CP";
const VERSION: u16 = 1;

/// Write a parameter set to disk.
pub fn save_params(p: &NetParams<f32>, path: &Path) -> Result<()> {
    let named = p.named_arrays();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(match p.cell {
        CellKind::ConvGru => 0,
        CellKind::ConvLstm => 1,
    });
    for dim in [p.arch.enc1, p.arch.enc2, p.arch.hidden1, p.arch.hidden2, p.arch.dec1, p.arch.dec2]
    {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(named.len() as u16).to_le_bytes());
    for (name, shape, data) in named {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(shape.len() as u8);
        for d in &shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for &v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Read a parameter set back.
pub fn load_params(path: &Path) -> Result<NetParams<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not a W4CP file".into()));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let cell = match cur.u8()? {
        0 => CellKind::ConvGru,
        1 => CellKind::ConvLstm,
        other => return Err(Error::Format(format!("unknown cell tag {other}"))),
    };
    let dims: Vec<usize> = (0..6).map(|_| cur.u32().map(|v| v as usize)).collect::<Result<_>>()?;
    let arch = Arch {
        enc1: dims[0],
        enc2: dims[1],
        hidden1: dims[2],
        hidden2: dims[3],
        dec1: dims[4],
        dec2: dims[5],
    };
    let n_arrays = cur.u16()? as usize;
    let mut p = NetParams::<f32>::zeros(arch, cell);
    let expected = p.named_arrays();
    if n_arrays != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {n_arrays} arrays, architecture expects {}",
            expected.len()
        )));
    }
    let expected: Vec<(String, Vec<usize>)> = expected
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    let mut arrays = p.param_arrays_mut();
    for (i, (exp_name, exp_shape)) in expected.iter().enumerate() {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Format("non-utf8 array name".into()))?;
        if name != exp_name {
            return Err(Error::Format(format!(
                "array {i} is '{name}', expected '{exp_name}'"
            )));
        }
        let ndim = cur.u8()? as usize;
        let shape: Vec<usize> =
            (0..ndim).map(|_| cur.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        if &shape != exp_shape {
            return Err(Error::Format(format!(
                "array '{name}' has shape {shape:?}, expected {exp_shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        let raw = cur.take(len * 4)?;
        let dst = &mut arrays[i];
        for (j, chunk) in raw.chunks_exact(4).enumerate() {
            dst[j] = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Corrupt("trailing bytes after last array".into()));
    }
    Ok(p)
}
