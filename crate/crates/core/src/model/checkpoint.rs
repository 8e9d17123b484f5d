use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Array;
use crate::binio::*;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UASRCKPT";
const VERSION: u32 = 1;

/// JSON header plus named `f32` arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub arrays: Vec<(String, Array<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&Array<f32>> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Format(format!("checkpoint has no array {name:?}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        // write then rename so that a crash never leaves a torn checkpoint
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        Ok(std::fs::rename(tmp, path)?)
    }

    fn write_to(&self, w: &mut impl Write) -> Result<()> {
        write_magic(w, MAGIC, VERSION)?;
        let header = serde_json::to_vec(&self.header)?;
        write_u32(w, header.len() as u32)?;
        w.write_all(&header)?;
        write_u32(w, self.arrays.len() as u32)?;
        for (name, a) in &self.arrays {
            write_str(w, name)?;
            write_u32(w, a.rank() as u32)?;
            for &d in a.shape() {
                write_u32(w, d as u32)?;
            }
            write_f32s(w, a.data())?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn read_from(r: &mut impl Read) -> Result<Self> {
        let version = read_magic(r, MAGIC, "checkpoint")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n = read_u32(r)? as usize;
        let mut header = vec![0u8; n];
        r.read_exact(&mut header)
            .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
        let header = serde_json::from_slice(&header)
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        let count = read_u32(r)?;
        let mut arrays = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = read_str(r)?;
            let rank = read_u32(r)? as usize;
            if rank > 3 {
                return Err(Error::Format(format!("array {name:?} has rank {rank}")));
            }
            let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let data = read_f32s(r, shape.iter().product())?;
            arrays.push((name, Array::from_vec(&shape, data)?));
        }
        Ok(Self { header, arrays })
    }
}
