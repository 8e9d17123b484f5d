use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{Array, Real};
use crate::binio::*;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UASRFEAT";
const VERSION: u32 = 1;

/// `T × D` frames, row-major, at a fixed frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f32>,
    dim: usize,
    frame_rate: f32,
}

impl FeatureSequence {
    pub fn new(data: Vec<f32>, dim: usize, frame_rate: f32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Contract("feature dimension must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::Contract(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Contract(format!("feature value {i} is not finite")));
        }
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::Contract(format!("invalid frame rate {frame_rate}")));
        }
        Ok(Self { data, dim, frame_rate })
    }

    pub fn empty(dim: usize, frame_rate: f32) -> Result<Self> {
        Self::new(Vec::new(), dim, frame_rate)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_rate(&self) -> f32 {
        self.frame_rate
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Copies frames `[start, end)` into a `[end - start, D]` array.
    pub fn to_array<T: Real>(&self, start: usize, end: usize) -> Array<T> {
        let data = self.data[start * self.dim..end * self.dim]
            .iter()
            .map(|&x| T::lit(x as f64))
            .collect();
        Array::from_vec(&[end - start, self.dim], data).expect("slice matches shape")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write_magic(&mut w, MAGIC, VERSION)?;
        write_u32(&mut w, self.len() as u32)?;
        write_u32(&mut w, self.dim as u32)?;
        write_f32(&mut w, self.frame_rate)?;
        write_f32s(&mut w, &self.data)?;
        Ok(w.flush()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn read_from(r: &mut impl Read) -> Result<Self> {
        let version = read_magic(r, MAGIC, "feature file")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported feature file version {version}")));
        }
        let t = read_u32(r)? as usize;
        let d = read_u32(r)? as usize;
        let rate = read_f32(r)?;
        let data = read_f32s(r, t * d)?;
        Self::new(data, d, rate).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Writes `utt000000.feat`, `utt000001.feat`, ... into `dir`.
pub fn write_feature_dir(dir: &Path, seqs: &[FeatureSequence]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, f) in seqs.iter().enumerate() {
        f.write(&dir.join(format!("utt{i:06}.feat")))?;
    }
    Ok(())
}

/// Reads every `*.feat` file in `dir`, ordered by file name.
pub fn read_feature_dir(dir: &Path) -> Result<Vec<(String, FeatureSequence)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "feat"));
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, FeatureSequence::read(&p)?))
        })
        .collect()
}
