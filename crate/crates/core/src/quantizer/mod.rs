//! k-means codebooks and per-frame pseudo-labels.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::*;
use crate::dsp::FeatureSequence;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UASRCDBK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    centers: Vec<f32>,
    k: usize,
    dim: usize,
    fit_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmeansOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once no center moves farther than this (Euclidean).
    pub tol: f64,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        Self { k: 64, seed: 0, max_iters: 100, tol: 1e-6 }
    }
}

/// Per-frame cluster ids.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSequence {
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub frame_rate: f32,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest row of `centers` (row-major, width `d`), lowest index on ties.
fn nearest(x: &[f64], centers: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.chunks_exact(d).enumerate() {
        let dist = sq_dist(x, c);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

/// k-means++ seeding. When every remaining point coincides with a chosen
/// center the lowest-index unchosen point is taken.
pub fn kmeans_pp_init(points: &[f64], d: usize, k: usize, seed: u64) -> Vec<f64> {
    let n = points.len() / d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = points[first * d..(first + 1) * d].to_vec();
    let mut d2: Vec<f64> = points.chunks_exact(d).map(|p| sq_dist(p, &centers)).collect();
    while centers.len() < k * d {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > r {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave r just above the final partial sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            chosen.iter().position(|&c| !c).expect("n >= k")
        };
        chosen[pick] = true;
        let c = &points[pick * d..(pick + 1) * d];
        centers.extend_from_slice(c);
        for (w, p) in d2.iter_mut().zip(points.chunks_exact(d)) {
            *w = w.min(sq_dist(p, c));
        }
    }
    centers
}

/// Lloyd iterations from `centers`. Returns the within-cluster squared
/// distance measured at every assignment step.
pub(crate) fn lloyd(points: &[f64], d: usize, centers: &mut [f64], max_iters: usize, tol: f64) -> Vec<f64> {
    let k = centers.len() / d;
    let mut trace = Vec::new();
    for _ in 0..max_iters {
        let assigned: Vec<(usize, f64)> = points
            .par_chunks_exact(d)
            .map(|p| nearest(p, centers, d))
            .collect();
        trace.push(assigned.iter().map(|a| a.1).sum());
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (p, &(j, _)) in points.chunks_exact(d).zip(&assigned) {
            counts[j] += 1;
            for (s, x) in sums[j * d..(j + 1) * d].iter_mut().zip(p) {
                *s += x;
            }
        }
        // farthest points first, each used for at most one empty cluster
        let mut far: Vec<usize> = (0..assigned.len()).collect();
        far.sort_by(|&a, &b| assigned[b].1.total_cmp(&assigned[a].1).then(a.cmp(&b)));
        let mut far = far.into_iter();
        let mut shift = 0.0f64;
        for j in 0..k {
            let new: Vec<f64> = if counts[j] > 0 {
                sums[j * d..(j + 1) * d].iter().map(|s| s / counts[j] as f64).collect()
            } else {
                let i = far.next().expect("at least k points");
                points[i * d..(i + 1) * d].to_vec()
            };
            let c = &mut centers[j * d..(j + 1) * d];
            shift = shift.max(sq_dist(c, &new).sqrt());
            c.copy_from_slice(&new);
        }
        if shift < tol {
            break;
        }
    }
    trace
}

fn flatten(data: &[FeatureSequence]) -> Result<(Vec<f64>, usize)> {
    let d = data.first().map(FeatureSequence::dim).unwrap_or(0);
    if let Some(f) = data.iter().find(|f| f.dim() != d) {
        return Err(Error::Shape { op: "fit_kmeans", lhs: vec![d], rhs: vec![f.dim()] });
    }
    Ok((data.iter().flat_map(|f| f.data().iter().map(|&x| x as f64)).collect(), d))
}

/// k-means++ seeding then Lloyd, returning the codebook and the
/// within-cluster squared distance at each iteration.
pub fn fit_kmeans_traced(data: &[FeatureSequence], opts: &KmeansOptions) -> Result<(Codebook, Vec<f64>)> {
    if opts.k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    let (points, d) = flatten(data)?;
    let n = if d == 0 { 0 } else { points.len() / d };
    if n < opts.k {
        return Err(Error::InsufficientData(format!("{n} frames for {} clusters", opts.k)));
    }
    let mut centers = kmeans_pp_init(&points, d, opts.k, opts.seed);
    let trace = lloyd(&points, d, &mut centers, opts.max_iters, opts.tol);
    let cb = Codebook {
        centers: centers.iter().map(|&c| c as f32).collect(),
        k: opts.k,
        dim: d,
        fit_seed: opts.seed,
    };
    Ok((cb, trace))
}

pub fn fit_kmeans(data: &[FeatureSequence], opts: &KmeansOptions) -> Result<Codebook> {
    fit_kmeans_traced(data, opts).map(|r| r.0)
}

impl Codebook {
    pub fn new(centers: Vec<f32>, dim: usize, fit_seed: u64) -> Result<Self> {
        if dim == 0 || centers.is_empty() || centers.len() % dim != 0 {
            return Err(Error::Contract(format!("{} values do not form centers of width {dim}", centers.len())));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::Contract("codebook contains non-finite values".into()));
        }
        Ok(Self { k: centers.len() / dim, centers, dim, fit_seed })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fit_seed(&self) -> u64 {
        self.fit_seed
    }

    pub fn center(&self, j: usize) -> &[f32] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    /// Nearest center per frame by squared distance, lowest index on ties.
    pub fn assign(&self, features: &FeatureSequence) -> Result<PseudoLabelSequence> {
        if features.dim() != self.dim {
            return Err(Error::Contract(format!(
                "features have dimension {}, codebook expects {}",
                features.dim(),
                self.dim
            )));
        }
        let centers: Vec<f64> = self.centers.iter().map(|&c| c as f64).collect();
        let labels = features
            .frames()
            .map(|f| {
                let x: Vec<f64> = f.iter().map(|&v| v as f64).collect();
                nearest(&x, &centers, self.dim).0
            })
            .collect();
        Ok(PseudoLabelSequence { labels, num_classes: self.k, frame_rate: features.frame_rate() })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write_magic(&mut w, MAGIC, VERSION)?;
        write_u32(&mut w, self.k as u32)?;
        write_u32(&mut w, self.dim as u32)?;
        write_u64(&mut w, self.fit_seed)?;
        write_f32s(&mut w, &self.centers)?;
        Ok(w.flush()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    fn read_from(r: &mut impl Read) -> Result<Self> {
        let version = read_magic(r, MAGIC, "codebook")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported codebook version {version}")));
        }
        let k = read_u32(r)? as usize;
        let d = read_u32(r)? as usize;
        let seed = read_u64(r)?;
        let centers = read_f32s(r, k * d)?;
        Self::new(centers, d, seed).map_err(|e| Error::Format(e.to_string()))
    }
}

/// One utterance per line, labels separated by spaces.
pub fn write_labels(path: &Path, seqs: &[PseudoLabelSequence]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for s in seqs {
        let line: Vec<String> = s.labels.iter().map(usize::to_string).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(w.flush()?)
}

/// Parses a label file, checking every label against `num_classes`.
pub fn read_labels(path: &Path, num_classes: usize, frame_rate: f32) -> Result<Vec<PseudoLabelSequence>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let labels = line
                .split_whitespace()
                .map(|tok| match tok.parse::<usize>() {
                    Ok(l) if l < num_classes => Ok(l),
                    _ => Err(Error::Format(format!(
                        "{} line {}: bad label {tok:?} for {num_classes} classes",
                        path.display(),
                        n + 1
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PseudoLabelSequence { labels, num_classes, frame_rate })
        })
        .collect()
}
