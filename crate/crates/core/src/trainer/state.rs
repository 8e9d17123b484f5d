use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamConfig, TrainConfig};
use crate::autodiff::{Array, Real};
use crate::error::{Error, Result};
use crate::model::{Architecture, Checkpoint, DiscriminatorParams, GeneratorParams, ParamSet};

/// Adam moments for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<Array<T>>,
    pub v: Vec<Array<T>>,
    pub t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &impl ParamSet<T>) -> Self {
        let zeros: Vec<Array<T>> = params.arrays().iter().map(|a| Array::zeros(a.shape())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One bias-corrected step. Arithmetic is done in `f64`.
    pub fn update(&mut self, params: Vec<&mut Array<T>>, grads: &[Array<T>], lr: f64, cfg: &AdamConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((p, &g), m), v) in it {
                let g = g.as_f64();
                let mm = cfg.beta1 * m.as_f64() + (1.0 - cfg.beta1) * g;
                let vv = cfg.beta2 * v.as_f64() + (1.0 - cfg.beta2) * g * g;
                *m = T::lit(mm);
                *v = T::lit(vv);
                let step = lr * (mm / bc1) / ((vv / bc2).sqrt() + cfg.eps);
                *p = T::lit(p.as_f64() - step);
            }
        }
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    pub gen: GeneratorParams<T>,
    pub disc: DiscriminatorParams<T>,
    pub gen_opt: Adam<T>,
    pub disc_opt: Adam<T>,
    /// Number of completed updates.
    pub step: u64,
    pub rng: ChaCha8Rng,
    /// Current epoch's audio permutation and position in it.
    pub order: Vec<usize>,
    pub cursor: usize,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    architecture: Architecture,
    config: Option<TrainConfig>,
    step: u64,
    gen_t: u64,
    disc_t: u64,
    rng: RngState,
    order: Vec<usize>,
    cursor: usize,
}

const KIND: &str = "uasr-train-state";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Format(format!("bad rng seed {s:?}"));
    if s.len() != 64 {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

impl<T: Real> ModelState<T> {
    /// Fresh parameters drawn from `seed`; the same generator then drives training.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = GeneratorParams::init(arch, &mut rng);
        let disc = DiscriminatorParams::init(arch, &mut rng);
        Self {
            gen_opt: Adam::new(&gen),
            disc_opt: Adam::new(&disc),
            gen,
            disc,
            step: 0,
            rng,
            order: Vec::new(),
            cursor: 0,
        }
    }
}

fn named<T: Real>(p: &impl ParamSet<T>) -> Vec<(String, Array<f32>)> {
    p.names().iter().zip(p.arrays()).map(|(n, a)| (n.to_string(), a.cast())).collect()
}

fn fill<T: Real>(ckpt: &Checkpoint, prefix: &str, names: &[&str], dst: Vec<&mut Array<T>>) -> Result<()> {
    for (n, d) in names.iter().zip(dst) {
        let a = ckpt.get(&format!("{prefix}{n}"))?;
        if a.shape() != d.shape() {
            return Err(Error::Format(format!("array {prefix}{n} has shape {:?}, expected {:?}", a.shape(), d.shape())));
        }
        *d = a.cast();
    }
    Ok(())
}

impl ModelState<f32> {
    pub fn to_checkpoint(&self, arch: &Architecture, cfg: &TrainConfig) -> Checkpoint {
        let header = Header {
            kind: KIND.into(),
            architecture: arch.clone(),
            config: Some(cfg.clone()),
            step: self.step,
            gen_t: self.gen_opt.t,
            disc_t: self.disc_opt.t,
            rng: RngState {
                seed: hex(&self.rng.get_seed()),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            order: self.order.clone(),
            cursor: self.cursor,
        };
        let mut arrays = named(&self.gen);
        arrays.extend(named(&self.disc));
        for (tag, opt) in [("adam_m.", &self.gen_opt.m), ("adam_v.", &self.gen_opt.v)] {
            arrays.extend(self.gen.names().iter().zip(opt).map(|(n, a)| (format!("{tag}{n}"), a.clone())));
        }
        for (tag, opt) in [("adam_m.", &self.disc_opt.m), ("adam_v.", &self.disc_opt.v)] {
            arrays.extend(self.disc.names().iter().zip(opt).map(|(n, a)| (format!("{tag}{n}"), a.clone())));
        }
        Checkpoint { header: serde_json::to_value(header).expect("header serializes"), arrays }
    }

    /// Restores a state written by [`ModelState::to_checkpoint`], with its
    /// architecture and the configuration it was trained under.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, Architecture, Option<TrainConfig>)> {
        let h: Header = serde_json::from_value(ckpt.header.clone())
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if h.kind != KIND {
            return Err(Error::Format(format!("checkpoint kind {:?}", h.kind)));
        }
        let arch = h.architecture;
        arch.validate()?;
        let mut gen = GeneratorParams::zeros(&arch);
        let mut disc = DiscriminatorParams::zeros(&arch);
        let (gn, dn) = (gen.names(), disc.names());
        fill(ckpt, "", gn, gen.arrays_mut())?;
        fill(ckpt, "", dn, disc.arrays_mut())?;
        let mut gen_opt = Adam::new(&gen);
        let mut disc_opt = Adam::new(&disc);
        fill(ckpt, "adam_m.", gn, gen_opt.m.iter_mut().collect())?;
        fill(ckpt, "adam_v.", gn, gen_opt.v.iter_mut().collect())?;
        fill(ckpt, "adam_m.", dn, disc_opt.m.iter_mut().collect())?;
        fill(ckpt, "adam_v.", dn, disc_opt.v.iter_mut().collect())?;
        gen_opt.t = h.gen_t;
        disc_opt.t = h.disc_t;
        let mut rng = ChaCha8Rng::from_seed(unhex(&h.rng.seed)?);
        rng.set_stream(h.rng.stream);
        rng.set_word_pos(h.rng.word_pos.parse().map_err(|_| Error::Format("bad rng word position".into()))?);
        if h.order.iter().any(|&i| i >= h.order.len()) || h.cursor > h.order.len() {
            return Err(Error::Format("bad data order in checkpoint".into()));
        }
        let state = Self { gen, disc, gen_opt, disc_opt, step: h.step, rng, order: h.order, cursor: h.cursor };
        Ok((state, arch, h.config))
    }
}
