use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{EncoderConfig, EncoderError};
use crate::rng::{stream_rng, tag};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FFFNERCK";
const CHECKPOINT_VERSION: u32 = 1;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_fc1: Range<usize>,
    pub b_fc1: Range<usize>,
    pub w_fc2: Range<usize>,
    pub b_fc2: Range<usize>,
}

/// Offsets of every tensor in the flat parameter buffer. The encoder body
/// comes first and the two classification heads last, so heads can be
/// replaced without touching the body.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub mlm_b: Range<usize>,
    pub ent_w: Range<usize>,
    pub ent_b: Range<usize>,
    pub type_w: Range<usize>,
    pub type_b: Range<usize>,
    pub body_end: usize,
    pub total: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

impl Layout {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let d = cfg.dim;
        let f = cfg.dim * cfg.ffn_mult;
        let v = cfg.vocab.len();
        let mut c = Cursor(0);
        let tok_emb = c.take(v * d);
        let pos_emb = c.take(cfg.max_len * d);
        let layers = (0..cfg.layers)
            .map(|_| LayerLayout {
                ln1_g: c.take(d),
                ln1_b: c.take(d),
                w_qkv: c.take(d * 3 * d),
                b_qkv: c.take(3 * d),
                w_o: c.take(d * d),
                b_o: c.take(d),
                ln2_g: c.take(d),
                ln2_b: c.take(d),
                w_fc1: c.take(d * f),
                b_fc1: c.take(f),
                w_fc2: c.take(f * d),
                b_fc2: c.take(d),
            })
            .collect();
        let lnf_g = c.take(d);
        let lnf_b = c.take(d);
        let mlm_b = c.take(v);
        let body_end = c.0;
        let w = cfg.type_head_width();
        Self {
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            mlm_b,
            ent_w: c.take(d * 2),
            ent_b: c.take(2),
            type_w: c.take(d * w),
            type_b: c.take(w),
            body_end,
            total: c.0,
        }
    }

    /// Named tensors with a flag telling whether weight decay applies.
    pub fn tensors(&self) -> Vec<(String, Range<usize>, bool)> {
        let mut out = vec![("tok_emb".to_string(), self.tok_emb.clone(), true), ("pos_emb".into(), self.pos_emb.clone(), true)];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, r, decay) in [
                ("ln1_g", &l.ln1_g, false),
                ("ln1_b", &l.ln1_b, false),
                ("w_qkv", &l.w_qkv, true),
                ("b_qkv", &l.b_qkv, false),
                ("w_o", &l.w_o, true),
                ("b_o", &l.b_o, false),
                ("ln2_g", &l.ln2_g, false),
                ("ln2_b", &l.ln2_b, false),
                ("w_fc1", &l.w_fc1, true),
                ("b_fc1", &l.b_fc1, false),
                ("w_fc2", &l.w_fc2, true),
                ("b_fc2", &l.b_fc2, false),
            ] {
                out.push((format!("layer{i}.{name}"), r.clone(), decay));
            }
        }
        for (name, r, decay) in [
            ("lnf_g", &self.lnf_g, false),
            ("lnf_b", &self.lnf_b, false),
            ("mlm_b", &self.mlm_b, false),
            ("ent_w", &self.ent_w, true),
            ("ent_b", &self.ent_b, false),
            ("type_w", &self.type_w, true),
            ("type_b", &self.type_b, false),
        ] {
            out.push((name.to_string(), r.clone(), decay));
        }
        out
    }

    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total];
        for (_, r, decay) in self.tensors() {
            if decay {
                mask[r].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
}

fn fill_normal<R: Rng>(slice: &mut [f64], std: f64, rng: &mut R) {
    let normal = Normal::new(0.0, std).expect("valid std");
    slice.iter_mut().for_each(|x| *x = normal.sample(rng));
}

impl ModelParams {
    /// Random initialization: N(0, 0.02) weights, zero biases, unit gains.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut data = vec![0.0; layout.total];
        let mut rng = stream_rng(seed, &[tag::INIT]);
        for (name, range, decay) in layout.tensors() {
            let slice = &mut data[range];
            if decay {
                fill_normal(slice, INIT_STD, &mut rng);
            } else if name.ends_with("_g") {
                slice.iter_mut().for_each(|x| *x = 1.0);
            }
        }
        Ok(Self { config, layout, data })
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn slice(&self, r: &Range<usize>) -> &[f64] {
        &self.data[r.clone()]
    }

    /// Same body, newly initialized heads sized for `type_count` types (plus
    /// a "no entity" class when `joint_none_class`).
    pub fn with_fresh_heads(&self, type_count: usize, joint_none_class: bool, seed: u64) -> Result<Self, EncoderError> {
        let config = EncoderConfig { type_count, joint_none_class, ..self.config.clone() };
        config.validate()?;
        let layout = Layout::new(&config);
        let mut data = vec![0.0; layout.total];
        data[..layout.body_end].copy_from_slice(&self.data[..self.layout.body_end]);
        let mut rng = stream_rng(seed, &[tag::HEADS]);
        fill_normal(&mut data[layout.ent_w.clone()], INIT_STD, &mut rng);
        fill_normal(&mut data[layout.type_w.clone()], INIT_STD, &mut rng);
        Ok(Self { config, layout, data })
    }

    pub fn with_dropout(mut self, dropout: f64) -> Self {
        self.config.dropout = dropout;
        self
    }

    pub fn zero_heads(&mut self) {
        for r in [&self.layout.ent_w, &self.layout.ent_b, &self.layout.type_w, &self.layout.type_b] {
            self.data[r.clone()].iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Binary checkpoint: magic, version, JSON config header, then the raw
    /// parameters as little-endian f64. Round-trips bit-exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.config).expect("config serializes");
        let mut out = Vec::with_capacity(32 + header.len() + 8 * self.data.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.data.len() as u64).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, EncoderError> {
        let bad = |m: &str| EncoderError::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut u32buf = [0u8; 4];
        bytes.read_exact(&mut u32buf).map_err(|_| bad("truncated version"))?;
        let version = u32::from_le_bytes(u32buf);
        if version != CHECKPOINT_VERSION {
            return Err(EncoderError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut u64buf = [0u8; 8];
        bytes.read_exact(&mut u64buf).map_err(|_| bad("truncated header length"))?;
        let hlen = u64::from_le_bytes(u64buf) as usize;
        if bytes.len() < hlen {
            return Err(bad("truncated header"));
        }
        let (header, mut rest) = bytes.split_at(hlen);
        let config: EncoderConfig = serde_json::from_slice(header).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
        config.validate()?;
        let layout = Layout::new(&config);
        rest.read_exact(&mut u64buf).map_err(|_| bad("truncated parameter count"))?;
        let count = u64::from_le_bytes(u64buf) as usize;
        if count != layout.total {
            return Err(EncoderError::Checkpoint(format!("expected {} parameters, found {count}", layout.total)));
        }
        if rest.len() != 8 * count {
            return Err(bad("parameter payload has the wrong size"));
        }
        let data = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self { config, layout, data })
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
