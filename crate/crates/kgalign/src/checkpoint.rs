//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "KGALENC\0" (encoder) or "KGALMLP\0" (semantic head)
//! version    u32       1
//! header     kind-specific fields, see below
//! count      u32       number of tensors
//! tensors    count × (rows u32, cols u32, rows·cols × f32)
//! ```
//!
//! Encoder header: d, h, n1, n2, k_rel, k_attr (u32 each), metric code u8,
//! ablation code u8, H0-trainable flag u8, one zero byte, rng_seed u64.
//! Tensors follow [`TENSOR_NAMES`] order.
//!
//! Semantic header: d_text, hidden, d_sem (u32 each), rng_seed u64. Tensors
//! follow [`MLP_TENSOR_NAMES`] order.

use std::fs;
use std::path::Path;

use kgalign_core::encoder::{Ablation, EncoderDims, EncoderParams, TENSOR_NAMES};
use kgalign_core::linalg::Matrix;
use kgalign_core::semantic::{MlpParams, MLP_TENSOR_NAMES};
use kgalign_core::train::Metric;

use crate::error::{Error, Result};

pub const ENCODER_MAGIC: [u8; 8] = *b"KGALENC\0";
pub const MLP_MAGIC: [u8; 8] = *b"KGALMLP\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderCheckpoint {
    pub params: EncoderParams,
    pub metric: Metric,
    pub ablation: Ablation,
    pub train_initial_features: bool,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpCheckpoint {
    pub params: MlpParams,
    pub rng_seed: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("dimension fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn tensors<'a>(&mut self, tensors: impl ExactSizeIterator<Item = &'a Matrix>) {
        self.u32(tensors.len());
        for m in tensors {
            self.u32(m.rows());
            self.u32(m.cols());
            for &v in m.as_slice() {
                self.0.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn preamble(&mut self, magic: &[u8; 8]) -> std::result::Result<(), String> {
        if self.take(8)? != magic {
            return Err("bad magic".into());
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(format!("unsupported format version {version}"));
        }
        Ok(())
    }

    fn tensors(&mut self, names: &[&str]) -> std::result::Result<Vec<Matrix>, String> {
        let count = self.u32()?;
        if count != names.len() {
            return Err(format!("{count} tensors, expected {}", names.len()));
        }
        let mut out = Vec::with_capacity(count);
        for name in names {
            let rows = self.u32()?;
            let cols = self.u32()?;
            let len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| format!("tensor `{name}` too large"))?;
            let data: Vec<f64> = self
                .take(len)?
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(format!("tensor `{name}` has non-finite values"));
            }
            out.push(Matrix::from_vec(rows, cols, data));
        }
        Ok(out)
    }

    fn finish(&self) -> std::result::Result<(), String> {
        if self.pos != self.bytes.len() {
            return Err(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}

fn ablation_code(a: Ablation) -> u8 {
    Ablation::ALL.iter().position(|&x| x == a).expect("listed") as u8
}

impl EncoderCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.params.dims();
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&ENCODER_MAGIC);
        w.u32(FORMAT_VERSION as usize);
        for v in [dims.d, dims.h, dims.entities[0], dims.entities[1], dims.k_rel, dims.k_attr] {
            w.u32(v);
        }
        w.u8(self.metric.code());
        w.u8(ablation_code(self.ablation));
        w.u8(u8::from(self.train_initial_features));
        w.u8(0);
        w.u64(self.rng_seed);
        w.tensors(self.params.tensors().iter().map(|(_, m)| *m));
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        r.preamble(&ENCODER_MAGIC)?;
        let mut dim = [0usize; 6];
        for v in &mut dim {
            *v = r.u32()?;
        }
        let [d, h, n1, n2, k_rel, k_attr] = dim;
        let metric = Metric::from_code(r.u8()?).ok_or("unknown metric code")?;
        let ablation = *Ablation::ALL
            .get(r.u8()? as usize)
            .ok_or("unknown ablation code")?;
        let train_initial_features = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(format!("bad H0 flag {v}")),
        };
        r.u8()?;
        let rng_seed = r.u64()?;
        let tensors = r.tensors(&TENSOR_NAMES)?;
        r.finish()?;
        let params = EncoderParams::from_tensors(tensors).ok_or("tensor shapes are inconsistent")?;
        let expected = EncoderDims {
            entities: [n1, n2],
            d,
            h,
            k_rel,
            k_attr,
        };
        if params.dims() != expected {
            return Err("tensor shapes disagree with the header".into());
        }
        Ok(Self {
            params,
            metric,
            ablation,
            train_initial_features,
            rng_seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_checkpoint(path, "train-struct")?;
        Self::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }

    /// The checkpoint as it will read back from disk, i.e. with every tensor
    /// rounded to `f32`.
    pub fn quantized(&self) -> Self {
        Self::from_bytes(&self.to_bytes()).expect("own encoding decodes")
    }
}

impl MlpCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&MLP_MAGIC);
        w.u32(FORMAT_VERSION as usize);
        w.u32(self.params.input_width());
        w.u32(self.params.hidden_width());
        w.u32(self.params.output_width());
        w.u64(self.rng_seed);
        let p = &self.params;
        w.tensors([&p.w1, &p.b1, &p.w2, &p.b2].into_iter());
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        r.preamble(&MLP_MAGIC)?;
        let (d_text, hidden, d_sem) = (r.u32()?, r.u32()?, r.u32()?);
        let rng_seed = r.u64()?;
        let tensors = r.tensors(&MLP_TENSOR_NAMES)?;
        r.finish()?;
        let params = MlpParams::from_tensors(tensors).ok_or("tensor shapes are inconsistent")?;
        if (params.input_width(), params.hidden_width(), params.output_width()) != (d_text, hidden, d_sem) {
            return Err("tensor shapes disagree with the header".into());
        }
        Ok(Self { params, rng_seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_checkpoint(path, "train-sem")?;
        Self::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }

    pub fn quantized(&self) -> Self {
        Self::from_bytes(&self.to_bytes()).expect("own encoding decodes")
    }
}

fn read_checkpoint(path: &Path, command: &'static str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingCheckpoint {
                path: path.to_path_buf(),
                command,
            }
        } else {
            Error::io(path, e)
        }
    })
}
