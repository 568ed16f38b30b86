//! Binary checkpoints of a network, its optimizer slots and UL statistics.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "TCOH"  u32 version  u32 stage_count
//! per stage:
//!   u8 kind (0 linear, 1 conv2d, 2 tanh)
//!   u32 rank, rank × u32 dims          linear [out, in], conv [out, in, k, k], tanh []
//!   conv only: u8 padding (0 valid, 1 same)
//!   f64 parameters, then f64 velocities (weights before biases)
//!   u8 has_ul; if 1:
//!     f64 mu, eps, ridge, combine_weight, init_scale; u8 sign; u8 covariance
//!     u8 state (0 none, 1 vector, 2 conv)
//!       vector: u32 dim, y_hat, y_bar, W, B, u64 t
//!       conv:   u32 rank, dims, y_hat, y_bar, u8 stats (0 diagonal, 1 full),
//!               W and B (C values each, or C × C), u64 t
//! u64 epochs_completed
//! ```

use std::fs;
use std::io;
use std::path::Path;

use tcoh_core::linalg::Matrix;
use tcoh_core::nn::{Conv2dLayer, Layer, LinearLayer, Network, Padding, Stage, Tensor};
use tcoh_core::ul::{ChannelCovariance, ChannelStats, GradientSign, UlHyper, UlLayer, UlState, UlStateConv, UlStateVec};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"TCOH";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("{0} trailing bytes after checkpoint")]
    TrailingBytes(usize),
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub epochs_completed: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, encode(self)).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        decode(&bytes)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn floats(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }
    fn dims(&mut self, dims: &[usize]) {
        self.u32(dims.len());
        for &d in dims {
            self.u32(d);
        }
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    w.u32(ckpt.network.stages.len());
    for stage in &ckpt.network.stages {
        match &stage.layer {
            Layer::Linear(l) => {
                w.u8(0);
                w.dims(&[l.outputs(), l.inputs()]);
                w.floats(l.weight.as_slice());
                w.floats(&l.bias);
                w.floats(&l.weight_velocity);
                w.floats(&l.bias_velocity);
            }
            Layer::Conv2d(c) => {
                w.u8(1);
                let k = c.kernel_size();
                w.dims(&[c.out_channels(), c.in_channels(), k, k]);
                w.u8(match c.padding() {
                    Padding::Valid => 0,
                    Padding::Same => 1,
                });
                w.floats(&c.kernels);
                w.floats(&c.bias);
                w.floats(&c.kernel_velocity);
                w.floats(&c.bias_velocity);
            }
            Layer::Tanh => {
                w.u8(2);
                w.dims(&[]);
            }
        }
        match &stage.ul {
            None => w.u8(0),
            Some(ul) => {
                w.u8(1);
                encode_ul(&mut w, ul);
            }
        }
    }
    w.u64(ckpt.epochs_completed);
    w.0
}

fn encode_ul(w: &mut Writer, ul: &UlLayer) {
    let h = &ul.hyper;
    w.floats(&[h.mu, h.eps, h.ridge, h.combine_weight, h.init_scale]);
    w.u8(match h.sign {
        GradientSign::Descend => 0,
        GradientSign::Ascend => 1,
    });
    w.u8(match ul.covariance {
        ChannelCovariance::Diagonal => 0,
        ChannelCovariance::Full => 1,
    });
    match &ul.state {
        None => w.u8(0),
        Some(UlState::Vector(s)) => {
            w.u8(1);
            w.u32(s.dim());
            w.floats(&s.y_hat);
            w.floats(&s.y_bar);
            w.floats(s.w.as_slice());
            w.floats(s.b.as_slice());
            w.u64(s.t);
        }
        Some(UlState::Conv(s)) => {
            w.u8(2);
            w.dims(s.y_hat.shape());
            w.floats(s.y_hat.data());
            w.floats(s.y_bar.data());
            match &s.stats {
                ChannelStats::Diagonal { w_var, b_var } => {
                    w.u8(0);
                    w.floats(w_var);
                    w.floats(b_var);
                }
                ChannelStats::Full { w: cw, b: cb } => {
                    w.u8(1);
                    w.floats(cw.as_slice());
                    w.floats(cb.as_slice());
                }
            }
            w.u64(s.t);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        // Check the length up front so a corrupt count cannot trigger a huge allocation.
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn dims(&mut self) -> Result<Vec<usize>, CheckpointError> {
        let rank = self.u32()?;
        if rank > 8 {
            return Err(invalid(format!("rank {rank} is too large")));
        }
        (0..rank).map(|_| self.u32()).collect()
    }
}

fn invalid(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Invalid(msg.into())
}

fn product(dims: &[usize]) -> Result<usize, CheckpointError> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| invalid("shape overflows"))
}

fn matrix(r: &mut Reader, n: usize) -> Result<Matrix, CheckpointError> {
    let size = n.checked_mul(n).ok_or_else(|| invalid("shape overflows"))?;
    Matrix::from_vec(n, n, r.floats(size)?).map_err(|e| invalid(e.to_string()))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes };
    if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.u32()?;
    let mut stages = Vec::new();
    for i in 0..count {
        let kind = r.u8()?;
        let dims = r.dims()?;
        let layer = match (kind, dims.as_slice()) {
            (0, &[out, inp]) => {
                let n = product(&[out, inp])?;
                let weight = Matrix::from_vec(out, inp, r.floats(n)?).map_err(|e| invalid(e.to_string()))?;
                let mut l = LinearLayer::from_parts(weight, r.floats(out)?);
                l.weight_velocity = r.floats(n)?;
                l.bias_velocity = r.floats(out)?;
                Layer::Linear(l)
            }
            (1, &[out, inp, k, k2]) if k == k2 => {
                let padding = match r.u8()? {
                    0 => Padding::Valid,
                    1 => Padding::Same,
                    p => return Err(invalid(format!("stage {i}: unknown padding tag {p}"))),
                };
                let n = product(&[out, inp, k, k])?;
                let kernels = r.floats(n)?;
                let bias = r.floats(out)?;
                let mut c = Conv2dLayer::from_parts(inp, out, k, padding, kernels, bias)
                    .map_err(|e| invalid(format!("stage {i}: {e}")))?;
                c.kernel_velocity = r.floats(n)?;
                c.bias_velocity = r.floats(out)?;
                Layer::Conv2d(c)
            }
            (2, &[]) => Layer::Tanh,
            _ => return Err(invalid(format!("stage {i}: kind {kind} with shape {dims:?}"))),
        };
        let ul = match r.u8()? {
            0 => None,
            1 => Some(decode_ul(&mut r).map_err(|e| match e {
                CheckpointError::Invalid(m) => invalid(format!("stage {i}: {m}")),
                e => e,
            })?),
            t => return Err(invalid(format!("stage {i}: UL flag {t}"))),
        };
        stages.push(Stage { layer, ul });
    }
    let epochs_completed = r.u64()?;
    if !r.bytes.is_empty() {
        return Err(CheckpointError::TrailingBytes(r.bytes.len()));
    }
    Ok(Checkpoint {
        network: Network::new(stages),
        epochs_completed,
    })
}

fn decode_ul(r: &mut Reader) -> Result<UlLayer, CheckpointError> {
    let v = r.floats(5)?;
    let sign = match r.u8()? {
        0 => GradientSign::Descend,
        1 => GradientSign::Ascend,
        t => return Err(invalid(format!("gradient sign tag {t}"))),
    };
    let hyper = UlHyper {
        mu: v[0],
        eps: v[1],
        ridge: v[2],
        combine_weight: v[3],
        init_scale: v[4],
        sign,
    };
    let covariance = match r.u8()? {
        0 => ChannelCovariance::Diagonal,
        1 => ChannelCovariance::Full,
        t => return Err(invalid(format!("covariance tag {t}"))),
    };
    let mut ul = UlLayer::new(hyper)
        .map_err(|e| invalid(e.to_string()))?
        .with_covariance(covariance);
    ul.state = match r.u8()? {
        0 => None,
        1 => {
            let n = r.u32()?;
            let y_hat = r.floats(n)?;
            let y_bar = r.floats(n)?;
            let w = matrix(r, n)?;
            let b = matrix(r, n)?;
            Some(UlState::Vector(UlStateVec {
                y_hat,
                y_bar,
                w,
                b,
                t: r.u64()?,
            }))
        }
        2 => {
            let dims = r.dims()?;
            if dims.len() != 3 {
                return Err(invalid(format!("conv UL state of shape {dims:?}")));
            }
            let len = product(&dims)?;
            let tensor = |data| Tensor::new(dims.clone(), data).map_err(|e| invalid(e.to_string()));
            let y_hat = tensor(r.floats(len)?)?;
            let y_bar = tensor(r.floats(len)?)?;
            let c = dims[0];
            let stats = match r.u8()? {
                0 => ChannelStats::Diagonal {
                    w_var: r.floats(c)?,
                    b_var: r.floats(c)?,
                },
                1 => ChannelStats::Full {
                    w: matrix(r, c)?,
                    b: matrix(r, c)?,
                },
                t => return Err(invalid(format!("channel stats tag {t}"))),
            };
            Some(UlState::Conv(UlStateConv {
                y_hat,
                y_bar,
                stats,
                t: r.u64()?,
            }))
        }
        t => return Err(invalid(format!("UL state tag {t}"))),
    };
    Ok(ul)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Checkpoint {
        let weight = Matrix::from_rows(&[&[1.0, -2.0], &[0.5, f64::MIN_POSITIVE]]);
        let mut l = LinearLayer::from_parts(weight, vec![0.25, -0.0]);
        l.weight_velocity = vec![1e-300, 2.0, 3.0, -4.0];
        let mut ul = UlLayer::new(UlHyper::default()).unwrap();
        ul.forward(&Tensor::from_vec(vec![0.3, 0.7])).unwrap();
        ul.forward(&Tensor::from_vec(vec![0.1, -0.7])).unwrap();
        Checkpoint {
            network: Network::new(vec![Stage::with_ul(Layer::Linear(l), ul), Stage::plain(Layer::Tanh)]),
            epochs_completed: 7,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = tiny();
        let bytes = encode(&c);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&tiny());
        assert_eq!(&bytes[..4], b"TCOH");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode(&tiny());
        assert!(matches!(decode(b"NOPE"), Err(CheckpointError::BadMagic)));
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated)));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(CheckpointError::TrailingBytes(1))));
        let mut kind = bytes;
        kind[12] = 9;
        assert!(matches!(decode(&kind), Err(CheckpointError::Invalid(_))));
    }
}
