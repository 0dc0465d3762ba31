//! Binary model file.
//!
//! Layout (little endian): magic `DOCM`, u16 version, u32 layer count, then per
//! layer u32 out, in, kernel, dilation, u8 activation, u8 head, followed by the
//! f32 weights and the f32 bias.

use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, ConvLayer, Head, ModelParams};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"DOCM";
pub const MODEL_VERSION: u16 = 1;

/// Upper bound on any single dimension, to reject corrupt headers before allocating.
const MAX_DIM: u32 = 1 << 16;

fn act_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Sigmoid => 1,
        Activation::Identity => 2,
    }
}

fn head_tag(h: Head) -> u8 {
    match h {
        Head::Trunk => 0,
        Head::Boundary => 1,
        Head::Orientation => 2,
    }
}

impl ModelParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.param_count());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            for v in [l.out_ch, l.in_ch, l.kernel, l.dilation] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            out.push(act_tag(l.activation));
            out.push(head_tag(l.head));
            for v in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4, "magic")? != MODEL_MAGIC {
            return Err(Error::format("model", "magic: expected DOCM"));
        }
        let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::format("model", format!("version: unsupported {version}")));
        }
        let count = cur.u32("layer count")?;
        if count == 0 || count > 1024 {
            return Err(Error::format("model", format!("layer count: {count}")));
        }
        let mut layers = Vec::with_capacity(count as usize);
        for i in 0..count {
            let dims = [cur.u32("out")?, cur.u32("in")?, cur.u32("kernel")?, cur.u32("dilation")?];
            if dims.iter().any(|&d| d == 0 || d > MAX_DIM) {
                return Err(Error::format("model", format!("layer {i}: dims {dims:?} out of range")));
            }
            let [out_ch, in_ch, kernel, dilation] = dims.map(|d| d as usize);
            let activation = match cur.take(1, "activation")?[0] {
                0 => Activation::Relu,
                1 => Activation::Sigmoid,
                2 => Activation::Identity,
                t => return Err(Error::format("model", format!("layer {i}: activation tag {t}"))),
            };
            let head = match cur.take(1, "head")?[0] {
                0 => Head::Trunk,
                1 => Head::Boundary,
                2 => Head::Orientation,
                t => return Err(Error::format("model", format!("layer {i}: head tag {t}"))),
            };
            let nw = out_ch * in_ch * kernel * kernel;
            let weights = cur.f32s(nw, "weights")?;
            let bias = cur.f32s(out_ch, "bias")?;
            layers.push(ConvLayer {
                in_ch,
                out_ch,
                kernel,
                dilation,
                activation,
                head,
                weights,
                bias,
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::format("model", format!("payload: {} trailing bytes", bytes.len() - cur.pos)));
        }
        let params = ModelParams { layers };
        params.check()?;
        if params.flatten().iter().any(|v| !v.is_finite()) {
            return Err(Error::format("model", "weights: non-finite value"));
        }
        Ok(params)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format("model", format!("{field}: truncated"))),
        }
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, field: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).unwrap_or(usize::MAX), field)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
