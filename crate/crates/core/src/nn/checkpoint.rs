//! Binary checkpoint format.
//!
//! Layout (little-endian): `b"CRWD"`, format version `u32`, then a body of
//! tensors, each written as name length `u32`, UTF-8 name, rank `u32`, dims
//! `u32[rank]` and the raw `f32` payload, and finally the CRC32 of the body.
//! The architecture travels as ordinary tensors (`arch.*`), followed by the
//! layer parameters and, optionally, the ADAM state (`adam.*`).

use std::collections::BTreeMap;
use std::path::Path;

use super::network::{layer_names, Layer, LayerSpec, Network, Params};
use super::optim::{AdamConfig, OptimizerState};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CRWD";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Option<OptimizerState>,
}

fn spec_row(spec: &LayerSpec) -> [f32; 6] {
    let u = |v: usize| v as f32;
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => [0.0, u(in_channels), u(out_channels), u(kernel), u(stride), u(padding)],
        LayerSpec::MaxPool2d { size, stride } => [1.0, u(size), u(stride), 0.0, 0.0, 0.0],
        LayerSpec::Dense { inputs, outputs } => [2.0, u(inputs), u(outputs), 0.0, 0.0, 0.0],
        LayerSpec::LeakyRelu { negative_slope } => [3.0, negative_slope, 0.0, 0.0, 0.0, 0.0],
        LayerSpec::Flatten => [4.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        LayerSpec::Softmax => [5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    }
}

fn spec_from_row(row: &[f32]) -> Result<LayerSpec> {
    let u = |v: f32| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0 {
            Ok(v as usize)
        } else {
            Err(Error::Format(format!("layer field {v} is not a count")))
        }
    };
    Ok(match row[0] {
        k if k == 0.0 => LayerSpec::Conv2d {
            in_channels: u(row[1])?,
            out_channels: u(row[2])?,
            kernel: u(row[3])?,
            stride: u(row[4])?,
            padding: u(row[5])?,
        },
        k if k == 1.0 => LayerSpec::MaxPool2d {
            size: u(row[1])?,
            stride: u(row[2])?,
        },
        k if k == 2.0 => LayerSpec::Dense {
            inputs: u(row[1])?,
            outputs: u(row[2])?,
        },
        k if k == 3.0 => LayerSpec::LeakyRelu { negative_slope: row[1] },
        k if k == 4.0 => LayerSpec::Flatten,
        k if k == 5.0 => LayerSpec::Softmax,
        k => return Err(Error::Format(format!("unknown layer kind code {k}"))),
    })
}

fn put_tensor(body: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    body.extend_from_slice(&(name.len() as u32).to_le_bytes());
    body.extend_from_slice(name.as_bytes());
    body.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        body.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        body.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a network (and optionally its optimizer state).
pub fn encode_checkpoint(network: &Network, optimizer: Option<&OptimizerState>) -> Vec<u8> {
    let mut body = Vec::new();
    let input = network.input_shape();
    put_tensor(&mut body, "arch.input", &[3], &input.map(|v| v as f32));
    let layers = network.layers();
    let rows: Vec<f32> = layers.iter().flat_map(|l| spec_row(&l.spec)).collect();
    put_tensor(&mut body, "arch.layers", &[layers.len(), 6], &rows);
    let mask: Vec<f32> = layers.iter().map(|l| if l.trainable { 1.0 } else { 0.0 }).collect();
    put_tensor(&mut body, "arch.trainable", &[layers.len()], &mask);
    for layer in layers {
        if let Some(p) = &layer.params {
            put_tensor(&mut body, &format!("{}.weight", layer.name), p.weight.shape(), p.weight.data());
            put_tensor(&mut body, &format!("{}.bias", layer.name), p.bias.shape(), p.bias.data());
        }
    }
    if let Some(opt) = optimizer {
        let c = opt.config;
        put_tensor(&mut body, "adam.hyper", &[4], &[c.learning_rate, c.beta1, c.beta2, c.epsilon]);
        let step = [(opt.step & 0xFF_FFFF) as f32, (opt.step >> 24) as f32];
        put_tensor(&mut body, "adam.step", &[2], &step);
        for (layer, moments) in layers.iter().zip(&opt.moments) {
            if let Some((m, v)) = moments {
                for (tag, p) in [("m", m), ("v", v)] {
                    put_tensor(&mut body, &format!("adam.{tag}.{}.weight", layer.name), p.weight.shape(), p.weight.data());
                    put_tensor(&mut body, &format!("adam.{tag}.{}.bias", layer.name), p.bias.shape(), p.bias.data());
                }
            }
        }
    }
    let mut out = Vec::with_capacity(body.len() + HEADER_LEN + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated tensor record".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name_len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor {name} has rank {rank}")));
        }
        let dims = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        Ok((name, Tensor::from_vec(&dims, data)?))
    }
}

/// Parses and validates a checkpoint image.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Format("file is truncated".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let (body, crc) = bytes[HEADER_LEN..].split_at(bytes.len() - HEADER_LEN - 4);
    let stored = u32::from_le_bytes(crc.try_into().expect("four bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("checksum mismatch (corrupt or truncated file)".into()));
    }
    let mut reader = Reader { bytes: body, pos: 0 };
    let mut tensors = BTreeMap::new();
    while reader.pos < body.len() {
        let (name, t) = reader.tensor()?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
    }
    let mut take = |name: &str| tensors.remove(name).ok_or_else(|| Error::Format(format!("missing tensor {name}")));

    let input = take("arch.input")?;
    if input.shape() != [3] {
        return Err(Error::Format("arch.input must hold three dims".into()));
    }
    let dims: Vec<usize> = input.data().iter().map(|&v| v as usize).collect();
    let rows = take("arch.layers")?;
    let mask = take("arch.trainable")?;
    let n_layers = rows.shape().first().copied().unwrap_or(0);
    if rows.shape() != [n_layers, 6] || mask.shape() != [n_layers] {
        return Err(Error::Format("architecture tensors disagree on layer count".into()));
    }
    let specs = rows.data().chunks(6).map(spec_from_row).collect::<Result<Vec<_>>>()?;
    let names = layer_names(&specs);

    let mut layers = Vec::with_capacity(n_layers);
    for ((spec, name), &flag) in specs.iter().zip(&names).zip(mask.data()) {
        let params = if spec.has_params() {
            Some(Params {
                weight: take(&format!("{name}.weight"))?,
                bias: take(&format!("{name}.bias"))?,
            })
        } else {
            None
        };
        layers.push(Layer {
            spec: *spec,
            name: name.clone(),
            params,
            trainable: flag != 0.0,
        });
    }
    let network = Network::from_layers([dims[0], dims[1], dims[2]], layers)
        .map_err(|e| Error::Format(format!("inconsistent layer graph: {e}")))?;

    let optimizer = match take("adam.hyper") {
        Err(_) => None,
        Ok(h) => {
            if h.shape() != [4] {
                return Err(Error::Format("adam.hyper must hold four values".into()));
            }
            let step = take("adam.step")?;
            if step.shape() != [2] {
                return Err(Error::Format("adam.step must hold two values".into()));
            }
            let h = h.data();
            let s = step.data();
            let mut moments = Vec::with_capacity(n_layers);
            for layer in network.layers() {
                moments.push(match &layer.params {
                    None => None,
                    Some(p) => {
                        let mut load = |tag: &str| -> Result<Params> {
                            let weight = take(&format!("adam.{tag}.{}.weight", layer.name))?;
                            let bias = take(&format!("adam.{tag}.{}.bias", layer.name))?;
                            if weight.shape() != p.weight.shape() || bias.shape() != p.bias.shape() {
                                return Err(Error::Format(format!("moment shape mismatch for {}", layer.name)));
                            }
                            Ok(Params { weight, bias })
                        };
                        Some((load("m")?, load("v")?))
                    }
                });
            }
            Some(OptimizerState {
                config: AdamConfig {
                    learning_rate: h[0],
                    beta1: h[1],
                    beta2: h[2],
                    epsilon: h[3],
                },
                step: s[0] as u64 | ((s[1] as u64) << 24),
                moments,
            })
        }
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint { network, optimizer })
}

pub fn save_checkpoint(path: &Path, network: &Network, optimizer: Option<&OptimizerState>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(network, optimizer))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Short content hash identifying a checkpoint image.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}
