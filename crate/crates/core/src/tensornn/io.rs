//! Weights file.
//!
//! Layout (little-endian): magic `OPNW`, version `u32`, layer count `u32`, then per
//! layer: id (`u32` byte length + UTF-8), conv spec as six `u32` (in, out, kernel,
//! stride, dilation, padding), weight and bias blobs (`u32` count + `f32` values),
//! a `u8` norm flag and, when set, gamma, beta, running mean and running variance blobs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BatchNorm, ConvSpec, Layer, LayerParams, Tensor};
use crate::error::{Error, Result};
use crate::num::Real;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"OPNW";
pub const WEIGHTS_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_blob<W: Write, T: Real>(w: &mut W, vals: &[T]) -> Result<()> {
    put_u32(w, vals.len())?;
    let mut buf = Vec::with_capacity(vals.len() * 4);
    for v in vals {
        buf.extend_from_slice(&(v.wide() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_weights_to<T: Real, W: Write>(layers: &[&Layer<T>], mut w: W) -> Result<()> {
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    put_u32(&mut w, layers.len())?;
    for l in layers {
        let id = l.conv.id.as_bytes();
        put_u32(&mut w, id.len())?;
        w.write_all(id)?;
        let s = l.conv.spec;
        for v in [s.in_channels, s.out_channels, s.kernel, s.stride, s.dilation, s.padding] {
            put_u32(&mut w, v)?;
        }
        put_blob(&mut w, l.conv.weight.data())?;
        put_blob(&mut w, l.conv.bias.data())?;
        match &l.norm {
            None => w.write_all(&[0])?,
            Some(n) => {
                w.write_all(&[1])?;
                put_blob(&mut w, n.gamma.data())?;
                put_blob(&mut w, n.beta.data())?;
                put_blob(&mut w, &n.running_mean)?;
                put_blob(&mut w, &n.running_var)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_weights<T: Real>(layers: &[&Layer<T>], path: impl AsRef<Path>) -> Result<()> {
    write_weights_to(layers, BufWriter::new(File::create(path)?))
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_blob<R: Read, T: Real>(r: &mut R, expected: usize, what: &str) -> Result<Vec<T>> {
    let n = get_u32(r)?;
    if n != expected {
        return Err(Error::Format(format!("{what}: expected {expected} values, found {n}")));
    }
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect())
}

/// Upper bound on declared sizes, so a corrupt header cannot request huge allocations.
const MAX_FIELD: usize = 1 << 16;

pub fn read_weights_from<T: Real, R: Read>(mut r: R) -> Result<Vec<Layer<T>>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Format(format!("bad weights file magic {magic:?}")));
    }
    let version = get_u32(&mut r)?;
    if version != WEIGHTS_VERSION as usize {
        return Err(Error::Format(format!("unsupported weights version {version}")));
    }
    let count = get_u32(&mut r)?;
    if count > MAX_FIELD {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let len = get_u32(&mut r)?;
        if len > MAX_FIELD {
            return Err(Error::Format("layer id too long".into()));
        }
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|_| Error::Format("layer id is not UTF-8".into()))?;
        let mut f = [0usize; 6];
        for v in &mut f {
            *v = get_u32(&mut r)?;
            if *v > MAX_FIELD {
                return Err(Error::Format(format!("layer '{id}': implausible conv field {v}")));
            }
        }
        let spec = ConvSpec {
            in_channels: f[0],
            out_channels: f[1],
            kernel: f[2],
            stride: f[3],
            dilation: f[4],
            padding: f[5],
        };
        spec.validate().map_err(|e| Error::Format(format!("layer '{id}': {e}")))?;
        let mut conv = LayerParams::<T>::zeros(id.clone(), spec)?;
        let wshape = conv.weight.shape();
        conv.weight = Tensor::from_vec(wshape, get_blob(&mut r, spec.weight_count(), &id)?)?;
        conv.bias = Tensor::from_vec([1, spec.out_channels, 1, 1, 1], get_blob(&mut r, spec.out_channels, &id)?)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let norm = match flag[0] {
            0 => None,
            1 => {
                let c = spec.out_channels;
                let mut n = BatchNorm::<T>::new(c);
                n.gamma = Tensor::from_vec([1, c, 1, 1, 1], get_blob(&mut r, c, &id)?)?;
                n.beta = Tensor::from_vec([1, c, 1, 1, 1], get_blob(&mut r, c, &id)?)?;
                n.running_mean = get_blob(&mut r, c, &id)?;
                n.running_var = get_blob(&mut r, c, &id)?;
                Some(n)
            }
            x => return Err(Error::Format(format!("layer '{id}': bad norm flag {x}"))),
        };
        layers.push(Layer { conv, norm });
    }
    Ok(layers)
}

pub fn read_weights<T: Real>(path: impl AsRef<Path>) -> Result<Vec<Layer<T>>> {
    read_weights_from(BufReader::new(File::open(path)?))
}
