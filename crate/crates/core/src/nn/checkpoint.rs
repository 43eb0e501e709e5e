//! Binary tensor checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | field | bytes |
//! |---|---|
//! | magic `XDNN` | 4 |
//! | format version (`u16`) | 2 |
//! | element width in bytes (`u8`, 4 or 8) | 1 |
//! | reserved | 1 |
//! | tensor count (`u32`) | 4 |
//! | per tensor: rank (`u8`), dims (`u32` each), elements row-major | |
//!
//! Networks are stored as `[w0, b0, w1, b1, ...]` preceded by a rank-1
//! tensor holding the activation codes.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayD, IxDyn};

use super::{Activation, Dense, Gradients, Mlp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"XDNN";
pub const FORMAT_VERSION: u16 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_tensors<T: Scalar, W: Write>(mut w: W, tensors: &[ArrayD<T>]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[T::WIDTH, 0])?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&[t.ndim() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        // Iteration order of a standard-layout array is row-major.
        for &v in t.as_standard_layout().iter() {
            match T::WIDTH {
                4 => w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?,
                _ => w.write_all(&v.to_f64_lossy().to_le_bytes())?,
            }
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads tensors of any stored width into `T`.
pub fn read_tensors<T: Scalar, R: Read>(mut r: R) -> Result<Vec<ArrayD<T>>> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let width = head[6];
    if width != 4 && width != 8 {
        return Err(bad(format!("unsupported element width {width}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let dims = (0..rank[0]).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut buf = vec![0u8; n * width as usize];
        r.read_exact(&mut buf)?;
        let values: Vec<T> = if width == 4 {
            buf.chunks_exact(4).map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect()
        } else {
            buf.chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("chunk of eight"))))
                .collect()
        };
        out.push(ArrayD::from_shape_vec(IxDyn(&dims), values).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

fn act_code(a: Activation) -> f64 {
    match a {
        Activation::Identity => 0.0,
        Activation::Mish => 1.0,
        Activation::Tanh => 2.0,
    }
}

fn act_from_code(c: f64) -> Result<Activation> {
    match c as i64 {
        0 => Ok(Activation::Identity),
        1 => Ok(Activation::Mish),
        2 => Ok(Activation::Tanh),
        other => Err(bad(format!("unknown activation code {other}"))),
    }
}

/// Flattens a network into checkpoint tensors.
pub fn mlp_tensors<T: Scalar>(net: &Mlp<T>) -> Vec<ArrayD<T>> {
    let codes: Array1<T> = net.layers.iter().map(|l| T::of(act_code(l.act))).collect();
    let mut out = vec![codes.into_dyn()];
    for l in &net.layers {
        out.push(l.w.clone().into_dyn());
        out.push(l.b.clone().into_dyn());
    }
    out
}

/// Rebuilds a network from the front of `tensors`, returning the rest.
pub fn mlp_from_tensors<T: Scalar>(tensors: &[ArrayD<T>]) -> Result<(Mlp<T>, &[ArrayD<T>])> {
    let codes = tensors.first().ok_or_else(|| bad("missing activation table"))?;
    let n = codes.len();
    if tensors.len() < 1 + 2 * n {
        return Err(bad("truncated network"));
    }
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let w: Array2<T> = tensors[1 + 2 * i].clone().into_dimensionality().map_err(|e| bad(e.to_string()))?;
        let b: Array1<T> = tensors[2 + 2 * i].clone().into_dimensionality().map_err(|e| bad(e.to_string()))?;
        if b.len() != w.ncols() || (i > 0 && w.nrows() != layers.last().map_or(0, Dense::fan_out)) {
            return Err(bad(format!("inconsistent shapes in layer {i}")));
        }
        layers.push(Dense { w, b, act: act_from_code(codes.as_slice().map_or(0.0, |c| c[i].to_f64_lossy()))? });
    }
    Ok((Mlp { layers }, &tensors[1 + 2 * n..]))
}

pub fn gradient_tensors<T: Scalar>(g: &Gradients<T>) -> Vec<ArrayD<T>> {
    g.w.iter().zip(&g.b).flat_map(|(w, b)| [w.clone().into_dyn(), b.clone().into_dyn()]).collect()
}

/// Reads gradient-shaped tensors matching `like`, returning the rest.
pub fn gradients_from_tensors<'a, T: Scalar>(like: &Mlp<T>, tensors: &'a [ArrayD<T>]) -> Result<(Gradients<T>, &'a [ArrayD<T>])> {
    let n = like.layers.len();
    if tensors.len() < 2 * n {
        return Err(bad("truncated optimizer state"));
    }
    let mut g = Gradients::zeros_like(like);
    for i in 0..n {
        let w: Array2<T> = tensors[2 * i].clone().into_dimensionality().map_err(|e| bad(e.to_string()))?;
        let b: Array1<T> = tensors[2 * i + 1].clone().into_dimensionality().map_err(|e| bad(e.to_string()))?;
        if w.raw_dim() != g.w[i].raw_dim() || b.raw_dim() != g.b[i].raw_dim() {
            return Err(bad(format!("optimizer shape mismatch in layer {i}")));
        }
        g.w[i] = w;
        g.b[i] = b;
    }
    Ok((g, &tensors[2 * n..]))
}

pub fn save_mlp<T: Scalar, W: Write>(net: &Mlp<T>, w: W) -> Result<()> {
    write_tensors(w, &mlp_tensors(net))
}

pub fn load_mlp<T: Scalar, R: Read>(r: R) -> Result<Mlp<T>> {
    let tensors = read_tensors(r)?;
    let (net, rest) = mlp_from_tensors(&tensors)?;
    if !rest.is_empty() {
        return Err(bad("trailing tensors"));
    }
    Ok(net)
}
