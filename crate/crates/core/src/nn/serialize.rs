//! Flat binary model format.
//!
//! ```text
//! magic        4 bytes  "AEMD"
//! version      u32      1
//! input rank   u32, followed by that many u32 extents
//! layer count  u32
//! per layer:   kind u8 (0 conv, 1 relu, 2 maxpool, 3 global-avg-pool, 4 dense, 5 softmax)
//!              name length u16, UTF-8 name bytes
//!              conv:  in u32, out u32, kernel u32, same-padding u8
//!              dense: inputs u32, outputs u32
//! parameters:  for every conv/dense layer in order, weights then biases as f32
//! ```
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::layers::{Conv2d, Dense, Layer, LayerKind};
use crate::nn::Model;

pub const MAGIC: &[u8; 4] = b"AEMD";
pub const VERSION: u32 = 1;

pub fn write_model(model: &Model, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(model.input_shape().len() as u32).to_le_bytes())?;
    for &d in model.input_shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&(model.layers().len() as u32).to_le_bytes())?;
    for l in model.layers() {
        let kind: u8 = match l.kind {
            LayerKind::Conv2d(_) => 0,
            LayerKind::Relu => 1,
            LayerKind::MaxPool2 => 2,
            LayerKind::GlobalAvgPool => 3,
            LayerKind::Dense(_) => 4,
            LayerKind::Softmax => 5,
        };
        w.write_all(&[kind])?;
        let name = l.name.as_bytes();
        let len =
            u16::try_from(name.len()).map_err(|_| Error::Format("layer name too long".into()))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        match &l.kind {
            LayerKind::Conv2d(c) => {
                for v in [c.in_channels, c.out_channels, c.kernel] {
                    w.write_all(&(v as u32).to_le_bytes())?;
                }
                w.write_all(&[u8::from(c.same_padding)])?;
            }
            LayerKind::Dense(d) => {
                for v in [d.inputs, d.outputs] {
                    w.write_all(&(v as u32).to_le_bytes())?;
                }
            }
            _ => {}
        }
    }
    for l in model.layers() {
        if let Some((weight, bias)) = l.params() {
            for &v in weight.iter().chain(bias) {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b[0])
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated model file".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_model(mut r: impl Read) -> Result<Model> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad model magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {version}"
        )));
    }
    let rank = read_u32(&mut r)? as usize;
    if rank == 0 || rank > 4 {
        return Err(Error::Format(format!("bad input rank {rank}")));
    }
    let input_shape = (0..rank)
        .map(|_| read_u32(&mut r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let count = read_u32(&mut r)? as usize;
    if count > 4096 {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = read_u8(&mut r)?;
        let mut len = [0u8; 2];
        r.read_exact(&mut len).map_err(truncated)?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name).map_err(truncated)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Format("layer name is not UTF-8".into()))?;
        let kind = match kind {
            0 => {
                let (i, o, k) = (
                    read_u32(&mut r)? as usize,
                    read_u32(&mut r)? as usize,
                    read_u32(&mut r)? as usize,
                );
                let same = read_u8(&mut r)? != 0;
                if i * o * k * k > 1 << 26 {
                    return Err(Error::Format("conv layer too large".into()));
                }
                LayerKind::Conv2d(Conv2d::zeros(i, o, k, same))
            }
            1 => LayerKind::Relu,
            2 => LayerKind::MaxPool2,
            3 => LayerKind::GlobalAvgPool,
            4 => {
                let (i, o) = (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize);
                if i * o > 1 << 26 {
                    return Err(Error::Format("dense layer too large".into()));
                }
                LayerKind::Dense(Dense::zeros(i, o))
            }
            5 => LayerKind::Softmax,
            other => return Err(Error::Format(format!("unknown layer kind {other}"))),
        };
        layers.push(Layer::new(name, kind));
    }
    for l in &mut layers {
        if let Some((weight, bias)) = l.params_mut() {
            for v in weight.iter_mut().chain(bias.iter_mut()) {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(truncated)?;
                let f = f32::from_le_bytes(b);
                if !f.is_finite() {
                    return Err(Error::NonFinite("model parameters"));
                }
                *v = f64::from(f);
            }
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    Model::new(input_shape, layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::{build_model, preset};

    #[test]
    fn round_trip_rounds_to_f32() {
        let m = build_model(&[1, 8, 8], &preset("conv3", 2).unwrap(), 0.3, 5).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back.layers().len(), m.layers().len());
        for (a, b) in m.layers().iter().zip(back.layers()) {
            assert_eq!(a.name, b.name);
            if let (Some((wa, _)), Some((wb, _))) = (a.params(), b.params()) {
                for (x, y) in wa.iter().zip(wb) {
                    assert_eq!(*x as f32 as f64, *y);
                }
            }
        }
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_corruption() {
        let m = build_model(&[1, 8, 8], &preset("conv2", 2).unwrap(), 0.3, 5).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(bad.as_slice()), Err(Error::Format(_))));
        assert!(read_model(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_model(long.as_slice()).is_err());
    }
}
