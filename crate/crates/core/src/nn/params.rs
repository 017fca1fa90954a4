//! Flat named-array container for network parameters.
//!
//! Byte layout (all integers and floats little-endian):
//!
//! ```text
//! magic     8 bytes  "OTFPARAM"
//! version   u32      1
//! count     u32      number of arrays
//! repeated `count` times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   ndim     u32, dims (u64 × ndim)
//!   data     f64 × product(dims), row-major
//! ```
//!
//! Array names are `layer{i}.weight` / `layer{i}.bias` for linear layers and
//! `layer{i}.inner.weight`, `layer{i}.outer.bias`, ... for residual blocks.

use std::io::{Read, Write};

use super::dense::{DenseNet, Layer, Linear};
use crate::error::{FilterError, Result};

const MAGIC: &[u8; 8] = b"OTFPARAM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

fn push_linear(out: &mut Vec<NamedArray>, prefix: &str, l: &Linear) {
    out.push(NamedArray {
        name: format!("{prefix}.weight"),
        dims: vec![l.weight.nrows(), l.weight.ncols()],
        data: l.weight.iter().copied().collect(),
    });
    out.push(NamedArray {
        name: format!("{prefix}.bias"),
        dims: vec![l.bias.len()],
        data: l.bias.to_vec(),
    });
}

pub fn to_named_arrays(net: &DenseNet) -> Vec<NamedArray> {
    let mut out = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Linear(l) => push_linear(&mut out, &format!("layer{i}"), l),
            Layer::Relu => {}
            Layer::Residual(b) => {
                push_linear(&mut out, &format!("layer{i}.inner"), &b.inner);
                push_linear(&mut out, &format!("layer{i}.outer"), &b.outer);
            }
        }
    }
    out
}

/// Prefixes every array name with `prefix.` (for storing several networks in
/// one container).
pub fn prefixed(prefix: &str, arrays: Vec<NamedArray>) -> Vec<NamedArray> {
    arrays
        .into_iter()
        .map(|a| NamedArray {
            name: format!("{prefix}.{}", a.name),
            ..a
        })
        .collect()
}

pub fn write_arrays<W: Write>(mut w: W, arrays: &[NamedArray]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for a in arrays {
        let name = a.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(a.dims.len() as u32).to_le_bytes())?;
        for &d in &a.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &a.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| FilterError::ParamFormat(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| FilterError::ParamFormat(e.to_string()))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_arrays<R: Read>(mut r: R) -> Result<Vec<NamedArray>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| FilterError::ParamFormat(e.to_string()))?;
    if &magic != MAGIC {
        return Err(FilterError::ParamFormat("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(FilterError::ParamFormat(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|e| FilterError::ParamFormat(e.to_string()))?;
        let name = String::from_utf8(name).map_err(|e| FilterError::ParamFormat(e.to_string()))?;
        let ndim = read_u32(&mut r)? as usize;
        let dims = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let size: usize = dims.iter().product();
        let data = (0..size)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        out.push(NamedArray { name, dims, data });
    }
    Ok(out)
}

fn fill_linear(l: &mut Linear, prefix: &str, arrays: &[NamedArray]) -> Result<()> {
    let find = |suffix: &str| {
        let name = format!("{prefix}.{suffix}");
        arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| FilterError::ParamFormat(format!("missing array {name}")))
    };
    let w = find("weight")?;
    if w.dims != [l.weight.nrows(), l.weight.ncols()] {
        return Err(FilterError::ParamFormat(format!("{} has dims {:?}", w.name, w.dims)));
    }
    let b = find("bias")?;
    if b.dims != [l.bias.len()] {
        return Err(FilterError::ParamFormat(format!("{} has dims {:?}", b.name, b.dims)));
    }
    for (dst, src) in l.weight.iter_mut().zip(&w.data) {
        *dst = *src;
    }
    for (dst, src) in l.bias.iter_mut().zip(&b.data) {
        *dst = *src;
    }
    Ok(())
}

/// Overwrites the parameters of `net` (whose architecture must match) from
/// arrays named with an optional `prefix`.
pub fn load_into(net: &mut DenseNet, prefix: Option<&str>, arrays: &[NamedArray]) -> Result<()> {
    let mut layers: Vec<Layer> = net.layers().to_vec();
    for (i, layer) in layers.iter_mut().enumerate() {
        let base = match prefix {
            Some(p) => format!("{p}.layer{i}"),
            None => format!("layer{i}"),
        };
        match layer {
            Layer::Linear(l) => fill_linear(l, &base, arrays)?,
            Layer::Relu => {}
            Layer::Residual(b) => {
                fill_linear(&mut b.inner, &format!("{base}.inner"), arrays)?;
                fill_linear(&mut b.outer, &format!("{base}.outer"), arrays)?;
            }
        }
    }
    *net = DenseNet::from_layers(layers, net.input_dim())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dense::NetLayout;
    use crate::rng::RandomSource;

    #[test]
    fn roundtrip_restores_parameters() {
        let net = DenseNet::init(NetLayout::new(3, 8, 2, 2), &RandomSource::new(1), false).unwrap();
        let mut bytes = Vec::new();
        write_arrays(&mut bytes, &prefixed("f", to_named_arrays(&net))).unwrap();
        let arrays = read_arrays(bytes.as_slice()).unwrap();
        let mut other = DenseNet::init(NetLayout::new(3, 8, 2, 2), &RandomSource::new(2), false).unwrap();
        assert_ne!(other, net);
        load_into(&mut other, Some("f"), &arrays).unwrap();
        assert_eq!(other, net);
    }

    #[test]
    fn header_layout_is_fixed() {
        let net = DenseNet::init(NetLayout::new(1, 1, 0, 1), &RandomSource::new(1), true).unwrap();
        let mut bytes = Vec::new();
        write_arrays(&mut bytes, &to_named_arrays(&net)).unwrap();
        assert_eq!(&bytes[..8], b"OTFPARAM");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        let name_len = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        assert_eq!(&bytes[20..20 + name_len], b"layer0.weight");
    }

    #[test]
    fn mismatched_architecture_is_rejected() {
        let net = DenseNet::init(NetLayout::new(3, 8, 1, 2), &RandomSource::new(1), false).unwrap();
        let arrays = to_named_arrays(&net);
        let mut other = DenseNet::init(NetLayout::new(3, 4, 1, 2), &RandomSource::new(1), false).unwrap();
        assert!(load_into(&mut other, None, &arrays).is_err());
        assert!(read_arrays(&b"NOTMAGIC"[..]).is_err());
    }
}
