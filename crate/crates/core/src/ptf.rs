//! Portable tensor format "PTF1".
//!
//! Layout: bytes 0-3 magic `PTF1`; byte 4 dtype code (0 = f32
//! little-endian); byte 5 rank r; r x u32 little-endian dims; raw
//! row-major payload. Checkpoints and exported latents all use this.

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PTF1";
const DTYPE_F32_LE: u8 = 0;

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let shape = tensor.shape();
    let mut out = Vec::with_capacity(6 + 4 * shape.len() + 4 * tensor.numel());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F32_LE);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let fail = |msg: String| Error::format(origin, msg);
    if bytes.len() < 6 {
        return Err(fail("truncated header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[0..4])));
    }
    if bytes[4] != DTYPE_F32_LE {
        return Err(fail(format!("unsupported dtype code {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    let dims_end = 6 + 4 * rank;
    if bytes.len() < dims_end {
        return Err(fail("truncated dims".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 6 + 4 * i;
        shape.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
    }
    let count = numel(&shape);
    let expected = dims_end + 4 * count;
    if bytes.len() != expected {
        return Err(fail(format!(
            "payload size {} does not match shape {:?} ({} bytes expected)",
            bytes.len() - dims_end,
            shape,
            4 * count
        )));
    }
    let data: Vec<f32> = bytes[dims_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(&shape, data)
}

pub fn write_file(path: &Path, tensor: &Tensor) -> Result<()> {
    let bytes = encode(tensor);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Tensor> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[0..4], b"PTF1");
        assert_eq!(b[4], 0);
        assert_eq!(b[5], 2);
        assert_eq!(u32::from_le_bytes(b[6..10].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[10..14].try_into().unwrap()), 3);
        assert_eq!(b.len(), 6 + 8 + 24);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let good = encode(&t);
        let p = PathBuf::from("<mem>");
        assert!(decode(&good, &p).is_ok());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode(&bad_magic, &p).is_err());
        let mut bad_dtype = good.clone();
        bad_dtype[4] = 9;
        assert!(decode(&bad_dtype, &p).is_err());
        assert!(decode(&good[..good.len() - 1], &p).is_err());
    }

    #[test]
    fn scalar_roundtrip() {
        let t = Tensor::scalar(-2.5);
        let back = decode(&encode(&t), &PathBuf::from("<mem>")).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.to_vec(), t.to_vec());
    }
}
