//! Binary tensor (`CPKT1`) and model (`CPKM1`) files.
//!
//! Both are little-endian: the 5-byte magic, `u64` header fields, then
//! IEEE-754 `f64` payload in row-major order.
//!
//! ```text
//! CPKT1 | N | s_1 .. s_N | data (Π s_n values)
//! CPKM1 | N | R | s_1 .. s_N | A(1) .. A(N), each s_n × R row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CpError, Result};
use crate::kruskal::KruskalModel;
use crate::tensor::{DenseTensor, Matrix};

pub const TENSOR_MAGIC: &[u8; 5] = b"CPKT1";
pub const MODEL_MAGIC: &[u8; 5] = b"CPKM1";

/// Refuse headers describing more values than this.
const MAX_PAYLOAD: u64 = 1 << 32;

pub fn write_tensor<W: Write>(mut w: W, t: &DenseTensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    write_u64(&mut w, t.order() as u64)?;
    for &d in t.dims() {
        write_u64(&mut w, d as u64)?;
    }
    write_f64s(&mut w, t.as_slice())?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<DenseTensor> {
    expect_magic(&mut r, TENSOR_MAGIC)?;
    let order = read_u64(&mut r)?;
    let dims = read_dims(&mut r, order)?;
    let len = payload_len(&dims)?;
    let data = read_f64s(&mut r, len)?;
    DenseTensor::new(dims, data)
}

pub fn write_model<W: Write>(mut w: W, m: &KruskalModel) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    write_u64(&mut w, m.order() as u64)?;
    write_u64(&mut w, m.rank() as u64)?;
    for &d in m.dims() {
        write_u64(&mut w, d as u64)?;
    }
    for f in m.factors() {
        write_f64s(&mut w, f.as_slice())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<KruskalModel> {
    expect_magic(&mut r, MODEL_MAGIC)?;
    let order = read_u64(&mut r)?;
    let rank = read_u64(&mut r)?;
    if rank == 0 || rank > MAX_PAYLOAD {
        return Err(CpError::Format(format!("implausible rank {rank}")));
    }
    let dims = read_dims(&mut r, order)?;
    let total: u64 = dims.iter().map(|&d| d as u64 * rank).sum();
    if total > MAX_PAYLOAD {
        return Err(CpError::Format(format!("model payload of {total} values")));
    }
    let factors = dims
        .iter()
        .map(|&s| Matrix::from_vec(s, rank as usize, read_f64s(&mut r, s * rank as usize)?))
        .collect::<Result<Vec<_>>>()?;
    KruskalModel::new(factors)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    write_tensor(BufWriter::new(File::create(path)?), t)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    read_tensor(BufReader::new(File::open(path)?))
}

pub fn save_model(path: impl AsRef<Path>, m: &KruskalModel) -> Result<()> {
    write_model(BufWriter::new(File::create(path)?), m)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<KruskalModel> {
    read_model(BufReader::new(File::open(path)?))
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 5]) -> Result<()> {
    let mut buf = [0u8; 5];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(CpError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn read_dims<R: Read>(r: &mut R, order: u64) -> Result<Vec<usize>> {
    if order == 0 || order > 64 {
        return Err(CpError::Format(format!("implausible order {order}")));
    }
    (0..order)
        .map(|_| {
            let d = read_u64(r)?;
            if d == 0 || d > MAX_PAYLOAD {
                return Err(CpError::Format(format!("implausible extent {d}")));
            }
            Ok(d as usize)
        })
        .collect()
}

fn payload_len(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .filter(|&n| n <= MAX_PAYLOAD)
        .map(|n| n as usize)
        .ok_or_else(|| CpError::Format(format!("payload for dims {dims:?} too large")))
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn write_f64s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tensor_layout_is_bit_exact() {
        let t = DenseTensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut expected = b"CPKT1".to_vec();
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.5f64.to_le_bytes());
        expected.extend_from_slice(&(-2.0f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn model_layout_is_bit_exact() {
        let m = KruskalModel::new(vec![
            Matrix::from_rows(&[[1.0, 2.0]]),
            Matrix::from_rows(&[[3.0, 4.0], [5.0, 6.0]]),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        assert_eq!(&buf[..5], b"CPKM1");
        assert_eq!(buf.len(), 5 + 8 * 4 + 8 * 6);
        assert_eq!(&buf[5..13], &2u64.to_le_bytes());
        assert_eq!(&buf[13..21], &2u64.to_le_bytes());
        let payload: Vec<f64> = buf[37..].chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(payload, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(read_model(&buf[..]).unwrap(), m);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let t = DenseTensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert!(matches!(read_model(&buf[..]), Err(CpError::Format(_))));
        assert!(read_tensor(&buf[..buf.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn tensor_round_trip(dims in prop::collection::vec(1usize..4, 1..4), vals in prop::collection::vec(-1e6f64..1e6, 64)) {
            let t = DenseTensor::from_fn(dims, |i| vals[i.iter().sum::<usize>() * 7 % 64]).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            prop_assert_eq!(read_tensor(&buf[..]).unwrap(), t);
        }
    }
}
