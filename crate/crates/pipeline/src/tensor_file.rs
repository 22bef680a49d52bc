//! `.rntd` tensor files.
//!
//! Layout, all little-endian: the ASCII magic `RNTD`, a `u32` rank, `rank`
//! `u32` dimensions, then the row-major payload as IEEE-754 `f64`.

use std::fs;
use std::path::Path;

use transducer_distill_core::{FeatureMatrix, LogitLattice, Matrix};

use crate::error::{PipelineError, Result};

pub const MAGIC: &[u8; 4] = b"RNTD";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> std::result::Result<Self, String> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            dims: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn from_vector(v: &[f64]) -> Self {
        Self {
            dims: vec![v.len()],
            data: v.to_vec(),
        }
    }

    pub fn from_lattice(l: &LogitLattice) -> Self {
        let (t, u, k) = l.shape();
        Self {
            dims: vec![t, u, k],
            data: l.as_slice().to_vec(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cursor = bytes;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            if cursor.len() < n {
                return Err(format!(
                    "truncated: wanted {n} more bytes, {} left",
                    cursor.len()
                ));
            }
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let read_u32 = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
        let rank = read_u32(take(4)?);
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(take(4)?));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or("dimension product overflows")?;
        let payload = take(count.checked_mul(8).ok_or("payload size overflows")?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if !cursor.is_empty() {
            return Err(format!("{} trailing bytes", cursor.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn into_matrix(self) -> std::result::Result<Matrix, String> {
        match self.dims[..] {
            [rows, cols] => Matrix::from_vec(rows, cols, self.data).map_err(|e| e.to_string()),
            _ => Err(format!(
                "expected a rank-2 tensor, got dims {:?}",
                self.dims
            )),
        }
    }

    pub fn into_lattice(self) -> std::result::Result<LogitLattice, String> {
        match self.dims[..] {
            [t, u, k] if u >= 1 => {
                LogitLattice::from_vec(t, u - 1, k, self.data).map_err(|e| e.to_string())
            }
            _ => Err(format!(
                "expected a T x (U+1) x K tensor, got dims {:?}",
                self.dims
            )),
        }
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    fs::write(path, tensor.encode()).map_err(PipelineError::io(path))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(PipelineError::io(path))?;
    Tensor::decode(&bytes).map_err(|reason| PipelineError::TensorFormat {
        path: path.to_path_buf(),
        reason,
    })
}

fn format_err(path: &Path) -> impl FnOnce(String) -> PipelineError + '_ {
    move |reason| PipelineError::TensorFormat {
        path: path.to_path_buf(),
        reason,
    }
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    read_tensor(path)?.into_matrix().map_err(format_err(path))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    Ok(FeatureMatrix::new(read_matrix(path)?)?)
}

pub fn read_lattice(path: &Path) -> Result<LogitLattice> {
    read_tensor(path)?.into_lattice().map_err(format_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -0.5]).unwrap();
        let bytes = t.encode();
        let mut expected = b"RNTD".to_vec();
        expected.extend_from_slice(&[2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&(-0.5f64).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Tensor::decode(b"RNTX\0\0\0\0").is_err());
        let mut bytes = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().encode();
        bytes.pop();
        assert!(Tensor::decode(&bytes).is_err());
        bytes.extend_from_slice(&[0, 0]);
        assert!(Tensor::decode(&bytes).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn scalar_tensor_has_rank_zero() {
        let t = Tensor::new(vec![], vec![4.25]).unwrap();
        assert_eq!(Tensor::decode(&t.encode()).unwrap(), t);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(dims in proptest::collection::vec(0usize..5, 0..4), seed in any::<u64>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n as u64)
                .map(|i| f64::from_bits(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i).rotate_left(17)))
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = Tensor::decode(&t.encode()).unwrap();
            prop_assert_eq!(&back.dims, &t.dims);
            let a: Vec<u64> = back.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = t.data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
