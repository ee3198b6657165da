//! Dense row-major tensor and the `PFT1` binary file format.
//!
//! Layout: magic `PFT1`, u8 dtype code (1 = f32, 2 = f64), u8 ndim,
//! ndim little-endian u32 dims, then the row-major little-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const PFT_MAGIC: &[u8; 4] = b"PFT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F = f32> {
    dims: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(dims: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Shape(format!("dims must be positive, got {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![F::zero(); n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Changes precision, keeping the shape.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| G::lit(v.as_f64())).collect(),
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(PFT_MAGIC);
        out.push(F::DTYPE);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.reserve(self.data.len() * F::BYTES);
        for &v in &self.data {
            v.write_le(out);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + F::BYTES * self.data.len());
        self.encode(&mut out);
        out
    }

    /// Decodes one tensor from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let bad = |reason: String| Error::format("PFT1 tensor", reason);
        if bytes.len() < 6 || &bytes[..4] != PFT_MAGIC {
            return Err(bad("missing PFT1 magic".into()));
        }
        if bytes[4] != F::DTYPE {
            return Err(bad(format!(
                "dtype code {} does not match expected {}",
                bytes[4],
                F::DTYPE
            )));
        }
        let ndim = bytes[5] as usize;
        if ndim == 0 {
            return Err(bad("zero-dimensional tensor".into()));
        }
        let header = 6 + 4 * ndim;
        if bytes.len() < header {
            return Err(bad("truncated dims".into()));
        }
        let dims: Vec<usize> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("dims overflow".into()))?;
        let end = header + count * F::BYTES;
        if bytes.len() < end {
            return Err(bad(format!(
                "payload holds {} bytes, dims {dims:?} need {}",
                bytes.len() - header,
                count * F::BYTES
            )));
        }
        let data = bytes[header..end]
            .chunks_exact(F::BYTES)
            .map(F::read_le)
            .collect();
        Ok((Self::new(dims, data)?, end))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (t, used) = Self::decode(bytes)?;
        if used != bytes.len() {
            return Err(Error::format(
                "PFT1 tensor",
                format!("{} trailing bytes", bytes.len() - used),
            ));
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_shape_mismatch() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Tensor::<f32>::new(vec![2], vec![0.0, f32::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[..4], b"PFT1");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 2);
        assert_eq!(&b[6..10], &1u32.to_le_bytes());
        assert_eq!(&b[10..14], &2u32.to_le_bytes());
        assert_eq!(&b[14..18], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 22);
    }

    #[test]
    fn truncated_and_trailing_payloads_rejected() {
        let b = Tensor::<f32>::new(vec![3], vec![1.0, 2.0, 3.0])
            .unwrap()
            .to_bytes();
        assert!(Tensor::<f32>::from_bytes(&b[..b.len() - 1]).is_err());
        let mut longer = b.clone();
        longer.push(0);
        assert!(Tensor::<f32>::from_bytes(&longer).is_err());
        assert!(Tensor::<f64>::from_bytes(&b).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let mut s = seed;
            let data: Vec<f32> = (0..n)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let v = f32::from_bits((s >> 32) as u32);
                    if v.is_finite() { v } else { 0.5 }
                })
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = Tensor::<f32>::from_bytes(&t.to_bytes()).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
