//! Dense row-major tensors and the `FFT1` on-disk format.
//!
//! Everything in this crate moves through [`Tensor`]: images are `3xHxW`,
//! feature maps `CxHxW`, label maps `HxW`, conv weights `OxIxKhxKw`. Data is
//! contiguous row-major (last axis fastest). Values are expected to stay
//! finite; ops that can produce NaN/Inf validate their outputs.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Element type. `f64` by default; the `single-precision` feature switches the
/// whole crate to `f32` (file format stays 64-bit, see [`Tensor::write_fft1`]).
#[cfg(not(feature = "single-precision"))]
pub type Scalar = f64;
#[cfg(feature = "single-precision")]
pub type Scalar = f32;

pub const FFT1_MAGIC: &[u8; 4] = b"FFT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Scalar>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<Scalar>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::new",
                expected: format!("{n} elements for shape {shape:?}"),
                got: format!("{}", data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: Scalar) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> Scalar) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Scalar] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Scalar] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Scalar> {
        self.data
    }

    /// Reinterprets the flat buffer under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::reshape",
                expected: format!("{} elements", self.data.len()),
                got: format!("{n} for shape {shape:?}"),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Shape as `(channels, height, width)`; errors unless rank 3.
    pub fn dims3(&self, context: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::ShapeMismatch {
                context,
                expected: "rank-3 tensor (CxHxW)".into(),
                got: format!("{:?}", self.shape),
            }),
        }
    }

    /// Shape as `(height, width)`; errors unless rank 2.
    pub fn dims2(&self, context: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [h, w] => Ok((h, w)),
            _ => Err(Error::ShapeMismatch {
                context,
                expected: "rank-2 tensor (HxW)".into(),
                got: format!("{:?}", self.shape),
            }),
        }
    }

    /// Shape normalized to `(n, c, h, w)`: rank-3 tensors are a batch of one.
    pub fn dims4(&self, context: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((1, c, h, w)),
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::ShapeMismatch {
                context,
                expected: "rank-3 or rank-4 tensor".into(),
                got: format!("{:?}", self.shape),
            }),
        }
    }

    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> Scalar {
        let (_, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    #[inline]
    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: Scalar) {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x] = v;
    }

    pub fn map(&self, f: impl Fn(Scalar) -> Scalar) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * other`, used by SGD updates and gradient accumulation.
    pub fn axpy(&mut self, alpha: Scalar, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                context: "Tensor::axpy",
                expected: format!("{:?}", self.shape),
                got: format!("{:?}", other.shape),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: Scalar) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn validate_finite(&self, op: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op: op.to_string() })
        }
    }

    /// Exact element-wise equality including bit-level sign of zero.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Scalar {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Scalar::max)
    }

    // ---- FFT1 serialization -------------------------------------------------
    //
    // Layout: magic "FFT1", little-endian u32 rank, one little-endian u32 per
    // extent, then the elements as little-endian f64 in row-major order.

    pub fn write_fft1<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(FFT1_MAGIC)?;
        w.write_all(&(self.rank() as u32).to_le_bytes())?;
        for &e in &self.shape {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f64).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_fft1<R: Read>(r: &mut R) -> std::io::Result<std::result::Result<Tensor, String>> {
        let mut magic = [0u8; 4];
        if let Err(e) = r.read_exact(&mut magic) {
            return Err(e);
        }
        if &magic != FFT1_MAGIC {
            return Ok(Err(format!("bad magic {magic:?}")));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        if rank > 8 {
            return Ok(Err(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            r.read_exact(&mut u32buf)?;
            let e = u32::from_le_bytes(u32buf) as usize;
            shape.push(e);
            n = n.saturating_mul(e);
        }
        let mut payload = vec![0u8; n * 8];
        r.read_exact(&mut payload)?;
        let mut data = Vec::with_capacity(n);
        for chunk in payload.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Ok(Err("non-finite element".into()));
            }
            data.push(v as Scalar);
        }
        Ok(Ok(Tensor { shape, data }))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_fft1(&mut f).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let path = path.as_ref();
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut buf = std::io::BufReader::new(&mut f);
        match Tensor::read_fft1(&mut buf).map_err(|e| Error::io(path, e))? {
            Ok(t) => Ok(t),
            Err(reason) => Err(Error::BadTensorFile {
                path: path.to_path_buf(),
                reason,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_element_count() {
        let err = Tensor::new(&[2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn at3_uses_row_major_layout() {
        let t = Tensor::new(&[2, 2, 3], (0..12).map(|i| i as Scalar).collect()).unwrap();
        assert_eq!(t.at3(0, 0, 2), 2.0);
        assert_eq!(t.at3(0, 1, 0), 3.0);
        assert_eq!(t.at3(1, 0, 0), 6.0);
        assert_eq!(t.at3(1, 1, 2), 11.0);
    }

    #[test]
    fn fft1_golden_bytes() {
        // Hand-assembled file for a 2x2 tensor [[1, 2], [3, 4]].
        let mut want: Vec<u8> = Vec::new();
        want.extend_from_slice(b"FFT1");
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        for v in [1.0f64, 2.0, 3.0, 4.0] {
            want.extend_from_slice(&v.to_le_bytes());
        }

        let t = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut got = Vec::new();
        t.write_fft1(&mut got).unwrap();
        assert_eq!(got, want);

        let back = Tensor::read_fft1(&mut want.as_slice()).unwrap().unwrap();
        assert!(back.bit_eq(&t));
    }

    #[test]
    fn fft1_rejects_bad_magic() {
        let mut bytes = Vec::new();
        Tensor::new(&[1], vec![1.0])
            .unwrap()
            .write_fft1(&mut bytes)
            .unwrap();
        bytes[0] = b'X';
        let res = Tensor::read_fft1(&mut bytes.as_slice()).unwrap();
        assert!(res.is_err());
    }

    #[test]
    fn fft1_rejects_truncated_payload() {
        let mut bytes = Vec::new();
        Tensor::new(&[2, 2], vec![1.0; 4])
            .unwrap()
            .write_fft1(&mut bytes)
            .unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(Tensor::read_fft1(&mut bytes.as_slice()).is_err());
    }

    #[cfg(not(feature = "single-precision"))]
    #[test]
    fn fft1_rejects_non_finite_elements() {
        let mut bytes = Vec::new();
        Tensor::new(&[1], vec![f64::NAN])
            .unwrap()
            .write_fft1(&mut bytes)
            .unwrap();
        let res = Tensor::read_fft1(&mut bytes.as_slice()).unwrap();
        assert!(res.is_err());
    }

    #[test]
    fn axpy_accumulates() {
        let mut a = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::new(&[3], vec![10.0, 10.0, 10.0]).unwrap();
        a.axpy(0.5, &b).unwrap();
        assert_eq!(a.data(), &[6.0, 7.0, 8.0]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn shape_and_data() -> impl Strategy<Value = (Vec<usize>, Vec<Scalar>)> {
            proptest::collection::vec(1usize..=5, 1..=4).prop_flat_map(|shape| {
                let n: usize = shape.iter().product();
                let values = proptest::collection::vec(-1.0e12f64..1.0e12, n)
                    .prop_map(|vs| vs.into_iter().map(|v| v as Scalar).collect::<Vec<_>>());
                (Just(shape), values)
            })
        }

        proptest! {
            #[test]
            fn fft1_roundtrip_is_bitwise((shape, data) in shape_and_data()) {
                let t = Tensor::new(&shape, data).unwrap();
                let mut bytes = Vec::new();
                t.write_fft1(&mut bytes).unwrap();
                // Header is fixed-width, payload 8 bytes per element.
                prop_assert_eq!(bytes.len(), 8 + 4 * shape.len() + 8 * t.data().len());
                let back = Tensor::read_fft1(&mut bytes.as_slice()).unwrap().unwrap();
                prop_assert!(t.bit_eq(&back));
            }
        }
    }
}
