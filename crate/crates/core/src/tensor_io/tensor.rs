use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, ArrayView, Dimension, IxDyn};

use super::{check_header, read_u32, read_u64, FORMAT_VERSION};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"UNRN";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum DType {
    F32 = 0,
}

impl DType {
    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }
}

/// A dense row-major f32 tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    shape: Vec<u64>,
    data: Vec<f32>,
}

impl TensorFile {
    pub fn new(shape: Vec<u64>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Shape("tensor must have at least one dimension".into()));
        }
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let count = shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape(format!("shape {shape:?} overflows")))?;
        if count != data.len() as u64 {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {count} scalars but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_array<D: Dimension>(a: ArrayView<'_, f32, D>) -> Result<Self> {
        let shape = a.shape().iter().map(|&d| d as u64).collect();
        Self::new(shape, a.iter().copied().collect())
    }

    pub fn dtype(&self) -> DType {
        DType::F32
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_array(self) -> ArrayD<f32> {
        let shape: Vec<usize> = self.shape.iter().map(|&d| d as usize).collect();
        ArrayD::from_shape_vec(IxDyn(&shape), self.data).expect("shape validated on construction")
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&TENSOR_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dtype() as u32).to_le_bytes())?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for d in &self.shape {
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        const WHAT: &str = "tensor";
        check_header(&mut r, &TENSOR_MAGIC, WHAT)?;
        DType::from_code(read_u32(&mut r, WHAT)?)?;
        let ndim = read_u32(&mut r, WHAT)? as usize;
        if ndim == 0 || ndim > 16 {
            return Err(Error::format(WHAT, format!("implausible rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r, WHAT)?);
        }
        let count = shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c <= (usize::MAX / 4) as u64)
            .ok_or_else(|| Error::format(WHAT, format!("shape {shape:?} overflows")))?;

        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() as u64 != count * 4 {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {count} scalars but payload holds {} bytes",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(shape, data)
    }
}

pub fn write_tensor(t: &TensorFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    t.write_to(BufWriter::new(f))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    TensorFile::read_from(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(t: &TensorFile) -> Vec<u8> {
        let mut out = Vec::new();
        t.write_to(&mut out).unwrap();
        out
    }

    #[test]
    fn zeros_round_trip() {
        let t = TensorFile::new(vec![2, 3], vec![0.0; 6]).unwrap();
        let bytes = encode(&t);
        let back = TensorFile::read_from(&bytes[..]).unwrap();
        assert_eq!(back, t);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn declared_shape_must_match_data() {
        let err = TensorFile::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn short_payload_is_rejected() {
        let t = TensorFile::new(vec![2, 3], vec![1.0; 6]).unwrap();
        let mut bytes = encode(&t);
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            TensorFile::read_from(&bytes[..]).unwrap_err(),
            Error::Shape(_)
        ));
    }

    #[test]
    fn header_is_validated() {
        let t = TensorFile::new(vec![1], vec![1.0]).unwrap();
        let mut bytes = encode(&t);
        bytes[0] = b'X';
        assert!(matches!(
            TensorFile::read_from(&bytes[..]).unwrap_err(),
            Error::Format { .. }
        ));

        let mut bytes = encode(&t);
        bytes[8] = 7; // dtype code
        assert!(matches!(
            TensorFile::read_from(&bytes[..]).unwrap_err(),
            Error::UnsupportedDtype(7)
        ));

        assert!(matches!(
            TensorFile::read_from(&b"UNR"[..]).unwrap_err(),
            Error::Format { .. }
        ));
    }

    #[test]
    fn header_layout_is_stable() {
        let t = TensorFile::new(vec![2], vec![1.0, -2.0]).unwrap();
        let bytes = encode(&t);
        let mut expected = b"UNRN".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&0u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn random_scalars_survive_file_round_trip_bitwise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f32> = (0..1000).map(|_| f32::from_bits(rng.random())).collect();
        let t = TensorFile::new(vec![10, 100], data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        write_tensor(&t, &a).unwrap();
        let back = read_tensor(&a).unwrap();
        write_tensor(&back, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let same_bits = t
            .data()
            .iter()
            .zip(back.data())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same_bits);
    }

    proptest! {
        #[test]
        fn fuzzed_tensors_round_trip(
            shape in proptest::collection::vec(1u64..5, 1..4),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let n: u64 = shape.iter().product();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = (0..n).map(|_| f32::from_bits(rng.random())).collect();
            let t = TensorFile::new(shape, data).unwrap();
            let bytes = encode(&t);
            let back = TensorFile::read_from(&bytes[..]).unwrap();
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
