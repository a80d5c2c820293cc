use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{check_header, read_exact_or, read_u64, FORMAT_VERSION};
use crate::error::{Error, Result};

pub const LABEL_MAGIC: [u8; 4] = *b"UNRL";

/// Binary per-token labels aligned one-to-one with a token stream.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelStream {
    labels: Vec<u8>,
}

impl LabelStream {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(pos) = labels.iter().position(|&l| l > 1) {
            return Err(Error::Invalid(format!(
                "label {} at position {pos} is not 0 or 1",
                labels[pos]
            )));
        }
        Ok(Self { labels })
    }

    pub fn from_bools(labels: impl IntoIterator<Item = bool>) -> Self {
        Self {
            labels: labels.into_iter().map(u8::from).collect(),
        }
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&LABEL_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.labels.len() as u64).to_le_bytes())?;
        w.write_all(&self.labels)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        const WHAT: &str = "label stream";
        check_header(&mut r, &LABEL_MAGIC, WHAT)?;
        let len = read_u64(&mut r, WHAT)?;
        let len = usize::try_from(len).map_err(|_| Error::format(WHAT, "length overflows"))?;
        let mut labels = vec![0u8; len];
        read_exact_or(&mut r, &mut labels, WHAT)?;
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::format(WHAT, "trailing bytes after labels"));
        }
        Self::new(labels)
    }
}

pub fn write_labels(labels: &LabelStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    labels.write_to(BufWriter::new(f))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelStream> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    LabelStream::read_from(BufReader::new(f))
}
