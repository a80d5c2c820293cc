use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{check_header, read_exact_or, ExclusionSet, FORMAT_VERSION};
use crate::error::{Error, Result};

pub const TOKEN_MAGIC: [u8; 4] = *b"UNRT";

/// Tokenized documents plus the evaluation window length.
///
/// Documents longer than `context_length` are evaluated as consecutive
/// windows; positions inside a window restart at zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub context_length: u32,
    pub documents: Vec<Vec<u32>>,
}

/// One evaluation window. `offset` indexes the flattened token sequence.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub document: usize,
    pub offset: usize,
    pub tokens: &'a [u32],
}

impl TokenStream {
    pub fn new(context_length: u32, documents: Vec<Vec<u32>>) -> Result<Self> {
        if context_length == 0 {
            return Err(Error::Invalid("context length must be positive".into()));
        }
        Ok(Self {
            context_length,
            documents,
        })
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    pub fn flat_tokens(&self) -> impl Iterator<Item = u32> + '_ {
        self.documents.iter().flatten().copied()
    }

    pub fn windows(&self) -> Vec<Window<'_>> {
        let ctx = self.context_length as usize;
        let mut out = Vec::new();
        let mut offset = 0;
        for (document, doc) in self.documents.iter().enumerate() {
            for chunk in doc.chunks(ctx) {
                out.push(Window {
                    document,
                    offset,
                    tokens: chunk,
                });
                offset += chunk.len();
            }
        }
        out
    }

    pub fn max_token(&self) -> Option<u32> {
        self.flat_tokens().max()
    }

    pub fn validate_vocab(&self, d_vocab: usize) -> Result<()> {
        match self.flat_tokens().find(|&t| t as usize >= d_vocab) {
            Some(id) => Err(Error::TokenOutOfRange { id, d_vocab }),
            None => Ok(()),
        }
    }

    /// `true` at positions that may enter statistics.
    pub fn validity_mask(&self, exclusions: &ExclusionSet) -> Vec<bool> {
        self.flat_tokens().map(|t| !exclusions.contains(t)).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&TOKEN_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.context_length.to_le_bytes())?;
        for doc in &self.documents {
            let len = u32::try_from(doc.len())
                .map_err(|_| Error::Invalid("document longer than u32::MAX tokens".into()))?;
            w.write_all(&len.to_le_bytes())?;
            let mut buf = Vec::with_capacity(doc.len() * 4);
            for t in doc {
                buf.extend_from_slice(&t.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        const WHAT: &str = "token stream";
        check_header(&mut r, &TOKEN_MAGIC, WHAT)?;
        let mut b = [0u8; 4];
        read_exact_or(&mut r, &mut b, WHAT)?;
        let context_length = u32::from_le_bytes(b);
        if context_length == 0 {
            return Err(Error::format(WHAT, "context length is zero"));
        }
        let mut documents = Vec::new();
        loop {
            // A clean EOF is only allowed on a record boundary.
            let n = read_record_len(&mut r)?;
            let Some(len) = n else { break };
            let mut bytes = vec![0u8; len as usize * 4];
            read_exact_or(&mut r, &mut bytes, WHAT)?;
            let doc = bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            documents.push(doc);
        }
        Ok(Self {
            context_length,
            documents,
        })
    }
}

fn read_record_len<R: Read>(r: &mut R) -> Result<Option<u32>> {
    let mut b = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = r.read(&mut b[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(Error::format("token stream", "truncated record header"));
        }
        filled += n;
    }
    Ok(Some(u32::from_le_bytes(b)))
}

/// A token stream together with its validity mask.
#[derive(Debug, Clone)]
pub struct MaskedTokens {
    pub stream: TokenStream,
    pub mask: Vec<bool>,
}

impl MaskedTokens {
    pub fn new(stream: TokenStream, exclusions: &ExclusionSet) -> Self {
        let mask = stream.validity_mask(exclusions);
        Self { stream, mask }
    }

    pub fn window_mask(&self, w: &Window<'_>) -> &[bool] {
        &self.mask[w.offset..w.offset + w.tokens.len()]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn write_token_stream(stream: &TokenStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    stream.write_to(BufWriter::new(f))
}

/// Reads a token stream, checks ids against `d_vocab` when given, and builds
/// the validity mask from `exclusions`.
pub fn read_token_stream(
    path: impl AsRef<Path>,
    exclusions: &ExclusionSet,
    d_vocab: Option<usize>,
) -> Result<MaskedTokens> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    let stream = TokenStream::read_from(BufReader::new(f))?;
    if let Some(d_vocab) = d_vocab {
        stream.validate_vocab(d_vocab)?;
    }
    Ok(MaskedTokens::new(stream, exclusions))
}
