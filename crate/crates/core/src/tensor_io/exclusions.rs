use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token ids that never enter any statistic, grouped by category.
///
/// Stored as JSON next to the token stream, e.g.
/// `{"padding": [50256], "bos": [50256], "newline": [198, 628]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExclusionConfig {
    pub padding: Vec<u32>,
    pub bos: Vec<u32>,
    pub newline: Vec<u32>,
}

impl ExclusionConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn bos_token(&self) -> Option<u32> {
        self.bos.first().copied()
    }

    pub fn to_set(&self) -> ExclusionSet {
        ExclusionSet::from_ids(
            self.padding
                .iter()
                .chain(&self.bos)
                .chain(&self.newline)
                .copied(),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExclusionSet {
    ids: BTreeSet<u32>,
}

impl ExclusionSet {
    pub fn from_ids(ids: impl IntoIterator<Item = u32>) -> Self {
        Self {
            ids: ids.into_iter().collect(),
        }
    }

    pub fn contains(&self, id: u32) -> bool {
        self.ids.contains(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.ids.iter().copied()
    }

    pub fn check_vocab(&self, d_vocab: usize) -> Result<()> {
        match self.ids().find(|&t| t as usize >= d_vocab) {
            Some(id) => Err(Error::TokenOutOfRange { id, d_vocab }),
            None => Ok(()),
        }
    }
}
