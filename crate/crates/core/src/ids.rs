//! `L{layer}.{index}` addressing for neurons and `L{layer}.H{head}` for heads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl NeuronId {
    pub fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }

    pub fn from_flat(flat: usize, d_mlp: usize) -> Self {
        Self::new(flat / d_mlp, flat % d_mlp)
    }

    pub fn flat(self, d_mlp: usize) -> usize {
        self.layer * d_mlp + self.index
    }
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}.{}", self.layer, self.index)
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}.H{}", self.layer, self.head)
    }
}

fn split_pair(s: &str, second_prefix: Option<char>) -> Option<(usize, usize)> {
    let s = s.trim();
    let s = s.strip_prefix(['L', 'l']).unwrap_or(s);
    let (a, b) = s.split_once('.')?;
    let b = match second_prefix {
        Some(p) => b
            .strip_prefix(p)
            .or_else(|| b.strip_prefix(p.to_ascii_lowercase()))
            .unwrap_or(b),
        None => b,
    };
    Some((a.parse().ok()?, b.parse().ok()?))
}

impl FromStr for NeuronId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        split_pair(s, None)
            .map(|(layer, index)| Self { layer, index })
            .ok_or_else(|| Error::Invalid(format!("bad neuron address {s:?}, expected L<layer>.<index>")))
    }
}

impl FromStr for HeadId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        split_pair(s, Some('H'))
            .map(|(layer, head)| Self { layer, head })
            .ok_or_else(|| Error::Invalid(format!("bad head address {s:?}, expected L<layer>.H<head>")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_layer_dot_addresses() {
        assert_eq!("L23.945".parse::<NeuronId>().unwrap(), NeuronId::new(23, 945));
        assert_eq!("4.3594".parse::<NeuronId>().unwrap(), NeuronId::new(4, 3594));
        assert_eq!("L5.H0".parse::<HeadId>().unwrap(), HeadId::new(5, 0));
        assert_eq!("5.3".parse::<HeadId>().unwrap(), HeadId::new(5, 3));
        assert!("L5".parse::<NeuronId>().is_err());
        assert!("L5.x".parse::<HeadId>().is_err());
        assert_eq!(NeuronId::new(22, 2882).to_string(), "L22.2882");
        assert_eq!(HeadId::new(5, 0).to_string(), "L5.H0");
    }

    #[test]
    fn flat_index_is_layer_major() {
        let n = NeuronId::new(2, 3);
        assert_eq!(n.flat(10), 23);
        assert_eq!(NeuronId::from_flat(23, 10), n);
    }
}
