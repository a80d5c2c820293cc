use std::collections::{HashMap, HashSet};

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::ids::{HeadId, NeuronId};

/// Named intermediate values of the forward pass.
///
/// Shapes, with `T` the window length:
/// residual points `[T, d_model]`, MLP points `[T, d_mlp]`,
/// `AttnPattern` `[head, T(dest), T(src)]`, `Value` `[head, T, d_head]`,
/// `HeadOut` `[head, T, d_model]` (the `W_O`-projected output without `b_O`),
/// `LnFinalScale` `[T]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HookPoint {
    ResidPre(usize),
    ResidMid(usize),
    ResidPost(usize),
    MlpPre(usize),
    MlpPost(usize),
    AttnPattern(usize),
    Value(usize),
    HeadOut(usize),
    LnFinalScale,
}

impl HookPoint {
    pub fn layer(self) -> Option<usize> {
        use HookPoint::*;
        match self {
            ResidPre(l) | ResidMid(l) | ResidPost(l) | MlpPre(l) | MlpPost(l)
            | AttnPattern(l) | Value(l) | HeadOut(l) => Some(l),
            LnFinalScale => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct HookSet {
    points: HashSet<HookPoint>,
}

impl HookSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, p: HookPoint) -> Self {
        self.points.insert(p);
        self
    }

    pub fn capture(&mut self, p: HookPoint) -> &mut Self {
        self.points.insert(p);
        self
    }

    pub fn contains(&self, p: HookPoint) -> bool {
        self.points.contains(&p)
    }

    pub fn iter(&self) -> impl Iterator<Item = HookPoint> + '_ {
        self.points.iter().copied()
    }
}

impl FromIterator<HookPoint> for HookSet {
    fn from_iter<I: IntoIterator<Item = HookPoint>>(iter: I) -> Self {
        Self {
            points: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct HookTrace {
    captured: HashMap<HookPoint, ArrayD<f32>>,
}

impl HookTrace {
    pub(crate) fn insert(&mut self, p: HookPoint, value: ArrayD<f32>) {
        self.captured.insert(p, value);
    }

    pub fn get(&self, p: HookPoint) -> Option<&ArrayD<f32>> {
        self.captured.get(&p)
    }

    pub fn require(&self, p: HookPoint) -> Result<&ArrayD<f32>> {
        self.get(p)
            .ok_or_else(|| Error::Invalid(format!("hook {p:?} was not captured")))
    }

    pub fn take(&mut self, p: HookPoint) -> Option<ArrayD<f32>> {
        self.captured.remove(&p)
    }

    pub fn len(&self) -> usize {
        self.captured.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captured.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Positions {
    All,
    At(Vec<usize>),
}

impl Positions {
    pub fn contains(&self, pos: usize) -> bool {
        match self {
            Positions::All => true,
            Positions::At(v) => v.contains(&pos),
        }
    }

    pub fn resolve(&self, len: usize) -> Vec<usize> {
        match self {
            Positions::All => (0..len).collect(),
            Positions::At(v) => v.clone(),
        }
    }
}

/// A declarative edit applied during the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Intervention {
    /// Overwrite the neuron's post-activation before it is multiplied by `W_out`.
    FixNeuron {
        neuron: NeuronId,
        value: f32,
        positions: Positions,
    },
    /// Remove `activation * w_out` of `source` from the query-side input of
    /// `target` at the given destination positions. Keys and values are untouched.
    PathAblate {
        source: NeuronId,
        target: HeadId,
        positions: Positions,
    },
}
