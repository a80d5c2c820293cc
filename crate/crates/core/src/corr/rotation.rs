use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// One `d_mlp × d_mlp` mixing matrix per layer; unit `j` of layer `l` is
/// `(R_l v)_j` where `v` holds that layer's neuron activations.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationBaseline {
    seed: Option<u64>,
    d_mlp: usize,
    rotations: Vec<Array2<f64>>,
}

impl RotationBaseline {
    /// I.i.d. standard Gaussian entries, layers drawn in order from one seeded stream.
    pub fn gaussian(n_layer: usize, d_mlp: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rotations = (0..n_layer)
            .map(|_| Array2::from_shape_simple_fn((d_mlp, d_mlp), || StandardNormal.sample(&mut rng)))
            .collect();
        Self {
            seed: Some(seed),
            d_mlp,
            rotations,
        }
    }

    pub fn identity(n_layer: usize, d_mlp: usize) -> Self {
        Self {
            seed: None,
            d_mlp,
            rotations: (0..n_layer).map(|_| Array2::eye(d_mlp)).collect(),
        }
    }

    pub fn from_matrices(rotations: Vec<Array2<f64>>) -> Result<Self> {
        let d_mlp = rotations.first().map_or(0, |r| r.nrows());
        if rotations.iter().any(|r| r.dim() != (d_mlp, d_mlp)) {
            return Err(Error::Shape("rotation matrices must all be d_mlp × d_mlp".into()));
        }
        Ok(Self {
            seed: None,
            d_mlp,
            rotations,
        })
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn n_layer(&self) -> usize {
        self.rotations.len()
    }

    pub fn d_mlp(&self) -> usize {
        self.d_mlp
    }

    pub fn matrix(&self, layer: usize) -> &Array2<f64> {
        &self.rotations[layer]
    }

    /// Rotates a `tokens × (n_layer · d_mlp)` layer-major activation batch.
    pub fn rotate(&self, acts: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let width = self.n_layer() * self.d_mlp;
        if acts.ncols() != width {
            return Err(Error::Shape(format!(
                "rotation covers {width} neurons, batch has {}",
                acts.ncols()
            )));
        }
        let mut out = Array2::zeros(acts.raw_dim());
        for (l, r) in self.rotations.iter().enumerate() {
            let cols = s![.., l * self.d_mlp..(l + 1) * self.d_mlp];
            let mut dst = out.slice_mut(cols);
            general_mat_mul(1.0, &acts.slice(cols), &r.t(), 0.0, &mut dst);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_baseline_is_reproducible() {
        let a = RotationBaseline::gaussian(2, 5, 9);
        let b = RotationBaseline::gaussian(2, 5, 9);
        let c = RotationBaseline::gaussian(2, 5, 10);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a.matrix(0), a.matrix(1));
    }

    #[test]
    fn rotation_applies_per_layer() {
        let r = RotationBaseline::from_matrices(vec![
            ndarray::arr2(&[[0.0, 1.0], [1.0, 0.0]]),
            ndarray::arr2(&[[2.0, 0.0], [1.0, 1.0]]),
        ])
        .unwrap();
        let acts = ndarray::arr2(&[[1.0, 2.0, 3.0, 4.0]]);
        let out = r.rotate(acts.view()).unwrap();
        assert_eq!(out, ndarray::arr2(&[[2.0, 1.0, 6.0, 7.0]]));
    }

    #[test]
    fn identity_rotation_is_bitwise_exact() {
        let acts = Array2::from_shape_fn((7, 6), |(i, j)| ((i * 31 + j * 17) as f64).sin() * 1e3);
        let out = RotationBaseline::identity(2, 3).rotate(acts.view()).unwrap();
        assert!(out.iter().zip(acts.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
