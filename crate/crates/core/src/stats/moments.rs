use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Streaming central moments of one scalar stream, mergeable in any split.
///
/// Kurtosis is reported without the excess correction: a Gaussian gives 3.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentState {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
    positives: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub skew: f64,
    pub kurtosis: f64,
    /// Fraction of values strictly above zero.
    pub sparsity: f64,
}

impl MomentState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
        if x > 0.0 {
            self.positives += 1;
        }
    }

    /// Exact two-pass moments of a slice.
    pub fn from_slice(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &x in xs {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        Self {
            n: xs.len() as u64,
            mean,
            m2,
            m3,
            m4,
            positives: xs.iter().filter(|&&x| x > 0.0).count() as u64,
        }
    }

    /// Pairwise combination of central moments.
    pub fn merge(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        let d2 = delta * delta;
        let d3 = d2 * delta;
        let d4 = d2 * d2;
        let mean = self.mean + delta * nb / n;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 = self.m3
            + other.m3
            + d3 * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n;
        *self = Self {
            n: self.n + other.n,
            mean,
            m2,
            m3,
            m4,
            positives: self.positives + other.positives,
        };
    }

    /// Needs at least 4 samples; skew and kurtosis are NaN at zero variance.
    pub fn finalize(&self) -> Result<Moments> {
        if self.n < 4 {
            return Err(Error::Numeric(format!(
                "moments need at least 4 samples, have {}",
                self.n
            )));
        }
        let n = self.n as f64;
        let var = self.m2 / n;
        let degenerate = var <= f64::EPSILON * self.mean.abs().max(1.0).powi(2) * 1e-4;
        let (skew, kurtosis) = if degenerate {
            (f64::NAN, f64::NAN)
        } else {
            ((self.m3 / n) / var.powf(1.5), (self.m4 / n) / (var * var))
        };
        Ok(Moments {
            count: self.n,
            mean: self.mean,
            variance: var,
            skew,
            kurtosis,
            sparsity: self.positives as f64 / n,
        })
    }
}

/// Moments of a finite vector, e.g. a neuron's effect on every vocabulary logit.
pub fn vector_moments(xs: &[f64]) -> Moments {
    let s = MomentState::from_slice(xs);
    let n = xs.len().max(1) as f64;
    let var = s.m2 / n;
    let (skew, kurtosis) = if var > 0.0 {
        ((s.m3 / n) / var.powf(1.5), (s.m4 / n) / (var * var))
    } else {
        (f64::NAN, f64::NAN)
    };
    Moments {
        count: s.n,
        mean: s.mean,
        variance: var,
        skew,
        kurtosis,
        sparsity: s.positives as f64 / n,
    }
}

/// One [`MomentState`] per neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentBank {
    states: Vec<MomentState>,
}

impl MomentBank {
    pub fn new(n_neurons: usize) -> Self {
        Self {
            states: vec![MomentState::new(); n_neurons],
        }
    }

    pub fn states(&self) -> &[MomentState] {
        &self.states
    }

    /// Merges the masked-in rows of a `tokens × neurons` batch.
    pub fn update(&mut self, batch: ArrayView2<'_, f32>, mask: Option<&[bool]>) -> Result<()> {
        if batch.ncols() != self.states.len() {
            return Err(Error::Shape(format!(
                "bank tracks {} neurons, batch has {}",
                self.states.len(),
                batch.ncols()
            )));
        }
        if let Some(m) = mask {
            if m.len() != batch.nrows() {
                return Err(Error::Shape(format!(
                    "mask has {} entries for {} tokens",
                    m.len(),
                    batch.nrows()
                )));
            }
        }
        self.states
            .par_iter_mut()
            .zip(batch.axis_iter(ndarray::Axis(1)).into_par_iter())
            .for_each(|(state, col)| {
                let xs: Vec<f64> = match mask {
                    Some(m) => col
                        .iter()
                        .zip(m)
                        .filter_map(|(&x, &keep)| keep.then_some(f64::from(x)))
                        .collect(),
                    None => col.iter().map(|&x| f64::from(x)).collect(),
                };
                state.merge(&MomentState::from_slice(&xs));
            });
        Ok(())
    }

    pub fn merge(&mut self, other: &MomentBank) -> Result<()> {
        if other.states.len() != self.states.len() {
            return Err(Error::Shape("moment banks track different neuron counts".into()));
        }
        for (a, b) in self.states.iter_mut().zip(&other.states) {
            a.merge(b);
        }
        Ok(())
    }

    pub fn finalize(&self) -> Result<Vec<Moments>> {
        self.states.iter().map(MomentState::finalize).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    /// Direct batch formulas, independent of the streaming code.
    fn batch(xs: &[f64]) -> (f64, f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let c = |p: i32| xs.iter().map(|x| (x - mean).powi(p)).sum::<f64>() / n;
        let var = c(2);
        (mean, var, c(3) / var.powf(1.5), c(4) / (var * var))
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn two_point_distribution() {
        let xs: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let m = MomentState::from_slice(&xs).finalize().unwrap();
        assert!(m.skew.abs() < 1e-12);
        assert!((m.kurtosis - 1.0).abs() < 1e-12);
        assert_eq!(m.sparsity, 0.5);
    }

    #[test]
    fn rare_spike_matches_closed_form() {
        // Exactly 1% of values are 10, the rest 0: a scaled Bernoulli(p).
        let p = 0.01f64;
        let q = 1.0 - p;
        let xs: Vec<f64> = (0..100_000).map(|i| if i % 100 == 37 { 10.0 } else { 0.0 }).collect();
        let mut s = MomentState::new();
        for &x in &xs {
            s.push(x);
        }
        let m = s.finalize().unwrap();
        assert!(rel(m.mean, 10.0 * p) < 0.01);
        assert!(rel(m.variance, 100.0 * p * q) < 0.01);
        assert!(rel(m.skew, (q - p) / (p * q).sqrt()) < 0.01);
        assert!(rel(m.kurtosis, (1.0 - 3.0 * p * q) / (p * q)) < 0.01);
    }

    #[test]
    fn streaming_matches_batch_on_long_stream() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * 0.7 + 0.2).exp() - 3.0
            })
            .collect();
        let (mean, var, skew, kurt) = batch(&xs);
        let mut pushed = MomentState::new();
        xs.iter().for_each(|&x| pushed.push(x));
        let mut merged = MomentState::new();
        for chunk in xs.chunks(777) {
            merged.merge(&MomentState::from_slice(chunk));
        }
        for s in [pushed, merged] {
            let m = s.finalize().unwrap();
            assert!(rel(m.mean, mean) < 1e-8);
            assert!(rel(m.variance, var) < 1e-8);
            assert!(rel(m.skew, skew) < 1e-8);
            assert!(rel(m.kurtosis, kurt) < 1e-8);
        }
    }

    #[test]
    fn sparsity_extremes() {
        let neg = MomentState::from_slice(&[-1.0, -2.0, -0.5, -3.0]).finalize().unwrap();
        let pos = MomentState::from_slice(&[1.0, 2.0, 0.5, 3.0]).finalize().unwrap();
        assert_eq!(neg.sparsity, 0.0);
        assert_eq!(pos.sparsity, 1.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(MomentState::from_slice(&[1.0, 2.0, 3.0]).finalize().is_err());
        let m = MomentState::from_slice(&[2.0; 10]).finalize().unwrap();
        assert!(m.skew.is_nan() && m.kurtosis.is_nan());
    }

    #[test]
    fn bank_respects_mask() {
        let batch = ndarray::arr2(&[[1.0f32, -1.0], [2.0, -2.0], [99.0, 99.0], [3.0, -3.0], [4.0, -4.0]]);
        let mut bank = MomentBank::new(2);
        bank.update(batch.view(), Some(&[true, true, false, true, true])).unwrap();
        let m = bank.finalize().unwrap();
        assert_eq!(m[0].count, 4);
        assert!((m[0].mean - 2.5).abs() < 1e-12);
        assert_eq!(m[1].sparsity, 0.0);
        assert!(bank.update(batch.view(), Some(&[true])).is_err());
    }

    proptest! {
        #[test]
        fn merge_is_split_invariant(
            xs in proptest::collection::vec(-50.0f64..50.0, 8..200),
            split in 0usize..200,
        ) {
            let split = split.min(xs.len());
            let whole = MomentState::from_slice(&xs);
            let mut a = MomentState::from_slice(&xs[..split]);
            a.merge(&MomentState::from_slice(&xs[split..]));
            let (w, m) = (whole.finalize().unwrap(), a.finalize().unwrap());
            prop_assert!((w.variance - m.variance).abs() <= 1e-8 * w.variance.max(1e-12));
            if w.variance > 1e-6 {
                prop_assert!((w.skew - m.skew).abs() <= 1e-6 * w.skew.abs().max(1.0));
                prop_assert!((w.kurtosis - m.kurtosis).abs() <= 1e-6 * w.kurtosis);
                // Pearson's bound.
                prop_assert!(w.kurtosis >= w.skew * w.skew + 1.0 - 1e-9);
            }
        }
    }
}
