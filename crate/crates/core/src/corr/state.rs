use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Default neuron tile edge for the cross-product accumulator.
pub const DEFAULT_TILE: usize = 256;

/// Running sums for Pearson correlation between every neuron of population A
/// and every neuron of population B.
///
/// Memory is `O(N_A * N_B)` regardless of stream length. All sums are f64.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrState {
    n: u64,
    sum_a: Array1<f64>,
    sumsq_a: Array1<f64>,
    sum_b: Array1<f64>,
    sumsq_b: Array1<f64>,
    cross: Array2<f64>,
    tile: usize,
}

impl CorrState {
    pub fn new(n_a: usize, n_b: usize) -> Self {
        Self {
            n: 0,
            sum_a: Array1::zeros(n_a),
            sumsq_a: Array1::zeros(n_a),
            sum_b: Array1::zeros(n_b),
            sumsq_b: Array1::zeros(n_b),
            cross: Array2::zeros((n_a, n_b)),
            tile: DEFAULT_TILE,
        }
    }

    /// Sets the tile edge; results are deterministic for a fixed tile size.
    pub fn with_tile_size(mut self, tile: usize) -> Self {
        self.tile = tile.max(1);
        self
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn dims(&self) -> (usize, usize) {
        self.cross.dim()
    }

    pub fn sums_a(&self) -> (&Array1<f64>, &Array1<f64>) {
        (&self.sum_a, &self.sumsq_a)
    }

    pub fn sums_b(&self) -> (&Array1<f64>, &Array1<f64>) {
        (&self.sum_b, &self.sumsq_b)
    }

    pub fn cross(&self) -> &Array2<f64> {
        &self.cross
    }

    /// Adds the rows of `a` (`tokens × N_A`) and `b` (`tokens × N_B`) whose
    /// mask entry is `true`. Rows must refer to the same token positions.
    pub fn update(
        &mut self,
        a: ArrayView2<'_, f32>,
        b: ArrayView2<'_, f32>,
        mask: Option<&[bool]>,
    ) -> Result<()> {
        if a.nrows() != b.nrows() {
            return Err(Error::Shape(format!(
                "batches cover {} and {} tokens",
                a.nrows(),
                b.nrows()
            )));
        }
        if let Some(m) = mask {
            if m.len() != a.nrows() {
                return Err(Error::Shape(format!(
                    "mask has {} entries for {} tokens",
                    m.len(),
                    a.nrows()
                )));
            }
        }
        let a = select_rows_f64(a, mask);
        let b = select_rows_f64(b, mask);
        self.update_f64(a.view(), b.view())
    }

    /// Adds every row; callers have already dropped excluded positions.
    pub fn update_f64(&mut self, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
        let (n_a, n_b) = self.dims();
        if a.ncols() != n_a || b.ncols() != n_b {
            return Err(Error::Shape(format!(
                "state tracks {n_a}×{n_b} neurons, batch has {}×{}",
                a.ncols(),
                b.ncols()
            )));
        }
        if a.nrows() != b.nrows() {
            return Err(Error::Shape(format!(
                "batches cover {} and {} tokens",
                a.nrows(),
                b.nrows()
            )));
        }
        if a.nrows() == 0 {
            return Ok(());
        }
        self.n += a.nrows() as u64;
        self.sum_a += &a.sum_axis(Axis(0));
        self.sumsq_a += &a.mapv(|x| x * x).sum_axis(Axis(0));
        self.sum_b += &b.sum_axis(Axis(0));
        self.sumsq_b += &b.mapv(|x| x * x).sum_axis(Axis(0));

        let tile = self.tile;
        self.cross
            .axis_chunks_iter_mut(Axis(0), tile)
            .into_par_iter()
            .enumerate()
            .for_each(|(ti, mut rows)| {
                let i0 = ti * tile;
                let a_t = a.slice(s![.., i0..i0 + rows.nrows()]);
                let mut j0 = 0;
                while j0 < n_b {
                    let j1 = (j0 + tile).min(n_b);
                    let mut out = rows.slice_mut(s![.., j0..j1]);
                    general_mat_mul(1.0, &a_t.t(), &b.slice(s![.., j0..j1]), 1.0, &mut out);
                    j0 = j1;
                }
            });
        Ok(())
    }

    /// Combines two states; equal to the state of the concatenated stream.
    pub fn merge(&mut self, other: &CorrState) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "cannot merge {:?} with {:?}",
                self.dims(),
                other.dims()
            )));
        }
        self.n += other.n;
        self.sum_a += &other.sum_a;
        self.sumsq_a += &other.sumsq_a;
        self.sum_b += &other.sum_b;
        self.sumsq_b += &other.sumsq_b;
        self.cross += &other.cross;
        Ok(())
    }

    /// Pearson correlation matrix `N_A × N_B`, clamped to `[-1, 1]`.
    ///
    /// Entries touching a zero-variance neuron are NaN.
    pub fn finalize(&self) -> Result<Array2<f64>> {
        if self.n < 2 {
            return Err(Error::Numeric(format!(
                "correlation needs at least 2 samples, have {}",
                self.n
            )));
        }
        let n = self.n as f64;
        let centered_ss = |sum: &Array1<f64>, sumsq: &Array1<f64>| -> Array1<f64> {
            Array1::from_iter(sum.iter().zip(sumsq).map(|(&s, &ss)| {
                let mean = s / n;
                let v = ss - n * mean * mean;
                if v <= ZERO_VARIANCE_REL * ss.abs() || v <= 0.0 {
                    f64::NAN
                } else {
                    v.sqrt()
                }
            }))
        };
        let sd_a = centered_ss(&self.sum_a, &self.sumsq_a);
        let sd_b = centered_ss(&self.sum_b, &self.sumsq_b);
        let mean_b = &self.sum_b / n;
        let mut out = self.cross.clone();
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                let mean_a = self.sum_a[i] / n;
                for (j, x) in row.iter_mut().enumerate() {
                    let r = (*x - n * mean_a * mean_b[j]) / (sd_a[i] * sd_b[j]);
                    *x = if r.is_nan() { f64::NAN } else { r.clamp(-1.0, 1.0) };
                }
            });
        Ok(out)
    }
}

/// Relative threshold below which a centered sum of squares counts as zero.
const ZERO_VARIANCE_REL: f64 = 1e-10;

pub(crate) fn select_rows_f64(x: ArrayView2<'_, f32>, mask: Option<&[bool]>) -> Array2<f64> {
    match mask {
        None => x.mapv(f64::from),
        Some(m) => {
            let keep: Vec<usize> = m
                .iter()
                .enumerate()
                .filter_map(|(i, &k)| k.then_some(i))
                .collect();
            let mut out = Array2::zeros((keep.len(), x.ncols()));
            for (dst, &src) in keep.iter().enumerate() {
                out.row_mut(dst).assign(&x.row(src).mapv(f64::from));
            }
            out
        }
    }
}
