//! Minimal dense numerical kernel: row-major `f64` matrices, matrix
//! products, row-wise softmax, per-entry statistics over matrix samples,
//! and a counter-based splittable RNG that makes every dropout mask a pure
//! function of `(seed, shape, rate, draw index)`.
//!
//! Everything here is deterministic and immutable after construction;
//! [`RngStream`] is the only stateful object and advancing its counter is
//! its only state change.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// RngStream
// ---------------------------------------------------------------------------

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer. Full-avalanche mix of a 64-bit word.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based deterministic random stream.
///
/// Draw `i` of a stream with seed `s` is `mix64(s + (i+1)*GOLDEN_GAMMA)`,
/// so the whole sequence is a pure function of the seed and substreams can
/// be derived without consuming draws. Derived substreams mix a domain tag
/// into the seed, which keeps per-pass, per-layer, per-component masks
/// independently reproducible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0 }
    }

    /// Derive an independent stream for a tagged subdomain. Does not
    /// consume draws from `self`.
    pub fn substream(&self, tag: u64) -> RngStream {
        RngStream {
            seed: mix64(self.seed ^ mix64(tag.wrapping_add(GOLDEN_GAMMA))),
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer draw in `[0, n)`.
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Dense row-major matrix of `f64`.
///
/// `data[r * cols + c]` holds entry `(r, c)`. Invariant: the data length
/// equals `rows * cols` and every entry stays finite through public
/// operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                op: "from_vec",
                left: format!("{rows}x{cols}"),
                right: format!("len {}", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from nested row slices; rows must have equal lengths.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimMismatch {
                    op: "from_rows",
                    left: format!("row len {c}"),
                    right: format!("row len {}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    /// Matrix with entries drawn uniformly from `[lo, hi)`.
    pub fn random_uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut RngStream) -> Self {
        let data = (0..rows * cols).map(|_| rng.next_range(lo, hi)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Entrywise sum; shapes must match.
    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::DimMismatch {
                op: "add",
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("{}x{}", other.rows, other.cols),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Column slice `[lo, hi)` as a new matrix.
    pub fn columns(&self, lo: usize, hi: usize) -> Matrix {
        debug_assert!(lo <= hi && hi <= self.cols);
        let width = hi - lo;
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.data[r * width..(r + 1) * width]
                .copy_from_slice(&self.data[r * self.cols + lo..r * self.cols + hi]);
        }
        out
    }
}

/// Standard matrix product; `a.cols` must equal `b.rows`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::DimMismatch {
            op: "matmul",
            left: format!("{}x{}", a.rows, a.cols),
            right: format!("{}x{}", b.rows, b.cols),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    // ikj loop order keeps the inner loop streaming over contiguous rows.
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    debug_assert!(out.is_finite());
    Ok(out)
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
///
/// Rows may contain `-inf` entries (masked keys); those map to probability
/// zero. At least one entry per row must be finite.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        debug_assert!(max.is_finite(), "softmax row {r} has no finite entry");
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Per-entry population standard deviation across a list of equally
/// shaped matrices. A single sample yields the all-zero matrix.
pub fn column_std(samples: &[Matrix]) -> Result<Matrix> {
    let first = samples.first().ok_or(Error::EmptyInput("column_std"))?;
    let (rows, cols) = first.shape();
    for s in samples {
        if s.shape() != (rows, cols) {
            return Err(Error::DimMismatch {
                op: "column_std",
                left: format!("{rows}x{cols}"),
                right: format!("{}x{}", s.rows, s.cols),
            });
        }
    }
    let n = samples.len() as f64;
    let mut out = Matrix::zeros(rows, cols);
    for idx in 0..rows * cols {
        let mean = samples.iter().map(|s| s.data[idx]).sum::<f64>() / n;
        let var = samples
            .iter()
            .map(|s| {
                let d = s.data[idx] - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        out.data[idx] = var.sqrt();
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted-dropout mask: kept entries are scaled by `1/(1-rate)` at mask
/// time, so deterministic inference needs no rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
    rate: f64,
    scale: f64,
}

impl DropoutMask {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn kept(&self, r: usize, c: usize) -> bool {
        self.keep[r * self.cols + c]
    }

    pub fn keep_count(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }

    /// Multiply kept entries by `scale`, zero the rest.
    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        if m.shape() != (self.rows, self.cols) {
            return Err(Error::DimMismatch {
                op: "dropout apply",
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("{}x{}", m.rows, m.cols),
            });
        }
        let data = m
            .data
            .iter()
            .zip(&self.keep)
            .map(|(v, k)| if *k { v * self.scale } else { 0.0 })
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Per-entry multiplier view (scale or 0), used by backprop.
    pub fn multiplier(&self, r: usize, c: usize) -> f64 {
        if self.kept(r, c) {
            self.scale
        } else {
            0.0
        }
    }
}

/// Sample a dropout mask: each entry is kept independently with
/// probability `1 - rate`. The mask is a pure function of the stream
/// state, shape, and rate.
pub fn sample_dropout_mask(
    rng: &mut RngStream,
    shape: (usize, usize),
    rate: f64,
) -> Result<DropoutMask> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidRate { rate });
    }
    let (rows, cols) = shape;
    let keep = (0..rows * cols).map(|_| rng.next_f64() >= rate).collect();
    Ok(DropoutMask {
        rows,
        cols,
        keep,
        rate,
        scale: 1.0 / (1.0 - rate),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c, b);
    }

    #[test]
    fn matmul_hand_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), (1, 1));
        assert_eq!(c.get(0, 0), 11.0);
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = RngStream::new(7);
        let a = Matrix::random_uniform(5, 7, -1.0, 1.0, &mut rng);
        let b = Matrix::random_uniform(7, 3, -1.0, 1.0, &mut rng);
        let c = matmul(&a, &b).unwrap();
        // Independent triple-loop oracle in jki order.
        let mut expect = Matrix::zeros(5, 3);
        for j in 0..3 {
            for k in 0..7 {
                for i in 0..5 {
                    let v = expect.get(i, j) + a.get(i, k) * b.get(k, j);
                    expect.set(i, j, v);
                }
            }
        }
        for i in 0..5 {
            for j in 0..3 {
                assert!((c.get(i, j) - expect.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "{msg}");
    }

    #[test]
    fn softmax_symmetry() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let s = softmax_rows(&m);
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_hand_value() {
        let m = Matrix::from_rows(&[vec![1.0, 0.5]]).unwrap();
        let s = softmax_rows(&m);
        // e^1 / (e^1 + e^0.5)
        assert!((s.get(0, 0) - 0.6225).abs() < 1e-3);
        assert!((s.get(0, 1) - 0.3775).abs() < 1e-3);
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let m = Matrix::from_rows(&[vec![1000.0, 999.0]]).unwrap();
        let s = softmax_rows(&m);
        assert!(s.is_finite());
        let sum: f64 = s.row(0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_handles_masked_keys() {
        let m = Matrix::from_rows(&[vec![0.3, f64::NEG_INFINITY, 0.3]]).unwrap();
        let s = softmax_rows(&m);
        assert_eq!(s.get(0, 1), 0.0);
        assert!((s.get(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn column_std_zero_for_identical_samples() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let s = column_std(&[m.clone(), m]).unwrap();
        assert!(s.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn column_std_population_convention() {
        let a = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let s = column_std(&[a, b]).unwrap();
        // Population std of {0, 2} is 1, not sqrt(2).
        assert!((s.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn column_std_single_sample_is_zero() {
        let m = Matrix::from_rows(&[vec![5.0, -3.0]]).unwrap();
        let s = column_std(&[m]).unwrap();
        assert!(s.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn column_std_shape_mismatch() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(column_std(&[a, b]).is_err());
    }

    #[test]
    fn dropout_rate_zero_keeps_everything() {
        let mut rng = RngStream::new(1);
        let mask = sample_dropout_mask(&mut rng, (4, 4), 0.0).unwrap();
        assert_eq!(mask.keep_count(), 16);
        assert_eq!(mask.scale(), 1.0);
    }

    #[test]
    fn dropout_rate_one_rejected() {
        let mut rng = RngStream::new(1);
        assert!(matches!(
            sample_dropout_mask(&mut rng, (2, 2), 1.0),
            Err(Error::InvalidRate { .. })
        ));
    }

    #[test]
    fn dropout_keep_fraction_near_expectation() {
        let mut rng = RngStream::new(42);
        let mask = sample_dropout_mask(&mut rng, (100, 100), 0.3).unwrap();
        let frac = mask.keep_count() as f64 / 10_000.0;
        assert!((frac - 0.70).abs() < 0.02, "keep fraction {frac}");
    }

    #[test]
    fn dropout_mask_determinism() {
        let mut a = RngStream::new(9).substream(3);
        let mut b = RngStream::new(9).substream(3);
        let ma = sample_dropout_mask(&mut a, (8, 8), 0.25).unwrap();
        let mb = sample_dropout_mask(&mut b, (8, 8), 0.25).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn dropout_scale_is_exact_inverse() {
        let mut rng = RngStream::new(5);
        let mask = sample_dropout_mask(&mut rng, (2, 2), 0.2).unwrap();
        assert_eq!(mask.scale(), 1.0 / 0.8);
    }

    #[test]
    fn inverted_dropout_is_unbiased() {
        let input = Matrix::from_rows(&[vec![1.0, -2.0, 0.5, 3.0, -0.25, 4.0, 1.5, -1.0]]).unwrap();
        let mut rng = RngStream::new(11);
        let mut acc = vec![0.0; 8];
        let n = 10_000;
        for _ in 0..n {
            let mask = sample_dropout_mask(&mut rng, input.shape(), 0.3).unwrap();
            let dropped = mask.apply(&input).unwrap();
            for (a, v) in acc.iter_mut().zip(dropped.data()) {
                *a += v;
            }
        }
        for (a, x) in acc.iter().zip(input.data()) {
            let mean = a / n as f64;
            assert!(
                (mean - x).abs() <= 0.02 * x.abs(),
                "mean {mean} vs input {x}"
            );
        }
    }

    #[test]
    fn substreams_are_independent_of_parent_draws() {
        let parent = RngStream::new(123);
        let mut s1 = parent.substream(7);
        let mut parent2 = RngStream::new(123);
        parent2.next_u64();
        let mut s2 = parent2.substream(7);
        assert_eq!(s1.next_u64(), s2.next_u64());
    }

    #[test]
    fn rng_draws_are_pure_functions_of_seed_and_counter() {
        let mut a = RngStream::new(77);
        let first: Vec<u64> = (0..5).map(|_| a.next_u64()).collect();
        let mut b = RngStream::new(77);
        let second: Vec<u64> = (0..5).map(|_| b.next_u64()).collect();
        assert_eq!(first, second);
        assert_eq!(a.counter(), 5);
    }
}
