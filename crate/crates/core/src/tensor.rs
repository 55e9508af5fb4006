//! Minimal dense containers used across the crate.
//!
//! Everything is row-major `f32`. Reductions accumulate in `f64` in a fixed
//! left-to-right order, so results do not depend on scheduling.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Dense `[rows × cols]` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(alloc::format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn push_row(&mut self, row: &[f32]) {
        assert_eq!(row.len(), self.cols, "row width");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    /// Stack the rows of several matrices with equal width.
    pub fn vstack<'a>(cols: usize, parts: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let mut out = Matrix::zeros(0, cols);
        for part in parts {
            assert_eq!(part.cols, cols, "vstack width");
            out.data.extend_from_slice(&part.data);
            out.rows += part.rows;
        }
        out
    }
}

/// `[rows × n_heads × d_head]` tensor; each row is one token with the heads
/// laid out contiguously, so a row is also a `d_model` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMatrix {
    rows: usize,
    n_heads: usize,
    d_head: usize,
    data: Vec<f32>,
}

impl HeadMatrix {
    pub fn zeros(rows: usize, n_heads: usize, d_head: usize) -> Self {
        Self { rows, n_heads, d_head, data: vec![0.0; rows * n_heads * d_head] }
    }

    pub fn with_capacity(rows: usize, n_heads: usize, d_head: usize) -> Self {
        Self { rows: 0, n_heads, d_head, data: Vec::with_capacity(rows * n_heads * d_head) }
    }

    pub fn from_vec(rows: usize, n_heads: usize, d_head: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * n_heads * d_head {
            return Err(Error::Shape(alloc::format!(
                "head matrix {rows}x{n_heads}x{d_head} needs {} values, got {}",
                rows * n_heads * d_head,
                data.len()
            )));
        }
        Ok(Self { rows, n_heads, d_head, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    pub fn width(&self) -> usize {
        self.n_heads * self.d_head
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Full `d_model` row for token `i`.
    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let w = self.width();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Head `h` of token `i`.
    pub fn head(&self, i: usize, h: usize) -> &[f32] {
        let start = i * self.width() + h * self.d_head;
        &self.data[start..start + self.d_head]
    }

    pub fn head_mut(&mut self, i: usize, h: usize) -> &mut [f32] {
        let start = i * self.width() + h * self.d_head;
        let d = self.d_head;
        &mut self.data[start..start + d]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn push_row(&mut self, row: &[f32]) {
        assert_eq!(row.len(), self.width(), "row width");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn same_layout(&self, other: &HeadMatrix) -> bool {
        self.n_heads == other.n_heads && self.d_head == other.d_head
    }

    /// New matrix holding the given rows in order.
    pub fn gather(&self, rows: &[usize]) -> HeadMatrix {
        let mut out = HeadMatrix::with_capacity(rows.len(), self.n_heads, self.d_head);
        for &r in rows {
            out.push_row(self.row(r));
        }
        out
    }

    /// Copy of rows `range`.
    pub fn slice_rows(&self, range: core::ops::Range<usize>) -> HeadMatrix {
        let w = self.width();
        HeadMatrix {
            rows: range.len(),
            n_heads: self.n_heads,
            d_head: self.d_head,
            data: self.data[range.start * w..range.end * w].to_vec(),
        }
    }

    /// Append every row of `other`.
    pub fn extend_rows(&mut self, other: &HeadMatrix) {
        assert!(self.same_layout(other), "head layout");
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
    }

    /// Remove and return the first `n` rows.
    pub fn split_front(&mut self, n: usize) -> HeadMatrix {
        assert!(n <= self.rows, "split past end");
        let rest = self.data.split_off(n * self.width());
        let front = core::mem::replace(&mut self.data, rest);
        self.rows -= n;
        HeadMatrix { rows: n, n_heads: self.n_heads, d_head: self.d_head, data: front }
    }

    /// Column sum over all rows, accumulated in `f64`.
    pub fn row_sum(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.width()];
        for i in 0..self.rows {
            for (a, &x) in acc.iter_mut().zip(self.row(i)) {
                *a += x as f64;
            }
        }
        acc
    }

    /// Reinterpret as a plain `[rows × d_model]` matrix.
    pub fn into_matrix(self) -> Matrix {
        Matrix { rows: self.rows, cols: self.n_heads * self.d_head, data: self.data }
    }
}

/// Dot product with `f64` accumulation.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x as f64 * y as f64).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += x[l] as f64 * y[l] as f64;
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

#[inline]
pub fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        let (x, y): (&[f64; 4], &[f64; 4]) = (x.try_into().unwrap(), y.try_into().unwrap());
        lanes[0] += x[0] * y[0];
        lanes[1] += x[1] * y[1];
        lanes[2] += x[2] * y[2];
        lanes[3] += x[3] * y[3];
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// `out = weight · input` for an out-major `[out.len() × d_in]` weight.
#[inline]
pub fn matvec(weight: &[f32], d_in: usize, input: &[f32], out: &mut [f32]) {
    debug_assert_eq!(input.len(), d_in);
    debug_assert_eq!(weight.len(), d_in * out.len());
    for (o, slot) in out.iter_mut().enumerate() {
        *slot = dot(&weight[o * d_in..(o + 1) * d_in], input) as f32;
    }
}

/// `out[j] = Σ_t coef[t] · cols[t·stride + j]` for `j < out.len()`, each sum
/// taken in `t` order. Eight outputs are kept in registers at a time.
#[inline]
pub fn column_combination(coef: &[f64], cols: &[f64], stride: usize, out: &mut [f64]) {
    let n = out.len();
    let tiled = n / 8 * 8;
    for j0 in (0..tiled).step_by(8) {
        let mut acc = [0.0f64; 8];
        for (t, &c) in coef.iter().enumerate() {
            let col: &[f64; 8] = cols[t * stride + j0..t * stride + j0 + 8].try_into().expect("tile of 8");
            for l in 0..8 {
                acc[l] += c * col[l];
            }
        }
        out[j0..j0 + 8].copy_from_slice(&acc);
    }
    for j in tiled..n {
        let mut acc = 0.0f64;
        for (t, &c) in coef.iter().enumerate() {
            acc += c * cols[t * stride + j];
        }
        out[j] = acc;
    }
}

/// `out[r] = W · input[r]` for every row of `input` (`[rows × d_in]`,
/// row-major), given `W` transposed (`weight_t` is `[d_in × d_out]`).
pub fn matmul_wide(weight_t: &[f64], d_in: usize, input: &[f64], out: &mut [f32]) {
    let d_out = weight_t.len() / d_in;
    debug_assert_eq!(out.len() / d_out, input.len() / d_in);
    let mut acc = vec![0.0f64; d_out];
    for (x, o) in input.chunks_exact(d_in).zip(out.chunks_exact_mut(d_out)) {
        column_combination(x, weight_t, d_out, &mut acc);
        for (o, a) in o.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
}

/// Transpose an out-major `[d_out × d_in]` f32 weight into f64 `[d_in × d_out]`.
pub fn widen_transposed(weight: &[f32], d_in: usize) -> Vec<f64> {
    let d_out = weight.len() / d_in;
    let mut t = vec![0.0f64; weight.len()];
    for o in 0..d_out {
        for c in 0..d_in {
            t[c * d_out + o] = weight[o * d_in + c] as f64;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_matrix_indexing() {
        let data: Vec<f32> = (0..24).map(|x| x as f32).collect();
        let m = HeadMatrix::from_vec(3, 2, 4, data).unwrap();
        assert_eq!(m.row(1), &[8., 9., 10., 11., 12., 13., 14., 15.]);
        assert_eq!(m.head(2, 1), &[20., 21., 22., 23.]);
        assert_eq!(m.row_sum()[0], 0.0 + 8.0 + 16.0);
        let g = m.gather(&[2, 0]);
        assert_eq!(g.row(0), m.row(2));
        assert_eq!(g.row(1), m.row(0));
    }

    #[test]
    fn shape_errors() {
        assert!(HeadMatrix::from_vec(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(Matrix::from_vec(2, 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_matches_matvec() {
        let w: Vec<f32> = (0..7 * 10).map(|i| ((i * 37 % 11) as f32 - 5.0) / 4.0).collect();
        let x: Vec<f32> = (0..6 * 10).map(|i| ((i * 13 % 7) as f32 - 3.0) / 8.0).collect();
        let wide: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut got = vec![0.0f32; 6 * 7];
        matmul_wide(&widen_transposed(&w, 10), 10, &wide, &mut got);
        for r in 0..6 {
            let mut want = vec![0.0f32; 7];
            matvec(&w, 10, &x[r * 10..(r + 1) * 10], &mut want);
            // Exact binary fractions: both orders sum without rounding.
            assert_eq!(&got[r * 7..(r + 1) * 7], &want[..]);
        }
    }

    #[test]
    fn matvec_matches_manual() {
        // [[1,2],[3,4],[5,6]] · [1,-1]
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 3];
        matvec(&w, 2, &[1.0, -1.0], &mut out);
        assert_eq!(out, [-1.0, -1.0, -1.0]);
    }
}
