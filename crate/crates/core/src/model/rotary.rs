use alloc::vec::Vec;

use crate::{Error, Result};

/// Rotate consecutive component pairs `(2i, 2i+1)` of each row by
/// `distance · rope_base^(-2i/d_head)` radians.
///
/// `vectors` holds `distances.len()` rows of `d_head` values.
pub fn rotary_rotate(vectors: &[f32], distances: &[i64], d_head: usize, rope_base: f32) -> Result<Vec<f32>> {
    if d_head % 2 != 0 {
        return Err(Error::Config(alloc::format!("rotary embedding needs an even d_head, got {d_head}")));
    }
    if vectors.len() != distances.len() * d_head {
        return Err(Error::Shape(alloc::format!(
            "{} rows of width {d_head} need {} values, got {}",
            distances.len(),
            distances.len() * d_head,
            vectors.len()
        )));
    }
    let freqs = frequencies(d_head, rope_base);
    let mut out = Vec::with_capacity(vectors.len());
    for (row, &d) in vectors.chunks_exact(d_head).zip(distances) {
        for (pair, &freq) in row.chunks_exact(2).zip(&freqs) {
            let (s, c) = libm::sincos(d as f64 * freq);
            let (x, y) = (pair[0] as f64, pair[1] as f64);
            out.push((x * c - y * s) as f32);
            out.push((x * s + y * c) as f32);
        }
    }
    Ok(out)
}

fn frequencies(d_head: usize, rope_base: f32) -> Vec<f64> {
    (0..d_head / 2).map(|i| libm::pow(rope_base as f64, -2.0 * i as f64 / d_head as f64)).collect()
}

/// Precomputed `cos`/`sin` for every integer distance in `0..=max_distance`.
#[derive(Debug, Clone)]
pub struct RotaryTable {
    half: usize,
    max_distance: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RotaryTable {
    pub fn new(d_head: usize, rope_base: f32, max_distance: usize) -> Result<Self> {
        if d_head % 2 != 0 {
            return Err(Error::Config(alloc::format!("rotary embedding needs an even d_head, got {d_head}")));
        }
        let freqs = frequencies(d_head, rope_base);
        let half = d_head / 2;
        let mut cos = Vec::with_capacity((max_distance + 1) * half);
        let mut sin = Vec::with_capacity((max_distance + 1) * half);
        for d in 0..=max_distance {
            for &f in &freqs {
                let (s, c) = libm::sincos(d as f64 * f);
                sin.push(s);
                cos.push(c);
            }
        }
        Ok(Self { half, max_distance, cos, sin })
    }

    pub fn max_distance(&self) -> usize {
        self.max_distance
    }

    /// Pairs of `v` turned by `sign · distance` steps, into `out` as f64.
    /// `rotated_dot(q, k, a - b)` equals the plain dot of `q` turned by `+b`
    /// with `k` turned by `+a`; a turn by `-d` on `q` alone gives distance `d`.
    pub(crate) fn turn(&self, v: &[f32], distance: usize, sign: f64, out: &mut [f64]) {
        let base = distance * self.half;
        for i in 0..self.half {
            let (c, s) = (self.cos[base + i], sign * self.sin[base + i]);
            let (x, y) = (v[2 * i] as f64, v[2 * i + 1] as f64);
            out[2 * i] = x * c - y * s;
            out[2 * i + 1] = x * s + y * c;
        }
    }

    pub(crate) fn turn_in_place(&self, v: &mut [f64], distance: usize, sign: f64) {
        let base = distance * self.half;
        for i in 0..self.half {
            let (c, s) = (self.cos[base + i], sign * self.sin[base + i]);
            let (x, y) = (v[2 * i], v[2 * i + 1]);
            v[2 * i] = x * c - y * s;
            v[2 * i + 1] = x * s + y * c;
        }
    }

    /// `q · rotate(k, distance)` without materializing the rotated key.
    #[inline]
    pub fn rotated_dot(&self, q: &[f32], k: &[f32], distance: usize) -> f64 {
        let base = distance * self.half;
        let cos = &self.cos[base..base + self.half];
        let sin = &self.sin[base..base + self.half];
        let mut acc = 0.0f64;
        for i in 0..self.half {
            let (q0, q1) = (q[2 * i] as f64, q[2 * i + 1] as f64);
            let (k0, k1) = (k[2 * i] as f64, k[2 * i + 1] as f64);
            acc += cos[i] * (q0 * k0 + q1 * k1) + sin[i] * (q1 * k0 - q0 * k1);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_distance_is_identity() {
        let v = [0.3f32, -1.2, 2.0, 0.5];
        assert_eq!(rotary_rotate(&v, &[0], 4, 10_000.0).unwrap(), v.to_vec());
    }

    #[test]
    fn one_radian_at_unit_base() {
        let out = rotary_rotate(&[1.0, 0.0], &[1], 2, 1.0).unwrap();
        assert!((out[0] as f64 - 1f64.cos()).abs() < 1e-7);
        assert!((out[1] as f64 - 1f64.sin()).abs() < 1e-7);
    }

    #[test]
    fn odd_head_dim_rejected() {
        assert!(matches!(rotary_rotate(&[1.0, 2.0, 3.0], &[1], 3, 10.0), Err(Error::Config(_))));
        assert!(RotaryTable::new(5, 10.0, 4).is_err());
    }

    #[test]
    fn table_dot_matches_explicit_rotation() {
        let q = [0.5f32, -0.25, 1.5, 0.75, -1.0, 2.0];
        let k = [1.0f32, 0.5, -0.5, 0.25, 0.125, -2.0];
        let table = RotaryTable::new(6, 100.0, 40).unwrap();
        for d in [0usize, 1, 7, 40] {
            let rotated = rotary_rotate(&k, &[d as i64], 6, 100.0).unwrap();
            let want = crate::tensor::dot(&q, &rotated);
            assert!((table.rotated_dot(&q, &k, d) - want).abs() < 1e-6);
        }
    }
}
