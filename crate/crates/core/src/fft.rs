//! Axis-wise DFTs over row-major multi-dimensional complex arrays.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Direction {
    /// `X[k] = sum_n x[n] w^{-kn}`.
    Forward,
    /// `x[n] = sum_k X[k] w^{kn}` (unnormalized).
    Inverse,
}

/// Transforms every line of `data` along `axis` in place.
pub(crate) fn fft_axis(data: &mut [Complex64], shape: &[usize], axis: usize, dir: Direction) {
    let len = shape[axis];
    debug_assert_eq!(data.len(), shape.iter().product::<usize>());
    if len <= 1 {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft: std::sync::Arc<dyn Fft<f64>> = match dir {
        Direction::Forward => planner.plan_fft_forward(len),
        Direction::Inverse => planner.plan_fft_inverse(len),
    };
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut line = vec![Complex64::new(0.0, 0.0); len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for o in 0..outer {
        let base = o * len * stride;
        for s in 0..stride {
            for (k, v) in line.iter_mut().enumerate() {
                *v = data[base + k * stride + s];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (k, v) in line.iter().enumerate() {
                data[base + k * stride + s] = *v;
            }
        }
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        out[a] = out[a + 1] * shape[a + 1];
    }
    out
}

/// Decomposes a flat index into a multi-index.
pub(crate) fn unravel(mut flat: usize, shape: &[usize], out: &mut [usize]) {
    for a in (0..shape.len()).rev() {
        out[a] = flat % shape[a];
        flat /= shape[a];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_then_forward_is_scaled_identity() {
        let shape = [4, 3];
        let orig: Vec<Complex64> = (0..12)
            .map(|k| Complex64::new(k as f64, (k * k) as f64 * 0.1))
            .collect();
        let mut data = orig.clone();
        for a in 0..2 {
            fft_axis(&mut data, &shape, a, Direction::Inverse);
        }
        for a in 0..2 {
            fft_axis(&mut data, &shape, a, Direction::Forward);
        }
        for (x, y) in data.iter().zip(&orig) {
            assert!((x / 12.0 - y).norm() < 1e-12);
        }
    }

    #[test]
    fn unravel_matches_strides() {
        let shape = [3, 5, 2];
        let st = strides(&shape);
        let mut idx = [0; 3];
        for flat in 0..30 {
            unravel(flat, &shape, &mut idx);
            assert_eq!(idx.iter().zip(&st).map(|(i, s)| i * s).sum::<usize>(), flat);
        }
    }
}
