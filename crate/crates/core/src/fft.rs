//! Multi-dimensional complex FFTs on row-major arrays.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::par;

/// Row-major N-d transform. `forward` is unnormalized, `inverse` divides by
/// the total number of points.
#[derive(Clone)]
pub struct FftNd {
    dims: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("dims", &self.dims).finish()
    }
}

impl FftNd {
    pub fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self { dims: dims.to_vec(), forward, inverse }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let scale = 1.0 / self.len() as f64;
        par::for_each_chunk_mut(data, 4096, |_, c| c.iter_mut().for_each(|z| *z *= scale));
    }

    fn transform(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.len(), "buffer does not match transform shape");
        let d = self.dims.len();
        for axis in 0..d {
            let n = self.dims[axis];
            let stride: usize = self.dims[axis + 1..].iter().product();
            let plan = &plans[axis];
            if stride == 1 {
                transform_rows(data, n, plan);
                continue;
            }
            let block = n * stride;
            let mut tmp = vec![Complex64::default(); block];
            for chunk in data.chunks_mut(block) {
                transpose(chunk, &mut tmp, n, stride);
                transform_rows(&mut tmp, n, plan);
                transpose(&tmp, chunk, stride, n);
            }
        }
    }
}

fn transform_rows(data: &mut [Complex64], n: usize, plan: &Arc<dyn Fft<f64>>) {
    let rows = data.len() / n;
    let rows_per_task = (16384 / n).clamp(1, rows.max(1));
    par::for_each_chunk_mut(data, rows_per_task * n, |_, c| {
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(c, &mut scratch);
    });
}

/// `src` is `rows x cols` row-major; writes its transpose into `dst`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Angular wavenumbers of an `n`-point periodic grid of length `length`,
/// in FFT order.
pub fn wavenumbers(n: usize, length: f64) -> Vec<f64> {
    let base = 2.0 * std::f64::consts::PI / length;
    (0..n).map(|j| base * signed_index(j, n) as f64).collect()
}

/// FFT-order index `j` mapped to its signed frequency in `[-n/2, n/2)`.
pub fn signed_index(j: usize, n: usize) -> i64 {
    if j < n.div_ceil(2) {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_2d() {
        let fft = FftNd::new(&[8, 4]);
        let orig: Vec<Complex64> = (0..32).map(|i| Complex64::new(i as f64 * 0.3, (i * i) as f64 * 0.01)).collect();
        let mut data = orig.clone();
        fft.forward(&mut data);
        fft.inverse(&mut data);
        for (a, b) in orig.iter().zip(&data) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_lands_in_one_bin() {
        let (n0, n1) = (8, 6);
        let fft = FftNd::new(&[n0, n1]);
        let mut data: Vec<Complex64> = (0..n0 * n1)
            .map(|idx| {
                let (i, j) = (idx / n1, idx % n1);
                let phase = 2.0 * std::f64::consts::PI * (3.0 * i as f64 / n0 as f64 - 2.0 * j as f64 / n1 as f64);
                Complex64::from_polar(1.0, phase)
            })
            .collect();
        fft.forward(&mut data);
        for (idx, z) in data.iter().enumerate() {
            let expect = if idx == 3 * n1 + (n1 - 2) { (n0 * n1) as f64 } else { 0.0 };
            assert!((z.norm() - expect).abs() < 1e-10, "bin {idx}: {z}");
        }
    }

    #[test]
    fn wavenumber_layout() {
        let k = wavenumbers(4, 2.0 * std::f64::consts::PI);
        assert_eq!(k, vec![0.0, 1.0, -2.0, -1.0]);
    }
}
