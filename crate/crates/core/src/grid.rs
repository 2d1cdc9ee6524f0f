//! Rectangular periodic boxes shared by the macroscopic amplitude grid and
//! the microscopic NLS grid.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, FftNd};
use crate::par;

/// A periodic box `[-L_j/2, L_j/2)` sampled uniformly, row-major.
#[derive(Clone, Debug)]
pub struct PeriodicBox {
    lengths: Vec<f64>,
    points: Vec<usize>,
    wavenumbers: Vec<Vec<f64>>,
    k_squared: Arc<Vec<f64>>,
    fft: Arc<FftNd>,
}

/// Serializable description of a box, used in sidecars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxShape {
    pub lengths: Vec<f64>,
    pub points: Vec<usize>,
}

impl PeriodicBox {
    pub fn new(lengths: &[f64], points: &[usize]) -> Result<Self> {
        if lengths.is_empty() || lengths.len() != points.len() {
            return Err(Error::invalid("box lengths and point counts must be non-empty and of equal length"));
        }
        if lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("box lengths must be positive"));
        }
        if points.iter().any(|&n| n < 2) {
            return Err(Error::invalid("at least two points per axis are required"));
        }
        let wavenumbers: Vec<Vec<f64>> = lengths.iter().zip(points).map(|(&l, &n)| fft::wavenumbers(n, l)).collect();
        let total: usize = points.iter().product();
        let mut k_squared = vec![0.0; total];
        for (idx, k2) in k_squared.iter_mut().enumerate() {
            let mut rem = idx;
            for axis in (0..points.len()).rev() {
                let i = rem % points[axis];
                rem /= points[axis];
                *k2 += wavenumbers[axis][i] * wavenumbers[axis][i];
            }
        }
        Ok(Self {
            lengths: lengths.to_vec(),
            points: points.to_vec(),
            wavenumbers,
            k_squared: Arc::new(k_squared),
            fft: Arc::new(FftNd::new(points)),
        })
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn len(&self) -> usize {
        self.k_squared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn shape(&self) -> BoxShape {
        BoxShape { lengths: self.lengths.clone(), points: self.points.clone() }
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.points[axis] as f64
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Quadrature weight of one grid point.
    pub fn cell_volume(&self) -> f64 {
        self.volume() / self.len() as f64
    }

    /// Wavenumbers along `axis`, FFT order.
    pub fn wavenumbers(&self, axis: usize) -> &[f64] {
        &self.wavenumbers[axis]
    }

    /// `|xi|^2` per flat FFT index.
    pub fn k_squared(&self) -> &[f64] {
        &self.k_squared
    }

    /// Coordinate of grid index `i` along `axis`.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        -0.5 * self.lengths[axis] + i as f64 * self.spacing(axis)
    }

    /// Splits a flat index into per-axis indices.
    pub fn unflatten(&self, mut idx: usize, out: &mut [usize]) {
        for axis in (0..self.dim()).rev() {
            out[axis] = idx % self.points[axis];
            idx /= self.points[axis];
        }
    }

    /// Cartesian position of a flat index.
    pub fn position(&self, idx: usize) -> Vec<f64> {
        let mut ijk = vec![0; self.dim()];
        self.unflatten(idx, &mut ijk);
        ijk.iter().enumerate().map(|(a, &i)| self.coord(a, i)).collect()
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.fft.forward(data);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.fft.inverse(data);
    }

    /// Samples `f(x)` on the grid.
    pub fn sample<F>(&self, f: F) -> Vec<Complex64>
    where
        F: Fn(&[f64]) -> Complex64 + Sync + Send,
    {
        par::map_range(self.len(), |idx| f(&self.position(idx)))
    }

    /// Quadrature of a real density, summed sequentially.
    pub fn integrate(&self, density: &[f64]) -> f64 {
        density.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn l2_norm_sq(&self, field: &[Complex64]) -> f64 {
        field.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.cell_volume()
    }

    /// Multiplies the spectrum of `field` by `symbol(flat_fft_index)`.
    pub fn apply_multiplier<F>(&self, field: &mut [Complex64], symbol: F)
    where
        F: Fn(usize) -> Complex64 + Sync + Send,
    {
        self.forward(field);
        par::for_each_mut(field, |i, z| *z *= symbol(i));
        self.inverse(field);
    }

    /// Per-axis wavenumber of a flat FFT index.
    pub fn wavevector_component(&self, idx: usize, axis: usize) -> f64 {
        let stride: usize = self.points[axis + 1..].iter().product();
        self.wavenumbers[axis][(idx / stride) % self.points[axis]]
    }

    /// Spectral partial derivative along `axis`.
    pub fn derivative(&self, field: &[Complex64], axis: usize) -> Vec<Complex64> {
        let mut out = field.to_vec();
        self.apply_multiplier(&mut out, |i| Complex64::new(0.0, self.wavevector_component(i, axis)));
        out
    }

    /// Spectral Laplacian.
    pub fn laplacian(&self, field: &[Complex64]) -> Vec<Complex64> {
        let mut out = field.to_vec();
        let k2 = self.k_squared.clone();
        self.apply_multiplier(&mut out, |i| Complex64::new(-k2[i], 0.0));
        out
    }

    /// Trigonometric interpolation onto a finer box of identical lengths.
    pub fn interpolate_to(&self, field: &[Complex64], target: &PeriodicBox) -> Result<Vec<Complex64>> {
        if target.lengths.iter().zip(&self.lengths).any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(b.abs())) {
            return Err(Error::GridIncommensurate("interpolation requires identical box lengths".into()));
        }
        if target.points.iter().zip(&self.points).any(|(t, s)| t < s) {
            return Err(Error::GridIncommensurate("interpolation target must not be coarser".into()));
        }
        if target.points == self.points {
            return Ok(field.to_vec());
        }
        let mut spec = field.to_vec();
        self.forward(&mut spec);
        let scale = target.len() as f64 / self.len() as f64;
        let mut out = vec![Complex64::default(); target.len()];
        let d = self.dim();
        let mut src = vec![0usize; d];
        for (idx, &coef) in spec.iter().enumerate() {
            self.unflatten(idx, &mut src);
            // Even-length Nyquist bins are split evenly between +n/2 and -n/2.
            let mut targets: Vec<(usize, f64)> = vec![(0, scale)];
            for axis in 0..d {
                let n = self.points[axis];
                let m = target.points[axis];
                let s = fft::signed_index(src[axis], n);
                let stride: usize = target.points[axis + 1..].iter().product();
                let wrap = |f: i64| (f.rem_euclid(m as i64)) as usize * stride;
                if n.is_multiple_of(2) && s == -(n as i64 / 2) && m > n {
                    let mut next = Vec::with_capacity(targets.len() * 2);
                    for &(t, w) in &targets {
                        next.push((t + wrap(s), 0.5 * w));
                        next.push((t + wrap(-s), 0.5 * w));
                    }
                    targets = next;
                } else {
                    for t in targets.iter_mut() {
                        t.0 += wrap(s);
                    }
                }
            }
            for (t, w) in targets {
                out[t] += coef * w;
            }
        }
        target.inverse(&mut out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn derivative_of_sine() {
        let g = PeriodicBox::new(&[2.0 * PI], &[32]).unwrap();
        let f = g.sample(|x| Complex64::new((3.0 * x[0]).sin(), 0.0));
        let df = g.derivative(&f, 0);
        for (i, z) in df.iter().enumerate() {
            let x = g.coord(0, i);
            assert!((z.re - 3.0 * (3.0 * x).cos()).abs() < 1e-12);
            assert!(z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_is_exact_for_band_limited_data() {
        let src = PeriodicBox::new(&[4.0, 2.0], &[16, 8]).unwrap();
        let dst = PeriodicBox::new(&[4.0, 2.0], &[64, 24]).unwrap();
        let f = |x: &[f64]| Complex64::new((PI * x[0] / 2.0).cos() + (PI * x[1]).sin(), (2.0 * PI * x[0] / 4.0 * 3.0).sin());
        let coarse = src.sample(f);
        let fine = src.interpolate_to(&coarse, &dst).unwrap();
        for (idx, z) in fine.iter().enumerate() {
            let x = dst.position(idx);
            assert!((z - f(&x)).norm() < 1e-12);
        }
    }

    #[test]
    fn integrate_constant() {
        let g = PeriodicBox::new(&[3.0, 2.0], &[6, 4]).unwrap();
        assert!((g.integrate(&vec![1.0; g.len()]) - 6.0).abs() < 1e-14);
    }
}
