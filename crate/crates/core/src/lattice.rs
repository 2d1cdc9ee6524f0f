//! Periodicity lattice, its dual, the centered cell and the Brillouin zone.
//!
//! Dual vectors satisfy `dual_i . basis_j = 2 pi delta_ij`, so `e^{i g.y}` is
//! lattice periodic for every dual vector `g`. Wave vectors are handled in
//! fractional coordinates with respect to the dual basis:
//! `k = sum_i f_i dual_i` with `f_i = k . basis_i / (2 pi)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fractional distance from `+1/2` below which a coordinate is treated as the tie.
const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatticeRepr", into = "LatticeRepr")]
pub struct Lattice {
    basis: Vec<Vec<f64>>,
    dual: Vec<Vec<f64>>,
    cell_volume: f64,
}

#[derive(Serialize, Deserialize)]
struct LatticeRepr {
    basis: Vec<Vec<f64>>,
}

impl TryFrom<LatticeRepr> for Lattice {
    type Error = Error;
    fn try_from(r: LatticeRepr) -> Result<Self> {
        Lattice::new(r.basis)
    }
}

impl From<Lattice> for LatticeRepr {
    fn from(l: Lattice) -> Self {
        LatticeRepr { basis: l.basis }
    }
}

/// A wave vector together with a flag telling whether it lies in the
/// centered Brillouin zone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BzPoint {
    pub k: Vec<f64>,
    pub canonical: bool,
}

impl Lattice {
    /// Builds a lattice from `d` basis vectors (rows).
    pub fn new(basis: Vec<Vec<f64>>) -> Result<Self> {
        let dual = dual_basis(&basis)?;
        let cell_volume = basis_matrix(&basis).determinant().abs();
        Ok(Self { basis, dual, cell_volume })
    }

    /// `Z^d` with unit spacing.
    pub fn cubic(d: usize, a: f64) -> Result<Self> {
        Self::new((0..d).map(|i| (0..d).map(|j| if i == j { a } else { 0.0 }).collect()).collect())
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn dual(&self) -> &[Vec<f64>] {
        &self.dual
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// True when the basis is diagonal, which the fine NLS grids require.
    pub fn is_rectangular(&self) -> bool {
        self.basis.iter().enumerate().all(|(i, v)| v.iter().enumerate().all(|(j, &x)| i == j || x == 0.0))
    }

    /// Fractional coordinates of `k` with respect to the dual basis.
    pub fn to_fractional(&self, k: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|b| dot(b, k) / (2.0 * PI)).collect()
    }

    /// Cartesian wave vector from fractional dual coordinates.
    pub fn from_fractional(&self, f: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut k = vec![0.0; d];
        for (fi, g) in f.iter().zip(&self.dual) {
            for j in 0..d {
                k[j] += fi * g[j];
            }
        }
        k
    }

    /// Dual lattice vector with integer index `n`.
    pub fn dual_vector(&self, n: &[i64]) -> Vec<f64> {
        let f: Vec<f64> = n.iter().map(|&x| x as f64).collect();
        self.from_fractional(&f)
    }

    /// Real-space point from fractional cell coordinates.
    pub fn cell_point(&self, f: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut y = vec![0.0; d];
        for (fi, b) in f.iter().zip(&self.basis) {
            for j in 0..d {
                y[j] += fi * b[j];
            }
        }
        y
    }

    /// Maps `k` into the centered Brillouin zone and returns the dual-lattice
    /// shift with `k = wrapped + sum shift_i dual_i`.
    pub fn wrap_to_bz(&self, k: &[f64]) -> (BzPoint, Vec<i64>) {
        let (_, shift) = wrap_fractional(&self.to_fractional(k));
        let back = self.dual_vector(&shift);
        let wrapped = k.iter().zip(&back).map(|(a, b)| a - b).collect();
        (BzPoint { k: wrapped, canonical: true }, shift)
    }

    /// Canonical point with the given fractional coordinates.
    pub fn bz_point(&self, f: &[f64]) -> BzPoint {
        self.wrap_to_bz(&self.from_fractional(f)).0
    }

    /// Uniform quadrature grid on the centered cell: `n^d` points and the
    /// common weight `|Y| / n^d`. Points are row-major in fractional index.
    pub fn cell_grid(&self, n: usize) -> Result<(Vec<Vec<f64>>, f64)> {
        if n < 2 {
            return Err(Error::invalid("cell grid needs at least two points per axis"));
        }
        let d = self.dim();
        let total = n.pow(d as u32);
        let mut points = Vec::with_capacity(total);
        let mut frac = vec![0.0; d];
        for idx in 0..total {
            let mut rem = idx;
            for axis in (0..d).rev() {
                frac[axis] = (rem % n) as f64 / n as f64 - 0.5;
                rem /= n;
            }
            points.push(self.cell_point(&frac));
        }
        Ok((points, self.cell_volume / total as f64))
    }
}

/// Wraps fractional coordinates into `[-1/2, 1/2)` with `+1/2` mapped to
/// `-1/2`, returning the integer shift.
pub fn wrap_fractional(f: &[f64]) -> (Vec<f64>, Vec<i64>) {
    let mut out = Vec::with_capacity(f.len());
    let mut shift = Vec::with_capacity(f.len());
    for &x in f {
        let mut s = (x + 0.5).floor();
        let mut w = x - s;
        if (w - 0.5).abs() < TIE_TOL {
            s += 1.0;
            w = -0.5;
        } else if (w + 0.5).abs() < TIE_TOL {
            w = -0.5;
        }
        out.push(w);
        shift.push(s as i64);
    }
    (out, shift)
}

/// Distance between two fractional points on the torus `R^d / Z^d`.
pub fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            let d = d - d.round();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Dual basis with `dual_i . basis_j = 2 pi delta_ij`.
pub fn dual_basis(basis: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = basis.len();
    if d == 0 || d > 3 || basis.iter().any(|v| v.len() != d) {
        return Err(Error::invalid("lattice basis must be d vectors of length d with 1 <= d <= 3"));
    }
    if basis.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("lattice basis must be finite"));
    }
    let z = basis_matrix(basis);
    let gram = &z * z.transpose();
    let det = gram.determinant();
    let max_norm = basis.iter().map(|v| dot(v, v).sqrt()).fold(0.0, f64::max);
    if !(det > 1e-12 * max_norm.powi(2 * d as i32)) || max_norm == 0.0 {
        return Err(Error::SingularBasis { det });
    }
    // Rows of 2 pi Z^{-T}.
    let inv = z.try_inverse().ok_or(Error::SingularBasis { det })?;
    let dual_t = inv * (2.0 * PI);
    Ok((0..d).map(|i| (0..d).map(|j| dual_t[(j, i)]).collect()).collect())
}

fn basis_matrix(basis: &[Vec<f64>]) -> DMatrix<f64> {
    let d = basis.len();
    DMatrix::from_fn(d, d, |i, j| basis[i][j])
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_and_square_duals() {
        let l = Lattice::cubic(1, 1.0).unwrap();
        assert_eq!(l.dual()[0], vec![2.0 * PI]);
        let sq = Lattice::cubic(2, 1.0).unwrap();
        assert!((sq.dual()[0][0] - 2.0 * PI).abs() < 1e-15 && sq.dual()[0][1].abs() < 1e-15);
        assert!((sq.dual()[1][1] - 2.0 * PI).abs() < 1e-15 && sq.dual()[1][0].abs() < 1e-15);
    }

    #[test]
    fn hexagonal_dual() {
        let h = Lattice::new(vec![vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]]).unwrap();
        let want = [[2.0 * PI, -2.0 * PI / 3f64.sqrt()], [0.0, 4.0 * PI / 3f64.sqrt()]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((h.dual()[i][j] - want[i][j]).abs() < 1e-13);
            }
        }
        assert!((h.cell_volume() - 3f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn singular_basis_rejected() {
        let err = Lattice::new(vec![vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap_err();
        assert!(matches!(err, Error::SingularBasis { .. }));
    }

    #[test]
    fn wrap_examples() {
        let l = Lattice::cubic(1, 1.0).unwrap();
        let (p, s) = l.wrap_to_bz(&[3.0 * PI]);
        assert_eq!(p.k, vec![-PI]);
        // 3 pi = -pi + 2 * (2 pi): the shift that reconstructs k is 2.
        assert_eq!(s, vec![2]);
        let (p, s) = l.wrap_to_bz(&[0.3]);
        assert_eq!((p.k, s), (vec![0.3], vec![0]));
        let sq = Lattice::cubic(2, 1.0).unwrap();
        let (p, s) = sq.wrap_to_bz(&[2.0 * PI + 0.1, -0.2]);
        assert!((p.k[0] - 0.1).abs() < 1e-14 && (p.k[1] + 0.2).abs() < 1e-15);
        assert_eq!(s, vec![1, 0]);
    }

    #[test]
    fn cell_grid_examples() {
        let l = Lattice::cubic(1, 1.0).unwrap();
        let (pts, w) = l.cell_grid(4).unwrap();
        let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![-0.5, -0.25, 0.0, 0.25]);
        assert_eq!(w, 0.25);
        let (pts, w) = Lattice::cubic(2, 1.0).unwrap().cell_grid(2).unwrap();
        assert_eq!((pts.len(), w), (4, 0.25));
        let (pts, w) = l.cell_grid(64).unwrap();
        assert!((pts.len() as f64 * w - 1.0).abs() < 1e-15);
    }
}
