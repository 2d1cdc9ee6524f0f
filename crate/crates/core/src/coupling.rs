//! Effective coupling constants of resonant quadruples.
//!
//! For `k_p - k_q + k_r - k_m = γ ∈ Γ*` (canonical wave vectors) the entry is
//! `κ ∫_Y χ_p χ̄_q χ_r χ̄_m e^{i γ·y} dy`, i.e. the cell integral of the Bloch
//! waves `χ e^{i k·y}`; `γ ≠ 0` for umklapp quadruples.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bloch::{BlochPair, BlochSolver, PlaneWaveBasis};
use crate::error::{Error, Result};
use crate::lattice::{dot, Lattice};
use crate::modes::{resonant_quadruples, ModeSystem};
use crate::par;

/// Integer dual vector `k_p - k_q + k_r - k_m` of a quadruple, from
/// fractional wave vectors.
pub fn umklapp(k: [&[f64]; 4]) -> Vec<i64> {
    (0..k[0].len()).map(|j| (k[0][j] - k[1][j] + k[2][j] - k[3][j]).round() as i64).collect()
}

/// Smallest per-axis cell resolution integrating the quartic product exactly.
pub fn aliasing_bound(basis: &PlaneWaveBasis, gamma: &[i64]) -> usize {
    let g = gamma.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0) as usize;
    4 * basis.max_index() as usize + g + 1
}

/// Default resolution: exact for every quadruple of canonical wave vectors.
pub fn default_resolution(basis: &PlaneWaveBasis) -> usize {
    4 * basis.max_index() as usize + 4
}

/// Samples of a Bloch function on a cell grid.
pub fn sample_on_cell(pair: &BlochPair, basis: &PlaneWaveBasis, points: &[Vec<f64>]) -> Vec<Complex64> {
    par::map(points, |y| {
        basis.vectors().iter().zip(&pair.coefficients).map(|(g, c)| c * Complex64::from_polar(1.0, dot(g, y))).sum()
    })
}

/// `κ ∫ χ_p χ̄_q χ_r χ̄_m e^{iγ·y}` by uniform cell quadrature.
pub fn coupling_constant(
    pairs: [&BlochPair; 4],
    lattice: &Lattice,
    basis: &PlaneWaveBasis,
    kappa: f64,
    n_per_dim: usize,
) -> Result<Complex64> {
    let fr: Vec<Vec<f64>> = pairs.iter().map(|p| lattice.to_fractional(&p.k.k)).collect();
    let gamma = umklapp([&fr[0], &fr[1], &fr[2], &fr[3]]);
    let required = aliasing_bound(basis, &gamma);
    if n_per_dim < required {
        return Err(Error::ResolutionTooLow { given: n_per_dim, required });
    }
    let (points, weight) = lattice.cell_grid(n_per_dim)?;
    let s: Vec<Vec<Complex64>> = pairs.iter().map(|p| sample_on_cell(p, basis, &points)).collect();
    let g = lattice.dual_vector(&gamma);
    Ok(quadrature(&s[0], &s[1], &s[2], &s[3], &points, &g, weight) * kappa)
}

fn quadrature(
    p: &[Complex64],
    q: &[Complex64],
    r: &[Complex64],
    m: &[Complex64],
    points: &[Vec<f64>],
    gamma: &[f64],
    weight: f64,
) -> Complex64 {
    let zero = gamma.iter().all(|&x| x == 0.0);
    let mut acc = Complex64::default();
    for i in 0..points.len() {
        let mut v = p[i] * q[i].conj() * r[i] * m[i].conj();
        if !zero {
            v *= Complex64::from_polar(1.0, dot(gamma, &points[i]));
        }
        acc += v;
    }
    acc * weight
}

/// Coupling constants keyed by 0-based resonant quadruples `(p, q, r, m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingTable {
    pub kappa: f64,
    pub n_per_dim: usize,
    #[serde(with = "entry_list")]
    pub entries: BTreeMap<[usize; 4], Complex64>,
}

mod entry_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        pqrm: [usize; 4],
        re: f64,
        im: f64,
    }

    pub fn serialize<S: Serializer>(t: &BTreeMap<[usize; 4], Complex64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<Entry> = t.iter().map(|(k, c)| Entry { pqrm: *k, re: c.re, im: c.im }).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<[usize; 4], Complex64>, D::Error> {
        let v = Vec::<Entry>::deserialize(d)?;
        Ok(v.into_iter().map(|e| (e.pqrm, Complex64::new(e.re, e.im))).collect())
    }
}

/// Gauge convention recorded alongside exported tables.
pub const GAUGE: &str = "largest plane-wave coefficient real positive";

impl CouplingTable {
    pub fn get(&self, q: [usize; 4]) -> Option<Complex64> {
        self.entries.get(&q).copied()
    }

    /// `W_m(a) = κ_mmmm |a_m|² + 2 Σ_{j≠m} κ_mjjm |a_j|²`.
    pub fn w(&self, m: usize, a: &[Complex64]) -> Complex64 {
        let mut w = self.get([m, m, m, m]).unwrap_or_default() * a[m].norm_sqr();
        for (j, aj) in a.iter().enumerate() {
            if j != m {
                w += 2.0 * self.get([m, j, j, m]).unwrap_or_default() * aj.norm_sqr();
            }
        }
        w
    }

    /// Largest violation of conjugation, exchange and diagonal-reality
    /// symmetries: `(conjugation, exchange, diagonal_imag)`.
    pub fn symmetry_defects(&self) -> (f64, f64, f64) {
        let (mut conj, mut exch, mut diag) = (0.0f64, 0.0f64, 0.0f64);
        for (&[p, q, r, m], &v) in &self.entries {
            if let Some(w) = self.get([q, p, m, r]) {
                conj = conj.max((v.conj() - w).norm());
            } else {
                conj = f64::INFINITY;
            }
            if let Some(w) = self.get([r, q, p, m]) {
                exch = exch.max((v - w).norm());
            } else {
                exch = f64::INFINITY;
            }
            if p == m && q == r {
                diag = diag.max(v.im.abs());
            }
        }
        (conj, exch, diag)
    }

    /// Fails when a symmetry defect exceeds the documented tolerances.
    pub fn check_symmetries(&self) -> Result<()> {
        let scale = self.kappa.abs().max(1.0);
        let (c, e, d) = self.symmetry_defects();
        if c > 1e-10 * scale || e > 1e-12 * scale || d > 1e-10 * scale {
            return Err(Error::invalid(format!(
                "coupling table symmetry defects: conjugation {c:e}, exchange {e:e}, diagonal {d:e}"
            )));
        }
        Ok(())
    }
}

/// Couplings for every resonant quadruple of a Bloch mode system.
pub fn coupling_table(system: &ModeSystem, solver: &BlochSolver, kappa: f64, n_per_dim: Option<usize>) -> Result<CouplingTable> {
    if system.pairs.len() != system.len() {
        return Err(Error::invalid("coupling table needs a mode system with Bloch data"));
    }
    let basis = solver.basis();
    let lattice = solver.lattice();
    let n = n_per_dim.unwrap_or_else(|| default_resolution(basis));
    let quads = resonant_quadruples(system);
    for q in &quads {
        let gamma = umklapp([&system.modes[q[0]].k, &system.modes[q[1]].k, &system.modes[q[2]].k, &system.modes[q[3]].k]);
        let required = aliasing_bound(basis, &gamma);
        if n < required {
            return Err(Error::ResolutionTooLow { given: n, required });
        }
    }
    let (points, weight) = lattice.cell_grid(n)?;
    let samples: Vec<Vec<Complex64>> = system.pairs.iter().map(|p| sample_on_cell(p, basis, &points)).collect();
    let values = par::map(&quads, |&[p, q, r, m]| {
        let gamma = umklapp([&system.modes[p].k, &system.modes[q].k, &system.modes[r].k, &system.modes[m].k]);
        let g = lattice.dual_vector(&gamma);
        // Canonical factor order makes the exchange symmetry exact.
        let (a, b) = (p.min(r), p.max(r));
        quadrature(&samples[a], &samples[q], &samples[b], &samples[m], &points, &g, weight) * kappa
    });
    let entries = quads.into_iter().zip(values).collect();
    let table = CouplingTable { kappa, n_per_dim: n, entries };
    table.check_symmetries()?;
    Ok(table)
}
