//! Plane-wave Galerkin solver for the shifted Bloch Hamiltonian
//! `H(k) = 1/2 (-i grad + k)^2 + V` on the periodicity cell.
//!
//! Bloch functions are stored as plane-wave coefficients `c_g` of
//! `chi(y) = sum_g c_g e^{i g.y}` with `sum |c_g|^2 = 1 / |Y|`.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::{dot, BzPoint, Lattice};

/// Default relative gap below which a band counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;
/// Default distance to the spectrum below which the resolvent is refused.
pub const RESOLVENT_TOL: f64 = 1e-6;

/// Fourier representation of a real lattice-periodic potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub lattice: Lattice,
    #[serde(with = "coeff_table")]
    coefficients: BTreeMap<Vec<i64>, Complex64>,
}

mod coeff_table {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        index: Vec<i64>,
        re: f64,
        im: f64,
    }

    pub fn serialize<S: Serializer>(t: &BTreeMap<Vec<i64>, Complex64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<Entry> = t.iter().map(|(k, c)| Entry { index: k.clone(), re: c.re, im: c.im }).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<Vec<i64>, Complex64>, D::Error> {
        let v = Vec::<Entry>::deserialize(d)?;
        Ok(v.into_iter().map(|e| (e.index, Complex64::new(e.re, e.im))).collect())
    }
}

impl PotentialSpec {
    /// Validates reality (`V_{-g} = conj V_g`) of the coefficient table.
    pub fn new(lattice: Lattice, coefficients: BTreeMap<Vec<i64>, Complex64>) -> Result<Self> {
        let d = lattice.dim();
        for (g, v) in &coefficients {
            if g.len() != d {
                return Err(Error::invalid(format!("potential index {g:?} has wrong dimension")));
            }
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::invalid(format!("potential coefficient at {g:?} is not finite")));
            }
            let neg: Vec<i64> = g.iter().map(|x| -x).collect();
            let partner = coefficients.get(&neg).copied().unwrap_or_default();
            let scale = 1e-14 * v.norm().max(1.0);
            if (partner - v.conj()).norm() > scale {
                return Err(Error::invalid(format!("potential is not real: coefficient at {g:?} lacks its conjugate partner")));
            }
        }
        let coefficients = coefficients.into_iter().filter(|(_, v)| *v != Complex64::default()).collect();
        Ok(Self { lattice, coefficients })
    }

    pub fn free(lattice: Lattice) -> Self {
        Self { lattice, coefficients: BTreeMap::new() }
    }

    /// `V(y) = 2 v cos(2 pi y)` on the unit 1D lattice, i.e. `V_{+-1} = v`.
    pub fn mathieu(v: f64) -> Self {
        let lattice = Lattice::cubic(1, 1.0).expect("unit lattice");
        Self::free(lattice).with_cos(&[1], 2.0 * v)
    }

    /// Adds `v cos(g.y)` for the dual vector with index `g`.
    pub fn with_cos(mut self, g: &[i64], v: f64) -> Self {
        let neg: Vec<i64> = g.iter().map(|x| -x).collect();
        if g == neg.as_slice() {
            *self.coefficients.entry(g.to_vec()).or_default() += v;
        } else {
            *self.coefficients.entry(g.to_vec()).or_default() += 0.5 * v;
            *self.coefficients.entry(neg).or_default() += 0.5 * v;
        }
        self
    }

    pub fn coefficient(&self, g: &[i64]) -> Complex64 {
        self.coefficients.get(g).copied().unwrap_or_default()
    }

    pub fn coefficients(&self) -> impl Iterator<Item = (&Vec<i64>, &Complex64)> {
        self.coefficients.iter()
    }

    pub fn is_free(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Real-space value at a point of the cell (or anywhere, by periodicity).
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.coefficients.iter().map(|(g, v)| (v * Complex64::from_polar(1.0, dot(&self.lattice.dual_vector(g), y))).re).sum()
    }

    /// Upper bound `sum |V_g|` on `|V|`.
    pub fn sup_bound(&self) -> f64 {
        self.coefficients.values().map(|v| v.norm()).sum()
    }

    pub fn max_index(&self) -> i64 {
        self.coefficients.keys().flatten().map(|x| x.abs()).max().unwrap_or(0)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("potential serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Dual vectors `g` with `|g| <= G_max`, ordered lexicographically by index.
#[derive(Clone, Debug)]
pub struct PlaneWaveBasis {
    g_max: f64,
    indices: Vec<Vec<i64>>,
    vectors: Vec<Vec<f64>>,
    lookup: HashMap<Vec<i64>, usize>,
}

impl PlaneWaveBasis {
    pub fn new(lattice: &Lattice, g_max: f64) -> Result<Self> {
        if !(g_max >= 0.0 && g_max.is_finite()) {
            return Err(Error::invalid("plane-wave cutoff must be a non-negative number"));
        }
        let d = lattice.dim();
        let bounds: Vec<i64> = lattice
            .basis()
            .iter()
            .map(|b| (g_max * dot(b, b).sqrt() / (2.0 * std::f64::consts::PI)).floor() as i64 + 1)
            .collect();
        let mut indices = Vec::new();
        let mut cur: Vec<i64> = bounds.iter().map(|b| -b).collect();
        let r2 = g_max * g_max * (1.0 + 1e-12);
        loop {
            let g = lattice.dual_vector(&cur);
            if dot(&g, &g) <= r2 {
                indices.push(cur.clone());
            }
            let mut axis = d;
            loop {
                if axis == 0 {
                    return Ok(Self::from_indices(lattice, g_max, indices));
                }
                axis -= 1;
                if cur[axis] < bounds[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = -bounds[axis];
            }
        }
    }

    /// Cutoff `n` times the shortest dual vector; on the unit 1D lattice this
    /// is the index range `-n..=n`.
    pub fn with_shells(lattice: &Lattice, n: usize) -> Result<Self> {
        let shortest = lattice.dual().iter().map(|g| dot(g, g).sqrt()).fold(f64::INFINITY, f64::min);
        Self::new(lattice, n as f64 * shortest)
    }

    fn from_indices(lattice: &Lattice, g_max: f64, indices: Vec<Vec<i64>>) -> Self {
        let vectors = indices.iter().map(|n| lattice.dual_vector(n)).collect();
        let lookup = indices.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { g_max, indices, vectors, lookup }
    }

    pub fn g_max(&self) -> f64 {
        self.g_max
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<i64>] {
        &self.indices
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn position(&self, index: &[i64]) -> Option<usize> {
        self.lookup.get(index).copied()
    }

    /// Largest absolute integer index in the basis.
    pub fn max_index(&self) -> i64 {
        self.indices.iter().flatten().map(|x| x.abs()).max().unwrap_or(0)
    }
}

/// `½|k+g|² δ + V_{g-g'}` on the basis.
pub fn assemble_hamiltonian(k: &[f64], pot: &PotentialSpec, basis: &PlaneWaveBasis) -> Result<DMatrix<Complex64>> {
    check_cutoff(pot, basis)?;
    let n = basis.len();
    let mut h = DMatrix::<Complex64>::zeros(n, n);
    let d = k.len();
    let mut diff = vec![0i64; d];
    for (i, gi) in basis.indices().iter().enumerate() {
        let kg: Vec<f64> = k.iter().zip(&basis.vectors()[i]).map(|(a, b)| a + b).collect();
        h[(i, i)] += Complex64::new(0.5 * dot(&kg, &kg), 0.0);
        for (j, gj) in basis.indices().iter().enumerate() {
            for a in 0..d {
                diff[a] = gi[a] - gj[a];
            }
            let v = pot.coefficient(&diff);
            if v != Complex64::default() {
                h[(i, j)] += v;
            }
        }
    }
    Ok(h)
}

fn check_cutoff(pot: &PotentialSpec, basis: &PlaneWaveBasis) -> Result<()> {
    for (v, _) in pot.coefficients() {
        if v.iter().all(|&x| x == 0) {
            continue;
        }
        let reachable = basis.indices().iter().any(|g| {
            let shifted: Vec<i64> = g.iter().zip(v).map(|(a, b)| a - b).collect();
            basis.position(&shifted).is_some()
        });
        if !reachable {
            return Err(Error::CutoffTooSmall { index: v.clone() });
        }
    }
    Ok(())
}

/// An eigenpair of `H(k)` for a simple band.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlochPair {
    pub k: BzPoint,
    pub band: usize,
    pub energy: f64,
    pub coefficients: Vec<Complex64>,
    pub gap_below: f64,
    pub gap_above: f64,
    pub group_velocity: Option<Vec<f64>>,
}

impl BlochPair {
    /// `chi(y) = sum_g c_g e^{i g.y}` at arbitrary points.
    pub fn realspace(&self, basis: &PlaneWaveBasis, points: &[Vec<f64>]) -> Vec<Complex64> {
        points
            .iter()
            .map(|y| basis.vectors().iter().zip(&self.coefficients).map(|(g, c)| c * Complex64::from_polar(1.0, dot(g, y))).sum())
            .collect()
    }
}

/// Full eigendecomposition of the discretized `H(k)` at a canonical `k`.
#[derive(Debug)]
pub struct Spectrum {
    pub k: BzPoint,
    pub energies: Vec<f64>,
    /// Gauge-fixed orthonormal eigenvectors (unit Euclidean norm), one per column.
    vectors: DMatrix<Complex64>,
    cell_volume: f64,
    kg: Vec<Vec<f64>>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Euclidean-normalized eigenvector of band `band` (1-based).
    pub fn vector(&self, band: usize) -> DVector<Complex64> {
        self.vectors.column(band - 1).into_owned()
    }

    fn gaps(&self, band: usize) -> (f64, f64) {
        let i = band - 1;
        let below = if i == 0 { f64::INFINITY } else { self.energies[i] - self.energies[i - 1] };
        let above = if i + 1 == self.dim() { f64::INFINITY } else { self.energies[i + 1] - self.energies[i] };
        (below, above)
    }

    fn check_simple(&self, band: usize, tol: f64) -> Result<()> {
        let (below, above) = self.gaps(band);
        let e = self.energies[band - 1];
        let gap = below.min(above);
        if gap < tol * e.abs().max(1.0) {
            return Err(Error::DegenerateBand { k: self.k.k.clone(), band, gap });
        }
        Ok(())
    }

    /// Bloch pair for band `band` with group velocity; rejects degenerate bands.
    pub fn pair(&self, band: usize, tol: f64) -> Result<BlochPair> {
        if band == 0 || band > self.dim() {
            return Err(Error::invalid(format!("band {band} outside 1..={}", self.dim())));
        }
        self.check_simple(band, tol)?;
        let mut pair = self.pair_unchecked(band);
        pair.group_velocity = Some(self.group_velocity(band));
        Ok(pair)
    }

    /// Bloch pair without the simplicity check or group velocity.
    pub fn pair_unchecked(&self, band: usize) -> BlochPair {
        let (gap_below, gap_above) = self.gaps(band);
        let scale = 1.0 / self.cell_volume.sqrt();
        BlochPair {
            k: self.k.clone(),
            band,
            energy: self.energies[band - 1],
            coefficients: self.vectors.column(band - 1).iter().map(|c| c * scale).collect(),
            gap_below,
            gap_above,
            group_velocity: None,
        }
    }

    /// Hellmann–Feynman velocity `sum_g (k+g) |u_g|^2`.
    pub fn group_velocity(&self, band: usize) -> Vec<f64> {
        let d = self.k.k.len();
        let mut v = vec![0.0; d];
        for (u, kg) in self.vectors.column(band - 1).iter().zip(&self.kg) {
            let w = u.norm_sqr();
            for j in 0..d {
                v[j] += kg[j] * w;
            }
        }
        v
    }

    /// Solves `(E - H) X = F` for `E` away from the spectrum.
    pub fn resolvent_apply(&self, energy: f64, f: &[Complex64], tol: f64) -> Result<Vec<Complex64>> {
        let distance = self.energies.iter().map(|e| (energy - e).abs()).fold(f64::INFINITY, f64::min);
        if distance <= tol {
            return Err(Error::NearResonance { k: self.k.k.clone(), energy, distance });
        }
        Ok(self.spectral_solve(energy, f, None))
    }

    /// The solution of `(E - H) X = (1 - P) F` orthogonal to band `band`.
    pub fn deflated_solve(&self, band: usize, f: &[Complex64], tol: f64) -> Result<Vec<Complex64>> {
        self.check_simple(band, tol)?;
        Ok(self.spectral_solve(self.energies[band - 1], f, Some(band - 1)))
    }

    /// Projection coefficient `<chi, F>` in the Euclidean coefficient inner
    /// product of the band's unit eigenvector.
    pub fn projection(&self, band: usize, f: &[Complex64]) -> Complex64 {
        self.vectors.column(band - 1).iter().zip(f).map(|(u, x)| u.conj() * x).sum()
    }

    fn spectral_solve(&self, energy: f64, f: &[Complex64], skip: Option<usize>) -> Vec<Complex64> {
        let n = self.dim();
        let fv = DVector::from_column_slice(f);
        let proj = self.vectors.adjoint() * fv;
        let mut scaled = DVector::<Complex64>::zeros(n);
        for j in 0..n {
            if Some(j) != skip {
                scaled[j] = proj[j] / (energy - self.energies[j]);
            }
        }
        (&self.vectors * scaled).iter().copied().collect()
    }
}

/// Band solver bound to a potential and plane-wave basis, with a per-k cache
/// of eigendecompositions.
#[derive(Debug)]
pub struct BlochSolver {
    pot: PotentialSpec,
    basis: PlaneWaveBasis,
    degeneracy_tol: f64,
    cache: Mutex<HashMap<Vec<u64>, Arc<Spectrum>>>,
}

const CACHE_LIMIT: usize = 1 << 14;

impl Clone for BlochSolver {
    fn clone(&self) -> Self {
        Self {
            pot: self.pot.clone(),
            basis: self.basis.clone(),
            degeneracy_tol: self.degeneracy_tol,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl BlochSolver {
    pub fn new(pot: PotentialSpec, basis: PlaneWaveBasis) -> Result<Self> {
        check_cutoff(&pot, &basis)?;
        Ok(Self { pot, basis, degeneracy_tol: DEGENERACY_TOL, cache: Mutex::new(HashMap::new()) })
    }

    /// Basis with `shells` dual shells (`-shells..=shells` in 1D).
    pub fn with_shells(pot: PotentialSpec, shells: usize) -> Result<Self> {
        let basis = PlaneWaveBasis::with_shells(&pot.lattice, shells)?;
        Self::new(pot, basis)
    }

    pub fn with_degeneracy_tol(mut self, tol: f64) -> Self {
        self.degeneracy_tol = tol;
        self
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.pot
    }

    pub fn basis(&self) -> &PlaneWaveBasis {
        &self.basis
    }

    pub fn lattice(&self) -> &Lattice {
        &self.pot.lattice
    }

    pub fn degeneracy_tol(&self) -> f64 {
        self.degeneracy_tol
    }

    /// Eigendecomposition at the canonical representative of `k`.
    pub fn spectrum(&self, k: &[f64]) -> Result<Arc<Spectrum>> {
        let (bz, _) = self.pot.lattice.wrap_to_bz(k);
        let key: Vec<u64> = bz.k.iter().map(|x| (x + 0.0).to_bits()).collect();
        if let Some(s) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(s.clone());
        }
        let s = Arc::new(self.compute_spectrum(bz)?);
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, s.clone());
        Ok(s)
    }

    fn compute_spectrum(&self, bz: BzPoint) -> Result<Spectrum> {
        let h = assemble_hamiltonian(&bz.k, &self.pot, &self.basis)?;
        let eig = h.symmetric_eigen();
        let n = self.basis.len();
        let mut cols: Vec<(f64, Vec<Complex64>)> = (0..n)
            .map(|j| {
                let mut v: Vec<Complex64> = eig.eigenvectors.column(j).iter().copied().collect();
                fix_gauge(&mut v);
                (eig.eigenvalues[j], v)
            })
            .collect();
        cols.sort_by(|a, b| {
            let tie = 1e-14 * a.0.abs().max(b.0.abs()).max(1.0);
            if (a.0 - b.0).abs() <= tie {
                lex_cmp(&a.1, &b.1)
            } else {
                a.0.total_cmp(&b.0)
            }
        });
        let energies = cols.iter().map(|c| c.0).collect();
        let vectors = DMatrix::from_fn(n, n, |i, j| cols[j].1[i]);
        let kg = self.basis.vectors().iter().map(|g| bz.k.iter().zip(g).map(|(a, b)| a + b).collect()).collect();
        Ok(Spectrum { k: bz, energies, vectors, cell_volume: self.pot.lattice.cell_volume(), kg })
    }

    /// Lowest `count` band energies at `k`, no simplicity check.
    pub fn energies(&self, k: &[f64], count: usize) -> Result<Vec<f64>> {
        let s = self.spectrum(k)?;
        if count > s.dim() {
            return Err(Error::invalid(format!("requested {count} bands from a basis of size {}", s.dim())));
        }
        Ok(s.energies[..count].to_vec())
    }

    pub fn energy(&self, k: &[f64], band: usize) -> Result<f64> {
        Ok(self.energies(k, band)?[band - 1])
    }

    /// First `count` bands at `k`; fails on any degenerate band.
    pub fn solve_bands(&self, k: &[f64], count: usize) -> Result<Vec<BlochPair>> {
        let s = self.spectrum(k)?;
        if count > s.dim() {
            return Err(Error::invalid(format!("requested {count} bands from a basis of size {}", s.dim())));
        }
        (1..=count)
            .map(|l| {
                s.check_simple(l, self.degeneracy_tol)?;
                Ok(s.pair_unchecked(l))
            })
            .collect()
    }

    /// Pair with group velocity for a single simple band.
    pub fn pair(&self, k: &[f64], band: usize) -> Result<BlochPair> {
        self.spectrum(k)?.pair(band, self.degeneracy_tol)
    }

    /// Group velocity of an existing pair.
    pub fn group_velocity(&self, pair: &BlochPair) -> Result<Vec<f64>> {
        let s = self.spectrum(&pair.k.k)?;
        s.check_simple(pair.band, self.degeneracy_tol)?;
        Ok(s.group_velocity(pair.band))
    }

    /// `(E - H(k))^{-1} F` for `F` given as plane-wave coefficients.
    pub fn resolvent_apply(&self, k: &[f64], energy: f64, f: &[Complex64]) -> Result<Vec<Complex64>> {
        self.spectrum(k)?.resolvent_apply(energy, f, RESOLVENT_TOL)
    }

    /// Solution orthogonal to `pair` of `(E - H) X = (1 - P) F`.
    pub fn deflated_solve(&self, pair: &BlochPair, f: &[Complex64]) -> Result<Vec<Complex64>> {
        self.spectrum(&pair.k.k)?.deflated_solve(pair.band, f, self.degeneracy_tol)
    }

    /// `<chi, X>` in `L^2(Y)` for coefficient vectors.
    pub fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        let s: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        s * self.pot.lattice.cell_volume()
    }

    /// Applies the discretized `H(k)` to a coefficient vector.
    pub fn apply_hamiltonian(&self, k: &[f64], x: &[Complex64]) -> Result<Vec<Complex64>> {
        let h = assemble_hamiltonian(k, &self.pot, &self.basis)?;
        Ok((h * DVector::from_column_slice(x)).iter().copied().collect())
    }
}

/// Makes the largest-modulus coefficient real and positive; near ties go to
/// the first index.
fn fix_gauge(v: &mut [Complex64]) {
    let max = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    let pivot = v.iter().position(|c| c.norm() >= max * (1.0 - 1e-9)).expect("nonzero vector");
    let phase = v[pivot].conj() / v[pivot].norm();
    for c in v.iter_mut() {
        *c *= phase;
    }
    v[pivot] = Complex64::new(v[pivot].re, 0.0);
}

fn lex_cmp(a: &[Complex64], b: &[Complex64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
        if o != std::cmp::Ordering::Equal {
            return o;
        }
    }
    std::cmp::Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn free_1d(shells: usize) -> BlochSolver {
        BlochSolver::with_shells(PotentialSpec::free(Lattice::cubic(1, 1.0).unwrap()), shells).unwrap()
    }

    #[test]
    fn free_hamiltonian_is_diagonal() {
        let s = free_1d(1);
        let h = assemble_hamiltonian(&[0.0], s.potential(), s.basis()).unwrap();
        let want = [2.0 * PI * PI, 0.0, 2.0 * PI * PI];
        for i in 0..3 {
            for j in 0..3 {
                let w = if i == j { want[i] } else { 0.0 };
                assert!((h[(i, j)].re - w).abs() < 1e-12 && h[(i, j)].im == 0.0);
            }
        }
    }

    #[test]
    fn mathieu_coupling_structure() {
        let pot = PotentialSpec::mathieu(0.7);
        let basis = PlaneWaveBasis::with_shells(&pot.lattice, 2).unwrap();
        let h = assemble_hamiltonian(&[0.2], &pot, &basis).unwrap();
        for i in 0..5usize {
            for j in 0..5 {
                if i.abs_diff(j) == 1usize {
                    assert_eq!(h[(i, j)], Complex64::new(0.7, 0.0));
                } else if i != j {
                    assert_eq!(h[(i, j)], Complex64::default());
                }
            }
        }
    }

    #[test]
    fn cutoff_too_small_is_reported() {
        let pot = PotentialSpec::mathieu(0.5).with_cos(&[3], 0.2);
        let basis = PlaneWaveBasis::with_shells(&pot.lattice, 1).unwrap();
        match BlochSolver::new(pot, basis) {
            Err(Error::CutoffTooSmall { index }) => assert_eq!(index.len(), 1),
            other => panic!("expected CutoffTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn free_bands_and_degeneracy() {
        let s = free_1d(4);
        let pairs = s.solve_bands(&[PI / 2.0], 3).unwrap();
        let want = [PI * PI / 8.0, 9.0 * PI * PI / 8.0, 25.0 * PI * PI / 8.0];
        for (p, w) in pairs.iter().zip(want) {
            assert!((p.energy - w).abs() < 1e-12);
        }
        let err = s.solve_bands(&[0.0], 3).unwrap_err();
        assert!(matches!(err, Error::DegenerateBand { band: 2, .. }));
    }

    #[test]
    fn resolvent_and_deflation_diagonal_cases() {
        let s = free_1d(2);
        let one = |idx: i64| {
            let mut f = vec![Complex64::default(); s.basis().len()];
            f[s.basis().position(&[idx]).unwrap()] = Complex64::new(1.0, 0.0);
            f
        };
        let x = s.resolvent_apply(&[0.0], -1.0, &one(0)).unwrap();
        assert!((x[2] + 1.0).norm() < 1e-14);
        let x = s.resolvent_apply(&[0.0], 1.0, &one(1)).unwrap();
        assert!((x[3] - 1.0 / (1.0 - 2.0 * PI * PI)).norm() < 1e-14);
        assert!(matches!(s.resolvent_apply(&[0.0], 0.0, &one(0)), Err(Error::NearResonance { .. })));
        let ground = s.pair(&[0.0], 1).unwrap();
        let x = s.deflated_solve(&ground, &one(1)).unwrap();
        assert!((x[3] + 1.0 / (2.0 * PI * PI)).norm() < 1e-14);
        let x = s.deflated_solve(&ground, &ground.coefficients).unwrap();
        assert!(x.iter().all(|c| c.norm() < 1e-14));
    }

    #[test]
    fn gauge_and_normalization() {
        let s = BlochSolver::with_shells(PotentialSpec::mathieu(0.5), 10).unwrap();
        let p = s.pair(&[0.9], 2).unwrap();
        let norm: f64 = p.coefficients.iter().map(|c| c.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        let big = p.coefficients.iter().cloned().fold(Complex64::default(), |a, c| if c.norm() > a.norm() { c } else { a });
        assert!(big.im == 0.0 && big.re > 0.0);
    }
}
