//! Mode systems: the Σ map, the graphs `G_S^(Λ)`, resonance detection,
//! closure and weak-closure certificates, and the single-band resonance
//! search.
//!
//! Wave vectors are kept in fractional coordinates with respect to the dual
//! basis, wrapped to `[-1/2, 1/2)^d`. Mode indices are 0-based internally and
//! 1-based in exported files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bloch::{BlochPair, BlochSolver};
use crate::error::{Error, Result};
use crate::lattice::{torus_distance, wrap_fractional};
use crate::par;

/// Default cap on the number of enumerated tuples.
pub const TUPLE_BUDGET: u128 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Fractional-coordinate tolerance on wave vectors.
    pub tol_k: f64,
    /// Absolute energy tolerance.
    pub tol_e: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { tol_k: 1e-9, tol_e: 1e-8 }
    }
}

impl Tolerances {
    /// Default tolerances with `tol_e` scaled by `max(1, energy_scale)`.
    pub fn scaled(energy_scale: f64) -> Self {
        Self { tol_k: 1e-9, tol_e: 1e-8 * energy_scale.abs().max(1.0) }
    }
}

/// A mode `(k, band)`; `k` in fractional dual coordinates, band 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: Vec<f64>,
    pub band: usize,
}

impl Mode {
    pub fn new(k: &[f64], band: usize) -> Self {
        Self { k: wrap_fractional(k).0, band }
    }
}

/// A point `(k, E)` of `B x R`, `k` in wrapped fractional coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaPoint {
    pub k: Vec<f64>,
    pub energy: f64,
}

impl SigmaPoint {
    pub fn new(k: &[f64], energy: f64) -> Self {
        Self { k: wrap_fractional(k).0, energy }
    }

    pub fn matches(&self, other: &SigmaPoint, tol: &Tolerances) -> bool {
        (self.energy - other.energy).abs() <= tol.tol_e && torus_distance(&self.k, &other.k) <= tol.tol_k
    }
}

/// Source of band energies for graph membership tests.
pub trait BandGraph: Sync {
    fn dim(&self) -> usize;

    /// Energy of `band` at fractional `k`.
    fn energy(&self, k: &[f64], band: usize) -> Result<f64>;

    /// Smallest band `<= l_max` whose graph contains `sigma` within `tol_e`.
    fn on_graph(&self, sigma: &SigmaPoint, l_max: usize, tol_e: f64) -> Result<Option<usize>>;

    /// Whether the group velocity exists at `(k, band)`.
    fn has_group_velocity(&self, k: &[f64], band: usize) -> Result<bool>;
}

impl BandGraph for BlochSolver {
    fn dim(&self) -> usize {
        self.lattice().dim()
    }

    fn energy(&self, k: &[f64], band: usize) -> Result<f64> {
        BlochSolver::energy(self, &self.lattice().from_fractional(k), band)
    }

    fn on_graph(&self, sigma: &SigmaPoint, l_max: usize, tol_e: f64) -> Result<Option<usize>> {
        let kc = self.lattice().from_fractional(&sigma.k);
        let energies = self.energies(&kc, l_max.min(self.basis().len()))?;
        Ok(energies.iter().position(|e| (e - sigma.energy).abs() <= tol_e).map(|i| i + 1))
    }

    fn has_group_velocity(&self, k: &[f64], band: usize) -> Result<bool> {
        match self.pair(&self.lattice().from_fractional(k), band) {
            Ok(_) => Ok(true),
            Err(Error::DegenerateBand { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }
}

/// One explicit point of a synthetic band graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandEntry {
    pub k: Vec<f64>,
    pub band: usize,
    pub energy: f64,
    /// Marks a crossing where no group velocity exists.
    #[serde(default)]
    pub degenerate: bool,
}

/// A finite, explicitly listed graph; everything not listed is off-graph.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBandTable {
    pub dim: usize,
    pub entries: Vec<BandEntry>,
    #[serde(default = "default_table_tol")]
    pub tol_k: f64,
}

fn default_table_tol() -> f64 {
    1e-9
}

impl SyntheticBandTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new(), tol_k: 1e-9 }
    }

    pub fn with(mut self, k: &[f64], band: usize, energy: f64) -> Self {
        self.entries.push(BandEntry { k: wrap_fractional(k).0, band, energy, degenerate: false });
        self
    }

    fn at(&self, k: &[f64]) -> impl Iterator<Item = &BandEntry> {
        let k = wrap_fractional(k).0;
        let tol = self.tol_k;
        self.entries.iter().filter(move |e| torus_distance(&e.k, &k) <= tol)
    }
}

impl BandGraph for SyntheticBandTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, k: &[f64], band: usize) -> Result<f64> {
        self.at(k)
            .find(|e| e.band == band)
            .map(|e| e.energy)
            .ok_or_else(|| Error::invalid(format!("synthetic table has no band {band} at k = {k:?}")))
    }

    fn on_graph(&self, sigma: &SigmaPoint, l_max: usize, tol_e: f64) -> Result<Option<usize>> {
        Ok(self.at(&sigma.k).filter(|e| e.band <= l_max && (e.energy - sigma.energy).abs() <= tol_e).map(|e| e.band).min())
    }

    fn has_group_velocity(&self, k: &[f64], band: usize) -> Result<bool> {
        Ok(self.at(k).filter(|e| e.band == band).all(|e| !e.degenerate))
    }
}

/// A finite mode system with its Σ points and optional Bloch data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeSystem {
    pub modes: Vec<Mode>,
    pub sigmas: Vec<SigmaPoint>,
    pub tol: Tolerances,
    /// Bloch pairs with group velocities, present when built from a solver.
    #[serde(default)]
    pub pairs: Vec<BlochPair>,
}

impl ModeSystem {
    /// Mode system on an arbitrary band graph (no Bloch data attached).
    pub fn from_graph(graph: &dyn BandGraph, modes: Vec<Mode>, tol: Option<Tolerances>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::invalid("mode system must contain at least one mode"));
        }
        for m in &modes {
            if m.band == 0 || m.k.len() != graph.dim() {
                return Err(Error::invalid(format!("invalid mode {m:?}")));
            }
        }
        let energies: Vec<f64> = modes.iter().map(|m| graph.energy(&m.k, m.band)).collect::<Result<_>>()?;
        let scale = energies.iter().fold(0.0f64, |a, e| a.max(e.abs()));
        let tol = tol.unwrap_or_else(|| Tolerances::scaled(scale));
        let sigmas: Vec<SigmaPoint> = modes.iter().zip(&energies).map(|(m, &e)| SigmaPoint::new(&m.k, e)).collect();
        for i in 0..sigmas.len() {
            for j in 0..i {
                if sigmas[i].matches(&sigmas[j], &tol) {
                    return Err(Error::invalid(format!("modes {} and {} have the same sigma point", j + 1, i + 1)));
                }
            }
        }
        Ok(Self { modes, sigmas, tol, pairs: Vec::new() })
    }

    /// Mode system on the Bloch bands of `solver`; every band must be simple.
    pub fn from_solver(solver: &BlochSolver, modes: Vec<Mode>, tol: Option<Tolerances>) -> Result<Self> {
        let mut system = Self::from_graph(solver, modes, tol)?;
        let lattice = solver.lattice();
        system.pairs = system.modes.iter().map(|m| solver.pair(&lattice.from_fractional(&m.k), m.band)).collect::<Result<_>>()?;
        Ok(system)
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.sigmas.iter().map(|s| s.energy).collect()
    }

    /// Group velocities (requires Bloch data).
    pub fn group_velocities(&self) -> Result<Vec<Vec<f64>>> {
        if self.pairs.len() != self.modes.len() {
            return Err(Error::invalid("mode system carries no Bloch data"));
        }
        self.pairs.iter().map(|p| p.group_velocity.clone().ok_or_else(|| Error::invalid("pair without group velocity"))).collect()
    }

    /// Σ of a tuple of mode indices; the length must be odd.
    pub fn sigma(&self, tuple: &[usize]) -> Result<SigmaPoint> {
        if tuple.len().is_multiple_of(2) {
            return Err(Error::invalid("sigma needs a tuple of odd length"));
        }
        let mut coeff = vec![0i64; self.len()];
        for (pos, &m) in tuple.iter().enumerate() {
            if m >= self.len() {
                return Err(Error::invalid(format!("mode index {m} out of range")));
            }
            coeff[m] += if pos % 2 == 0 { 1 } else { -1 };
        }
        Ok(self.combination(&coeff))
    }

    /// `sum_m c_m sigma_m`, evaluated in mode order.
    pub fn combination(&self, coeff: &[i64]) -> SigmaPoint {
        let d = self.modes[0].k.len();
        let mut k = vec![0.0; d];
        let mut e = 0.0;
        for (c, s) in coeff.iter().zip(&self.sigmas) {
            if *c == 0 {
                continue;
            }
            for j in 0..d {
                k[j] += *c as f64 * s.k[j];
            }
            e += *c as f64 * s.energy;
        }
        SigmaPoint::new(&k, e)
    }

    /// Σ(S) as graph points.
    pub fn base_graph(&self) -> SigmaGraph {
        let points = self
            .sigmas
            .iter()
            .enumerate()
            .map(|(m, s)| GraphPoint { sigma: s.clone(), tuples: vec![vec![m]], multiplicity: 1 })
            .collect();
        SigmaGraph { order: 1, points }
    }

    /// Whether `sigma` equals some Σ(μ_m) within tolerance.
    pub fn in_base(&self, sigma: &SigmaPoint) -> Option<usize> {
        self.sigmas.iter().position(|s| s.matches(sigma, &self.tol))
    }
}

/// A deduplicated point of a Σ graph with the tuples producing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphPoint {
    pub sigma: SigmaPoint,
    /// Lexicographically smallest generating tuple per distinct integer
    /// combination, in ascending order.
    pub tuples: Vec<Vec<usize>>,
    /// Number of tuples of `S^Λ` mapping to this point.
    pub multiplicity: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaGraph {
    pub order: usize,
    pub points: Vec<GraphPoint>,
}

impl SigmaGraph {
    pub fn contains(&self, sigma: &SigmaPoint, tol: &Tolerances) -> bool {
        self.points.iter().any(|p| p.sigma.matches(sigma, tol))
    }

    pub fn sigmas(&self) -> Vec<SigmaPoint> {
        self.points.iter().map(|p| p.sigma.clone()).collect()
    }
}

/// Per-block map from integer combination to a representative tuple and its count.
type PartialGraph = BTreeMap<Vec<i64>, (Vec<usize>, u64)>;

/// `G_S^(Λ) = Σ(S^Λ)`, deduplicated under the system tolerances.
pub fn graph(system: &ModeSystem, order: usize) -> Result<SigmaGraph> {
    graph_with_budget(system, order, TUPLE_BUDGET)
}

pub fn graph_with_budget(system: &ModeSystem, order: usize, budget: u128) -> Result<SigmaGraph> {
    if order.is_multiple_of(2) {
        return Err(Error::invalid("graph order must be odd"));
    }
    let m = system.len();
    let required = (m as u128).checked_pow(order as u32).unwrap_or(u128::MAX);
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let total = required as usize;
    const BLOCK: usize = 1 << 14;
    let blocks = total.div_ceil(BLOCK);
    // Each block maps tuples to integer combinations; identical combinations
    // give identical Σ values, so that is the exact first-level key.
    let partial: Vec<PartialGraph> = par::map_range(blocks, |b| {
        let mut out: BTreeMap<Vec<i64>, (Vec<usize>, u64)> = BTreeMap::new();
        let mut tuple = vec![0usize; order];
        let mut coeff = vec![0i64; m];
        for idx in b * BLOCK..((b + 1) * BLOCK).min(total) {
            let mut rem = idx;
            for pos in (0..order).rev() {
                tuple[pos] = rem % m;
                rem /= m;
            }
            coeff.iter_mut().for_each(|c| *c = 0);
            for (pos, &t) in tuple.iter().enumerate() {
                coeff[t] += if pos % 2 == 0 { 1 } else { -1 };
            }
            out.entry(coeff.clone()).and_modify(|e| e.1 += 1).or_insert_with(|| (tuple.clone(), 1));
        }
        out
    });
    let mut merged: BTreeMap<Vec<i64>, (Vec<usize>, u64)> = BTreeMap::new();
    for part in partial {
        for (c, (t, n)) in part {
            merged
                .entry(c)
                .and_modify(|e| {
                    e.1 += n;
                    if t < e.0 {
                        e.0 = t.clone();
                    }
                })
                .or_insert((t, n));
        }
    }
    let combos: Vec<(SigmaPoint, Vec<usize>, u64)> =
        merged.into_iter().map(|(c, (t, n))| (system.combination(&c), t, n)).collect();
    Ok(SigmaGraph { order, points: dedup_points(combos, &system.tol) })
}

/// Merges points that agree within tolerance. Output order: by the smallest
/// generating tuple.
fn dedup_points(items: Vec<(SigmaPoint, Vec<usize>, u64)>, tol: &Tolerances) -> Vec<GraphPoint> {
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| items[a].0.energy.total_cmp(&items[b].0.energy).then(a.cmp(&b)));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (oi, &a) in order.iter().enumerate() {
        for &b in &order[oi + 1..] {
            if items[b].0.energy - items[a].0.energy > tol.tol_e {
                break;
            }
            if torus_distance(&items[a].0.k, &items[b].0.k) <= tol.tol_k {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut points: Vec<GraphPoint> = groups
        .into_values()
        .map(|members| {
            let mut tuples: Vec<Vec<usize>> = members.iter().map(|&i| items[i].1.clone()).collect();
            tuples.sort();
            GraphPoint { sigma: items[members[0]].0.clone(), multiplicity: members.iter().map(|&i| items[i].2).sum(), tuples }
        })
        .collect();
    points.sort_by(|a, b| a.tuples[0].cmp(&b.tuples[0]));
    points
}

/// Default number of bands treated as "the graph".
pub fn default_l_max(system: &ModeSystem) -> usize {
    2 * system.modes.iter().map(|m| m.band).max().unwrap_or(1) + 4
}

/// One witness of `G_S^(Λ) ∩ (G \ G_S^(1)) ≠ ∅`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub tuple: Vec<usize>,
    pub sigma: SigmaPoint,
    pub band: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Closed,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureCertificate {
    pub order: usize,
    pub verdict: Verdict,
    pub violations: Vec<Violation>,
    pub tol: Tolerances,
    pub l_max: usize,
}

impl ClosureCertificate {
    pub fn is_closed(&self) -> bool {
        self.verdict == Verdict::Closed
    }

    /// Hex SHA-256 of the JSON form.
    pub fn digest(&self) -> String {
        crate::bloch::hex_digest(&serde_json::to_vec(self).expect("certificate serializes"))
    }
}

/// Smallest band `<= l_max` whose graph contains `sigma`.
pub fn is_on_graph(graph: &dyn BandGraph, sigma: &SigmaPoint, l_max: usize, tol: &Tolerances) -> Result<Option<usize>> {
    graph.on_graph(sigma, l_max, tol.tol_e)
}

/// Checks `G_S^(Λ) ∩ (G \ G_S^(1)) = ∅` up to `l_max` bands.
pub fn closure_check(system: &ModeSystem, order: usize, bands: &dyn BandGraph, l_max: usize) -> Result<ClosureCertificate> {
    let g = graph(system, order)?;
    let hits: Vec<Option<usize>> =
        par::map(&g.points, |p| bands.on_graph(&p.sigma, l_max, system.tol.tol_e)).into_iter().collect::<Result<_>>()?;
    let violations: Vec<Violation> = g
        .points
        .iter()
        .zip(hits)
        .filter_map(|(p, hit)| {
            let band = hit?;
            if system.in_base(&p.sigma).is_some() {
                return None;
            }
            Some(Violation { tuple: p.tuples[0].clone(), sigma: p.sigma.clone(), band })
        })
        .collect();
    let verdict = if violations.is_empty() { Verdict::Closed } else { Verdict::Violated };
    Ok(ClosureCertificate { order, verdict, violations, tol: system.tol, l_max })
}

/// All `(p, q, r, m)` with `Σ(μ_p, μ_q, μ_r) = Σ(μ_m)`, lexicographic.
pub fn resonant_quadruples(system: &ModeSystem) -> Vec<[usize; 4]> {
    let m = system.len();
    let mut out = Vec::new();
    for p in 0..m {
        for q in 0..m {
            for r in 0..m {
                let mut coeff = vec![0i64; m];
                coeff[p] += 1;
                coeff[q] -= 1;
                coeff[r] += 1;
                let s = system.combination(&coeff);
                for (mm, target) in system.sigmas.iter().enumerate() {
                    if s.matches(target, &system.tol) {
                        out.push([p, q, r, mm]);
                    }
                }
            }
        }
    }
    out
}

/// Result of the single-band four-wave resonance search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonantTriple {
    pub band: usize,
    /// `k_1, k_2, k_3 = 2 k_1 - k_2` in wrapped fractional coordinates.
    pub k: [Vec<f64>; 3],
    pub residual: f64,
    pub k_min: Vec<f64>,
    pub k_max: Vec<f64>,
    /// `e(k_max, k_min)` and `e(k_min, k_max)`.
    pub endpoint_values: (f64, f64),
}

/// Options for [`single_band_resonance_search`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Resolution of the band scan per axis.
    pub scan_points: usize,
    /// Offset `k_1 - k_2` as a fraction of the doubled min-to-max vector.
    pub offset: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { scan_points: 256, offset: 0.3 }
    }
}

/// Finds distinct `k_1, k_2, k_3 = 2k_1 - k_2` on one band with
/// `2E(k_1) = E(k_2) + E(k_3)`.
///
/// The band is scanned for its minimum and maximum. With a fixed offset
/// `delta`, `f(k_1) = e(k_1, k_1 - delta)` is positive at the maximum and
/// negative at the minimum, so bisection along the segment between them
/// yields a root with `k_2 = k_1 - delta` and `k_3 = k_1 + delta` distinct.
pub fn single_band_resonance_search(band: usize, graph: &dyn BandGraph, opts: SearchOptions) -> Result<ResonantTriple> {
    let d = graph.dim();
    let n = opts.scan_points.max(4);
    let total = n.checked_pow(d as u32).ok_or_else(|| Error::invalid("scan grid too large"))?;
    let points: Vec<Vec<f64>> = (0..total)
        .map(|idx| {
            let mut rem = idx;
            let mut f = vec![0.0; d];
            for axis in (0..d).rev() {
                f[axis] = (rem % n) as f64 / n as f64 - 0.5;
                rem /= n;
            }
            f
        })
        .collect();
    let values: Vec<f64> = par::map(&points, |f| graph.energy(f, band)).into_iter().collect::<Result<_>>()?;
    let (mut imin, mut imax) = (0, 0);
    for (i, v) in values.iter().enumerate() {
        if *v < values[imin] {
            imin = i;
        }
        if *v > values[imax] {
            imax = i;
        }
    }
    let (k_min, k_max) = (points[imin].clone(), points[imax].clone());
    let variation = values[imax] - values[imin];

    // Minimal-image direction from the minimum to the maximum.
    let dir: Vec<f64> = k_max.iter().zip(&k_min).map(|(a, b)| (a - b) - (a - b).round()).collect();
    let mut delta: Vec<f64> = dir.iter().map(|x| 2.0 * opts.offset * x).collect();
    if delta.iter().all(|x| x.abs() < 1e-12) {
        delta = vec![0.0; d];
        delta[0] = opts.offset;
    }
    if variation < 1e-12 {
        let neg: Vec<f64> = delta.iter().map(|x| -x).collect();
        return Err(Error::FlatBand {
            band,
            variation,
            triple: [vec![0.0; d], wrap_fractional(&neg).0, wrap_fractional(&delta).0],
        });
    }

    let e = |k1: &[f64], k2: &[f64]| -> Result<f64> {
        let k3: Vec<f64> = k1.iter().zip(k2).map(|(a, b)| 2.0 * a - b).collect();
        Ok(2.0 * graph.energy(k1, band)? - graph.energy(k2, band)? - graph.energy(&k3, band)?)
    };
    let endpoint_values = (e(&k_max, &k_min)?, e(&k_min, &k_max)?);

    let at = |s: f64| -> Vec<f64> { k_min.iter().zip(&dir).map(|(a, u)| a + s * u).collect() };
    let f = |s: f64| -> Result<f64> {
        let k1 = at(s);
        let k2: Vec<f64> = k1.iter().zip(&delta).map(|(a, b)| a - b).collect();
        e(&k1, &k2)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut f_lo, f_hi) = (f(lo)?, f(hi)?);
    if f_lo.signum() == f_hi.signum() || f_lo == 0.0 && f_hi == 0.0 {
        return Err(Error::SignSearchFailed { left: f_lo, right: f_hi });
    }
    let mut s = 0.5;
    let mut fs = f(s)?;
    for _ in 0..200 {
        s = 0.5 * (lo + hi);
        fs = f(s)?;
        if fs.abs() < 1e-13 || hi - lo < 1e-16 {
            break;
        }
        if fs.signum() == f_lo.signum() {
            lo = s;
            f_lo = fs;
        } else {
            hi = s;
        }
    }
    let k1 = at(s);
    let k2: Vec<f64> = k1.iter().zip(&delta).map(|(a, b)| a - b).collect();
    let k3: Vec<f64> = k1.iter().zip(&k2).map(|(a, b)| 2.0 * a - b).collect();
    Ok(ResonantTriple {
        band,
        k: [wrap_fractional(&k1).0, wrap_fractional(&k2).0, wrap_fractional(&k3).0],
        residual: fs,
        k_min,
        k_max,
        endpoint_values,
    })
}

/// Condition of the weak-closure definition that failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeakVerdict {
    WeaklyClosed,
    /// The system is not closed of order 3, so the construction does not apply.
    NotClosedOfOrder3 {
        certificate: ClosureCertificate,
    },
    /// Condition (iv): `sigma` is a graph point of `G_{2n+1}` generated by
    /// the nonlinearity at step `n` without appearing in `G_{2n-1}`.
    Violated {
        n: usize,
        sigma: SigmaPoint,
        band: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakClosureReport {
    pub order: usize,
    /// `G_1, G_3, ..., G_{2N+1}` (truncated after a violation).
    pub sets: Vec<Vec<SigmaPoint>>,
    /// `Ǧ_3, ..., Ǧ_{2N+1}` matching `sets[1..]`.
    pub generated: Vec<Vec<SigmaPoint>>,
    pub verdict: WeakVerdict,
}

impl WeakClosureReport {
    pub fn is_weakly_closed(&self) -> bool {
        self.verdict == WeakVerdict::WeaklyClosed
    }
}

/// Greedy-minimal weak-closure construction of order `2N+1`.
///
/// `G_1 = Σ(S)`; for `n = 1..=N`,
/// `G_{2n+1} = G_{2n-1} ∪ Ǧ_{2n+1} ∪ (G_S^(2n+3) ∩ (G \ G_1))`, the last term
/// only for `n < N` so that graph points generated at the next step already
/// carry a free coefficient. Condition (iv) is checked at every step and (v)
/// on the final set.
pub fn weak_closure_check(system: &ModeSystem, n_max: usize, bands: &dyn BandGraph, l_max: usize) -> Result<WeakClosureReport> {
    let order = 2 * n_max + 1;
    let cert = closure_check(system, 3, bands, l_max)?;
    if !cert.is_closed() {
        return Ok(WeakClosureReport {
            order,
            sets: vec![system.sigmas.clone()],
            generated: Vec::new(),
            verdict: WeakVerdict::NotClosedOfOrder3 { certificate: cert },
        });
    }
    let tol = system.tol;
    let on_graph_new = |sigma: &SigmaPoint| -> Result<Option<usize>> {
        if system.in_base(sigma).is_some() {
            return Ok(None);
        }
        bands.on_graph(sigma, l_max, tol.tol_e)
    };
    let lookahead = |n: usize| -> Result<Vec<SigmaPoint>> {
        let g = graph(system, 2 * n + 3)?;
        let mut out = Vec::new();
        for p in g.points {
            if on_graph_new(&p.sigma)?.is_some() {
                out.push(p.sigma);
            }
        }
        Ok(out)
    };

    let mut sets: Vec<Vec<SigmaPoint>> = vec![system.sigmas.clone()];
    let mut generated: Vec<Vec<SigmaPoint>> = Vec::new();
    for n in 1..=n_max {
        let check = assoc_set(&sets, n, &tol)?;
        let prev = &sets[n - 1];
        for sigma in &check {
            if contains(prev, sigma, &tol) {
                continue;
            }
            if let Some(band) = on_graph_new(sigma)? {
                let mut current = union(prev, &check, &tol);
                if n < n_max {
                    current = union(&current, &lookahead(n)?, &tol);
                }
                sets.push(current);
                generated.push(check.clone());
                return Ok(WeakClosureReport {
                    order,
                    sets,
                    generated,
                    verdict: WeakVerdict::Violated { n, sigma: sigma.clone(), band },
                });
            }
        }
        let mut current = union(prev, &check, &tol);
        if n < n_max {
            current = union(&current, &lookahead(n)?, &tol);
        }
        sets.push(current);
        generated.push(check);
    }
    // Condition (v) on the final set.
    for sigma in sets.last().expect("nonempty") {
        if let Some(band) = bands.on_graph(sigma, l_max, tol.tol_e)? {
            if !bands.has_group_velocity(&sigma.k, band)? {
                return Err(Error::DegenerateBand { k: sigma.k.clone(), band, gap: 0.0 });
            }
        }
    }
    Ok(WeakClosureReport { order, sets, generated, verdict: WeakVerdict::WeaklyClosed })
}

/// `Ǧ_{2n+1} = ∪_{n1+n2+n3=n-1} (G_{2n1+1} - G_{2n2+1} + G_{2n3+1})`.
fn assoc_set(sets: &[Vec<SigmaPoint>], n: usize, tol: &Tolerances) -> Result<Vec<SigmaPoint>> {
    let mut size: u128 = 0;
    for n1 in 0..n {
        for n2 in 0..n - n1 {
            let n3 = n - 1 - n1 - n2;
            size += (sets[n1].len() * sets[n2].len() * sets[n3].len()) as u128;
        }
    }
    if size > TUPLE_BUDGET {
        return Err(Error::BudgetExceeded { required: size, budget: TUPLE_BUDGET });
    }
    let mut raw = Vec::new();
    for n1 in 0..n {
        for n2 in 0..n - n1 {
            let n3 = n - 1 - n1 - n2;
            for a in &sets[n1] {
                for b in &sets[n2] {
                    for c in &sets[n3] {
                        let k: Vec<f64> = (0..a.k.len()).map(|j| a.k[j] - b.k[j] + c.k[j]).collect();
                        raw.push(SigmaPoint::new(&k, a.energy - b.energy + c.energy));
                    }
                }
            }
        }
    }
    Ok(union(&[], &raw, tol))
}

fn contains(set: &[SigmaPoint], sigma: &SigmaPoint, tol: &Tolerances) -> bool {
    set.iter().any(|s| s.matches(sigma, tol))
}

/// `a ∪ b` keeping first occurrences, sorted by energy then wave vector.
fn union(a: &[SigmaPoint], b: &[SigmaPoint], tol: &Tolerances) -> Vec<SigmaPoint> {
    let mut all: Vec<SigmaPoint> = a.iter().chain(b).cloned().collect();
    all.sort_by(|x, y| {
        x.energy.total_cmp(&y.energy).then_with(|| {
            x.k.iter().zip(&y.k).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut out: Vec<SigmaPoint> = Vec::new();
    for s in all {
        let dup =
            out.iter().rev().take_while(|o| s.energy - o.energy <= tol.tol_e).any(|o| torus_distance(&o.k, &s.k) <= tol.tol_k);
        if !dup {
            out.push(s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::PotentialSpec;
    use crate::lattice::Lattice;

    fn free_solver() -> BlochSolver {
        BlochSolver::with_shells(PotentialSpec::free(Lattice::cubic(1, 1.0).unwrap()), 6).unwrap()
    }

    #[test]
    fn sigma_of_free_pair() {
        let s = free_solver();
        let sys = ModeSystem::from_graph(&s, vec![Mode::new(&[0.25], 1), Mode::new(&[-0.25], 1)], None).unwrap();
        let sg = sys.sigma(&[0, 1, 0]).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((sg.k[0] + 0.25).abs() < 1e-15);
        assert!((sg.energy - pi2 / 8.0).abs() < 1e-12);
        assert_eq!(sys.sigma(&[0, 0, 0]).unwrap(), sys.sigmas[0]);
    }

    #[test]
    fn single_mode_graph_is_a_point() {
        let s = free_solver();
        let sys = ModeSystem::from_graph(&s, vec![Mode::new(&[0.1], 1)], None).unwrap();
        for order in [1, 3, 5, 7] {
            let g = graph(&sys, order).unwrap();
            assert_eq!(g.points.len(), 1);
            assert_eq!(g.points[0].multiplicity, 1);
        }
        let q = resonant_quadruples(&sys);
        assert_eq!(q, vec![[0, 0, 0, 0]]);
    }

    #[test]
    fn budget_is_enforced() {
        let s = free_solver();
        let sys = ModeSystem::from_graph(&s, vec![Mode::new(&[0.1], 1), Mode::new(&[0.2], 1)], None).unwrap();
        match graph_with_budget(&sys, 5, 16) {
            Err(Error::BudgetExceeded { required: 32, budget: 16 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn free_on_graph() {
        let s = free_solver();
        let pi2 = std::f64::consts::PI.powi(2);
        let tol = Tolerances::scaled(20.0);
        assert_eq!(is_on_graph(&s, &SigmaPoint::new(&[0.25], 9.0 * pi2 / 8.0), 4, &tol).unwrap(), Some(2));
        assert_eq!(is_on_graph(&s, &SigmaPoint::new(&[0.25], pi2 / 8.0 - 1e-3), 4, &tol).unwrap(), None);
    }
}
