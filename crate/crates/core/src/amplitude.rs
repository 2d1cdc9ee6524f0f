//! Four-wave amplitude equations
//! `i ∂_t a_m + i ϑ_m·∇a_m = Σ κ_(p,q,r,m) a_p ā_q a_r`
//! on a periodic macroscopic box, integrated by Strang splitting of exact
//! spectral transport and a pointwise RK4 nonlinear flow.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coupling::CouplingTable;
use crate::error::{Error, Result};
use crate::grid::PeriodicBox;
use crate::lattice::dot;
use crate::modes::ModeSystem;
use crate::par;

/// Periodic macroscopic box with power-of-two resolution.
pub fn macro_grid(lengths: &[f64], points: &[usize]) -> Result<PeriodicBox> {
    if points.iter().any(|n| !n.is_power_of_two()) {
        return Err(Error::invalid("macro grid point counts must be powers of two"));
    }
    PeriodicBox::new(lengths, points)
}

/// Coefficients of the amplitude system, independent of the grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmplitudeSystem {
    pub velocities: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    /// `terms[m]` lists `(p, q, r, κ_(p,q,r,m))`.
    pub terms: Vec<Vec<(usize, usize, usize, Complex64)>>,
    /// Resonant quadruples in table order.
    pub quadruples: Vec<[usize; 4]>,
}

impl AmplitudeSystem {
    pub fn new(velocities: Vec<Vec<f64>>, energies: Vec<f64>, table: &CouplingTable) -> Result<Self> {
        let m = velocities.len();
        if energies.len() != m {
            return Err(Error::invalid("velocity and energy counts differ"));
        }
        let mut terms = vec![Vec::new(); m];
        for (&[p, q, r, mm], &k) in &table.entries {
            if p.max(q).max(r).max(mm) >= m {
                return Err(Error::invalid("coupling table refers to a missing mode"));
            }
            terms[mm].push((p, q, r, k));
        }
        Ok(Self { velocities, energies, terms, quadruples: table.entries.keys().copied().collect() })
    }

    pub fn from_modes(system: &ModeSystem, table: &CouplingTable) -> Result<Self> {
        Self::new(system.group_velocities()?, system.energies(), table)
    }

    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    /// `-i Σ κ a_p ā_q a_r` for every `m`.
    pub fn rhs(&self, a: &[Complex64], out: &mut [Complex64]) {
        for (m, terms) in self.terms.iter().enumerate() {
            let mut s = Complex64::default();
            for &(p, q, r, k) in terms {
                s += k * a[p] * a[q].conj() * a[r];
            }
            out[m] = Complex64::new(s.im, -s.re);
        }
    }

    /// Nonlinear term `N_m(a) = Σ κ a_p ā_q a_r` on whole fields.
    pub fn nonlinearity(&self, fields: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        let n = fields.first().map_or(0, Vec::len);
        let m = self.len();
        let mut out = vec![vec![Complex64::default(); n]; m];
        for (mm, terms) in self.terms.iter().enumerate() {
            let dst = &mut out[mm];
            par::for_each_mut(dst, |i, z| {
                let mut s = Complex64::default();
                for &(p, q, r, k) in terms {
                    s += k * fields[p][i] * fields[q][i].conj() * fields[r][i];
                }
                *z = s;
            });
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct AmplitudeState {
    pub t: f64,
    pub fields: Vec<Vec<Complex64>>,
}

impl AmplitudeState {
    pub fn zeros(m: usize, grid: &PeriodicBox) -> Self {
        Self { t: 0.0, fields: vec![vec![Complex64::default(); grid.len()]; m] }
    }
}

/// Gaussian initial datum `A exp(-|x-c|²/w²) e^{i ξ·(x-c)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: Complex64,
    #[serde(default)]
    pub phase_k: Vec<f64>,
}

impl Gaussian {
    pub fn eval(&self, x: &[f64]) -> Complex64 {
        let mut r2 = 0.0;
        let mut ph = 0.0;
        for j in 0..x.len() {
            let d = x[j] - self.center[j];
            r2 += d * d;
            ph += self.phase_k.get(j).copied().unwrap_or(0.0) * d;
        }
        self.amplitude * (-r2 / (self.width * self.width)).exp() * Complex64::from_polar(1.0, ph)
    }

    pub fn sample(&self, grid: &PeriodicBox) -> Vec<Complex64> {
        grid.sample(|x| self.eval(x))
    }
}

/// Exact transport `a_m(x) -> a_m(x - ϑ_m Δt)` via the Fourier multiplier.
pub fn transport_step(system: &AmplitudeSystem, grid: &PeriodicBox, state: &mut AmplitudeState, dt: f64) {
    for (field, v) in state.fields.iter_mut().zip(&system.velocities) {
        if v.iter().all(|&x| x == 0.0) {
            continue;
        }
        grid.apply_multiplier(field, |i| {
            let s: f64 = (0..grid.dim()).map(|a| grid.wavevector_component(i, a) * v[a]).sum();
            Complex64::from_polar(1.0, -s * dt)
        });
    }
}

/// Pointwise classical RK4 for `i da/dt = N(a)`.
pub fn nonlinear_step(system: &AmplitudeSystem, state: &mut AmplitudeState, dt: f64, step: usize) -> Result<()> {
    let m = system.len();
    if system.terms.iter().all(Vec::is_empty) {
        return Ok(());
    }
    let n = state.fields.first().map_or(0, Vec::len);
    // Interleave point-major so that chunks of points can be advanced in parallel.
    let mut packed = vec![Complex64::default(); n * m];
    for (mm, f) in state.fields.iter().enumerate() {
        for (i, z) in f.iter().enumerate() {
            packed[i * m + mm] = *z;
        }
    }
    const POINTS: usize = 512;
    par::for_each_chunk_mut(&mut packed, POINTS * m, |_, chunk| {
        let mut k1 = vec![Complex64::default(); m];
        let mut k2 = vec![Complex64::default(); m];
        let mut k3 = vec![Complex64::default(); m];
        let mut k4 = vec![Complex64::default(); m];
        let mut tmp = vec![Complex64::default(); m];
        for a in chunk.chunks_mut(m) {
            system.rhs(a, &mut k1);
            for j in 0..m {
                tmp[j] = a[j] + 0.5 * dt * k1[j];
            }
            system.rhs(&tmp, &mut k2);
            for j in 0..m {
                tmp[j] = a[j] + 0.5 * dt * k2[j];
            }
            system.rhs(&tmp, &mut k3);
            for j in 0..m {
                tmp[j] = a[j] + dt * k3[j];
            }
            system.rhs(&tmp, &mut k4);
            for j in 0..m {
                a[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
    });
    if packed.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NonFiniteField { step });
    }
    for (mm, f) in state.fields.iter_mut().enumerate() {
        for (i, z) in f.iter_mut().enumerate() {
            *z = packed[i * m + mm];
        }
    }
    Ok(())
}

/// Number of steps `T / Δt`, requiring an integer ratio.
pub fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && t_end >= 0.0) {
        return Err(Error::invalid("time step must be positive and horizon non-negative"));
    }
    let steps = (t_end / dt).round();
    if (steps * dt - t_end).abs() > 1e-9 * t_end.max(dt) {
        return Err(Error::invalid(format!("horizon {t_end} is not an integer multiple of {dt}")));
    }
    Ok(steps as usize)
}

/// Checkpointed trajectory.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<AmplitudeState>,
}

impl Trajectory {
    pub fn last(&self) -> &AmplitudeState {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Strang splitting `T(Δt/2) ∘ N(Δt) ∘ T(Δt/2)`; checkpoints every
/// `every` steps (0 keeps only the endpoints).
pub fn strang_evolve(
    system: &AmplitudeSystem,
    grid: &PeriodicBox,
    initial: &AmplitudeState,
    t_end: f64,
    dt: f64,
    every: usize,
) -> Result<Trajectory> {
    let steps = step_count(t_end, dt)?;
    let mut state = initial.clone();
    let mut states = vec![state.clone()];
    for step in 1..=steps {
        transport_step(system, grid, &mut state, 0.5 * dt);
        nonlinear_step(system, &mut state, dt, step)?;
        transport_step(system, grid, &mut state, 0.5 * dt);
        state.t = initial.t + step as f64 * dt;
        if ((every > 0 && step % every == 0) || step == steps) && states.last().is_none_or(|s| s.t != state.t) {
            states.push(state.clone());
        }
    }
    Ok(Trajectory { states })
}

/// Orthonormal basis of `{ω : ω_p - ω_q + ω_r = ω_m for all quadruples}`,
/// starting with the normalized all-ones vector.
pub fn compatible_weights(quadruples: &[[usize; 4]], m: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for &[p, q, r, mm] in quadruples {
        let mut row = vec![0.0; m];
        row[p] += 1.0;
        row[q] -= 1.0;
        row[r] += 1.0;
        row[mm] -= 1.0;
        if row.iter().any(|&x| x != 0.0) {
            rows.push(row);
        }
    }
    let mut candidates: Vec<Vec<f64>> = vec![vec![1.0; m]];
    if rows.is_empty() {
        candidates.extend((0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()));
    } else {
        let c = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
        let ctc = c.transpose() * &c;
        let eig = ctc.symmetric_eigen();
        let scale = eig.eigenvalues.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
        for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda.abs() < 1e-10 * scale {
                candidates.push(eig.eigenvectors.column(j).iter().copied().collect());
            }
        }
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for mut v in candidates {
        for b in &basis {
            let c = dot(b, &v);
            for j in 0..m {
                v[j] -= c * b[j];
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            // Clean round-off so exact zeros stay exact.
            v.iter_mut().for_each(|x| {
                if x.abs() < 1e-15 {
                    *x = 0.0
                }
            });
            basis.push(v);
        }
    }
    basis
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservedReport {
    pub t: f64,
    /// `‖a_m‖_{L²}` per mode.
    pub norms: Vec<f64>,
    pub mass: f64,
    /// `∫ Σ E_m |a_m|²`.
    pub energy_weighted: f64,
    /// One value per compatible weight vector.
    pub weighted: Vec<f64>,
    pub hamiltonian: f64,
    /// Translation integrals along the unit axes.
    pub translation: Vec<f64>,
}

/// Mass, `I(a)`, `Ĩ(a)`, `H^red` and `I^trans` by grid quadrature with
/// spectral gradients.
pub fn conserved_report(
    system: &AmplitudeSystem,
    grid: &PeriodicBox,
    state: &AmplitudeState,
    weights: &[Vec<f64>],
) -> ConservedReport {
    let dv = grid.cell_volume();
    let d = grid.dim();
    let sq: Vec<f64> = state.fields.iter().map(|f| f.iter().map(|z| z.norm_sqr()).sum::<f64>() * dv).collect();
    let mass = sq.iter().sum();
    let energy_weighted = sq.iter().zip(&system.energies).map(|(s, e)| s * e).sum();
    let weighted = weights.iter().map(|w| sq.iter().zip(w).map(|(s, x)| s * x).sum()).collect();
    let mut translation = vec![0.0; d];
    let mut transport = 0.0;
    for (f, v) in state.fields.iter().zip(&system.velocities) {
        for (axis, tr) in translation.iter_mut().enumerate() {
            let df = grid.derivative(f, axis);
            let im: f64 = f.iter().zip(&df).map(|(a, b)| (a.conj() * b).im).sum::<f64>() * dv;
            *tr += im;
            transport += v[axis] * im;
        }
    }
    let mut quartic = Complex64::default();
    for (m, terms) in system.terms.iter().enumerate() {
        for &(p, q, r, k) in terms {
            let s: Complex64 = (0..grid.len())
                .map(|i| {
                    let f = &state.fields;
                    f[p][i] * f[q][i].conj() * f[r][i] * f[m][i].conj()
                })
                .sum();
            quartic += 0.5 * k * s * dv;
        }
    }
    ConservedReport {
        t: state.t,
        norms: sq.iter().map(|s| s.sqrt()).collect(),
        mass,
        energy_weighted,
        weighted,
        hamiltonian: transport + quartic.re,
        translation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn single(kappa: f64, v: f64) -> AmplitudeSystem {
        let mut entries = BTreeMap::new();
        entries.insert([0, 0, 0, 0], Complex64::new(kappa, 0.0));
        let table = CouplingTable { kappa, n_per_dim: 8, entries };
        AmplitudeSystem::new(vec![vec![v]], vec![0.3], &table).unwrap()
    }

    #[test]
    fn constant_single_mode_rotates() {
        let sys = single(1.3, 0.7);
        let grid = macro_grid(&[4.0], &[16]).unwrap();
        let c = Complex64::new(0.6, -0.2);
        let init = AmplitudeState { t: 0.0, fields: vec![vec![c; 16]] };
        let out = strang_evolve(&sys, &grid, &init, 1.0, 1e-3, 0).unwrap();
        let want = c * Complex64::from_polar(1.0, -1.3 * c.norm_sqr());
        for z in &out.last().fields[0] {
            assert!((z - want).norm() < 1e-10);
        }
    }

    #[test]
    fn transport_of_plane_wave() {
        let sys = single(0.0, 1.0);
        let grid = macro_grid(&[2.0 * std::f64::consts::PI], &[32]).unwrap();
        let mut st = AmplitudeState { t: 0.0, fields: vec![grid.sample(|x| Complex64::from_polar(1.0, 3.0 * x[0]))] };
        let before = st.fields[0].clone();
        transport_step(&sys, &grid, &mut st, 0.1);
        for (a, b) in st.fields[0].iter().zip(&before) {
            assert!((a - b * Complex64::from_polar(1.0, -0.3)).norm() < 1e-13);
        }
    }

    #[test]
    fn weights_of_generic_pair() {
        let q = vec![[0, 0, 0, 0], [0, 0, 1, 1], [0, 1, 1, 0], [1, 0, 0, 1], [1, 1, 0, 0], [1, 1, 1, 1]];
        assert_eq!(compatible_weights(&q, 2).len(), 2);
        let q3 = vec![[0, 1, 0, 2], [0, 0, 0, 0]];
        let w = compatible_weights(&q3, 3);
        assert_eq!(w.len(), 2);
        for v in &w {
            assert!((2.0 * v[0] - v[1] - v[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_integer_horizon_rejected() {
        assert!(step_count(1.0, 0.3).is_err());
        assert_eq!(step_count(1.0, 1e-3).unwrap(), 1000);
    }
}
