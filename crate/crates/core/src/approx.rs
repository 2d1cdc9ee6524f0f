//! Two-scale approximations
//! `u_N = Σ_σ E_σ(t/ε, x/ε) [A_{0,σ} + ε A_{1,σ}](t, x, x/ε)` with
//! `E_σ(τ, y) = e^{i(k_σ·y - E_σ τ)}`.
//!
//! Inserting the expansion into the NLS and sorting by powers of ε gives
//! `L_0^σ A_{n,σ} = F_{n,σ}` with `L_0^σ = E_σ - H(k_σ)`,
//! `L_1^σ = i∂_t + (∇_y + ik_σ)·∇_x` and
//! `F_{1,σ} = -L_1^σ A_{0,σ} + κ Σ_{σ_1-σ_2+σ_3=σ} A_{0,σ_1} Ā_{0,σ_2} A_{0,σ_3} e^{iγ·y}`.
//! On a resonant carrier `A_{0,m} = a_m χ_m` and, with `∂_t a_m` eliminated
//! through the amplitude equation,
//! `A^⊥_m = -i Σ_j ∂_j a_m W_{m,j} + Σ_{(p,q,r,m)} a_p ā_q a_r R_{pqr}`,
//! `W_{m,j} = (L_0)^{-1}(1-P)[(k+g-ϑ)_j χ_m]`,
//! `R_{pqr} = κ (L_0)^{-1}(1-P)[χ_p χ̄_q χ_r e^{iγ·y}]`.
//! Non-resonant carriers `σ ∈ G^(3) \ G^(1)` get
//! `A_{1,σ} = κ Σ a_p ā_q a_r (L_0^σ)^{-1}[χ_p χ̄_q χ_r e^{iγ·y}]`.
//! The first-order resonant amplitudes `a_{1,m}` are taken to be zero.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::amplitude::{AmplitudeState, AmplitudeSystem};
use crate::bloch::{BlochSolver, PlaneWaveBasis};
use crate::coupling::umklapp;
use crate::error::{Error, Result};
use crate::grid::PeriodicBox;
use crate::lattice::dot;
use crate::modes::{graph, resonant_quadruples, ModeSystem};
use crate::nls::FineGrid;
use crate::par;

/// Macroscopic factor multiplying a correction profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factor {
    /// `-i ∂_j a_mode`.
    Gradient { mode: usize, axis: usize },
    /// `a_p ā_q a_r`.
    Triple([usize; 3]),
}

#[derive(Clone, Debug)]
pub struct CorrectionTerm {
    pub factor: Factor,
    /// Plane-wave coefficients of the microscopic profile.
    pub profile: Vec<Complex64>,
}

/// One phase `E_σ` of the expansion with its leading and first-order parts.
#[derive(Clone, Debug)]
pub struct Carrier {
    /// Fractional wave vector.
    pub k: Vec<f64>,
    pub energy: f64,
    /// Mode index when `σ ∈ Σ(S)`.
    pub resonant: Option<usize>,
    pub terms: Vec<CorrectionTerm>,
}

/// Plane-wave coefficients of `χ_p χ̄_q χ_r e^{iγ·y}` restricted to the basis.
pub fn triple_product(
    basis: &PlaneWaveBasis,
    p: &[Complex64],
    q: &[Complex64],
    r: &[Complex64],
    gamma: &[i64],
) -> Vec<Complex64> {
    let idx = basis.indices();
    let mut pq: HashMap<Vec<i64>, Complex64> = HashMap::new();
    for (gi, cp) in idx.iter().zip(p) {
        if cp.norm_sqr() == 0.0 {
            continue;
        }
        for (gj, cq) in idx.iter().zip(q) {
            let key: Vec<i64> = gi.iter().zip(gj).map(|(a, b)| a - b).collect();
            *pq.entry(key).or_default() += cp * cq.conj();
        }
    }
    // Sorted accumulation keeps the result independent of hash order.
    let mut pq: Vec<(Vec<i64>, Complex64)> = pq.into_iter().collect();
    pq.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = vec![Complex64::default(); basis.len()];
    for (h, c) in &pq {
        for (gk, cr) in idx.iter().zip(r) {
            let target: Vec<i64> = h.iter().zip(gk).zip(gamma).map(|((a, b), g)| a + b + g).collect();
            if let Some(pos) = basis.position(&target) {
                out[pos] += c * cr;
            }
        }
    }
    out
}

/// `W_{m,j}` for `j = 0..d`.
pub fn first_order_perp_gradient(solver: &BlochSolver, system: &ModeSystem, mode: usize) -> Result<Vec<Vec<Complex64>>> {
    let pair = &system.pairs[mode];
    let v = solver.group_velocity(pair)?;
    let vectors = solver.basis().vectors();
    (0..v.len())
        .map(|j| {
            let f: Vec<Complex64> =
                vectors.iter().zip(&pair.coefficients).map(|(g, c)| c * (pair.k.k[j] + g[j] - v[j])).collect();
            solver.deflated_solve(pair, &f)
        })
        .collect()
}

/// `A^⊥` terms of mode `m`: gradient profiles and one cubic profile per
/// resonant quadruple ending in `m`.
pub fn first_order_perp(solver: &BlochSolver, system: &ModeSystem, kappa: f64, mode: usize) -> Result<Vec<CorrectionTerm>> {
    let mut terms: Vec<CorrectionTerm> = first_order_perp_gradient(solver, system, mode)?
        .into_iter()
        .enumerate()
        .map(|(axis, profile)| CorrectionTerm { factor: Factor::Gradient { mode, axis }, profile })
        .collect();
    let pair = &system.pairs[mode];
    for [p, q, r, m] in resonant_quadruples(system) {
        if m != mode {
            continue;
        }
        let k = [&system.modes[p].k[..], &system.modes[q].k, &system.modes[r].k, &system.modes[m].k];
        let t = triple_product(
            solver.basis(),
            &system.pairs[p].coefficients,
            &system.pairs[q].coefficients,
            &system.pairs[r].coefficients,
            &umklapp(k),
        );
        let x = solver.deflated_solve(pair, &t)?;
        terms.push(CorrectionTerm { factor: Factor::Triple([p, q, r]), profile: x.iter().map(|c| c * kappa).collect() });
    }
    Ok(terms)
}

/// Non-resonant carriers of `G^(3) \ Σ(S)` with their resolvent profiles.
pub fn first_order_nonresonant(solver: &BlochSolver, system: &ModeSystem, kappa: f64) -> Result<Vec<Carrier>> {
    let g3 = graph(system, 3)?;
    let lattice = solver.lattice();
    let points: Vec<_> = g3.points.iter().filter(|pt| system.in_base(&pt.sigma).is_none()).collect();
    par::map(&points, |pt| -> Result<Carrier> {
        let (bz, _) = crate::lattice::wrap_fractional(&pt.sigma.k);
        let kc = lattice.from_fractional(&bz);
        let mut terms = Vec::new();
        for tuple in &pt.tuples {
            let [p, q, r] = [tuple[0], tuple[1], tuple[2]];
            let gamma = umklapp([&system.modes[p].k, &system.modes[q].k, &system.modes[r].k, &bz]);
            let t = triple_product(
                solver.basis(),
                &system.pairs[p].coefficients,
                &system.pairs[q].coefficients,
                &system.pairs[r].coefficients,
                &gamma,
            );
            let x = solver.resolvent_apply(&kc, pt.sigma.energy, &t)?;
            let weight = kappa * multiplicity(tuple) as f64;
            terms.push(CorrectionTerm { factor: Factor::Triple([p, q, r]), profile: x.iter().map(|c| c * weight).collect() });
        }
        Ok(Carrier { k: bz, energy: pt.sigma.energy, resonant: None, terms })
    })
    .into_iter()
    .collect()
}

/// Number of ordered triples represented by a graph tuple: the graph keeps
/// one tuple per integer combination, and `(p,q,r)` and `(r,q,p)` coincide.
fn multiplicity(t: &[usize]) -> usize {
    if t[0] == t[2] {
        1
    } else {
        2
    }
}

/// Time derivative `∂_t a_m = -ϑ_m·∇a_m - i N_m(a)` on the macro grid.
pub fn amplitude_time_derivative(system: &AmplitudeSystem, grid: &PeriodicBox, fields: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let n = system.nonlinearity(fields);
    fields
        .iter()
        .enumerate()
        .map(|(m, a)| {
            let mut out: Vec<Complex64> = n[m].iter().map(|z| Complex64::new(z.im, -z.re)).collect();
            for (axis, &v) in system.velocities[m].iter().enumerate() {
                if v != 0.0 {
                    let d = grid.derivative(a, axis);
                    for (o, x) in out.iter_mut().zip(&d) {
                        *o -= v * x;
                    }
                }
            }
            out
        })
        .collect()
}

/// A lifted field and, when requested, its time derivative.
type FieldAndRate = (Vec<Complex64>, Option<Vec<Complex64>>);

/// Leading- or first-order two-scale ansatz bound to a mode system.
#[derive(Clone, Debug)]
pub struct TwoScaleAnsatz {
    order: usize,
    dim: usize,
    amplitude: AmplitudeSystem,
    basis_vectors: Vec<Vec<f64>>,
    leading: Vec<Vec<Complex64>>,
    carriers: Vec<Carrier>,
    /// `⟨χ_m, R_{pqr}⟩`-consistency data: `(p, q, r, m, κ⟨χ_m, T_pqr⟩)`.
    projected: Vec<([usize; 4], Complex64)>,
    velocity_defect: Vec<Vec<f64>>,
}

impl TwoScaleAnsatz {
    pub fn new(system: &ModeSystem, solver: &BlochSolver, amplitude: &AmplitudeSystem, kappa: f64, order: usize) -> Result<Self> {
        if order > 1 {
            return Err(Error::invalid("corrections are implemented up to first order"));
        }
        if system.pairs.len() != system.len() || amplitude.len() != system.len() {
            return Err(Error::invalid("ansatz needs Bloch data and amplitudes for every mode"));
        }
        let m = system.len();
        let mut carriers: Vec<Carrier> = system
            .modes
            .iter()
            .enumerate()
            .map(|(i, mode)| Carrier { k: mode.k.clone(), energy: system.sigmas[i].energy, resonant: Some(i), terms: Vec::new() })
            .collect();
        let mut projected = Vec::new();
        let mut velocity_defect = Vec::new();
        if order == 1 {
            let perp = par::map_range(m, |i| first_order_perp(solver, system, kappa, i));
            for (c, terms) in carriers.iter_mut().zip(perp) {
                c.terms = terms?;
            }
            carriers.extend(first_order_nonresonant(solver, system, kappa)?);
            for q in resonant_quadruples(system) {
                let [p, qq, r, mm] = q;
                let k = [&system.modes[p].k[..], &system.modes[qq].k, &system.modes[r].k, &system.modes[mm].k];
                let t = triple_product(
                    solver.basis(),
                    &system.pairs[p].coefficients,
                    &system.pairs[qq].coefficients,
                    &system.pairs[r].coefficients,
                    &umklapp(k),
                );
                projected.push((q, solver.inner(&system.pairs[mm].coefficients, &t) * kappa));
            }
            for (i, pair) in system.pairs.iter().enumerate() {
                let hf = solver.group_velocity(pair)?;
                velocity_defect.push(hf.iter().zip(&amplitude.velocities[i]).map(|(a, b)| a - b).collect());
            }
        }
        Ok(Self {
            order,
            dim: solver.lattice().dim(),
            amplitude: amplitude.clone(),
            basis_vectors: solver.basis().vectors().to_vec(),
            leading: system.pairs.iter().map(|p| p.coefficients.clone()).collect(),
            carriers,
            projected,
            velocity_defect,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn carriers(&self) -> &[Carrier] {
        &self.carriers
    }

    fn profile_on_grid(&self, fine: &FineGrid, coeffs: &[Complex64]) -> Vec<Complex64> {
        let cell: Vec<Complex64> = fine
            .cell_positions()
            .iter()
            .map(|y| self.basis_vectors.iter().zip(coeffs).map(|(g, c)| c * Complex64::from_polar(1.0, dot(g, y))).sum())
            .collect();
        fine.tile(&cell)
    }

    /// `u_0` at the time of `state`.
    pub fn leading_order_field(
        &self,
        state: &AmplitudeState,
        macro_grid: &PeriodicBox,
        fine: &FineGrid,
    ) -> Result<Vec<Complex64>> {
        Ok(self.evaluate(state, macro_grid, fine, 0, false)?.0)
    }

    /// `u_N` with `N` the ansatz order.
    pub fn assemble(&self, state: &AmplitudeState, macro_grid: &PeriodicBox, fine: &FineGrid) -> Result<Vec<Complex64>> {
        Ok(self.evaluate(state, macro_grid, fine, self.order, false)?.0)
    }

    /// `(u_N, ∂_t u_N)` with the amplitude time derivatives taken from the
    /// amplitude equations.
    pub fn assemble_with_time_derivative(
        &self,
        state: &AmplitudeState,
        macro_grid: &PeriodicBox,
        fine: &FineGrid,
        order: usize,
    ) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        if order > self.order {
            return Err(Error::invalid("requested order exceeds the ansatz order"));
        }
        let (u, ut) = self.evaluate(state, macro_grid, fine, order, true)?;
        Ok((u, ut.expect("derivative requested")))
    }

    fn evaluate(
        &self,
        state: &AmplitudeState,
        macro_grid: &PeriodicBox,
        fine: &FineGrid,
        order: usize,
        with_dt: bool,
    ) -> Result<(Vec<Complex64>, Option<Vec<Complex64>>)> {
        if state.fields.len() != self.leading.len() {
            return Err(Error::invalid("state does not match the mode system"));
        }
        let g = fine.grid();
        let eps = fine.eps();
        let lift = |f: &Vec<Complex64>| macro_grid.interpolate_to(f, g);
        let a: Vec<Vec<Complex64>> = state.fields.iter().map(lift).collect::<Result<_>>()?;
        let adot_macro = if with_dt { Some(amplitude_time_derivative(&self.amplitude, macro_grid, &state.fields)) } else { None };
        let adot: Option<Vec<Vec<Complex64>>> = match &adot_macro {
            Some(f) => Some(f.iter().map(lift).collect::<Result<_>>()?),
            None => None,
        };
        let mut grads: HashMap<(usize, usize), FieldAndRate> = HashMap::new();
        if order == 1 {
            for c in &self.carriers {
                for term in &c.terms {
                    if let Factor::Gradient { mode, axis } = term.factor {
                        grads.entry((mode, axis)).or_insert_with(|| {
                            let d = lift(&macro_grid.derivative(&state.fields[mode], axis)).expect("checked lift");
                            let dd =
                                adot_macro.as_ref().map(|f| lift(&macro_grid.derivative(&f[mode], axis)).expect("checked lift"));
                            (d, dd)
                        });
                    }
                }
            }
        }
        let n = g.len();
        let mut u = vec![Complex64::default(); n];
        let mut ut = if with_dt { Some(vec![Complex64::default(); n]) } else { None };
        for c in &self.carriers {
            let has_leading = c.resonant.is_some();
            if !has_leading && order == 0 {
                continue;
            }
            let mut body = vec![Complex64::default(); n];
            let mut body_t = if with_dt { Some(vec![Complex64::default(); n]) } else { None };
            if let Some(m) = c.resonant {
                let chi = self.profile_on_grid(fine, &self.leading[m]);
                par::for_each_mut(&mut body, |i, z| *z += a[m][i] * chi[i]);
                if let (Some(bt), Some(ad)) = (body_t.as_mut(), adot.as_ref()) {
                    par::for_each_mut(bt, |i, z| *z += ad[m][i] * chi[i]);
                }
            }
            if order == 1 {
                for term in &c.terms {
                    let prof = self.profile_on_grid(fine, &term.profile);
                    let (f, ft): (Vec<Complex64>, Option<Vec<Complex64>>) = match term.factor {
                        Factor::Gradient { mode, axis } => {
                            let (d, dd) = &grads[&(mode, axis)];
                            let mi = Complex64::new(0.0, -1.0);
                            (d.iter().map(|x| mi * x).collect(), dd.as_ref().map(|v| v.iter().map(|x| mi * x).collect()))
                        }
                        Factor::Triple([p, q, r]) => {
                            let f = par::map_range(n, |i| a[p][i] * a[q][i].conj() * a[r][i]);
                            let ft = adot.as_ref().map(|ad| {
                                par::map_range(n, |i| {
                                    ad[p][i] * a[q][i].conj() * a[r][i]
                                        + a[p][i] * ad[q][i].conj() * a[r][i]
                                        + a[p][i] * a[q][i].conj() * ad[r][i]
                                })
                            });
                            (f, ft)
                        }
                    };
                    par::for_each_mut(&mut body, |i, z| *z += eps * f[i] * prof[i]);
                    if let (Some(bt), Some(ft)) = (body_t.as_mut(), ft.as_ref()) {
                        par::for_each_mut(bt, |i, z| *z += eps * ft[i] * prof[i]);
                    }
                }
            }
            let wave = fine.plane_wave(&fine.wave_index(&c.k)?);
            let time = Complex64::from_polar(1.0, -c.energy * state.t / eps);
            let rot = Complex64::new(0.0, -c.energy / eps);
            par::for_each_mut(&mut u, |i, z| *z += wave[i] * time * body[i]);
            if let (Some(ut), Some(bt)) = (ut.as_mut(), body_t.as_ref()) {
                par::for_each_mut(ut, |i, z| *z += wave[i] * time * (bt[i] + rot * body[i]));
            }
        }
        Ok((u, ut))
    }

    /// Largest `|P_m F_{1,m}|` over the macro grid and modes, with `∂_t a`
    /// eliminated through the amplitude equations.
    pub fn solvability_defect(&self, state: &AmplitudeState, macro_grid: &PeriodicBox) -> Result<f64> {
        if self.order == 0 {
            return Err(Error::invalid("solvability needs a first-order ansatz"));
        }
        let a = &state.fields;
        let n_term = self.amplitude.nonlinearity(a);
        let mut worst = 0.0f64;
        for (m, nm) in n_term.iter().enumerate() {
            let grads: Vec<Vec<Complex64>> = (0..self.dim).map(|j| macro_grid.derivative(&a[m], j)).collect();
            let quads: Vec<&([usize; 4], Complex64)> = self.projected.iter().filter(|(q, _)| q[3] == m).collect();
            let defect = par::map_range(macro_grid.len(), |i| {
                let mut s = -nm[i];
                for j in 0..self.dim {
                    s += Complex64::new(0.0, -1.0) * grads[j][i] * self.velocity_defect[m][j];
                }
                for (q, k) in &quads {
                    s += k * a[q[0]][i] * a[q[1]][i].conj() * a[q[2]][i];
                }
                s.norm()
            });
            worst = defect.into_iter().fold(worst, f64::max);
        }
        Ok(worst)
    }
}
