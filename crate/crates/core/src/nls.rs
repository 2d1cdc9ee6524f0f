//! Split-step spectral solver for
//! `iε ∂_t u = -(ε²/2) Δu + V(x/ε) u + εκ |u|² u`
//! on a lattice-commensurate periodic box, and the scaled norms
//! `‖u‖²_{H^s_ε} = Σ (1 + |εp|²)^s |û(p)|²`.
//!
//! Each step is `K(Δt/2) ∘ P(Δt) ∘ K(Δt/2)` with the kinetic flow `K`
//! multiplying Fourier modes by `e^{-iεΔt|p|²/2}` and the phase flow `P`
//! multiplying pointwise by `e^{-iΔt(V(x/ε)/ε + κ|u|²)}`. `P` is exact
//! because it leaves `|u|` unchanged, so the only error is the splitting
//! commutator. In the fast time `s = t/ε` the problem has O(1) coefficients
//! and the step is `Δs = Δt/ε`; the global splitting error after time `t`
//! scales like `Δs² t/ε`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bloch::PotentialSpec;
use crate::error::{Error, Result};
use crate::grid::PeriodicBox;
use crate::lattice::Lattice;
use crate::par;

/// Box of `box_cells[j]` lattice periods per axis sampled at `p_cell` points
/// per ε-cell, with `ε = 1/q`.
#[derive(Clone, Debug)]
pub struct FineGrid {
    periods: Vec<f64>,
    box_cells: Vec<usize>,
    q: usize,
    p_cell: usize,
    grid: PeriodicBox,
}

/// Serializable fine-grid parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineGridShape {
    pub box_cells: Vec<usize>,
    pub q: usize,
    pub p_cell: usize,
    pub points: Vec<usize>,
    pub lengths: Vec<f64>,
}

impl FineGrid {
    pub fn new(lattice: &Lattice, box_cells: &[usize], q: usize, p_cell: usize) -> Result<Self> {
        if !lattice.is_rectangular() {
            return Err(Error::GridIncommensurate("fine grids require a rectangular lattice".into()));
        }
        if box_cells.len() != lattice.dim() || box_cells.contains(&0) || q == 0 || p_cell < 2 {
            return Err(Error::invalid("fine grid needs positive box size per axis, q >= 1 and p_cell >= 2"));
        }
        let periods: Vec<f64> = (0..lattice.dim()).map(|j| lattice.basis()[j][j].abs()).collect();
        let lengths: Vec<f64> = periods.iter().zip(box_cells).map(|(a, &b)| a * b as f64).collect();
        let points: Vec<usize> = box_cells.iter().map(|&b| b * q * p_cell).collect();
        let grid = PeriodicBox::new(&lengths, &points)?;
        Ok(Self { periods, box_cells: box_cells.to_vec(), q, p_cell, grid })
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.q as f64
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p_cell(&self) -> usize {
        self.p_cell
    }

    pub fn grid(&self) -> &PeriodicBox {
        &self.grid
    }

    pub fn shape(&self) -> FineGridShape {
        FineGridShape {
            box_cells: self.box_cells.clone(),
            q: self.q,
            p_cell: self.p_cell,
            points: self.grid.points().to_vec(),
            lengths: self.grid.lengths().to_vec(),
        }
    }

    /// Integer index `J` with `k/ε = 2π J / L` for a wave vector in fractional
    /// dual coordinates.
    pub fn wave_index(&self, frac: &[f64]) -> Result<Vec<i64>> {
        frac.iter()
            .zip(&self.box_cells)
            .map(|(&f, &b)| {
                let j = f * (self.q * b) as f64;
                let r = j.round();
                if (j - r).abs() > 1e-9 {
                    return Err(Error::GridIncommensurate(format!(
                        "wave vector fraction {f} times {} cells is not an integer",
                        self.q * b
                    )));
                }
                Ok(r as i64)
            })
            .collect()
    }

    /// `e^{i k·x/ε}` on the grid, from the integer wave index (exact phases).
    pub fn plane_wave(&self, index: &[i64]) -> Vec<Complex64> {
        let pts = self.grid.points().to_vec();
        let d = pts.len();
        par::map_range(self.grid.len(), |idx| {
            let mut rem = idx;
            let mut turns = 0.0;
            for axis in (0..d).rev() {
                let i = (rem % pts[axis]) as i64;
                rem /= pts[axis];
                let n = pts[axis] as i64;
                // x = -L/2 + i L/n: phase 2π J (i/n - 1/2).
                turns += (index[axis] * i).rem_euclid(n) as f64 / n as f64 - 0.5 * (index[axis].rem_euclid(2)) as f64;
            }
            Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * turns)
        })
    }

    /// Cell coordinates `y` (in `[0, a)` per axis, up to a half-period shift)
    /// of the `p_cell^d` distinct microscopic positions.
    pub fn cell_positions(&self) -> Vec<Vec<f64>> {
        let d = self.periods.len();
        let p = self.p_cell;
        let total = p.pow(d as u32);
        (0..total)
            .map(|idx| {
                let mut rem = idx;
                let mut y = vec![0.0; d];
                for axis in (0..d).rev() {
                    let i = rem % p;
                    rem /= p;
                    // x_0/ε = -box q a / 2, which is a whole number of periods
                    // when box q is even and half a period off otherwise.
                    let offset = if (self.box_cells[axis] * self.q).is_multiple_of(2) { 0.0 } else { 0.5 };
                    y[axis] = self.periods[axis] * (offset + i as f64 / p as f64);
                }
                y
            })
            .collect()
    }

    /// Index into [`Self::cell_positions`] of a flat grid index.
    pub fn cell_index(&self, idx: usize) -> usize {
        let pts = self.grid.points();
        let p = self.p_cell;
        let mut rem = idx;
        let mut out = 0;
        let mut stride = 1;
        for axis in (0..pts.len()).rev() {
            let i = rem % pts[axis];
            rem /= pts[axis];
            out += (i % p) * stride;
            stride *= p;
        }
        out
    }

    /// Repeats per-cell samples over the whole grid.
    pub fn tile<T: Copy + Send + Sync>(&self, profile: &[T]) -> Vec<T> {
        par::map_range(self.grid.len(), |idx| profile[self.cell_index(idx)])
    }
}

#[derive(Clone, Debug)]
pub struct WaveField {
    pub t: f64,
    pub u: Vec<Complex64>,
}

/// Split-step integrator bound to a grid, potential and nonlinearity.
#[derive(Clone, Debug)]
pub struct NlsSolver {
    fine: FineGrid,
    kappa: f64,
    potential: Vec<f64>,
    potential_digest: String,
}

impl NlsSolver {
    pub fn new(fine: FineGrid, pot: &PotentialSpec, kappa: f64) -> Result<Self> {
        if pot.lattice.dim() != fine.grid.dim() {
            return Err(Error::invalid("potential and fine grid dimensions differ"));
        }
        let cell: Vec<f64> = fine.cell_positions().iter().map(|y| pot.eval(y)).collect();
        let potential = fine.tile(&cell);
        Ok(Self { fine, kappa, potential, potential_digest: pot.digest() })
    }

    /// Solver with a spatially constant potential `v` (used in tests).
    pub fn with_constant_potential(fine: FineGrid, v: f64, kappa: f64) -> Self {
        let n = fine.grid.len();
        Self { fine, kappa, potential: vec![v; n], potential_digest: String::new() }
    }

    pub fn fine(&self) -> &FineGrid {
        &self.fine
    }

    pub fn grid(&self) -> &PeriodicBox {
        &self.fine.grid
    }

    pub fn eps(&self) -> f64 {
        self.fine.eps()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn potential_digest(&self) -> &str {
        &self.potential_digest
    }

    fn kinetic_symbol(&self, dt: f64) -> Vec<Complex64> {
        let eps = self.eps();
        par::map(self.fine.grid.k_squared(), |&p2| Complex64::from_polar(1.0, -0.5 * eps * dt * p2))
    }

    fn kinetic(&self, u: &mut [Complex64], symbol: &[Complex64]) {
        let g = &self.fine.grid;
        g.forward(u);
        par::for_each_mut(u, |i, z| *z *= symbol[i]);
        g.inverse(u);
    }

    fn phase(&self, u: &mut [Complex64], dt: f64) {
        let eps = self.eps();
        let kappa = self.kappa;
        let v = &self.potential;
        par::for_each_mut(u, |i, z| {
            let theta = -dt * (v[i] / eps + kappa * z.norm_sqr());
            *z *= Complex64::from_polar(1.0, theta);
        });
    }

    /// One Strang step.
    pub fn split_step(&self, u: &mut [Complex64], dt: f64) {
        let half = self.kinetic_symbol(0.5 * dt);
        self.kinetic(u, &half);
        self.phase(u, dt);
        self.kinetic(u, &half);
    }

    /// Integrates to `t_end`, keeping a checkpoint every `every` steps (0:
    /// endpoints only). Adjacent kinetic half steps between checkpoints are
    /// fused.
    pub fn evolve(&self, initial: &WaveField, t_end: f64, dt: f64, every: usize) -> Result<Vec<WaveField>> {
        let steps = crate::amplitude::step_count(t_end, dt)?;
        let half = self.kinetic_symbol(0.5 * dt);
        let full = self.kinetic_symbol(dt);
        let mut u = initial.u.clone();
        let mut out = vec![initial.clone()];
        if steps == 0 {
            return Ok(out);
        }
        self.kinetic(&mut u, &half);
        for step in 1..=steps {
            self.phase(&mut u, dt);
            let record = step == steps || (every > 0 && step % every == 0);
            if record {
                self.kinetic(&mut u, &half);
                if u.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                    return Err(Error::NonFiniteField { step });
                }
                out.push(WaveField { t: initial.t + step as f64 * dt, u: u.clone() });
                if step < steps {
                    self.kinetic(&mut u, &half);
                }
            } else {
                self.kinetic(&mut u, &full);
                if step % 64 == 0 && u.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                    return Err(Error::NonFiniteField { step });
                }
            }
        }
        Ok(out)
    }

    pub fn mass(&self, u: &[Complex64]) -> f64 {
        self.fine.grid.l2_norm_sq(u)
    }

    /// `∫ (ε²/2)|∇u|² + V(x/ε)|u|² + (εκ/2)|u|⁴`.
    pub fn energy(&self, u: &[Complex64]) -> f64 {
        let g = &self.fine.grid;
        let eps = self.eps();
        let mut f = u.to_vec();
        g.forward(&mut f);
        let n = g.len() as f64;
        let grad: f64 = f.iter().zip(g.k_squared()).map(|(z, k2)| k2 * z.norm_sqr()).sum::<f64>() * g.volume() / (n * n);
        let local: f64 = u
            .iter()
            .zip(&self.potential)
            .map(|(z, v)| {
                let r = z.norm_sqr();
                v * r + 0.5 * eps * self.kappa * r * r
            })
            .sum::<f64>()
            * g.cell_volume();
        0.5 * eps * eps * grad + local
    }

    pub fn hs_eps_norm(&self, u: &[Complex64], s: f64) -> f64 {
        hs_eps_norm(&self.fine.grid, self.eps(), u, s)
    }

    /// `iε u_t + (ε²/2)Δu - V u - εκ|u|²u` for a field and its time derivative.
    pub fn residual(&self, u: &[Complex64], u_t: &[Complex64]) -> Vec<Complex64> {
        let eps = self.eps();
        let lap = self.fine.grid.laplacian(u);
        par::map_range(u.len(), |i| {
            Complex64::new(0.0, eps) * u_t[i] + 0.5 * eps * eps * lap[i]
                - self.potential[i] * u[i]
                - eps * self.kappa * u[i].norm_sqr() * u[i]
        })
    }
}

/// Discrete `H^s_ε` norm via Parseval.
pub fn hs_eps_norm(grid: &PeriodicBox, eps: f64, u: &[Complex64], s: f64) -> f64 {
    let mut f = u.to_vec();
    grid.forward(&mut f);
    let n = grid.len() as f64;
    let e2 = eps * eps;
    let sum: f64 = f
        .iter()
        .zip(grid.k_squared())
        .map(|(z, k2)| if s == 0.0 { z.norm_sqr() } else { (1.0 + e2 * k2).powf(s) * z.norm_sqr() })
        .sum();
    (sum * grid.volume() / (n * n)).sqrt()
}

/// Ratio `‖u_Δt - u_{Δt/2}‖ / ‖u_{Δt/2} - u_{Δt/4}‖` of final states, ~4 for a
/// second-order scheme.
pub fn step_halving_ratio(solver: &NlsSolver, initial: &WaveField, t_end: f64, dt: f64) -> Result<f64> {
    let run = |h: f64| -> Result<Vec<Complex64>> { Ok(solver.evolve(initial, t_end, h, 0)?.pop().expect("final").u) };
    let (a, b, c) = (run(dt)?, run(0.5 * dt)?, run(0.25 * dt)?);
    let g = solver.grid();
    let diff = |x: &[Complex64], y: &[Complex64]| -> f64 {
        let d: Vec<Complex64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
        g.l2_norm_sq(&d).sqrt()
    };
    Ok(diff(&a, &b) / diff(&b, &c))
}
