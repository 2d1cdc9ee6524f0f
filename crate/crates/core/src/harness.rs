//! Experiment configuration and end-to-end runs: band tables, resonance
//! search, coupling tables, amplitude integration, direct NLS runs, the
//! ε-sweep convergence study and named scenarios.
//!
//! Mode numbers in configs and exported tables are 1-based.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::amplitude::{
    compatible_weights, conserved_report, macro_grid, step_count, strang_evolve, AmplitudeState, AmplitudeSystem,
    ConservedReport, Gaussian, Trajectory,
};
use crate::approx::TwoScaleAnsatz;
use crate::bloch::{BlochSolver, PotentialSpec};
use crate::coupling::{coupling_table, CouplingTable, GAUGE};
use crate::error::{Error, Result};
use crate::grid::PeriodicBox;
use crate::io::{self, fmt_f64, FieldSidecar};
use crate::lattice::Lattice;
use crate::modes::{
    closure_check, default_l_max, resonant_quadruples, single_band_resonance_search, BandGraph, ClosureCertificate, Mode,
    ModeSystem, ResonantTriple, SearchOptions, Tolerances,
};
use crate::nls::{FineGrid, NlsSolver, WaveField};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub basis: Vec<Vec<f64>>,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self { basis: vec![vec![1.0]] }
    }
}

/// `v cos(g·y)` with `g` in dual-basis coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosTerm {
    pub g: Vec<i64>,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    /// Mathieu strength `V̂_{±1}` along the first dual vector.
    #[serde(default)]
    pub mathieu: Option<f64>,
    #[serde(default)]
    pub cos: Vec<CosTerm>,
    #[serde(default = "default_shells")]
    pub shells: usize,
}

fn default_shells() -> usize {
    10
}

impl Default for PotentialConfig {
    fn default() -> Self {
        Self { mathieu: None, cos: Vec::new(), shells: default_shells() }
    }
}

impl PotentialConfig {
    pub fn build(&self, lattice: &Lattice) -> Result<PotentialSpec> {
        let mut pot = PotentialSpec::free(lattice.clone());
        if let Some(v) = self.mathieu {
            let mut g = vec![0i64; lattice.dim()];
            g[0] = 1;
            pot = pot.with_cos(&g, 2.0 * v);
        }
        for term in &self.cos {
            if term.g.len() != lattice.dim() {
                return Err(Error::invalid("cosine term dimension differs from the lattice"));
            }
            pot = pot.with_cos(&term.g, term.v);
        }
        Ok(pot)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeEntry {
    /// Fractional wave vector.
    pub k: Vec<f64>,
    pub band: usize,
}

/// Replace the explicit mode list with the triple found by the single-band
/// resonance search, ordered so that `2k_1 - k_2 = k_3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchDirective {
    pub band: usize,
    #[serde(default = "default_scan")]
    pub scan_points: usize,
    #[serde(default = "default_offset")]
    pub offset: f64,
}

fn default_scan() -> usize {
    SearchOptions::default().scan_points
}

fn default_offset() -> f64 {
    SearchOptions::default().offset
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesConfig {
    #[serde(default)]
    pub list: Vec<ModeEntry>,
    #[serde(default)]
    pub search: Option<SearchDirective>,
    #[serde(default)]
    pub tol_k: Option<f64>,
    #[serde(default)]
    pub tol_e: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroGridConfig {
    pub lengths: Vec<f64>,
    pub points: Vec<usize>,
}

/// Initial amplitude of one mode: a Gaussian or a field file written by
/// [`crate::io::write_field`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDatum {
    pub mode: usize,
    #[serde(default)]
    pub gaussian: Option<Gaussian>,
    #[serde(default)]
    pub samples: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    pub amplitude_dt: f64,
    /// NLS step as a multiple of ε.
    pub nls_dt_factor: f64,
    /// Amplitude steps between conserved-quantity samples.
    pub series_every: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { t_end: 0.5, amplitude_dt: 1e-3, nls_dt_factor: 2e-3, series_every: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineConfig {
    /// Lattice periods per axis; defaults to the macro box.
    #[serde(default)]
    pub box_cells: Vec<usize>,
    #[serde(default = "default_p_cell")]
    pub p_cell: usize,
    /// `ε = 1/q` for each entry, strictly increasing.
    #[serde(default)]
    pub q: Vec<usize>,
}

fn default_p_cell() -> usize {
    16
}

impl Default for FineConfig {
    fn default() -> Self {
        Self { box_cells: Vec::new(), p_cell: default_p_cell(), q: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsConfig {
    pub count: usize,
    pub points_per_segment: usize,
    /// Fractional path vertices; defaults to `-1/2 → 1/2` in 1D and
    /// `Γ → X → M → Γ` otherwise.
    #[serde(default)]
    pub path: Vec<Vec<f64>>,
}

impl Default for BandsConfig {
    fn default() -> Self {
        Self { count: 4, points_per_segment: 64, path: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub potential: PotentialConfig,
    #[serde(default)]
    pub modes: ModesConfig,
    #[serde(default)]
    pub kappa: f64,
    pub macro_grid: MacroGridConfig,
    #[serde(default)]
    pub initial: Vec<InitialDatum>,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub fine: FineConfig,
    #[serde(default)]
    pub bands: BandsConfig,
    /// Sobolev index of the error norm.
    #[serde(default = "default_norm_s")]
    pub norm_s: f64,
    /// Ansatz order `N`; errors are measured against `u_{N-1}`.
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_window")]
    pub slope_window: [f64; 2],
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_norm_s() -> f64 {
    1.0
}

fn default_order() -> usize {
    1
}

fn default_window() -> [f64; 2] {
    [0.75, 1.25]
}

/// Largest admissible `Δt/ε`.
pub const MAX_NLS_DT_FACTOR: f64 = 0.1;

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fine.q.windows(2).any(|w| w[0] >= w[1]) || self.fine.q.contains(&0) {
            return Err(Error::invalid("ε list must be strictly decreasing: q values strictly increasing and positive"));
        }
        if !(self.time.t_end >= 0.0) {
            return Err(Error::invalid("time horizon must be non-negative"));
        }
        if self.order != 1 {
            return Err(Error::invalid("only the first-order ansatz (order = 1) is supported"));
        }
        for d in &self.initial {
            if d.mode == 0 {
                return Err(Error::invalid("initial data mode numbers are 1-based"));
            }
            if d.gaussian.is_some() == d.samples.is_some() {
                return Err(Error::invalid(format!("initial datum for mode {} needs exactly one of gaussian/samples", d.mode)));
            }
        }
        if self.modes.list.is_empty() == self.modes.search.is_none() {
            return Err(Error::invalid("modes need exactly one of an explicit list or a search directive"));
        }
        Ok(())
    }

    pub fn tolerances(&self, energy_scale: f64) -> Tolerances {
        let mut t = Tolerances::scaled(energy_scale);
        if let Some(k) = self.modes.tol_k {
            t.tol_k = k;
        }
        if let Some(e) = self.modes.tol_e {
            t.tol_e = e;
        }
        t
    }
}

/// Runs the single-band search against any band graph.
pub fn resonance_stage(graph: &dyn BandGraph, directive: &SearchDirective) -> Result<ResonantTriple> {
    let opts = SearchOptions { scan_points: directive.scan_points, offset: directive.offset };
    single_band_resonance_search(directive.band, graph, opts).map_err(|e| e.in_stage("resonances"))
}

/// Everything upstream of time integration.
#[derive(Debug)]
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub potential: PotentialSpec,
    pub solver: BlochSolver,
    pub search: Option<ResonantTriple>,
    pub system: ModeSystem,
    pub certificate: ClosureCertificate,
    pub table: CouplingTable,
    pub amplitude: AmplitudeSystem,
    pub macro_grid: PeriodicBox,
    pub initial: AmplitudeState,
}

impl Pipeline {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let lattice = Lattice::new(config.lattice.basis.clone()).map_err(|e| e.in_stage("lattice"))?;
        let potential = config.potential.build(&lattice).map_err(|e| e.in_stage("potential"))?;
        let solver = BlochSolver::with_shells(potential.clone(), config.potential.shells).map_err(|e| e.in_stage("bands"))?;
        let search = match &config.modes.search {
            Some(d) => Some(resonance_stage(&solver, d)?),
            None => None,
        };
        let modes: Vec<Mode> = match &search {
            Some(t) => t.k.iter().map(|k| Mode::new(k, t.band)).collect(),
            None => config.modes.list.iter().map(|m| Mode::new(&m.k, m.band)).collect(),
        };
        let scale = modes
            .iter()
            .map(|m| BandGraph::energy(&solver, &m.k, m.band).map(f64::abs))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("modes"))?
            .into_iter()
            .fold(1.0, f64::max);
        let system = ModeSystem::from_solver(&solver, modes, Some(config.tolerances(scale))).map_err(|e| e.in_stage("modes"))?;
        let certificate =
            closure_check(&system, 2 * config.order + 1, &solver, default_l_max(&system)).map_err(|e| e.in_stage("closure"))?;
        let table = coupling_table(&system, &solver, config.kappa, None).map_err(|e| e.in_stage("couplings"))?;
        let amplitude = AmplitudeSystem::from_modes(&system, &table).map_err(|e| e.in_stage("amplitudes"))?;
        let grid = macro_grid(&config.macro_grid.lengths, &config.macro_grid.points).map_err(|e| e.in_stage("amplitudes"))?;
        let initial = initial_state(config, &system, &grid).map_err(|e| e.in_stage("initial data"))?;
        Ok(Self {
            config: config.clone(),
            potential,
            solver,
            search,
            system,
            certificate,
            table,
            amplitude,
            macro_grid: grid,
            initial,
        })
    }

    pub fn fine_grid(&self, q: usize) -> Result<FineGrid> {
        let lattice = self.solver.lattice();
        let cells = if self.config.fine.box_cells.is_empty() {
            (0..lattice.dim())
                .map(|j| {
                    let a = lattice.basis()[j][j].abs();
                    let c = self.macro_grid.lengths()[j] / a;
                    if (c - c.round()).abs() > 1e-9 || c.round() < 1.0 {
                        return Err(Error::GridIncommensurate(format!("macro box axis {j} is not a whole number of periods")));
                    }
                    Ok(c.round() as usize)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            self.config.fine.box_cells.clone()
        };
        FineGrid::new(lattice, &cells, q, self.config.fine.p_cell)
    }

    pub fn ansatz(&self, order: usize) -> Result<TwoScaleAnsatz> {
        TwoScaleAnsatz::new(&self.system, &self.solver, &self.amplitude, self.config.kappa, order)
    }

    /// Amplitude trajectory sampled every `series_every` steps.
    pub fn integrate_amplitudes(&self, initial: &AmplitudeState) -> Result<Trajectory> {
        let t = &self.config.time;
        strang_evolve(&self.amplitude, &self.macro_grid, initial, t.t_end, t.amplitude_dt, t.series_every)
            .map_err(|e| e.in_stage("amplitudes"))
    }

    pub fn nls_dt(&self, eps: f64) -> Result<f64> {
        let bound = MAX_NLS_DT_FACTOR * (1.0f64).min(1.0 / self.potential.sup_bound().max(f64::MIN_POSITIVE));
        if self.config.time.nls_dt_factor > bound {
            return Err(Error::invalid(format!(
                "nls_dt_factor {} exceeds the accuracy bound {bound}",
                self.config.time.nls_dt_factor
            )));
        }
        Ok(self.config.time.nls_dt_factor * eps)
    }
}

fn initial_state(config: &ExperimentConfig, system: &ModeSystem, grid: &PeriodicBox) -> Result<AmplitudeState> {
    let mut state = AmplitudeState::zeros(system.len(), grid);
    for d in &config.initial {
        if d.mode > system.len() {
            return Err(Error::invalid(format!("initial datum for missing mode {}", d.mode)));
        }
        let field = &mut state.fields[d.mode - 1];
        if let Some(g) = &d.gaussian {
            if g.center.len() != grid.dim() {
                return Err(Error::invalid("Gaussian center dimension differs from the macro grid"));
            }
            for (f, v) in field.iter_mut().zip(g.sample(grid)) {
                *f += v;
            }
        } else if let Some(path) = &d.samples {
            let (data, side) = io::read_field(path)?;
            if side.grid.points != grid.points() || side.components != 1 {
                return Err(Error::invalid(format!("samples in {} do not match the macro grid", path.display())));
            }
            for (f, v) in field.iter_mut().zip(data) {
                *f += v;
            }
        }
    }
    Ok(state)
}

/// Pass/fail record of an asserted invariant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, pass: value <= tolerance }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

// ---------------------------------------------------------------- bands

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub k: Vec<f64>,
    pub energies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub rows: Vec<BandRow>,
    /// `(row, band)` pairs whose gap to a neighbour is below the degeneracy
    /// tolerance (1-based bands).
    pub degeneracies: Vec<(usize, usize)>,
    /// Smallest gap between consecutive requested bands over the path.
    pub min_gaps: Vec<f64>,
}

fn default_path(d: usize) -> Vec<Vec<f64>> {
    if d == 1 {
        return vec![vec![-0.5], vec![0.5]];
    }
    let gamma = vec![0.0; d];
    let mut x = gamma.clone();
    x[0] = 0.5;
    let m = vec![0.5; d];
    vec![gamma.clone(), x, m, gamma]
}

pub fn run_bands(config: &ExperimentConfig) -> Result<BandReport> {
    let b = &config.bands;
    if b.count == 0 || b.points_per_segment == 0 {
        return Err(Error::invalid("band request needs at least one band and one point per segment"));
    }
    let lattice = Lattice::new(config.lattice.basis.clone())?;
    let pot = config.potential.build(&lattice)?;
    let solver = BlochSolver::with_shells(pot, config.potential.shells)?;
    if b.count > solver.basis().len() {
        return Err(Error::invalid(format!("{} bands requested from a basis of {}", b.count, solver.basis().len())));
    }
    let path = if b.path.is_empty() { default_path(lattice.dim()) } else { b.path.clone() };
    if path.len() < 2 || path.iter().any(|v| v.len() != lattice.dim()) {
        return Err(Error::invalid("band path needs at least two vertices of the lattice dimension"));
    }
    let mut ks = Vec::new();
    for (i, w) in path.windows(2).enumerate() {
        let start = if i == 0 { 0 } else { 1 };
        for s in start..=b.points_per_segment {
            let t = s as f64 / b.points_per_segment as f64;
            ks.push(w[0].iter().zip(&w[1]).map(|(a, c)| a + t * (c - a)).collect::<Vec<f64>>());
        }
    }
    let rows = par::map(&ks, |k| -> Result<BandRow> {
        // All but the last band also need the next band for gap flags.
        let n = (b.count + 1).min(solver.basis().len());
        let e = solver.energies(&lattice.from_fractional(k), n)?;
        Ok(BandRow { k: k.clone(), energies: e })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let tol = solver.degeneracy_tol();
    let mut degeneracies = Vec::new();
    let mut min_gaps = vec![f64::INFINITY; b.count.saturating_sub(1)];
    for (i, row) in rows.iter().enumerate() {
        for band in 1..=b.count {
            let e = row.energies[band - 1];
            let below = if band > 1 { e - row.energies[band - 2] } else { f64::INFINITY };
            let above = row.energies.get(band).map_or(f64::INFINITY, |x| x - e);
            if below.min(above) < tol * e.abs().max(1.0) {
                degeneracies.push((i, band));
            }
            if band < b.count {
                min_gaps[band - 1] = min_gaps[band - 1].min(above);
            }
        }
    }
    let rows = rows
        .into_iter()
        .map(|mut r| {
            r.energies.truncate(b.count);
            r
        })
        .collect();
    Ok(BandReport { rows, degeneracies, min_gaps })
}

impl BandReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.rows.first().map_or(0, |r| r.k.len());
        let n = self.rows.first().map_or(0, |r| r.energies.len());
        let mut header: Vec<String> = (0..d).map(|j| format!("k{j}")).collect();
        header.extend((1..=n).map(|b| format!("E{b}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> =
            self.rows.iter().map(|r| r.k.iter().chain(&r.energies).map(|x| fmt_f64(*x)).collect()).collect();
        io::write_csv(path, &header, &rows)
    }
}

// ---------------------------------------------------------------- resonances

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub search: Option<ResonantTriple>,
    pub modes: Vec<(Vec<f64>, usize)>,
    /// Resonant quadruples, 1-based.
    pub quadruples: Vec<[usize; 4]>,
    pub certificate: ClosureCertificate,
    pub certificate_digest: String,
}

pub fn run_resonances(p: &Pipeline) -> ResonanceReport {
    ResonanceReport {
        search: p.search.clone(),
        modes: p.system.modes.iter().map(|m| (m.k.clone(), m.band)).collect(),
        quadruples: resonant_quadruples(&p.system).into_iter().map(|q| q.map(|x| x + 1)).collect(),
        certificate: p.certificate.clone(),
        certificate_digest: p.certificate.digest(),
    }
}

// ---------------------------------------------------------------- couplings

pub fn write_coupling_csv(table: &CouplingTable, path: &Path) -> Result<()> {
    let rows: Vec<Vec<String>> = table
        .entries
        .iter()
        .map(|(q, c)| {
            let mut r: Vec<String> = q.iter().map(|x| (x + 1).to_string()).collect();
            r.push(fmt_f64(c.re));
            r.push(fmt_f64(c.im));
            r
        })
        .collect();
    let comments = [format!("kappa={}", table.kappa), format!("gauge={GAUGE}"), format!("n_per_dim={}", table.n_per_dim)];
    io::write_csv_with_comments(path, &comments, &["p", "q", "r", "m", "Re", "Im"], &rows)
}

// ---------------------------------------------------------------- amplitudes

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drifts {
    pub mass: f64,
    pub energy_weighted: f64,
    pub weighted: Vec<f64>,
    pub hamiltonian: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if b.abs() > 0.0 {
        d / b.abs()
    } else {
        d
    }
}

pub fn drifts(series: &[ConservedReport]) -> Drifts {
    let first = &series[0];
    let mut d = Drifts { mass: 0.0, energy_weighted: 0.0, weighted: vec![0.0; first.weighted.len()], hamiltonian: 0.0 };
    for s in series {
        d.mass = d.mass.max(rel(s.mass, first.mass));
        d.energy_weighted = d.energy_weighted.max(rel(s.energy_weighted, first.energy_weighted));
        for (w, (a, b)) in d.weighted.iter_mut().zip(s.weighted.iter().zip(&first.weighted)) {
            *w = w.max(rel(*a, *b));
        }
        d.hamiltonian = d.hamiltonian.max(rel(s.hamiltonian, first.hamiltonian));
    }
    d
}

#[derive(Clone, Debug)]
pub struct AmplitudeRun {
    pub trajectory: Trajectory,
    pub weights: Vec<Vec<f64>>,
    pub series: Vec<ConservedReport>,
    pub drifts: Drifts,
}

pub fn run_amplitudes(p: &Pipeline, initial: &AmplitudeState) -> Result<AmplitudeRun> {
    let trajectory = p.integrate_amplitudes(initial)?;
    let weights = compatible_weights(&p.amplitude.quadruples, p.system.len());
    let series: Vec<ConservedReport> =
        par::map(&trajectory.states, |s| conserved_report(&p.amplitude, &p.macro_grid, s, &weights));
    let drifts = drifts(&series);
    Ok(AmplitudeRun { trajectory, weights, series, drifts })
}

impl AmplitudeRun {
    pub fn write_series_csv(&self, path: &Path) -> Result<()> {
        let m = self.series.first().map_or(0, |s| s.norms.len());
        let w = self.weights.len();
        let d = self.series.first().map_or(0, |s| s.translation.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("norm{i}")));
        header.extend(["mass".to_string(), "I".to_string()]);
        header.extend((1..=w).map(|i| format!("Itilde{i}")));
        header.push("Hred".into());
        header.extend((0..d).map(|j| format!("Itrans{j}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = self
            .series
            .iter()
            .map(|s| {
                let mut r = vec![fmt_f64(s.t)];
                r.extend(s.norms.iter().map(|x| fmt_f64(*x)));
                r.push(fmt_f64(s.mass));
                r.push(fmt_f64(s.energy_weighted));
                r.extend(s.weighted.iter().map(|x| fmt_f64(*x)));
                r.push(fmt_f64(s.hamiltonian));
                r.extend(s.translation.iter().map(|x| fmt_f64(*x)));
                r
            })
            .collect();
        io::write_csv(path, &header, &rows)
    }

    pub fn write_final_state(&self, p: &Pipeline, base: &Path) -> Result<()> {
        let last = self.trajectory.last();
        let data: Vec<Complex64> = last.fields.concat();
        let side = FieldSidecar {
            kind: "amplitudes".into(),
            t: last.t,
            eps: None,
            grid: p.macro_grid.shape(),
            components: last.fields.len(),
            potential_digest: Some(p.potential.digest()),
            modes: p.system.modes.iter().map(|m| (m.k.clone(), m.band)).collect(),
        };
        io::write_field(base, &data, &side)
    }
}

// ---------------------------------------------------------------- nls

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlsSummary {
    pub q: usize,
    pub eps: f64,
    pub points: Vec<usize>,
    pub dt: f64,
    pub steps: usize,
    pub mass_drift: f64,
    pub energy_drift: f64,
}

/// Direct NLS run from `u_0(0)`, returning the checkpoints.
pub fn run_nls(p: &Pipeline, q: usize, every: usize) -> Result<(NlsSummary, Vec<WaveField>, NlsSolver)> {
    let fine = p.fine_grid(q).map_err(|e| e.in_stage("nls"))?;
    let eps = fine.eps();
    let dt = p.nls_dt(eps)?;
    let steps = step_count(p.config.time.t_end, dt)?;
    let ans = p.ansatz(0)?;
    let u0 = ans.leading_order_field(&p.initial, &p.macro_grid, &fine).map_err(|e| e.in_stage("nls"))?;
    let solver = NlsSolver::new(fine, &p.potential, p.config.kappa)?;
    let out = solver.evolve(&WaveField { t: 0.0, u: u0 }, p.config.time.t_end, dt, every).map_err(|e| e.in_stage("nls"))?;
    let (m0, e0) = (solver.mass(&out[0].u), solver.energy(&out[0].u));
    let last = out.last().expect("initial field");
    let summary = NlsSummary {
        q,
        eps,
        points: solver.grid().points().to_vec(),
        dt,
        steps,
        mass_drift: rel(solver.mass(&last.u), m0),
        energy_drift: rel(solver.energy(&last.u), e0),
    };
    Ok((summary, out, solver))
}

// ---------------------------------------------------------------- convergence

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub q: usize,
    pub eps: f64,
    pub points: usize,
    pub dt: f64,
    /// `‖u(t_*) - u_0(t_*)‖_{H^s_ε}`.
    pub error: f64,
    /// `‖u(t_*) - u_1(t_*)‖_{H^s_ε}`.
    pub error_first_order: f64,
    /// `L²` norms of the discrete NLS residual of `u_0` and `u_1` at `t_*`.
    pub residual_leading: f64,
    pub residual_first_order: f64,
    pub residual_ratio: f64,
    pub mass_drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub certificate_digest: String,
    pub tolerances: Tolerances,
    pub potential_digest: String,
    pub norm_s: f64,
    pub t_end: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Largest `|P_m F_{1,m}|` over the amplitude checkpoints.
    pub solvability_defect: f64,
    pub slope: f64,
    pub fit_residual: f64,
    pub window: [f64; 2],
    pub pass: bool,
    pub rationale: String,
}

/// Least-squares slope of `ln y` against `ln x` and the RMS residual.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let res: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    (slope, (res / n).sqrt())
}

pub fn run_convergence(p: &Pipeline) -> Result<ConvergenceReport> {
    let qs = &p.config.fine.q;
    if qs.len() < 3 {
        return Err(Error::invalid("the slope fit needs at least three ε values").in_stage("convergence"));
    }
    if !p.certificate.is_closed() {
        return Err(Error::invalid(format!(
            "mode system is not closed of order {}; see certificate {}",
            p.certificate.order,
            p.certificate.digest()
        ))
        .in_stage("convergence"));
    }
    let trajectory = p.integrate_amplitudes(&p.initial)?;
    let ans = p.ansatz(1).map_err(|e| e.in_stage("approx"))?;
    let defects = par::map(&trajectory.states, |s| ans.solvability_defect(s, &p.macro_grid));
    let mut solvability_defect = 0.0f64;
    for d in defects {
        solvability_defect = solvability_defect.max(d.map_err(|e| e.in_stage("approx"))?);
    }
    let last = trajectory.last();
    let s = p.config.norm_s;
    let rows = par::map(qs, |&q| -> Result<ConvergenceRow> {
        let (summary, out, solver) = run_nls(p, q, 0)?;
        let fine = solver.fine();
        let u = &out.last().expect("final field").u;
        let (u0, u0t) = ans.assemble_with_time_derivative(last, &p.macro_grid, fine, 0)?;
        let (u1, u1t) = ans.assemble_with_time_derivative(last, &p.macro_grid, fine, 1)?;
        let diff = |a: &[Complex64]| -> Vec<Complex64> { u.iter().zip(a).map(|(x, y)| x - y).collect() };
        let r0 = solver.grid().l2_norm_sq(&solver.residual(&u0, &u0t)).sqrt();
        let r1 = solver.grid().l2_norm_sq(&solver.residual(&u1, &u1t)).sqrt();
        Ok(ConvergenceRow {
            q,
            eps: summary.eps,
            points: summary.points.iter().product(),
            dt: summary.dt,
            error: solver.hs_eps_norm(&diff(&u0), s),
            error_first_order: solver.hs_eps_norm(&diff(&u1), s),
            residual_leading: r0,
            residual_first_order: r1,
            residual_ratio: r1 / r0,
            mass_drift: summary.mass_drift,
        })
    })
    .into_iter()
    .collect::<std::result::Result<Vec<_>, _>>()
    .map_err(|e: Error| e.in_stage("convergence"))?;
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let (slope, fit_residual) = loglog_fit(&eps, &errs);
    let window = p.config.slope_window;
    let pass = slope >= window[0] && slope <= window[1] && fit_residual < 0.1;
    Ok(ConvergenceReport {
        certificate_digest: p.certificate.digest(),
        tolerances: p.system.tol,
        potential_digest: p.potential.digest(),
        norm_s: s,
        t_end: p.config.time.t_end,
        rows,
        solvability_defect,
        slope,
        fit_residual,
        window,
        pass,
        rationale: "expected rate 1 for a first-order ansatz compared against the leading order; the window absorbs \
                    the frozen first-order resonant amplitudes and splitting error"
            .into(),
    })
}

impl ConvergenceReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = [
            "q",
            "eps",
            "points",
            "dt",
            "error",
            "error_first_order",
            "residual_leading",
            "residual_first_order",
            "residual_ratio",
            "mass_drift",
        ];
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.q.to_string(),
                    fmt_f64(r.eps),
                    r.points.to_string(),
                    fmt_f64(r.dt),
                    fmt_f64(r.error),
                    fmt_f64(r.error_first_order),
                    fmt_f64(r.residual_leading),
                    fmt_f64(r.residual_first_order),
                    fmt_f64(r.residual_ratio),
                    fmt_f64(r.mass_drift),
                ]
            })
            .collect();
        io::write_csv(path, &header, &rows)
    }
}

// ---------------------------------------------------------------- scenarios

pub const SCENARIOS: [&str; 4] = ["three_pulse", "single_band", "multi_band_single_k", "mathieu_single_mode"];

fn gaussian(mode: usize, center: f64, width: f64, amp: f64) -> InitialDatum {
    InitialDatum {
        mode,
        gaussian: Some(Gaussian { center: vec![center], width, amplitude: Complex64::new(amp, 0.0), phase_k: vec![] }),
        samples: None,
    }
}

/// Built-in configuration of a named scenario.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig {
        lattice: LatticeConfig::default(),
        potential: PotentialConfig { mathieu: Some(0.5), ..PotentialConfig::default() },
        modes: ModesConfig::default(),
        kappa: 1.0,
        macro_grid: MacroGridConfig { lengths: vec![32.0], points: vec![256] },
        initial: Vec::new(),
        time: TimeConfig { t_end: 1.0, ..TimeConfig::default() },
        fine: FineConfig::default(),
        bands: BandsConfig::default(),
        norm_s: 1.0,
        order: 1,
        slope_window: default_window(),
        output_dir: None,
    };
    let search = ModesConfig { search: Some(SearchDirective { band: 1, scan_points: 256, offset: 0.3 }), ..Default::default() };
    Ok(match name {
        "three_pulse" => ExperimentConfig {
            modes: search,
            initial: vec![gaussian(1, -4.0, 2.0, 1.0), gaussian(2, 0.0, 2.0, 0.8), gaussian(3, 4.0, 2.0, 0.6)],
            ..base
        },
        "single_band" => ExperimentConfig {
            modes: search,
            initial: vec![gaussian(1, 0.0, 2.0, 1.0), gaussian(2, 0.0, 2.0, 1.0), gaussian(3, 0.0, 2.0, 1.0)],
            ..base
        },
        "multi_band_single_k" => ExperimentConfig {
            modes: ModesConfig {
                list: vec![ModeEntry { k: vec![0.0], band: 1 }, ModeEntry { k: vec![0.0], band: 2 }],
                ..Default::default()
            },
            initial: vec![gaussian(1, 0.0, 2.0, 1.0), gaussian(2, 0.0, 2.0, 0.5)],
            ..base
        },
        "mathieu_single_mode" => ExperimentConfig {
            modes: ModesConfig { list: vec![ModeEntry { k: vec![0.125], band: 1 }], ..Default::default() },
            macro_grid: MacroGridConfig { lengths: vec![8.0], points: vec![128] },
            initial: vec![gaussian(1, 0.0, 1.0, 1.0)],
            time: TimeConfig { t_end: 0.5, ..TimeConfig::default() },
            fine: FineConfig { box_cells: vec![8], p_cell: 16, q: vec![8, 16, 32] },
            ..base
        },
        other => return Err(Error::invalid(format!("unknown scenario {other:?}; expected one of {SCENARIOS:?}"))),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub resonances: ResonanceReport,
    pub table: CouplingTable,
    pub drifts: Drifts,
    pub checks: Vec<Check>,
    #[serde(default)]
    pub convergence: Option<ConvergenceReport>,
}

impl ScenarioReport {
    pub fn pass(&self) -> bool {
        all_pass(&self.checks) && self.convergence.as_ref().is_none_or(|c| c.pass)
    }
}

fn conservation_checks(d: &Drifts, tol: f64) -> Vec<Check> {
    let mut v = vec![
        Check::at_most("mass drift", d.mass, tol),
        Check::at_most("I drift", d.energy_weighted, tol),
        Check::at_most("H_red drift", d.hamiltonian, tol),
    ];
    for (i, w) in d.weighted.iter().enumerate() {
        v.push(Check::at_most(&format!("Itilde{} drift", i + 1), *w, tol));
    }
    v
}

/// Largest `‖a_m(t)‖_{L²}` of mode `m` over a trajectory.
pub fn max_norm(run: &AmplitudeRun, m: usize) -> f64 {
    run.series.iter().map(|s| s.norms[m]).fold(0.0, f64::max)
}

/// Runs a scenario and, when `dir` is given, writes its outputs there.
pub fn run_scenario(name: &str, config: &ExperimentConfig, dir: Option<&Path>) -> Result<ScenarioReport> {
    let p = Pipeline::build(config)?;
    let run = run_amplitudes(&p, &p.initial)?;
    let mut checks = conservation_checks(&run.drifts, 1e-6);
    match name {
        "three_pulse" => {
            let mut init = p.initial.clone();
            init.fields[0].iter_mut().for_each(|z| *z = Complex64::default());
            let sub = run_amplitudes(&p, &init)?;
            checks.push(Check::at_most("invariant subsystem max |a_1|", max_norm(&sub, 0), 1e-12));
            let [p0, q0, r0, m0] = [0usize, 1, 0, 2];
            checks.push(Check {
                name: "quadruple (1,2,1,3) resonant".into(),
                value: p.table.get([p0, q0, r0, m0]).map_or(f64::NAN, |c| c.norm()),
                tolerance: 0.0,
                pass: p.table.get([p0, q0, r0, m0]).is_some(),
            });
        }
        "single_band" => {
            if let Some(t) = &p.search {
                checks.push(Check::at_most("resonance residual", t.residual, 1e-10));
                let (a, b) = t.endpoint_values;
                checks.push(Check {
                    name: "endpoint sign pattern".into(),
                    value: a * b,
                    tolerance: 0.0,
                    pass: a > 0.0 && b < 0.0,
                });
            }
        }
        "multi_band_single_k" => {
            let e = p.system.energies();
            let m = p.system.len();
            let mut expected = Vec::new();
            for a in 0..m {
                for b in 0..m {
                    for c in 0..m {
                        for d in 0..m {
                            if (e[a] - e[b] + e[c] - e[d]).abs() <= p.system.tol.tol_e {
                                expected.push([a, b, c, d]);
                            }
                        }
                    }
                }
            }
            let got = resonant_quadruples(&p.system);
            checks.push(Check {
                name: "resonances decided by energies alone".into(),
                value: got.len() as f64,
                tolerance: expected.len() as f64,
                pass: got == expected,
            });
        }
        _ => {}
    }
    let convergence = if p.config.fine.q.len() >= 3 { Some(run_convergence(&p)?) } else { None };
    let report = ScenarioReport {
        name: name.to_string(),
        resonances: run_resonances(&p),
        table: p.table.clone(),
        drifts: run.drifts.clone(),
        checks,
        convergence,
    };
    if let Some(dir) = dir {
        io::write_json(&dir.join("report.json"), &report)?;
        write_coupling_csv(&p.table, &dir.join("couplings.csv"))?;
        run.write_series_csv(&dir.join("conserved.csv"))?;
        run.write_final_state(&p, &dir.join("amplitudes_final"))?;
        if let Some(c) = &report.convergence {
            c.write_csv(&dir.join("convergence.csv"))?;
        }
    }
    Ok(report)
}
