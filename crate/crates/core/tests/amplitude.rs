use modpulse::amplitude::*;
use modpulse::coupling::CouplingTable;
use modpulse::harness::{preset, Pipeline};
use num_complex::Complex64;
use proptest::prelude::*;
use std::collections::BTreeMap;

fn three_pulse_small() -> Pipeline {
    let mut cfg = preset("three_pulse").unwrap();
    cfg.macro_grid.points = vec![128];
    cfg.time.t_end = 0.25;
    cfg.time.amplitude_dt = 2.5e-3;
    Pipeline::build(&cfg).unwrap()
}

#[test]
fn invariant_subsystem_stays_zero() {
    let p = three_pulse_small();
    let mut init = p.initial.clone();
    init.fields[0].iter_mut().for_each(|z| *z = Complex64::default());
    let traj = p.integrate_amplitudes(&init).unwrap();
    for s in &traj.states {
        assert!(s.fields[0].iter().all(|z| *z == Complex64::default()));
    }
    // The other two pulses still interact.
    let last = traj.last();
    assert!(last.fields[1].iter().any(|z| z.norm() > 1e-3));
}

#[test]
fn conserved_quantities_converge_with_step() {
    let p = three_pulse_small();
    let weights = compatible_weights(&p.amplitude.quadruples, p.amplitude.len());
    let drift = |dt: f64| {
        let traj = strang_evolve(&p.amplitude, &p.macro_grid, &p.initial, 0.25, dt, 0).unwrap();
        let a = conserved_report(&p.amplitude, &p.macro_grid, &traj.states[0], &weights);
        let b = conserved_report(&p.amplitude, &p.macro_grid, traj.last(), &weights);
        let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1e-300);
        let mut worst = rel(a.mass, b.mass).max(rel(a.hamiltonian, b.hamiltonian));
        for (x, y) in a.weighted.iter().zip(&b.weighted) {
            worst = worst.max(rel(*x, *y));
        }
        for (x, y) in a.translation.iter().zip(&b.translation) {
            worst = worst.max((x - y).abs() / a.mass);
        }
        worst
    };
    let coarse = drift(2.5e-2);
    let fine = drift(6.25e-3);
    assert!(fine < 1e-6, "{fine}");
    assert!(fine < coarse, "{fine} vs {coarse}");
}

#[test]
fn single_mode_gaussian_keeps_its_modulus_profile() {
    // i a_t + i v a_x = κ|a|²a: |a| is transported rigidly.
    let mut table = CouplingTable { kappa: 1.0, n_per_dim: 0, entries: BTreeMap::new() };
    table.entries.insert([0, 0, 0, 0], Complex64::new(1.3, 0.0));
    let sys = AmplitudeSystem::new(vec![vec![0.5]], vec![0.0], &table).unwrap();
    let grid = macro_grid(&[16.0], &[128]).unwrap();
    let g = Gaussian { center: vec![0.0], width: 1.5, amplitude: Complex64::new(0.8, 0.0), phase_k: vec![] };
    let init = AmplitudeState { t: 0.0, fields: vec![g.sample(&grid)] };
    let traj = strang_evolve(&sys, &grid, &init, 2.0, 1e-3, 0).unwrap();
    let shifted = Gaussian { center: vec![1.0], ..g };
    let want = shifted.sample(&grid);
    for (a, b) in traj.last().fields[0].iter().zip(&want) {
        assert!((a.norm() - b.norm()).abs() < 1e-9);
    }
}

fn quadruples(m: usize) -> impl Strategy<Value = Vec<[usize; 4]>> {
    prop::collection::vec(prop::array::uniform4(0..m), 0..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compatible_weights_are_orthonormal_solutions(qs in quadruples(5)) {
        let w = compatible_weights(&qs, 5);
        prop_assert!(!w.is_empty());
        for (i, a) in w.iter().enumerate() {
            for [p, q, r, m] in &qs {
                prop_assert!((a[*p] - a[*q] + a[*r] - a[*m]).abs() < 1e-10);
            }
            for (j, b) in w.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((d - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transport_is_exact_for_fourier_modes(j in -20i64..20, v in -2.0f64..2.0, t in 0.0f64..3.0) {
        let table = CouplingTable { kappa: 1.0, n_per_dim: 0, entries: BTreeMap::new() };
        let sys = AmplitudeSystem::new(vec![vec![v]], vec![0.0], &table).unwrap();
        let grid = macro_grid(&[8.0], &[64]).unwrap();
        let k = 2.0 * std::f64::consts::PI * j as f64 / 8.0;
        let mut st = AmplitudeState { t: 0.0, fields: vec![grid.sample(|x| Complex64::from_polar(1.0, k * x[0]))] };
        transport_step(&sys, &grid, &mut st, t);
        for (i, z) in st.fields[0].iter().enumerate() {
            let x = grid.coord(0, i);
            prop_assert!((z - Complex64::from_polar(1.0, k * (x - v * t))).norm() < 1e-11);
        }
    }
}
