use std::f64::consts::PI;

use modpulse::bloch::PotentialSpec;
use modpulse::harness::{preset, Pipeline};
use modpulse::lattice::Lattice;
use modpulse::nls::*;
use num_complex::Complex64;
use proptest::prelude::*;

fn grid_1d(box_cells: usize, q: usize, p_cell: usize) -> FineGrid {
    FineGrid::new(&Lattice::cubic(1, 1.0).unwrap(), &[box_cells], q, p_cell).unwrap()
}

#[test]
fn mass_is_conserved_with_a_periodic_potential() {
    let fine = grid_1d(8, 8, 16);
    let solver = NlsSolver::new(fine, &PotentialSpec::mathieu(0.5), 1.0).unwrap();
    let g = solver.grid().clone();
    let u = g.sample(|x| Complex64::new((-(x[0] - 4.0).powi(2)).exp(), 0.3 * (x[0] * 3.0).sin()));
    let init = WaveField { t: 0.0, u };
    let m0 = solver.mass(&init.u);
    let out = solver.evolve(&init, 1.0, 0.05 * solver.eps(), 40).unwrap();
    assert_eq!(out.len(), 5);
    for w in &out {
        assert!((solver.mass(&w.u) - m0).abs() < 1e-10 * m0);
    }
}

#[test]
fn energy_drift_shrinks_with_the_step() {
    let fine = grid_1d(4, 8, 16);
    let solver = NlsSolver::new(fine, &PotentialSpec::mathieu(0.5), 1.0).unwrap();
    let g = solver.grid().clone();
    let init = WaveField { t: 0.0, u: g.sample(|x| Complex64::new((-(x[0] - 2.0).powi(2)).exp(), 0.0)) };
    let e0 = solver.energy(&init.u);
    let drift = |dt: f64| (solver.energy(&solver.evolve(&init, 0.5, dt, 0).unwrap()[1].u) - e0).abs() / e0.abs();
    let eps = solver.eps();
    let (a, b) = (drift(0.1 * eps), drift(0.025 * eps));
    assert!(b < a / 4.0, "{a} {b}");
}

#[test]
fn constant_datum_with_constant_potential() {
    let (v, kappa, c) = (0.7, 1.3, Complex64::new(0.4, -0.9));
    let solver = NlsSolver::with_constant_potential(grid_1d(2, 4, 8), v, kappa);
    let init = WaveField { t: 0.0, u: vec![c; solver.grid().len()] };
    let t = 1.0;
    let out = solver.evolve(&init, t, 0.01, 0).unwrap();
    // iε u_t = V u + εκ|u|²u.
    let omega = v / solver.eps() + kappa * c.norm_sqr();
    let want = c * Complex64::from_polar(1.0, -omega * t);
    for z in &out[1].u {
        assert!((z - want).norm() < 1e-10);
    }
}

#[test]
fn split_step_matches_fused_evolution() {
    let fine = grid_1d(2, 4, 16);
    let solver = NlsSolver::new(fine, &PotentialSpec::mathieu(0.5), 0.8).unwrap();
    let g = solver.grid().clone();
    let init = WaveField { t: 0.0, u: g.sample(|x| Complex64::from_polar((-(x[0] - 1.0).powi(2)).exp(), x[0])) };
    let dt = 0.01;
    let mut u = init.u.clone();
    for _ in 0..20 {
        solver.split_step(&mut u, dt);
    }
    let fused = solver.evolve(&init, 0.2, dt, 7).unwrap();
    let last = &fused.last().unwrap().u;
    assert!((fused.last().unwrap().t - 0.2).abs() < 1e-15);
    for (a, b) in u.iter().zip(last) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn step_halving_ratio_is_second_order() {
    let p = Pipeline::build(&preset("mathieu_single_mode").unwrap()).unwrap();
    let fine = p.fine_grid(8).unwrap();
    let u0 = p.ansatz(0).unwrap().leading_order_field(&p.initial, &p.macro_grid, &fine).unwrap();
    let solver = NlsSolver::new(fine, &p.potential, p.config.kappa).unwrap();
    let r = step_halving_ratio(&solver, &WaveField { t: 0.0, u: u0 }, 0.5, 0.05 * solver.eps()).unwrap();
    assert!((3.5..=4.5).contains(&r), "{r}");
}

#[test]
fn incommensurate_wave_vectors_are_rejected() {
    let fine = grid_1d(4, 8, 4);
    assert!(fine.wave_index(&[0.125]).is_ok());
    assert!(fine.wave_index(&[0.1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nonlinear_plane_waves_are_exact(j in -6i64..6, a in 0.1f64..1.5, v in -1.0f64..1.0) {
        let fine = grid_1d(2, 4, 8);
        let kappa = 0.9;
        let w = fine.plane_wave(&[j]);
        let solver = NlsSolver::with_constant_potential(fine, v, kappa);
        let init = WaveField { t: 0.0, u: w.iter().map(|z| z * a).collect() };
        let t = 0.5;
        let out = solver.evolve(&init, t, 0.01, 0).unwrap();
        let eps = solver.eps();
        // Wave number p = 2πj/L with L = 2 on the fine grid.
        let p = 2.0 * PI * j as f64 / 2.0;
        let omega = 0.5 * eps * p * p + v / eps + kappa * a * a;
        for (z, w0) in out[1].u.iter().zip(&init.u) {
            prop_assert!((z - w0 * Complex64::from_polar(1.0, -omega * t)).norm() < 1e-10);
        }
    }

    #[test]
    fn hs_norm_is_monotone_in_s(s in 0.0f64..3.0, ds in 0.0f64..1.0) {
        let g = modpulse::grid::PeriodicBox::new(&[4.0], &[64]).unwrap();
        let u = g.sample(|x| Complex64::new((x[0] * 2.0).cos(), (-(x[0] - 2.0).powi(2)).exp()));
        prop_assert!(hs_eps_norm(&g, 0.1, &u, s) <= hs_eps_norm(&g, 0.1, &u, s + ds) * (1.0 + 1e-14));
    }
}
