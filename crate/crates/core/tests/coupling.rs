use std::f64::consts::PI;

use modpulse::bloch::{BlochPair, BlochSolver, PotentialSpec};
use modpulse::coupling::*;
use modpulse::lattice::Lattice;
use modpulse::modes::{Mode, ModeSystem};
use modpulse::Error;
use num_complex::Complex64;

/// Plane-wave index carrying a free Bloch function.
fn carrier_index(s: &BlochSolver, p: &BlochPair) -> i64 {
    let (i, c) = p.coefficients.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap();
    assert!((c.norm() - 1.0).abs() < 1e-12);
    s.basis().indices()[i][0]
}

#[test]
fn free_couplings_obey_plane_wave_selection_rule() {
    let s = BlochSolver::with_shells(PotentialSpec::free(Lattice::cubic(1, 1.0).unwrap()), 6).unwrap();
    // ±0.25 on band 1 share an energy, so (a,b,a,b) is an umklapp resonance.
    let modes = vec![Mode::new(&[0.25], 1), Mode::new(&[-0.25], 1), Mode::new(&[0.1], 1), Mode::new(&[-0.25], 2)];
    let sys = ModeSystem::from_solver(&s, modes, None).unwrap();
    let kappa = 1.7;
    let table = coupling_table(&sys, &s, kappa, None).unwrap();
    assert!(table.get([0, 1, 0, 1]).is_some());
    let full: Vec<f64> = sys.modes.iter().zip(&sys.pairs).map(|(m, p)| m.k[0] + carrier_index(&s, p) as f64).collect();
    let mut nonzero = 0;
    for (&[p, q, r, m], &v) in &table.entries {
        let sum = full[p] - full[q] + full[r] - full[m];
        let want = if sum.abs() < 1e-12 { kappa } else { 0.0 };
        assert!((v - want).norm() < 1e-13, "{:?}: {v}", [p, q, r, m]);
        nonzero += usize::from(want != 0.0);
    }
    assert!(nonzero > 0 && nonzero < table.entries.len());
}

#[test]
fn mathieu_self_coupling_matches_fine_quadrature() {
    let s = BlochSolver::with_shells(PotentialSpec::mathieu(0.5), 10).unwrap();
    let sys = ModeSystem::from_solver(&s, vec![Mode::new(&[0.125], 1)], None).unwrap();
    let table = coupling_table(&sys, &s, 1.0, None).unwrap();
    let v = table.get([0, 0, 0, 0]).unwrap();
    // Independent trapezoid rule on 1000 points of ∫|χ|⁴.
    let n = 1000;
    let points: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64]).collect();
    let chi = sys.pairs[0].realspace(s.basis(), &points);
    let oracle: f64 = chi.iter().map(|z| z.norm_sqr().powi(2)).sum::<f64>() / n as f64;
    assert!(v.im.abs() < 1e-14);
    assert!((v.re - oracle).abs() < 1e-12, "{} vs {oracle}", v.re);
    assert!(v.re > 1.0);
}

#[test]
fn coupling_symmetries_hold_on_a_search_triple() {
    let s = BlochSolver::with_shells(PotentialSpec::mathieu(0.5), 10).unwrap();
    let modes =
        vec![Mode::new(&[0.28934592604269227], 1), Mode::new(&[-0.01065407395730772], 1), Mode::new(&[-0.4106540739573077], 1)];
    let sys = ModeSystem::from_solver(&s, modes, None).unwrap();
    let table = coupling_table(&sys, &s, 1.0, None).unwrap();
    let (c, e, d) = table.symmetry_defects();
    assert!(c < 1e-12 && e == 0.0 && d < 1e-12);
    assert!(table.get([0, 1, 0, 2]).is_some());
    // Umklapp: 2k_1 - k_2 - k_3 = 1.
    let k = &sys.modes;
    assert_eq!(umklapp([&k[0].k, &k[1].k, &k[0].k, &k[2].k]), vec![1]);
}

#[test]
fn aliasing_bound_is_enforced() {
    let s = BlochSolver::with_shells(PotentialSpec::mathieu(0.5), 4).unwrap();
    let p = s.pair(&[2.0 * PI * 0.2], 1).unwrap();
    let need = aliasing_bound(s.basis(), &[0]);
    assert_eq!(need, 17);
    let lat = s.lattice().clone();
    let ok = coupling_constant([&p, &p, &p, &p], &lat, s.basis(), 1.0, need).unwrap();
    let fine = coupling_constant([&p, &p, &p, &p], &lat, s.basis(), 1.0, 4 * need).unwrap();
    assert!((ok - fine).norm() < 1e-14);
    match coupling_constant([&p, &p, &p, &p], &lat, s.basis(), 1.0, need - 1) {
        Err(Error::ResolutionTooLow { given, required }) => assert_eq!((given, required), (need - 1, need)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn w_collects_diagonal_terms() {
    let s = BlochSolver::with_shells(PotentialSpec::mathieu(0.5), 8).unwrap();
    let sys = ModeSystem::from_solver(&s, vec![Mode::new(&[0.1], 1), Mode::new(&[0.3], 2)], None).unwrap();
    let t = coupling_table(&sys, &s, 1.0, None).unwrap();
    let a = [Complex64::new(0.3, 0.4), Complex64::new(-1.0, 0.2)];
    let want = t.get([0, 0, 0, 0]).unwrap() * 0.25 + 2.0 * t.get([0, 1, 1, 0]).unwrap() * 1.04;
    assert!((t.w(0, &a) - want).norm() < 1e-14);
}
