use std::f64::consts::PI;

use modpulse::bloch::{BlochSolver, PlaneWaveBasis, PotentialSpec};
use modpulse::lattice::Lattice;
use num_complex::Complex64;
use proptest::prelude::*;

fn free_1d(shells: usize) -> BlochSolver {
    BlochSolver::with_shells(PotentialSpec::free(Lattice::cubic(1, 1.0).unwrap()), shells).unwrap()
}

fn mathieu() -> BlochSolver {
    BlochSolver::with_shells(PotentialSpec::mathieu(0.5), 10).unwrap()
}

/// Folded parabolas `½(k+g)²`, sorted, with their wave numbers.
fn folded(k: f64, count: usize, shells: i64) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = (-shells..=shells)
        .map(|n| {
            let q = k + 2.0 * PI * n as f64;
            (0.5 * q * q, q)
        })
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v.truncate(count);
    v
}

#[test]
fn free_bands_are_folded_parabolas() {
    let s = free_1d(6);
    for i in 0..40 {
        let k = -PI + 2.0 * PI * (i as f64 + 0.37) / 40.0;
        let pairs = s.solve_bands(&[k], 5).unwrap();
        for (p, (e, q)) in pairs.iter().zip(folded(k, 5, 6)) {
            assert!((p.energy - e).abs() < 1e-12 * e.max(1.0), "k = {k}");
            let v = s.group_velocity(p).unwrap();
            assert!((v[0] - q).abs() < 1e-12 * q.abs().max(1.0), "k = {k}");
        }
    }
}

#[test]
fn free_square_lattice_matches_2d_parabolas() {
    let lat = Lattice::cubic(2, 1.0).unwrap();
    let s = BlochSolver::with_shells(PotentialSpec::free(lat), 4).unwrap();
    let k = [0.3, -1.1];
    let mut want: Vec<f64> = Vec::new();
    for a in -4i64..=4 {
        for b in -4i64..=4 {
            let x = k[0] + 2.0 * PI * a as f64;
            let y = k[1] + 2.0 * PI * b as f64;
            want.push(0.5 * (x * x + y * y));
        }
    }
    want.sort_by(f64::total_cmp);
    let got = s.energies(&k, 6).unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-11);
    }
}

#[test]
fn mathieu_band_structure_symmetries() {
    let s = mathieu();
    for i in 0..16 {
        let k = -PI + 2.0 * PI * (i as f64 + 0.21) / 16.0;
        let e = s.energies(&[k], 4).unwrap();
        let shifted = s.energies(&[k + 2.0 * PI], 4).unwrap();
        let mirrored = s.energies(&[-k], 4).unwrap();
        for l in 0..4 {
            assert!((e[l] - shifted[l]).abs() < 1e-9);
            assert!((e[l] - mirrored[l]).abs() < 1e-9);
        }
    }
}

#[test]
fn mathieu_ground_energy_at_zero() {
    // Independent dense eigensolve (numpy, 41 plane waves): -0.0253019209970.
    let e = mathieu().energy(&[0.0], 1).unwrap();
    assert!((e - (-0.02530192099918)).abs() < 1e-11, "{e}");
}

#[test]
fn basis_respects_cutoff() {
    let lat = Lattice::cubic(2, 1.0).unwrap();
    let b = PlaneWaveBasis::new(&lat, 4.0 * PI).unwrap();
    for (g, idx) in b.vectors().iter().zip(b.indices()) {
        assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() <= 4.0 * PI + 1e-12);
        assert_eq!(b.position(idx).map(|i| &b.indices()[i]), Some(idx));
    }
    // Lattice points with |n| ≤ 2 in the plane.
    assert_eq!(b.len(), 13);
}

fn overlap(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mathieu_pairs_are_orthonormal(f in -0.5f64..0.5) {
        let s = mathieu();
        let k = 2.0 * PI * f;
        let pairs = s.solve_bands(&[k], 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((overlap(&pairs[i].coefficients, &pairs[j].coefficients) - want).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn mathieu_pairs_solve_the_eigenproblem(f in -0.5f64..0.5, band in 1usize..4) {
        let s = mathieu();
        let k = [2.0 * PI * f];
        let p = s.pair(&k, band).unwrap();
        let h = s.apply_hamiltonian(&k, &p.coefficients).unwrap();
        let r: f64 = h.iter().zip(&p.coefficients).map(|(a, c)| (a - p.energy * c).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(r < 1e-10);
    }

    #[test]
    fn hellmann_feynman_matches_finite_difference(f in 0.1f64..0.4) {
        let s = mathieu();
        let k = 2.0 * PI * f;
        let p = s.pair(&[k], 1).unwrap();
        let v = s.group_velocity(&p).unwrap()[0];
        let h = 1e-4;
        let fd = (s.energy(&[k + h], 1).unwrap() - s.energy(&[k - h], 1).unwrap()) / (2.0 * h);
        prop_assert!((v - fd).abs() < 1e-6);
    }
}
