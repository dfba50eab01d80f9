use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::liouvillian::{model_terms, HarmonicWell, ModelSpec};
use crate::reference::{
    bosonic_moment_solution, gaussian_moment_solution, GaussianMomentState, GridGeometry,
    SecondMomentState,
};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Random state supported on the lowest `support` levels of a `k`-level mode.
fn random_rho(k: usize, support: usize, seed: u64) -> FockDensityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::from_element(k, k, c(0.0, 0.0));
    for i in 0..support {
        for j in 0..support {
            a[(i, j)] = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
    }
    let m = &a * a.adjoint();
    let tr = m.trace();
    let mut m = m / tr;
    // Exact Hermitian symmetry.
    m = (&m + m.adjoint()) * c(0.5, 0.0);
    FockDensityMatrix::new(1, k, m).unwrap()
}

fn max_abs(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    (a - b).iter().map(|v| v.norm()).fold(0.0, f64::max)
}

#[test]
fn vacuum_q_function() {
    let rho = FockDensityMatrix::vacuum(1, DEFAULT_CUTOFF_1).unwrap();
    assert!((q_from_rho(&rho, &[c(0.0, 0.0)]).unwrap() - 1.0 / PI).abs() < 1e-15);
    for a in [c(0.5, -0.2), c(-1.3, 0.7), c(2.0, 2.0)] {
        let q = q_from_rho(&rho, &[a]).unwrap();
        assert!((q - (-a.norm_sqr()).exp() / PI).abs() < 1e-15);
    }
}

#[test]
fn coherent_q_function() {
    let rho = FockDensityMatrix::coherent(&[c(1.0, 0.0)], DEFAULT_CUTOFF_1).unwrap();
    for a in [c(0.0, 0.0), c(1.0, 0.0), c(0.3, -1.1), c(2.5, 0.4)] {
        let q = q_from_rho(&rho, &[a]).unwrap();
        let expect = (-(a - c(1.0, 0.0)).norm_sqr()).exp() / PI;
        assert!((q - expect).abs() < 1e-14, "{a}: {q} vs {expect}");
    }
}

#[test]
fn two_mode_product_state() {
    let (b1, b2) = (c(0.4, -0.3), c(-0.8, 0.1));
    let rho = FockDensityMatrix::coherent(&[b1, b2], DEFAULT_CUTOFF_2 + 8).unwrap();
    let (a1, a2) = (c(0.1, 0.2), c(-0.5, 0.5));
    let q = q_from_rho(&rho, &[a1, a2]).unwrap();
    let expect = (-(a1 - b1).norm_sqr() - (a2 - b2).norm_sqr()).exp() / (PI * PI);
    assert!((q - expect).abs() < 1e-13);
}

#[test]
fn truncation_is_detected() {
    // A thermal state has weight on the top level, so far-out points are unreliable.
    let rho = FockDensityMatrix::thermal(2.0, 10).unwrap();
    assert!(q_from_rho(&rho, &[c(0.1, 0.0)]).is_ok());
    assert!(matches!(q_from_rho(&rho, &[c(6.0, 0.0)]), Err(Error::Cutoff(_))));
}

#[test]
fn q_of_random_state_is_normalized() {
    let rho = random_rho(30, 10, 7);
    let h = 0.05;
    let n = (16.0 / h) as usize;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a = c(-8.0 + (i as f64 + 0.5) * h, -8.0 + (j as f64 + 0.5) * h);
            if a.norm() <= 8.0 {
                total += q_from_rho(&rho, &[a]).unwrap();
            }
        }
    }
    assert!((total * h * h - 1.0).abs() < 1e-6, "{}", total * h * h);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn q_is_nonnegative(seed in 0u64..1000, re in -4.0f64..4.0, im in -4.0f64..4.0) {
        let rho = random_rho(20, 8, seed);
        prop_assert!(q_from_rho(&rho, &[c(re, im)]).unwrap() >= -1e-12);
    }

    #[test]
    fn taylor_roundtrip_of_random_state(seed in 0u64..1000, k in 2usize..12) {
        let rho = random_rho(k, k, seed);
        let table = QTaylorTable::from_rho(&rho, k - 1).unwrap();
        let back = rho_from_q_taylor(&table, k).unwrap();
        prop_assert!(max_abs(back.matrix(), rho.matrix()) < 1e-8);
    }
}

#[test]
fn vacuum_table_inverts_to_vacuum() {
    let rho = rho_from_q_taylor(&QTaylorTable::vacuum(10), 8).unwrap();
    assert!((rho.matrix()[(0, 0)].re - 1.0).abs() < 1e-14);
    assert!(rho.matrix()[(1, 1)].norm() < 1e-14);
    let vac = FockDensityMatrix::vacuum(1, 8).unwrap();
    assert!(max_abs(rho.matrix(), vac.matrix()) < 1e-14);
}

#[test]
fn coherent_table_roundtrip() {
    let beta = c(0.5, 0.0);
    let rho = rho_from_q_taylor(&QTaylorTable::coherent(beta, 19), 20).unwrap();
    let exact = FockDensityMatrix::coherent(&[beta], 20).unwrap();
    assert!(max_abs(rho.matrix(), exact.matrix()) < 1e-8);
    let beta = c(0.3, -0.6);
    let rho = rho_from_q_taylor(&QTaylorTable::coherent(beta, 19), 20).unwrap();
    let exact = FockDensityMatrix::coherent(&[beta], 20).unwrap();
    assert!(max_abs(rho.matrix(), exact.matrix()) < 1e-8);
}

#[test]
fn thermal_table_roundtrip() {
    for nbar in [0.5, 1.0] {
        let rho = rho_from_q_taylor(&QTaylorTable::thermal(nbar, 19), 20).unwrap();
        for n in 0..20 {
            let p = nbar.powi(n as i32) / (nbar + 1.0).powi(n as i32 + 1);
            assert!((rho.matrix()[(n, n)].re - p).abs() < 1e-8);
        }
        assert!(rho.matrix()[(0, 1)].norm() < 1e-12);
    }
}

#[test]
fn zero_table_is_rejected() {
    assert!(matches!(
        rho_from_q_taylor(&QTaylorTable::zeros(5), 4),
        Err(Error::InconsistentTable(_))
    ));
    assert!(rho_from_q_taylor(&QTaylorTable::zeros(2), 4).is_err());
}

#[test]
fn table_hermitian_symmetry() {
    let t = QTaylorTable::coherent(c(0.4, 0.9), 8);
    for a in 0..=8 {
        for b in 0..=8 {
            assert!((t.get(a, b) - t.get(b, a).conj()).norm() < 1e-15);
        }
    }
}

fn grid_of(rho: &FockDensityMatrix, n: usize) -> GridState {
    let geom = GridGeometry::cube(2, n, 10.0).unwrap();
    GridState::from_fn(geom, |x| q_from_rho(rho, &[c(x[0], x[1])]).unwrap()).unwrap()
}

#[test]
fn anti_normal_moments_from_grid() {
    let vac = FockDensityMatrix::vacuum(1, DEFAULT_CUTOFF_1).unwrap();
    let g = grid_of(&vac, 128);
    assert!((observable_moment_grid(&g, 0, 1, 1) - c(1.0, 0.0)).norm() < 1e-10);
    assert!((observable_moment_grid(&g, 0, 0, 0) - c(1.0, 0.0)).norm() < 1e-10);

    let rho = FockDensityMatrix::coherent(&[c(0.7, 0.2)], DEFAULT_CUTOFF_1).unwrap();
    let a = rho.annihilation(0);
    let aad = &a * a.adjoint();
    let from_matrix = rho.expect(&aad);
    let from_q = observable_moment_grid(&grid_of(&rho, 160), 0, 1, 1);
    assert!((from_matrix - from_q).norm() < 1e-6);
    assert!((from_matrix.re - (0.53 + 1.0)).abs() < 1e-10);
}

#[test]
fn anti_normal_moments_from_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 20_000;
    let pts: Vec<f64> = (0..2 * n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.5f64.sqrt()).collect();
    let (m0, _) = observable_moment_samples(&pts, 2, 0, 0, 0);
    assert_eq!(m0, c(1.0, 0.0));
    let (m11, se) = observable_moment_samples(&pts, 2, 0, 1, 1);
    assert!((m11.re - 1.0).abs() < 5.0 * se.re);
    assert!(m11.im.abs() < 1e-12);
}

#[test]
fn zero_generator_keeps_state() {
    let rho = random_rho(6, 4, 1);
    let out = lindblad_fock_evolve(&rho, &[], 0.01, 100).unwrap();
    assert_eq!(out, rho);
}

#[test]
fn harmonic_mean_field_matches_moment_oracle() {
    let spec = ModelSpec::Harmonic {
        wells: vec![HarmonicWell {
            omega: 1.2,
            gamma: 0.8,
            nbar: 0.5,
        }],
    };
    let terms = model_terms(&spec);
    let rho0 = FockDensityMatrix::coherent(&[c(-1.0, -1.0)], 40).unwrap();
    let init = GaussianMomentState::isotropic(&[-1.0, -1.0], 0.5).unwrap();
    let mut rho = rho0;
    let dt = 1e-3;
    for t_idx in 1..=4 {
        rho = lindblad_fock_evolve(&rho, &terms, dt, 250).unwrap();
        let t = 0.25 * t_idx as f64;
        let a = rho.expect(&rho.annihilation(0));
        let g = gaussian_moment_solution(&spec, &init, t).unwrap();
        let mu = &g.state().mean;
        assert!((a - c(mu[0], mu[1])).norm() < 1e-6, "t={t}");
    }
}

#[test]
fn bosonic_chain_matches_moment_oracle() {
    let spec = ModelSpec::BosonicChain {
        hopping: 1.0,
        gamma: vec![1.0, 0.0],
    };
    let terms = model_terms(&spec);
    let mut rho = FockDensityMatrix::two_well_bec(4, 6).unwrap();
    assert!((rho.occupation(0) - 2.0).abs() < 1e-12);
    let c0 = SecondMomentState::two_well_antisymmetric(2.0);
    for step in 1..=8 {
        rho = lindblad_fock_evolve(&rho, &terms, 1e-3, 250).unwrap();
        let t = 0.25 * step as f64;
        let exact = bosonic_moment_solution(1.0, &[1.0, 0.0], &c0, t).unwrap();
        assert!((rho.occupation(0) - exact.occupation(0)).abs() < 1e-5, "t={t}");
        assert!((rho.occupation(1) - exact.occupation(1)).abs() < 1e-5, "t={t}");
    }
}

#[test]
fn trace_leak_is_reported() {
    let spec = ModelSpec::Harmonic {
        wells: vec![HarmonicWell {
            omega: 1.0,
            gamma: 1.0,
            nbar: 5.0,
        }],
    };
    let rho = FockDensityMatrix::coherent(&[c(1.5, 0.0)], 6).unwrap();
    assert!(matches!(
        lindblad_fock_evolve(&rho, &model_terms(&spec), 1e-3, 1000),
        Err(Error::Cutoff(_))
    ));
}

#[test]
fn fock_and_grid_dynamics_agree() {
    let spec = ModelSpec::Harmonic {
        wells: vec![HarmonicWell {
            omega: 1.0,
            gamma: 0.9,
            nbar: 0.3,
        }],
    };
    let terms = model_terms(&spec);
    let rho0 = FockDensityMatrix::coherent(&[c(-1.0, -1.0)], 50).unwrap();
    let geom = GridGeometry::cube(2, 256, 10.0).unwrap();
    assert!(q_dynamics_crosscheck(&terms, &rho0, &geom, 0.0).unwrap() < 1e-8);
    assert!(q_dynamics_crosscheck(&[], &rho0, &geom, 1.0).unwrap() < 1e-8);
    let d = q_dynamics_crosscheck(&terms, &rho0, &geom, 1.0).unwrap();
    assert!(d < 1e-4, "{d}");
}

#[test]
fn text_roundtrip() {
    let rho = FockDensityMatrix::two_well_bec(3, 4).unwrap();
    let txt = rho.to_text();
    let back = FockDensityMatrix::from_text(txt.as_bytes()).unwrap();
    assert_eq!(back, rho);
    assert!(FockDensityMatrix::from_text("qflow-fock 1\nmodes 1\ncutoff 2\n1,0 0,0\n".as_bytes()).is_err());
    assert!(FockDensityMatrix::from_text("hello".as_bytes()).is_err());
}

#[test]
fn invalid_matrices_are_rejected() {
    let m = DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.6, 0.0)]);
    assert!(FockDensityMatrix::new(1, 2, m).is_err());
    let m = DMatrix::from_row_slice(2, 2, &[c(1.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.5, 0.0)]);
    assert!(FockDensityMatrix::new(1, 2, m).is_err());
    assert!(FockDensityMatrix::vacuum(3, 4).is_err());
}
