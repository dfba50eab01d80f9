use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A flow with every parameter drawn uniformly from `[-scale, scale]`.
pub(crate) fn random_model(dim: usize, layers: usize, scale: f64, seed: u64) -> FlowModel {
    let prior = Prior::standard_normal(dim);
    let mut m = FlowModel::zeroed(dim, prior, layers, FlowArch::default(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in m.params_mut() {
        *p = rng.random_range(-scale..scale);
    }
    m
}

fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
}

/// Trapezoid (plain Riemann on a fine grid) of `exp(log q)` over `[-a, a]²`.
fn grid_mass(m: &FlowModel, a: f64, n: usize) -> f64 {
    let h = 2.0 * a / n as f64;
    let mut s = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            let x = [-a + i as f64 * h, -a + j as f64 * h];
            let w = if i == 0 || i == n { 0.5 } else { 1.0 } * if j == 0 || j == n { 0.5 } else { 1.0 };
            s += w * m.log_density(&x).unwrap().exp();
        }
    }
    s * h * h
}

#[test]
fn identity_rejects_bad_config() {
    assert!(init_identity(3, Prior::standard_normal(3), 2, 0).is_err());
    assert!(init_identity(2, Prior::standard_normal(2), 0, 0).is_err());
    assert!(init_identity(2, Prior::standard_normal(4), 2, 0).is_err());
}

#[test]
fn identity_standard_normal_origin() {
    let m = init_identity(2, Prior::standard_normal(2), 3, 1).unwrap();
    let v = m.log_density(&[0.0, 0.0]).unwrap();
    assert!((v + LN_2PI).abs() < 1e-12);
    let v = m.log_density(&[1.0, 0.0]).unwrap();
    assert!((v + LN_2PI + 0.5).abs() < 1e-12);
}

#[test]
fn identity_diagonal_mode() {
    let prior = Prior::diagonal(vec![-1.0, -1.0], vec![0.5, 0.5]).unwrap();
    let m = init_identity(2, prior, 3, 1).unwrap();
    let v = m.log_density(&[-1.0, -1.0]).unwrap();
    assert!((v + std::f64::consts::PI.ln()).abs() < 1e-12);
}

#[test]
fn identity_matches_prior_pointwise() {
    let prior = Prior::diagonal(vec![0.3, -1.0, 2.0, 0.0], vec![0.5, 2.0, 1.0, 0.7]).unwrap();
    let m = init_identity(4, prior.clone(), 4, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let x = random_point(&mut rng, 4);
        assert!((m.log_density(&x).unwrap() - prior.log_density(&x)).abs() < 1e-12);
        assert_eq!(m.forward(&x), x);
    }
}

#[test]
fn non_finite_input_is_domain_error() {
    let m = init_identity(2, Prior::standard_normal(2), 2, 0).unwrap();
    assert!(matches!(m.log_density(&[f64::NAN, 0.0]), Err(Error::Domain(_))));
    assert!(m.log_density(&[0.0]).is_err());
}

#[test]
fn roundtrip_random_model() {
    let m = random_model(4, 5, 0.8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let z = random_point(&mut rng, 4);
        let x = m.forward(&z);
        let back = m.inverse(&x);
        let fwd = m.forward(&m.inverse(&z));
        for i in 0..4 {
            worst = worst.max((back[i] - z[i]).abs()).max((fwd[i] - z[i]).abs());
        }
    }
    assert!(worst < 1e-9, "roundtrip error {worst}");
}

#[test]
fn roundtrip_with_saturated_scales() {
    // Weights large enough that the scale clamp is active almost everywhere.
    let m = random_model(2, 3, 30.0, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut saturated = 0;
    let mut tape = m.new_tape();
    for _ in 0..1000 {
        let z = random_point(&mut rng, 2);
        tape.forward(&m, &z);
        let x = tape.x().to_vec();
        let back = m.inverse(&x);
        let err = (back[0] - z[0]).abs().max((back[1] - z[1]).abs());
        let scale = 1.0 + z[0].abs().max(z[1].abs());
        assert!(err < 1e-9 * scale.max(x[0].abs()).max(x[1].abs()), "err {err}");
        if tape.layers_saturated(0.9 * DEFAULT_S_CAP) {
            saturated += 1;
        }
    }
    assert!(saturated > 100, "clamp not exercised ({saturated})");
}

#[test]
fn two_density_paths_agree() {
    let m = random_model(2, 3, 0.7, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let z = random_point(&mut rng, 2);
        let (x, lq_fwd) = m.forward_with_log_density(&z);
        let lq_inv = m.log_density(&x).unwrap();
        assert!((lq_fwd - lq_inv).abs() < 1e-10);
    }
}

#[test]
fn random_model_normalizes_on_grid() {
    let m = random_model(2, 3, 0.5, 10);
    let mass = grid_mass(&m, 12.0, 600);
    assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
}

#[test]
fn identity_gaussian_derivatives() {
    let m = init_identity(2, Prior::standard_normal(2), 3, 0).unwrap();
    let (g, h) = m.input_derivatives(&[0.7, -1.3]).unwrap();
    assert!((g[0] + 0.7).abs() < 1e-12 && (g[1] - 1.3).abs() < 1e-12);
    let expected = [-1.0, 0.0, 0.0, -1.0];
    for (a, b) in h.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()).max(1e-3))
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let d = if trial % 2 == 0 { 2 } else { 4 };
        let m = random_model(d, 3 + trial % 3, 0.8, 100 + trial as u64);
        let x = random_point(&mut rng, d);
        let (g, h) = m.input_derivatives(&x).unwrap();
        let eps = 1e-4;
        for i in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (m.log_density(&xp).unwrap() - m.log_density(&xm).unwrap()) / (2.0 * eps);
            assert!(rel_err(g[i], fd) < 1e-5, "grad {i}: {} vs {fd}", g[i]);
            // Hessian column from differences of the analytic gradient.
            let (gp, _) = m.input_derivatives(&xp).unwrap();
            let (gm, _) = m.input_derivatives(&xm).unwrap();
            for j in 0..d {
                let fd2 = (gp[j] - gm[j]) / (2.0 * eps);
                assert!(rel_err(h[j * d + i], fd2) < 1e-4, "hess {j}{i}");
            }
        }
        for i in 0..d {
            for j in 0..d {
                assert!((h[i * d + j] - h[j * d + i]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn backprop_input_gradient_matches_jets() {
    let m = random_model(4, 4, 0.8, 21);
    let x = [0.3, -0.2, 1.1, -0.9];
    let mut tape = m.new_tape();
    tape.inverse(&m, &x);
    let mut g = vec![0.0; m.n_params()];
    let gx = tape.backprop(&m, &mut g).to_vec();
    let (gj, _) = m.input_derivatives(&x).unwrap();
    for i in 0..4 {
        assert!((gx[i] - gj[i]).abs() < 1e-10);
    }
}

#[test]
fn param_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    for trial in 0..100 {
        let d = if trial % 2 == 0 { 2 } else { 4 };
        let mut m = random_model(d, 2 + trial % 3, 0.8, 200 + trial as u64);
        let x = random_point(&mut rng, d);
        let g = m.param_grad_log_density(&x).unwrap();
        let h = 1e-5;
        // A random subset of coordinates per model keeps the test fast.
        for _ in 0..8 {
            let k = rng.random_range(0..m.n_params());
            let orig = m.params()[k];
            m.params_mut()[k] = orig + h;
            let fp = m.log_density(&x).unwrap();
            m.params_mut()[k] = orig - h;
            let fm = m.log_density(&x).unwrap();
            m.params_mut()[k] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!(rel_err(g[k], fd) < 1e-4, "param {k}: {} vs {fd}", g[k]);
            checked += 1;
        }
    }
    assert_eq!(checked, 800);
}

#[test]
fn identity_final_bias_sensitivity() {
    // With zero final layers only the final biases (and weights) get signal.
    // For the last layer, ∂/∂b_s = -(z_b - μ_b)·(∂ log p / ∂z_b)·... reduces to
    // −u·g − 1 and ∂/∂b_t to −g, with g the prior score at the inverse image.
    let prior = Prior::diagonal(vec![-1.0, -1.0], vec![0.5, 0.5]).unwrap();
    let m = init_identity(2, prior, 3, 4).unwrap();
    let x = [0.2, -1.7];
    let g = m.param_grad_log_density(&x).unwrap();
    let last = m.n_layers() - 1;
    let r = m.final_bias_range(last);
    let trans = m.layers()[last].trans[0];
    let score = -(x[trans] + 1.0) / 0.5;
    let u = x[trans];
    assert!((g[r.start] - (-score * u - 1.0)).abs() < 1e-12);
    assert!((g[r.start + 1] - (-score)).abs() < 1e-12);
    // Finite-difference check of the same two entries.
    let mut m2 = m.clone();
    for k in [r.start, r.start + 1] {
        let h = 1e-6;
        m2.params_mut()[k] = h;
        let fp = m2.log_density(&x).unwrap();
        m2.params_mut()[k] = -h;
        let fm = m2.log_density(&x).unwrap();
        m2.params_mut()[k] = 0.0;
        assert!(rel_err(g[k], (fp - fm) / (2.0 * h)) < 1e-6);
    }
}

#[test]
fn sample_moments_identity() {
    let m = init_identity(2, Prior::standard_normal(2), 3, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let b = m.sample(10_000, &mut rng);
    for a in 0..2 {
        let mean: f64 = (0..b.len()).map(|i| b.point(i)[a]).sum::<f64>() / b.len() as f64;
        let var: f64 = (0..b.len()).map(|i| (b.point(i)[a] - mean).powi(2)).sum::<f64>() / b.len() as f64;
        assert!(mean.abs() < 4.0 / 100.0, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}

#[test]
fn cached_log_q_matches_density() {
    let m = random_model(4, 3, 0.6, 14);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let b = m.sample(200, &mut rng);
    for i in 0..b.len() {
        let lq = m.log_density(b.point(i)).unwrap();
        assert!((lq - b.log_q[i]).abs() < 1e-10);
    }
}

#[test]
fn sample_mean_density_matches_grid_integral() {
    // E_{x~q}[q(x)] = ∫ q², once from samples and once by quadrature.
    let m = random_model(2, 3, 0.6, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let b = m.sample(40_000, &mut rng);
    let vals: Vec<f64> = b.log_q.iter().map(|v| v.exp()).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
    let se = sd / (vals.len() as f64).sqrt();

    let n = 400;
    let a = 6.0;
    let h = 2.0 * a / n as f64;
    let mut q2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = [-a + (i as f64 + 0.5) * h, -a + (j as f64 + 0.5) * h];
            q2 += (2.0 * m.log_density(&x).unwrap()).exp();
        }
    }
    q2 *= h * h;
    assert!((mean - q2).abs() < 5.0 * se, "{mean} vs {q2} (se {se})");
}

#[test]
fn histogram_matches_density_chi_square() {
    let m = random_model(2, 3, 0.6, 18);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let n = 100_000;
    let b = m.sample(n, &mut rng);
    let bins = 50;
    let a = 4.0;
    let h = 2.0 * a / bins as f64;
    let mut counts = vec![0usize; bins * bins];
    for i in 0..n {
        let p = b.point(i);
        let ix = ((p[0] + a) / h).floor();
        let iy = ((p[1] + a) / h).floor();
        if ix >= 0.0 && iy >= 0.0 && (ix as usize) < bins && (iy as usize) < bins {
            counts[ix as usize * bins + iy as usize] += 1;
        }
    }
    // Expected counts from 4×4 midpoint quadrature inside each bin.
    let sub = 4;
    let mut chi2 = 0.0;
    let mut dof = 0usize;
    for ix in 0..bins {
        for iy in 0..bins {
            let mut mass = 0.0;
            for u in 0..sub {
                for v in 0..sub {
                    let x = [
                        -a + (ix as f64 + (u as f64 + 0.5) / sub as f64) * h,
                        -a + (iy as f64 + (v as f64 + 0.5) / sub as f64) * h,
                    ];
                    mass += m.log_density(&x).unwrap().exp();
                }
            }
            let e = mass * h * h / (sub * sub) as f64 * n as f64;
            if e >= 5.0 {
                let o = counts[ix * bins + iy] as f64;
                chi2 += (o - e).powi(2) / e;
                dof += 1;
            }
        }
    }
    // p > 0.001 for chi-square with `dof` degrees of freedom: Wilson–Hilferty.
    let k = dof as f64;
    let z = ((chi2 / k).powf(1.0 / 3.0) - (1.0 - 2.0 / (9.0 * k))) / (2.0 / (9.0 * k)).sqrt();
    assert!(z < 3.09, "chi2 {chi2} on {dof} bins (z = {z})");
}

#[test]
fn score_has_zero_mean() {
    let m = random_model(2, 3, 0.6, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 10_000;
    let b = m.sample(n, &mut rng);
    let np = m.n_params();
    let mut sum = vec![0.0; np];
    let mut sq = vec![0.0; np];
    let mut tape = m.new_tape();
    let mut g = vec![0.0; np];
    for i in 0..n {
        tape.inverse(&m, b.point(i));
        tape.backprop(&m, &mut g);
        for k in 0..np {
            sum[k] += g[k];
            sq[k] += g[k] * g[k];
        }
    }
    for k in 0..np {
        let mean = sum[k] / n as f64;
        let var = sq[k] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!(mean.abs() <= 5.0 * se + 1e-12, "param {k}: {mean} ± {se}");
    }
}

#[test]
fn checkpoint_roundtrip_is_byte_exact() {
    let prior = Prior::diagonal(vec![-1.0, -1.0], vec![0.5, 0.5]).unwrap();
    let mut m = init_identity(2, prior, 3, 77).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for p in m.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &m, 0.37).unwrap();
    let ck = read_checkpoint(&mut bytes.as_slice()).unwrap();
    assert_eq!(ck.model, m);
    assert_eq!(ck.time, 0.37);
    let mut again = Vec::new();
    write_checkpoint(&mut again, &ck.model, ck.time).unwrap();
    assert_eq!(bytes, again);
}

#[test]
fn checkpoint_rejects_garbage() {
    assert!(read_checkpoint(&mut &b"hello\n"[..]).is_err());
    let m = init_identity(2, Prior::standard_normal(2), 1, 0).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &m, 0.0).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(read_checkpoint(&mut bytes.as_slice()).is_err());
}
