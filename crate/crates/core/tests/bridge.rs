use bridgekit_core::bridge::*;
use bridgekit_core::oracle::{GaussianDomain, GaussianOracle};
use bridgekit_core::rng;
use bridgekit_core::{Error, FieldOutput, Schedule, VelocityField};
use proptest::prelude::*;

#[test]
fn sample_zt_examples() {
    let s = Schedule::linear(0.1).unwrap();
    let z0 = [1.0, 0.0];
    let zt = [0.0, 1.0];
    let (a, eps) = sample_zt(&z0, &zt, 0.5, &s, &[1.0, 1.0]).unwrap();
    assert!((a[0] - 0.55).abs() < 1e-15 && (a[1] - 0.55).abs() < 1e-15);
    assert_eq!(eps, vec![1.0, 1.0]);
    assert_eq!(sample_zt(&z0, &zt, 0.0, &s, &[3.0, -2.0]).unwrap().0, z0.to_vec());
    assert_eq!(sample_zt(&z0, &zt, 1.0, &s, &[3.0, -2.0]).unwrap().0, zt.to_vec());
    assert_eq!(
        sample_zt(&z0, &[0.0], 0.5, &s, &[1.0, 1.0]),
        Err(Error::DimensionMismatch { expected: 2, got: 1 })
    );
}

#[test]
fn velocity_target_examples() {
    let s = Schedule::linear(0.1).unwrap();
    assert_eq!(
        velocity_target(&[1.0, 0.0], &[0.0, 1.0], 0.5, &s, &[7.0, -3.0]).unwrap(),
        vec![-1.0, 1.0]
    );
    let r = Schedule::rectified();
    assert_eq!(
        velocity_target(&[1.0, 2.0], &[0.5, -1.0], 0.3, &r, &[9.0, 9.0]).unwrap(),
        vec![-0.5, -3.0]
    );
    let v = velocity_target(&[0.0], &[0.0], 0.25, &s, &[1.0]).unwrap();
    assert!((v[0] - 0.057_735_026_918_962_58).abs() < 1e-15);
}

#[test]
fn score_to_velocity_examples() {
    let s = Schedule::linear(0.1).unwrap();
    let v = score_to_velocity(&[0.3], &[0.0], &[2.0], 0.5, &s).unwrap();
    assert_eq!(v, vec![-0.3 + 2.0]);

    // Joint Gaussian conditioning written out directly.
    let (alpha, beta, gamma, sigma2, z, zt): (f64, f64, f64, f64, f64, f64) = (0.5, 0.5, 0.05, 1.0, 0.5, 0.0);
    let m: f64 = alpha * sigma2 * (z - beta * zt) / (alpha * alpha * sigma2 + gamma * gamma);
    assert!((m - 0.990099).abs() < 1e-6);
    let oracle = GaussianOracle::new(GaussianDomain::scalar(0.0, 1.0).unwrap(), s);
    let out = oracle.evaluate(0.5, &[z], &[zt], None).unwrap();
    assert!((out.posterior_mean.as_ref().unwrap()[0] - m).abs() < 1e-12);
    let v = score_to_velocity(
        out.posterior_mean.as_ref().unwrap(),
        out.noise_mean.as_ref().unwrap(),
        &[zt],
        0.5,
        &s,
    )
    .unwrap();
    assert!((v[0] + m).abs() < 1e-12);

    let r = Schedule::rectified();
    let v = score_to_velocity(&[1.5], &[0.0], &[-0.5], 0.4, &r).unwrap();
    assert_eq!(v, vec![-2.0]);
    assert_eq!(
        noise_mean_from_score(&[1.0], 0.4, &r),
        Err(Error::SingularConversion { t: 0.4 })
    );
}

#[test]
fn reverse_sde_drift_examples() {
    assert_eq!(reverse_sde_drift(&[1.0], &[2.0], 0.5).unwrap(), vec![0.0]);
    assert_eq!(
        reverse_sde_drift(&[1.0, -3.0], &[2.0, 8.0], 0.0).unwrap(),
        vec![1.0, -3.0]
    );
    assert!(reverse_sde_drift(&[1.0], &[2.0], -0.1).is_err());

    let s = Schedule::linear(0.1).unwrap();
    let oracle = GaussianOracle::new(GaussianDomain::scalar(0.2, 0.7).unwrap(), s);
    let g = 0.05;
    let (z, zt, t) = ([0.4], [1.3], 0.5);
    let out = oracle.evaluate(t, &z, &zt, None).unwrap();
    let d = reverse_sde_drift(&out.velocity, out.score.as_ref().unwrap(), g).unwrap();
    let w = s.eval(t).unwrap();
    let r = s.eval_derivatives(t).unwrap();
    let (m, u) = (out.posterior_mean.unwrap()[0], out.noise_mean.unwrap()[0]);
    let ecsi = r.alpha_dot * m + r.beta_dot * zt[0] + (r.gamma_dot + g / w.gamma) * u;
    assert!((d[0] - ecsi).abs() < 1e-12);
    let alt = reverse_sde_drift_from_means(&[m], &[u], &zt, t, &s, g).unwrap();
    assert!((alt[0] - ecsi).abs() < 1e-12);
}

#[test]
fn marginal_law_of_forward_draws() {
    let s = Schedule::linear(0.5).unwrap();
    let (z0, zt, t) = ([0.7, -1.0], [2.0, 0.5], 0.3);
    let w = s.eval(t).unwrap();
    let n = 100_000;
    let mut r = rng::stream(42, 0);
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    let mut cross = 0.0;
    for _ in 0..n {
        let eps = rng::normal_vec(&mut r, 2);
        let (z, _) = sample_zt(&z0, &zt, t, &s, &eps).unwrap();
        for d in 0..2 {
            sum[d] += z[d];
            sq[d] += z[d] * z[d];
        }
        cross += z[0] * z[1];
    }
    let var = w.gamma * w.gamma;
    for d in 0..2 {
        let mean = sum[d] / n as f64;
        let expect = w.alpha * z0[d] + w.beta * zt[d];
        let se = (var / n as f64).sqrt();
        assert!((mean - expect).abs() < 4.0 * se, "mean {mean} vs {expect}");
        let v = sq[d] / n as f64 - mean * mean;
        let se_var = var * (2.0 / (n - 1) as f64).sqrt();
        assert!((v - var).abs() < 4.0 * se_var, "var {v} vs {var}");
    }
    let m0 = sum[0] / n as f64;
    let m1 = sum[1] / n as f64;
    let cov = cross / n as f64 - m0 * m1;
    assert!(cov.abs() < 4.0 * var / (n as f64).sqrt());
}

#[test]
fn conversion_round_trip_against_oracle() {
    let s = Schedule::linear(0.1).unwrap();
    let oracle = GaussianOracle::new(GaussianDomain::scalar(0.3, 0.8).unwrap(), s);
    for k in 1..1000 {
        let t = 0.001 + 0.998 * k as f64 / 1000.0;
        let z = [0.4 - t];
        let zt = [1.1];
        let out = oracle.evaluate(t, &z, &zt, None).unwrap();
        let v = score_to_velocity(
            out.posterior_mean.as_ref().unwrap(),
            out.noise_mean.as_ref().unwrap(),
            &zt,
            t,
            &s,
        )
        .unwrap();
        assert!((v[0] - out.velocity[0]).abs() <= 1e-10, "t={t}");
        let u = noise_mean_from_score(out.score.as_ref().unwrap(), t, &s).unwrap();
        assert!((u[0] - out.noise_mean.as_ref().unwrap()[0]).abs() <= 1e-10);
        let (m2, u2) = means_from_velocity(&out.velocity, &z, &zt, t, &s).unwrap();
        assert!((m2[0] - out.posterior_mean.as_ref().unwrap()[0]).abs() <= 1e-8);
        assert!((u2[0] - out.noise_mean.as_ref().unwrap()[0]).abs() <= 1e-8);
    }
}

#[test]
fn bridge_state_validation() {
    assert!(BridgeState::new(vec![1.0], 0.5, vec![1.0, 2.0]).is_err());
    assert!(BridgeState::new(vec![1.0], 1.5, vec![1.0]).is_err());
    let b = BridgeState::new(vec![1.0], 0.5, vec![2.0]).unwrap();
    assert_eq!((b.z(), b.t(), b.endpoint()), (&[1.0][..], 0.5, &[2.0][..]));
}

proptest! {
    #[test]
    fn field_output_consistency(
        m in prop::collection::vec(-5.0f64..5.0, 3),
        u in prop::collection::vec(-5.0f64..5.0, 3),
        gamma in 1e-6f64..2.0,
    ) {
        let out = FieldOutput::from_means(vec![0.0; 3], m, u.clone(), gamma);
        let s = out.score.as_ref().unwrap();
        for (si, ui) in s.iter().zip(&u) {
            prop_assert_eq!(*si, -ui / gamma);
        }
        prop_assert!(out.check_consistency(gamma).is_ok());
    }

    #[test]
    fn sample_then_invert_noise(t in 0.01f64..0.99, z0 in -3.0f64..3.0, zt in -3.0f64..3.0, e in -3.0f64..3.0) {
        let s = Schedule::linear(0.3).unwrap();
        let (z, _) = sample_zt(&[z0], &[zt], t, &s, &[e]).unwrap();
        let u = noise_mean_from_posterior(&z, &[z0], &[zt], t, &s).unwrap();
        prop_assert!((u[0] - e).abs() < 1e-9);
    }
}
