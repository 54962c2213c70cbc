use bridgekit_core::model::*;
use bridgekit_core::oracle::{GaussianDomain, GaussianOracle};
use bridgekit_core::rng::{self, standard_normal, BridgeRng};
use bridgekit_core::{Error, FieldOutput, Result, Schedule, VelocityField};

fn lin() -> Schedule {
    Schedule::linear(0.1).unwrap()
}

fn gaussian_data(rng: &mut BridgeRng) -> Example {
    Example {
        z0: vec![standard_normal(rng)],
        endpoint: vec![standard_normal(rng)],
        condition: None,
    }
}

/// `(t, z, zT)` points away from the clip zones, spread over the bridge marginal.
fn validation_grid(s: &Schedule) -> Vec<(f64, f64, f64)> {
    let mut pts = Vec::new();
    for ti in 1..=9 {
        let t = ti as f64 / 10.0;
        let w = s.eval(t).unwrap();
        let sd = (w.alpha * w.alpha + w.gamma * w.gamma).sqrt();
        for zt in [-1.0, 0.0, 1.0] {
            for k in -2..=2 {
                pts.push((t, w.beta * zt + k as f64 * sd, zt));
            }
        }
    }
    pts
}

fn rmse(a: &impl VelocityField, b: &impl VelocityField, s: &Schedule) -> f64 {
    let pts = validation_grid(s);
    let sq: f64 = pts
        .iter()
        .map(|&(t, z, e)| {
            let d = a.velocity(t, &[z], &[e], None).unwrap()[0] - b.velocity(t, &[z], &[e], None).unwrap()[0];
            d * d
        })
        .sum();
    (sq / pts.len() as f64).sqrt()
}

fn trained(p: Parameterization, learn_rate: f64) -> VelocityNet {
    let cfg = NetConfig {
        parameterization: p,
        seed: 1,
        ..NetConfig::default()
    };
    let mut net = VelocityNet::new(&cfg, lin()).unwrap();
    let tc = TrainConfig {
        batch: 256,
        steps: 3000,
        learn_rate,
        seed: 1,
        ..TrainConfig::default()
    };
    train(&mut net, &gaussian_data, &tc).unwrap();
    net
}

#[test]
fn constant_dataset_learns_constant_velocity() {
    let (k, m) = (0.3, 1.5);
    let data = |_: &mut BridgeRng| Example {
        z0: vec![k],
        endpoint: vec![m],
        condition: None,
    };
    let mut net = VelocityNet::new(&NetConfig::default(), Schedule::rectified()).unwrap();
    train(&mut net, &data, &TrainConfig::default()).unwrap();
    for ti in 1..20 {
        let t = ti as f64 / 20.0;
        let z = (1.0 - t) * k + t * m;
        let v = net.velocity(t, &[z], &[m], None).unwrap()[0];
        assert!((v - (m - k)).abs() <= 1e-2, "t={t}: {v}");
    }
}

#[test]
fn trained_fields_match_oracle_and_each_other() {
    let s = lin();
    let oracle = GaussianOracle::new(GaussianDomain::scalar(0.0, 1.0).unwrap(), s);
    let vel = trained(Parameterization::Velocity, 3e-3);
    let pm = trained(Parameterization::PosteriorMean, 1e-2);
    let (e_vel, e_pm, e_cross) = (rmse(&vel, &oracle, &s), rmse(&pm, &oracle, &s), rmse(&vel, &pm, &s));
    assert!(e_vel <= 0.05, "velocity RMSE {e_vel}");
    assert!(e_pm <= 0.05, "posterior-mean RMSE {e_pm}");
    assert!(e_cross <= 0.1, "parameterization gap {e_cross}");
}

#[test]
fn validation_loss_moving_average_decreases() {
    let mut net = VelocityNet::new(
        &NetConfig {
            hidden: 32,
            ..NetConfig::default()
        },
        lin(),
    )
    .unwrap();
    let tc = TrainConfig {
        steps: 3000,
        learn_rate: 3e-3,
        eval_every: 1,
        ..TrainConfig::default()
    };
    let trace = train(&mut net, &gaussian_data, &tc).unwrap();
    let ma = moving_average(&trace, 100);
    let sampled: Vec<f64> = ma.iter().skip(99).step_by(100).copied().collect();
    for w in sampled.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "{sampled:?}");
    }
    assert!(sampled.last().unwrap() < &(sampled[0] * 0.5));
}

#[test]
fn always_dropped_condition_is_never_learned() {
    let cfg = NetConfig {
        cond_dim: 2,
        hidden: 32,
        ..NetConfig::default()
    };
    let mut net = VelocityNet::new(&cfg, lin()).unwrap();
    let data = |r: &mut BridgeRng| {
        let z0 = standard_normal(r);
        Example {
            z0: vec![z0],
            endpoint: vec![standard_normal(r)],
            condition: Some(vec![z0, 1.0]),
        }
    };
    let tc = TrainConfig {
        steps: 300,
        cond_dropout: 1.0,
        ..TrainConfig::default()
    };
    train(&mut net, &data, &tc).unwrap();
    let mut r = rng::stream(5, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let c = [3.0 * standard_normal(&mut r), 3.0 * standard_normal(&mut r)];
        let a = net.raw_output(0.4, &[0.2], &[0.5], Some(&c)).unwrap()[0];
        let b = net.raw_output(0.4, &[0.2], &[0.5], None).unwrap()[0];
        worst = worst.max((a - b).abs());
    }
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn condition_is_used_once_scale_is_nonzero() {
    let cfg = NetConfig {
        cond_dim: 2,
        hidden: 16,
        ..NetConfig::default()
    };
    let mut net = VelocityNet::new(&cfg, lin()).unwrap();
    let a = net.raw_output(0.4, &[0.2], &[0.5], Some(&[1.0, 2.0])).unwrap();
    assert_eq!(a, net.raw_output(0.4, &[0.2], &[0.5], None).unwrap());
    net.set_cond_scale(0.5);
    assert_ne!(a, net.raw_output(0.4, &[0.2], &[0.5], Some(&[1.0, 2.0])).unwrap());
}

#[test]
fn gradient_check_on_default_width() {
    let cfg = NetConfig {
        dim: 2,
        cond_dim: 2,
        ..NetConfig::default()
    };
    let mut net = VelocityNet::new(&cfg, lin()).unwrap();
    net.set_cond_scale(0.3);
    let data = |r: &mut BridgeRng| Example {
        z0: rng::normal_vec(r, 2),
        endpoint: rng::normal_vec(r, 2),
        condition: Some(rng::normal_vec(r, 2)),
    };
    let batch = Batch::draw(&data, &net, 8, 0.0, &mut rng::stream(2, 0)).unwrap();
    let report = gradient_check(&net, &batch, 1e-5);
    assert_eq!(report.len(), tensor_layout(2, 2, 128).len());
    for (name, rel) in report {
        assert!(rel <= 1e-4, "{name}: {rel}");
    }
}

/// `v = c[0]` for the conditional branch, `1` when the condition is zeroed.
struct TwoBranch;

impl VelocityField for TwoBranch {
    fn dim(&self) -> usize {
        1
    }
    fn evaluate(&self, _t: f64, _z: &[f64], _e: &[f64], c: Option<&[f64]>) -> Result<FieldOutput> {
        let v = match c {
            Some(c) if c.iter().any(|x| *x != 0.0) => c[0],
            _ => 1.0,
        };
        Ok(FieldOutput::velocity_only(vec![v]))
    }
}

#[test]
fn guidance_examples() {
    let c = [2.0];
    let z = [0.0];
    assert_eq!(
        eval_cfg(&TwoBranch, 0.5, &z, &z, Some(&c), 1.0, [0.0, 1.0]).unwrap(),
        vec![2.0]
    );
    assert_eq!(
        eval_cfg(&TwoBranch, 0.5, &z, &z, Some(&c), 2.0, [0.0, 1.0]).unwrap(),
        vec![3.0]
    );
    assert_eq!(
        eval_cfg(&TwoBranch, 0.9, &z, &z, Some(&c), 2.0, [0.1, 0.5]).unwrap(),
        vec![2.0]
    );
    assert_eq!(
        eval_cfg(&TwoBranch, 0.05, &z, &z, Some(&c), 7.0, [0.1, 0.5]).unwrap(),
        vec![2.0]
    );
    assert!(eval_cfg(&TwoBranch, 0.5, &z, &z, Some(&c), -1.0, [0.0, 1.0]).is_err());
}

#[test]
fn posterior_mean_needs_noise() {
    let cfg = NetConfig {
        parameterization: Parameterization::PosteriorMean,
        ..NetConfig::default()
    };
    assert!(matches!(
        VelocityNet::new(&cfg, Schedule::rectified()),
        Err(Error::Unsupported(_))
    ));
    assert!(VelocityNet::new(&cfg, Schedule::snr(0.1, 20.0).unwrap()).is_ok());
}

#[test]
fn training_is_deterministic() {
    let cfg = NetConfig {
        hidden: 16,
        ..NetConfig::default()
    };
    let tc = TrainConfig {
        steps: 50,
        batch: 32,
        ..TrainConfig::default()
    };
    let run = || {
        let mut net = VelocityNet::new(&cfg, lin()).unwrap();
        let trace = train(&mut net, &gaussian_data, &tc).unwrap();
        (net, trace)
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a.params(), b.params());
    assert_eq!(ta, tb);
}
