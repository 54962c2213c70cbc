use bridgekit_core::encoder::*;
use bridgekit_core::rng::{self, standard_normal};
use bridgekit_core::Error;

fn truncated_gaussian(sigma: f64, offset: i64) -> f64 {
    let r = (4.0 * sigma).ceil() as i64;
    if offset.abs() > r {
        return 0.0;
    }
    let total: f64 = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).sum();
    (-(offset * offset) as f64 / (2.0 * sigma * sigma)).exp() / total
}

fn ramp(w: usize, h: usize) -> Image {
    let data = (0..w * h)
        .map(|i| ((i % w) as f64 * 0.3).sin() + (i / w) as f64 * 0.05)
        .collect();
    Image::new(w, h, data).unwrap()
}

#[test]
fn kernels_have_unit_sum() {
    for s in [0.5, 1.0, 3.0, 5.0] {
        let k = gaussian_kernel(s);
        assert_eq!(k.len(), 2 * (4.0 * s).ceil() as usize + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}

#[test]
fn constant_image_has_null_response() {
    let out = RetinaFilter::default().apply(&Image::filled(32, 24, 0.37)).unwrap();
    assert!(out.data.iter().all(|v| v.abs() <= 1e-12));
}

#[test]
fn offset_invariance() {
    let f = RetinaFilter::default();
    let a = ramp(30, 30);
    let b = Image::new(30, 30, a.data.iter().map(|v| v + 4.2).collect()).unwrap();
    let (ra, rb) = (f.apply(&a).unwrap(), f.apply(&b).unwrap());
    for (x, y) in ra.data.iter().zip(&rb.data) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn bright_pixel_center_surround_profile() {
    let f = RetinaFilter {
        iterations: 1,
        ..RetinaFilter::default()
    };
    let n = 41;
    let c = 20usize;
    let mut img = Image::filled(n, n, 0.0);
    img.data[c * n + c] = 1.0;
    let out = f.apply(&img).unwrap();
    let (sc, ss) = (f.sigma_c, f.sigma_s(1));
    for y in 0..n {
        for x in 0..n {
            let (dx, dy) = (x as i64 - c as i64, y as i64 - c as i64);
            let expect = truncated_gaussian(sc, dx) * truncated_gaussian(sc, dy)
                - f.w_s * truncated_gaussian(ss, dx) * truncated_gaussian(ss, dy);
            assert!((out.at(x, y) - expect).abs() < 1e-14, "({dx},{dy})");
        }
    }
    assert!(out.at(c, c) > 0.0);
    assert!(out.at(c + 4, c) < 0.0 && out.at(c, c + 5) < 0.0);
}

#[test]
fn small_images_are_rejected() {
    let f = RetinaFilter::default();
    assert_eq!(f.support_radius(), 20);
    assert!(f.apply(&Image::filled(19, 40, 0.0)).is_err());
    assert!(Image::new(3, 3, vec![0.0; 8]).is_err());
}

#[test]
fn patch_features_shape() {
    let img = ramp(32, 32);
    let feats = patch_features(&img, 8).unwrap();
    assert_eq!(feats.len(), 16);
    assert!(feats.iter().all(|f| f.len() == 4 * CELL_FEATURES));
}

fn cloud(n: usize, dim: usize, seed: u64, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|_| f(&(0..dim).map(|_| standard_normal(&mut r)).collect::<Vec<_>>()))
        .collect()
}

#[test]
fn subspace_data_reconstructs_exactly() {
    let basis = [
        [1.0, 2.0, 0.0, -1.0, 0.5],
        [0.0, 1.0, 1.0, 1.0, -2.0],
        [3.0, 0.0, -1.0, 0.0, 1.0],
    ];
    let offset = [5.0, -3.0, 1.0, 0.0, 2.0];
    let data = cloud(200, 3, 1, |c| {
        (0..5)
            .map(|j| offset[j] + (0..3).map(|i| c[i] * basis[i][j]).sum::<f64>())
            .collect()
    });
    let p = PcaProjector::fit(&data, 3).unwrap();
    for x in &data {
        let back = p.reconstruct(&p.project(x).unwrap()).unwrap();
        for (a, b) in back.iter().zip(x) {
            assert!((a - b).abs() <= 1e-8);
        }
    }
    assert!(matches!(
        PcaProjector::fit(&data, 4),
        Err(Error::RankDeficient { requested: 4, rank: 3 })
    ));
}

#[test]
fn orthonormal_components_and_sign_convention() {
    let data = cloud(500, 6, 2, |c| {
        c.iter().enumerate().map(|(i, v)| v * (1.0 + i as f64)).collect()
    });
    let p = PcaProjector::fit(&data, 4).unwrap();
    for (i, a) in p.components.iter().enumerate() {
        for (j, b) in p.components.iter().enumerate() {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            assert!((d - f64::from(u8::from(i == j))).abs() <= 1e-10);
        }
        let big = a
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        assert!(big >= 0.0);
    }
    assert!(p.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn projection_is_idempotent() {
    let data = cloud(300, 8, 3, |c| c.to_vec());
    let p = PcaProjector::fit(&data, 3).unwrap();
    for x in data.iter().take(50) {
        let y = p.project(x).unwrap();
        let y2 = p.project(&p.reconstruct(&y).unwrap()).unwrap();
        for (a, b) in y.iter().zip(&y2) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn isotropic_cloud_spreads_variance_evenly() {
    let (n, dim, b) = (20_000, 10, 4);
    let data = cloud(n, dim, 4, |c| c.to_vec());
    let p = PcaProjector::fit(&data, b).unwrap();
    let ratios = p.explained_variance_ratio();
    let total: f64 = ratios.iter().sum();
    // Largest sample eigenvalues of a Wishart matrix sit near (1 + sqrt(dim/n))^2.
    let edge = (1.0 + (dim as f64 / n as f64).sqrt()).powi(2);
    assert!(total > b as f64 / dim as f64 && total < b as f64 / dim as f64 * edge);
    for r in ratios {
        assert!((r - 1.0 / dim as f64).abs() < 0.1 / dim as f64 * edge, "{r}");
    }
}

#[test]
fn first_component_follows_the_diagonal() {
    let data = cloud(1000, 3, 5, |c| vec![c[0] + 1e-3 * c[1], c[0] + 1e-3 * c[2]]);
    let p = PcaProjector::fit(&data, 1).unwrap();
    let u = &p.components[0];
    let cos = (u[0] + u[1]) / 2f64.sqrt();
    assert!(cos.acos().to_degrees() < 1.0);
    assert!(u[0] > 0.0);
}

#[test]
fn pca_needs_enough_samples() {
    let data = cloud(4, 6, 6, |c| c.to_vec());
    assert!(matches!(PcaProjector::fit(&data, 4), Err(Error::InsufficientData(_))));
}

#[test]
fn deterministic_endpoint() {
    let data = cloud(100, 5, 7, |c| c.to_vec());
    let p = PcaProjector::fit(&data, 2).unwrap();
    let spec = EndpointSpec::default();
    let a = build_endpoint(&data[0], &p, &spec, None).unwrap();
    assert_eq!(a, p.project(&data[0]).unwrap());
    assert_eq!(a, build_endpoint(&data[0], &p, &spec, None).unwrap());
    assert!(build_endpoint(&data[0], &p, &EndpointSpec { b: 1.0, ..spec }, None).is_err());
    assert!(EndpointSpec { b: -0.1, ..spec }.validate().is_err());
}

#[test]
fn endpoint_noise_is_standard_normal() {
    let data = cloud(100, 5, 8, |c| c.to_vec());
    let p = PcaProjector::fit(&data, 3).unwrap();
    let spec = EndpointSpec {
        b: 1.0,
        pooling: Pooling::None,
    };
    let center = p.project(&data[0]).unwrap();
    let n = 100_000;
    let mut r = rng::stream(8, 1);
    let mut res: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(n)).collect();
    for _ in 0..n {
        let z = build_endpoint(&data[0], &p, &spec, Some(&mut r)).unwrap();
        for i in 0..3 {
            res[i].push((z[i] - center[i]) / spec.b);
        }
    }
    let nf = n as f64;
    for xs in res {
        let mean = xs.iter().sum::<f64>() / nf;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
        let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / nf;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
        let var = m2 * nf / (nf - 1.0);
        assert!((0.99..=1.01).contains(&var), "variance {var}");
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2) - 3.0;
        assert!(skew.abs() < 5.0 * (6.0 / nf).sqrt(), "skew {skew}");
        assert!(kurt.abs() < 5.0 * (24.0 / nf).sqrt(), "kurtosis {kurt}");
    }
}

#[test]
fn channel_average_pooling() {
    let ch: Vec<f64> = (0..16).map(|i| i as f64 * 0.5).collect();
    let out = pool(&ch, Pooling::ChannelAverage { groups: 4 }).unwrap();
    for (g, v) in out.iter().enumerate() {
        assert_eq!(*v, ch[4 * g..4 * g + 4].iter().sum::<f64>() / 4.0);
    }
    assert!(pool(&ch, Pooling::ChannelAverage { groups: 5 }).is_err());
    assert_eq!(pool(&ch, Pooling::None).unwrap(), ch);
}

#[test]
fn toy_pair_is_reproducible() {
    let a = toy_image_pair(32, &mut rng::stream(1, 0)).unwrap();
    let b = toy_image_pair(32, &mut rng::stream(1, 0)).unwrap();
    assert_eq!(a, b);
    assert!(toy_image_pair(4, &mut rng::stream(1, 0)).is_err());
}
