//! Endpoint construction: band-pass retina filter, patch statistics, PCA
//! projection, channel pooling and endpoint noise.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{check_dim, invalid, Error, Result};
use crate::math;
use crate::rng::{self, BridgeRng};

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("image", "width and height must be positive"));
        }
        check_dim(width * height, data.len())?;
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel access with replicated borders.
    fn clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.at(x, y)
    }
}

/// Unit-sum Gaussian taps on `-r..=r` with `r = ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = math::ceil(4.0 * sigma) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| math::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable convolution with replicate padding.
pub fn blur(image: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (image.width, image.height);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * image.clamped(x as isize + i as isize - r, y as isize))
                .sum();
        }
    }
    let tmp = Image {
        width: w,
        height: h,
        data: tmp,
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp.clamped(x as isize, y as isize + i as isize - r))
                .sum();
        }
    }
    Image {
        width: w,
        height: h,
        data: out,
    }
}

/// Center-surround filter `R = G_c * f - w_s G_s(t) * f`, applied `iterations`
/// times with `sigma_s(t) = sigma_c (1 + 2t)` at iteration `t = 1..=m`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RetinaFilter {
    pub sigma_c: f64,
    pub w_s: f64,
    pub iterations: usize,
}

impl Default for RetinaFilter {
    fn default() -> Self {
        Self {
            sigma_c: 1.0,
            w_s: 1.0,
            iterations: 2,
        }
    }
}

impl RetinaFilter {
    pub fn sigma_s(&self, t: usize) -> f64 {
        self.sigma_c * (1.0 + 2.0 * t as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_c > 0.0 && self.sigma_c.is_finite()) {
            return Err(invalid("sigma_c", "must be positive"));
        }
        if !self.w_s.is_finite() {
            return Err(invalid("w_s", "must be finite"));
        }
        Ok(())
    }

    /// One-sided reach of the widest kernel, in pixels.
    pub fn support_radius(&self) -> usize {
        math::ceil(4.0 * self.sigma_s(self.iterations.max(1))) as usize
    }

    pub fn apply(&self, image: &Image) -> Result<Image> {
        self.validate()?;
        let need = self.support_radius();
        if image.width < need || image.height < need {
            return Err(invalid(
                "image",
                format!(
                    "{}x{} is smaller than the filter reach of {need} pixels",
                    image.width, image.height
                ),
            ));
        }
        let mut f = image.clone();
        for t in 1..=self.iterations {
            let center = blur(&f, self.sigma_c);
            let surround = blur(&f, self.sigma_s(t));
            for ((o, c), s) in f.data.iter_mut().zip(&center.data).zip(&surround.data) {
                *o = c - self.w_s * s;
            }
        }
        Ok(f)
    }
}

/// Features per cell: mean, mean gradient magnitude, 4-bin orientation histogram.
pub const CELL_FEATURES: usize = 6;

/// Per-patch statistics on a 2x2 grid of cells, one feature vector per patch
/// (`4 * CELL_FEATURES` entries), patches in row-major order.
pub fn patch_features(image: &Image, patch: usize) -> Result<Vec<Vec<f64>>> {
    if patch < 2 || patch % 2 != 0 {
        return Err(invalid("patch", "must be an even size of at least 2"));
    }
    if image.width < patch || image.height < patch {
        return Err(invalid("patch", "larger than the image"));
    }
    let (w, h) = (image.width, image.height);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            gx[y * w + x] = 0.5 * (image.clamped(xi + 1, yi) - image.clamped(xi - 1, yi));
            gy[y * w + x] = 0.5 * (image.clamped(xi, yi + 1) - image.clamped(xi, yi - 1));
        }
    }
    let cell = patch / 2;
    let mut out = Vec::new();
    for py in 0..h / patch {
        for px in 0..w / patch {
            let mut feats = Vec::with_capacity(4 * CELL_FEATURES);
            for cy in 0..2 {
                for cx in 0..2 {
                    let x0 = px * patch + cx * cell;
                    let y0 = py * patch + cy * cell;
                    let mut stats = [0.0; CELL_FEATURES];
                    for y in y0..y0 + cell {
                        for x in x0..x0 + cell {
                            let i = y * w + x;
                            let mag = math::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
                            stats[0] += image.data[i];
                            stats[1] += mag;
                            let mut angle = math::atan2(gy[i], gx[i]);
                            if angle < 0.0 {
                                angle += core::f64::consts::PI;
                            }
                            let bin = ((angle / core::f64::consts::PI * 4.0) as usize).min(3);
                            stats[2 + bin] += mag;
                        }
                    }
                    let n = (cell * cell) as f64;
                    feats.extend(stats.iter().map(|s| s / n));
                }
            }
            out.push(feats);
        }
    }
    Ok(out)
}

/// Linear projection onto the top principal directions.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PcaProjector {
    pub mean: Vec<f64>,
    /// `B` rows of length `dim`, orthonormal.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub total_variance: f64,
}

impl PcaProjector {
    /// Fits the top `b` eigenvectors of the sample covariance.
    pub fn fit(features: &[Vec<f64>], b: usize) -> Result<Self> {
        let n = features.len();
        if b == 0 {
            return Err(invalid("components", "must be positive"));
        }
        if n < b + 1 {
            return Err(Error::InsufficientData(format!(
                "PCA with {b} components needs at least {} samples, got {n}",
                b + 1
            )));
        }
        let dim = features[0].len();
        if dim < b {
            return Err(invalid(
                "components",
                format!("{b} exceeds the feature dimension {dim}"),
            ));
        }
        for f in features {
            check_dim(dim, f.len())?;
        }
        let mut mean = vec![0.0; dim];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for f in features {
            for i in 0..dim {
                let di = f[i] - mean[i];
                for j in i..dim {
                    cov[(i, j)] += di * (f[j] - mean[j]);
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = cov[(i, j)] / (n - 1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let total_variance = cov.trace();
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let tol = top * 1e-12 * dim as f64;
        let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
        if rank < b || top == 0.0 {
            return Err(Error::RankDeficient { requested: b, rank });
        }
        let mut components = Vec::with_capacity(b);
        let mut eigenvalues = Vec::with_capacity(b);
        for &i in order.iter().take(b) {
            let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let norm = crate::vector::norm(&c);
            c.iter_mut().for_each(|v| *v /= norm);
            let lead = c
                .iter()
                .copied()
                .fold(0.0_f64, |best, v| if v.abs() > best.abs() { v } else { best });
            if lead < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            components.push(c);
            eigenvalues.push(eig.eigenvalues[i]);
        }
        Ok(Self {
            mean,
            components,
            eigenvalues,
            total_variance,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.components.len()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let centered = crate::vector::sub(x, &self.mean);
        Ok(self
            .components
            .iter()
            .map(|c| crate::vector::dot(c, &centered))
            .collect())
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.rank(), coords.len())?;
        let mut x = self.mean.clone();
        for (c, a) in self.components.iter().zip(coords) {
            crate::vector::axpy(*a, c, &mut x);
        }
        Ok(x)
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|l| {
                if self.total_variance > 0.0 {
                    l / self.total_variance
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Pooling {
    #[default]
    None,
    /// Averages consecutive equal-size channel groups into `groups` outputs.
    ChannelAverage { groups: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EndpointSpec {
    /// Endpoint noise scale.
    pub b: f64,
    pub pooling: Pooling,
}

impl EndpointSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(invalid("b", "must be finite and nonnegative"));
        }
        if let Pooling::ChannelAverage { groups: 0 } = self.pooling {
            return Err(invalid("groups", "must be positive"));
        }
        Ok(())
    }
}

pub fn pool(channels: &[f64], pooling: Pooling) -> Result<Vec<f64>> {
    match pooling {
        Pooling::None => Ok(channels.to_vec()),
        Pooling::ChannelAverage { groups } => {
            if groups == 0 || channels.len() % groups != 0 {
                return Err(invalid(
                    "groups",
                    format!("{} channels do not split into {groups} equal groups", channels.len()),
                ));
            }
            let size = channels.len() / groups;
            Ok(channels
                .chunks_exact(size)
                .map(|g| g.iter().sum::<f64>() / size as f64)
                .collect())
        }
    }
}

/// `z_T = pool(P(features)) + b xi`. `rng` is only drawn from when `b > 0`.
pub fn build_endpoint(
    features: &[f64],
    projector: &PcaProjector,
    spec: &EndpointSpec,
    rng: Option<&mut BridgeRng>,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut z = pool(&projector.project(features)?, spec.pooling)?;
    if spec.b > 0.0 {
        let rng = rng.ok_or_else(|| invalid("b", "noisy endpoint without a random stream"))?;
        for v in z.iter_mut() {
            *v += spec.b * rng::standard_normal(rng);
        }
    }
    Ok(z)
}

/// Two renderings of one random scene: the first is the scene itself, the second
/// has inverted contrast, a global offset and a smooth illumination ramp.
pub fn toy_image_pair(size: usize, rng: &mut BridgeRng) -> Result<(Image, Image)> {
    if size < 8 {
        return Err(invalid("size", "toy images need at least 8x8 pixels"));
    }
    let blobs = 4;
    let params: Vec<[f64; 4]> = (0..blobs)
        .map(|_| {
            [
                rng::uniform(rng) * size as f64,
                rng::uniform(rng) * size as f64,
                1.5 + rng::uniform(rng) * size as f64 / 6.0,
                0.5 + rng::uniform(rng),
            ]
        })
        .collect();
    let offset = 2.0 * rng::uniform(rng) - 1.0;
    let ramp = 0.5 * (rng::uniform(rng) - 0.5);
    let mut a = Vec::with_capacity(size * size);
    let mut b = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let v: f64 = params
                .iter()
                .map(|[cx, cy, r, amp]| {
                    let d2 = math::powi(x as f64 - cx, 2) + math::powi(y as f64 - cy, 2);
                    amp * math::exp(-d2 / (2.0 * r * r))
                })
                .sum();
            a.push(v);
            b.push(-0.8 * v + offset + ramp * x as f64 / size as f64);
        }
    }
    Ok((Image::new(size, size, a)?, Image::new(size, size, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_unit_sum_and_support() {
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 9);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(k[4] > k[3] && (k[3] - k[5]).abs() < 1e-18);
    }

    #[test]
    fn constant_image_has_null_response() {
        let f = RetinaFilter::default();
        let r = f.apply(&Image::filled(24, 24, 3.7)).unwrap();
        assert!(r.data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn small_image_rejected() {
        assert!(RetinaFilter::default().apply(&Image::filled(8, 8, 1.0)).is_err());
        assert!(Image::new(0, 3, vec![]).is_err());
    }

    #[test]
    fn pca_sign_convention_and_orthonormality() {
        let mut rng = rng::stream(5, 0);
        let data: Vec<Vec<f64>> = (0..200).map(|_| rng::normal_vec(&mut rng, 5)).collect();
        let p = PcaProjector::fit(&data, 3).unwrap();
        for (i, a) in p.components.iter().enumerate() {
            let lead = a
                .iter()
                .copied()
                .fold(0.0_f64, |b, v| if v.abs() > b.abs() { v } else { b });
            assert!(lead >= 0.0);
            for (j, b) in p.components.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((crate::vector::dot(a, b) - expect).abs() < 1e-10);
            }
        }
        assert!(p.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn pca_errors() {
        let few = vec![vec![1.0, 2.0]; 2];
        assert!(matches!(PcaProjector::fit(&few, 2), Err(Error::InsufficientData(_))));
        let line: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
        assert_eq!(
            PcaProjector::fit(&line, 2),
            Err(Error::RankDeficient { requested: 2, rank: 1 })
        );
    }

    #[test]
    fn pooling_groups() {
        let ch: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let p = pool(&ch, Pooling::ChannelAverage { groups: 4 }).unwrap();
        assert_eq!(p, vec![1.5, 5.5, 9.5, 13.5]);
        assert!(pool(&ch, Pooling::ChannelAverage { groups: 5 }).is_err());
    }

    #[test]
    fn deterministic_endpoint() {
        let data: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64 % 7.0]).collect();
        let p = PcaProjector::fit(&data, 2).unwrap();
        let spec = EndpointSpec::default();
        let a = build_endpoint(&data[3], &p, &spec, None).unwrap();
        assert_eq!(a, p.project(&data[3]).unwrap());
        assert_eq!(a, build_endpoint(&data[3], &p, &spec, None).unwrap());
        let noisy = EndpointSpec { b: 1.0, ..spec };
        assert!(build_endpoint(&data[3], &p, &noisy, None).is_err());
    }

    #[test]
    fn patch_feature_shape() {
        let mut rng = rng::stream(1, 0);
        let (a, b) = toy_image_pair(32, &mut rng).unwrap();
        let fa = patch_features(&a, 8).unwrap();
        assert_eq!(fa.len(), 16);
        assert!(fa.iter().all(|f| f.len() == 4 * CELL_FEATURES));
        assert_eq!(patch_features(&b, 8).unwrap().len(), 16);
        assert!(patch_features(&a, 3).is_err());
    }
}
