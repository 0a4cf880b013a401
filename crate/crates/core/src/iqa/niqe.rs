//! Natural-scene-statistics quality score.
//!
//! Pipeline: grayscale, MSCN coefficients, per-patch AGGD fits of the
//! coefficients and of four neighbour products, at native and half scale.
//! A multivariate Gaussian is fitted to the features of a pristine corpus;
//! an image is scored by the Mahalanobis-type distance between that model
//! and the Gaussian of its own patches.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::filter::separable_same;
use crate::image::{gaussian_kernel, luminance, resample, ImagePlane};

pub const FEATURES_PER_SCALE: usize = 18;
pub const FEATURE_DIM: usize = 2 * FEATURES_PER_SCALE;
pub const DEFAULT_PATCH: usize = 48;
pub const MODEL_VERSION: u32 = 1;

const MSCN_C: f64 = 1.0 / 255.0;
const MSCN_RADIUS: usize = 3;
const MSCN_SIGMA: f64 = 7.0 / 6.0;
const SHARPNESS_FRACTION: f64 = 0.75;
const EIGEN_FLOOR: f64 = 1e-10;
const ALPHA_MIN: f64 = 0.2;
const ALPHA_MAX: f64 = 10.0;
const ALPHA_STEP: f64 = 1e-3;
const MIN_AGGD_SAMPLES: usize = 16;
const MIN_CORPUS: usize = 10;

/// Mean-subtracted contrast-normalized coefficients with the local
/// statistics that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct MscnField {
    pub coefficients: ImagePlane,
    pub mu: ImagePlane,
    pub sigma: ImagePlane,
}

/// `(I - mu) / (sigma + C)` with Gaussian-weighted local mean and deviation.
pub fn mscn(gray: &ImagePlane) -> Result<MscnField> {
    if gray.channels() != 1 {
        return Err(Error::shape("1 channel", format!("{} channels", gray.channels())));
    }
    let taps = gaussian_kernel(MSCN_SIGMA, MSCN_RADIUS)?;
    let mu = separable_same(gray, &taps);
    let sq = gray.map(|v| v * v);
    let mu_sq = separable_same(&sq, &taps);
    let sigma: Vec<f64> = mu
        .iter()
        .zip(&mu_sq)
        .map(|(m, s)| (s - m * m).abs().sqrt())
        .collect();
    let coeff: Vec<f32> = gray
        .data()
        .iter()
        .zip(mu.iter().zip(&sigma))
        .map(|(&v, (m, s))| ((v as f64 - m) / (s + MSCN_C)) as f32)
        .collect();
    let plane = |d: Vec<f32>| ImagePlane::new(gray.height(), gray.width(), 1, d);
    Ok(MscnField {
        coefficients: plane(coeff)?,
        mu: plane(mu.into_iter().map(|v| v as f32).collect())?,
        sigma: plane(sigma.into_iter().map(|v| v as f32).collect())?,
    })
}

/// Asymmetric generalized Gaussian fitted by moment matching.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggdParams {
    pub alpha: f64,
    /// Standard deviation of the negative half.
    pub sigma_left: f64,
    /// Standard deviation of the positive half.
    pub sigma_right: f64,
    pub mean_offset: f64,
}

impl AggdParams {
    fn scale_factor(&self) -> f64 {
        (gamma(1.0 / self.alpha) / gamma(3.0 / self.alpha)).sqrt()
    }

    pub fn beta_left(&self) -> f64 {
        self.sigma_left * self.scale_factor()
    }

    pub fn beta_right(&self) -> f64 {
        self.sigma_right * self.scale_factor()
    }
}

fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// `(alpha, rho(alpha))` with `rho = Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a))`.
fn rho_table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ((ALPHA_MAX - ALPHA_MIN) / ALPHA_STEP).round() as usize;
        (0..=n)
            .map(|i| {
                let a = ALPHA_MIN + i as f64 * ALPHA_STEP;
                let lg = |x: f64| libm::lgamma(x);
                (a, (2.0 * lg(2.0 / a) - lg(1.0 / a) - lg(3.0 / a)).exp())
            })
            .collect()
    })
}

pub fn fit_aggd(samples: &[f64]) -> Result<AggdParams> {
    if samples.len() < MIN_AGGD_SAMPLES {
        return Err(Error::DegenerateSamples(format!(
            "need at least {MIN_AGGD_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let (mut left_sq, mut left_n, mut right_sq, mut right_n) = (0.0, 0usize, 0.0, 0usize);
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    for &x in samples {
        if x < 0.0 {
            left_sq += x * x;
            left_n += 1;
        } else if x > 0.0 {
            right_sq += x * x;
            right_n += 1;
        }
        abs_sum += x.abs();
        sq_sum += x * x;
    }
    if sq_sum == 0.0 || !sq_sum.is_finite() {
        return Err(Error::DegenerateSamples("all samples are zero".into()));
    }
    let mut left = if left_n > 0 { (left_sq / left_n as f64).sqrt() } else { 0.0 };
    let mut right = if right_n > 0 { (right_sq / right_n as f64).sqrt() } else { 0.0 };
    // A one-sided sample carries no asymmetry information; mirror it.
    if left == 0.0 {
        left = right;
    }
    if right == 0.0 {
        right = left;
    }
    let n = samples.len() as f64;
    let g = left / right;
    let r_hat = (abs_sum / n).powi(2) / (sq_sum / n);
    let r_norm = r_hat * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    let alpha = rho_table()
        .iter()
        .min_by(|a, b| (a.1 - r_norm).abs().total_cmp(&(b.1 - r_norm).abs()))
        .map(|&(a, _)| a)
        .expect("non-empty table");
    let mut params = AggdParams {
        alpha,
        sigma_left: left,
        sigma_right: right,
        mean_offset: 0.0,
    };
    params.mean_offset =
        (params.beta_right() - params.beta_left()) * gamma(2.0 / alpha) / gamma(1.0 / alpha);
    Ok(params)
}

/// Neighbour offsets `(dy, dx)`: horizontal, vertical, main and anti diagonal.
const SHIFTS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

fn patch_features(coeff: &ImagePlane, y0: usize, x0: usize, size: usize) -> Result<[f64; FEATURES_PER_SCALE]> {
    let w = coeff.width();
    let d = coeff.data();
    let at = |y: usize, x: usize| d[y * w + x] as f64;
    let mut values = Vec::with_capacity(size * size);
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            values.push(at(y, x));
        }
    }
    let mut out = [0.0; FEATURES_PER_SCALE];
    let base = fit_aggd(&values)?;
    out[0] = base.alpha;
    out[1] = (base.sigma_left + base.sigma_right) / 2.0;
    for (k, &(dy, dx)) in SHIFTS.iter().enumerate() {
        let mut prods = Vec::with_capacity(size * size);
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < y0 as isize || ny >= (y0 + size) as isize || nx < x0 as isize || nx >= (x0 + size) as isize {
                    continue;
                }
                prods.push(at(y, x) * at(ny as usize, nx as usize));
            }
        }
        let p = fit_aggd(&prods)?;
        let o = 2 + 4 * k;
        out[o] = p.alpha;
        out[o + 1] = p.mean_offset;
        out[o + 2] = p.sigma_left * p.sigma_left;
        out[o + 3] = p.sigma_right * p.sigma_right;
    }
    Ok(out)
}

/// Per-patch feature vectors (length 36) of the patches passing the
/// sharpness rule. Patches tile the image from the top-left corner; the
/// half-scale features of a patch come from the same region of the
/// downsampled image.
pub fn niqe_features(img: &ImagePlane, patch: usize) -> Result<Vec<Vec<f64>>> {
    let gray = luminance(img)?;
    let (h, w) = (gray.height(), gray.width());
    if patch < 2 || h < 2 * patch || w < 2 * patch {
        return Err(Error::ImageTooSmall(format!(
            "{h}x{w} needs at least {0}x{0} for patch size {patch}",
            2 * patch
        )));
    }
    let fine = mscn(&gray)?;
    let coarse = mscn(&resample(&gray, 0.5)?)?;
    let half = patch / 2;
    let (rows, cols) = (h / patch, w / patch);
    let sigma = fine.sigma.data();
    let mut sharpness = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for y in r * patch..(r + 1) * patch {
                for x in c * patch..(c + 1) * patch {
                    acc += sigma[y * w + x] as f64;
                }
            }
            sharpness.push(acc / (patch * patch) as f64);
        }
    }
    let peak = sharpness.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::new();
    for (i, &s) in sharpness.iter().enumerate() {
        if !(s > 0.0 && s >= SHARPNESS_FRACTION * peak) {
            continue;
        }
        let (r, c) = (i / cols, i % cols);
        let mut v = Vec::with_capacity(FEATURE_DIM);
        v.extend_from_slice(&patch_features(&fine.coefficients, r * patch, c * patch, patch)?);
        v.extend_from_slice(&patch_features(&coarse.coefficients, r * half, c * half, half)?);
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::NoPatches);
    }
    Ok(out)
}

/// Mean and population covariance (`1/n`) of the rows, symmetrized.
fn gaussian_stats(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(FEATURE_DIM);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(FEATURE_DIM, FEATURE_DIM);
    for r in rows {
        let d = DVector::from_column_slice(r) - &mean;
        cov += &d * d.transpose();
    }
    cov /= n;
    let sym = (&cov + cov.transpose()) * 0.5;
    (mean, sym)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NiqeModel {
    pub version: u32,
    pub mean: Vec<f64>,
    /// Row-major `36 x 36`.
    pub covariance: Vec<f64>,
    pub patch_size: usize,
    pub images: usize,
    pub patches: usize,
}

impl NiqeModel {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(FEATURE_DIM, FEATURE_DIM, &self.covariance)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: NiqeModel = serde_json::from_str(text)?;
        if model.version != MODEL_VERSION {
            return Err(Error::InvalidArgument(format!(
                "NIQE model version {} is not supported",
                model.version
            )));
        }
        if model.mean.len() != FEATURE_DIM || model.covariance.len() != FEATURE_DIM * FEATURE_DIM {
            return Err(Error::shape(
                format!("{FEATURE_DIM} means and {} covariances", FEATURE_DIM * FEATURE_DIM),
                format!("{} and {}", model.mean.len(), model.covariance.len()),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn fit_niqe_model(pristine: &[ImagePlane], patch: usize) -> Result<NiqeModel> {
    if pristine.len() < MIN_CORPUS {
        return Err(Error::Insufficient(format!(
            "NIQE model needs at least {MIN_CORPUS} images, got {}",
            pristine.len()
        )));
    }
    let mut rows = Vec::new();
    for (i, img) in pristine.iter().enumerate() {
        match niqe_features(img, patch) {
            Ok(f) => rows.extend(f),
            Err(Error::NoPatches) => {
                return Err(Error::Insufficient(format!("image {i} yields no usable patch")))
            }
            Err(e) => return Err(e),
        }
    }
    let (mean, cov) = gaussian_stats(&rows);
    let covariance = (0..FEATURE_DIM)
        .flat_map(|r| (0..FEATURE_DIM).map(move |c| (r, c)))
        .map(|(r, c)| cov[(r, c)])
        .collect();
    Ok(NiqeModel {
        version: MODEL_VERSION,
        mean: mean.iter().copied().collect(),
        covariance,
        patch_size: patch,
        images: pristine.len(),
        patches: rows.len(),
    })
}

/// Moore-Penrose inverse of a symmetric matrix; eigenvalues at or below
/// the floor are treated as zero.
fn pinv_symmetric(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let inv = eig
        .eigenvalues
        .map(|l| if l > EIGEN_FLOOR { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Distance of the image's patch statistics from the model. Lower is better.
pub fn niqe(img: &ImagePlane, model: &NiqeModel) -> Result<f64> {
    let rows = niqe_features(img, model.patch_size)?;
    let (mean, cov) = gaussian_stats(&rows);
    let diff = DVector::from_column_slice(&model.mean) - mean;
    let pooled = (model.covariance_matrix() + cov) * 0.5;
    let q = (diff.transpose() * pinv_symmetric(pooled) * &diff)[(0, 0)];
    Ok(q.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noise(h: usize, w: usize, seed: u64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.5, 0.15).unwrap();
        ImagePlane::from_fn(h, w, 1, |_, _, _| (n.sample(&mut rng) as f32).clamp(0.0, 1.0))
    }

    #[test]
    fn constant_image_has_zero_coefficients() {
        let f = mscn(&ImagePlane::filled(12, 9, 1, 0.37)).unwrap();
        assert!(f.coefficients.data().iter().all(|&v| v.abs() < 1e-4));
    }

    #[test]
    fn affine_shift_barely_moves_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = ImagePlane::from_fn(32, 32, 1, |_, _, _| rand::Rng::gen::<f32>(&mut rng));
        let moved = img.map(|v| 0.5 * v + 0.2);
        let a = mscn(&img).unwrap();
        let b = mscn(&moved).unwrap();
        for (x, y) in a.coefficients.data().iter().zip(b.coefficients.data()) {
            assert!((x - y).abs() < 0.05, "{x} vs {y}");
        }
    }

    #[test]
    fn checkerboard_alternates() {
        let img = ImagePlane::from_fn(20, 20, 1, |y, x, _| ((x + y) % 2) as f32);
        let f = mscn(&img).unwrap();
        let mut sum = 0.0;
        let mut n = 0;
        for y in 4..16 {
            for x in 4..16 {
                let v = f.coefficients.get(y, x, 0);
                let expected_positive = (x + y) % 2 == 1;
                assert_eq!(v > 0.0, expected_positive, "({y},{x}) = {v}");
                sum += v as f64;
                n += 1;
            }
        }
        assert!((sum / n as f64).abs() < 1e-3);
    }

    #[test]
    fn rho_matches_known_values() {
        // Gaussian: rho(2) = 2/pi; Laplacian: rho(1) = 1/2.
        let rho = |a: f64| gamma(2.0 / a).powi(2) / (gamma(1.0 / a) * gamma(3.0 / a));
        assert!((rho(2.0) - 2.0 / std::f64::consts::PI).abs() < 1e-12);
        assert!((rho(1.0) - 0.5).abs() < 1e-12);
        let table = rho_table();
        assert_eq!(table.len(), 9801);
        assert!(table.windows(2).all(|w| w[1].1 > w[0].1));
    }

    #[test]
    fn degenerate_samples_are_rejected() {
        assert!(matches!(fit_aggd(&[0.0; 32]), Err(Error::DegenerateSamples(_))));
        assert!(matches!(fit_aggd(&[1.0; 4]), Err(Error::DegenerateSamples(_))));
    }

    #[test]
    fn constant_image_has_no_patches() {
        let img = ImagePlane::filled(64, 64, 1, 0.5);
        assert!(matches!(niqe_features(&img, 16), Err(Error::NoPatches)));
        assert!(matches!(niqe_features(&img, 48), Err(Error::ImageTooSmall(_))));
    }

    #[test]
    fn white_noise_keeps_every_patch() {
        let img = noise(96, 96, 3);
        let f = niqe_features(&img, 16).unwrap();
        assert_eq!(f.len(), 36);
        assert!(f.iter().all(|v| v.len() == FEATURE_DIM));
    }

    #[test]
    fn model_json_round_trip() {
        let corpus: Vec<_> = (0..10).map(|s| noise(32, 32, s)).collect();
        let m = fit_niqe_model(&corpus, 16).unwrap();
        let back = NiqeModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(fit_niqe_model(&corpus[..9], 16).is_err());
    }
}
