use hazelight::fixtures::scene;
use hazelight::image::ImagePlane;
use hazelight::iqa::{fit_aggd, fit_niqe_model, niqe, niqe_features, FEATURE_DIM};
use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

fn gaussian(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, sigma).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

fn laplacian(n: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = Exp::new(1.0 / scale).unwrap();
    // Difference of two exponentials is Laplacian.
    (0..n).map(|_| e.sample(&mut rng) - e.sample(&mut rng)).collect()
}

#[test]
fn aggd_recovers_gaussian() {
    let p = fit_aggd(&gaussian(100_000, 1.0, 1)).unwrap();
    assert!((1.85..=2.15).contains(&p.alpha), "{p:?}");
    let ratio = p.sigma_left / p.sigma_right;
    assert!((0.95..=1.05).contains(&ratio), "{p:?}");
    assert!((p.sigma_left - 1.0).abs() < 0.02 && (p.sigma_right - 1.0).abs() < 0.02);
}

#[test]
fn aggd_recovers_laplacian() {
    let p = fit_aggd(&laplacian(100_000, 0.7, 2)).unwrap();
    assert!((0.9..=1.1).contains(&p.alpha), "{p:?}");
}

#[test]
fn aggd_is_scale_equivariant() {
    let base = gaussian(20_000, 0.3, 3);
    let p = fit_aggd(&base).unwrap();
    for k in [0.01, 0.5, 3.0, 250.0] {
        let scaled: Vec<f64> = base.iter().map(|v| v * k).collect();
        let q = fit_aggd(&scaled).unwrap();
        assert!((q.alpha - p.alpha).abs() <= 1e-3 + 1e-12, "k={k}: {} vs {}", q.alpha, p.alpha);
        assert!((q.sigma_left / (k * p.sigma_left) - 1.0).abs() < 0.02);
        assert!((q.sigma_right / (k * p.sigma_right) - 1.0).abs() < 0.02);
    }
}

#[test]
fn aggd_sees_asymmetry() {
    let mut samples = gaussian(50_000, 1.0, 4);
    samples.iter_mut().filter(|v| **v > 0.0).for_each(|v| *v *= 2.0);
    let p = fit_aggd(&samples).unwrap();
    assert!((p.sigma_right / p.sigma_left - 2.0).abs() < 0.05, "{p:?}");
    assert!(p.beta_right() > p.beta_left());
}

fn corpus(n: usize, size: usize, base_seed: u64) -> Vec<ImagePlane> {
    (0..n).map(|i| scene(size, size, base_seed + i as u64)).collect()
}

#[test]
fn model_is_order_and_duplication_invariant() {
    let images = corpus(10, 64, 40);
    let model = fit_niqe_model(&images, 16).unwrap();

    let mut reversed = images.clone();
    reversed.reverse();
    let r = fit_niqe_model(&reversed, 16).unwrap();
    for (a, b) in model.mean.iter().zip(&r.mean) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in model.covariance.iter().zip(&r.covariance) {
        assert!((a - b).abs() < 1e-9);
    }

    let doubled: Vec<ImagePlane> = images.iter().chain(&images).cloned().collect();
    let d = fit_niqe_model(&doubled, 16).unwrap();
    assert_eq!(d.patches, 2 * model.patches);
    for (a, b) in model.mean.iter().zip(&d.mean) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in model.covariance.iter().zip(&d.covariance) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn covariance_is_symmetric_psd() {
    let model = fit_niqe_model(&corpus(12, 64, 60), 16).unwrap();
    let m = model.covariance_matrix();
    assert_eq!(m.nrows(), FEATURE_DIM);
    for r in 0..FEATURE_DIM {
        for c in 0..FEATURE_DIM {
            assert_eq!(m[(r, c)], m[(c, r)]);
        }
    }
    let min = SymmetricEigen::new(m).eigenvalues.min();
    assert!(min >= -1e-8, "{min}");
}

#[test]
fn features_have_fixed_width() {
    for f in niqe_features(&scene(64, 80, 3), 16).unwrap() {
        assert_eq!(f.len(), FEATURE_DIM);
        assert!(f.iter().all(|v| v.is_finite()));
    }
    assert!(niqe_features(&scene(30, 64, 3), 16).is_err());
}

#[test]
fn in_corpus_image_scores_low() {
    let images = corpus(12, 64, 80);
    let model = fit_niqe_model(&images, 16).unwrap();
    let mut loo: Vec<f64> = (0..images.len())
        .map(|i| {
            let rest: Vec<ImagePlane> = images
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, im)| im.clone())
                .collect();
            niqe(&images[i], &fit_niqe_model(&rest, 16).unwrap()).unwrap()
        })
        .collect();
    loo.sort_by(f64::total_cmp);
    let p90 = loo[(0.9 * (loo.len() - 1) as f64).round() as usize];
    for img in &images[..3] {
        let s = niqe(img, &model).unwrap();
        assert!(s >= 0.0 && s < p90, "{s} vs {p90}");
    }
}
