use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, save_image, ImagePlane};

/// Where a sample's target came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    TrueLabel,
    /// A network response admitted by the quality gate.
    ActingLabel,
    Unlabeled,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::TrueLabel => "true-label",
            Provenance::ActingLabel => "acting-label",
            Provenance::Unlabeled => "unlabeled",
        }
    }
}

/// A low-light image with an optional target. A target is present exactly
/// when the provenance is not `Unlabeled`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    id: String,
    low: ImagePlane,
    target: Option<ImagePlane>,
    provenance: Provenance,
}

impl Sample {
    pub fn labeled(id: impl Into<String>, low: ImagePlane, target: ImagePlane) -> Result<Self> {
        Self::with_target(id.into(), low, target, Provenance::TrueLabel)
    }

    pub fn acting(id: impl Into<String>, low: ImagePlane, target: ImagePlane) -> Result<Self> {
        Self::with_target(id.into(), low, target, Provenance::ActingLabel)
    }

    pub fn unlabeled(id: impl Into<String>, low: ImagePlane) -> Self {
        Self {
            id: id.into(),
            low,
            target: None,
            provenance: Provenance::Unlabeled,
        }
    }

    fn with_target(id: String, low: ImagePlane, target: ImagePlane, provenance: Provenance) -> Result<Self> {
        low.ensure_same_shape(&target)?;
        Ok(Self {
            id,
            low,
            target: Some(target),
            provenance,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn low(&self) -> &ImagePlane {
        &self.low
    }

    pub fn target(&self) -> Option<&ImagePlane> {
        self.target.as_ref()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// The same low-light image with its target dropped.
    pub fn without_target(&self) -> Sample {
        Sample::unlabeled(self.id.clone(), self.low.clone())
    }

    fn map_images(&self, f: impl Fn(&ImagePlane) -> ImagePlane) -> Sample {
        Sample {
            id: self.id.clone(),
            low: f(&self.low),
            target: self.target.as_ref().map(&f),
            provenance: self.provenance,
        }
    }
}

/// Result of [`load_dataset`]: the samples plus one message per rejected
/// or ignored file.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub samples: Vec<Sample>,
    pub diagnostics: Vec<String>,
}

fn png_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Reads `dir/low/*.png` and pairs each file with `dir/high/<same name>`
/// when present. Samples are ordered by file name; ids are file stems.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<LoadedDataset> {
    let dir = dir.as_ref();
    let low_dir = dir.join("low");
    if !low_dir.is_dir() {
        return Err(Error::Dataset(format!("{} has no low/ directory", dir.display())));
    }
    let lows = png_files(&low_dir)?;
    if lows.is_empty() {
        return Err(Error::Dataset(format!("no PNG images in {}", low_dir.display())));
    }
    let high_dir = dir.join("high");
    let highs = if high_dir.is_dir() {
        png_files(&high_dir)?
    } else {
        BTreeMap::new()
    };

    let mut samples = Vec::with_capacity(lows.len());
    let mut diagnostics = Vec::new();
    for name in highs.keys().filter(|n| !lows.contains_key(*n)) {
        diagnostics.push(format!("high/{name} has no low/ counterpart; ignored"));
    }
    for (name, path) in &lows {
        let id = Path::new(name)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(name)
            .to_string();
        let low = load_image(path)?;
        match highs.get(name) {
            None => samples.push(Sample::unlabeled(id, low)),
            Some(hp) => {
                let high = load_image(hp)?;
                if !low.same_shape(&high) {
                    diagnostics.push(format!(
                        "pair {name} rejected: low is {}, high is {}",
                        low.shape_string(),
                        high.shape_string()
                    ));
                    continue;
                }
                samples.push(Sample::labeled(id, low, high)?);
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Dataset(format!(
            "no usable samples in {}: {}",
            dir.display(),
            diagnostics.join("; ")
        )));
    }
    Ok(LoadedDataset { samples, diagnostics })
}

/// Writes samples in the layout read by [`load_dataset`].
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let dir = dir.as_ref();
    for s in samples {
        save_image(&s.low, dir.join("low").join(format!("{}.png", s.id)))?;
        if let Some(t) = &s.target {
            save_image(t, dir.join("high").join(format!("{}.png", s.id)))?;
        }
    }
    Ok(())
}

/// `clamp(bright^gamma + noise)` with Gaussian noise of standard deviation
/// `noise_sigma`, deterministic per seed.
pub fn synth_lowlight(bright: &ImagePlane, gamma: f64, noise_sigma: f64, seed: u64) -> Result<ImagePlane> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be >= 1, got {gamma}")));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("checked sigma");
    Ok(ImagePlane::from_fn(bright.height(), bright.width(), bright.channels(), |y, x, c| {
        let base = (bright.get(y, x, c).max(0.0) as f64).powf(gamma);
        let n = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        (base + n).clamp(0.0, 1.0) as f32
    }))
}

/// The six geometric augmentations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Augmentation {
    Identity,
    FlipHorizontal,
    FlipVertical,
    Rotate90,
    Rotate180,
    Rotate270,
}

impl Augmentation {
    pub const ALL: [Augmentation; 6] = [
        Augmentation::Identity,
        Augmentation::FlipHorizontal,
        Augmentation::FlipVertical,
        Augmentation::Rotate90,
        Augmentation::Rotate180,
        Augmentation::Rotate270,
    ];

    pub fn from_seed(seed: u64) -> Self {
        Self::ALL[ChaCha8Rng::seed_from_u64(seed).gen_range(0..Self::ALL.len())]
    }

    pub fn apply(&self, img: &ImagePlane) -> ImagePlane {
        match self {
            Augmentation::Identity => img.clone(),
            Augmentation::FlipHorizontal => img.flip_horizontal(),
            Augmentation::FlipVertical => img.flip_vertical(),
            Augmentation::Rotate90 => img.rotate90(1),
            Augmentation::Rotate180 => img.rotate90(2),
            Augmentation::Rotate270 => img.rotate90(3),
        }
    }
}

/// Applies the augmentation selected by `seed` to the low image and the
/// target alike.
pub fn augment(sample: &Sample, seed: u64) -> Sample {
    augment_with(sample, Augmentation::from_seed(seed))
}

pub fn augment_with(sample: &Sample, aug: Augmentation) -> Sample {
    sample.map_images(|img| aug.apply(img))
}

/// Splits off `round(fraction * n)` validation samples chosen by `seed`,
/// leaving at least one training sample. Both halves keep input order.
pub fn split_validation(samples: &[Sample], fraction: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let n = samples.len();
    let n_val = ((fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::seeds::rng(seed, "validation", 0);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (s, v) in samples.iter().zip(is_val) {
        if v {
            val.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    (train, val)
}
