use std::fmt::Write as _;

use super::ImagePlane;
use crate::error::{Error, Result};

/// Per-channel intensity histogram.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    bins: usize,
    /// `counts[channel][bin]`
    counts: Vec<Vec<f64>>,
    normalized: bool,
}

impl Histogram {
    pub fn from_counts(counts: Vec<Vec<f64>>, normalized: bool) -> Result<Self> {
        let bins = counts.first().map_or(0, Vec::len);
        if bins == 0 || counts.iter().any(|c| c.len() != bins) {
            return Err(Error::InvalidArgument("ragged or empty histogram".into()));
        }
        Ok(Self {
            bins,
            counts,
            normalized,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self, channel: usize) -> &[f64] {
        &self.counts[channel]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Scales every channel to unit mass.
    pub fn normalized(&self) -> Histogram {
        let counts = self
            .counts
            .iter()
            .map(|ch| {
                let total: f64 = ch.iter().sum();
                if total > 0.0 {
                    ch.iter().map(|v| v / total).collect()
                } else {
                    ch.clone()
                }
            })
            .collect();
        Histogram {
            bins: self.bins,
            counts,
            normalized: true,
        }
    }

    /// Elementwise mean of histograms with identical layout.
    pub fn average(items: &[Histogram]) -> Result<Histogram> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("no histograms to average".into()))?;
        let mut counts = vec![vec![0.0; first.bins]; first.channels()];
        for h in items {
            if h.bins != first.bins || h.channels() != first.channels() {
                return Err(Error::shape(
                    format!("{} bins x {} channels", first.bins, first.channels()),
                    format!("{} bins x {} channels", h.bins, h.channels()),
                ));
            }
            for (acc, ch) in counts.iter_mut().zip(&h.counts) {
                for (a, v) in acc.iter_mut().zip(ch) {
                    *a += v;
                }
            }
        }
        let n = items.len() as f64;
        counts.iter_mut().flatten().for_each(|v| *v /= n);
        Ok(Histogram {
            bins: first.bins,
            counts,
            normalized: items.iter().all(|h| h.normalized),
        })
    }

    /// All channels concatenated, channel-major.
    pub fn flattened(&self) -> Vec<f64> {
        self.counts.iter().flatten().copied().collect()
    }

    /// Pearson correlation of the flattened histograms.
    pub fn correlation(&self, other: &Histogram) -> Result<f64> {
        if self.bins != other.bins || self.channels() != other.channels() {
            return Err(Error::shape(
                format!("{} bins x {} channels", self.bins, self.channels()),
                format!("{} bins x {} channels", other.bins, other.channels()),
            ));
        }
        pearson(&self.flattened(), &other.flattened())
    }

    /// `bin,channel,count` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,channel,count\n");
        for bin in 0..self.bins {
            for (c, ch) in self.counts.iter().enumerate() {
                let _ = writeln!(out, "{bin},{c},{}", ch[bin]);
            }
        }
        out
    }
}

/// Sample Pearson correlation. Errors on length mismatch, fewer than two
/// values or a constant input.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least two values".into()));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateSamples("correlation of a constant sequence".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Counts values into `bins` equal-width bins; `v` lands in
/// `min(floor(v * bins), bins - 1)`.
pub fn histogram(img: &ImagePlane, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let ch = img.channels();
    let mut counts = vec![vec![0.0f64; bins]; ch];
    for (i, &v) in img.data().iter().enumerate() {
        let scaled = (v.clamp(0.0, 1.0) as f64 * bins as f64).floor() as usize;
        counts[i % ch][scaled.min(bins - 1)] += 1.0;
    }
    Ok(Histogram {
        bins,
        counts,
        normalized: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_image_fills_first_bin() {
        let h = histogram(&ImagePlane::filled(4, 4, 3, 0.0), 256).unwrap();
        for c in 0..3 {
            assert_eq!(h.counts(c)[0], 16.0);
            assert_eq!(h.counts(c).iter().sum::<f64>(), 16.0);
        }
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 4.0, 8.0];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|v| 3.0 - 2.0 * v).collect();
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        // Hand-computed: x = 1..4, y = [2, 1, 4, 3] gives r = 0.6.
        assert!((pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap() - 0.6).abs() < 1e-15);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn one_lands_in_last_bin() {
        let h = histogram(&ImagePlane::filled(1, 1, 1, 1.0), 256).unwrap();
        assert_eq!(h.counts(0)[255], 1.0);
    }

    #[test]
    fn floor_rule_two_bins() {
        let img = ImagePlane::new(1, 3, 1, vec![0.0, 0.5, 0.999]).unwrap();
        assert_eq!(histogram(&img, 2).unwrap().counts(0), &[1.0, 2.0]);
    }

    #[test]
    fn normalized_sums_to_one() {
        let img = ImagePlane::from_fn(7, 5, 3, |y, x, c| ((y * 5 + x + c) % 13) as f32 / 12.0);
        let h = histogram(&img, 16).unwrap().normalized();
        for c in 0..3 {
            assert!((h.counts(c).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(h.is_normalized());
        let csv = h.to_csv();
        assert!(csv.starts_with("bin,channel,count\n"));
        assert_eq!(csv.lines().count(), 1 + 16 * 3);
    }
}
