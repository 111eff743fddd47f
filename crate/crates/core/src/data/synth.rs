//! Synthetic region-shift data for desk-scale verification.
//!
//! Features are drawn as `class_mean[label] + region_shift[region] + noise`;
//! coordinates are drawn uniformly inside per-region disjoint lat/lon boxes,
//! so geography alone identifies the region.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::scheme::{ClassScheme, RegionScheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub num_regions: usize,
    pub feature_count: usize,
    /// Samples generated per (class, region) cell.
    pub samples_per_cell: usize,
    /// `num_classes x feature_count` class means.
    pub class_means: Vec<Vec<f64>>,
    /// `num_regions x feature_count` additive region shifts.
    pub region_shifts: Vec<Vec<f64>>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Linearly separable classes (one-hot means scaled by `separation`),
    /// no region shift.
    pub fn separable(
        num_classes: usize,
        num_regions: usize,
        feature_count: usize,
        samples_per_cell: usize,
        separation: f64,
        noise_std: f64,
        seed: u64,
    ) -> Self {
        let class_means = (0..num_classes)
            .map(|c| {
                (0..feature_count)
                    .map(|f| {
                        if f == c % feature_count {
                            separation
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let region_shifts = vec![vec![0.0; feature_count]; num_regions];
        Self {
            num_classes,
            num_regions,
            feature_count,
            samples_per_cell,
            class_means,
            region_shifts,
            noise_std,
            seed,
        }
    }

    /// Region-confounded construction: class and region shifts both move
    /// feature 0 in steps of `separation`, so the cell (class c, region r)
    /// lands at `(c + r) * separation`. Cells with equal `c + r` collide;
    /// only geography (or the region label) disambiguates them. The
    /// remaining feature dimensions carry pure noise.
    pub fn region_confounded(
        num_classes: usize,
        num_regions: usize,
        feature_count: usize,
        samples_per_cell: usize,
        separation: f64,
        noise_std: f64,
        seed: u64,
    ) -> Self {
        let mut class_means = vec![vec![0.0; feature_count]; num_classes];
        for (c, mean) in class_means.iter_mut().enumerate() {
            mean[0] = c as f64 * separation;
        }
        let mut region_shifts = vec![vec![0.0; feature_count]; num_regions];
        for (r, shift) in region_shifts.iter_mut().enumerate() {
            shift[0] = r as f64 * separation;
        }
        Self {
            num_classes,
            num_regions,
            feature_count,
            samples_per_cell,
            class_means,
            region_shifts,
            noise_std,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2
            || self.num_regions < 1
            || self.feature_count < 1
            || self.samples_per_cell < 1
        {
            return Err(Error::InvalidConfig(
                "synthetic spec needs >= 2 classes, >= 1 region, >= 1 feature, >= 1 sample per cell"
                    .into(),
            ));
        }
        if self.num_regions > 8 {
            return Err(Error::InvalidConfig(
                "synthetic generator supports at most 8 regions (disjoint coordinate boxes)".into(),
            ));
        }
        if self.class_means.len() != self.num_classes
            || self.region_shifts.len() != self.num_regions
            || self
                .class_means
                .iter()
                .any(|m| m.len() != self.feature_count)
            || self
                .region_shifts
                .iter()
                .any(|s| s.len() != self.feature_count)
        {
            return Err(Error::InvalidConfig(
                "class_means / region_shifts shapes do not match the spec".into(),
            ));
        }
        let finite = self
            .class_means
            .iter()
            .chain(&self.region_shifts)
            .flatten()
            .all(|v| v.is_finite())
            && self.noise_std.is_finite()
            && self.noise_std >= 0.0;
        if !finite {
            return Err(Error::InvalidConfig(
                "synthetic spec parameters must be finite (noise_std >= 0)".into(),
            ));
        }
        Ok(())
    }

    /// Disjoint coordinate box of one region: 3 degrees of latitude and
    /// 4 degrees of longitude, separated by 1-degree gaps.
    pub fn region_box(region: usize) -> (f64, f64, f64, f64) {
        let r = region as f64;
        (
            36.0 + 4.0 * r,
            39.0 + 4.0 * r,
            -8.0 + 5.0 * r,
            -4.0 + 5.0 * r,
        )
    }
}

/// Deterministically generates the dataset described by `spec`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let class_scheme =
        ClassScheme::new((0..spec.num_classes).map(|c| format!("class{c}")).collect())?;
    let region_scheme = RegionScheme::new(
        (0..spec.num_regions)
            .map(|r| format!("region{r}"))
            .collect(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples =
        Vec::with_capacity(spec.num_classes * spec.num_regions * spec.samples_per_cell);
    let mut idx = 0usize;
    for class in 0..spec.num_classes {
        for region in 0..spec.num_regions {
            let (lat0, lat1, lon0, lon1) = SynthSpec::region_box(region);
            for _ in 0..spec.samples_per_cell {
                let features: Vec<f64> = (0..spec.feature_count)
                    .map(|f| {
                        let noise: f64 = rng.sample(StandardNormal);
                        spec.class_means[class][f]
                            + spec.region_shifts[region][f]
                            + spec.noise_std * noise
                    })
                    .collect();
                let lat = rng.gen_range(lat0..lat1);
                let lon = rng.gen_range(lon0..lon1);
                samples.push(Sample {
                    id: format!("s{idx:06}"),
                    lat_deg: lat,
                    lon_deg: lon,
                    region,
                    label: class,
                    features,
                });
                idx += 1;
            }
        }
    }
    Dataset::new(samples, spec.feature_count, class_scheme, region_scheme)
}

/// Model-independent sanity oracle: classify every sample by the nearest
/// class mean (means computed on the same dataset) and report accuracy.
pub fn nearest_class_mean_accuracy(ds: &Dataset) -> f64 {
    let c = ds.class_scheme().num_classes();
    let f = ds.feature_count();
    let mut means = vec![vec![0.0; f]; c];
    let mut counts = vec![0usize; c];
    for s in ds.samples() {
        counts[s.label] += 1;
        for (m, v) in means[s.label].iter_mut().zip(&s.features) {
            *m += v;
        }
    }
    for (mean, &count) in means.iter_mut().zip(&counts) {
        if count > 0 {
            for m in mean.iter_mut() {
                *m /= count as f64;
            }
        }
    }
    let mut correct = 0usize;
    for s in ds.samples() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, mean) in means.iter().enumerate() {
            if counts[k] == 0 {
                continue;
            }
            let d: f64 = mean
                .iter()
                .zip(&s.features)
                .map(|(m, v)| (m - v) * (m - v))
                .sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        if best == s.label {
            correct += 1;
        }
    }
    correct as f64 / ds.len() as f64
}
