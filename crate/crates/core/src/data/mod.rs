//! Dataset schema, CSV ingestion, standardization statistics, split
//! planning and the synthetic region-shift generator.
//!
//! CSV layout: header `id,lat,lon,region,label,f0,...,f{F-1}`, UTF-8, dot
//! decimal separators, no quoting (ids must not contain commas). The region
//! column accepts the canonical region name (case-insensitive) or a bare
//! integer index.

mod split;
mod synth;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::FeatureStats;
use crate::posenc::GeoCoordinate;
use crate::scheme::{ClassScheme, RegionScheme};

pub use split::{split_extrap, split_extrap_stratified, split_loro, Fold, SplitKind, SplitPlan};
pub use synth::{generate_synthetic, nearest_class_mean_accuracy, SynthSpec};

/// One labelled observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub region: usize,
    pub label: usize,
    pub features: Vec<f64>,
}

impl Sample {
    pub fn coordinate(&self) -> Result<GeoCoordinate> {
        GeoCoordinate::new(self.lat_deg, self.lon_deg)
    }
}

/// A validated collection of samples with uniform feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    feature_count: usize,
    class_scheme: ClassScheme,
    region_scheme: RegionScheme,
}

impl Dataset {
    pub fn new(
        samples: Vec<Sample>,
        feature_count: usize,
        class_scheme: ClassScheme,
        region_scheme: RegionScheme,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::DatasetFormat("dataset has no samples".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != feature_count {
                return Err(Error::DatasetFormat(format!(
                    "sample {i} has {} features, expected {feature_count}",
                    s.features.len()
                )));
            }
            if s.label >= class_scheme.num_classes() {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    num_classes: class_scheme.num_classes(),
                });
            }
            if s.region >= region_scheme.num_regions() {
                return Err(Error::RegionOutOfRange {
                    region: s.region,
                    num_regions: region_scheme.num_regions(),
                });
            }
            if !s.features.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("features of sample {i}"),
                });
            }
            s.coordinate()?;
        }
        Ok(Self {
            samples,
            feature_count,
            class_scheme,
            region_scheme,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    #[inline]
    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    #[inline]
    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn class_scheme(&self) -> &ClassScheme {
        &self.class_scheme
    }

    pub fn region_scheme(&self) -> &RegionScheme {
        &self.region_scheme
    }

    /// A new dataset holding the rows at `indices` (in that order).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples.get(i).cloned().ok_or_else(|| {
                    Error::DatasetFormat(format!("index {i} out of range ({})", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(
            samples,
            self.feature_count,
            self.class_scheme.clone(),
            self.region_scheme.clone(),
        )
    }

    /// Distinct regions present, ascending.
    pub fn regions_present(&self) -> Vec<usize> {
        let mut present = vec![false; self.region_scheme.num_regions()];
        for s in &self.samples {
            present[s.region] = true;
        }
        present
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| p.then_some(i))
            .collect()
    }

    /// Serializes to the canonical CSV layout with round-trip-exact floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("id,lat,lon,region,label");
        for f in 0..self.feature_count {
            let _ = write!(out, ",f{f}");
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                s.id, s.lat_deg, s.lon_deg, s.region, s.label
            );
            for v in &s.features {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn data_err(line: usize, message: impl Into<String>) -> Error {
    Error::Dataset {
        line,
        message: message.into(),
    }
}

fn parse_float(text: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| data_err(line, format!("cannot parse {what} `{text}`")))?;
    Ok(v)
}

/// Parses the canonical CSV layout. Every failure names the 1-based line.
pub fn parse_dataset_csv(
    text: &str,
    class_scheme: &ClassScheme,
    region_scheme: &RegionScheme,
) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| data_err(1, "empty file, expected a header"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() < 6 {
        return Err(data_err(
            1,
            format!(
                "header must be id,lat,lon,region,label,f0,... ({} columns found)",
                columns.len()
            ),
        ));
    }
    let fixed = ["id", "lat", "lon", "region", "label"];
    for (i, expect) in fixed.iter().enumerate() {
        if !columns[i].eq_ignore_ascii_case(expect) {
            return Err(data_err(
                1,
                format!("missing column `{expect}` (found `{}`)", columns[i]),
            ));
        }
    }
    let feature_count = columns.len() - fixed.len();
    for (i, col) in columns[fixed.len()..].iter().enumerate() {
        let expect = format!("f{i}");
        if !col.eq_ignore_ascii_case(&expect) {
            return Err(data_err(
                1,
                format!("expected feature column `{expect}`, found `{col}`"),
            ));
        }
    }

    let mut samples = Vec::new();
    for (idx, row) in lines {
        let line = idx + 1;
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != columns.len() {
            return Err(data_err(
                line,
                format!(
                    "ragged row: {} fields, expected {}",
                    fields.len(),
                    columns.len()
                ),
            ));
        }
        let id = fields[0].trim().to_string();
        let lat = parse_float(fields[1], line, "latitude")?;
        let lon = parse_float(fields[2], line, "longitude")?;
        GeoCoordinate::new(lat, lon)
            .map_err(|_| data_err(line, format!("coordinate out of range ({lat}, {lon})")))?;
        let region = region_scheme
            .parse_region(fields[3])
            .ok_or_else(|| data_err(line, format!("unknown region `{}`", fields[3].trim())))?;
        let label: usize = fields[4]
            .trim()
            .parse()
            .map_err(|_| data_err(line, format!("cannot parse label `{}`", fields[4].trim())))?;
        if label >= class_scheme.num_classes() {
            return Err(data_err(
                line,
                format!(
                    "label {label} out of range for {} classes",
                    class_scheme.num_classes()
                ),
            ));
        }
        let mut features = Vec::with_capacity(feature_count);
        for (i, field) in fields[fixed.len()..].iter().enumerate() {
            let v = parse_float(field, line, &format!("feature f{i}"))?;
            if !v.is_finite() {
                return Err(data_err(line, format!("non-finite feature f{i}")));
            }
            features.push(v);
        }
        samples.push(Sample {
            id,
            lat_deg: lat,
            lon_deg: lon,
            region,
            label,
            features,
        });
    }
    Dataset::new(
        samples,
        feature_count,
        class_scheme.clone(),
        region_scheme.clone(),
    )
}

/// Loads and validates a dataset CSV from disk.
pub fn load_dataset(
    path: &Path,
    class_scheme: &ClassScheme,
    region_scheme: &RegionScheme,
) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset_csv(&text, class_scheme, region_scheme)
}

/// Per-feature mean and population standard deviation of a training split,
/// with a 1e-8 floor for constant features. Must see at least two samples.
pub fn compute_stats(train: &Dataset) -> Result<FeatureStats> {
    let n = train.len();
    if n < 2 {
        return Err(Error::DatasetFormat(format!(
            "standardization statistics need >= 2 samples, got {n}"
        )));
    }
    let f = train.feature_count();
    let nf = n as f64;
    let mut mean = vec![0.0; f];
    for s in train.samples() {
        for (m, v) in mean.iter_mut().zip(&s.features) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= nf;
    }
    let mut var = vec![0.0; f];
    for s in train.samples() {
        for (c, v) in s.features.iter().enumerate() {
            let d = v - mean[c];
            var[c] += d * d;
        }
    }
    let std = var.iter().map(|&v| (v / nf).sqrt().max(1e-8)).collect();
    Ok(FeatureStats { mean, std })
}
