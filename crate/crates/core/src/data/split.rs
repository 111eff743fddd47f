//! Split planning for the two evaluation protocols: a seeded random
//! train/test split spanning all regions, and leave-one-region-out folds.
//! Plans serialize to JSON with explicit index arrays so experiments replay
//! exactly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Extrap,
    Loro,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub name: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// FNV-1a hash of the canonical JSON form, for report provenance.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(format!("{:016x}", crate::fnv1a64(json.as_bytes())))
    }
}

/// Seeded uniform random split: the first `ratio` of a shuffled permutation
/// trains, the rest tests. Needs at least 4 samples.
pub fn split_extrap(ds: &Dataset, ratio: f64, seed: u64) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&ratio) || ratio == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let n = ds.len();
    if n < 4 {
        return Err(Error::DatasetFormat(format!(
            "extrapolation split needs >= 4 samples, got {n}"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let cut = (ratio * n as f64).floor() as usize;
    let (train, test) = indices.split_at(cut);
    Ok(SplitPlan {
        kind: SplitKind::Extrap,
        seed,
        folds: vec![Fold {
            name: "extrap".into(),
            train: train.to_vec(),
            test: test.to_vec(),
        }],
    })
}

/// Class-stratified variant: the ratio is applied within every class before
/// the remainders are pooled. Reduces metric variance on small datasets.
pub fn split_extrap_stratified(ds: &Dataset, ratio: f64, seed: u64) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&ratio) || ratio == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    if ds.len() < 4 {
        return Err(Error::DatasetFormat(format!(
            "extrapolation split needs >= 4 samples, got {}",
            ds.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.class_scheme().num_classes()];
    for (i, s) in ds.samples().iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut class_indices in by_class {
        class_indices.shuffle(&mut rng);
        let cut = (ratio * class_indices.len() as f64).floor() as usize;
        train.extend_from_slice(&class_indices[..cut]);
        test.extend_from_slice(&class_indices[cut..]);
    }
    Ok(SplitPlan {
        kind: SplitKind::Extrap,
        seed,
        folds: vec![Fold {
            name: "extrap".into(),
            train,
            test,
        }],
    })
}

/// One fold per region present in the dataset, in canonical region order:
/// the region's samples test, everything else trains. Regions with no
/// samples are skipped (reported in the returned warnings). A dataset with a
/// single distinct region has no trainable fold and is an error.
pub fn split_loro(ds: &Dataset) -> Result<(SplitPlan, Vec<String>)> {
    let present = ds.regions_present();
    if present.len() < 2 {
        return Err(Error::DatasetFormat(
            "leave-one-region-out needs samples from at least 2 regions".into(),
        ));
    }
    let mut warnings = Vec::new();
    for (r, name) in ds.region_scheme().region_names().iter().enumerate() {
        if !present.contains(&r) {
            warnings.push(format!("region `{name}` has no samples; fold skipped"));
        }
    }
    let folds = present
        .iter()
        .map(|&r| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (i, s) in ds.samples().iter().enumerate() {
                if s.region == r {
                    test.push(i);
                } else {
                    train.push(i);
                }
            }
            Fold {
                name: ds.region_scheme().region_names()[r].clone(),
                train,
                test,
            }
        })
        .collect();
    Ok((
        SplitPlan {
            kind: SplitKind::Loro,
            seed: 0,
            folds,
        },
        warnings,
    ))
}
