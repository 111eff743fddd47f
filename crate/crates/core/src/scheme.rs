//! Class and region nomenclatures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names of the eight European biogeographical regions, in the canonical
/// order used everywhere in this crate (region index = position here).
pub const EUROPE_REGIONS: [&str; 8] = [
    "Alpine",
    "Atlantic",
    "Black Sea",
    "Boreal",
    "Continental",
    "Mediterranean",
    "Pannonian",
    "Steppic",
];

/// The broad 7-class land-cover nomenclature (Level-1).
pub const LEVEL1_CLASSES: [&str; 7] = [
    "Woodland/Shrubland",
    "Grassland",
    "Bare land and lichens/moss",
    "Wetlands",
    "Artificial land",
    "Water",
    "Cropland",
];

/// The 19-class crop-type nomenclature (Level-2).
pub const LEVEL2_CLASSES: [&str; 19] = [
    "Bare arable land",
    "Common wheat",
    "Durum wheat",
    "Barley",
    "Rye",
    "Oats",
    "Maize",
    "Potatoes",
    "Sugar beet",
    "Other roots crops",
    "Rape and turnip rape",
    "Other non-permanent industrial crops",
    "Dry pulses, vegetables and flowers",
    "Other fodder crops",
    "Other cereals",
    "Sunflower",
    "Soya",
    "Triticale",
    "Rice",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassScheme {
    class_names: Vec<String>,
}

impl ClassScheme {
    pub fn new(class_names: Vec<String>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::InvalidConfig(
                "a class scheme needs at least 2 classes".into(),
            ));
        }
        for (i, a) in class_names.iter().enumerate() {
            if class_names[..i].contains(a) {
                return Err(Error::InvalidConfig(format!("duplicate class name `{a}`")));
            }
        }
        Ok(Self { class_names })
    }

    pub fn level1() -> Self {
        Self {
            class_names: LEVEL1_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn level2() -> Self {
        Self {
            class_names: LEVEL2_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    #[inline]
    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionScheme {
    region_names: Vec<String>,
}

impl RegionScheme {
    pub fn new(region_names: Vec<String>) -> Result<Self> {
        if region_names.is_empty() {
            return Err(Error::InvalidConfig(
                "a region scheme needs at least 1 region".into(),
            ));
        }
        for (i, a) in region_names.iter().enumerate() {
            if region_names[..i].contains(a) {
                return Err(Error::InvalidConfig(format!("duplicate region name `{a}`")));
            }
        }
        Ok(Self { region_names })
    }

    /// The canonical eight-region European scheme; the order is fixed.
    pub fn europe() -> Self {
        Self {
            region_names: EUROPE_REGIONS.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[inline]
    pub fn num_regions(&self) -> usize {
        self.region_names.len()
    }

    #[inline]
    pub fn region_names(&self) -> &[String] {
        &self.region_names
    }

    /// Resolves a region column value: the canonical name (case-insensitive)
    /// or a bare integer index.
    pub fn parse_region(&self, text: &str) -> Option<usize> {
        let t = text.trim();
        if let Ok(idx) = t.parse::<usize>() {
            return (idx < self.num_regions()).then_some(idx);
        }
        self.region_names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(t))
    }
}
