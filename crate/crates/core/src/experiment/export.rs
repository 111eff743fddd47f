//! Per-sample vector exports (infer mode) and the PCA -> RGB visualization
//! of the positional representations.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{BridgeModel, EmbeddingKind};
use crate::pca::pca_rgb;

/// An embedding export: the CSV text plus the raw vectors (row per sample).
#[derive(Debug, Clone)]
pub struct EmbeddingExport {
    pub csv: String,
    pub vectors: Matrix,
}

/// Extracts one vector per sample (`id,lat,lon,region,label,v0,...`) using
/// the deterministic infer-mode forward.
pub fn export_embeddings(
    model: &BridgeModel,
    ds: &Dataset,
    kind: EmbeddingKind,
) -> Result<EmbeddingExport> {
    if ds.is_empty() {
        return Err(Error::InvalidConfig(
            "cannot export an empty dataset".into(),
        ));
    }
    if ds.feature_count() != model.config().feature_count {
        return Err(Error::ShapeMismatch {
            context: "export_embeddings",
            expected: format!("{} features", model.config().feature_count),
            actual: format!("{} features", ds.feature_count()),
        });
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(ds.len());
    for s in ds.samples() {
        rows.push(model.embed(&s.features, s.coordinate()?, kind)?);
    }
    let vectors = Matrix::from_rows(&rows)?;

    let mut csv = String::from("id,lat,lon,region,label");
    for v in 0..vectors.cols() {
        let _ = write!(csv, ",v{v}");
    }
    csv.push('\n');
    for (s, row) in ds.samples().iter().zip(0..vectors.rows()) {
        let _ = write!(
            csv,
            "{},{},{},{},{}",
            s.id, s.lat_deg, s.lon_deg, s.region, s.label
        );
        for v in vectors.row(row) {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    Ok(EmbeddingExport { csv, vectors })
}

/// Positional-representation RGB export: top-3 principal components of the
/// positional vectors, min-max scaled to [0, 1], one
/// `id,lat,lon,region,label,r,g,b` row per sample. Returns the CSV and the
/// number of padded (rank-deficient) channels.
pub fn export_positional_rgb(model: &BridgeModel, ds: &Dataset) -> Result<(String, usize)> {
    let positional = export_embeddings(model, ds, EmbeddingKind::Positional)?;
    let out = pca_rgb(&positional.vectors)?;
    let mut csv = String::from("id,lat,lon,region,label,r,g,b\n");
    for (s, px) in ds.samples().iter().zip(&out.rgb) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            s.id, s.lat_deg, s.lon_deg, s.region, s.label, px[0], px[1], px[2]
        );
    }
    Ok((csv, out.padded_channels))
}
