//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! [0..8)    magic  b"BRGCKPT\0"
//! [8..12)   format version (u32)
//! [12..20)  body length (u64) = file length minus the trailing checksum
//! [20..28)  metadata JSON length (u64)
//! ...       metadata JSON (config, schemes, feature statistics)
//! ...       block count (u32)
//! ...       blocks: name_len (u16), name, rows (u64), cols (u64), f64 data
//! end-8     FNV-1a 64 checksum of everything before it (u64)
//! ```
//!
//! Blocks cover every parameter *and* the batch-norm running statistics, so a
//! round trip reproduces inference bit-exactly. The checksum is verified
//! before anything else is parsed.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BridgeModel, FeatureStats, ModelConfig};
use crate::error::{Error, Result};
use crate::fnv1a64;
use crate::scheme::{ClassScheme, RegionScheme};

const MAGIC: &[u8; 8] = b"BRGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    class_scheme: ClassScheme,
    region_scheme: RegionScheme,
    feature_stats: FeatureStats,
}

/// Every stored block: trainable parameters plus running statistics.
fn state_refs(model: &BridgeModel) -> Vec<(String, usize, usize, &[f64])> {
    let mut blocks: Vec<(String, usize, usize, &[f64])> = Vec::new();
    if let Some(pe) = &model.pe_head {
        blocks.push((
            "pe.dense1.w".into(),
            pe.dense1.weights.rows(),
            pe.dense1.weights.cols(),
            pe.dense1.weights.data(),
        ));
        blocks.push((
            "pe.dense1.b".into(),
            1,
            pe.dense1.bias.len(),
            &pe.dense1.bias,
        ));
        blocks.push(("pe.bn1.gamma".into(), 1, pe.bn1.gamma.len(), &pe.bn1.gamma));
        blocks.push(("pe.bn1.beta".into(), 1, pe.bn1.beta.len(), &pe.bn1.beta));
        blocks.push((
            "pe.bn1.running_mean".into(),
            1,
            pe.bn1.running_mean.len(),
            &pe.bn1.running_mean,
        ));
        blocks.push((
            "pe.bn1.running_var".into(),
            1,
            pe.bn1.running_var.len(),
            &pe.bn1.running_var,
        ));
        blocks.push((
            "pe.dense2.w".into(),
            pe.dense2.weights.rows(),
            pe.dense2.weights.cols(),
            pe.dense2.weights.data(),
        ));
        blocks.push((
            "pe.dense2.b".into(),
            1,
            pe.dense2.bias.len(),
            &pe.dense2.bias,
        ));
    }
    for (prefix, enc) in [
        ("inv", Some(&model.enc_inv)),
        ("spec", model.enc_spec.as_ref()),
    ] {
        let Some(enc) = enc else { continue };
        for l in 0..enc.layers.len() {
            let w = &enc.layers[l].weights;
            blocks.push((format!("{prefix}.l{l}.w"), w.rows(), w.cols(), w.data()));
            blocks.push((
                format!("{prefix}.l{l}.b"),
                1,
                enc.layers[l].bias.len(),
                &enc.layers[l].bias,
            ));
            let bn = &enc.norms[l];
            blocks.push((
                format!("{prefix}.bn{l}.gamma"),
                1,
                bn.gamma.len(),
                &bn.gamma,
            ));
            blocks.push((format!("{prefix}.bn{l}.beta"), 1, bn.beta.len(), &bn.beta));
            blocks.push((
                format!("{prefix}.bn{l}.running_mean"),
                1,
                bn.running_mean.len(),
                &bn.running_mean,
            ));
            blocks.push((
                format!("{prefix}.bn{l}.running_var"),
                1,
                bn.running_var.len(),
                &bn.running_var,
            ));
        }
    }
    let w = &model.clf_lc.weights;
    blocks.push(("clf_lc.w".into(), w.rows(), w.cols(), w.data()));
    blocks.push((
        "clf_lc.b".into(),
        1,
        model.clf_lc.bias.len(),
        &model.clf_lc.bias,
    ));
    if let Some(clf) = &model.clf_region {
        blocks.push((
            "clf_region.w".into(),
            clf.weights.rows(),
            clf.weights.cols(),
            clf.weights.data(),
        ));
        blocks.push(("clf_region.b".into(), 1, clf.bias.len(), &clf.bias));
    }
    blocks
}

fn state_muts(model: &mut BridgeModel) -> Vec<(String, usize, usize, &mut [f64])> {
    let mut blocks: Vec<(String, usize, usize, &mut [f64])> = Vec::new();
    if let Some(pe) = &mut model.pe_head {
        let (r, c) = (pe.dense1.weights.rows(), pe.dense1.weights.cols());
        blocks.push(("pe.dense1.w".into(), r, c, pe.dense1.weights.data_mut()));
        let n = pe.dense1.bias.len();
        blocks.push(("pe.dense1.b".into(), 1, n, &mut pe.dense1.bias));
        let n = pe.bn1.gamma.len();
        blocks.push(("pe.bn1.gamma".into(), 1, n, &mut pe.bn1.gamma));
        let n = pe.bn1.beta.len();
        blocks.push(("pe.bn1.beta".into(), 1, n, &mut pe.bn1.beta));
        let n = pe.bn1.running_mean.len();
        blocks.push(("pe.bn1.running_mean".into(), 1, n, &mut pe.bn1.running_mean));
        let n = pe.bn1.running_var.len();
        blocks.push(("pe.bn1.running_var".into(), 1, n, &mut pe.bn1.running_var));
        let (r, c) = (pe.dense2.weights.rows(), pe.dense2.weights.cols());
        blocks.push(("pe.dense2.w".into(), r, c, pe.dense2.weights.data_mut()));
        let n = pe.dense2.bias.len();
        blocks.push(("pe.dense2.b".into(), 1, n, &mut pe.dense2.bias));
    }
    for (prefix, enc) in [
        ("inv", Some(&mut model.enc_inv)),
        ("spec", model.enc_spec.as_mut()),
    ] {
        let Some(enc) = enc else { continue };
        for (l, (layer, bn)) in enc.layers.iter_mut().zip(enc.norms.iter_mut()).enumerate() {
            let (r, c) = (layer.weights.rows(), layer.weights.cols());
            blocks.push((format!("{prefix}.l{l}.w"), r, c, layer.weights.data_mut()));
            let n = layer.bias.len();
            blocks.push((format!("{prefix}.l{l}.b"), 1, n, &mut layer.bias));
            let n = bn.gamma.len();
            blocks.push((format!("{prefix}.bn{l}.gamma"), 1, n, &mut bn.gamma));
            let n = bn.beta.len();
            blocks.push((format!("{prefix}.bn{l}.beta"), 1, n, &mut bn.beta));
            let n = bn.running_mean.len();
            blocks.push((
                format!("{prefix}.bn{l}.running_mean"),
                1,
                n,
                &mut bn.running_mean,
            ));
            let n = bn.running_var.len();
            blocks.push((
                format!("{prefix}.bn{l}.running_var"),
                1,
                n,
                &mut bn.running_var,
            ));
        }
    }
    let (r, c) = (model.clf_lc.weights.rows(), model.clf_lc.weights.cols());
    blocks.push(("clf_lc.w".into(), r, c, model.clf_lc.weights.data_mut()));
    let n = model.clf_lc.bias.len();
    blocks.push(("clf_lc.b".into(), 1, n, &mut model.clf_lc.bias));
    if let Some(clf) = &mut model.clf_region {
        let (r, c) = (clf.weights.rows(), clf.weights.cols());
        blocks.push(("clf_region.w".into(), r, c, clf.weights.data_mut()));
        let n = clf.bias.len();
        blocks.push(("clf_region.b".into(), 1, n, &mut clf.bias));
    }
    blocks
}

/// Serializes the model to `path`, writing to a temporary file first so a
/// failed save never leaves a partial checkpoint behind.
pub fn save_model(model: &BridgeModel, path: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        config: model.config.clone(),
        class_scheme: model.class_scheme.clone(),
        region_scheme: model.region_scheme.clone(),
        feature_stats: model.feature_stats.clone(),
    };
    let meta_json = serde_json::to_vec(&meta)?;
    let blocks = state_refs(model);

    let mut body = Vec::new();
    body.extend_from_slice(MAGIC);
    body.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    body.extend_from_slice(&0u64.to_le_bytes()); // body length, patched below
    body.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    body.extend_from_slice(&meta_json);
    body.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, rows, cols, data) in &blocks {
        let name_bytes = name.as_bytes();
        body.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        body.extend_from_slice(name_bytes);
        body.extend_from_slice(&(*rows as u64).to_le_bytes());
        body.extend_from_slice(&(*cols as u64).to_le_bytes());
        for v in *data {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let body_len = body.len() as u64;
    body[12..20].copy_from_slice(&body_len.to_le_bytes());
    let checksum = fnv1a64(&body);
    body.extend_from_slice(&checksum.to_le_bytes());

    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &body)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CheckpointTruncated(format!(
                "needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint; the round trip `load(save(m))` reproduces every
/// parameter, statistic and config field bit-exactly.
pub fn load_model(path: &Path) -> Result<BridgeModel> {
    let bytes = fs::read(path)?;
    // Minimum: magic + version + body length + checksum.
    if bytes.len() < 28 {
        return Err(Error::CheckpointTruncated(format!(
            "{} bytes is below the minimum header size",
            bytes.len()
        )));
    }
    let declared_body = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if declared_body + 8 != bytes.len() {
        return Err(Error::CheckpointTruncated(format!(
            "declared body of {} bytes but file has {}",
            declared_body,
            bytes.len().saturating_sub(8)
        )));
    }
    let (body, checksum_bytes) = bytes.split_at(declared_body);
    let stored = u64::from_le_bytes(checksum_bytes.try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(Error::CheckpointChecksum);
    }

    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    if r.take(8)? != MAGIC {
        return Err(Error::CheckpointMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let _body_len = r.u64()?;
    let meta_len = r.u64()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::CheckpointFormat(format!("bad metadata JSON: {e}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model =
        BridgeModel::build(meta.config, meta.class_scheme, meta.region_scheme, &mut rng)?;
    model.set_feature_stats(meta.feature_stats)?;

    let block_count = r.u32()? as usize;
    let mut loaded: std::collections::BTreeMap<String, (usize, usize, Vec<f64>)> =
        std::collections::BTreeMap::new();
    for _ in 0..block_count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CheckpointFormat("block name is not UTF-8".into()))?
            .to_string();
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::CheckpointFormat(format!("block `{name}` size overflow")))?;
        let raw = r.take(n * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if loaded.insert(name.clone(), (rows, cols, data)).is_some() {
            return Err(Error::CheckpointFormat(format!("duplicate block `{name}`")));
        }
    }
    if r.pos != body.len() {
        return Err(Error::CheckpointFormat(
            "trailing bytes after blocks".into(),
        ));
    }

    let targets = state_muts(&mut model);
    let expected = targets.len();
    if loaded.len() != expected {
        return Err(Error::CheckpointFormat(format!(
            "expected {expected} blocks, file has {}",
            loaded.len()
        )));
    }
    for (name, rows, cols, slot) in targets {
        let (frows, fcols, data) = loaded
            .remove(&name)
            .ok_or_else(|| Error::CheckpointFormat(format!("missing block `{name}`")))?;
        if frows != rows || fcols != cols {
            return Err(Error::CheckpointFormat(format!(
                "block `{name}`: expected {rows}x{cols}, file has {frows}x{fcols}"
            )));
        }
        slot.copy_from_slice(&data);
    }
    Ok(model)
}
