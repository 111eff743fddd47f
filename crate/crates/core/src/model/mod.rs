//! The dual-branch architecture: positional-encoding head, region-invariant
//! and region-specific branch encoders, and the two linear classifiers.
//!
//! Training evaluates every branch; deployment drops the region branch and
//! classifies from the invariant embedding alone. The combined objective
//! (land-cover cross-entropy + region cross-entropy + supervised contrastive
//! loss) and its exact parameter gradients live here as
//! [`BridgeModel::loss_and_grads`].

mod checkpoint;

use std::sync::atomic::{AtomicU64, Ordering};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{
    assign_contrastive_categories, cross_entropy, supcon_loss_guarded, ContrastiveBatch,
    LossReport, LossWeights,
};
use crate::matrix::Matrix;
use crate::nn::{
    dropout_train, relu, relu_backward, BatchNormCache, BatchNormLayer, DenseLayer, DropoutMask,
    DropoutSpec, InitScheme,
};
use crate::posenc::{
    fixed_encode, fixed_encode_batch, GeoCoordinate, LearnedPositionalEncoder, PeCache, PeGrads,
    PosEncConfig,
};
use crate::scheme::{ClassScheme, RegionScheme};

/// Architecture dimensions and the three ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width `F` of the tabular feature vector.
    pub feature_count: usize,
    pub posenc: PosEncConfig,
    /// Hidden width of the positional-encoding head.
    pub pe_hidden: usize,
    /// Branch-encoder width `D` (also the embedding width).
    pub embed_dim: usize,
    pub pe_dropout: f64,
    pub enc_dropout: f64,
    /// Feed latitude/longitude (as a positional encoding) to the encoders.
    pub use_latlon: bool,
    /// Post-process the fixed encoding with the trainable MLP head.
    pub learned_pe: bool,
    /// Train the region branch (region classifier + specific embeddings in
    /// the contrastive loss).
    pub use_region: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_count: 109,
            posenc: PosEncConfig::default(),
            pe_hidden: 256,
            embed_dim: 256,
            pe_dropout: 0.5,
            enc_dropout: 0.5,
            use_latlon: true,
            learned_pe: true,
            use_region: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_count == 0 {
            return Err(Error::InvalidConfig("feature_count must be >= 1".into()));
        }
        if self.embed_dim == 0 || self.pe_hidden == 0 {
            return Err(Error::InvalidConfig(
                "embed_dim and pe_hidden must be >= 1".into(),
            ));
        }
        DropoutSpec::new(self.pe_dropout)?;
        DropoutSpec::new(self.enc_dropout)?;
        self.posenc.validate()?;
        if self.learned_pe && !self.use_latlon {
            return Err(Error::InvalidConfig(
                "learned_pe requires use_latlon".into(),
            ));
        }
        Ok(())
    }

    /// Width of the vector entering the branch encoders.
    pub fn input_width(&self) -> usize {
        self.feature_count
            + if self.use_latlon {
                self.posenc.output_dim()
            } else {
                0
            }
    }
}

/// Per-feature standardization statistics, computed on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Identity statistics (mean 0, std 1).
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.std.iter().all(|&s| s == 1.0)
    }

    pub fn standardize(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    pub fn standardize_batch(&self, raw: &Matrix) -> Matrix {
        Matrix::from_fn(raw.rows(), raw.cols(), |r, c| {
            (raw.get(r, c) - self.mean[c]) / self.std[c]
        })
    }
}

/// One branch encoder: three dense layers (`in -> D -> D -> D`), each
/// followed by batch norm, ReLU and dropout. The output after the last block
/// is the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchEncoder {
    pub layers: Vec<DenseLayer>,
    pub norms: Vec<BatchNormLayer>,
    pub dropout_rate: f64,
}

#[derive(Debug)]
pub struct EncoderCache {
    dense_inputs: Vec<Matrix>,
    bn_caches: Vec<BatchNormCache>,
    bn_outs: Vec<Matrix>,
    masks: Vec<DropoutMask>,
}

#[derive(Debug)]
pub struct EncoderGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub gammas: Vec<Vec<f64>>,
    pub betas: Vec<Vec<f64>>,
}

impl BranchEncoder {
    pub fn init(
        input_width: usize,
        embed_dim: usize,
        dropout_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        DropoutSpec::new(dropout_rate)?;
        let widths = [input_width, embed_dim, embed_dim, embed_dim];
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        for w in widths.windows(2) {
            layers.push(DenseLayer::init(w[0], w[1], InitScheme::FanInRelu, rng)?);
            norms.push(BatchNormLayer::new(w[1]));
        }
        Ok(Self {
            layers,
            norms,
            dropout_rate,
        })
    }

    pub fn forward_train(
        &mut self,
        x: &Matrix,
        rng: &mut ChaCha8Rng,
        update_running: bool,
    ) -> Result<(Matrix, EncoderCache)> {
        let mut cache = EncoderCache {
            dense_inputs: Vec::new(),
            bn_caches: Vec::new(),
            bn_outs: Vec::new(),
            masks: Vec::new(),
        };
        let mut h = x.clone();
        for (layer, norm) in self.layers.iter().zip(&mut self.norms) {
            cache.dense_inputs.push(h.clone());
            let pre_bn = layer.forward(&h)?;
            let (bn_out, bn_cache) = norm.forward_train(&pre_bn, update_running)?;
            let act = relu(&bn_out);
            let (dropped, mask) = dropout_train(
                &act,
                DropoutSpec {
                    rate: self.dropout_rate,
                },
                rng,
            );
            cache.bn_caches.push(bn_cache);
            cache.bn_outs.push(bn_out);
            cache.masks.push(mask);
            h = dropped;
        }
        Ok((h, cache))
    }

    pub fn forward_infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for (layer, norm) in self.layers.iter().zip(&self.norms) {
            h = relu(&norm.forward_infer(&layer.forward(&h)?)?);
        }
        Ok(h)
    }

    pub fn backward(
        &self,
        grad_embedding: &Matrix,
        cache: &EncoderCache,
    ) -> Result<(Matrix, EncoderGrads)> {
        let n = self.layers.len();
        let mut grads = EncoderGrads {
            weights: vec![Matrix::zeros(0, 0); n],
            biases: vec![Vec::new(); n],
            gammas: vec![Vec::new(); n],
            betas: vec![Vec::new(); n],
        };
        let mut d = grad_embedding.clone();
        for l in (0..n).rev() {
            let d_act = crate::nn::dropout_backward(&d, &cache.masks[l]);
            let d_bn_out = relu_backward(&d_act, &cache.bn_outs[l]);
            let (d_pre_bn, g_gamma, g_beta) =
                self.norms[l].backward(&d_bn_out, &cache.bn_caches[l])?;
            let dense = self.layers[l].backward(&d_pre_bn, &cache.dense_inputs[l])?;
            grads.weights[l] = dense.grad_weights;
            grads.biases[l] = dense.grad_bias;
            grads.gammas[l] = g_gamma;
            grads.betas[l] = g_beta;
            d = dense.grad_input;
        }
        Ok((d, grads))
    }
}

/// Invariant/specific embedding pair for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    pub z_inv: Vec<f64>,
    /// Absent when the model was built without the region branch.
    pub z_spec: Option<Vec<f64>>,
}

/// Per-sample view of a train-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutputs {
    pub lc_logits: Vec<f64>,
    pub region_logits: Option<Vec<f64>>,
    pub embeddings: EmbeddingPair,
    pub positional: Vec<f64>,
}

/// Evaluation counters used to verify which components an operation touched.
#[derive(Debug, Default)]
pub struct ForwardCounters {
    pub enc_inv: AtomicU64,
    pub enc_spec: AtomicU64,
    pub clf_lc: AtomicU64,
    pub clf_region: AtomicU64,
}

impl ForwardCounters {
    pub fn snapshot(&self) -> [u64; 4] {
        [
            self.enc_inv.load(Ordering::Relaxed),
            self.enc_spec.load(Ordering::Relaxed),
            self.clf_lc.load(Ordering::Relaxed),
            self.clf_region.load(Ordering::Relaxed),
        ]
    }
}

/// The complete parameter set plus the standardization statistics.
#[derive(Debug)]
pub struct BridgeModel {
    config: ModelConfig,
    class_scheme: ClassScheme,
    region_scheme: RegionScheme,
    pub pe_head: Option<LearnedPositionalEncoder>,
    pub enc_inv: BranchEncoder,
    pub enc_spec: Option<BranchEncoder>,
    pub clf_lc: DenseLayer,
    pub clf_region: Option<DenseLayer>,
    feature_stats: FeatureStats,
    counters: ForwardCounters,
}

impl Clone for BridgeModel {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            class_scheme: self.class_scheme.clone(),
            region_scheme: self.region_scheme.clone(),
            pe_head: self.pe_head.clone(),
            enc_inv: self.enc_inv.clone(),
            enc_spec: self.enc_spec.clone(),
            clf_lc: self.clf_lc.clone(),
            clf_region: self.clf_region.clone(),
            feature_stats: self.feature_stats.clone(),
            counters: ForwardCounters::default(),
        }
    }
}

impl PartialEq for BridgeModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.class_scheme == other.class_scheme
            && self.region_scheme == other.region_scheme
            && self.pe_head == other.pe_head
            && self.enc_inv == other.enc_inv
            && self.enc_spec == other.enc_spec
            && self.clf_lc == other.clf_lc
            && self.clf_region == other.clf_region
            && self.feature_stats == other.feature_stats
    }
}

/// One standardized training batch. `fixed_enc` carries the precomputed
/// sin/cos encodings (required when the model consumes coordinates).
pub struct TrainBatch<'a> {
    pub x_std: &'a Matrix,
    pub fixed_enc: Option<&'a Matrix>,
    pub labels: &'a [usize],
    pub regions: &'a [usize],
}

/// Cached activations of one train-mode forward pass.
#[derive(Debug)]
pub struct TrainForward {
    pe_cache: Option<PeCache>,
    pub positional: Option<Matrix>,
    inv_cache: EncoderCache,
    spec_cache: Option<EncoderCache>,
    pub z_inv: Matrix,
    pub z_spec: Option<Matrix>,
    pub lc_logits: Matrix,
    pub region_logits: Option<Matrix>,
}

impl TrainForward {
    /// Per-sample view of the batch outputs.
    pub fn prediction_outputs(&self) -> Vec<PredictionOutputs> {
        (0..self.lc_logits.rows())
            .map(|r| PredictionOutputs {
                lc_logits: self.lc_logits.row(r).to_vec(),
                region_logits: self.region_logits.as_ref().map(|m| m.row(r).to_vec()),
                embeddings: EmbeddingPair {
                    z_inv: self.z_inv.row(r).to_vec(),
                    z_spec: self.z_spec.as_ref().map(|m| m.row(r).to_vec()),
                },
                positional: self
                    .positional
                    .as_ref()
                    .map(|m| m.row(r).to_vec())
                    .unwrap_or_default(),
            })
            .collect()
    }
}

/// Parameter gradients of the whole model, mirroring the trained blocks.
#[derive(Debug)]
pub struct ModelGrads {
    pub pe: Option<PeGrads>,
    pub inv: EncoderGrads,
    pub spec: Option<EncoderGrads>,
    pub clf_lc_w: Matrix,
    pub clf_lc_b: Vec<f64>,
    pub clf_region_w: Option<Matrix>,
    pub clf_region_b: Option<Vec<f64>>,
}

/// Which per-sample vector to extract in infer mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Invariant,
    Specific,
    Positional,
}

impl BridgeModel {
    /// Builds a freshly initialized model; deterministic per generator state.
    ///
    /// ReLU-feeding layers use fan-in init; the classifiers and the sigmoid
    /// output layer of the positional head use Xavier.
    pub fn build(
        config: ModelConfig,
        class_scheme: ClassScheme,
        region_scheme: RegionScheme,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let pe_head = if config.use_latlon && config.learned_pe {
            Some(LearnedPositionalEncoder::init(
                config.posenc.output_dim(),
                config.pe_hidden,
                config.pe_dropout,
                rng,
            )?)
        } else {
            None
        };
        let input_width = config.input_width();
        let enc_inv = BranchEncoder::init(input_width, config.embed_dim, config.enc_dropout, rng)?;
        let enc_spec = if config.use_region {
            Some(BranchEncoder::init(
                input_width,
                config.embed_dim,
                config.enc_dropout,
                rng,
            )?)
        } else {
            None
        };
        let clf_lc = DenseLayer::init(
            config.embed_dim,
            class_scheme.num_classes(),
            InitScheme::Xavier,
            rng,
        )?;
        let clf_region = if config.use_region {
            Some(DenseLayer::init(
                config.embed_dim,
                region_scheme.num_regions(),
                InitScheme::Xavier,
                rng,
            )?)
        } else {
            None
        };
        let feature_count = config.feature_count;
        Ok(Self {
            config,
            class_scheme,
            region_scheme,
            pe_head,
            enc_inv,
            enc_spec,
            clf_lc,
            clf_region,
            feature_stats: FeatureStats::identity(feature_count),
            counters: ForwardCounters::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn class_scheme(&self) -> &ClassScheme {
        &self.class_scheme
    }

    pub fn region_scheme(&self) -> &RegionScheme {
        &self.region_scheme
    }

    pub fn feature_stats(&self) -> &FeatureStats {
        &self.feature_stats
    }

    pub fn set_feature_stats(&mut self, stats: FeatureStats) -> Result<()> {
        if stats.mean.len() != self.config.feature_count
            || stats.std.len() != self.config.feature_count
        {
            return Err(Error::ShapeMismatch {
                context: "BridgeModel::set_feature_stats",
                expected: format!("{} features", self.config.feature_count),
                actual: format!("{} / {}", stats.mean.len(), stats.std.len()),
            });
        }
        self.feature_stats = stats;
        Ok(())
    }

    pub fn counters(&self) -> &ForwardCounters {
        &self.counters
    }

    /// Total number of trainable parameter values.
    pub fn num_parameters(&self) -> usize {
        self.param_block_shapes().iter().map(|(_, len)| len).sum()
    }

    fn positional_batch_train(
        &mut self,
        fixed_enc: &Matrix,
        rng: &mut ChaCha8Rng,
        update_running: bool,
    ) -> Result<(Matrix, Option<PeCache>)> {
        match self.pe_head.as_mut() {
            Some(head) => {
                let (p, cache) = head.forward_train(fixed_enc, rng, update_running)?;
                Ok((p, Some(cache)))
            }
            None => Ok((fixed_enc.clone(), None)),
        }
    }

    /// Train-mode forward over a standardized batch (size >= 2).
    pub fn forward_train(
        &mut self,
        batch: &TrainBatch<'_>,
        rng: &mut ChaCha8Rng,
        update_running: bool,
    ) -> Result<TrainForward> {
        let b = batch.x_std.rows();
        if b < 2 {
            return Err(Error::BatchTooSmall { size: b });
        }
        if batch.x_std.cols() != self.config.feature_count {
            return Err(Error::ShapeMismatch {
                context: "BridgeModel::forward_train",
                expected: format!("{} feature columns", self.config.feature_count),
                actual: format!("{} feature columns", batch.x_std.cols()),
            });
        }

        let (positional, pe_cache) = if self.config.use_latlon {
            let enc = batch.fixed_enc.ok_or_else(|| {
                Error::InvalidConfig("batch lacks fixed encodings but use_latlon is set".into())
            })?;
            let (p, cache) = self.positional_batch_train(enc, rng, update_running)?;
            (Some(p), cache)
        } else {
            (None, None)
        };

        let input = match &positional {
            Some(p) => batch.x_std.hcat(p)?,
            None => batch.x_std.clone(),
        };

        self.counters.enc_inv.fetch_add(1, Ordering::Relaxed);
        let (z_inv, inv_cache) = self.enc_inv.forward_train(&input, rng, update_running)?;
        self.counters.clf_lc.fetch_add(1, Ordering::Relaxed);
        let lc_logits = self.clf_lc.forward(&z_inv)?;

        let (z_spec, spec_cache, region_logits) = if self.config.use_region {
            self.counters.enc_spec.fetch_add(1, Ordering::Relaxed);
            let (z, cache) = self
                .enc_spec
                .as_mut()
                .expect("use_region implies enc_spec")
                .forward_train(&input, rng, update_running)?;
            self.counters.clf_region.fetch_add(1, Ordering::Relaxed);
            let logits = self
                .clf_region
                .as_ref()
                .expect("use_region implies clf_region")
                .forward(&z)?;
            (Some(z), Some(cache), Some(logits))
        } else {
            (None, None, None)
        };

        Ok(TrainForward {
            pe_cache,
            positional,
            inv_cache,
            spec_cache,
            z_inv,
            z_spec,
            lc_logits,
            region_logits,
        })
    }

    /// Combined objective and exact gradients for one batch: land-cover
    /// cross-entropy on the invariant branch, region cross-entropy on the
    /// specific branch, supervised contrastive loss over both embedding sets;
    /// gradients accumulate through all heads into the shared input and the
    /// positional head.
    ///
    /// The contrastive term is evaluated only when its weight is non-zero.
    pub fn loss_and_grads(
        &mut self,
        batch: &TrainBatch<'_>,
        weights: LossWeights,
        temperature: f64,
        rng: &mut ChaCha8Rng,
        update_running: bool,
    ) -> Result<(LossReport, ModelGrads, TrainForward)> {
        let fwd = self.forward_train(batch, rng, update_running)?;
        let b = batch.x_std.rows();
        let num_classes = self.class_scheme.num_classes();
        let num_regions = self.region_scheme.num_regions();

        let (l_lc, g_lc_logits) = cross_entropy(&fwd.lc_logits, batch.labels)?;

        let (l_region, g_region_logits) = match &fwd.region_logits {
            Some(logits) => {
                let (l, g) = cross_entropy(logits, batch.regions)?;
                (l, Some(g))
            }
            None => (0.0, None),
        };

        let (l_con, g_con) = if weights.con != 0.0 {
            let (embeddings, categories) = match &fwd.z_spec {
                Some(z_spec) => (
                    fwd.z_inv.vcat(z_spec)?,
                    assign_contrastive_categories(
                        batch.labels,
                        batch.regions,
                        num_classes,
                        num_regions,
                    )?,
                ),
                None => (fwd.z_inv.clone(), batch.labels.to_vec()),
            };
            let out = supcon_loss_guarded(&ContrastiveBatch {
                embeddings: &embeddings,
                categories: &categories,
                temperature,
            })?;
            (out.loss, Some(out.grad))
        } else {
            (0.0, None)
        };

        let report = LossReport::combine(l_lc, l_region, l_con, weights);
        if !report.is_finite() {
            return Err(Error::NonFinite {
                context: format!(
                    "loss (lc={}, region={}, con={})",
                    report.l_lc, report.l_region, report.l_con
                ),
            });
        }

        // ---- backward ----
        let mut d_lc_logits = g_lc_logits;
        d_lc_logits.scale(weights.lc);
        let clf_lc_back = self.clf_lc.backward(&d_lc_logits, &fwd.z_inv)?;
        let mut d_z_inv = clf_lc_back.grad_input;
        if let Some(g) = &g_con {
            // Rows 0..B of the contrastive gradient are the invariant embeddings.
            let mut con_inv = Matrix::from_fn(b, g.cols(), |r, c| g.get(r, c));
            con_inv.scale(weights.con);
            d_z_inv.add_assign(&con_inv)?;
        }
        let (d_input_inv, inv_grads) = self.enc_inv.backward(&d_z_inv, &fwd.inv_cache)?;
        let mut d_input = d_input_inv;

        let (spec_grads, clf_region_w, clf_region_b) =
            if let (Some(z_spec), Some(spec_cache)) = (&fwd.z_spec, &fwd.spec_cache) {
                let mut d_region_logits = g_region_logits.expect("region logits imply gradient");
                d_region_logits.scale(weights.region);
                let clf_region_back = self
                    .clf_region
                    .as_ref()
                    .expect("use_region implies clf_region")
                    .backward(&d_region_logits, z_spec)?;
                let mut d_z_spec = clf_region_back.grad_input;
                if let Some(g) = &g_con {
                    let mut con_spec = Matrix::from_fn(b, g.cols(), |r, c| g.get(b + r, c));
                    con_spec.scale(weights.con);
                    d_z_spec.add_assign(&con_spec)?;
                }
                let (d_input_spec, grads) = self
                    .enc_spec
                    .as_ref()
                    .expect("use_region implies enc_spec")
                    .backward(&d_z_spec, spec_cache)?;
                d_input.add_assign(&d_input_spec)?;
                (
                    Some(grads),
                    Some(clf_region_back.grad_weights),
                    Some(clf_region_back.grad_bias),
                )
            } else {
                (None, None, None)
            };

        let pe_grads = match (&self.pe_head, &fwd.pe_cache) {
            (Some(head), Some(cache)) => {
                let f = self.config.feature_count;
                let d_p = d_input.col_slice(f, f + self.config.posenc.output_dim());
                Some(head.backward(&d_p, cache)?)
            }
            _ => None,
        };

        let grads = ModelGrads {
            pe: pe_grads,
            inv: inv_grads,
            spec: spec_grads,
            clf_lc_w: clf_lc_back.grad_weights,
            clf_lc_b: clf_lc_back.grad_bias,
            clf_region_w,
            clf_region_b,
        };
        Ok((report, grads, fwd))
    }

    /// Batch forward with frozen statistics (running stats, no dropout),
    /// evaluating the same graph as the train path. Pure.
    pub fn forward_frozen(&self, x_std: &Matrix, fixed_enc: Option<&Matrix>) -> Result<Matrix> {
        let positional = if self.config.use_latlon {
            let enc = fixed_enc.ok_or_else(|| {
                Error::InvalidConfig("batch lacks fixed encodings but use_latlon is set".into())
            })?;
            Some(match &self.pe_head {
                Some(head) => head.forward_infer(enc)?,
                None => enc.clone(),
            })
        } else {
            None
        };
        let input = match &positional {
            Some(p) => x_std.hcat(p)?,
            None => x_std.clone(),
        };
        self.counters.enc_inv.fetch_add(1, Ordering::Relaxed);
        let z = self.enc_inv.forward_infer(&input)?;
        self.counters.clf_lc.fetch_add(1, Ordering::Relaxed);
        self.clf_lc.forward(&z)
    }

    fn infer_input(&self, features: &[f64], coord: GeoCoordinate) -> Result<(Matrix, Vec<f64>)> {
        if features.len() != self.config.feature_count {
            return Err(Error::ShapeMismatch {
                context: "BridgeModel::infer",
                expected: format!("{} features", self.config.feature_count),
                actual: format!("{} features", features.len()),
            });
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "inference feature vector".into(),
            });
        }
        let x_std = self.feature_stats.standardize(features);
        let positional = if self.config.use_latlon {
            let enc = fixed_encode(coord, &self.config.posenc)?;
            let enc_m = Matrix::from_vec(1, enc.values().len(), enc.into_values())?;
            match &self.pe_head {
                Some(head) => head.forward_infer(&enc_m)?.row(0).to_vec(),
                None => enc_m.row(0).to_vec(),
            }
        } else {
            Vec::new()
        };
        let input = crate::posenc::concat_features(&x_std, &positional);
        let width = input.len();
        Ok((Matrix::from_vec(1, width, input)?, positional))
    }

    /// Deploy-time forward: standardizes the raw features, computes the
    /// positional representation and the invariant embedding, and returns the
    /// land-cover class probabilities. The region branch is never evaluated.
    pub fn forward_infer(&self, features: &[f64], coord: GeoCoordinate) -> Result<Vec<f64>> {
        let (input, _) = self.infer_input(features, coord)?;
        self.counters.enc_inv.fetch_add(1, Ordering::Relaxed);
        let z = self.enc_inv.forward_infer(&input)?;
        self.counters.clf_lc.fetch_add(1, Ordering::Relaxed);
        let logits = self.clf_lc.forward(&z)?;
        Ok(crate::nn::softmax_rows(&logits).row(0).to_vec())
    }

    /// Predicted class: argmax of the probabilities, ties broken toward the
    /// lowest class index.
    pub fn predict(&self, features: &[f64], coord: GeoCoordinate) -> Result<usize> {
        let probs = self.forward_infer(features, coord)?;
        Ok(argmax(&probs))
    }

    /// Infer-mode extraction of one per-sample vector.
    pub fn embed(
        &self,
        features: &[f64],
        coord: GeoCoordinate,
        kind: EmbeddingKind,
    ) -> Result<Vec<f64>> {
        let (input, positional) = self.infer_input(features, coord)?;
        match kind {
            EmbeddingKind::Invariant => {
                self.counters.enc_inv.fetch_add(1, Ordering::Relaxed);
                Ok(self.enc_inv.forward_infer(&input)?.row(0).to_vec())
            }
            EmbeddingKind::Specific => {
                let enc = self.enc_spec.as_ref().ok_or_else(|| {
                    Error::NoRegionBranch("cannot extract specific embeddings".into())
                })?;
                self.counters.enc_spec.fetch_add(1, Ordering::Relaxed);
                Ok(enc.forward_infer(&input)?.row(0).to_vec())
            }
            EmbeddingKind::Positional => {
                if !self.config.use_latlon {
                    return Err(Error::InvalidConfig(
                        "model was built without coordinate input".into(),
                    ));
                }
                Ok(positional)
            }
        }
    }

    /// Precomputes the fixed encodings for a coordinate list when the model
    /// consumes coordinates.
    pub fn encode_coordinates(&self, coords: &[GeoCoordinate]) -> Result<Option<Matrix>> {
        if !self.config.use_latlon {
            return Ok(None);
        }
        Ok(Some(fixed_encode_batch(coords, &self.config.posenc)?))
    }

    /// Names and lengths of every trainable block, in optimizer order.
    pub fn param_block_shapes(&self) -> Vec<(String, usize)> {
        self.block_refs()
            .into_iter()
            .map(|(name, slice)| (name, slice.len()))
            .collect()
    }

    fn block_refs(&self) -> Vec<(String, &[f64])> {
        let mut blocks: Vec<(String, &[f64])> = Vec::new();
        if let Some(pe) = &self.pe_head {
            blocks.push(("pe.dense1.w".into(), pe.dense1.weights.data()));
            blocks.push(("pe.dense1.b".into(), &pe.dense1.bias));
            blocks.push(("pe.bn1.gamma".into(), &pe.bn1.gamma));
            blocks.push(("pe.bn1.beta".into(), &pe.bn1.beta));
            blocks.push(("pe.dense2.w".into(), pe.dense2.weights.data()));
            blocks.push(("pe.dense2.b".into(), &pe.dense2.bias));
        }
        for (prefix, enc) in [
            ("inv", Some(&self.enc_inv)),
            ("spec", self.enc_spec.as_ref()),
        ] {
            let Some(enc) = enc else { continue };
            for l in 0..enc.layers.len() {
                blocks.push((format!("{prefix}.l{l}.w"), enc.layers[l].weights.data()));
                blocks.push((format!("{prefix}.l{l}.b"), &enc.layers[l].bias));
                blocks.push((format!("{prefix}.bn{l}.gamma"), &enc.norms[l].gamma));
                blocks.push((format!("{prefix}.bn{l}.beta"), &enc.norms[l].beta));
            }
        }
        blocks.push(("clf_lc.w".into(), self.clf_lc.weights.data()));
        blocks.push(("clf_lc.b".into(), &self.clf_lc.bias));
        if let Some(clf) = &self.clf_region {
            blocks.push(("clf_region.w".into(), clf.weights.data()));
            blocks.push(("clf_region.b".into(), &clf.bias));
        }
        blocks
    }

    /// Mutable views of every trainable block, in the same order as
    /// [`Self::param_block_shapes`].
    pub fn param_blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut blocks: Vec<(String, &mut [f64])> = Vec::new();
        if let Some(pe) = &mut self.pe_head {
            blocks.push(("pe.dense1.w".into(), pe.dense1.weights.data_mut()));
            blocks.push(("pe.dense1.b".into(), &mut pe.dense1.bias));
            blocks.push(("pe.bn1.gamma".into(), &mut pe.bn1.gamma));
            blocks.push(("pe.bn1.beta".into(), &mut pe.bn1.beta));
            blocks.push(("pe.dense2.w".into(), pe.dense2.weights.data_mut()));
            blocks.push(("pe.dense2.b".into(), &mut pe.dense2.bias));
        }
        for (prefix, enc) in [
            ("inv", Some(&mut self.enc_inv)),
            ("spec", self.enc_spec.as_mut()),
        ] {
            let Some(enc) = enc else { continue };
            for (l, (layer, norm)) in enc.layers.iter_mut().zip(enc.norms.iter_mut()).enumerate() {
                blocks.push((format!("{prefix}.l{l}.w"), layer.weights.data_mut()));
                blocks.push((format!("{prefix}.l{l}.b"), &mut layer.bias));
                blocks.push((format!("{prefix}.bn{l}.gamma"), &mut norm.gamma));
                blocks.push((format!("{prefix}.bn{l}.beta"), &mut norm.beta));
            }
        }
        blocks.push(("clf_lc.w".into(), self.clf_lc.weights.data_mut()));
        blocks.push(("clf_lc.b".into(), &mut self.clf_lc.bias));
        if let Some(clf) = &mut self.clf_region {
            blocks.push(("clf_region.w".into(), clf.weights.data_mut()));
            blocks.push(("clf_region.b".into(), &mut clf.bias));
        }
        blocks
    }
}

impl ModelGrads {
    /// Gradient blocks in the same order as the model's parameter blocks.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut blocks: Vec<(String, &[f64])> = Vec::new();
        if let Some(pe) = &self.pe {
            blocks.push(("pe.dense1.w".into(), pe.dense1_w.data()));
            blocks.push(("pe.dense1.b".into(), &pe.dense1_b));
            blocks.push(("pe.bn1.gamma".into(), &pe.bn1_gamma));
            blocks.push(("pe.bn1.beta".into(), &pe.bn1_beta));
            blocks.push(("pe.dense2.w".into(), pe.dense2_w.data()));
            blocks.push(("pe.dense2.b".into(), &pe.dense2_b));
        }
        for (prefix, enc) in [("inv", Some(&self.inv)), ("spec", self.spec.as_ref())] {
            let Some(enc) = enc else { continue };
            for l in 0..enc.weights.len() {
                blocks.push((format!("{prefix}.l{l}.w"), enc.weights[l].data()));
                blocks.push((format!("{prefix}.l{l}.b"), &enc.biases[l]));
                blocks.push((format!("{prefix}.bn{l}.gamma"), &enc.gammas[l]));
                blocks.push((format!("{prefix}.bn{l}.beta"), &enc.betas[l]));
            }
        }
        blocks.push(("clf_lc.w".into(), self.clf_lc_w.data()));
        blocks.push(("clf_lc.b".into(), &self.clf_lc_b));
        if let (Some(w), Some(b)) = (&self.clf_region_w, &self.clf_region_b) {
            blocks.push(("clf_region.w".into(), w.data()));
            blocks.push(("clf_region.b".into(), b));
        }
        blocks
    }
}

/// Index of the largest value; ties break toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub use checkpoint::{load_model, save_model, CHECKPOINT_VERSION};
