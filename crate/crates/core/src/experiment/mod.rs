//! Training loop, evaluation, the leave-one-region-out runner, the ablation
//! grid and embedding exports.
//!
//! There is no early stopping, learning-rate schedule or validation-based
//! model selection: the final-epoch model is the model.

mod export;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{compute_stats, split_extrap, split_loro, Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::matrix::Matrix;
use crate::metrics::EvalReport;
use crate::model::{BridgeModel, ModelConfig, TrainBatch};
use crate::nn::{AdamWConfig, AdamWState, ParamBlockMut};
use crate::posenc::GeoCoordinate;

pub use crate::model::EmbeddingKind;
pub use export::{export_embeddings, export_positional_rgb, EmbeddingExport};

/// Everything a training run needs. Defaults follow the published EU-scale
/// configuration: 500 epochs, learning rate 1e-4, batch size 256, AdamW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub temperature: f64,
    pub loss_weights: LossWeights,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 256,
            optimizer: AdamWConfig::default(),
            temperature: 0.07,
            loss_weights: LossWeights::default(),
            model: ModelConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "batch_size must be >= 2 (train-mode batch normalization)".into(),
            ));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        self.optimizer.validate()?;
        self.model.validate()?;
        Ok(())
    }

    /// Hash of the serialized config, for content-addressed run directories.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(format!("{:016x}", crate::fnv1a64(json.as_bytes())))
    }
}

/// Per-epoch mean loss components (sample-weighted over batches).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_lc: f64,
    pub l_region: f64,
    pub l_con: f64,
    pub total: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// CSV with the fixed columns `epoch,l_lc,l_region,l_con,total`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_lc,l_region,l_con,total\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.l_lc, e.l_region, e.l_con, e.total
            ));
        }
        out
    }
}

fn gather_batch(
    x_std: &Matrix,
    fixed_enc: Option<&Matrix>,
    ds: &Dataset,
    indices: &[usize],
) -> (Matrix, Option<Matrix>, Vec<usize>, Vec<usize>) {
    let f = x_std.cols();
    let xb = Matrix::from_fn(indices.len(), f, |r, c| x_std.get(indices[r], c));
    let eb = fixed_enc
        .map(|enc| Matrix::from_fn(indices.len(), enc.cols(), |r, c| enc.get(indices[r], c)));
    let labels = indices.iter().map(|&i| ds.samples()[i].label).collect();
    let regions = indices.iter().map(|&i| ds.samples()[i].region).collect();
    (xb, eb, labels, regions)
}

/// Trains a fresh model on `train`. Deterministic: a given (config, data)
/// pair always produces bit-identical parameters.
///
/// Mini-batches are drawn as shuffled epochs; a trailing batch of size 1 is
/// dropped because train-mode batch normalization is undefined on it.
pub fn train(
    cfg: &TrainConfig,
    train_ds: &Dataset,
    validation: Option<&Dataset>,
) -> Result<(BridgeModel, TrainHistory)> {
    cfg.validate()?;
    if train_ds.feature_count() != cfg.model.feature_count {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} features but the model expects {}",
            train_ds.feature_count(),
            cfg.model.feature_count
        )));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = BridgeModel::build(
        cfg.model.clone(),
        train_ds.class_scheme().clone(),
        train_ds.region_scheme().clone(),
        &mut init_rng,
    )?;
    model.set_feature_stats(compute_stats(train_ds)?)?;

    let raw = Matrix::from_fn(train_ds.len(), train_ds.feature_count(), |r, c| {
        train_ds.samples()[r].features[c]
    });
    let x_std = model.feature_stats().standardize_batch(&raw);
    let coords: Vec<GeoCoordinate> = train_ds
        .samples()
        .iter()
        .map(|s| s.coordinate())
        .collect::<Result<_>>()?;
    let fixed_enc = model.encode_coordinates(&coords)?;

    let mut optimizer = AdamWState::new(cfg.optimizer, &model.param_block_shapes())?;
    // Separate stream from initialization so batching never replays it.
    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut history = TrainHistory::default();
    let mut indices: Vec<usize> = (0..train_ds.len()).collect();
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut train_rng);
        let mut seen = 0usize;
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue; // size-1 remainder: batch norm undefined
            }
            let (xb, eb, labels, regions) =
                gather_batch(&x_std, fixed_enc.as_ref(), train_ds, chunk);
            let batch = TrainBatch {
                x_std: &xb,
                fixed_enc: eb.as_ref(),
                labels: &labels,
                regions: &regions,
            };
            let (report, grads, _) = match model.loss_and_grads(
                &batch,
                cfg.loss_weights,
                cfg.temperature,
                &mut train_rng,
                true,
            ) {
                Ok(out) => out,
                Err(Error::NonFinite { context }) => {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                        component: context,
                    })
                }
                Err(e) => return Err(e),
            };
            apply_step(&mut model, &grads, &mut optimizer)?;

            let w = chunk.len() as f64;
            sums.0 += w * report.l_lc;
            sums.1 += w * report.l_region;
            sums.2 += w * report.l_con;
            sums.3 += w * report.total;
            seen += chunk.len();
        }
        let n = seen.max(1) as f64;
        let val_accuracy = match validation {
            Some(val) => Some(evaluate(&model, val)?.accuracy),
            None => None,
        };
        history.epochs.push(EpochStats {
            epoch,
            l_lc: sums.0 / n,
            l_region: sums.1 / n,
            l_con: sums.2 / n,
            total: sums.3 / n,
            val_accuracy,
        });
    }
    Ok((model, history))
}

fn apply_step(
    model: &mut BridgeModel,
    grads: &crate::model::ModelGrads,
    optimizer: &mut AdamWState,
) -> Result<()> {
    let grad_blocks = grads.blocks();
    let mut param_blocks = model.param_blocks_mut();
    if param_blocks.len() != grad_blocks.len() {
        return Err(Error::ShapeMismatch {
            context: "apply_step",
            expected: format!("{} gradient blocks", param_blocks.len()),
            actual: format!("{}", grad_blocks.len()),
        });
    }
    let mut pairs: Vec<ParamBlockMut<'_>> = Vec::with_capacity(param_blocks.len());
    for ((pname, values), (gname, grad)) in param_blocks.iter_mut().zip(&grad_blocks) {
        if pname != gname {
            return Err(Error::ShapeMismatch {
                context: "apply_step",
                expected: pname.clone(),
                actual: gname.clone(),
            });
        }
        pairs.push(ParamBlockMut {
            name: pname,
            values,
            grad,
        });
    }
    optimizer.step(&mut pairs)
}

/// Evaluates the deploy-time forward on every sample of `test`.
pub fn evaluate(model: &BridgeModel, test: &Dataset) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::InvalidConfig("empty test set".into()));
    }
    if test.feature_count() != model.config().feature_count {
        return Err(Error::ShapeMismatch {
            context: "evaluate",
            expected: format!("{} features", model.config().feature_count),
            actual: format!("{} features", test.feature_count()),
        });
    }
    let mut pairs = Vec::with_capacity(test.len());
    for s in test.samples() {
        let pred = model.predict(&s.features, s.coordinate()?)?;
        pairs.push((s.label, pred));
    }
    EvalReport::from_pairs(&pairs, model.class_scheme().num_classes())
}

/// Outcome of the leave-one-region-out protocol: one report per region fold
/// (canonical region order) plus the unweighted means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoroOutcome {
    pub folds: Vec<(String, EvalReport)>,
    pub mean_accuracy: f64,
    pub mean_weighted_f1: f64,
    pub plan: SplitPlan,
    pub warnings: Vec<String>,
}

/// Trains from scratch on every fold (fold `k` reinitializes with
/// `seed + k`) and evaluates on the held-out region.
pub fn run_loro(cfg: &TrainConfig, ds: &Dataset) -> Result<LoroOutcome> {
    let (plan, warnings) = split_loro(ds)?;
    let mut folds = Vec::new();
    let mut acc_sum = 0.0;
    let mut f1_sum = 0.0;
    for (k, fold) in plan.folds.iter().enumerate() {
        if fold.train.is_empty() {
            return Err(Error::DatasetFormat(format!(
                "fold `{}` has an empty training set",
                fold.name
            )));
        }
        let mut fold_cfg = cfg.clone();
        fold_cfg.seed = cfg.seed + k as u64;
        let train_ds = ds.subset(&fold.train)?;
        let test_ds = ds.subset(&fold.test)?;
        let (model, _) = train(&fold_cfg, &train_ds, None)?;
        let report = evaluate(&model, &test_ds)?;
        acc_sum += report.accuracy;
        f1_sum += report.weighted_f1;
        folds.push((fold.name.clone(), report));
    }
    let n = folds.len() as f64;
    Ok(LoroOutcome {
        mean_accuracy: acc_sum / n,
        mean_weighted_f1: f1_sum / n,
        folds,
        plan,
        warnings,
    })
}

/// Evaluation protocol for the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scenario {
    /// Seeded random split with the given train fraction.
    Extrap { ratio: f64 },
    /// Leave-one-region-out; metrics are the unweighted fold means.
    Loro,
}

/// Reference metrics from the published EU-wide LUCAS benchmark
/// (leave-one-region-out), attached to ablation reports for comparison.
/// Fields: (accuracy, weighted F1) for the 7-class and 19-class tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMetrics {
    pub level1: (f64, f64),
    pub level2: (f64, f64),
}

/// The six flag combinations, in canonical grid order:
/// (use_latlon, learned_pe, use_region).
pub const ABLATION_GRID: [(bool, bool, bool); 6] = [
    (false, false, false),
    (false, false, true),
    (true, false, false),
    (true, false, true),
    (true, true, false),
    (true, true, true),
];

/// Published benchmark numbers for each grid row, same order as
/// [`ABLATION_GRID`].
pub const ABLATION_REFERENCE: [ReferenceMetrics; 6] = [
    ReferenceMetrics {
        level1: (74.49, 73.17),
        level2: (57.76, 53.93),
    },
    ReferenceMetrics {
        level1: (74.59, 73.26),
        level2: (58.18, 54.37),
    },
    ReferenceMetrics {
        level1: (71.90, 70.20),
        level2: (55.70, 52.14),
    },
    ReferenceMetrics {
        level1: (70.93, 69.18),
        level2: (55.61, 52.21),
    },
    ReferenceMetrics {
        level1: (74.47, 73.03),
        level2: (58.27, 54.88),
    },
    ReferenceMetrics {
        level1: (74.77, 73.59),
        level2: (58.29, 54.44),
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub use_latlon: bool,
    pub learned_pe: bool,
    pub use_region: bool,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub split_plan_hash: String,
    pub reference: ReferenceMetrics,
}

/// Runs the six-row ablation grid under one scenario. Every row shares the
/// same split plan and the same seeds; rows differ only by the three flags.
pub fn run_ablation(
    cfg: &TrainConfig,
    ds: &Dataset,
    scenario: Scenario,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(ABLATION_GRID.len());
    for (row_idx, &(use_latlon, learned_pe, use_region)) in ABLATION_GRID.iter().enumerate() {
        let mut row_cfg = cfg.clone();
        row_cfg.model.use_latlon = use_latlon;
        row_cfg.model.learned_pe = learned_pe;
        row_cfg.model.use_region = use_region;
        let (accuracy, weighted_f1, plan_hash) = match scenario {
            Scenario::Extrap { ratio } => {
                let plan = split_extrap(ds, ratio, cfg.seed)?;
                let fold = &plan.folds[0];
                let (model, _) = train(&row_cfg, &ds.subset(&fold.train)?, None)?;
                let report = evaluate(&model, &ds.subset(&fold.test)?)?;
                (report.accuracy, report.weighted_f1, plan.hash()?)
            }
            Scenario::Loro => {
                let outcome = run_loro(&row_cfg, ds)?;
                (
                    outcome.mean_accuracy,
                    outcome.mean_weighted_f1,
                    outcome.plan.hash()?,
                )
            }
        };
        rows.push(AblationRow {
            use_latlon,
            learned_pe,
            use_region,
            accuracy,
            weighted_f1,
            split_plan_hash: plan_hash,
            reference: ABLATION_REFERENCE[row_idx],
        });
    }
    Ok(rows)
}

/// Full provenance of one training run, serialized next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunReport {
    pub config: TrainConfig,
    pub split_plan_hash: String,
    pub train_metrics: EvalReport,
    pub test_metrics: EvalReport,
}
