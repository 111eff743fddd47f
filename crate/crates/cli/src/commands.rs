//! Subcommand implementations. Every command is idempotent: identical
//! config, seed and data reproduce identical metric files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bridge_core::data::{
    generate_synthetic, load_dataset, split_extrap, split_extrap_stratified, Dataset, SplitPlan,
    SynthSpec,
};
use bridge_core::experiment::{
    evaluate, export_embeddings, export_positional_rgb, run_ablation, run_loro, train, AblationRow,
    EmbeddingKind, Scenario, TrainRunReport,
};
use bridge_core::model::{load_model, save_model, BridgeModel};
use serde::Serialize;

use crate::config::{settings_map, RunSettings};
use crate::{AblateArgs, EvaluateArgs, ExportArgs, RunArgs, SettingsArgs, SynthArgs};

/// Splits failures into the two non-zero exit codes.
pub enum CmdError {
    /// Bad flags, config, paths or input files (exit 2).
    Usage(anyhow::Error),
    /// A failure after validation: training or I/O (exit 1).
    Runtime(anyhow::Error),
}

type CmdResult = std::result::Result<(), CmdError>;

/// Prints to stdout, ignoring write failures (e.g. a closed pipe when the
/// output is fed through `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn usage<T>(r: Result<T>) -> std::result::Result<T, CmdError> {
    r.map_err(CmdError::Usage)
}

fn runtime<T>(r: Result<T>) -> std::result::Result<T, CmdError> {
    r.map_err(CmdError::Runtime)
}

fn resolve_settings(args: &SettingsArgs) -> Result<RunSettings> {
    let mut s = RunSettings::default();
    if let Some(path) = &args.config {
        s.apply_file(path)?;
    }
    s.apply_overrides(&args.overrides)?;
    macro_rules! flag {
        ($field:ident, $key:literal) => {
            if let Some(v) = &args.$field {
                s.set($key, &v.to_string())?;
            }
        };
    }
    flag!(epochs, "epochs");
    flag!(batch_size, "batch_size");
    flag!(learning_rate, "learning_rate");
    flag!(weight_decay, "weight_decay");
    flag!(temperature, "temperature");
    flag!(pe_dim, "pe_dim");
    flag!(coord_scale, "coord_scale");
    flag!(embed_dim, "embed_dim");
    flag!(use_latlon, "use_latlon");
    flag!(learned_pe, "learned_pe");
    flag!(use_region, "use_region");
    flag!(classes, "classes");
    flag!(regions, "regions");
    flag!(seed, "seed");
    flag!(extrap_ratio, "extrap_ratio");
    flag!(stratified, "stratified");
    Ok(s)
}

fn load_run_dataset(path: &Path, settings: &RunSettings) -> Result<Dataset> {
    if !path.exists() {
        bail!("dataset path `{}` not found", path.display());
    }
    let class_scheme = settings.class_scheme()?;
    let region_scheme = settings.region_scheme()?;
    load_dataset(path, &class_scheme, &region_scheme)
        .with_context(|| format!("loading dataset `{}`", path.display()))
}

/// The resolved configuration as text: every settings key plus the inputs
/// that change the outcome (dataset path, command, extras like the ablation
/// scenario). Written to the run directory and hashed for its name.
fn settings_text(settings: &RunSettings, extras: &[(&str, String)]) -> String {
    let mut text = String::from("# resolved run configuration\n");
    for (k, v) in extras {
        let _ = writeln!(text, "{k} = {v}");
    }
    for (k, v) in settings_map(settings) {
        let _ = writeln!(text, "{k} = {v}");
    }
    text
}

/// Content-addressed run directory: a hash of the full resolved
/// configuration (seed included), so distinct configurations never collide
/// and a rerun lands in the same place with identical contents.
fn run_dir(out: &Path, config_text: &str) -> Result<PathBuf> {
    let dir = out.join(format!(
        "run-{:016x}",
        bridge_core::fnv1a64(config_text.as_bytes())
    ));
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating run directory `{}`", dir.display()))?;
    Ok(dir)
}

fn split_for(settings: &RunSettings, ds: &Dataset) -> Result<SplitPlan> {
    let plan = if settings.stratified {
        split_extrap_stratified(ds, settings.extrap_ratio, settings.seed)?
    } else {
        split_extrap(ds, settings.extrap_ratio, settings.seed)?
    };
    Ok(plan)
}

pub fn cmd_train(args: &RunArgs) -> CmdResult {
    let settings = usage(resolve_settings(&args.settings))?;
    let ds = usage(load_run_dataset(&args.dataset, &settings))?;
    let cfg = settings.train_config(ds.feature_count());
    usage(cfg.validate().map_err(Into::into))?;
    let plan = usage(split_for(&settings, &ds))?;
    let fold = &plan.folds[0];
    let train_ds = usage(ds.subset(&fold.train).map_err(Into::into))?;
    let test_ds = usage(ds.subset(&fold.test).map_err(Into::into))?;

    let (model, history) = runtime(train(&cfg, &train_ds, None).map_err(Into::into))?;
    let train_metrics = runtime(evaluate(&model, &train_ds).map_err(Into::into))?;
    let test_metrics = runtime(evaluate(&model, &test_ds).map_err(Into::into))?;
    let report = TrainRunReport {
        config: cfg.clone(),
        split_plan_hash: runtime(plan.hash().map_err(Into::into))?,
        train_metrics,
        test_metrics,
    };

    let config_text = settings_text(
        &settings,
        &[
            ("command", "train".into()),
            ("dataset", args.dataset.display().to_string()),
        ],
    );
    let dir = runtime(run_dir(&args.out, &config_text))?;
    runtime(save_model(&model, &dir.join("checkpoint.ckpt")).map_err(Into::into))?;
    runtime(write_json(&dir.join("split.json"), &plan))?;
    runtime(fs::write(dir.join("history.csv"), history.to_csv()).map_err(Into::into))?;
    runtime(write_json(&dir.join("report.json"), &report))?;
    runtime(fs::write(dir.join("config.txt"), &config_text).map_err(Into::into))?;

    out!("run directory: {}", dir.display());
    out!(
        "train: accuracy {:.4}, weighted F1 {:.4}",
        report.train_metrics.accuracy,
        report.train_metrics.weighted_f1
    );
    out!(
        "test:  accuracy {:.4}, weighted F1 {:.4}",
        report.test_metrics.accuracy,
        report.test_metrics.weighted_f1
    );
    Ok(())
}

pub fn cmd_loro(args: &RunArgs) -> CmdResult {
    let settings = usage(resolve_settings(&args.settings))?;
    let ds = usage(load_run_dataset(&args.dataset, &settings))?;
    let cfg = settings.train_config(ds.feature_count());
    usage(cfg.validate().map_err(Into::into))?;

    let outcome = runtime(run_loro(&cfg, &ds).map_err(Into::into))?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let config_text = settings_text(
        &settings,
        &[
            ("command", "loro".into()),
            ("dataset", args.dataset.display().to_string()),
        ],
    );
    let dir = runtime(run_dir(&args.out, &config_text))?;
    runtime(write_json(&dir.join("loro_report.json"), &outcome))?;
    runtime(write_json(&dir.join("split.json"), &outcome.plan))?;
    runtime(fs::write(dir.join("config.txt"), &config_text).map_err(Into::into))?;

    out!("run directory: {}", dir.display());
    for (region, report) in &outcome.folds {
        out!(
            "{region:<16} accuracy {:.4}, weighted F1 {:.4}",
            report.accuracy,
            report.weighted_f1
        );
    }
    out!(
        "mean             accuracy {:.4}, weighted F1 {:.4}",
        outcome.mean_accuracy,
        outcome.mean_weighted_f1
    );
    Ok(())
}

fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "lat-lon\tlearned-pe\tregion\taccuracy\tweighted_f1\treference_l1_acc\treference_l1_f1\treference_l2_acc\treference_l2_f1\n",
    );
    for r in rows {
        let mark = |b: bool| if b { "yes" } else { "-" };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
            mark(r.use_latlon),
            mark(r.learned_pe),
            mark(r.use_region),
            r.accuracy,
            r.weighted_f1,
            r.reference.level1.0,
            r.reference.level1.1,
            r.reference.level2.0,
            r.reference.level2.1,
        );
    }
    out
}

pub fn cmd_ablate(args: &AblateArgs) -> CmdResult {
    let settings = usage(resolve_settings(&args.settings))?;
    let scenario = match args.scenario.as_str() {
        "extrap" => Scenario::Extrap {
            ratio: settings.extrap_ratio,
        },
        "loro" => Scenario::Loro,
        other => {
            return Err(CmdError::Usage(anyhow!(
                "unknown scenario `{other}` (expected extrap or loro)"
            )))
        }
    };
    let ds = usage(load_run_dataset(&args.dataset, &settings))?;
    let cfg = settings.train_config(ds.feature_count());
    usage(cfg.validate().map_err(Into::into))?;

    let rows = runtime(run_ablation(&cfg, &ds, scenario).map_err(Into::into))?;
    let config_text = settings_text(
        &settings,
        &[
            ("command", "ablate".into()),
            ("dataset", args.dataset.display().to_string()),
            ("scenario", args.scenario.clone()),
        ],
    );
    let dir = runtime(run_dir(&args.out, &config_text))?;
    runtime(write_json(&dir.join("ablation.json"), &rows))?;
    let table = ablation_table(&rows);
    runtime(fs::write(dir.join("ablation.tsv"), &table).map_err(Into::into))?;
    runtime(fs::write(dir.join("config.txt"), &config_text).map_err(Into::into))?;
    out!("run directory: {}", dir.display());
    {
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), "{table}");
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<BridgeModel> {
    if !path.exists() {
        bail!("checkpoint path `{}` not found", path.display());
    }
    load_model(path).with_context(|| format!("loading checkpoint `{}`", path.display()))
}

fn load_dataset_for_model(path: &Path, model: &BridgeModel) -> Result<Dataset> {
    if !path.exists() {
        bail!("dataset path `{}` not found", path.display());
    }
    let ds = load_dataset(path, model.class_scheme(), model.region_scheme())
        .with_context(|| format!("loading dataset `{}`", path.display()))?;
    if ds.feature_count() != model.config().feature_count {
        bail!(
            "schema mismatch: checkpoint expects {} features, dataset `{}` has {}",
            model.config().feature_count,
            path.display(),
            ds.feature_count()
        );
    }
    Ok(ds)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CmdResult {
    let model = usage(load_checkpoint(&args.checkpoint))?;
    let ds = usage(load_dataset_for_model(&args.dataset, &model))?;
    let report = runtime(evaluate(&model, &ds).map_err(Into::into))?;
    let json = runtime(serde_json::to_string_pretty(&report).map_err(Into::into))?;
    if let Some(out) = &args.out {
        runtime(fs::write(out, &json).map_err(Into::into))?;
    }
    out!(
        "accuracy {:.6}, weighted F1 {:.6} over {} samples",
        report.accuracy,
        report.weighted_f1,
        ds.len()
    );
    out!("{json}");
    Ok(())
}

pub fn cmd_export(args: &ExportArgs) -> CmdResult {
    let model = usage(load_checkpoint(&args.checkpoint))?;
    let ds = usage(load_dataset_for_model(&args.dataset, &model))?;
    let csv = match args.kind.as_str() {
        "invariant" | "z_inv" => {
            runtime(export_embeddings(&model, &ds, EmbeddingKind::Invariant).map_err(Into::into))?
                .csv
        }
        "specific" | "z_spec" => {
            runtime(export_embeddings(&model, &ds, EmbeddingKind::Specific).map_err(Into::into))?
                .csv
        }
        "positional" => {
            runtime(export_embeddings(&model, &ds, EmbeddingKind::Positional).map_err(Into::into))?
                .csv
        }
        "positional-rgb" => {
            let (csv, padded) = runtime(export_positional_rgb(&model, &ds).map_err(Into::into))?;
            if padded > 0 {
                eprintln!(
                    "warning: positional space has rank < 3; {padded} RGB channel(s) padded with 0.5"
                );
            }
            csv
        }
        other => {
            return Err(CmdError::Usage(anyhow!(
            "unknown kind `{other}` (expected invariant, specific, positional or positional-rgb)"
        )))
        }
    };
    runtime(fs::write(&args.out, &csv).map_err(Into::into))?;
    out!(
        "wrote {} rows to {}",
        csv.lines().count() - 1,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let spec = if args.confounded {
        SynthSpec::region_confounded(
            args.classes,
            args.regions,
            args.features,
            args.per_cell,
            args.separation,
            args.noise,
            args.seed,
        )
    } else {
        SynthSpec::separable(
            args.classes,
            args.regions,
            args.features,
            args.per_cell,
            args.separation,
            args.noise,
            args.seed,
        )
    };
    let ds = usage(generate_synthetic(&spec).map_err(Into::into))?;
    runtime(ds.write_csv(&args.out).map_err(Into::into))?;
    let class_list: Vec<String> = ds.class_scheme().class_names().to_vec();
    let region_list: Vec<String> = ds.region_scheme().region_names().to_vec();
    out!("wrote {} samples to {}", ds.len(), args.out.display());
    out!(
        "matching schemes: --classes {} --regions {}",
        class_list.join(","),
        region_list.join(",")
    );
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json)?;
    Ok(())
}
