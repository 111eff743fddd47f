//! Run configuration: defaults, config-file parsing and CLI overrides.
//!
//! Config files are plain `key = value` text with `#` comments. Command-line
//! flags take precedence over config-file values, which take precedence over
//! the built-in defaults (the published EU-scale settings).

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use bridge_core::experiment::TrainConfig;
use bridge_core::scheme::{ClassScheme, RegionScheme};

/// Scheme selection plus every tunable, before the dataset is known (the
/// feature width comes from the loaded CSV).
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub classes: String,
    pub regions: String,
    pub extrap_ratio: f64,
    pub stratified: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub temperature: f64,
    pub w_lc: f64,
    pub w_region: f64,
    pub w_con: f64,
    pub pe_dim: usize,
    pub pe_base: f64,
    pub coord_scale: f64,
    pub pe_hidden: usize,
    pub embed_dim: usize,
    pub pe_dropout: f64,
    pub enc_dropout: f64,
    pub use_latlon: bool,
    pub learned_pe: bool,
    pub use_region: bool,
    pub seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            classes: "level1".into(),
            regions: "europe".into(),
            extrap_ratio: 0.75,
            stratified: false,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.optimizer.learning_rate,
            weight_decay: t.optimizer.weight_decay,
            beta1: t.optimizer.beta1,
            beta2: t.optimizer.beta2,
            adam_eps: t.optimizer.eps,
            temperature: t.temperature,
            w_lc: t.loss_weights.lc,
            w_region: t.loss_weights.region,
            w_con: t.loss_weights.con,
            pe_dim: t.model.posenc.half_dim,
            pe_base: t.model.posenc.base,
            coord_scale: t.model.posenc.coord_scale,
            pe_hidden: t.model.pe_hidden,
            embed_dim: t.model.embed_dim,
            pe_dropout: t.model.pe_dropout,
            enc_dropout: t.model.enc_dropout,
            use_latlon: t.model.use_latlon,
            learned_pe: t.model.learned_pe,
            use_region: t.model.use_region,
            seed: t.seed,
        }
    }
}

fn parse_bool(value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => bail!("expected a boolean, got `{other}`"),
    }
}

impl RunSettings {
    /// Applies one `key = value` pair; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "classes" => self.classes = v.to_string(),
            "regions" => self.regions = v.to_string(),
            "extrap_ratio" => self.extrap_ratio = v.parse()?,
            "stratified" => self.stratified = parse_bool(v)?,
            "epochs" => self.epochs = v.parse()?,
            "batch_size" => self.batch_size = v.parse()?,
            "learning_rate" => self.learning_rate = v.parse()?,
            "weight_decay" => self.weight_decay = v.parse()?,
            "beta1" => self.beta1 = v.parse()?,
            "beta2" => self.beta2 = v.parse()?,
            "adam_eps" => self.adam_eps = v.parse()?,
            "temperature" => self.temperature = v.parse()?,
            "w_lc" => self.w_lc = v.parse()?,
            "w_region" => self.w_region = v.parse()?,
            "w_con" => self.w_con = v.parse()?,
            "pe_dim" => self.pe_dim = v.parse()?,
            "pe_base" => self.pe_base = v.parse()?,
            "coord_scale" => self.coord_scale = v.parse()?,
            "pe_hidden" => self.pe_hidden = v.parse()?,
            "embed_dim" => self.embed_dim = v.parse()?,
            "pe_dropout" => self.pe_dropout = v.parse()?,
            "enc_dropout" => self.enc_dropout = v.parse()?,
            "use_latlon" => self.use_latlon = parse_bool(v)?,
            "learned_pe" => self.learned_pe = parse_bool(v)?,
            "use_region" => self.use_region = parse_bool(v)?,
            "seed" => self.seed = v.parse()?,
            other => bail!("unknown configuration key `{other}`"),
        }
        Ok(())
    }

    /// Loads a `key = value` config file into these settings.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file `{}`", path.display()))?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", idx + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("line {}", idx + 1))?;
        }
        Ok(())
    }

    /// `key = value` pairs from repeated `--set` flags.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for pair in pairs {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got `{pair}`"))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn class_scheme(&self) -> Result<ClassScheme> {
        match self.classes.as_str() {
            "level1" => Ok(ClassScheme::level1()),
            "level2" => Ok(ClassScheme::level2()),
            list => ClassScheme::new(list.split(',').map(|s| s.trim().to_string()).collect())
                .map_err(|e| anyhow!("bad class list `{list}`: {e}")),
        }
    }

    pub fn region_scheme(&self) -> Result<RegionScheme> {
        match self.regions.as_str() {
            "europe" => Ok(RegionScheme::europe()),
            list => RegionScheme::new(list.split(',').map(|s| s.trim().to_string()).collect())
                .map_err(|e| anyhow!("bad region list `{list}`: {e}")),
        }
    }

    /// Assembles the full training config once the feature width is known.
    pub fn train_config(&self, feature_count: usize) -> TrainConfig {
        use bridge_core::loss::LossWeights;
        use bridge_core::model::ModelConfig;
        use bridge_core::nn::AdamWConfig;
        use bridge_core::posenc::PosEncConfig;
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: AdamWConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
                weight_decay: self.weight_decay,
            },
            temperature: self.temperature,
            loss_weights: LossWeights {
                lc: self.w_lc,
                region: self.w_region,
                con: self.w_con,
            },
            model: ModelConfig {
                feature_count,
                posenc: PosEncConfig {
                    half_dim: self.pe_dim,
                    base: self.pe_base,
                    coord_scale: self.coord_scale,
                },
                pe_hidden: self.pe_hidden,
                embed_dim: self.embed_dim,
                pe_dropout: self.pe_dropout,
                enc_dropout: self.enc_dropout,
                use_latlon: self.use_latlon,
                learned_pe: self.learned_pe,
                use_region: self.use_region,
            },
            seed: self.seed,
        }
    }
}

/// Settings as a sorted key-value map, for the annotated config dump.
pub fn settings_map(s: &RunSettings) -> BTreeMap<&'static str, String> {
    let mut m = BTreeMap::new();
    m.insert("classes", s.classes.clone());
    m.insert("regions", s.regions.clone());
    m.insert("extrap_ratio", s.extrap_ratio.to_string());
    m.insert("stratified", s.stratified.to_string());
    m.insert("epochs", s.epochs.to_string());
    m.insert("batch_size", s.batch_size.to_string());
    m.insert("learning_rate", s.learning_rate.to_string());
    m.insert("weight_decay", s.weight_decay.to_string());
    m.insert("beta1", s.beta1.to_string());
    m.insert("beta2", s.beta2.to_string());
    m.insert("adam_eps", s.adam_eps.to_string());
    m.insert("temperature", s.temperature.to_string());
    m.insert("w_lc", s.w_lc.to_string());
    m.insert("w_region", s.w_region.to_string());
    m.insert("w_con", s.w_con.to_string());
    m.insert("pe_dim", s.pe_dim.to_string());
    m.insert("pe_base", s.pe_base.to_string());
    m.insert("coord_scale", s.coord_scale.to_string());
    m.insert("pe_hidden", s.pe_hidden.to_string());
    m.insert("embed_dim", s.embed_dim.to_string());
    m.insert("pe_dropout", s.pe_dropout.to_string());
    m.insert("enc_dropout", s.enc_dropout.to_string());
    m.insert("use_latlon", s.use_latlon.to_string());
    m.insert("learned_pe", s.learned_pe.to_string());
    m.insert("use_region", s.use_region.to_string());
    m.insert("seed", s.seed.to_string());
    m
}
