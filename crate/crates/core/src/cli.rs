//! Subcommands behind the `reid-lstm` binary, driven by one JSON config.
//!
//! Relative paths in the config resolve against the config file's directory.
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
//! failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    generate_synthetic, load_feature_set, make_split, save_dataset, FeatureSet, Manifest, SplitRatios, SplitSpec,
    Standardizer, SyntheticSpec,
};
use crate::error::Error;
use crate::evaluation::{evaluate, fuse_scores, score_matrix, EvalReport, Protocol};
use crate::inspect::{export_heatmap, trace_gates};
use crate::lstm::Gate;
use crate::model::{PairExample, SiameseParams};
use crate::numerics::SeededRng;
use crate::training::{mine_pairs, train, TrainConfig, Validation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

fn default_test_fraction() -> f64 {
    0.5
}
fn default_manifest() -> PathBuf {
    PathBuf::from("data/manifest.json")
}
fn default_model_dir() -> PathBuf {
    PathBuf::from("model")
}
fn default_report() -> PathBuf {
    PathBuf::from("report.json")
}
fn default_inspect_dir() -> PathBuf {
    PathBuf::from("inspect")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_manifest")]
    pub manifest: PathBuf,
    /// Feature channels to use; empty means every channel in the manifest.
    #[serde(default)]
    pub feature_sets: Vec<String>,
    /// Trained models, their logs and the resolved training config live here.
    #[serde(default = "default_model_dir")]
    pub model_dir: PathBuf,
    #[serde(default = "default_report")]
    pub report: PathBuf,
    #[serde(default = "default_inspect_dir")]
    pub inspect_dir: PathBuf,
    #[serde(default)]
    pub multi_query: bool,
    /// Seeds the identity split and model initialization.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub synth: SyntheticSpec,
    pub train: Option<TrainConfig>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFiniteLoss { .. } | Error::Numerical(_) => EXIT_NUMERICAL,
            Error::InvalidArgument(_) => EXIT_CONFIG,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// A config with its paths resolved.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    base: PathBuf,
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        LoadedConfig::from_str(&text, base)
    }

    pub fn from_str(text: &str, base: PathBuf) -> CliResult<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))?;
        if let Some(t) = &config.train {
            t.validate().map_err(|e| CliError::config(e.to_string()))?;
        }
        Ok(LoadedConfig { config, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn train_config(&self) -> CliResult<&TrainConfig> {
        self.config
            .train
            .as_ref()
            .ok_or_else(|| CliError::config("config is missing the \"train\" section"))
    }

    fn feature_names(&self) -> CliResult<Vec<String>> {
        if !self.config.feature_sets.is_empty() {
            return Ok(self.config.feature_sets.clone());
        }
        let manifest = Manifest::read(&self.resolve(&self.config.manifest))?;
        Ok(manifest.feature_sets.into_iter().map(|e| e.name).collect())
    }

    pub fn model_path(&self, feature: &str) -> PathBuf {
        self.resolve(&self.config.model_dir).join(format!("{feature}.model"))
    }

    pub fn log_path(&self, feature: &str) -> PathBuf {
        self.resolve(&self.config.model_dir).join(format!("{feature}.log.jsonl"))
    }

    pub fn resolved_train_config_path(&self) -> PathBuf {
        self.resolve(&self.config.model_dir).join("train_config.json")
    }
}

/// One feature channel split into partitions, with normalization fitted on
/// the training partition and applied everywhere.
#[derive(Debug, Clone)]
pub struct PreparedFeature {
    pub raw: FeatureSet,
    pub split: SplitSpec,
    pub raw_train: FeatureSet,
    pub train: FeatureSet,
    pub validation: FeatureSet,
    pub test_query: FeatureSet,
    pub test_gallery: FeatureSet,
    pub standardizer: Option<Standardizer>,
}

pub fn prepare_feature(
    set: FeatureSet,
    test_fraction: f64,
    validation_fraction: f64,
    normalize: bool,
    seed: u64,
) -> crate::error::Result<PreparedFeature> {
    let split = make_split(
        &set,
        SplitRatios {
            test: test_fraction,
            validation: validation_fraction,
        },
        seed,
    )?;
    let raw_train = set.subset(&split.train_items);
    let standardizer = if normalize {
        Some(Standardizer::fit(&raw_train)?)
    } else {
        None
    };
    let norm = |s: FeatureSet| -> crate::error::Result<FeatureSet> {
        match &standardizer {
            Some(st) => st.apply(&s),
            None => Ok(s),
        }
    };
    Ok(PreparedFeature {
        train: norm(raw_train.clone())?,
        validation: norm(set.subset(&split.validation_items))?,
        test_query: norm(set.subset(&split.test_query))?,
        test_gallery: norm(set.subset(&split.test_gallery))?,
        raw_train,
        raw: set,
        split,
        standardizer,
    })
}

impl PreparedFeature {
    /// Pairs mined in raw feature space, carrying normalized sequences.
    pub fn training_pairs(&self, seed: u64) -> crate::error::Result<Vec<PairExample>> {
        let mined = mine_pairs(&self.raw_train, seed)?;
        if mined.skipped_identities > 0 {
            log::warn!(
                "{}: {} training identities have no cross-camera positive",
                self.raw.name,
                mined.skipped_identities
            );
        }
        log::info!(
            "{}: mined {} positive and {} hard-negative pairs",
            self.raw.name,
            mined.positives,
            mined.negatives
        );
        match &self.standardizer {
            None => Ok(mined.pairs),
            Some(st) => mined
                .pairs
                .into_iter()
                .map(|p| {
                    Ok(PairExample {
                        p: st.apply_seq(&p.p)?,
                        q: st.apply_seq(&p.q)?,
                        ..p
                    })
                })
                .collect(),
        }
    }
}

fn prepare(cfg: &LoadedConfig, name: &str) -> CliResult<PreparedFeature> {
    let train = cfg.train_config()?;
    let set = load_feature_set(&cfg.resolve(&cfg.config.manifest), name)?;
    Ok(prepare_feature(
        set,
        cfg.config.test_fraction,
        train.validation_fraction,
        train.normalize,
        cfg.config.seed,
    )?)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

pub fn cmd_synth(cfg: &LoadedConfig) -> CliResult<()> {
    let set = generate_synthetic(&cfg.config.synth)?;
    let manifest = cfg.resolve(&cfg.config.manifest);
    save_dataset(&manifest, &[set])?;
    log::info!("wrote {}", manifest.display());
    Ok(())
}

pub fn cmd_train(cfg: &LoadedConfig) -> CliResult<()> {
    let train_cfg = cfg.train_config()?.clone();
    let mut resolved = serde_json::to_string_pretty(&train_cfg).expect("config serializes");
    resolved.push('\n');
    write_file(&cfg.resolved_train_config_path(), resolved.as_bytes())?;

    for name in cfg.feature_names()? {
        let prepared = prepare(cfg, &name)?;
        let pairs = prepared.training_pairs(cfg.config.seed)?;
        let mut rng = SeededRng::new(cfg.config.seed);
        let init = SiameseParams::init(prepared.raw.dim(), train_cfg.hidden_dim, prepared.raw.rows(), &mut rng)?;

        let mut lines = String::new();
        let outcome = train(
            init,
            &pairs,
            &Validation::from_set(&prepared.validation),
            &train_cfg,
            |entry| {
                lines.push_str(&serde_json::to_string(entry).expect("log entry serializes"));
                lines.push('\n');
            },
        );
        // the log is useful even when training aborts
        write_file(&cfg.log_path(&name), lines.as_bytes())?;
        let outcome = outcome?;
        log::info!("{name}: best epoch {}", outcome.best_epoch);

        let path = cfg.model_path(&name);
        write_file(&path, &outcome.model.to_bytes())?;
    }
    Ok(())
}

pub fn run_eval(cfg: &LoadedConfig) -> CliResult<EvalReport> {
    let mut matrices = Vec::new();
    for name in cfg.feature_names()? {
        let prepared = prepare(cfg, &name)?;
        let model = SiameseParams::load(&cfg.model_path(&name))?;
        if model.rows() != prepared.raw.rows() || model.input_dim() != prepared.raw.dim() {
            return Err(CliError {
                code: EXIT_DATA,
                message: format!(
                    "{name}: model expects R={}, d={} but features are R={}, d={}",
                    model.rows(),
                    model.input_dim(),
                    prepared.raw.rows(),
                    prepared.raw.dim()
                ),
            });
        }
        matrices.push(score_matrix(&model, &prepared.test_query, &prepared.test_gallery)?);
    }
    let scores = if matrices.len() == 1 {
        matrices.pop().unwrap()
    } else {
        fuse_scores(&matrices)?
    };
    let protocol = if cfg.config.multi_query {
        Protocol::MultiQuery
    } else {
        Protocol::SingleQuery
    };
    Ok(evaluate(&scores, protocol)?)
}

pub fn cmd_eval(cfg: &LoadedConfig) -> CliResult<()> {
    let report = run_eval(cfg)?;
    log::info!(
        "rank-1 {:.4}, mAP {:.4}, excluded queries {}",
        report.rank1,
        report.map,
        report.excluded_queries
    );
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_file(&cfg.resolve(&cfg.config.report), text.as_bytes())
}

/// Up to five ids closest to `wanted` by edit distance.
pub fn nearest_ids<'a>(wanted: &str, ids: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut scored: Vec<(usize, &str)> = ids.map(|id| (strsim::levenshtein(wanted, id), id)).collect();
    scored.sort();
    scored.into_iter().take(5).map(|(_, id)| id).collect()
}

pub fn cmd_inspect(cfg: &LoadedConfig, image_id: &str) -> CliResult<Vec<PathBuf>> {
    let name = cfg
        .feature_names()?
        .into_iter()
        .next()
        .ok_or_else(|| CliError::config("no feature sets configured"))?;
    let prepared = prepare(cfg, &name)?;
    let item = prepared.raw.find(image_id).ok_or_else(|| CliError {
        code: EXIT_DATA,
        message: format!(
            "unknown image id {image_id:?}; nearest ids: {}",
            nearest_ids(image_id, prepared.raw.items().iter().map(|it| it.id.as_str())).join(", ")
        ),
    })?;
    let seq = match &prepared.standardizer {
        Some(st) => st.apply_seq(&item.seq)?,
        None => item.seq.clone(),
    };
    let model = SiameseParams::load(&cfg.model_path(&name))?;
    let trace = trace_gates(&model, image_id, &seq)?;

    let dir = cfg.resolve(&cfg.config.inspect_dir);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let stem = dir.join(format!("{name}_{image_id}"));
    let mut written = Vec::new();
    for gate in Gate::ALL {
        let files = export_heatmap(&trace, gate, &stem)?;
        written.push(files.image);
        if gate == Gate::Candidate {
            written.push(files.csv);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Eval,
    Inspect,
}

/// Runs one subcommand and maps the outcome to an exit code, reporting any
/// error on stderr.
pub fn run(command: Command, config_path: &Path, image_id: Option<&str>) -> i32 {
    let result = LoadedConfig::from_file(config_path).and_then(|cfg| match command {
        Command::Synth => cmd_synth(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Inspect => {
            let id = image_id.ok_or_else(|| CliError::config("inspect needs --image-id"))?;
            cmd_inspect(&cfg, id).map(|_| ())
        }
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            e.code
        }
    }
}
