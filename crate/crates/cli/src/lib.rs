//! Stage runner behind the `cellpheno` binary.
//!
//! Every stage reads plain CSV/PNG/JSON artifacts written by the stage
//! before it and writes its own into `<out>/<stage>/`, finishing with a
//! `run.json` provenance record. A stage whose record still matches the
//! config, the input digests and the outputs on disk is skipped.

use std::fmt;
use std::path::{Path, PathBuf};

use cellpheno::config::PipelineConfig;
use serde::Serialize;
use thiserror::Error;

mod provenance;
mod stages;

pub use provenance::{config_hash, sha256_file, RunRecord, RUN_RECORD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Segment,
    Features,
    Prune,
    Embed,
    Cluster,
    Panel,
    Pipeline,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Segment => "segment",
            Stage::Features => "features",
            Stage::Prune => "prune",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Panel => "panel",
            Stage::Pipeline => "pipeline",
        }
    }

    /// Index used to derive the stage's random stream from the global seed.
    fn stream(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where each stage puts its artifacts under the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    pub fn synth_manifest(&self) -> PathBuf {
        self.dir(Stage::Synth).join("manifest.csv")
    }

    pub fn segment_manifest(&self) -> PathBuf {
        self.dir(Stage::Segment).join("manifest.csv")
    }

    pub fn features_csv(&self) -> PathBuf {
        self.dir(Stage::Features).join("features.csv")
    }

    pub fn retained_csv(&self) -> PathBuf {
        self.dir(Stage::Prune).join("retained_ids.csv")
    }

    pub fn embedding_csv(&self) -> PathBuf {
        self.dir(Stage::Embed).join("embedding.csv")
    }

    pub fn clusters_csv(&self) -> PathBuf {
        self.dir(Stage::Cluster).join("clusters.csv")
    }

    pub fn cluster_models(&self) -> PathBuf {
        self.dir(Stage::Cluster).join("cluster_models.json")
    }
}

/// Failure of a stage, classified by exit code.
#[derive(Debug, Error)]
pub enum StageError {
    /// Missing or unreadable inputs, bad config.
    #[error("{0}")]
    Input(String),
    /// A computation hit a violated invariant (degenerate labels, overlap,
    /// infeasible placement, ...).
    #[error("{0}")]
    Invariant(String),
    /// Anything else, e.g. a failed write.
    #[error("{0}")]
    Failure(String),
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Input(_) => 2,
            StageError::Invariant(_) => 3,
            StageError::Failure(_) => 1,
        }
    }
}

impl From<cellpheno::Error> for StageError {
    fn from(e: cellpheno::Error) -> Self {
        use cellpheno::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                StageError::Input(msg)
            }
            E::Io { .. } => StageError::Failure(msg),
            E::MissingImage(_)
            | E::BadLabel(_)
            | E::DuplicateId(_)
            | E::Csv(_)
            | E::Image(_)
            | E::Tiff(_) => StageError::Input(msg),
            _ => StageError::Invariant(msg),
        }
    }
}

pub type StageResult<T> = Result<T, StageError>;

/// Everything a stage needs besides its inputs on disk.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PipelineConfig,
    /// Overrides the default primary input of the stage.
    pub input: Option<PathBuf>,
    /// Re-run even when outputs are up to date.
    pub force: bool,
}

impl RunOptions {
    pub fn new(config: PipelineConfig) -> Self {
        RunOptions {
            config,
            input: None,
            force: false,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config.out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub dir: PathBuf,
    /// True when existing outputs were reused.
    pub skipped: bool,
}

/// Read a TOML config; missing keys take defaults, unknown keys are errors.
pub fn load_config(path: &Path) -> StageResult<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| StageError::Input(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| StageError::Input(format!("config {}: {e}", path.display())))
}

pub fn parse_config(text: &str) -> Result<PipelineConfig, toml::de::Error> {
    toml::from_str(text)
}

/// Run one stage, or every stage in order for [`Stage::Pipeline`].
pub fn run_stage(stage: Stage, opts: &RunOptions) -> StageResult<Vec<StageOutcome>> {
    opts.config
        .validate()
        .map_err(|e| StageError::Input(format!("invalid config: {e}")))?;
    let out = match stage {
        Stage::Synth => vec![stages::synth(opts)?],
        Stage::Segment => vec![stages::segment(opts)?],
        Stage::Features => vec![stages::features(opts)?],
        Stage::Prune => vec![stages::prune(opts)?],
        Stage::Embed => vec![stages::embed(opts)?],
        Stage::Cluster => vec![stages::cluster(opts)?],
        Stage::Panel => vec![stages::panel(opts)?],
        Stage::Pipeline => stages::pipeline(opts)?,
    };
    Ok(out)
}
