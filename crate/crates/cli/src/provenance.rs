use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use cellpheno::config::PipelineConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Stage, StageError, StageResult};

pub const RUN_RECORD: &str = "run.json";

/// Provenance of one stage run. The embedded config plus the input
/// digests are enough to repeat the run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: PipelineConfig,
    /// Input path -> SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the stage directory -> SHA-256.
    pub outputs: BTreeMap<String, String>,
}

/// SHA-256 of the config with the output directory blanked, so moving a
/// run elsewhere keeps its hash.
pub fn config_hash(cfg: &PipelineConfig) -> String {
    let mut c = cfg.clone();
    c.out = PathBuf::new();
    let bytes = serde_json::to_vec(&c).expect("config serializes");
    format!("{:x}", Sha256::digest(&bytes))
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

pub(crate) fn digest_inputs(paths: &[PathBuf]) -> StageResult<BTreeMap<String, String>> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(StageError::Input(format!(
            "missing input(s): {}",
            missing.join(", ")
        )));
    }
    paths
        .iter()
        .map(|p| {
            sha256_file(p)
                .map(|d| (p.display().to_string(), d))
                .map_err(|e| StageError::Input(format!("cannot read {}: {e}", p.display())))
        })
        .collect()
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Every file under `dir` except the run record, relative and sorted.
fn output_digests(dir: &Path) -> std::io::Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    let mut out = BTreeMap::new();
    for f in files {
        let rel = f
            .strip_prefix(dir)
            .unwrap_or(&f)
            .to_string_lossy()
            .replace('\\', "/");
        if rel == RUN_RECORD {
            continue;
        }
        out.insert(rel, sha256_file(&f)?);
    }
    Ok(out)
}

pub(crate) fn read_record(dir: &Path) -> Option<RunRecord> {
    let bytes = std::fs::read(dir.join(RUN_RECORD)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

/// True when `dir` holds a record for the same stage, config and inputs,
/// and every recorded output is still there unchanged.
pub(crate) fn up_to_date(
    dir: &Path,
    stage: Stage,
    cfg: &PipelineConfig,
    inputs: &BTreeMap<String, String>,
) -> bool {
    let Some(rec) = read_record(dir) else {
        return false;
    };
    if rec.stage != stage.name() || rec.config_hash != config_hash(cfg) || &rec.inputs != inputs {
        return false;
    }
    matches!(output_digests(dir), Ok(now) if now == rec.outputs)
}

pub(crate) fn write_record(
    dir: &Path,
    stage: Stage,
    cfg: &PipelineConfig,
    inputs: BTreeMap<String, String>,
) -> StageResult<()> {
    let outputs = output_digests(dir).map_err(|e| {
        StageError::Failure(format!("cannot hash outputs in {}: {e}", dir.display()))
    })?;
    let rec = RunRecord {
        stage: stage.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        inputs,
        outputs,
    };
    let bytes = serde_json::to_vec_pretty(&rec)
        .map_err(|e| StageError::Failure(format!("cannot encode run record: {e}")))?;
    cellpheno::imagecore::write_atomic(&dir.join(RUN_RECORD), &bytes)?;
    Ok(())
}
