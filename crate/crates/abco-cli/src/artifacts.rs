//! On-disk artifacts: manifests, integrity-checked checkpoints and CSV
//! number formatting.

use std::fs;
use std::path::{Path, PathBuf};

use abco::envs::EnvId;
use abco::nn::Network;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

/// Content hash of the sources this binary was built from.
pub const CODE_HASH: &str = env!("ABCO_CODE_HASH");

pub const CHECKPOINT_FORMAT: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| CliError::io(path, e))?))
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Floats in CSVs: 17 significant digits, so values round-trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Complete,
    Failed,
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub status: Status,
    pub code_hash: String,
    /// Effective configuration after merging flags and config file.
    pub config: Value,
    pub seeds: Value,
    /// Input files with their digests at the time they were read.
    #[serde(default)]
    pub inputs: Vec<OutputRecord>,
    pub outputs: Vec<OutputRecord>,
    /// Wall-clock seconds per phase.
    pub timings: Value,
    /// Train only: highest iteration whose outputs are all on disk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_completed_iteration: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Command-specific results (iteration reports, evaluation metrics).
    #[serde(default)]
    pub results: Value,
}

impl Manifest {
    pub fn new(command: &str, config: Value, seeds: Value) -> Self {
        Self {
            command: command.to_string(),
            status: Status::Running,
            code_hash: CODE_HASH.to_string(),
            config,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Value::Null,
            last_completed_iteration: None,
            error: None,
            results: Value::Null,
        }
    }

    /// Records `file` (relative to `base`) with its current digest,
    /// replacing an earlier record of the same path.
    pub fn record(list: &mut Vec<OutputRecord>, base: &Path, file: &Path) -> CliResult<()> {
        let rel = file.strip_prefix(base).unwrap_or(file);
        let path = rel.to_string_lossy().replace('\\', "/");
        let sha256 = sha256_file(file)?;
        list.retain(|r| r.path != path);
        list.push(OutputRecord { path, sha256 });
        Ok(())
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("manifest {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Learned,
    /// Sentinel: the scripted expert.
    Expert,
    /// Sentinel: uniformly random actions.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointBody {
    pub format: u32,
    pub env: EnvId,
    pub kind: PolicyKind,
    pub iteration: Option<usize>,
    pub policy: Option<Network>,
    pub idm: Option<Network>,
}

/// A checkpoint file is `{"digest": <sha256 of body>, "body": {...}}`; the
/// body is hashed in its canonical (sorted-key) JSON form.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub body: CheckpointBody,
}

impl Checkpoint {
    pub fn learned(env: EnvId, iteration: usize, policy: &Network, idm: Option<&Network>) -> Self {
        Self {
            body: CheckpointBody {
                format: CHECKPOINT_FORMAT,
                env,
                kind: PolicyKind::Learned,
                iteration: Some(iteration),
                policy: Some(policy.clone()),
                idm: idm.cloned(),
            },
        }
    }

    pub fn sentinel(env: EnvId, kind: PolicyKind) -> Self {
        Self {
            body: CheckpointBody {
                format: CHECKPOINT_FORMAT,
                env,
                kind,
                iteration: None,
                policy: None,
                idm: None,
            },
        }
    }

    /// `expert:<env>` or `random:<env>`.
    pub fn parse_sentinel(spec: &str) -> CliResult<Option<Self>> {
        let Some((kind, env)) = spec.split_once(':') else {
            return Ok(None);
        };
        let kind = match kind {
            "expert" => PolicyKind::Expert,
            "random" => PolicyKind::Random,
            _ => return Ok(None),
        };
        let env: EnvId = env.parse().map_err(|e: abco::Error| CliError::Usage(e.to_string()))?;
        Ok(Some(Self::sentinel(env, kind)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body = serde_json::to_value(&self.body).expect("checkpoint serializes");
        let canonical = serde_json::to_string(&body).expect("value serializes");
        let file = serde_json::json!({ "digest": sha256_hex(canonical.as_bytes()), "body": body });
        let mut bytes = serde_json::to_vec(&file).expect("value serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let bad = |msg: String| CliError::Validation(format!("integrity error: {msg}"));
        let file: Value = serde_json::from_slice(bytes).map_err(|e| bad(format!("checkpoint is not valid JSON ({e})")))?;
        let digest = file
            .get("digest")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("checkpoint has no digest".into()))?;
        let body = file.get("body").ok_or_else(|| bad("checkpoint has no body".into()))?;
        let actual = sha256_hex(serde_json::to_string(body).expect("value serializes").as_bytes());
        if actual != digest {
            return Err(bad(format!("checkpoint digest {digest} does not match content {actual}")));
        }
        let body: CheckpointBody =
            serde_json::from_value(body.clone()).map_err(|e| bad(format!("checkpoint body: {e}")))?;
        if body.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unsupported checkpoint format {}", body.format)));
        }
        if body.kind == PolicyKind::Learned && body.policy.is_none() {
            return Err(bad("learned checkpoint without a policy".into()));
        }
        if let Some(p) = &body.policy {
            if p.input_dim() != body.env.observation_dim() || p.output_dim() != body.env.action_count() {
                return Err(bad(format!("policy shape does not fit {}", body.env)));
            }
        }
        Ok(Self { body })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| CliError::io(path, e))?)
    }
}
