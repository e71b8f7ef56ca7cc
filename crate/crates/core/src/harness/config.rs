use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::CheckpointFormat;
use crate::engine::{TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::taskgen::{TaskKind, TaskSpec};
use crate::verifier::{BinarizerSpec, ScorerSpec};

/// Pre-training on a held-out prompt set before domain training, used to
/// measure how much of that skill survives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionSettings {
    pub num_prompts: usize,
    #[serde(default = "default_target_success")]
    pub target_success: f64,
    #[serde(default = "default_max_pretrain_steps")]
    pub max_pretrain_steps: usize,
    #[serde(default = "default_samples_per_prompt")]
    pub samples_per_prompt: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_target_success() -> f64 {
    0.95
}
fn default_max_pretrain_steps() -> usize {
    5000
}
fn default_samples_per_prompt() -> usize {
    50
}
fn default_eval_every() -> usize {
    100
}

/// One experiment: a task, a training recipe, a verifier, and the variants
/// and seeds to sweep.
///
/// The file format is TOML. Top-level keys hold the run settings; `[task]`,
/// `[train]`, `[scorer]`, `[binarizer]` and `[retention]` mirror their types.
/// Unknown keys anywhere are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub steps: usize,
    pub seeds: Vec<u64>,
    /// Variants to sweep; empty means `train.variant` alone.
    #[serde(default)]
    pub variants: Vec<Variant>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub checkpoint_format: CheckpointFormat,
    /// Attempts per step when the verifier is unavailable.
    #[serde(default = "default_retry_budget")]
    pub step_retry_budget: u32,
    #[serde(default = "default_injection_window")]
    pub injection_window: usize,
    /// Trailing steps averaged into a run's final reward.
    #[serde(default = "default_final_window")]
    pub final_window: usize,
    /// Wall-clock timings make metric files non-reproducible, so they are opt-in.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Concurrent runs; 0 picks the machine's parallelism.
    #[serde(default)]
    pub jobs: usize,
    pub task: TaskSpec,
    #[serde(default)]
    pub train: TrainConfig,
    pub scorer: ScorerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binarizer: Option<BinarizerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention: Option<RetentionSettings>,
}

fn default_retry_budget() -> u32 {
    3
}
fn default_injection_window() -> usize {
    50
}
fn default_final_window() -> usize {
    100
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Table = text.parse()?;
        let explicit_train_delta = raw
            .get("train")
            .and_then(|t| t.get("delta"))
            .and_then(|d| d.as_float());
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        if let Some(b) = cfg.binarizer {
            if let Some(d) = explicit_train_delta {
                if d != b.delta {
                    return Err(Error::Config(format!(
                        "train.delta = {d} disagrees with binarizer.delta = {}",
                        b.delta
                    )));
                }
            }
            cfg.train.delta = b.delta;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn binarizer(&self) -> BinarizerSpec {
        self.binarizer.unwrap_or(BinarizerSpec {
            delta: self.train.delta,
        })
    }

    pub fn variants(&self) -> Vec<Variant> {
        if self.variants.is_empty() {
            vec![self.train.variant]
        } else {
            self.variants.clone()
        }
    }

    pub fn retention_task(&self) -> Option<TaskSpec> {
        self.retention.as_ref().map(|r| TaskSpec {
            kind: TaskKind::Retention,
            vocab_size: self.task.vocab_size,
            seq_len: self.task.seq_len,
            num_prompts: r.num_prompts,
            seed: self.task.seed ^ r.seed,
            id_offset: self.task.num_prompts,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut uniq = self.variants.clone();
        uniq.sort();
        uniq.dedup();
        if uniq.len() != self.variants.len() {
            return Err(Error::Config("variants must not repeat".into()));
        }
        if self.injection_window == 0 || self.final_window == 0 {
            return Err(Error::Config("metric windows must be positive".into()));
        }
        if self.step_retry_budget == 0 {
            return Err(Error::Config("step_retry_budget must be >= 1".into()));
        }
        if self.task.kind == TaskKind::Retention {
            return Err(Error::Config(
                "the domain task cannot be a Retention task".into(),
            ));
        }
        self.task.validate()?;
        self.train.validate()?;
        self.scorer.validate()?;
        self.binarizer().validate()?;
        if let Some(r) = &self.retention {
            if r.num_prompts == 0 || r.samples_per_prompt == 0 || r.eval_every == 0 {
                return Err(Error::Config(
                    "retention needs positive num_prompts, samples_per_prompt and eval_every"
                        .into(),
                ));
            }
            if !(0.0..=1.0).contains(&r.target_success) {
                return Err(Error::Config("retention target_success must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
