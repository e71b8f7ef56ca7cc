//! Synthetic prompt sets.
//!
//! * `Needle`: one uniform-random target per prompt. A uniform policy hits
//!   the exact target with probability `V^-L`, which sets the cold-start
//!   severity.
//! * `Graded`: targets made of `L` distinct tokens, so replacing `k` of them
//!   with tokens outside the target gives edit similarity exactly `1 - k/L`.
//! * `Retention`: prompts used to pre-train the policy before domain
//!   training; their ids start at `id_offset` so they never collide with the
//!   domain set.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::trajectory::{Prompt, TokenSeq};
use crate::verifier::{binarize, BinarizerSpec, Verifier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Needle,
    Graded,
    Retention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub num_prompts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub id_offset: usize,
}

impl TaskSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: TaskSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.seq_len < 1 || self.num_prompts < 1 {
            return Err(Error::Config(format!(
                "task needs V >= 2, L >= 1, P >= 1; got V={} L={} P={}",
                self.vocab_size, self.seq_len, self.num_prompts
            )));
        }
        if self.kind == TaskKind::Graded && self.vocab_size <= self.seq_len {
            return Err(Error::Config(format!(
                "graded tasks need V > L to build distinct-token targets, got V={} L={}",
                self.vocab_size, self.seq_len
            )));
        }
        Ok(())
    }

    /// Probability that a uniform policy emits one prompt's exact target.
    pub fn random_success_probability(&self) -> f64 {
        (self.vocab_size as f64).powi(-(self.seq_len as i32))
    }
}

fn kind_salt(kind: TaskKind) -> u64 {
    match kind {
        TaskKind::Needle => 0x6e65_6564_6c65,
        TaskKind::Graded => 0x6772_6164_6564,
        TaskKind::Retention => 0x7265_7461_696e,
    }
}

pub fn generate_tasks(spec: &TaskSpec) -> Result<Vec<Prompt>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ kind_salt(spec.kind));
    let v = spec.vocab_size as u32;
    let prefix = match spec.kind {
        TaskKind::Needle => "needle",
        TaskKind::Graded => "graded",
        TaskKind::Retention => "retention",
    };
    let prompts = (0..spec.num_prompts)
        .map(|i| {
            let tokens = match spec.kind {
                TaskKind::Needle | TaskKind::Retention => {
                    (0..spec.seq_len).map(|_| rng.gen_range(0..v)).collect()
                }
                TaskKind::Graded => {
                    let mut pool: Vec<u32> = (0..v).collect();
                    let (picked, _) = pool.partial_shuffle(&mut rng, spec.seq_len);
                    picked.to_vec()
                }
            };
            let id = spec.id_offset + i;
            Prompt {
                id,
                context_label: format!("{prefix}-{i}"),
                target: TokenSeq::new(tokens),
            }
        })
        .collect();
    Ok(prompts)
}

/// A near miss of a graded target: the first `k` positions are replaced by
/// tokens that do not occur in the target.
pub fn graded_near_miss(target: &TokenSeq, vocab_size: usize, k: usize) -> TokenSeq {
    let outside: Vec<u32> = (0..vocab_size as u32)
        .filter(|t| !target.tokens().contains(t))
        .collect();
    let mut tokens = target.0.clone();
    for (i, tok) in tokens.iter_mut().take(k).enumerate() {
        *tok = outside[i % outside.len()];
    }
    TokenSeq::new(tokens)
}

/// Fraction of sampled generations that pass the binarizer, over all prompts
/// and samples. Each prompt draws from its own stream seeded by
/// `(seed, prompt id)`, so the result does not depend on prompt order.
pub fn retention_metric(
    params: &PolicyParams,
    prompts: &[Prompt],
    verifier: &Verifier,
    bin: &BinarizerSpec,
    samples_per_prompt: usize,
    seed: u64,
) -> Result<f64> {
    if prompts.is_empty() || samples_per_prompt == 0 {
        return Ok(0.0);
    }
    let mut passed = 0u64;
    for p in prompts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ p.id as u64);
        for _ in 0..samples_per_prompt {
            let tr = params.sample(p.id, &mut rng)?;
            let raw = verifier.score(&tr.seq, &p.target)?;
            passed += u64::from(binarize(bin, raw)?);
        }
    }
    Ok(passed as f64 / (prompts.len() * samples_per_prompt) as f64)
}

#[derive(Serialize, Deserialize)]
struct TaskFile {
    spec: TaskSpec,
    prompts: Vec<Prompt>,
}

/// The JSON task-file document: `{"spec": .., "prompts": [..]}`.
pub fn task_file_json(spec: &TaskSpec, prompts: &[Prompt]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&TaskFile {
        spec: spec.clone(),
        prompts: prompts.to_vec(),
    })? + "\n")
}

pub fn write_task_file(path: &Path, spec: &TaskSpec, prompts: &[Prompt]) -> Result<()> {
    fs::write(path, task_file_json(spec, prompts)?).map_err(|e| Error::io(path, e))
}

pub fn read_task_file(path: &Path) -> Result<(TaskSpec, Vec<Prompt>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: TaskFile = serde_json::from_str(&text)?;
    Ok((f.spec, f.prompts))
}
