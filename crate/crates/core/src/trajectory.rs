//! Prompts, trajectories, sampling groups and the group-relative advantage.
//!
//! Rewards inside a group are normalized against the group's own population
//! statistics:
//!
//! ```text
//! A_i = (r_i - mean(r)) / (std(r) + eps)
//! ```
//!
//! A group whose rewards are all equal carries no contrastive signal and
//! yields exactly zero advantages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default advantage stabilizer.
pub const DEFAULT_ADV_EPS: f64 = 1e-6;

pub type TokenId = u32;

/// A fixed-length sequence of token ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<TokenId>);

impl TokenSeq {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        TokenSeq(tokens)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks the sequence against a task's length and vocabulary.
    pub fn validate(&self, seq_len: usize, vocab_size: usize) -> Result<()> {
        if self.0.len() != seq_len {
            return Err(Error::Input(format!(
                "sequence length {} does not match task length {seq_len}",
                self.0.len()
            )));
        }
        if let Some(&bad) = self.0.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocabulary of {vocab_size}"
            )));
        }
        Ok(())
    }

    /// Space-joined decimal rendering, used by the remote scorer protocol.
    pub fn joined(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        parts.join(" ")
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(tokens: Vec<TokenId>) -> Self {
        TokenSeq(tokens)
    }
}

/// A training query together with its ground-truth response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: usize,
    #[serde(rename = "label")]
    pub context_label: String,
    pub target: TokenSeq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Sampled,
    Injected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub seq: TokenSeq,
    /// Per-token log-probabilities under the behavior policy, in nats.
    pub behavior_logprobs: Vec<f64>,
    pub seq_logprob: f64,
    pub source: Source,
}

impl Trajectory {
    pub fn new(seq: TokenSeq, behavior_logprobs: Vec<f64>, source: Source) -> Self {
        debug_assert_eq!(seq.len(), behavior_logprobs.len());
        let seq_logprob = behavior_logprobs.iter().sum();
        Trajectory {
            seq,
            behavior_logprobs,
            seq_logprob,
            source,
        }
    }

    pub fn is_injected(&self) -> bool {
        self.source == Source::Injected
    }
}

/// Verifier outcome for one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub raw_score: f64,
    pub reward: u8,
    pub scorer_id: String,
}

impl RewardRecord {
    pub const INJECTED_SCORER_ID: &'static str = "ground-truth";

    /// Deterministic maximal reward carried by an injected ground-truth trajectory.
    pub fn injected() -> Self {
        RewardRecord {
            raw_score: 1.0,
            reward: 1,
            scorer_id: Self::INJECTED_SCORER_ID.to_string(),
        }
    }
}

/// The candidate set for one prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryGroup {
    pub prompt_id: usize,
    pub members: Vec<Trajectory>,
    /// Empty until the group has been scored.
    pub rewards: Vec<RewardRecord>,
    pub injected: bool,
    advantages: Option<Vec<f64>>,
}

impl TrajectoryGroup {
    pub fn new(prompt_id: usize, members: Vec<Trajectory>) -> Self {
        let injected = members.iter().any(Trajectory::is_injected);
        TrajectoryGroup {
            prompt_id,
            members,
            rewards: Vec::new(),
            injected,
            advantages: None,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_scored(&self) -> bool {
        !self.rewards.is_empty()
    }

    pub fn advantages(&self) -> Option<&[f64]> {
        self.advantages.as_deref()
    }

    pub fn reward_values(&self) -> Vec<f64> {
        self.rewards.iter().map(|r| f64::from(r.reward)).collect()
    }

    pub fn injected_index(&self) -> Option<usize> {
        self.members.iter().position(Trajectory::is_injected)
    }

    /// Number of sampled (non-injected) members that earned reward 1.
    pub fn sampled_successes(&self) -> usize {
        self.members
            .iter()
            .zip(&self.rewards)
            .filter(|(m, r)| !m.is_injected() && r.reward == 1)
            .count()
    }

    /// Writes the group-relative advantages. Advantages are written once.
    pub fn estimate_advantages(&mut self, eps: f64) -> Result<&[f64]> {
        if self.advantages.is_some() {
            return Err(Error::Contract("advantages already estimated".into()));
        }
        if self.rewards.len() != self.members.len() {
            return Err(Error::Contract(format!(
                "group has {} rewards for {} members",
                self.rewards.len(),
                self.members.len()
            )));
        }
        let adv = compute_advantages(&self.reward_values(), eps)?;
        Ok(self.advantages.insert(adv))
    }

    /// Structural invariants: fixed size, at most one injected member, flag
    /// consistent with membership.
    pub fn validate(&self, group_size: usize) -> Result<()> {
        if self.members.len() != group_size {
            return Err(Error::Contract(format!(
                "group holds {} members, expected {group_size}",
                self.members.len()
            )));
        }
        let n_injected = self.members.iter().filter(|m| m.is_injected()).count();
        if n_injected > 1 {
            return Err(Error::Contract("more than one injected member".into()));
        }
        if self.injected != (n_injected == 1) {
            return Err(Error::Contract(
                "injection flag disagrees with group membership".into(),
            ));
        }
        Ok(())
    }
}

/// Population mean and standard deviation of a reward group.
pub fn group_stats(rewards: &[f64]) -> Result<(f64, f64)> {
    if rewards.len() < 2 {
        return Err(Error::Config(format!(
            "group size must be at least 2, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

pub fn compute_advantages(rewards: &[f64], eps: f64) -> Result<Vec<f64>> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!("advantage eps must be > 0, got {eps}")));
    }
    let (mean, std) = group_stats(rewards)?;
    if std == 0.0 || rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let denom = std + eps;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}
