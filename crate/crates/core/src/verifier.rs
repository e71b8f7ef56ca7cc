//! Similarity scoring, threshold binarization and group scoring.
//!
//! The built-in scorers are deterministic stand-ins for a semantic judge. The
//! `Remote` kind forwards each comparison to an HTTP endpoint speaking a small
//! JSON protocol (see [`crate::remote`]).

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{RewardRecord, TokenSeq, TrajectoryGroup};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScorerKind {
    ExactMatch,
    EditSimilarity,
    TokenF1,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_cache")]
    pub cache: bool,
}

fn default_timeout_ms() -> u64 {
    2000
}

fn default_retries() -> u32 {
    2
}

fn default_cache() -> bool {
    true
}

impl ScorerSpec {
    pub fn builtin(kind: ScorerKind) -> Self {
        ScorerSpec {
            kind,
            endpoint: None,
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            cache: default_cache(),
        }
    }

    pub fn remote(endpoint: impl Into<String>, timeout_ms: u64, retries: u32) -> Self {
        ScorerSpec {
            kind: ScorerKind::Remote,
            endpoint: Some(endpoint.into()),
            timeout_ms,
            retries,
            cache: default_cache(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.endpoint) {
            (ScorerKind::Remote, None) => {
                return Err(Error::Config("remote scorer requires an endpoint".into()))
            }
            (ScorerKind::Remote, Some(_)) => {}
            (kind, Some(_)) => {
                return Err(Error::Config(format!(
                    "scorer {kind:?} does not take an endpoint"
                )))
            }
            _ => {}
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("scorer timeout_ms must be positive".into()));
        }
        if self.retries > 10 {
            return Err(Error::Config(format!(
                "scorer retries must be small (<= 10), got {}",
                self.retries
            )));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        match self.kind {
            ScorerKind::ExactMatch => "exact_match".into(),
            ScorerKind::EditSimilarity => "edit_similarity".into(),
            ScorerKind::TokenF1 => "token_f1".into(),
            ScorerKind::Remote => format!("remote:{}", self.endpoint.as_deref().unwrap_or("")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinarizerSpec {
    pub delta: f64,
}

impl BinarizerSpec {
    pub fn new(delta: f64) -> Result<Self> {
        let b = BinarizerSpec { delta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!(
                "binarizer delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

impl Default for BinarizerSpec {
    fn default() -> Self {
        BinarizerSpec { delta: 0.9 }
    }
}

/// Reward 1 iff `raw >= delta`; the boundary is inclusive.
pub fn binarize(spec: &BinarizerSpec, raw: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&raw) {
        return Err(Error::Input(format!("raw score {raw} outside [0, 1]")));
    }
    Ok(u8::from(raw >= spec.delta))
}

pub fn exact_match(candidate: &[u32], reference: &[u32]) -> f64 {
    if candidate == reference {
        1.0
    } else {
        0.0
    }
}

pub fn levenshtein(a: &[u32], b: &[u32]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - levenshtein / max_len`; two empty sequences are identical.
pub fn edit_similarity(candidate: &[u32], reference: &[u32]) -> f64 {
    let max_len = candidate.len().max(reference.len());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - levenshtein(candidate, reference) as f64 / max_len as f64
}

/// Harmonic mean of multiset precision and recall.
pub fn token_f1(candidate: &[u32], reference: &[u32]) -> f64 {
    if candidate.is_empty() && reference.is_empty() {
        return 1.0;
    }
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for &t in reference {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for &t in candidate {
        if let Some(c) = counts.get_mut(&t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / candidate.len() as f64;
    let recall = overlap as f64 / reference.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Scores with a built-in scorer. `Remote` needs a [`Verifier`].
pub fn score(spec: &ScorerSpec, candidate: &TokenSeq, reference: &TokenSeq) -> Result<f64> {
    let (c, r) = (candidate.tokens(), reference.tokens());
    match spec.kind {
        ScorerKind::ExactMatch => Ok(exact_match(c, r)),
        ScorerKind::EditSimilarity => Ok(edit_similarity(c, r)),
        ScorerKind::TokenF1 => Ok(token_f1(c, r)),
        ScorerKind::Remote => Err(Error::Config(
            "remote scoring requires a Verifier with a client".into(),
        )),
    }
}

type CacheKey = (Vec<u32>, Vec<u32>);

/// A scorer instance with an optional score cache and a call counter.
pub struct Verifier {
    spec: ScorerSpec,
    scorer_id: String,
    cache: Option<Mutex<HashMap<CacheKey, f64>>>,
    calls: AtomicU64,
    #[cfg(feature = "remote")]
    client: Option<crate::remote::RemoteScorer>,
}

impl Verifier {
    pub fn new(spec: ScorerSpec) -> Result<Self> {
        spec.validate()?;
        #[cfg(feature = "remote")]
        let client = match spec.kind {
            ScorerKind::Remote => Some(crate::remote::RemoteScorer::new(
                spec.endpoint.clone().unwrap_or_default(),
                spec.timeout_ms,
                spec.retries,
            )),
            _ => None,
        };
        #[cfg(not(feature = "remote"))]
        if spec.kind == ScorerKind::Remote {
            return Err(Error::Config(
                "remote scoring is not available in this build".into(),
            ));
        }
        Ok(Verifier {
            scorer_id: spec.id(),
            cache: spec.cache.then(|| Mutex::new(HashMap::new())),
            calls: AtomicU64::new(0),
            spec,
            #[cfg(feature = "remote")]
            client,
        })
    }

    pub fn spec(&self) -> &ScorerSpec {
        &self.spec
    }

    pub fn scorer_id(&self) -> &str {
        &self.scorer_id
    }

    /// Number of times the underlying scorer was invoked (cache hits excluded).
    pub fn scorer_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn score_uncached(&self, candidate: &TokenSeq, reference: &TokenSeq) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        #[cfg(feature = "remote")]
        if let Some(client) = &self.client {
            return client.score(candidate, reference);
        }
        score(&self.spec, candidate, reference)
    }

    pub fn score(&self, candidate: &TokenSeq, reference: &TokenSeq) -> Result<f64> {
        let Some(cache) = &self.cache else {
            return self.score_uncached(candidate, reference);
        };
        let key = (candidate.0.clone(), reference.0.clone());
        if let Some(&hit) = cache.lock().unwrap().get(&key) {
            return Ok(hit);
        }
        let s = self.score_uncached(candidate, reference)?;
        cache.lock().unwrap().insert(key, s);
        Ok(s)
    }

    /// Scores every member of a group. Injected members bypass the scorer and
    /// receive the maximal reward.
    pub fn score_group(
        &self,
        bin: &BinarizerSpec,
        group: &TrajectoryGroup,
        target: &TokenSeq,
    ) -> Result<Vec<RewardRecord>> {
        if group.advantages().is_some() {
            return Err(Error::Contract(
                "cannot score a group whose advantages are already estimated".into(),
            ));
        }
        group
            .members
            .iter()
            .map(|m| {
                if m.is_injected() {
                    return Ok(RewardRecord::injected());
                }
                let raw = self.score(&m.seq, target)?;
                Ok(RewardRecord {
                    raw_score: raw,
                    reward: binarize(bin, raw)?,
                    scorer_id: self.scorer_id.clone(),
                })
            })
            .collect()
    }
}
