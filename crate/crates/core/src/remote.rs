//! HTTP client for an external scorer.
//!
//! Request: `POST <endpoint>` with body
//! `{"candidate": "<space-joined ids>", "reference": "<space-joined ids>"}`.
//! Reply: `{"score": <real in [0, 1]>}`. Transport failures, non-2xx statuses
//! and malformed or out-of-range replies each consume one attempt.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::TokenSeq;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreRequest {
    pub candidate: String,
    pub reference: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreReply {
    pub score: f64,
}

pub struct RemoteScorer {
    endpoint: String,
    retries: u32,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(endpoint: String, timeout_ms: u64, retries: u32) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteScorer {
            endpoint,
            retries,
            agent,
        }
    }

    fn attempt(&self, body: &ScoreRequest) -> std::result::Result<f64, String> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(body)
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("status {}", resp.status()));
        }
        let reply: ScoreReply = resp
            .body_mut()
            .read_json()
            .map_err(|e| format!("malformed reply: {e}"))?;
        if !(0.0..=1.0).contains(&reply.score) {
            return Err(format!("score {} outside [0, 1]", reply.score));
        }
        Ok(reply.score)
    }

    pub fn score(&self, candidate: &TokenSeq, reference: &TokenSeq) -> Result<f64> {
        let body = ScoreRequest {
            candidate: candidate.joined(),
            reference: reference.joined(),
        };
        let attempts = self.retries + 1;
        let mut last = String::new();
        for _ in 0..attempts {
            match self.attempt(&body) {
                Ok(s) => return Ok(s),
                Err(e) => last = e,
            }
        }
        Err(Error::VerifierUnavailable {
            attempts,
            reason: last,
        })
    }
}
