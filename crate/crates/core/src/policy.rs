//! Tabular autoregressive softmax policy.
//!
//! Each prompt owns an `L x V` block of logits; the token at position `t` is
//! drawn from `softmax(logits[prompt, t, ..])`. Every quantity the trainer
//! needs (log-probabilities, their gradients, the categorical KL to a
//! reference) is exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{Prompt, Source, TokenSeq, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub num_prompts: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
}

impl Shape {
    pub fn new(num_prompts: usize, seq_len: usize, vocab_size: usize) -> Result<Self> {
        if num_prompts == 0 || seq_len == 0 || vocab_size == 0 {
            return Err(Error::Config(format!(
                "policy shape must be positive, got P={num_prompts} L={seq_len} V={vocab_size}"
            )));
        }
        Ok(Shape {
            num_prompts,
            seq_len,
            vocab_size,
        })
    }

    pub fn numel(&self) -> usize {
        self.num_prompts * self.seq_len * self.vocab_size
    }

    fn offset(&self, prompt: usize, pos: usize) -> usize {
        (prompt * self.seq_len + pos) * self.vocab_size
    }
}

/// Dense `[P, L, V]` tensor, row-major. Used for logits and their gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn row(&self, prompt: usize, pos: usize) -> &[f64] {
        let o = self.shape.offset(prompt, pos);
        &self.data[o..o + self.shape.vocab_size]
    }

    pub fn row_mut(&mut self, prompt: usize, pos: usize) -> &mut [f64] {
        let o = self.shape.offset(prompt, pos);
        &mut self.data[o..o + self.shape.vocab_size]
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Numerically stable log-softmax of one logit row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(f64::exp).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub logits: Tensor,
}

impl PolicyParams {
    /// All-zero logits: the uniform policy.
    pub fn uniform(shape: Shape) -> Self {
        PolicyParams {
            logits: Tensor::zeros(shape),
        }
    }

    pub fn from_logits(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Config(format!(
                "expected {} logits for shape {shape:?}, got {}",
                shape.numel(),
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("logits must be finite".into()));
        }
        Ok(PolicyParams {
            logits: Tensor { shape, data },
        })
    }

    pub fn shape(&self) -> Shape {
        self.logits.shape
    }

    pub fn num_prompts(&self) -> usize {
        self.logits.shape.num_prompts
    }

    pub fn seq_len(&self) -> usize {
        self.logits.shape.seq_len
    }

    pub fn vocab_size(&self) -> usize {
        self.logits.shape.vocab_size
    }

    fn check_prompt(&self, prompt_id: usize) -> Result<()> {
        if prompt_id >= self.num_prompts() {
            return Err(Error::Input(format!(
                "prompt id {prompt_id} out of range for {} prompts",
                self.num_prompts()
            )));
        }
        Ok(())
    }

    fn check_seq(&self, prompt_id: usize, seq: &TokenSeq) -> Result<()> {
        self.check_prompt(prompt_id)?;
        seq.validate(self.seq_len(), self.vocab_size())
    }

    /// Next-token distribution at one position.
    pub fn probs(&self, prompt_id: usize, pos: usize) -> Vec<f64> {
        softmax(self.logits.row(prompt_id, pos))
    }

    /// Draws one trajectory position by position.
    pub fn sample<R: Rng + ?Sized>(&self, prompt_id: usize, rng: &mut R) -> Result<Trajectory> {
        self.check_prompt(prompt_id)?;
        let mut tokens = Vec::with_capacity(self.seq_len());
        let mut logprobs = Vec::with_capacity(self.seq_len());
        for t in 0..self.seq_len() {
            let lp = log_softmax(self.logits.row(prompt_id, t));
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = lp.len() - 1;
            for (v, &l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    pick = v;
                    break;
                }
            }
            tokens.push(pick as u32);
            logprobs.push(lp[pick]);
        }
        Ok(Trajectory::new(TokenSeq::new(tokens), logprobs, Source::Sampled))
    }

    /// Teacher-forced per-token log-probabilities and their total.
    pub fn logprob(&self, prompt_id: usize, seq: &TokenSeq) -> Result<(Vec<f64>, f64)> {
        self.check_seq(prompt_id, seq)?;
        let per_token: Vec<f64> = seq
            .tokens()
            .iter()
            .enumerate()
            .map(|(t, &tok)| log_softmax(self.logits.row(prompt_id, t))[tok as usize])
            .collect();
        let total = per_token.iter().sum();
        Ok((per_token, total))
    }

    /// Gradient of the total log-probability: one-hot minus softmax per row.
    pub fn grad_logprob(&self, prompt_id: usize, seq: &TokenSeq) -> Result<Tensor> {
        self.check_seq(prompt_id, seq)?;
        let mut g = Tensor::zeros(self.shape());
        for (t, &tok) in seq.tokens().iter().enumerate() {
            self.add_token_grad(&mut g, prompt_id, t, tok, 1.0);
        }
        Ok(g)
    }

    /// `g[prompt, pos, :] += weight * (onehot(tok) - softmax(row))`
    pub(crate) fn add_token_grad(
        &self,
        g: &mut Tensor,
        prompt_id: usize,
        pos: usize,
        tok: u32,
        weight: f64,
    ) {
        if weight == 0.0 {
            return;
        }
        let p = self.probs(prompt_id, pos);
        let row = g.row_mut(prompt_id, pos);
        for (v, (gv, pv)) in row.iter_mut().zip(&p).enumerate() {
            let onehot = if v == tok as usize { 1.0 } else { 0.0 };
            *gv += weight * (onehot - pv);
        }
    }

    /// Exact KL(pi_theta || pi_ref) summed over positions at one prompt, with
    /// its gradient with respect to this policy's logits.
    pub fn kl_to(&self, reference: &PolicySnapshot, prompt_id: usize) -> Result<(f64, Tensor)> {
        let r = reference.params();
        if r.shape() != self.shape() {
            return Err(Error::Config(format!(
                "reference shape {:?} does not match policy shape {:?}",
                r.shape(),
                self.shape()
            )));
        }
        self.check_prompt(prompt_id)?;
        let mut total = 0.0;
        let mut g = Tensor::zeros(self.shape());
        for t in 0..self.seq_len() {
            let lp = log_softmax(self.logits.row(prompt_id, t));
            let lq = log_softmax(r.logits.row(prompt_id, t));
            let kl_t: f64 = lp
                .iter()
                .zip(&lq)
                .map(|(a, b)| {
                    let p = a.exp();
                    if p == 0.0 {
                        0.0
                    } else {
                        p * (a - b)
                    }
                })
                .sum();
            total += kl_t;
            // d KL_t / d z_k = p_k (log p_k - log q_k - KL_t)
            let row = g.row_mut(prompt_id, t);
            for (k, gk) in row.iter_mut().enumerate() {
                let p = lp[k].exp();
                *gk = p * (lp[k] - lq[k] - kl_t);
            }
        }
        Ok((total.max(0.0), g))
    }

    /// Sampled k3 estimate of KL(pi_theta || pi_ref), summed over positions and
    /// averaged over the given sequences, with its gradient (tokens held fixed).
    pub fn kl_k3(
        &self,
        reference: &PolicySnapshot,
        prompt_id: usize,
        seqs: &[&TokenSeq],
    ) -> Result<(f64, Tensor)> {
        let r = reference.params();
        if r.shape() != self.shape() {
            return Err(Error::Config("reference shape does not match policy".into()));
        }
        if seqs.is_empty() {
            return Err(Error::Input("k3 estimate needs at least one sequence".into()));
        }
        let n = seqs.len() as f64;
        let mut total = 0.0;
        let mut g = Tensor::zeros(self.shape());
        for seq in seqs {
            let (lp, _) = self.logprob(prompt_id, seq)?;
            let (lq, _) = r.logprob(prompt_id, seq)?;
            for (t, &tok) in seq.tokens().iter().enumerate() {
                let log_ratio = lq[t] - lp[t];
                let ratio = log_ratio.exp();
                total += ratio - log_ratio - 1.0;
                // d/dz (q/p - log q + log p - 1) = (1 - q/p) * dlog p / dz
                self.add_token_grad(&mut g, prompt_id, t, tok, (1.0 - ratio) / n);
            }
        }
        Ok((total / n, g))
    }

    /// Negative log-likelihood of the prompt's target and its gradient.
    pub fn sft_gradient(&self, prompt: &Prompt) -> Result<(f64, Tensor)> {
        let (_, total) = self.logprob(prompt.id, &prompt.target)?;
        let mut g = self.grad_logprob(prompt.id, &prompt.target)?;
        g.scale(-1.0);
        Ok((-total, g))
    }

    pub fn snapshot(&self, role: SnapshotRole) -> PolicySnapshot {
        PolicySnapshot {
            role,
            params: self.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SnapshotRole {
    Behavior,
    Reference,
}

/// Frozen copy of a policy, used as the behavior or the reference policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySnapshot {
    role: SnapshotRole,
    params: PolicyParams,
}

impl PolicySnapshot {
    pub fn role(&self) -> SnapshotRole {
        self.role
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}
