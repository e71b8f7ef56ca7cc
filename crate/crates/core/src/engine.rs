//! The training step: group sampling, verification, conditional ground-truth
//! injection, the clipped group-relative objective and the parameter update.
//!
//! Variants:
//!
//! * `SFT`: teacher forcing on the prompt's target.
//! * `GRPO`: sample `G`, score, optimize the clipped objective.
//! * `SGRPO_UNCOND`: sample `G - 1` and always append the target.
//! * `SGRPO_CGI`: sample `G`; if every reward is 0, replace the least likely
//!   sample with the target, otherwise proceed exactly as `GRPO`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::policy::{PolicyParams, PolicySnapshot, SnapshotRole, Tensor};
use crate::trajectory::{Prompt, RewardRecord, Source, Trajectory, TrajectoryGroup, DEFAULT_ADV_EPS};
use crate::verifier::{BinarizerSpec, Verifier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SFT")]
    Sft,
    #[serde(rename = "GRPO")]
    Grpo,
    #[serde(rename = "SGRPO_UNCOND")]
    SgrpoUncond,
    #[serde(rename = "SGRPO_CGI")]
    SgrpoCgi,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Sft, Variant::Grpo, Variant::SgrpoUncond, Variant::SgrpoCgi];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sft => "SFT",
            Variant::Grpo => "GRPO",
            Variant::SgrpoUncond => "SGRPO_UNCOND",
            Variant::SgrpoCgi => "SGRPO_CGI",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Input(format!("unknown variant {s:?}")))
    }
}

/// Granularity of the importance ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatioLevel {
    /// One ratio per trajectory, `exp(log pi(o) - log pi_old(o))`.
    Sequence,
    /// One ratio per token, trajectory advantage broadcast, averaged over positions.
    Token,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KlEstimator {
    Exact,
    K3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub group_size: usize,
    pub delta: f64,
    pub beta: f64,
    pub clip_range: f64,
    pub adv_eps: f64,
    pub lr: f64,
    pub variant: Variant,
    pub ratio_level: RatioLevel,
    pub kl_estimator: KlEstimator,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            group_size: 5,
            delta: 0.9,
            beta: 0.01,
            clip_range: 0.2,
            adv_eps: DEFAULT_ADV_EPS,
            lr: 0.05,
            variant: Variant::SgrpoCgi,
            ratio_level: RatioLevel::Token,
            kl_estimator: KlEstimator::Exact,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.group_size < 2 {
            return fail(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return fail(format!("delta must lie in [0, 1], got {}", self.delta));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return fail(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.clip_range.is_nan() || self.clip_range <= 0.0 {
            return fail(format!("clip_range must be > 0, got {}", self.clip_range));
        }
        if self.adv_eps.is_nan() || self.adv_eps <= 0.0 {
            return fail(format!("adv_eps must be > 0, got {}", self.adv_eps));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return fail(format!("lr must be > 0, got {}", self.lr));
        }
        Ok(())
    }

    pub fn binarizer(&self) -> BinarizerSpec {
        BinarizerSpec { delta: self.delta }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub prompt_id: usize,
    pub mean_raw_score: f64,
    pub mean_reward: f64,
    pub injection_fired: bool,
    /// Sampled members with reward 1; the injected anchor is not counted.
    pub sampled_successes: usize,
    pub grad_norm: f64,
    pub surrogate_grad_norm: f64,
    pub kl_value: f64,
    pub surrogate_value: f64,
}

/// Group failure: no member earned a positive reward.
pub fn detect_group_failure(rewards: &[u8]) -> bool {
    rewards.iter().all(|&r| r == 0)
}

/// Index of the least likely member under the behavior policy; ties go to
/// the smallest index.
pub fn select_replacement(group: &TrajectoryGroup) -> usize {
    let mut best = 0;
    for (i, m) in group.members.iter().enumerate().skip(1) {
        if m.seq_logprob < group.members[best].seq_logprob {
            best = i;
        }
    }
    best
}

/// The prompt's target as a group member, with behavior log-probabilities
/// obtained by teacher-forced evaluation under the behavior snapshot.
pub fn ground_truth_trajectory(prompt: &Prompt, behavior: &PolicySnapshot) -> Result<Trajectory> {
    let b = behavior.params();
    prompt
        .target
        .validate(b.seq_len(), b.vocab_size())
        .map_err(|e| Error::Config(format!("prompt {} target: {e}", prompt.id)))?;
    let (per_token, _) = b.logprob(prompt.id, &prompt.target)?;
    Ok(Trajectory::new(prompt.target.clone(), per_token, Source::Injected))
}

/// Replaces the least likely member of a failed group with the ground truth.
pub fn inject_ground_truth(
    group: &TrajectoryGroup,
    prompt: &Prompt,
    behavior: &PolicySnapshot,
) -> Result<TrajectoryGroup> {
    if group.injected || group.members.iter().any(Trajectory::is_injected) {
        return Err(Error::Contract("group already holds an injected member".into()));
    }
    if group.rewards.len() != group.members.len() {
        return Err(Error::Contract("group must be scored before injection".into()));
    }
    let rewards: Vec<u8> = group.rewards.iter().map(|r| r.reward).collect();
    if !detect_group_failure(&rewards) {
        return Err(Error::Contract(
            "injection requires a group in which every reward is 0".into(),
        ));
    }
    if group.advantages().is_some() {
        return Err(Error::Contract("advantages already estimated".into()));
    }
    let gt = ground_truth_trajectory(prompt, behavior)?;
    let idx = select_replacement(group);
    let mut members = group.members.clone();
    members[idx] = gt;
    let mut out = TrajectoryGroup::new(group.prompt_id, members);
    out.rewards = group.rewards.clone();
    out.rewards[idx] = RewardRecord::injected();
    Ok(out)
}

/// `min(ratio * A, clip(ratio, 1 - c, 1 + c) * A)`
pub fn surrogate_term(ratio: f64, advantage: f64, clip_range: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
    (ratio * advantage).min(clipped * advantage)
}

/// Whether the unclipped branch is selected, i.e. the term's derivative in
/// the ratio is `A` rather than 0.
fn unclipped_active(ratio: f64, advantage: f64, clip_range: f64) -> bool {
    let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
    ratio * advantage <= clipped * advantage
}

#[derive(Clone, Debug)]
pub struct Objective {
    /// `surrogate - beta * kl`
    pub value: f64,
    pub surrogate: f64,
    pub kl: f64,
    /// Gradient of `value` with respect to the policy logits.
    pub gradient: Tensor,
    pub surrogate_gradient: Tensor,
}

/// Clipped group-relative objective with KL penalty, and its exact gradient.
pub fn objective_and_gradient(
    params: &PolicyParams,
    behavior: &PolicySnapshot,
    reference: &PolicySnapshot,
    group: &TrajectoryGroup,
    cfg: &TrainConfig,
) -> Result<Objective> {
    let adv = group
        .advantages()
        .ok_or_else(|| Error::Contract("objective needs estimated advantages".into()))?;
    if behavior.params().shape() != params.shape() {
        return Err(Error::Config("behavior snapshot shape mismatch".into()));
    }
    let prompt = group.prompt_id;
    let g = group.len() as f64;
    let l = params.seq_len() as f64;
    let clip = cfg.clip_range;

    let mut surrogate = 0.0;
    let mut sgrad = Tensor::zeros(params.shape());
    for (m, &a) in group.members.iter().zip(adv) {
        let (lp, total) = params.logprob(prompt, &m.seq)?;
        match cfg.ratio_level {
            RatioLevel::Sequence => {
                let ratio = (total - m.seq_logprob).exp();
                surrogate += surrogate_term(ratio, a, clip) / g;
                if unclipped_active(ratio, a, clip) {
                    let w = a * ratio / g;
                    for (t, &tok) in m.seq.tokens().iter().enumerate() {
                        params.add_token_grad(&mut sgrad, prompt, t, tok, w);
                    }
                }
            }
            RatioLevel::Token => {
                for (t, &tok) in m.seq.tokens().iter().enumerate() {
                    let ratio = (lp[t] - m.behavior_logprobs[t]).exp();
                    surrogate += surrogate_term(ratio, a, clip) / (g * l);
                    if unclipped_active(ratio, a, clip) {
                        params.add_token_grad(&mut sgrad, prompt, t, tok, a * ratio / (g * l));
                    }
                }
            }
        }
    }

    let (kl, kgrad) = match cfg.kl_estimator {
        KlEstimator::Exact => params.kl_to(reference, prompt)?,
        KlEstimator::K3 => {
            let seqs: Vec<_> = group.members.iter().map(|m| &m.seq).collect();
            params.kl_k3(reference, prompt, &seqs)?
        }
    };

    let mut gradient = sgrad.clone();
    if cfg.beta != 0.0 {
        gradient.axpy(-cfg.beta, &kgrad);
    }
    Ok(Objective {
        value: surrogate - cfg.beta * kl,
        surrogate,
        kl,
        gradient,
        surrogate_gradient: sgrad,
    })
}

/// Mutable training state for one run.
pub struct TrainState {
    pub params: PolicyParams,
    pub reference: PolicySnapshot,
    pub optimizer: Optimizer,
    pub verifier: Verifier,
    pub binarizer: BinarizerSpec,
    pub step: u64,
}

impl TrainState {
    /// Fresh state whose reference policy is a snapshot of `params`.
    pub fn new(params: PolicyParams, verifier: Verifier, cfg: &TrainConfig) -> Self {
        let numel = params.shape().numel();
        TrainState {
            reference: params.snapshot(SnapshotRole::Reference),
            optimizer: Optimizer::new(cfg.optimizer, cfg.lr, numel),
            params,
            verifier,
            binarizer: cfg.binarizer(),
            step: 0,
        }
    }

    /// Re-anchors the reference policy at the current parameters.
    pub fn reset_reference(&mut self) {
        self.reference = self.params.snapshot(SnapshotRole::Reference);
    }

    fn sample_group<R: Rng + ?Sized>(
        &self,
        prompt: &Prompt,
        behavior: &PolicySnapshot,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Trajectory>> {
        (0..n).map(|_| behavior.params().sample(prompt.id, rng)).collect()
    }

    fn score(&self, group: &mut TrajectoryGroup, prompt: &Prompt) -> Result<()> {
        group.rewards = self.verifier.score_group(&self.binarizer, group, &prompt.target)?;
        Ok(())
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// One on-policy update for `prompt`. A verifier failure aborts the step
/// before any parameter changes.
pub fn train_step<R: Rng + ?Sized>(
    state: &mut TrainState,
    prompt: &Prompt,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepReport> {
    let behavior = state.params.snapshot(SnapshotRole::Behavior);
    let g = cfg.group_size;

    if cfg.variant == Variant::Sft {
        // Sampled only to report the current success rate; the update is pure
        // teacher forcing.
        let mut probe = TrajectoryGroup::new(prompt.id, state.sample_group(prompt, &behavior, g, rng)?);
        state.score(&mut probe, prompt)?;
        let (loss, grad) = state.params.sft_gradient(prompt)?;
        let (kl, _) = state.params.kl_to(&state.reference, prompt.id)?;
        state.optimizer.step(&mut state.params.logits.data, &grad.data);
        let report = StepReport {
            step: state.step,
            prompt_id: prompt.id,
            mean_raw_score: mean(probe.rewards.iter().map(|r| r.raw_score)),
            mean_reward: mean(probe.rewards.iter().map(|r| f64::from(r.reward))),
            injection_fired: false,
            sampled_successes: probe.sampled_successes(),
            grad_norm: grad.norm(),
            surrogate_grad_norm: grad.norm(),
            kl_value: kl,
            surrogate_value: -loss,
        };
        state.step += 1;
        return Ok(report);
    }

    let mut group = match cfg.variant {
        Variant::SgrpoUncond => {
            let mut members = state.sample_group(prompt, &behavior, g - 1, rng)?;
            members.push(ground_truth_trajectory(prompt, &behavior)?);
            let mut group = TrajectoryGroup::new(prompt.id, members);
            state.score(&mut group, prompt)?;
            group
        }
        _ => {
            let members = state.sample_group(prompt, &behavior, g, rng)?;
            let mut group = TrajectoryGroup::new(prompt.id, members);
            state.score(&mut group, prompt)?;
            let rewards: Vec<u8> = group.rewards.iter().map(|r| r.reward).collect();
            if cfg.variant == Variant::SgrpoCgi && detect_group_failure(&rewards) {
                group = inject_ground_truth(&group, prompt, &behavior)?;
            }
            group
        }
    };
    group.validate(g)?;
    group.estimate_advantages(cfg.adv_eps)?;

    let obj = objective_and_gradient(&state.params, &behavior, &state.reference, &group, cfg)?;
    // The optimizer minimizes, so it is fed the negated objective gradient.
    let descent: Vec<f64> = obj.gradient.data.iter().map(|x| -x).collect();
    state.optimizer.step(&mut state.params.logits.data, &descent);

    let report = StepReport {
        step: state.step,
        prompt_id: prompt.id,
        mean_raw_score: mean(group.rewards.iter().map(|r| r.raw_score)),
        mean_reward: mean(group.rewards.iter().map(|r| f64::from(r.reward))),
        injection_fired: group.injected,
        sampled_successes: group.sampled_successes(),
        grad_norm: obj.gradient.norm(),
        surrogate_grad_norm: obj.surrogate_gradient.norm(),
        kl_value: obj.kl,
        surrogate_value: obj.surrogate,
    };
    state.step += 1;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Shape;
    use crate::trajectory::TokenSeq;
    use crate::verifier::{ScorerKind, ScorerSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sampled(lp: f64) -> Trajectory {
        Trajectory::new(TokenSeq::new(vec![0]), vec![lp], Source::Sampled)
    }

    fn group_with_logprobs(lps: &[f64]) -> TrajectoryGroup {
        TrajectoryGroup::new(0, lps.iter().map(|&x| sampled(x)).collect())
    }

    #[test]
    fn failure_detection() {
        assert!(detect_group_failure(&[0, 0, 0, 0, 0]));
        assert!(!detect_group_failure(&[0, 0, 1, 0, 0]));
        assert!(!detect_group_failure(&[1, 1, 1, 1, 1]));
    }

    #[test]
    fn replacement_is_argmin_with_low_index_ties() {
        assert_eq!(select_replacement(&group_with_logprobs(&[-3.0, -9.0, -5.0, -5.0, -8.0])), 1);
        assert_eq!(select_replacement(&group_with_logprobs(&[-9.0, -9.0, -2.0, -4.0, -4.0])), 0);
        assert_eq!(select_replacement(&group_with_logprobs(&[-1.0; 5])), 0);
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(surrogate_term(1.0, 2.0, 0.2), 2.0);
        assert!((surrogate_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((surrogate_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    fn hard_prompt() -> Prompt {
        Prompt {
            id: 0,
            context_label: "needle-0".into(),
            target: TokenSeq::new(vec![7, 3, 12, 5]),
        }
    }

    fn failed_group(params: &PolicyParams, prompt: &Prompt, seed: u64) -> TrajectoryGroup {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let members = (0..5).map(|_| params.sample(prompt.id, &mut rng).unwrap()).collect();
        let mut g = TrajectoryGroup::new(prompt.id, members);
        let v = Verifier::new(ScorerSpec::builtin(ScorerKind::ExactMatch)).unwrap();
        g.rewards = v.score_group(&BinarizerSpec::default(), &g, &prompt.target).unwrap();
        assert!(detect_group_failure(&g.rewards.iter().map(|r| r.reward).collect::<Vec<_>>()));
        g
    }

    #[test]
    fn injection_builds_mixed_group() {
        let params = PolicyParams::uniform(Shape::new(1, 4, 16).unwrap());
        let prompt = hard_prompt();
        let behavior = params.snapshot(SnapshotRole::Behavior);
        let g = failed_group(&params, &prompt, 1);
        let mut mixed = inject_ground_truth(&g, &prompt, &behavior).unwrap();
        mixed.validate(5).unwrap();
        assert!(mixed.injected);
        let mut rewards: Vec<u8> = mixed.rewards.iter().map(|r| r.reward).collect();
        rewards.sort_unstable();
        assert_eq!(rewards, vec![0, 0, 0, 0, 1]);
        let idx = mixed.injected_index().unwrap();
        assert_eq!(mixed.members[idx].seq, prompt.target);
        assert!((mixed.members[idx].seq_logprob - 4.0 * (1.0f64 / 16.0).ln()).abs() < 1e-12);

        let adv = mixed.estimate_advantages(1e-6).unwrap().to_vec();
        assert!((adv[idx] - 2.0).abs() < 1e-5);

        assert!(matches!(
            inject_ground_truth(&mixed, &prompt, &behavior),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn injection_rejects_bad_target_length() {
        let params = PolicyParams::uniform(Shape::new(1, 4, 16).unwrap());
        let prompt = hard_prompt();
        let g = failed_group(&params, &prompt, 2);
        let mut bad = prompt.clone();
        bad.target = TokenSeq::new(vec![1, 2]);
        let behavior = params.snapshot(SnapshotRole::Behavior);
        assert!(matches!(inject_ground_truth(&g, &bad, &behavior), Err(Error::Config(_))));
    }

    #[test]
    fn objective_needs_advantages() {
        let params = PolicyParams::uniform(Shape::new(1, 1, 2).unwrap());
        let snap = params.snapshot(SnapshotRole::Behavior);
        let g = group_with_logprobs(&[-0.69, -0.69]);
        let r = objective_and_gradient(&params, &snap, &snap, &g, &TrainConfig::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn objective_at_behavior_is_zero_for_normalized_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = Shape::new(1, 3, 4).unwrap();
        let data = (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = PolicyParams::from_logits(shape, data).unwrap();
        let snap = params.snapshot(SnapshotRole::Behavior);
        let members = (0..5).map(|_| params.sample(0, &mut rng).unwrap()).collect();
        let mut g = TrajectoryGroup::new(0, members);
        g.rewards = [1u8, 0, 1, 0, 0]
            .iter()
            .map(|&r| RewardRecord { raw_score: f64::from(r), reward: r, scorer_id: "t".into() })
            .collect();
        g.estimate_advantages(1e-6).unwrap();
        for level in [RatioLevel::Sequence, RatioLevel::Token] {
            let cfg = TrainConfig { beta: 0.0, ratio_level: level, ..TrainConfig::default() };
            let obj = objective_and_gradient(&params, &snap, &snap, &g, &cfg).unwrap();
            assert!(obj.value.abs() < 1e-12, "{level:?}: {}", obj.value);
        }
    }

    #[test]
    fn cold_start_gradient_vanishes() {
        let params = PolicyParams::uniform(Shape::new(1, 4, 16).unwrap());
        let prompt = hard_prompt();
        let mut g = failed_group(&params, &prompt, 3);
        g.estimate_advantages(1e-6).unwrap();
        let snap = params.snapshot(SnapshotRole::Behavior);
        for level in [RatioLevel::Sequence, RatioLevel::Token] {
            let cfg = TrainConfig { beta: 0.0, ratio_level: level, ..TrainConfig::default() };
            let obj = objective_and_gradient(&params, &snap, &snap, &g, &cfg).unwrap();
            assert!(obj.gradient.data.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn injected_anchor_pulls_toward_target() {
        let params = PolicyParams::uniform(Shape::new(1, 4, 16).unwrap());
        let prompt = hard_prompt();
        let snap = params.snapshot(SnapshotRole::Behavior);
        let mut mixed = inject_ground_truth(&failed_group(&params, &prompt, 5), &prompt, &snap).unwrap();
        mixed.estimate_advantages(1e-6).unwrap();
        let anchor = params.grad_logprob(0, &prompt.target).unwrap();
        for level in [RatioLevel::Sequence, RatioLevel::Token] {
            let cfg = TrainConfig { ratio_level: level, ..TrainConfig::default() };
            let obj = objective_and_gradient(&params, &snap, &snap, &mixed, &cfg).unwrap();
            assert!(obj.gradient.dot(&anchor) > 0.0);
        }
    }

    #[test]
    fn beta_changes_gradient_by_kl_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shape = Shape::new(2, 3, 4).unwrap();
        let rand_params = |rng: &mut ChaCha8Rng| {
            let d = (0..shape.numel()).map(|_| rng.gen_range(-1.5..1.5)).collect();
            PolicyParams::from_logits(shape, d).unwrap()
        };
        let params = rand_params(&mut rng);
        let reference = rand_params(&mut rng).snapshot(SnapshotRole::Reference);
        let behavior = params.snapshot(SnapshotRole::Behavior);
        let members = (0..5).map(|_| params.sample(1, &mut rng).unwrap()).collect();
        let mut g = TrajectoryGroup::new(1, members);
        g.rewards = [0u8, 1, 0, 0, 1]
            .iter()
            .map(|&r| RewardRecord { raw_score: f64::from(r), reward: r, scorer_id: "t".into() })
            .collect();
        g.estimate_advantages(1e-6).unwrap();
        let cfg0 = TrainConfig { beta: 0.0, ..TrainConfig::default() };
        let cfg1 = TrainConfig { beta: 0.01, ..TrainConfig::default() };
        let o0 = objective_and_gradient(&params, &behavior, &reference, &g, &cfg0).unwrap();
        let o1 = objective_and_gradient(&params, &behavior, &reference, &g, &cfg1).unwrap();
        let (_, kgrad) = params.kl_to(&reference, 1).unwrap();
        for i in 0..o0.gradient.data.len() {
            let diff = o1.gradient.data[i] - o0.gradient.data[i];
            assert!((diff + 0.01 * kgrad.data[i]).abs() < 1e-15);
        }
    }

    fn state_for(params: PolicyParams, cfg: &TrainConfig) -> TrainState {
        let v = Verifier::new(ScorerSpec::builtin(ScorerKind::ExactMatch)).unwrap();
        TrainState::new(params, v, cfg)
    }

    #[test]
    fn cgi_first_step_on_hard_prompt_injects() {
        let cfg = TrainConfig::default();
        let mut st = state_for(PolicyParams::uniform(Shape::new(1, 4, 16).unwrap()), &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rep = train_step(&mut st, &hard_prompt(), &cfg, &mut rng).unwrap();
        assert!(rep.injection_fired);
        assert!((rep.mean_reward - 0.2).abs() < 1e-15);
        assert_eq!(rep.sampled_successes, 0);
        assert!(rep.grad_norm > 0.0);
    }

    #[test]
    fn grpo_cold_start_surrogate_gradient_is_zero() {
        let cfg = TrainConfig { variant: Variant::Grpo, ..TrainConfig::default() };
        let mut st = state_for(PolicyParams::uniform(Shape::new(1, 4, 16).unwrap()), &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let rep = train_step(&mut st, &hard_prompt(), &cfg, &mut rng).unwrap();
            assert!(!rep.injection_fired);
            assert_eq!(rep.surrogate_grad_norm, 0.0);
        }
        // theta never left the reference, so the KL term is zero too.
        assert!(st.params.logits.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn uncond_always_injects_and_sft_never_does() {
        let prompt = hard_prompt();
        for (variant, expect) in [(Variant::SgrpoUncond, true), (Variant::Sft, false)] {
            let cfg = TrainConfig { variant, ..TrainConfig::default() };
            let mut st = state_for(PolicyParams::uniform(Shape::new(1, 4, 16).unwrap()), &cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..30 {
                let rep = train_step(&mut st, &prompt, &cfg, &mut rng).unwrap();
                assert_eq!(rep.injection_fired, expect);
            }
        }
    }

    #[test]
    fn train_step_is_reproducible() {
        let prompt = hard_prompt();
        let run = || {
            let cfg = TrainConfig::default();
            let mut st = state_for(PolicyParams::uniform(Shape::new(1, 4, 16).unwrap()), &cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let reps: Vec<StepReport> =
                (0..50).map(|_| train_step(&mut st, &prompt, &cfg, &mut rng).unwrap()).collect();
            (reps, st.params)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!("PPO".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { group_size: 1, ..TrainConfig::default() },
            TrainConfig { delta: 1.1, ..TrainConfig::default() },
            TrainConfig { beta: -0.1, ..TrainConfig::default() },
            TrainConfig { clip_range: 0.0, ..TrainConfig::default() },
            TrainConfig { adv_eps: 0.0, ..TrainConfig::default() },
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
