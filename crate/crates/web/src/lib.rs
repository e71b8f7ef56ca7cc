//! Browser bindings for the demo page in `www/`.
//!
//! Every export takes and returns plain numbers, arrays or JSON strings, so the
//! same functions are tested natively.

use serde_json::json;
use sgrpo_core::engine::surrogate_term;
use sgrpo_core::harness::{run_single, ExperimentConfig};
use sgrpo_core::taskgen::{TaskKind, TaskSpec};
use sgrpo_core::trajectory::{compute_advantages, group_stats};
use sgrpo_core::{ScorerKind, ScorerSpec, TrainConfig, Variant};
use wasm_bindgen::prelude::*;

/// Group-relative advantages for a reward vector, as
/// `{"mean", "std", "advantages"}`.
#[wasm_bindgen]
pub fn group_advantages(rewards: &[f64], eps: f64) -> Result<String, String> {
    let (mean, std) = group_stats(rewards).map_err(|e| e.to_string())?;
    let advantages = compute_advantages(rewards, eps).map_err(|e| e.to_string())?;
    Ok(json!({ "mean": mean, "std": std, "advantages": advantages }).to_string())
}

/// Clipped surrogate `min(rA, clip(r)A)` at `n` evenly spaced ratios in `[lo, hi]`.
#[wasm_bindgen]
pub fn surrogate_curve(advantage: f64, clip_range: f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let r = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            surrogate_term(r, advantage, clip_range)
        })
        .collect()
}

/// Trains every variant on a Needle task and returns, per variant, the
/// per-step group mean reward and injection flags:
/// `{"random_success", "variants": {"GRPO": {"reward": [..], "injected": [..]}, ..}}`.
#[wasm_bindgen]
pub fn train_curves(
    vocab_size: usize,
    seq_len: usize,
    num_prompts: usize,
    steps: usize,
    seed: u64,
    delta: f64,
    beta: f64,
) -> Result<String, String> {
    let task = TaskSpec {
        kind: TaskKind::Needle,
        vocab_size,
        seq_len,
        num_prompts,
        seed,
        id_offset: 0,
    };
    let cfg = ExperimentConfig {
        steps,
        seeds: vec![seed],
        variants: Variant::ALL.to_vec(),
        output_dir: "unused".into(),
        checkpoint_format: Default::default(),
        step_retry_budget: 1,
        injection_window: 50,
        final_window: 100,
        record_wall_time: false,
        jobs: 1,
        task: task.clone(),
        train: TrainConfig {
            delta,
            beta,
            ..TrainConfig::default()
        },
        scorer: ScorerSpec::builtin(ScorerKind::ExactMatch),
        binarizer: None,
        retention: None,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let mut variants = serde_json::Map::new();
    for v in Variant::ALL {
        let res = run_single(&cfg, v, seed).map_err(|e| e.to_string())?;
        let reward: Vec<f64> = res.rows.iter().map(|r| r.mean_reward).collect();
        let injected: Vec<bool> = res.rows.iter().map(|r| r.injected).collect();
        variants.insert(v.name().into(), json!({ "reward": reward, "injected": injected }));
    }
    Ok(json!({
        "random_success": task.random_success_probability(),
        "variants": variants,
    })
    .to_string())
}
