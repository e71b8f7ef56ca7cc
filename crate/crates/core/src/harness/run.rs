use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::checkpoint;
use crate::engine::{train_step, TrainConfig, TrainState, Variant};
use crate::error::{Error, Result};
use crate::policy::{PolicyParams, Shape};
use crate::taskgen::{generate_tasks, retention_metric, write_task_file, TaskSpec};
use crate::trajectory::Prompt;
use crate::verifier::Verifier;

/// One line of a run's `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub seed: u64,
    pub variant: Variant,
    pub step: u64,
    pub prompt_id: usize,
    pub mean_raw_score: f64,
    pub mean_reward: f64,
    pub injected: bool,
    /// Fraction of injected groups over the trailing window.
    pub injection_rate: f64,
    pub sampled_successes: usize,
    pub kl_ref: f64,
    pub grad_norm: f64,
    pub retention_success: Option<f64>,
    pub wall_ms: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Manifest entry for one (variant, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub variant: Variant,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub steps_completed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain_retention: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub config_hash: String,
    pub task: TaskSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention_task: Option<TaskSpec>,
    pub steps: usize,
    pub final_window: usize,
    pub variants: Vec<Variant>,
    pub runs: Vec<RunRecord>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub record: RunRecord,
    pub rows: Vec<MetricRow>,
    pub params: PolicyParams,
}

impl RunResult {
    /// Mean of `mean_reward` over the last `window` steps.
    pub fn final_mean_reward(&self, window: usize) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(window)..];
        tail.iter().map(|r| r.mean_reward).sum::<f64>() / tail.len().max(1) as f64
    }

    pub fn total_injections(&self) -> usize {
        self.rows.iter().filter(|r| r.injected).count()
    }

    pub fn final_retention(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.retention_success)
    }
}

fn run_id(variant: Variant, seed: u64) -> String {
    format!("{}-seed{seed}", variant.name())
}

fn sft_update(state: &mut TrainState, prompt: &Prompt) -> Result<()> {
    let (_, grad) = state.params.sft_gradient(prompt)?;
    state.optimizer.step(&mut state.params.logits.data, &grad.data);
    Ok(())
}

/// Executes one (variant, seed) run in memory.
///
/// The policy starts uniform over `domain + retention` prompts. With retention
/// settings, it is first teacher-forced on the retention prompts until their
/// success rate reaches the target, sharing the optimizer with the domain
/// phase; the reference policy is then re-anchored. Domain prompts are
/// visited round-robin.
pub fn run_single(cfg: &ExperimentConfig, variant: Variant, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    let domain = generate_tasks(&cfg.task)?;
    let retention = match cfg.retention_task() {
        Some(spec) => generate_tasks(&spec)?,
        None => Vec::new(),
    };
    let train = TrainConfig {
        variant,
        seed,
        ..cfg.train.clone()
    };
    let bin = cfg.binarizer();
    let shape = Shape::new(
        domain.len() + retention.len(),
        cfg.task.seq_len,
        cfg.task.vocab_size,
    )?;
    let verifier = Verifier::new(cfg.scorer.clone())?;
    let mut state = TrainState::new(PolicyParams::uniform(shape), verifier, &train);
    state.binarizer = bin;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = run_id(variant, seed);

    let mut record = RunRecord {
        run_id: id.clone(),
        variant,
        seed,
        status: RunStatus::Ok,
        error: None,
        steps_completed: 0,
        pretrain_steps: None,
        pretrain_retention: None,
    };

    let ret_cfg = cfg.retention.as_ref();
    let eval_retention = |params: &PolicyParams, verifier: &Verifier| -> Result<f64> {
        let r = ret_cfg.expect("retention configured");
        retention_metric(params, &retention, verifier, &bin, r.samples_per_prompt, r.seed)
    };

    if let Some(r) = ret_cfg {
        let mut steps = 0;
        let mut success = eval_retention(&state.params, &state.verifier)?;
        while success < r.target_success && steps < r.max_pretrain_steps {
            for p in &retention {
                sft_update(&mut state, p)?;
                steps += 1;
            }
            success = eval_retention(&state.params, &state.verifier)?;
        }
        record.pretrain_steps = Some(steps);
        record.pretrain_retention = Some(success);
        state.reset_reference();
    }

    let mut rows = Vec::with_capacity(cfg.steps);
    let mut window: VecDeque<bool> = VecDeque::with_capacity(cfg.injection_window);
    let mut window_hits = 0usize;
    for step in 0..cfg.steps {
        let prompt = &domain[step % domain.len()];
        let started = cfg.record_wall_time.then(Instant::now);
        let mut attempts = 0;
        let report = loop {
            attempts += 1;
            match train_step(&mut state, prompt, &train, &mut rng) {
                Ok(rep) => break rep,
                Err(Error::VerifierUnavailable { .. }) if attempts < cfg.step_retry_budget => {}
                Err(e) => {
                    record.status = RunStatus::Failed;
                    record.error = Some(format!("step {step}: {e}"));
                    record.steps_completed = step;
                    return Ok(RunResult {
                        record,
                        rows,
                        params: state.params,
                    });
                }
            }
        };
        if window.len() == cfg.injection_window && window.pop_front() == Some(true) {
            window_hits -= 1;
        }
        window.push_back(report.injection_fired);
        window_hits += usize::from(report.injection_fired);

        let retention_success = match ret_cfg {
            Some(r) if (step + 1) % r.eval_every == 0 || step + 1 == cfg.steps => {
                Some(eval_retention(&state.params, &state.verifier)?)
            }
            _ => None,
        };
        rows.push(MetricRow {
            run_id: id.clone(),
            seed,
            variant,
            step: step as u64,
            prompt_id: report.prompt_id,
            mean_raw_score: report.mean_raw_score,
            mean_reward: report.mean_reward,
            injected: report.injection_fired,
            injection_rate: window_hits as f64 / window.len() as f64,
            sampled_successes: report.sampled_successes,
            kl_ref: report.kl_value,
            grad_norm: report.grad_norm,
            retention_success,
            wall_ms: started.map(|t| t.elapsed().as_millis() as u64),
        });
    }
    record.steps_completed = cfg.steps;
    Ok(RunResult {
        record,
        rows,
        params: state.params,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_run(dir: &Path, cfg: &ExperimentConfig, res: &RunResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = String::new();
    for row in &res.rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    write_file(&dir.join("metrics.jsonl"), text)?;
    let ck = dir.join(format!("checkpoint.{}", cfg.checkpoint_format.extension()));
    checkpoint::save(&res.params, &ck, cfg.checkpoint_format)
}

/// `step,<variant>...` with each cell the seed-averaged `mean_reward`.
pub fn write_reward_curve(path: &Path, variants: &[Variant], results: &[RunResult]) -> Result<()> {
    let mut out = String::from("step");
    for v in variants {
        write!(out, ",{v}").unwrap();
    }
    out.push('\n');
    let steps = results.iter().map(|r| r.rows.len()).max().unwrap_or(0);
    for step in 0..steps {
        write!(out, "{step}").unwrap();
        for v in variants {
            let vals: Vec<f64> = results
                .iter()
                .filter(|r| r.record.variant == *v)
                .filter_map(|r| r.rows.get(step).map(|row| row.mean_reward))
                .collect();
            if vals.is_empty() {
                out.push(',');
            } else {
                write!(out, ",{}", vals.iter().sum::<f64>() / vals.len() as f64).unwrap();
            }
        }
        out.push('\n');
    }
    write_file(path, out)
}

fn execute_all(cfg: &ExperimentConfig, jobs: &[(Variant, u64)]) -> Vec<Result<RunResult>> {
    let workers = if cfg.jobs == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cfg.jobs
    };
    if workers <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(|&(v, s)| run_single(cfg, v, s)).collect();
    }
    let mut out: Vec<Option<Result<RunResult>>> = (0..jobs.len()).map(|_| None).collect();
    for (chunk_jobs, chunk_out) in jobs.chunks(workers).zip(out.chunks_mut(workers)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk_jobs
                .iter()
                .map(|&(v, seed)| s.spawn(move || run_single(cfg, v, seed)))
                .collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("run thread panicked"));
            }
        });
    }
    out.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Runs every (variant, seed) pair and writes the experiment directory:
///
/// ```text
/// <output_dir>/manifest.json
/// <output_dir>/tasks.json
/// <output_dir>/reward_curve.csv
/// <output_dir>/<VARIANT>-seed<k>/metrics.jsonl
/// <output_dir>/<VARIANT>-seed<k>/checkpoint.{bin,json}
/// ```
pub fn run(cfg: &ExperimentConfig) -> Result<(Manifest, Vec<RunResult>)> {
    cfg.validate()?;
    let out_dir: PathBuf = cfg.output_dir.clone();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let domain = generate_tasks(&cfg.task)?;
    write_task_file(&out_dir.join("tasks.json"), &cfg.task, &domain)?;

    let variants = cfg.variants();
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();

    let mut records = Vec::new();
    let mut ok = Vec::new();
    for (&(v, seed), res) in jobs.iter().zip(execute_all(cfg, &jobs)) {
        match res {
            Ok(res) => {
                write_run(&out_dir.join(&res.record.run_id), cfg, &res)?;
                records.push(res.record.clone());
                if res.record.status == RunStatus::Ok {
                    ok.push(res);
                }
            }
            Err(e) => records.push(RunRecord {
                run_id: run_id(v, seed),
                variant: v,
                seed,
                status: RunStatus::Failed,
                error: Some(e.to_string()),
                steps_completed: 0,
                pretrain_steps: None,
                pretrain_retention: None,
            }),
        }
    }

    write_reward_curve(&out_dir.join("reward_curve.csv"), &variants, &ok)?;
    let manifest = Manifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        task: cfg.task.clone(),
        retention_task: cfg.retention_task(),
        steps: cfg.steps,
        final_window: cfg.final_window,
        variants,
        runs: records,
    };
    write_file(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok((manifest, ok))
}
