#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sgrpo_core::engine::{objective_and_gradient, RatioLevel, TrainConfig};
use sgrpo_core::policy::{PolicyParams, PolicySnapshot, Shape, SnapshotRole, Tensor};
use sgrpo_core::trajectory::{RewardRecord, TrajectoryGroup};

pub const FD_STEP: f64 = 1e-5;

pub fn random_params(rng: &mut ChaCha8Rng, shape: Shape, scale: f64) -> PolicyParams {
    let data = (0..shape.numel()).map(|_| rng.gen_range(-scale..scale)).collect();
    PolicyParams::from_logits(shape, data).unwrap()
}

pub fn perturbed(base: &PolicyParams, rng: &mut ChaCha8Rng, scale: f64) -> PolicyParams {
    let mut p = base.clone();
    for x in &mut p.logits.data {
        *x += rng.gen_range(-scale..scale);
    }
    p
}

/// Central finite-difference gradient of `f` at `params`.
pub fn numeric_grad(params: &PolicyParams, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..p.logits.data.len())
        .map(|i| {
            let x = p.logits.data[i];
            p.logits.data[i] = x + FD_STEP;
            let up = f(&p);
            p.logits.data[i] = x - FD_STEP;
            let down = f(&p);
            p.logits.data[i] = x;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|)` over whole vectors; 0 when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// A scored group sampled from `behavior` with random binary rewards, forced
/// to contain at least one success and one failure.
pub fn mixed_group(behavior: &PolicySnapshot, prompt: usize, g: usize, rng: &mut ChaCha8Rng) -> TrajectoryGroup {
    let members = (0..g).map(|_| behavior.params().sample(prompt, rng).unwrap()).collect();
    let mut group = TrajectoryGroup::new(prompt, members);
    let mut rewards: Vec<u8> = (0..g).map(|_| rng.gen_range(0..2)).collect();
    rewards[0] = 1;
    rewards[g - 1] = 0;
    group.rewards = rewards
        .into_iter()
        .map(|r| RewardRecord {
            raw_score: f64::from(r),
            reward: r,
            scorer_id: "test".into(),
        })
        .collect();
    group.estimate_advantages(1e-6).unwrap();
    group
}

/// Smallest distance of any importance ratio in the group to a kink of the
/// clipped surrogate (`1 - clip` or `1 + clip`).
pub fn distance_to_kink(params: &PolicyParams, group: &TrajectoryGroup, cfg: &TrainConfig) -> f64 {
    let mut d = f64::INFINITY;
    for m in &group.members {
        let (lp, total) = params.logprob(group.prompt_id, &m.seq).unwrap();
        let ratios: Vec<f64> = match cfg.ratio_level {
            RatioLevel::Sequence => vec![(total - m.seq_logprob).exp()],
            RatioLevel::Token => lp.iter().zip(&m.behavior_logprobs).map(|(a, b)| (a - b).exp()).collect(),
        };
        for r in ratios {
            d = d.min((r - (1.0 - cfg.clip_range)).abs()).min((r - (1.0 + cfg.clip_range)).abs());
        }
    }
    d
}

pub fn objective_value(
    params: &PolicyParams,
    behavior: &PolicySnapshot,
    reference: &PolicySnapshot,
    group: &TrajectoryGroup,
    cfg: &TrainConfig,
) -> f64 {
    objective_and_gradient(params, behavior, reference, group, cfg).unwrap().value
}

pub fn snapshot(p: &PolicyParams, role: SnapshotRole) -> PolicySnapshot {
    p.snapshot(role)
}

pub fn tensor_data(t: &Tensor) -> &[f64] {
    &t.data
}

/// Minimal HTTP/1.1 server. `reply` maps the request index and body to
/// `(status, body)`, or `None` to stall past any client timeout.
pub fn mock_server<F>(reply: F) -> (String, Arc<AtomicUsize>)
where
    F: Fn(usize, &str) -> Option<(u16, String)> + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            let n = counter.fetch_add(1, Ordering::SeqCst);
            match reply(n, &String::from_utf8_lossy(&body)) {
                Some((status, text)) => {
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                        text.len()
                    );
                }
                None => {
                    std::thread::sleep(std::time::Duration::from_millis(600));
                }
            }
        }
    });
    (format!("http://{addr}/score"), hits)
}
