use std::fs;
use std::path::Path;

use sgrpo_core::checkpoint;
use sgrpo_core::harness::{compare, run, ExperimentConfig, MetricRow, RunStatus};
use sgrpo_core::{Error, Variant};

fn config(out: &Path, extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
steps = 60
seeds = [0, 1]
variants = ["SFT", "GRPO", "SGRPO_UNCOND", "SGRPO_CGI"]
output_dir = "{}"
{extra}
[task]
kind = "Needle"
vocab_size = 4
seq_len = 3
num_prompts = 3
[train]
group_size = 4
[scorer]
kind = "ExactMatch"
"#,
        out.display()
    ))
    .unwrap()
}

fn read_rows(path: &Path) -> Vec<MetricRow> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run(&config(&a, "jobs = 4")).unwrap();
    run(&config(&b, "jobs = 1")).unwrap();
    let fa = files(&a);
    let fb = files(&b);
    assert_eq!(fa.len(), 3 + 8 * 2);
    for ((na, ca), (nb, cb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        if na != "manifest.json" {
            assert!(ca == cb, "{na} differs");
        }
    }
}

#[test]
fn metric_streams_follow_the_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let (manifest, results) = run(&cfg).unwrap();
    assert_eq!(manifest.runs.len(), 8);
    assert!(manifest.runs.iter().all(|r| r.status == RunStatus::Ok));
    assert_eq!(manifest.config_hash, cfg.hash());
    assert_eq!(results.len(), 8);
    for r in &manifest.runs {
        let rows = read_rows(&tmp.path().join(&r.run_id).join("metrics.jsonl"));
        assert_eq!(rows.len(), 60);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.step, i as u64);
            assert_eq!(row.prompt_id, i % 3);
            assert!((0.0..=1.0).contains(&row.injection_rate));
            assert!(row.wall_ms.is_none());
            match r.variant {
                Variant::Grpo | Variant::Sft => assert_eq!(row.injection_rate, 0.0),
                Variant::SgrpoUncond => assert_eq!(row.injection_rate, 1.0),
                Variant::SgrpoCgi => {}
            }
        }
        let ck = checkpoint::load(&tmp.path().join(&r.run_id).join("checkpoint.bin")).unwrap();
        assert_eq!(ck.shape().num_prompts, 3);
    }
    let curve = fs::read_to_string(tmp.path().join("reward_curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next().unwrap(), "step,SFT,GRPO,SGRPO_UNCOND,SGRPO_CGI");
    assert_eq!(lines.count(), 60);
}

#[test]
fn injection_rate_is_a_trailing_window() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "injection_window = 7");
    let (_, results) = run(&cfg).unwrap();
    for res in results.iter().filter(|r| r.record.variant == Variant::SgrpoCgi) {
        for (i, row) in res.rows.iter().enumerate() {
            let lo = (i + 1).saturating_sub(7);
            let window = &res.rows[lo..=i];
            let expected = window.iter().filter(|r| r.injected).count() as f64 / window.len() as f64;
            assert_eq!(row.injection_rate, expected);
        }
    }
}

#[test]
fn compare_with_itself_has_zero_differences() {
    let tmp = tempfile::tempdir().unwrap();
    run(&config(tmp.path(), "")).unwrap();
    let dir = tmp.path().to_path_buf();
    let report = compare(&[dir.clone(), dir]).unwrap();
    assert_eq!(report.rows.len(), 8);
    assert_eq!(report.diffs.len(), 8);
    assert!(report.diffs.iter().all(|d| d.is_zero()));
    assert!(report.to_text().contains("SGRPO_CGI"));
    assert_eq!(report.to_csv().lines().count(), 9);
}

#[test]
fn compare_refuses_different_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run(&config(&a, "")).unwrap();
    let mut other = config(&b, "");
    other.task.seed = 99;
    run(&other).unwrap();
    assert!(matches!(compare(&[a, b]), Err(Error::Input(_))));
    assert!(matches!(compare(&[]), Err(Error::Input(_))));
}

#[test]
fn unwritable_output_is_a_startup_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let err = run(&config(&blocker.join("out"), "")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn retention_is_pretrained_and_tracked() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(
        tmp.path(),
        "[retention]\nnum_prompts = 2\neval_every = 20\nsamples_per_prompt = 40",
    );
    cfg.variants = vec![Variant::Sft, Variant::SgrpoCgi];
    let (manifest, results) = run(&cfg).unwrap();
    assert_eq!(manifest.retention_task.as_ref().unwrap().id_offset, 3);
    for res in &results {
        assert!(res.record.pretrain_retention.unwrap() >= 0.95);
        let evals: Vec<_> = res.rows.iter().filter_map(|r| r.retention_success.map(|v| (r.step, v))).collect();
        assert_eq!(evals.iter().map(|e| e.0).collect::<Vec<_>>(), vec![19, 39, 59]);
        assert_eq!(res.params.shape().num_prompts, 5);
    }
}
