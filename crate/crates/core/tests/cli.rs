//! End-to-end checks of the command-line interface.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
train.cycles = 1
train.batches = 2
train.rollouts = 1
agent.hidden = 8
agent.layers = 2
agent.batch = 16
eval.test_episodes = 2
eval.finals_episodes = 2
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_colorblocks")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn train_tiny(dir: &Path) {
    let cfg = dir.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.join("run");
    let o = run(&[
        "train",
        "--env",
        "blocks-touch",
        "--algo",
        "ddpg",
        "--epochs",
        "1",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("epoch,level,train_rate,test_rate,finals_rate,mean_return,critic_loss,actor_loss,beta,seconds"));
}

#[test]
fn train_eval_and_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    train_tiny(dir.path());
    let run_dir = dir.path().join("run");
    for f in ["metrics.csv", "final.ckpt", "trace.ndjson", "runlog.json"] {
        assert!(run_dir.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let ckpt = run_dir.join("final.ckpt");
    let o = run(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "3"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("finals level 7 success rate"), "{}", stdout(&o));
    // Same seed, same answer.
    assert_eq!(stdout(&o), stdout(&run(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "3"])));

    let trace = run_dir.join("trace.ndjson");
    let o = run(&["replay", "--trace", trace.to_str().unwrap()]);
    assert!(o.status.success());
    let steps = stdout(&o).lines().count();
    assert!((1..=50).contains(&steps));
}

#[test]
fn tampered_trace_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    train_tiny(dir.path());
    let trace = dir.path().join("run/trace.ndjson");
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines.len() - 1;
    let mut step: serde_json::Value = serde_json::from_str(&lines[last]).unwrap();
    let x = step["state"]["effector"]["pos"]["x"].as_f64().unwrap();
    step["state"]["effector"]["pos"]["x"] = serde_json::json!(x + 1e-3);
    lines[last] = step.to_string();
    std::fs::write(&trace, lines.join("\n") + "\n").unwrap();
    let o = run(&["replay", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_inputs_exit_with_configuration_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(run(&["train", "--env", "blocks-stack", "--out-dir", out.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["train", "--algo", "ppo", "--out-dir", out.to_str().unwrap()]).status.code(), Some(2));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "agent.taus = 0.1\n").unwrap();
    assert_eq!(run(&["train", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]).status.code(), Some(2));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"definitely not a checkpoint").unwrap();
    assert_eq!(run(&["eval", "--checkpoint", junk.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn aggrevated_on_two_blocks_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = run(&["train", "--env", "blocks-touch", "--algo", "pggd-aggrevated", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_on_small_networks() {
    let o = run(&["gradcheck", "--hidden", "8", "--layers", "2", "--coords", "30"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.lines().count() >= 3);
    assert!(text.lines().all(|l| l.ends_with(" ok")), "{text}");
}
