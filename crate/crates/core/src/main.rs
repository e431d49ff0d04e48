use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use colorblocks::curriculum::CurriculumLevel;
use colorblocks::error::{Error, Result};
use colorblocks::harness::{self, Algorithm, Checkpoint, Control, ExpertKind, TrainConfig};
use colorblocks::neural::gradcheck;
use colorblocks::rollout::SceneSource;
use colorblocks::task::EnvKind;
use colorblocks::trace::{replay, Trace};

#[derive(Parser)]
#[command(name = "colorblocks", version, about = "Train and evaluate block-pushing agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Test,
    Finals,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write metrics, a run log, checkpoints and a trace.
    Train {
        #[arg(long, default_value = "blocks-touch")]
        env: String,
        #[arg(long, default_value = "ddpg")]
        algo: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Flat `key = value` configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Two-block DDPG checkpoint to use as the expert.
        #[arg(long)]
        expert: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with deterministic actions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "finals")]
        mode: Mode,
        /// Curriculum level for test mode (defaults to the checkpoint's level).
        #[arg(long)]
        level: Option<usize>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Use challenge scenes instead of curriculum scenes.
        #[arg(long)]
        challenge: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-simulate a trace and print every step as JSON.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Finite-difference check of every network architecture.
    Gradcheck {
        #[arg(long, default_value_t = 256)]
        hidden: usize,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 100)]
        coords: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn train_cmd(
    env: &str,
    algo: &str,
    epochs: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
    config: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    expert: Option<PathBuf>,
) -> Result<()> {
    let kind: EnvKind = env.parse()?;
    let algorithm: Algorithm = algo.parse()?;
    let mut cfg = TrainConfig::new(kind, algorithm);
    if let Some(path) = &config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(p) = expert {
        cfg.imitation.expert = ExpertKind::Trained;
        cfg.imitation.expert_checkpoint = Some(p);
    }
    let out = out_dir.unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}-seed{}", cfg.algorithm, cfg.env.kind, cfg.seed)));
    println!("{}", harness::METRICS_HEADER);
    let outcome = harness::train_with(&cfg, Some(&out), None, |s| {
        println!("{}", s.csv_row());
        Control::Continue
    })?;
    let summary = outcome.log.summary.expect("summary is written");
    println!(
        "done: {} epochs, {} episodes, {} batches, final level {}, best finals {:.3}; outputs in {}",
        summary.epochs_run,
        summary.total_episodes,
        summary.total_batches,
        summary.final_level,
        summary.best_finals_rate,
        out.display()
    );
    Ok(())
}

fn eval_cmd(checkpoint: PathBuf, mode: Mode, level: Option<usize>, episodes: usize, challenge: bool, seed: u64) -> Result<()> {
    if episodes == 0 {
        return Err(Error::config("--episodes must be at least 1"));
    }
    let ck = Checkpoint::load(&checkpoint)?;
    let schedule = ck.curriculum.schedule()?;
    let pick = |i: usize| -> Result<CurriculumLevel> {
        schedule.levels.get(i).copied().ok_or_else(|| Error::config(format!("level {i} outside 0..{}", schedule.levels.len())))
    };
    let lvl = match mode {
        Mode::Test => pick(level.unwrap_or(ck.level))?,
        Mode::Finals => schedule.last(),
    };
    let source = if challenge { SceneSource::Challenge(lvl) } else { SceneSource::Level(lvl) };
    let mut rng = harness::stream_rng(seed, 0);
    let rate = harness::evaluate(&ck.env, ck.agent.policy(), source, episodes, &mut rng)?;
    let label = if challenge { "challenge" } else if matches!(mode, Mode::Test) { "test" } else { "finals" };
    println!("{label} level {} success rate {rate:.4} over {episodes} episodes", lvl.index);
    Ok(())
}

fn replay_cmd(path: PathBuf) -> Result<()> {
    let file = std::fs::File::open(&path).map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    let trace = Trace::read(std::io::BufReader::new(file))?;
    let mismatch = replay(&trace, |step| {
        println!("{}", serde_json::to_string(step)?);
        Ok(())
    })?;
    match mismatch {
        None => Ok(()),
        Some(m) => Err(Error::RunFailure(format!("replay diverged from the trace at step {}", m.step_index))),
    }
}

fn gradcheck_cmd(hidden: usize, layers: usize, coords: usize, seed: u64) -> Result<()> {
    let mut rng = harness::stream_rng(seed, 0);
    let reports = gradcheck::check_all(hidden, layers, coords, &mut rng)?;
    let mut ok = true;
    for r in &reports {
        ok &= r.passed();
        println!(
            "{} {:?}: checked {} kinks {} failures {} max relative error {:.3e} {}",
            r.name,
            r.widths,
            r.checked,
            r.kinks,
            r.failures,
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAILED" }
        );
    }
    if ok {
        Ok(())
    } else {
        Err(Error::RunFailure("finite-difference check failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { env, algo, epochs, seed, workers, config, out_dir, expert } => {
            train_cmd(&env, &algo, epochs, seed, workers, config, out_dir, expert)
        }
        Command::Eval { checkpoint, mode, level, episodes, challenge, seed } => eval_cmd(checkpoint, mode, level, episodes, challenge, seed),
        Command::Replay { trace } => replay_cmd(trace),
        Command::Gradcheck { hidden, layers, coords, seed } => gradcheck_cmd(hidden, layers, coords, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
