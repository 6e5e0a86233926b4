use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clwb::config::{ExperimentConfig, RouteKind, ScorerKind};
use clwb::pipeline;
use clwb::CliError;
use clwb_core::theory::suites::replay;

#[derive(Parser)]
#[command(name = "clwb", version, about = "Class-incremental learning workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the randomized entropy-identity and bound suites.
    Verify {
        /// Suite name, comma-separated list, or `all`.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Re-run one trial seed of a single suite and print the instance.
        #[arg(long)]
        replay: Option<u64>,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Train every task in order and write per-task and final checkpoints.
    Train(Common),
    /// Score a checkpoint and write a report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/final.clwb`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// msp | odin | rotation-ensemble
        #[arg(long)]
        scorer: Option<String>,
        /// concat-argmax | compose | calibrated
        #[arg(long)]
        route: Option<String>,
    },
    /// Fit per-task (α, β) on a memory buffer and report CIL before and after.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        scorer: Option<String>,
    },
    /// Collect every report in a directory into summary.csv.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Verify { suite, trials, seed, replay: Some(trial_seed), .. } => {
            let _ = (trials, seed);
            let suites = pipeline::parse_suites(&suite)?;
            let [s] = suites[..] else {
                return Err(CliError::Usage("--replay needs exactly one --suite".into()));
            };
            let (instance, verdict) = replay(s, trial_seed);
            println!("{s} trial seed {trial_seed}\n  instance: {instance}");
            match verdict {
                Ok(v) => {
                    println!("  verdict: {}", if v { "holds" } else { "violated" });
                    Ok(v)
                }
                Err(e) => {
                    println!("  error: {e}");
                    Ok(false)
                }
            }
        }
        Command::Verify { suite, trials, seed, replay: None, inject_fault } => {
            let suites = pipeline::parse_suites(&suite)?;
            let outcomes = pipeline::cmd_verify(&suites, seed, trials, inject_fault)?;
            let mut ok = true;
            for o in &outcomes {
                match &o.counterexample {
                    None => println!("{}: {}/{} passed", o.suite, o.passed, o.trials),
                    Some(c) => {
                        ok = false;
                        println!("{}: counterexample at trial {} after {} passes", o.suite, c.trial, o.passed);
                        println!("  replay: clwb verify --suite {} --replay {}", o.suite, c.trial_seed);
                        println!("  instance: {}", c.instance);
                        println!("  reason: {}", c.reason);
                    }
                }
            }
            Ok(ok)
        }
        Command::Train(common) => {
            let cfg = common.load()?;
            let t0 = std::time::Instant::now();
            let out = pipeline::cmd_train(&cfg)?;
            for (k, t) in out.log.tasks.iter().enumerate() {
                let last = |v: &[f64]| v.last().map_or("-".to_string(), |x| format!("{x:.4}"));
                println!(
                    "task {k}: loss {} reg {} contrastive {} -> {}",
                    last(&t.trace.epoch_loss),
                    last(&t.trace.epoch_reg),
                    last(&t.trace.contrastive_loss),
                    out.task_checkpoints[k].display()
                );
            }
            println!("final checkpoint {} ({:.1}s)", out.final_checkpoint.display(), t0.elapsed().as_secs_f64());
            Ok(true)
        }
        Command::Eval { common, checkpoint, scorer, route } => {
            let cfg = common.load()?;
            let ck = checkpoint.unwrap_or_else(|| pipeline::final_checkpoint_path(&cfg.out));
            let scorer = scorer.as_deref().map(ScorerKind::parse).transpose()?;
            let route = route.as_deref().map(RouteKind::parse).transpose()?;
            let t0 = std::time::Instant::now();
            let (r, path) = pipeline::cmd_eval(&cfg, &ck, scorer, route)?;
            let elapsed = t0.elapsed().as_secs_f64();
            let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(" ");
            println!("{}", r.method);
            println!("  TIL {:.1} [{}]", r.til, fmt(&r.til_per_task));
            println!("  CIL {:.1}", r.cil);
            println!("  AUC {:.1} [{}]", 100.0 * r.avg_auc, fmt(&r.auc_per_task.iter().map(|a| 100.0 * a).collect::<Vec<_>>()));
            println!(
                "  H_WP {:.4} + H_TP {:.4} = H_CIL {:.4}",
                r.entropy.mean_h_wp, r.entropy.mean_h_tp, r.entropy.mean_h_cil
            );
            if let Some(f) = r.forgetting.last() {
                println!("  forgetting F^{} = {:.2}", f.t, f.rate);
            }
            let timing = path.with_extension("timing.json");
            clwb::report::write_atomic(&timing, format!("{{\"wall_clock_s\": {elapsed:.3}}}\n").as_bytes())?;
            println!("report {} ({elapsed:.1}s)", path.display());
            Ok(true)
        }
        Command::Calibrate { common, checkpoint, scorer } => {
            let cfg = common.load()?;
            let ck = checkpoint.unwrap_or_else(|| pipeline::final_checkpoint_path(&cfg.out));
            let scorer = scorer.as_deref().map(ScorerKind::parse).transpose()?;
            let (f, path) = pipeline::cmd_calibrate(&cfg, &ck, scorer)?;
            println!("buffer {} samples, {} outputs", f.buffer_size, f.scorer);
            println!("  loss {:.4} -> {:.4}", f.initial_loss, f.final_loss);
            println!("  alpha {:?}\n  beta  {:?}", f.params.alpha, f.params.beta);
            println!("  CIL {:.1} -> {:.1} (Δ {:+.1})", f.cil_before, f.cil_after, f.delta_cil);
            println!("params {}", path.display());
            Ok(true)
        }
        Command::Report { out } => {
            let (csv, path) = pipeline::cmd_report(&out)?;
            print!("{csv}");
            println!("summary {}", path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("clwb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
