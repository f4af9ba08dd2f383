use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hrl_rec::agent::{gradient_suite, FD_TOLERANCE};
use hrl_rec::baselines::{build_variant, Variant};
use hrl_rec::env::{EnvConfig, Environment};
use hrl_rec::harness::{
    evaluate, goal_separability, run_experiment, run_single, train, variant_base, MetricsRecord, NoveltyMetric,
    MIN_SESSIONS,
};
use hrl_rec::io::{
    env_overrides, export_goals, histories_from_parameter_set, histories_to_parameter_set, load_checkpoint,
    load_config, parse_config, save_checkpoint, write_experiment, write_metrics, write_train_log, ExperimentConfig,
    Timing,
};
use hrl_rec::{Error, Result};

/// Hierarchical RL recommender experiments on a simulated user population.
///
/// Config keys can also be set through `HRLREC_<SECTION>__<KEY>` environment
/// variables, e.g. `HRLREC_ENV__NUM_USERS=50`.
#[derive(Parser)]
#[command(name = "hrl-rec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Every configured variant on every seed; writes the results table,
    /// per-seed metrics, goal exports, and a manifest.
    Run(Common),
    /// Trains one variant on one seed and saves its checkpoint.
    Train(Common),
    /// Evaluates a saved checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        saved: Saved,
    },
    /// Finite-difference checks of every differentiable block.
    GradCheck {
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Writes the (goal, intent, tercile) table of one trained run.
    ExportGoals {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        saved: Saved,
        /// Output CSV; defaults to `<out>/goals_<variant>_seed<n>.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Prints the fully defaulted config.
    PrintConfig(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single seed; overrides `seeds`.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Variant tag; repeat for several.
    #[arg(long = "variant", value_parser = parse_variant)]
    variants: Vec<Variant>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// 10,000 users by 10,000 items.
    #[arg(long)]
    paper_scale: bool,
    /// Drop consumed items from the candidate set.
    #[arg(long)]
    mask_history: bool,
    #[arg(long, value_enum)]
    novelty_metric: Option<NoveltyFlag>,
}

#[derive(Args, Clone, Default)]
struct Saved {
    /// Policy checkpoint written by `train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Consumption histories written by `train`.
    #[arg(long)]
    histories: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoveltyFlag {
    Distance,
    OneMinus,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => load_config(path)?,
        None => parse_config("", env_overrides(std::env::vars()))?,
    };
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    if let Some(seeds) = &common.seeds {
        config.seeds = seeds.clone();
    }
    if !common.variants.is_empty() {
        config.variants = common.variants.clone();
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if common.paper_scale {
        let scale = EnvConfig::large_scale();
        config.env.num_users = scale.num_users;
        config.env.num_items = scale.num_items;
    }
    if common.mask_history {
        config.env.mask_history = true;
    }
    if let Some(flag) = common.novelty_metric {
        config.eval.novelty_metric = match flag {
            NoveltyFlag::Distance => NoveltyMetric::Distance,
            NoveltyFlag::OneMinus => NoveltyMetric::OneMinusDistance,
        };
    }
    config.validate()?;
    Ok(config)
}

/// The first configured seed and variant.
fn single(config: &ExperimentConfig) -> (u64, Variant) {
    (config.seeds[0], config.variants[0])
}

fn stem(variant: Variant, seed: u64) -> String {
    format!("{variant}_seed{seed}")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn print_table(table: &[MetricsRecord]) {
    println!(
        "{:<30} {:>18} {:>18} {:>18} {:>18}",
        "variant", "avg_reward", "hit_rate@k", "diversity", "novelty"
    );
    for r in table {
        let cell = |s: &hrl_rec::harness::MetricSummary| format!("{:.4} ({:.4})", s.mean, s.std_error);
        println!(
            "{:<30} {:>18} {:>18} {:>18} {:>18}",
            r.variant,
            cell(&r.avg_reward),
            cell(&r.hit_rate_at_k),
            cell(&r.diversity),
            cell(&r.novelty)
        );
    }
}

fn cmd_run(common: &Common) -> Result<()> {
    let config = resolve(common)?;
    let started = Instant::now();
    let results = run_experiment(&config)?;
    let timings = vec![Timing {
        stage: "run_experiment".into(),
        seconds: started.elapsed().as_secs_f64(),
    }];
    let manifest = write_experiment(&config, &results, &config.output_dir, timings)?;
    print_table(&results.table);
    println!(
        "wrote {} files to {}",
        manifest.files.len() + 1,
        config.output_dir.display()
    );
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let config = resolve(common)?;
    let (seed, variant) = single(&config);
    let mut env = Environment::generate(&config.env, seed)?;
    let mut policy = build_variant(variant, &variant_base(&config, seed))?;
    let out = train(&mut env, policy.as_mut(), &config.train)?;
    let dir = &config.output_dir;
    create_dir(dir)?;
    let name = stem(variant, seed);
    save_checkpoint(&policy.parameters()?, &dir.join(format!("{name}.ckpt")))?;
    save_checkpoint(
        &histories_to_parameter_set(&out.histories)?,
        &dir.join(format!("{name}.histories.ckpt")),
    )?;
    write_train_log(&out.log, &dir.join(format!("train_log_{name}.jsonl")))?;
    let session_updates = out.log.iter().filter(|r| r.session_loss.is_some()).count();
    println!(
        "{name}: {} transitions, {} updates, {session_updates} session updates -> {}",
        out.log.len(),
        policy.updates(),
        dir.display()
    );
    Ok(())
}

/// Loads a saved run, or trains one when no checkpoint is given.
fn trained_run(
    config: &ExperimentConfig,
    saved: &Saved,
) -> Result<(Environment, Box<dyn hrl_rec::baselines::Policy>, Vec<hrl_rec::env::UserHistory>)> {
    let (seed, variant) = single(config);
    let mut env = Environment::generate(&config.env, seed)?;
    let mut policy = build_variant(variant, &variant_base(config, seed))?;
    match (&saved.checkpoint, &saved.histories) {
        (Some(ckpt), Some(hist)) => {
            policy.load_parameters(&load_checkpoint(ckpt)?)?;
            let histories = histories_from_parameter_set(&load_checkpoint(hist)?)?;
            Ok((env, policy, histories))
        }
        (None, None) => {
            let out = train(&mut env, policy.as_mut(), &config.train)?;
            Ok((env, policy, out.histories))
        }
        _ => Err(Error::Argument("--checkpoint and --histories go together".into())),
    }
}

fn cmd_evaluate(common: &Common, saved: &Saved) -> Result<()> {
    let config = resolve(common)?;
    let (seed, variant) = single(&config);
    let (mut env, mut policy, histories) = trained_run(&config, saved)?;
    let out = evaluate(&mut env, policy.as_mut(), &histories, &config.eval)?;
    let record = MetricsRecord::aggregate(variant.tag(), &[(seed, out.metrics)])?;
    let dir = &config.output_dir;
    create_dir(dir)?;
    let path = dir.join(format!("metrics_{}.jsonl", stem(variant, seed)));
    write_metrics(&record, &path)?;
    print_table(std::slice::from_ref(&record));
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_export_goals(common: &Common, saved: &Saved, output: Option<&Path>) -> Result<()> {
    let config = resolve(common)?;
    let (seed, variant) = single(&config);
    let report = if saved.checkpoint.is_none() && saved.histories.is_none() {
        run_single(&config, seed, variant)?.separability
    } else {
        let (mut env, mut policy, histories) = trained_run(&config, saved)?;
        let out = evaluate(&mut env, policy.as_mut(), &histories, &config.eval)?;
        if out.goals.len() >= MIN_SESSIONS {
            Some(goal_separability(&out.goals, seed, config.eval.null_shuffles)?)
        } else {
            None
        }
    };
    let report = report.ok_or_else(|| {
        Error::Argument(format!(
            "`{variant}` logged fewer than {MIN_SESSIONS} goals; only hierarchical variants propose goals"
        ))
    })?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            create_dir(&config.output_dir)?;
            config.output_dir.join(format!("goals_{}.csv", stem(variant, seed)))
        }
    };
    export_goals(&report, &path)?;
    println!(
        "{} sessions, probe R² {:.4}, distance ratio {:.4}, shuffled R² < 0.05 in {:.0}% -> {}",
        report.samples.len(),
        report.probe_r2,
        report.distance_ratio,
        100.0 * report.null_fraction_below(0.05),
        path.display()
    );
    Ok(())
}

fn cmd_grad_check(probes: usize, seed: u64) -> Result<bool> {
    let checks = gradient_suite(probes, seed)?;
    let mut ok = true;
    for c in &checks {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<14} probes {:>4}  max rel error {:.3e}  {status}", c.block, c.probes, c.max_rel_error);
        ok &= c.passed();
    }
    println!("tolerance {FD_TOLERANCE:e}: {}", if ok { "all blocks pass" } else { "failures" });
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(c) => cmd_run(c).map(|_| true),
        Command::Train(c) => cmd_train(c).map(|_| true),
        Command::Evaluate { common, saved } => cmd_evaluate(common, saved).map(|_| true),
        Command::GradCheck { probes, seed } => cmd_grad_check(*probes, *seed),
        Command::ExportGoals { common, saved, output } => {
            cmd_export_goals(common, saved, output.as_deref()).map(|_| true)
        }
        Command::PrintConfig(c) => resolve(c).and_then(|cfg| cfg.to_toml()).map(|text| {
            print!("{text}");
            true
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
