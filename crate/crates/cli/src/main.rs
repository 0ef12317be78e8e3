use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use gameirl::pipeline::{self, Logger, RunConfig, KEYS};
use gameirl::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn flag_name(key: &str) -> &'static str {
    Box::leak(key.replace('_', "-").into_boxed_str())
}

fn path_arg(name: &'static str, help: &'static str, required: bool) -> Arg {
    Arg::new(name).long(name).value_name("PATH").value_parser(clap::value_parser!(PathBuf)).required(required).help(help)
}

fn config_id(key: &str) -> &'static str {
    Box::leak(format!("config.{key}").into_boxed_str())
}

/// Adds `--config` and one flag per config key, except keys whose flag a
/// command already uses for an input (`--demos` is a path for `train-irl`).
fn with_config(cmd: Command) -> Command {
    let cmd = cmd.arg(path_arg("config", "key = value config file (CLI flags take precedence)", false));
    KEYS.iter().fold(cmd, |cmd, k| {
        let flag = flag_name(k.key);
        if cmd.get_arguments().any(|a| a.get_long() == Some(flag)) {
            return cmd;
        }
        cmd.arg(
            Arg::new(config_id(k.key))
                .long(flag)
                .value_name("VALUE")
                .allow_negative_numbers(true)
                .help(format!("{} [default: {}]", k.help, k.default))
                .help_heading("Config"),
        )
    })
}

fn cli() -> Command {
    let out = || path_arg("out", "output directory", true);
    Command::new("gameirl")
        .about("Adversarial IRL from pixels on a Catcher game")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands(
            [
                Command::new("train-expert").about("Train a PPO expert on the ground-truth reward").arg(out()),
                Command::new("collect-demos")
                    .about("Sample training and held-out demonstrations from an expert")
                    .arg(path_arg("expert", "expert policy checkpoint stem", true))
                    .arg(out()),
                Command::new("collect-random").about("Collect random-play frame corpora").arg(out()),
                Command::new("train-ae")
                    .about("Train an autoencoder (mode from --ae-mode)")
                    .arg(path_arg("corpus", "frame corpus stem", true))
                    .arg(out()),
                Command::new("train-irl")
                    .about("Train adversarial IRL from demonstrations")
                    .arg(path_arg("demos", "training demonstrations stem", true))
                    .arg(path_arg("heldout", "held-out demonstrations stem for the per-round FPR", false))
                    .arg(path_arg("ae", "autoencoder checkpoint stem (encoded variant)", false))
                    .arg(out()),
                Command::new("evaluate")
                    .about("Ground-truth return of a policy and/or autoencoder reconstruction errors")
                    .arg(path_arg("policy", "policy checkpoint stem", false))
                    .arg(path_arg("pixel-ae", "pixel-class autoencoder stem", false).requires_all(["mse-ae", "corpus"]))
                    .arg(path_arg("mse-ae", "conventional autoencoder stem", false).requires("pixel-ae"))
                    .arg(path_arg("corpus", "held-out frame corpus stem", false).requires("pixel-ae"))
                    .group(clap::ArgGroup::new("what").args(["policy", "pixel-ae"]).required(true).multiple(true))
                    .arg(path_arg("out", "directory for eval.json / reconstruction.json", false)),
                Command::new("probe-fpr")
                    .about("Held-out false positive rate of an IRL run's discriminator")
                    .arg(path_arg("run", "IRL run directory", true))
                    .arg(path_arg("heldout", "held-out demonstrations stem", true))
                    .arg(path_arg("out", "directory for fpr.json", false)),
                Command::new("grid")
                    .about("Ablation grid over variant, dataset mode and discriminator input")
                    .arg(path_arg("demos", "training demonstrations stem", true))
                    .arg(path_arg("heldout", "held-out demonstrations stem", true))
                    .arg(path_arg("ae", "autoencoder checkpoint stem (encoded cells)", false))
                    .arg(out()),
                Command::new("plot")
                    .about("Learning curves, merged history and FPR-vs-dataset plots")
                    .arg(path_arg("runs", "IRL run directories", true).num_args(1..))
                    .arg(out()),
                Command::new("pipeline")
                    .about("Expert, demos, corpora, autoencoders, IRL, evaluation and plots")
                    .arg(out())
                    .arg(Arg::new("resume").long("resume").action(ArgAction::SetTrue).help("skip stages whose artifacts exist")),
            ]
            .map(with_config),
        )
}

fn config(m: &ArgMatches) -> Result<RunConfig> {
    let overrides: Vec<(String, String)> =
        KEYS.iter()
        .filter_map(|k| m.try_get_one::<String>(config_id(k.key)).ok().flatten().map(|v| (k.key.to_string(), v.clone())))
        .collect();
    RunConfig::resolve(m.get_one::<PathBuf>("config").map(PathBuf::as_path), &overrides)
}

fn path<'a>(m: &'a ArgMatches, name: &str) -> &'a std::path::Path {
    m.get_one::<PathBuf>(name).expect("required by clap")
}

fn opt_path<'a>(m: &'a ArgMatches, name: &str) -> Option<&'a std::path::Path> {
    m.get_one::<PathBuf>(name).map(PathBuf::as_path)
}

fn run(name: &str, m: &ArgMatches) -> Result<()> {
    let cfg = config(m)?;
    let mut log = Logger::default();
    match name {
        "train-expert" => {
            let o = pipeline::train_expert(&cfg, path(m, "out"), &mut log)?;
            println!("{}", serde_json::to_string_pretty(&o)?);
        }
        "collect-demos" => pipeline::cmd_collect_demos(&cfg, path(m, "expert"), path(m, "out"), &mut log)?,
        "collect-random" => pipeline::cmd_collect_random(&cfg, path(m, "out"), &mut log)?,
        "train-ae" => {
            pipeline::cmd_train_ae(&cfg, cfg.ae_mode()?, path(m, "corpus"), path(m, "out"), &mut log)?;
        }
        "train-irl" => {
            let irl = cfg.irl_config()?;
            pipeline::cmd_train_irl(&cfg, &irl, path(m, "demos"), opt_path(m, "heldout"), opt_path(m, "ae"), path(m, "out"), &mut log)?;
        }
        "evaluate" => {
            if let Some(policy) = opt_path(m, "policy") {
                let r = pipeline::cmd_evaluate(&cfg, policy, opt_path(m, "out"))?;
                println!("{}", serde_json::to_string_pretty(&r)?);
            }
            if let Some(pixel) = opt_path(m, "pixel-ae") {
                let r = pipeline::cmd_compare_ae(&cfg, pixel, path(m, "mse-ae"), path(m, "corpus"), opt_path(m, "out"))?;
                println!("{}", serde_json::to_string_pretty(&r)?);
            }
        }
        "probe-fpr" => {
            let r = pipeline::cmd_probe_fpr(path(m, "run"), path(m, "heldout"), opt_path(m, "out"))?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        "grid" => {
            let rows = pipeline::cmd_grid(&cfg, path(m, "demos"), path(m, "heldout"), opt_path(m, "ae"), path(m, "out"), &mut log)?;
            let failed = rows.iter().filter(|r| r.status != gameirl::eval::STATUS_OK).count();
            println!("{} cells, {failed} failed", rows.len());
        }
        "plot" => {
            let runs: Vec<PathBuf> = m.get_many::<PathBuf>("runs").expect("required by clap").cloned().collect();
            let out = pipeline::cmd_plot(&runs, path(m, "out"))?;
            for p in &out.learning_curves {
                println!("{}", p.display());
            }
        }
        "pipeline" => {
            let r = pipeline::cmd_pipeline(&cfg, path(m, "out"), m.get_flag("resume"), false)?;
            println!("ran: {}; skipped: {}", r.ran.join(", "), r.skipped.join(", "));
        }
        other => return Err(Error::Config(format!("unknown command {other}"))),
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match run(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
