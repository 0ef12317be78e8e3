use std::fs;
use std::path::Path;

use gameirl::envs::CatcherConfig;
use gameirl::irl::DemoSet;
use gameirl::nets::PolicyNet;
use gameirl::pipeline::*;
use gameirl::Error;

/// Short episodes and tiny budgets so every stage finishes in seconds.
fn tiny(extra: &[(&str, &str)]) -> RunConfig {
    let mut cli: Vec<(String, String)> = [
        ("episode_length", "90"),
        ("rollout_length", "64"),
        ("ppo_minibatch", "64"),
        ("expert_steps", "128"),
        ("expert_window", "1"),
        ("expert_eval_episodes", "1"),
        ("expert_threshold_frac", "-1"),
        ("demos", "2"),
        ("heldout_demos", "2"),
        ("random_frames", "64"),
        ("heldout_frames", "16"),
        ("ae_epochs", "1"),
        ("ae_classes", "3"),
        ("ae_embed_dim", "4"),
        ("rounds", "1"),
        ("samples_per_label", "16"),
        ("disc_minibatch", "16"),
        ("eval_episodes", "1"),
        ("recon_grid_frames", "2"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    cli.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    RunConfig::resolve(None, &cli).unwrap()
}

fn quiet() -> Logger {
    let mut log = Logger::default();
    log.quiet = true;
    log
}

fn sample_demos(n: usize, with_rewards: bool) -> DemoSet {
    let net = PolicyNet::new(4);
    let p = net.init::<f32>(0).unwrap();
    let cfg = CatcherConfig { episode_length: 20, ..Default::default() };
    let mut d = collect_demos(&net, &p, cfg, n, 5, false).unwrap();
    if !with_rewards {
        d.trajectories.iter_mut().for_each(|t| t.rewards = None);
    }
    d
}

#[test]
fn archive_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for rewards in [true, false] {
        let d = sample_demos(8, rewards);
        assert_eq!(d.count(), 8);
        let stem = dir.path().join(format!("demos_{rewards}"));
        save_trajectories(&d, &stem, 5).unwrap();
        let back = load_trajectories(&stem).unwrap();
        assert_eq!(back, d);
        let m = load_manifest(&stem).unwrap();
        assert_eq!(m.n_trajectories, 8);
        assert_eq!(m.has_rewards, rewards);
        assert_eq!(fs::metadata(stem.with_extension("bin")).unwrap().len() as usize, m.blob_len());
    }
}

fn field_of(e: Error) -> String {
    match e {
        Error::Format { field, .. } => field,
        other => panic!("expected a format error, got {other}"),
    }
}

#[test]
fn archive_damage_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("d");
    save_trajectories(&sample_demos(2, true), &stem, 0).unwrap();
    let blob = fs::read(stem.with_extension("bin")).unwrap();
    fs::write(stem.with_extension("bin"), &blob[..blob.len() - 3]).unwrap();
    assert_eq!(field_of(load_trajectories(&stem).unwrap_err()), "blob");
    fs::write(stem.with_extension("bin"), &blob).unwrap();

    let manifest = fs::read_to_string(stem.with_extension("json")).unwrap();
    let edit = |from: &str, to: &str| {
        assert!(manifest.contains(from), "{from}");
        fs::write(stem.with_extension("json"), manifest.replacen(from, to, 1)).unwrap();
        field_of(load_trajectories(&stem).unwrap_err())
    };
    assert_eq!(edit("\"n_trajectories\": 2", "\"n_trajectories\": 3"), "lengths");
    assert_eq!(edit("\"actions\": \"int32\"", "\"actions\": \"int64\""), "dtypes.actions");
    assert_eq!(edit("84,\n    84,", "84,\n    80,"), "obs_shape");
    assert_eq!(edit("\"seed\"", "\"sed\""), "manifest");
}

#[test]
fn config_file_precedence_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.txt");
    fs::write(&file, "# experiment\nrounds = 7\nseed = 3 # base\n").unwrap();
    let cfg = RunConfig::resolve(Some(&file), &[("seed".into(), "9".into())]).unwrap();
    assert_eq!((cfg.int("rounds"), cfg.seed(), cfg.int("stack")), (7, 9, 4));
    cfg.write_snapshot(dir.path()).unwrap();
    let again = RunConfig::resolve(Some(&dir.path().join(CONFIG_SNAPSHOT)), &[]).unwrap();
    assert_eq!(again, cfg);
    fs::write(&file, "roundz = 7\n").unwrap();
    let e = RunConfig::resolve(Some(&file), &[]).unwrap_err();
    assert_eq!(exit_code(&e), 1);
    assert!(e.to_string().contains("roundz"));
}

#[test]
fn unreachable_expert_gate_fails_but_keeps_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&[("episode_length", "200"), ("expert_threshold_frac", "1.1")]);
    let e = train_expert(&cfg, dir.path(), &mut quiet()).unwrap_err();
    assert!(matches!(e, Error::ThresholdUnmet(_)), "{e}");
    assert_eq!(exit_code(&e), 2);
    assert!(dir.path().join("policy.json").exists() && dir.path().join("policy.bin").exists());
}

fn read_all(root: &Path, rel: &[&str]) -> Vec<Vec<u8>> {
    rel.iter().map(|r| fs::read(root.join(r)).unwrap_or_else(|e| panic!("{r}: {e}"))).collect()
}

#[test]
fn pipeline_runs_every_stage_resumes_and_reproduces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny(&[("variant", "encoded"), ("dataset_mode", "small")]);
    let r = cmd_pipeline(&cfg, a.path(), false, true).unwrap();
    assert_eq!(r.ran.len(), STAGES.len());
    for (_, artifacts) in STAGES {
        for f in *artifacts {
            assert!(a.path().join(f).exists(), "{f}");
        }
    }
    let train = load_manifest(&a.path().join("demos/train")).unwrap();
    let held = load_manifest(&a.path().join("demos/heldout")).unwrap();
    assert!(train.episode_seeds.iter().all(|s| !held.episode_seeds.contains(s)));

    let stamp = fs::metadata(a.path().join("expert/policy.bin")).unwrap().modified().unwrap();
    let r = cmd_pipeline(&cfg, a.path(), true, true).unwrap();
    assert!(r.ran.is_empty(), "{r:?}");
    assert_eq!(r.skipped.len(), STAGES.len());
    assert_eq!(fs::metadata(a.path().join("expert/policy.bin")).unwrap().modified().unwrap(), stamp);

    cmd_pipeline(&cfg, b.path(), false, true).unwrap();
    let files = [
        "expert/policy.bin",
        "expert/history.csv",
        "demos/train.bin",
        "ae/pixel_class/model.bin",
        "ae/mse/model.bin",
        "irl/reward.bin",
        "irl/policy.bin",
        "irl/history.csv",
        "eval/eval.json",
        "eval/fpr.json",
        "plots/history_merged.csv",
    ];
    assert_eq!(read_all(a.path(), &files), read_all(b.path(), &files));
}

#[test]
fn stage_failure_names_stage_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&[("episode_length", "200"), ("expert_threshold_frac", "1.1")]);
    let e = cmd_pipeline(&cfg, dir.path(), false, true).unwrap_err();
    match &e {
        Error::Stage { stage, log, .. } => {
            assert_eq!(stage, "train-expert");
            assert!(log.exists());
        }
        other => panic!("{other}"),
    }
    assert_eq!(exit_code(&e), 2);
}
