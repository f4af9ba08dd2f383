use std::fs;

use sha2::{Digest, Sha256};

use hrl_rec::baselines::Variant;
use hrl_rec::harness::{run_experiment, run_single, MIN_SESSIONS};
use hrl_rec::io::{
    histories_from_parameter_set, histories_to_parameter_set, load_checkpoint, parse_config, save_checkpoint,
    write_experiment, RunManifest,
};

const SMALL: &str = r#"
variants = ["full", "ab2_no_hrl", "thompson", "random"]
seeds = [3, 4]
[env]
num_users = 40
num_items = 60
[agent]
state_dim = 8
goal_dim = 3
hidden = [12]
[train]
n_train = 12
[eval]
k = 4
n_test = 5
null_shuffles = 10
"#;

#[test]
fn experiment_outputs_match_their_manifest() {
    let config = parse_config(SMALL, Vec::<(String, String)>::new()).unwrap();
    let results = run_experiment(&config).unwrap();
    assert_eq!(results.table.len(), 4);
    assert_eq!(results.runs.len(), 8);

    let dir = tempfile::tempdir().unwrap();
    let manifest = write_experiment(&config, &results, dir.path(), Vec::new()).unwrap();
    let on_disk: RunManifest = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk, manifest);
    assert_eq!(manifest.config_hash, config.hash().unwrap());
    for f in &manifest.files {
        let bytes = fs::read(dir.path().join(&f.path)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), f.sha256, "{}", f.path);
    }

    let metrics = fs::read_to_string(dir.path().join("metrics_thompson.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.lines().last().unwrap().contains("\"aggregate\""));

    // One goal per test session start: t = 13 and t = 16 for every user.
    let goals = fs::read_to_string(dir.path().join("goals_full_seed3.csv")).unwrap();
    assert_eq!(goals.lines().count(), 1 + 2 * 40);
    assert!(!dir.path().join("goals_random_seed3.csv").exists());
    assert!(2 * 40 >= MIN_SESSIONS);

    let reread = parse_config(&fs::read_to_string(dir.path().join("config.toml")).unwrap(), Vec::<(String, String)>::new());
    assert_eq!(reread.unwrap(), config);
}

#[test]
fn saved_histories_resume_evaluation() {
    let config = parse_config(SMALL, Vec::<(String, String)>::new()).unwrap();
    let run = run_single(&config, 3, Variant::Full).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.ckpt");
    save_checkpoint(&histories_to_parameter_set(&run.train.histories).unwrap(), &path).unwrap();
    let back = histories_from_parameter_set(&load_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(back, run.train.histories);
    assert!(back.iter().all(|h| h.len() == config.train.n_train));
}
