//! Config files, checkpoints, and experiment outputs.
//!
//! Every file is written to a temporary sibling and renamed into place.
//!
//! Output directory of a run:
//!
//! | file | content |
//! |---|---|
//! | `config.toml` | the fully defaulted config |
//! | `results.tsv` | one row per variant: metric means and standard errors |
//! | `metrics_<variant>.jsonl` | one line per seed, then one aggregate line |
//! | `separability.jsonl` | goal/intent statistics per run with goals |
//! | `goals_<variant>_seed<n>.csv` | `g0..g{d-1},intent,tercile` per test session |
//! | `train_log_<variant>_seed<n>.jsonl` | per-transition log, when enabled |
//! | `manifest.json` | config hash, version, file checksums, timings |

mod checkpoint;
mod config;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, histories_from_parameter_set, histories_to_parameter_set, load_checkpoint,
    save_checkpoint, MAGIC,
};
pub use config::{env_overrides, load_config, parse_config, ExperimentConfig, ENV_PREFIX};

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{ExperimentResults, MetricsRecord, SeparabilityReport, Tercile, TrainRecord};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`. On failure the temporary file is removed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[derive(Serialize)]
struct SeedLine<'a> {
    kind: &'static str,
    variant: &'a str,
    seed: u64,
    avg_reward: f64,
    hit_rate_at_k: f64,
    diversity: f64,
    novelty: f64,
}

#[derive(Serialize)]
struct MeanSe {
    mean: f64,
    std_error: f64,
}

#[derive(Serialize)]
struct AggregateLine<'a> {
    kind: &'static str,
    variant: &'a str,
    runs: usize,
    avg_reward: MeanSe,
    hit_rate_at_k: MeanSe,
    diversity: MeanSe,
    novelty: MeanSe,
}

fn json_line<T: Serialize>(out: &mut String, value: &T) -> Result<()> {
    out.push_str(&serde_json::to_string(value).map_err(|e| Error::Argument(e.to_string()))?);
    out.push('\n');
    Ok(())
}

pub fn metrics_jsonl(record: &MetricsRecord) -> Result<String> {
    let mut out = String::new();
    for (i, &seed) in record.seeds.iter().enumerate() {
        let m = record
            .run(i)
            .ok_or_else(|| Error::shape("metrics record has fewer values than seeds"))?;
        json_line(
            &mut out,
            &SeedLine {
                kind: "seed",
                variant: &record.variant,
                seed,
                avg_reward: m.avg_reward,
                hit_rate_at_k: m.hit_rate_at_k,
                diversity: m.diversity,
                novelty: m.novelty,
            },
        )?;
    }
    let ms = |s: &crate::harness::MetricSummary| MeanSe {
        mean: s.mean,
        std_error: s.std_error,
    };
    json_line(
        &mut out,
        &AggregateLine {
            kind: "aggregate",
            variant: &record.variant,
            runs: record.seeds.len(),
            avg_reward: ms(&record.avg_reward),
            hit_rate_at_k: ms(&record.hit_rate_at_k),
            diversity: ms(&record.diversity),
            novelty: ms(&record.novelty),
        },
    )?;
    Ok(out)
}

/// One line per seed, then one aggregate line.
pub fn write_metrics(record: &MetricsRecord, path: &Path) -> Result<()> {
    write_atomic(path, metrics_jsonl(record)?.as_bytes())
}

fn csv_bytes<F>(delimiter: u8, fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(Vec::new());
    fill(&mut w).map_err(|e| Error::Argument(e.to_string()))?;
    w.into_inner().map_err(|e| Error::Argument(e.to_string()))
}

pub fn goals_csv(report: &SeparabilityReport) -> Result<Vec<u8>> {
    let dim = report.samples.first().map_or(0, |s| s.goal.len());
    csv_bytes(b',', |w| {
        let mut header: Vec<String> = (0..dim).map(|i| format!("g{i}")).collect();
        header.extend(["intent".to_string(), "tercile".to_string()]);
        w.write_record(&header)?;
        for s in &report.samples {
            let mut row: Vec<String> = s.goal.iter().map(|v| v.to_string()).collect();
            row.push(s.intent.to_string());
            row.push(Tercile::of(s.intent).label().to_string());
            w.write_record(&row)?;
        }
        Ok(())
    })
}

/// Header of goal dimensions, intent, and tercile label; one row per session.
pub fn export_goals(report: &SeparabilityReport, path: &Path) -> Result<()> {
    write_atomic(path, &goals_csv(report)?)
}

pub fn results_tsv(table: &[MetricsRecord]) -> Result<Vec<u8>> {
    csv_bytes(b'\t', |w| {
        w.write_record([
            "variant",
            "runs",
            "avg_reward",
            "avg_reward_se",
            "hit_rate_at_k",
            "hit_rate_at_k_se",
            "diversity",
            "diversity_se",
            "novelty",
            "novelty_se",
        ])?;
        for r in table {
            let mut row = vec![r.variant.clone(), r.seeds.len().to_string()];
            for s in [&r.avg_reward, &r.hit_rate_at_k, &r.diversity, &r.novelty] {
                row.push(s.mean.to_string());
                row.push(s.std_error.to_string());
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

pub fn write_train_log(log: &[TrainRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in log {
        json_line(&mut out, r)?;
    }
    write_atomic(path, out.as_bytes())
}

#[derive(Serialize)]
struct SeparabilityLine<'a> {
    variant: &'a str,
    seed: u64,
    sessions: usize,
    probe_r2: f64,
    intra_distance: f64,
    inter_distance: f64,
    distance_ratio: f64,
    null_r2_below_005: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config_hash: String,
    pub files: Vec<FileEntry>,
    pub timings: Vec<Timing>,
}

/// Writes every output of an experiment into `dir` and returns the manifest
/// (also written, as `manifest.json`).
pub fn write_experiment(
    config: &ExperimentConfig,
    results: &ExperimentResults,
    dir: &Path,
    timings: Vec<Timing>,
) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(String, Vec<u8>)> = vec![
        ("config.toml".into(), config.to_toml()?.into_bytes()),
        ("results.tsv".into(), results_tsv(&results.table)?),
    ];
    for record in &results.table {
        files.push((format!("metrics_{}.jsonl", record.variant), metrics_jsonl(record)?.into_bytes()));
    }
    let mut separability = String::new();
    for run in &results.runs {
        if let Some(rep) = &run.separability {
            json_line(
                &mut separability,
                &SeparabilityLine {
                    variant: run.variant.tag(),
                    seed: run.seed,
                    sessions: rep.samples.len(),
                    probe_r2: rep.probe_r2,
                    intra_distance: rep.intra_distance,
                    inter_distance: rep.inter_distance,
                    distance_ratio: rep.distance_ratio,
                    null_r2_below_005: rep.null_fraction_below(0.05),
                },
            )?;
            files.push((format!("goals_{}_seed{}.csv", run.variant, run.seed), goals_csv(rep)?));
        }
        if let Some(log) = &run.train_log {
            let mut out = String::new();
            for r in log {
                json_line(&mut out, r)?;
            }
            files.push((format!("train_log_{}_seed{}.jsonl", run.variant, run.seed), out.into_bytes()));
        }
    }
    files.push(("separability.jsonl".into(), separability.into_bytes()));
    files.sort_by(|a, b| a.0.cmp(&b.0));

    let mut entries = Vec::with_capacity(files.len());
    for (name, bytes) in &files {
        write_atomic(&dir.join(name), bytes)?;
        entries.push(FileEntry {
            path: name.clone(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_hash: config.hash()?,
        files: entries,
        timings,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Argument(e.to_string()))?;
    write_atomic(&dir.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}
