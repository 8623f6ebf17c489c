use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use senselearn::evaluate::{EvalReport, MetricSummary};
use senselearn::ingest::{load_dataset, plan_split, segment_dataset, synth_generate, Dataset, SplitRatios, SynthVariant};
use senselearn::network::{Checkpoint, Provenance};
use senselearn::train::{
    append_results, crossvalidate, finetune_shared, linear_probe, lowdata, prepare, pretrain,
    supervised_baseline, transfer, write_report, EpochLog, Prepared, TransferMode,
};
use senselearn::{SeedStream, TaskSpec};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const DETERMINISTIC_ENV: &str = "SENSELEARN_DETERMINISTIC";
pub const RESULTS_FILE: &str = "results.csv";
const DEFAULT_FOLDS: usize = 5;

/// Reads the determinism switch. Every code path is already single-threaded
/// and seeded, so the switch only has to be well-formed; its value is kept in
/// the provenance record.
pub fn deterministic_env() -> CliResult<Option<String>> {
    match std::env::var(DETERMINISTIC_ENV) {
        Ok(v) if matches!(v.as_str(), "0" | "1") => Ok(Some(v)),
        Ok(v) => Err(CliError::InvalidConfig(format!("{DETERMINISTIC_ENV} must be 0 or 1, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

/// Everything needed to repeat a run.
#[derive(Debug, Serialize)]
pub struct RunRecord<'a> {
    pub command: &'a str,
    pub argv: &'a [String],
    pub version: &'static str,
    pub deterministic_env: Option<String>,
    pub seed: u64,
    pub config: &'a ExperimentConfig,
    pub artifacts: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<EpochLog>>,
    pub finished_unix: u64,
}

pub struct Context<'a> {
    pub command: &'a str,
    pub argv: &'a [String],
    pub config: &'a ExperimentConfig,
    pub deterministic_env: Option<String>,
}

impl Context<'_> {
    fn record(&self, artifacts: Vec<PathBuf>) -> RunRecord<'_> {
        RunRecord {
            command: self.command,
            argv: self.argv,
            version: env!("CARGO_PKG_VERSION"),
            deterministic_env: self.deterministic_env.clone(),
            seed: self.config.split_seed(),
            config: self.config,
            artifacts,
            checkpoint_hash: None,
            history: None,
            finished_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

pub fn run(ctx: &Context<'_>) -> CliResult<()> {
    match ctx.command {
        "synth" => synth(ctx),
        "pretrain" => pretrain_cmd(ctx),
        "probe" | "finetune" | "baseline" | "transfer" => evaluate_cmd(ctx),
        "lowdata" => lowdata_cmd(ctx),
        "cv" => cv(ctx),
        "report" => report(ctx),
        other => Err(CliError::UnknownProtocol(other.to_string())),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| CliError::Write {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let text = serde_json::to_string_pretty(value).map_err(senselearn::Error::from)?;
    fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn load(config: &ExperimentConfig) -> CliResult<Dataset> {
    let path = config.data_path()?;
    info!("loading {}", path.display());
    Ok(load_dataset(path)?)
}

fn prepared(config: &ExperimentConfig, dataset: &Dataset) -> CliResult<Prepared> {
    let samples = segment_dataset(dataset)?;
    let plan = plan_split(&dataset.subjects(), SplitRatios::default(), &SeedStream::new(config.split_seed()))?;
    Ok(prepare(&dataset.manifest.name, &samples, &plan, dataset.manifest.num_classes())?)
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.exists() {
        return Err(senselearn::Error::MissingFile(path.to_path_buf()).into());
    }
    Ok(Checkpoint::load(path)?)
}

fn synth(ctx: &Context<'_>) -> CliResult<()> {
    let dir = ctx.config.out_path()?;
    let (manifest, path) = synth_generate(&ctx.config.synth, dir)?;
    let record = ctx.record(vec![path.clone()]);
    write_json(&dir.join("synth.run.json"), &record)?;
    println!(
        "synth: {} recordings, {} classes -> {}",
        manifest.recordings.len(),
        manifest.class_names.len(),
        path.display()
    );
    Ok(())
}

fn pretrain_cmd(ctx: &Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    let task = config.task_id()?;
    let out = config.out_path()?;
    let dataset = load(config)?;
    task.check_modalities(dataset.manifest.modalities.len())?;
    let data = prepared(config, &dataset)?;
    let spec = TaskSpec::new(task, data.window_len())?;
    info!("pre-training {task} on {} windows", data.train.len());
    let outcome = pretrain(
        &data.train,
        &data.val,
        &spec,
        &config.encoder,
        &config.pretrain,
        Provenance {
            dataset: data.dataset.clone(),
            ..Provenance::default()
        },
    )?;
    let ckpt = outcome.checkpoint;
    ckpt.save(out)?;
    let mut record = ctx.record(vec![out.to_path_buf()]);
    record.checkpoint_hash = Some(ckpt.hash()?);
    record.history = Some(outcome.history);
    write_json(&sidecar(out, "run.json"), &record)?;
    println!("pretrain: {task}, {} epochs -> {}", ckpt.provenance.epochs, out.display());
    Ok(())
}

/// `ckpt` plus `.suffix`, e.g. `enc.ckpt.run.json`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

fn summary_line(report: &EvalReport) -> String {
    format!(
        "weighted F1 {:.3} ± {:.3}, kappa {:.3} ± {:.3} over {} runs",
        report.f1_weighted.mean,
        report.f1_weighted.std,
        report.kappa.mean,
        report.kappa.std,
        report.runs()
    )
}

/// Writes `<command>.report.json`, appends the results table and writes the
/// run record; returns the report path.
fn publish(ctx: &Context<'_>, reports: &[(&str, &EvalReport)]) -> CliResult<PathBuf> {
    let dir = ctx.config.out_path()?;
    let table = dir.join(RESULTS_FILE);
    let mut artifacts = Vec::new();
    for (name, report) in reports {
        let path = dir.join(format!("{name}.report.json"));
        write_report(&path, report)?;
        append_results(&table, report)?;
        artifacts.push(path);
    }
    let first = artifacts[0].clone();
    artifacts.push(table);
    let mut record = ctx.record(artifacts);
    record.checkpoint_hash = reports[0].1.provenance.checkpoint_hash.clone();
    write_json(&dir.join(format!("{}.run.json", ctx.command)), &record)?;
    Ok(first)
}

fn evaluate_cmd(ctx: &Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    config.out_path()?;
    let report = match ctx.command {
        "baseline" => {
            let dataset = load(config)?;
            supervised_baseline(&prepared(config, &dataset)?, &config.encoder, &config.train)?
        }
        "transfer" => {
            let source_path = config.source_ckpt.as_deref().ok_or(CliError::MissingOption("source-ckpt"))?;
            let source = load_checkpoint(source_path)?;
            let dataset = load(config)?;
            let mode = match config.n {
                Some(n_per_class) => TransferMode::LowData { n_per_class },
                None => TransferMode::Probe,
            };
            transfer(&source, &prepared(config, &dataset)?, mode, &config.train)?
        }
        command => {
            let ckpt = load_checkpoint(config.ckpt_path()?)?;
            let dataset = load(config)?;
            let data = prepared(config, &dataset)?;
            if command == "probe" {
                linear_probe(&ckpt, &data, &config.train)?
            } else {
                finetune_shared(&ckpt, &data, &config.train)?
            }
        }
    };
    let path = publish(ctx, &[(ctx.command, &report)])?;
    println!("{} {}: {} -> {}", ctx.command, report.protocol, summary_line(&report), path.display());
    Ok(())
}

fn lowdata_cmd(ctx: &Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    config.out_path()?;
    let n = config.n.ok_or(CliError::MissingOption("n"))?;
    let ckpt = load_checkpoint(config.ckpt_path()?)?;
    let dataset = load(config)?;
    let outcome = lowdata(&ckpt, &prepared(config, &dataset)?, n, &config.train)?;
    let path = publish(ctx, &[("lowdata", &outcome.pretrained), ("lowdata_scratch", &outcome.scratch)])?;
    println!(
        "lowdata n={n}: pretrained {}; scratch {}; gain {:+.3} -> {}",
        summary_line(&outcome.pretrained),
        summary_line(&outcome.scratch),
        outcome.gain(),
        path.display()
    );
    Ok(())
}

fn cv(ctx: &Context<'_>) -> CliResult<()> {
    let config = ctx.config;
    let task = config.task_id()?;
    config.out_path()?;
    let dataset = load(config)?;
    task.check_modalities(dataset.manifest.modalities.len())?;
    let samples = segment_dataset(&dataset)?;
    let spec = TaskSpec::new(task, dataset.manifest.window_length)?;
    let report = crossvalidate(
        &dataset.manifest.name,
        &samples,
        dataset.manifest.num_classes(),
        &spec,
        &config.encoder,
        &config.pretrain,
        &config.train,
        config.folds.unwrap_or(DEFAULT_FOLDS),
        false,
    )?;
    let path = publish(ctx, &[("cv", &report)])?;
    println!("cv {task}: {} -> {}", summary_line(&report), path.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub task: String,
    pub protocol: String,
    pub f1_weighted: MetricSummary,
    pub kappa: MetricSummary,
}

/// Groups the rows of a results table by (dataset, task, protocol).
pub fn summarize(text: &str) -> CliResult<Vec<SummaryRow>> {
    let mut groups: BTreeMap<(String, String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    if lines.next() != Some(senselearn::train::RESULTS_HEADER) {
        return Err(CliError::InvalidConfig("results table has an unexpected header".into()));
    }
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || CliError::InvalidConfig(format!("results table row {} is malformed: {line:?}", i + 1));
        if cols.len() != 7 {
            return Err(bad());
        }
        let f1: f64 = cols[4].parse().map_err(|_| bad())?;
        let kappa: f64 = cols[5].parse().map_err(|_| bad())?;
        let entry = groups
            .entry((cols[0].into(), cols[1].into(), cols[2].into()))
            .or_default();
        entry.0.push(f1);
        entry.1.push(kappa);
    }
    groups
        .into_iter()
        .map(|((dataset, task, protocol), (f1, kappa))| {
            Ok(SummaryRow {
                dataset,
                task,
                protocol,
                f1_weighted: MetricSummary::from_values(f1)?,
                kappa: MetricSummary::from_values(kappa)?,
            })
        })
        .collect()
}

fn report(ctx: &Context<'_>) -> CliResult<()> {
    let dir = ctx.config.out_path()?;
    let table = dir.join(RESULTS_FILE);
    let text = fs::read_to_string(&table).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Core(senselearn::Error::MissingFile(table.clone()))
        } else {
            CliError::Write {
                path: table.clone(),
                source: e,
            }
        }
    })?;
    let rows = summarize(&text)?;
    println!("{:<16} {:<20} {:<28} {:>5} {:>15} {:>15}", "dataset", "task", "protocol", "runs", "f1_weighted", "kappa");
    for r in &rows {
        println!(
            "{:<16} {:<20} {:<28} {:>5} {:>7.3} ± {:.3} {:>7.3} ± {:.3}",
            r.dataset,
            r.task,
            r.protocol,
            r.f1_weighted.values.len(),
            r.f1_weighted.mean,
            r.f1_weighted.std,
            r.kappa.mean,
            r.kappa.std
        );
    }
    let summary = dir.join("summary.json");
    write_json(&summary, &rows)?;
    write_json(&dir.join("report.run.json"), &ctx.record(vec![summary]))?;
    Ok(())
}

/// Applies the `--variant` flag; variant B gets its own dataset name so
/// checkpoints from variant A count as coming from another dataset.
pub fn set_variant(config: &mut ExperimentConfig, variant: SynthVariant) {
    config.synth.variant = variant;
    if variant == SynthVariant::B && config.synth.name == senselearn::ingest::SynthConfig::default().name {
        config.synth.name = format!("{}_b", config.synth.name);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_groups_rows() {
        let text = format!(
            "# schema_version=1\n{}\nd,t,p,0,0.5,0.1,0\nd,t,p,1,0.7,0.3,0\nd,u,p,0,0.9,0.8,0\n",
            senselearn::train::RESULTS_HEADER
        );
        let rows = summarize(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].task, "t");
        assert!((rows[0].f1_weighted.mean - 0.6).abs() < 1e-12);
        assert!((rows[0].kappa.mean - 0.2).abs() < 1e-12);
        assert_eq!(rows[1].f1_weighted.values, vec![0.9]);
    }

    #[test]
    fn summary_rejects_foreign_tables() {
        assert!(summarize("a,b,c\n1,2,3\n").is_err());
        let text = format!("{}\nd,t,p,0,x,0.1,0\n", senselearn::train::RESULTS_HEADER);
        assert!(summarize(&text).is_err());
    }

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(sidecar(Path::new("out/enc.ckpt"), "run.json"), PathBuf::from("out/enc.ckpt.run.json"));
    }

    #[test]
    fn variant_b_is_renamed() {
        let mut c = ExperimentConfig::default();
        set_variant(&mut c, SynthVariant::B);
        assert_eq!(c.synth.name, "synthetic_b");
        let mut c = ExperimentConfig::default();
        set_variant(&mut c, SynthVariant::A);
        assert_eq!(c.synth.name, "synthetic");
    }
}
