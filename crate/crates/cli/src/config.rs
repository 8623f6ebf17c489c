//! Experiment configuration: a JSON file, overridden field by field by flags.

use std::fs;
use std::path::{Path, PathBuf};

use senselearn::ingest::SynthConfig;
use senselearn::network::EncoderConfig;
use senselearn::train::TrainConfig;
use senselearn::{Error as CoreError, TaskId};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const PROTOCOLS: [&str; 9] = [
    "synth", "pretrain", "probe", "finetune", "lowdata", "transfer", "cv", "baseline", "report",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset manifest.
    pub data: Option<PathBuf>,
    pub task: Option<String>,
    pub protocol: Option<String>,
    pub out: Option<PathBuf>,
    /// Root seed for the subject split. When set it also replaces the seeds
    /// of `pretrain` and `train`.
    pub seed: Option<u64>,
    pub ckpt: Option<PathBuf>,
    pub source_ckpt: Option<PathBuf>,
    /// Labeled instances per class for low-data runs.
    pub n: Option<usize>,
    pub folds: Option<usize>,
    /// Schedule for self-supervised pre-training.
    pub pretrain: TrainConfig,
    /// Schedule for every downstream protocol.
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub synth: SynthConfig,
}

/// Values given on the command line; `None` leaves the file value in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub task: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub ckpt: Option<PathBuf>,
    pub source_ckpt: Option<PathBuf>,
    pub runs: Option<usize>,
    pub n: Option<usize>,
    pub folds: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::Core(CoreError::MissingFile(path.to_path_buf()))
            } else {
                CliError::Core(CoreError::Io {
                    path: path.to_path_buf(),
                    source: e,
                })
            }
        })?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::InvalidConfig(msg) => CliError::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::InvalidConfig(e.to_string()))
    }

    /// Loads the file if given, then applies the flags and the protocol.
    pub fn resolve(file: Option<&Path>, flags: Overrides, protocol: &str) -> CliResult<Self> {
        let mut config = match file {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        if let Some(p) = &config.protocol {
            if !PROTOCOLS.contains(&p.as_str()) {
                return Err(CliError::UnknownProtocol(p.clone()));
            }
        }
        config.apply(flags);
        config.protocol = Some(protocol.to_string());
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&mut self, flags: Overrides) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if flags.$field.is_some() {
                    self.$field = flags.$field;
                })*
            };
        }
        take!(data, task, out, seed, ckpt, source_ckpt, n, folds);
        if let Some(runs) = flags.runs {
            self.train.runs = runs;
        }
        if let Some(seed) = self.seed {
            self.pretrain.seed = seed;
            self.train.seed = seed;
            self.synth.seed = seed;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let invalid = |e: CoreError| CliError::InvalidConfig(e.to_string());
        self.pretrain.validate().map_err(invalid)?;
        self.train.validate().map_err(invalid)?;
        self.encoder.validate().map_err(invalid)?;
        if self.n == Some(0) {
            return Err(CliError::InvalidConfig("n must be >= 1".into()));
        }
        if matches!(self.folds, Some(f) if f < 2) {
            return Err(CliError::InvalidConfig("folds must be >= 2".into()));
        }
        Ok(())
    }

    pub fn split_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn task_id(&self) -> CliResult<TaskId> {
        let name = self.task.as_deref().ok_or(CliError::MissingOption("task"))?;
        Ok(name.parse()?)
    }

    pub fn data_path(&self) -> CliResult<&Path> {
        self.data.as_deref().ok_or(CliError::MissingOption("data"))
    }

    pub fn ckpt_path(&self) -> CliResult<&Path> {
        self.ckpt.as_deref().ok_or(CliError::MissingOption("ckpt"))
    }

    pub fn out_path(&self) -> CliResult<&Path> {
        self.out.as_deref().ok_or(CliError::MissingOption("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ExperimentConfig::from_json(r#"{"task": "triplet", "train": {"runs": 3}}"#).unwrap();
        assert_eq!(c.task.as_deref(), Some("triplet"));
        assert_eq!(c.train.runs, 3);
        assert_eq!(c.train.learning_rate, TrainConfig::default().learning_rate);
        assert_eq!(c.encoder, EncoderConfig::default());
    }

    #[test]
    fn unknown_field_is_invalid() {
        let err = ExperimentConfig::from_json(r#"{"tsak": "triplet"}"#).unwrap_err();
        assert!(matches!(err, CliError::InvalidConfig(_)));
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = ExperimentConfig::from_json(r#"{"task": "triplet", "seed": 4, "train": {"runs": 3}}"#).unwrap();
        c.apply(Overrides {
            task: Some("odd_segment".into()),
            runs: Some(7),
            seed: Some(9),
            ..Overrides::default()
        });
        assert_eq!(c.task.as_deref(), Some("odd_segment"));
        assert_eq!(c.train.runs, 7);
        assert_eq!((c.seed, c.pretrain.seed, c.train.seed), (Some(9), 9, 9));
    }

    #[test]
    fn absent_flags_leave_file_values() {
        let mut c = ExperimentConfig::from_json(r#"{"folds": 4, "n": 2}"#).unwrap();
        c.apply(Overrides::default());
        assert_eq!((c.folds, c.n), (Some(4), Some(2)));
    }

    #[test]
    fn unknown_protocol_in_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"protocol": "distill"}"#).unwrap();
        let err = ExperimentConfig::resolve(Some(&path), Overrides::default(), "probe").unwrap_err();
        assert!(matches!(err, CliError::UnknownProtocol(_)));
    }

    #[test]
    fn bad_schedule_is_invalid() {
        let err = ExperimentConfig::resolve(None, Overrides { runs: Some(0), ..Overrides::default() }, "probe")
            .unwrap_err();
        assert!(matches!(err, CliError::InvalidConfig(_)));
    }

    #[test]
    fn unknown_task_name() {
        let c = ExperimentConfig {
            task: Some("jigsaw".into()),
            ..ExperimentConfig::default()
        };
        assert!(matches!(c.task_id(), Err(CliError::Core(CoreError::UnknownTask(_)))));
    }
}
