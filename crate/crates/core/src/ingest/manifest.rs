use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_LENGTH: usize = 400;
pub const DEFAULT_OVERLAP: f64 = 0.5;

fn default_window_length() -> usize {
    DEFAULT_WINDOW_LENGTH
}

fn default_overlap() -> f64 {
    DEFAULT_OVERLAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub channel_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub subject_id: String,
    /// One signal file per modality, in manifest modality order.
    pub signals: Vec<PathBuf>,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    /// Hz; metadata only, nothing is resampled.
    pub sampling_rate: f64,
    pub modalities: Vec<ModalitySpec>,
    pub recordings: Vec<RecordingEntry>,
    pub class_names: Vec<String>,
    #[serde(default = "default_window_length")]
    pub window_length: usize,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
}

impl DatasetManifest {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        manifest.validate().map_err(|message| Error::Manifest {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(manifest)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.modalities.is_empty() || self.modalities.len() > 2 {
            return Err(format!("{} modalities; one or two supported", self.modalities.len()));
        }
        if self.modalities.iter().any(|m| m.channel_count == 0) {
            return Err("modality with zero channels".into());
        }
        if self.class_names.is_empty() {
            return Err("no class names".into());
        }
        if self.window_length == 0 || !(0.0..1.0).contains(&self.overlap) {
            return Err("window_length must be > 0 and overlap in [0, 1)".into());
        }
        for r in &self.recordings {
            if r.signals.len() != self.modalities.len() {
                return Err(format!(
                    "recording for subject {} lists {} signal files for {} modalities",
                    r.subject_id,
                    r.signals.len(),
                    self.modalities.len()
                ));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.channel_count).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Aligned per-modality signals of one subject with per-sample labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    /// `[channels × time]` per modality.
    pub modalities: Vec<Array2<f32>>,
    pub labels: Vec<usize>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub recordings: Vec<Recording>,
}

impl Dataset {
    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.recordings.iter().map(|r| r.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a comma-separated signal table into `[channels × time]`.
pub fn read_signal_csv(path: &Path, channels: usize) -> Result<Array2<f32>> {
    let text = read_text(path)?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (row, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != channels {
            return Err(Error::ChannelMismatch {
                path: path.to_path_buf(),
                expected: channels,
                found: fields.len(),
                row,
            });
        }
        for f in fields {
            let v: f32 = f.trim().parse().map_err(|_| Error::ValueParse {
                path: path.to_path_buf(),
                row,
                value: f.to_string(),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let table = Array2::from_shape_vec((rows, channels), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok(table.t().as_standard_layout().to_owned())
}

/// One label per line, either a class index or a class name.
pub fn read_labels(path: &Path, class_names: &[String]) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    let mut labels = Vec::new();
    for (row, line) in text.lines().enumerate() {
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        let label = match field.parse::<usize>() {
            Ok(i) if i < class_names.len() => Some(i),
            Ok(_) => None,
            Err(_) => class_names.iter().position(|c| c == field),
        };
        labels.push(label.ok_or_else(|| Error::LabelParse {
            path: path.to_path_buf(),
            row,
            value: field.to_string(),
        })?);
    }
    Ok(labels)
}

/// Loads every recording listed in the manifest. Relative paths resolve
/// against the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::from_path(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut recordings = Vec::with_capacity(manifest.recordings.len());
    for entry in &manifest.recordings {
        let mut modalities = Vec::with_capacity(entry.signals.len());
        for (spec, file) in manifest.modalities.iter().zip(&entry.signals) {
            modalities.push(read_signal_csv(&resolve(base, file), spec.channel_count)?);
        }
        let labels_path = resolve(base, &entry.labels);
        let labels = read_labels(&labels_path, &manifest.class_names)?;
        if modalities.iter().any(|m| m.ncols() != labels.len()) {
            return Err(Error::ShapeMismatch(format!(
                "subject {}: signal lengths {:?} vs {} labels",
                entry.subject_id,
                modalities.iter().map(|m| m.ncols()).collect::<Vec<_>>(),
                labels.len()
            )));
        }
        recordings.push(Recording {
            subject_id: entry.subject_id.clone(),
            modalities,
            labels,
        });
    }
    Ok(Dataset {
        manifest,
        recordings,
    })
}
