use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{ClassificationTask, Combination, DataCombination, SynthConfig};
use crate::error::Error;
use crate::evaluation::{EyeMode, NestedConfig};
use crate::models::ModelKind;
use crate::radiomics::Modality;

/// Where the cohort comes from: a features/clinical CSV pair, or the
/// synthetic generator when no files are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub features: Option<PathBuf>,
    pub clinical: Option<PathBuf>,
    pub synthetic_seed: u64,
    pub synthetic: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            features: None,
            clinical: None,
            synthetic_seed: 1,
            synthetic: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(deserialize_with = "task_from_number_or_string")]
    pub task: ClassificationTask,
    pub combinations: Vec<Combination>,
    pub models: Vec<ModelKind>,
    pub eye_modes: Vec<EyeMode>,
    /// Radiomic modality restrictions; an empty list means every modality.
    pub modality_filters: Vec<Vec<Modality>>,
    pub seed: u64,
    pub nested: NestedConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: ClassificationTask::Task1,
            combinations: Combination::ALL.to_vec(),
            models: ModelKind::ALL.to_vec(),
            eye_modes: vec![EyeMode::Both],
            modality_filters: vec![Vec::new()],
            seed: 0,
            nested: NestedConfig::default(),
            data: DataConfig::default(),
        }
    }
}

fn task_from_number_or_string<'de, D: serde::Deserializer<'de>>(d: D) -> Result<ClassificationTask, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(u64),
        Text(String),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Number(n) => n.to_string(),
        Raw::Text(s) => s,
    };
    text.parse().map_err(serde::de::Error::custom)
}

fn dedup<T: Ord + Clone>(v: &[T]) -> Vec<T> {
    let mut out = v.to_vec();
    out.sort();
    out.dedup();
    out
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse a config file; relative data paths resolve against its folder.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.features, &mut cfg.data.clinical].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, Error> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.combinations.is_empty() || self.models.is_empty() || self.eye_modes.is_empty() || self.modality_filters.is_empty() {
            return Err(Error::Config(
                "combinations, models, eye_modes and modality_filters must be non-empty".into(),
            ));
        }
        if self.data.features.is_some() != self.data.clinical.is_some() {
            return Err(Error::Config("data.features and data.clinical must be given together".into()));
        }
        self.nested.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.data.synthetic.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn models(&self) -> Vec<ModelKind> {
        dedup(&self.models)
    }

    pub fn eye_modes(&self) -> Vec<EyeMode> {
        dedup(&self.eye_modes)
    }

    /// Every requested (combination, modality filter) pair, deduplicated.
    pub fn data_combinations(&self) -> Vec<DataCombination> {
        let mut out = Vec::new();
        for filter in &self.modality_filters {
            for &c in &dedup(&self.combinations) {
                out.push(DataCombination::with_modalities(c, filter.iter().copied()));
            }
        }
        dedup(&out)
    }
}
