//! Eye-level cohort, the nine attribute-group combinations, leakage-safe
//! preprocessing and the calibrated synthetic cohort generator.

mod design;
mod io;
mod preprocess;
pub(crate) mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radiomics::{Eye, Modality};
use crate::seed::{derive_seed, hash_str};

pub use design::{assemble, Cell, ColumnInfo, ColumnKind, DesignMatrix};
pub use io::{
    cohort_feature_rows, load_cohort, read_clinical_csv, read_features_csv, write_clinical_csv, write_features_csv, ClinicalRow,
};
pub use preprocess::{apply_preprocessor, fit_preprocessor, ColumnTransform, EncodedColumn, Preprocessor, UNSEEN_LEVEL};
pub use synth::{generate_synthetic, CategoricalFeature, ClassCounts, FeatureLevel, NumericFeature, RadiomicColumn, RadiomicSynth, SynthConfig};

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("duplicate eye record ({patient_id}, {eye})")]
    DuplicateEye { patient_id: String, eye: Eye },
    #[error("patient {0} has more than two eyes")]
    TooManyEyes(String),
    #[error("patient {patient_id}: {what} differ between the two eyes")]
    BilateralMismatch { patient_id: String, what: String },
    #[error("eye rows without a matching clinical row: {0}")]
    MissingJoin(String),
    #[error("unknown risk label {0:?}")]
    UnknownRiskLabel(String),
    #[error("unknown data combination {0:?}")]
    UnknownCombination(String),
    #[error("unknown classification task {0:?}")]
    UnknownTask(String),
    #[error("no rows remain after applying {0}")]
    EmptyResult(String),
    #[error("column {0} has no observed training value")]
    AllMissingColumn(String),
    #[error("column {0} mixes numeric and categorical values")]
    MixedColumn(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("no training rows supplied")]
    NoTrainingRows,
    #[error("invalid synthetic config: {0}")]
    InvalidSynthConfig(String),
    #[error("malformed input {context}: {message}")]
    Malformed { context: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskLabel {
    Moderate,
    High,
    VeryHigh,
}

impl RiskLabel {
    pub const ALL: [RiskLabel; 3] = [RiskLabel::Moderate, RiskLabel::High, RiskLabel::VeryHigh];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RiskLabel::Moderate => "Moderate",
            RiskLabel::High => "High",
            RiskLabel::VeryHigh => "VeryHigh",
        }
    }
}

impl fmt::Display for RiskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskLabel {
    type Err = CohortError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "moderate" => Ok(RiskLabel::Moderate),
            "high" => Ok(RiskLabel::High),
            "veryhigh" => Ok(RiskLabel::VeryHigh),
            _ => Err(CohortError::UnknownRiskLabel(s.to_string())),
        }
    }
}

/// A clinical attribute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Category(String),
}

/// Attribute groups, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    /// Radiomics of retinal images.
    R,
    /// Commercial-software OCT/OCTA metrics.
    S,
    /// Ocular examination.
    O,
    /// Demographics and systemic data.
    D,
    /// Blood analysis.
    B,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::R, Group::S, Group::O, Group::D, Group::B];

    pub fn as_str(&self) -> &'static str {
        match self {
            Group::R => "R",
            Group::S => "S",
            Group::O => "O",
            Group::D => "D",
            Group::B => "B",
        }
    }

    /// Patient-level groups are shared by both eyes.
    pub fn is_patient_level(&self) -> bool {
        matches!(self, Group::D | Group::B)
    }
}

impl FromStr for Group {
    type Err = CohortError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "R" => Ok(Group::R),
            "S" => Ok(Group::S),
            "O" => Ok(Group::O),
            "D" => Ok(Group::D),
            "B" => Ok(Group::B),
            _ => Err(CohortError::UnknownCombination(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EyeRecord {
    pub patient_id: String,
    pub eye: Eye,
    pub risk_label: RiskLabel,
    /// Group R; absent keys are missing values.
    pub radiomics: BTreeMap<String, f64>,
    pub software_metrics: BTreeMap<String, Value>,
    pub ocular: BTreeMap<String, Value>,
    pub demographics: BTreeMap<String, Value>,
    pub bloods: BTreeMap<String, Value>,
}

impl EyeRecord {
    pub fn new(patient_id: impl Into<String>, eye: Eye, risk_label: RiskLabel) -> Self {
        EyeRecord {
            patient_id: patient_id.into(),
            eye,
            risk_label,
            radiomics: BTreeMap::new(),
            software_metrics: BTreeMap::new(),
            ocular: BTreeMap::new(),
            demographics: BTreeMap::new(),
            bloods: BTreeMap::new(),
        }
    }

    pub fn key(&self) -> EyeKey {
        EyeKey {
            patient_id: self.patient_id.clone(),
            eye: self.eye,
        }
    }

    /// Clinical map of a non-radiomic group.
    pub fn clinical(&self, group: Group) -> Option<&BTreeMap<String, Value>> {
        match group {
            Group::R => None,
            Group::S => Some(&self.software_metrics),
            Group::O => Some(&self.ocular),
            Group::D => Some(&self.demographics),
            Group::B => Some(&self.bloods),
        }
    }

    pub fn clinical_mut(&mut self, group: Group) -> Option<&mut BTreeMap<String, Value>> {
        match group {
            Group::R => None,
            Group::S => Some(&mut self.software_metrics),
            Group::O => Some(&mut self.ocular),
            Group::D => Some(&mut self.demographics),
            Group::B => Some(&mut self.bloods),
        }
    }
}

/// Identity of one eye.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EyeKey {
    pub patient_id: String,
    pub eye: Eye,
}

impl fmt::Display for EyeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.patient_id, self.eye)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    records: Vec<EyeRecord>,
    pub provenance: String,
}

impl Cohort {
    /// Validates uniqueness, the two-eye limit and bilateral consistency of
    /// patient-level data; records are stored sorted by `(patient_id, eye)`.
    pub fn new(mut records: Vec<EyeRecord>, provenance: impl Into<String>) -> Result<Self, CohortError> {
        records.sort_by(|a, b| (&a.patient_id, a.eye).cmp(&(&b.patient_id, b.eye)));
        for w in records.windows(2) {
            if w[0].patient_id == w[1].patient_id {
                if w[0].eye == w[1].eye {
                    return Err(CohortError::DuplicateEye {
                        patient_id: w[0].patient_id.clone(),
                        eye: w[0].eye,
                    });
                }
                if w[0].risk_label != w[1].risk_label {
                    return Err(CohortError::BilateralMismatch {
                        patient_id: w[0].patient_id.clone(),
                        what: "risk labels".into(),
                    });
                }
                if w[0].demographics != w[1].demographics {
                    return Err(CohortError::BilateralMismatch {
                        patient_id: w[0].patient_id.clone(),
                        what: "demographics".into(),
                    });
                }
                if w[0].bloods != w[1].bloods {
                    return Err(CohortError::BilateralMismatch {
                        patient_id: w[0].patient_id.clone(),
                        what: "bloods".into(),
                    });
                }
            }
        }
        for w in records.windows(3) {
            if w[0].patient_id == w[2].patient_id {
                return Err(CohortError::TooManyEyes(w[0].patient_id.clone()));
            }
        }
        Ok(Cohort {
            records,
            provenance: provenance.into(),
        })
    }

    pub fn records(&self) -> &[EyeRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EyeRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn patient_ids(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.patient_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Patient and eye counts per risk class.
    pub fn class_counts(&self) -> [(usize, usize); 3] {
        let mut out = [(0, 0); 3];
        let mut seen = BTreeSet::new();
        for r in &self.records {
            let c = &mut out[r.risk_label.index()];
            c.1 += 1;
            if seen.insert(&r.patient_id) {
                c.0 += 1;
            }
        }
        out
    }

    /// Copy with every patient's risk label replaced through `relabel`
    /// (used by permutation controls).
    pub fn with_patient_labels(&self, labels: &BTreeMap<String, RiskLabel>) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(&l) = labels.get(&r.patient_id) {
                    r.risk_label = l;
                }
                r
            })
            .collect();
        Cohort {
            records,
            provenance: self.provenance.clone(),
        }
    }

    /// Patient-level label permutation: both eyes of a patient keep a shared
    /// label, the multiset of patient labels is preserved.
    pub fn permute_patient_labels(&self, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut patient_labels: Vec<(String, RiskLabel)> = Vec::new();
        for r in &self.records {
            if patient_labels.last().map(|(p, _)| p != &r.patient_id).unwrap_or(true) {
                patient_labels.push((r.patient_id.clone(), r.risk_label));
            }
        }
        let mut labels: Vec<RiskLabel> = patient_labels.iter().map(|(_, l)| *l).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let map = patient_labels
            .into_iter()
            .zip(labels)
            .map(|((p, _), l)| (p, l))
            .collect();
        self.with_patient_labels(&map)
    }
}

/// One of the nine attribute-group unions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Combination {
    R,
    RS,
    RO,
    RSO,
    RD,
    RDB,
    RDO,
    RDBO,
    All,
}

impl Combination {
    pub const ALL: [Combination; 9] = [
        Combination::R,
        Combination::RS,
        Combination::RO,
        Combination::RSO,
        Combination::RD,
        Combination::RDB,
        Combination::RDO,
        Combination::RDBO,
        Combination::All,
    ];

    pub fn groups(&self) -> BTreeSet<Group> {
        use Group::*;
        let gs: &[Group] = match self {
            Combination::R => &[R],
            Combination::RS => &[R, S],
            Combination::RO => &[R, O],
            Combination::RSO => &[R, S, O],
            Combination::RD => &[R, D],
            Combination::RDB => &[R, D, B],
            Combination::RDO => &[R, D, O],
            Combination::RDBO => &[R, D, B, O],
            Combination::All => &[R, S, O, D, B],
        };
        gs.iter().copied().collect()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Combination::R => "R",
            Combination::RS => "R+S",
            Combination::RO => "R+O",
            Combination::RSO => "R+S+O",
            Combination::RD => "R+D",
            Combination::RDB => "R+D+B",
            Combination::RDO => "R+D+O",
            Combination::RDBO => "R+D+B+O",
            Combination::All => "ALL",
        }
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Combination {
    type Err = CohortError;

    /// Accepts any ordering of the group letters (`R+D+O+B` = `R+D+B+O`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("all") {
            return Ok(Combination::All);
        }
        let groups: BTreeSet<Group> = t
            .split('+')
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| CohortError::UnknownCombination(s.to_string()))?;
        Combination::ALL
            .into_iter()
            .find(|c| c.groups() == groups)
            .ok_or_else(|| CohortError::UnknownCombination(s.to_string()))
    }
}

impl Serialize for Combination {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Combination {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A combination plus an optional restriction of its radiomic columns to
/// some modalities.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DataCombination {
    pub combination: Combination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modalities: Option<BTreeSet<Modality>>,
}

impl DataCombination {
    pub fn new(combination: Combination) -> Self {
        DataCombination {
            combination,
            modalities: None,
        }
    }

    pub fn with_modalities(combination: Combination, modalities: impl IntoIterator<Item = Modality>) -> Self {
        let set: BTreeSet<Modality> = modalities.into_iter().collect();
        DataCombination {
            combination,
            modalities: if set.is_empty() { None } else { Some(set) },
        }
    }

    /// `all` or the `+`-joined modality list.
    pub fn modality_label(&self) -> String {
        match &self.modalities {
            None => "all".to_string(),
            Some(set) => set.iter().map(Modality::as_str).collect::<Vec<_>>().join("+"),
        }
    }

    pub fn includes_radiomic(&self, key: &str) -> bool {
        match &self.modalities {
            None => true,
            Some(set) => Modality::of_column(key).map(|m| set.contains(&m)).unwrap_or(false),
        }
    }
}

impl fmt::Display for DataCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.modalities {
            None => write!(f, "{}", self.combination),
            Some(_) => write!(f, "{}[{}]", self.combination, self.modality_label()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassificationTask {
    /// Moderate vs High or Very high.
    #[serde(rename = "1")]
    Task1,
    /// High vs Very high; Moderate rows excluded.
    #[serde(rename = "2")]
    Task2,
}

impl ClassificationTask {
    /// Binary target, or `None` when the task excludes the row.
    pub fn label(&self, risk: RiskLabel) -> Option<bool> {
        match (self, risk) {
            (ClassificationTask::Task1, RiskLabel::Moderate) => Some(false),
            (ClassificationTask::Task1, _) => Some(true),
            (ClassificationTask::Task2, RiskLabel::Moderate) => None,
            (ClassificationTask::Task2, RiskLabel::High) => Some(false),
            (ClassificationTask::Task2, RiskLabel::VeryHigh) => Some(true),
        }
    }

    pub fn number(&self) -> u8 {
        match self {
            ClassificationTask::Task1 => 1,
            ClassificationTask::Task2 => 2,
        }
    }
}

impl fmt::Display for ClassificationTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for ClassificationTask {
    type Err = CohortError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().trim_start_matches("task") {
            "1" => Ok(ClassificationTask::Task1),
            "2" => Ok(ClassificationTask::Task2),
            _ => Err(CohortError::UnknownTask(s.to_string())),
        }
    }
}

/// Keep one uniformly chosen eye per bilateral patient.
pub fn select_single_eye(cohort: &Cohort, seed: u64) -> Cohort {
    let mut kept = Vec::with_capacity(cohort.len());
    let records = cohort.records();
    let mut i = 0;
    while i < records.len() {
        let bilateral = i + 1 < records.len() && records[i + 1].patient_id == records[i].patient_id;
        if bilateral {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[hash_str(&records[i].patient_id)]));
            let pick = if rng.random_bool(0.5) { i + 1 } else { i };
            kept.push(records[pick].clone());
            i += 2;
        } else {
            kept.push(records[i].clone());
            i += 1;
        }
    }
    Cohort {
        records: kept,
        provenance: format!("{} | single eye (seed {seed})", cohort.provenance),
    }
}
