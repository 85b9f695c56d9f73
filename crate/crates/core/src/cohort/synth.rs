use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Cohort, CohortError, EyeRecord, Group, RiskLabel, Value};
use crate::radiomics::{column_key, Eye, Modality, DEFAULT_FEATURES};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub moderate: usize,
    pub high: usize,
    pub very_high: usize,
}

impl ClassCounts {
    pub fn get(&self, label: RiskLabel) -> usize {
        match label {
            RiskLabel::Moderate => self.moderate,
            RiskLabel::High => self.high,
            RiskLabel::VeryHigh => self.very_high,
        }
    }

    pub fn total(&self) -> usize {
        self.moderate + self.high + self.very_high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLevel {
    /// One draw per patient, shared by both eyes.
    Patient,
    /// One draw per eye, correlated within patient.
    Eye,
}

/// Gaussian clinical feature; arrays are indexed Moderate, High, VeryHigh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericFeature {
    pub name: String,
    pub group: Group,
    pub level: FeatureLevel,
    pub mean: [f64; 3],
    pub sd: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    /// Whether the class parameters come from published statistics.
    #[serde(default)]
    pub calibrated: bool,
}

/// Multinomial clinical feature with per-class level probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    pub group: Group,
    pub level: FeatureLevel,
    pub levels: Vec<String>,
    pub probabilities: [Vec<f64>; 3],
    #[serde(default)]
    pub calibrated: bool,
}

/// Class-specific Gaussian parameters of one radiomic column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiomicColumn {
    pub name: String,
    pub mean: [f64; 3],
    pub sd: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadiomicSynth {
    pub features: Vec<String>,
    pub modalities: Vec<Modality>,
    /// Cohen's d of the planted shift per unit of `class_shift`.
    pub effect_size: f64,
    pub class_shift: [f64; 3],
    pub signal_columns: Vec<String>,
    /// Columns with explicit class parameters; all others are N(0, 1).
    pub columns: Vec<RadiomicColumn>,
    /// Probability that one modality is missing for one eye.
    pub missing_rate: f64,
}

impl Default for RadiomicSynth {
    fn default() -> Self {
        let col = |name: &str, mean: [f64; 3], sd: [f64; 3]| RadiomicColumn {
            name: name.into(),
            mean,
            sd,
        };
        RadiomicSynth {
            features: DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect(),
            modalities: Modality::ALL.to_vec(),
            effect_size: 0.3,
            class_shift: [0.0, 1.0, 1.5],
            signal_columns: [
                "OCTA33S_kurtosis",
                "OCTA33S_variance",
                "OCTA66D_skewness",
                "OCTA33S_robust_mean_absolute_deviation",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            columns: vec![
                col("OCT_interquartile_range", [-0.22, -0.14, -0.14], [0.22, 0.32, 0.32]),
                col("OCTA33D_skewness", [-0.45, -0.22, -0.22], [0.23, 0.31, 0.31]),
                col("OCTA66S_kurtosis", [-0.38, -0.38, -0.38], [0.29, 0.29, 0.28]),
            ],
            missing_rate: 0.02,
        }
    }
}

impl RadiomicSynth {
    /// Radiomic columns with no class signal at all.
    pub fn null() -> Self {
        RadiomicSynth {
            effect_size: 0.0,
            signal_columns: Vec::new(),
            columns: Vec::new(),
            ..RadiomicSynth::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub patients: ClassCounts,
    pub eyes: ClassCounts,
    pub within_patient_correlation: f64,
    pub radiomics: RadiomicSynth,
    pub numeric: Vec<NumericFeature>,
    pub categorical: Vec<CategoricalFeature>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            patients: ClassCounts {
                moderate: 36,
                high: 141,
                very_high: 182,
            },
            eyes: ClassCounts {
                moderate: 67,
                high: 230,
                very_high: 300,
            },
            within_patient_correlation: 0.5,
            radiomics: RadiomicSynth::default(),
            numeric: default_numeric(),
            categorical: default_categorical(),
        }
    }
}

fn default_numeric() -> Vec<NumericFeature> {
    use FeatureLevel::{Eye as E, Patient as P};
    use Group::*;
    let f = |name: &str, group, level, mean: [f64; 3], sd: [f64; 3], min: Option<f64>, calibrated| NumericFeature {
        name: name.into(),
        group,
        level,
        mean,
        sd,
        min,
        max: None,
        calibrated,
    };
    let flat = |m: f64, s: f64| ([m; 3], [s; 3]);
    let mut v = Vec::new();
    let mut flat_feature = |name: &str, group, level, m: f64, s: f64, min: Option<f64>| {
        let (mean, sd) = flat(m, s);
        v.push(f(name, group, level, mean, sd, min, false));
    };
    // uncalibrated class-invariant features
    flat_feature("central_retinal_thickness", S, E, 250.0, 20.0, Some(0.0));
    flat_feature("retinal_volume", S, E, 10.0, 0.5, Some(0.0));
    for (sector, m) in [("ni", 320.0), ("ti", 310.0), ("ii", 318.0), ("ne", 300.0), ("te", 270.0), ("ie", 275.0)] {
        flat_feature(&format!("etdrs_{sector}"), S, E, m, 16.0, Some(0.0));
    }
    for scan in ["3x3", "6x6"] {
        flat_feature(&format!("vessel_density_{scan}"), S, E, 20.0, 2.0, Some(0.0));
        flat_feature(&format!("perfusion_density_{scan}"), S, E, 0.36, 0.03, Some(0.0));
        flat_feature(&format!("faz_area_{scan}"), S, E, 0.25, 0.1, Some(0.0));
        flat_feature(&format!("faz_circularity_{scan}"), S, E, 0.7, 0.08, Some(0.0));
    }
    flat_feature("faz_perimeter_6x6", S, E, 2.1, 0.5, Some(0.0));
    flat_feature("visual_acuity", O, E, 0.05, 0.1, None);
    flat_feature("intraocular_pressure", O, E, 15.0, 3.0, Some(5.0));
    flat_feature("spherical_equivalent", O, E, -1.0, 2.0, None);
    flat_feature("axial_length", O, E, 23.5, 1.0, Some(18.0));
    flat_feature("keratometry", O, E, 43.5, 1.5, Some(35.0));
    flat_feature("age", D, P, 42.0, 12.0, Some(18.0));
    flat_feature("weight", D, P, 72.0, 13.0, Some(35.0));
    flat_feature("systolic_pressure", D, P, 125.0, 15.0, Some(80.0));
    flat_feature("diastolic_pressure", D, P, 75.0, 10.0, Some(40.0));
    flat_feature("heart_rate", D, P, 72.0, 10.0, Some(35.0));
    for (name, m, s, min) in [
        ("creatinine", 0.8, 0.15, 0.2),
        ("egfr", 105.0, 15.0, 10.0),
        ("uric_acid", 4.5, 1.1, 0.5),
        ("total_proteins", 7.0, 0.4, 3.0),
        ("potassium", 4.3, 0.35, 2.0),
        ("urinary_albumin", 10.0, 8.0, 0.0),
        ("albumin", 4.4, 0.3, 2.0),
        ("leukocytes", 6.8, 1.7, 1.0),
        ("red_blood_cells", 4.7, 0.4, 2.0),
        ("hemoglobin", 14.0, 1.3, 6.0),
        ("hematocrit", 42.0, 3.5, 20.0),
        ("platelets", 240.0, 55.0, 20.0),
        ("mean_cholesterol", 178.0, 28.0, 60.0),
        ("mean_ldl", 105.0, 25.0, 20.0),
    ] {
        flat_feature(name, B, P, m, s, Some(min));
    }
    // class-specific parameters taken from the published per-class statistics
    v.extend([
        f("dm_duration", D, P, [5.65, 15.36, 25.97], [2.65, 8.18, 8.90], Some(0.0), true),
        f("height", D, P, [1.74, 1.70, 1.70], [0.10, 0.09, 0.09], Some(1.2), true),
        f("bmi", D, P, [23.05, 24.87, 24.87], [2.54, 3.72, 3.72], Some(14.0), true),
        f("total_cholesterol", B, P, [154.97, 177.79, 180.41], [21.68, 28.73, 29.77], Some(60.0), true),
        f("triglycerides", B, P, [59.78, 74.55, 90.24], [19.36, 31.39, 64.44], Some(20.0), true),
        f("mean_hba1c", B, P, [7.31, 7.82, 7.82], [0.98, 1.96, 1.96], Some(4.0), true),
        f("sodium", B, P, [140.69, 140.69, 140.12], [2.13, 2.13, 2.11], None, true),
        f("hdl", B, P, [62.32, 62.32, 59.24], [16.54, 16.54, 18.70], Some(15.0), true),
        f("glucose", B, P, [153.19, 153.19, 164.92], [69.89, 69.89, 76.25], Some(40.0), true),
        f("etdrs_se", S, E, [282.71, 283.87, 283.87], [14.53, 22.19, 22.19], Some(0.0), true),
        f("etdrs_si", S, E, [327.68, 327.68, 324.79], [16.80, 16.80, 16.24], Some(0.0), true),
        f("faz_perimeter_3x3", S, E, [1.99, 1.99, 2.14], [0.50, 0.50, 0.54], Some(0.0), true),
    ]);
    v
}

fn default_categorical() -> Vec<CategoricalFeature> {
    use FeatureLevel::Patient as P;
    use Group::*;
    let c = |name: &str, group, levels: &[&str], p: [&[f64]; 3], calibrated| CategoricalFeature {
        name: name.into(),
        group,
        level: P,
        levels: levels.iter().map(|s| s.to_string()).collect(),
        probabilities: p.map(|x| x.to_vec()),
        calibrated,
    };
    vec![
        c("sex", D, &["female", "male"], [&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]], false),
        c(
            "smoking",
            D,
            &["non", "ex", "current"],
            [&[1.0, 0.0, 0.0], &[0.60, 0.12, 0.28], &[0.60, 0.21, 0.19]],
            true,
        ),
        c("hta", D, &["no", "yes"], [&[0.97, 0.03], &[0.97, 0.03], &[0.85, 0.15]], true),
        c(
            "dr_grade",
            O,
            &["none", "r1", "r2", "r3"],
            [&[1.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0], &[0.31, 0.45, 0.17, 0.07]],
            true,
        ),
    ]
}

impl SynthConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CohortError> {
        toml::from_str(text).map_err(|e| CohortError::InvalidSynthConfig(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("synthetic config is always representable as TOML")
    }

    /// Radiomic column keys the generator produces, sorted.
    pub fn radiomic_columns(&self) -> Vec<String> {
        let mut keys: Vec<String> = self
            .radiomics
            .modalities
            .iter()
            .flat_map(|&m| self.radiomics.features.iter().map(move |f| column_key(m, f)))
            .collect();
        keys.sort();
        keys.dedup();
        keys
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        let bad = |m: String| Err(CohortError::InvalidSynthConfig(m));
        for label in RiskLabel::ALL {
            let (p, e) = (self.patients.get(label), self.eyes.get(label));
            if p == 0 {
                return bad(format!("{label} patient count is zero"));
            }
            if e < p || e > 2 * p {
                return bad(format!("{label}: {e} eyes cannot come from {p} patients"));
            }
        }
        if !(0.0..=1.0).contains(&self.within_patient_correlation) {
            return bad("within_patient_correlation must lie in [0, 1]".into());
        }
        let r = &self.radiomics;
        if !(0.0..1.0).contains(&r.missing_rate) {
            return bad("radiomics.missing_rate must lie in [0, 1)".into());
        }
        if !r.effect_size.is_finite() || r.class_shift.iter().any(|v| !v.is_finite()) {
            return bad("radiomic effect parameters must be finite".into());
        }
        for c in &r.columns {
            check_gaussian(&c.name, &c.mean, &c.sd)?;
        }
        let mut names = BTreeMap::new();
        for f in &self.numeric {
            check_gaussian(&f.name, &f.mean, &f.sd)?;
            check_level(&f.name, f.group, f.level)?;
            if names.insert(f.name.clone(), ()).is_some() {
                return bad(format!("feature {} defined twice", f.name));
            }
        }
        for f in &self.categorical {
            check_level(&f.name, f.group, f.level)?;
            if names.insert(f.name.clone(), ()).is_some() {
                return bad(format!("feature {} defined twice", f.name));
            }
            if f.levels.is_empty() {
                return bad(format!("{} has no levels", f.name));
            }
            for p in &f.probabilities {
                let sum: f64 = p.iter().sum();
                if p.len() != f.levels.len() || p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                    return bad(format!("{} probabilities must be a distribution over its levels", f.name));
                }
            }
        }
        Ok(())
    }
}

fn check_gaussian(name: &str, mean: &[f64; 3], sd: &[f64; 3]) -> Result<(), CohortError> {
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(CohortError::InvalidSynthConfig(format!("{name}: non-finite mean")));
    }
    if sd.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(CohortError::InvalidSynthConfig(format!("{name}: negative or non-finite SD")));
    }
    Ok(())
}

fn check_level(name: &str, group: Group, level: FeatureLevel) -> Result<(), CohortError> {
    match (group, level) {
        (Group::R, _) => Err(CohortError::InvalidSynthConfig(format!(
            "{name}: radiomic columns are configured under [radiomics]"
        ))),
        (Group::D | Group::B, FeatureLevel::Eye) => Err(CohortError::InvalidSynthConfig(format!(
            "{name}: demographics and bloods are patient-level"
        ))),
        _ => Ok(()),
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding slack: last level with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn clamp(v: f64, min: Option<f64>, max: Option<f64>) -> f64 {
    let v = min.map_or(v, |m| v.max(m));
    max.map_or(v, |m| v.min(m))
}

/// Generate a cohort from `config`, deterministic in `seed`.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Cohort, CohortError> {
    config.validate()?;
    let rho = config.within_patient_correlation;
    let (wp, we) = (rho.sqrt(), (1.0 - rho).sqrt());
    let radiomic_columns = config.radiomic_columns();
    let overrides: BTreeMap<&str, &RadiomicColumn> =
        config.radiomics.columns.iter().map(|c| (c.name.as_str(), c)).collect();
    let signal: std::collections::BTreeSet<&str> =
        config.radiomics.signal_columns.iter().map(String::as_str).collect();

    let total = config.patients.total();
    let width = total.to_string().len().max(4);
    let mut records = Vec::with_capacity(config.eyes.total());
    let mut index = 0u64;
    for label in RiskLabel::ALL {
        let c = label.index();
        let n = config.patients.get(label);
        let bilateral = config.eyes.get(label) - n;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::MAX, c as u64])));
        let mut two_eyes = vec![false; n];
        for &i in &order[..bilateral] {
            two_eyes[i] = true;
        }
        for &both in &two_eyes {
            index += 1;
            let pid = format!("P{index:0width$}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[index]));
            let eyes: Vec<Eye> = if both {
                vec![Eye::Od, Eye::Os]
            } else if rng.random_bool(0.5) {
                vec![Eye::Os]
            } else {
                vec![Eye::Od]
            };

            let mut patient_values: Vec<(Group, String, Value)> = Vec::new();
            let mut eye_numeric: Vec<(&NumericFeature, f64)> = Vec::new();
            for f in &config.numeric {
                let z = normal(&mut rng);
                match f.level {
                    FeatureLevel::Patient => {
                        let v = clamp(f.mean[c] + f.sd[c] * z, f.min, f.max);
                        patient_values.push((f.group, f.name.clone(), Value::Number(v)));
                    }
                    FeatureLevel::Eye => eye_numeric.push((f, z)),
                }
            }
            for f in &config.categorical {
                if f.level == FeatureLevel::Patient {
                    let k = categorical(&mut rng, &f.probabilities[c]);
                    patient_values.push((f.group, f.name.clone(), Value::Category(f.levels[k].clone())));
                }
            }
            let radiomic_z: Vec<f64> = radiomic_columns.iter().map(|_| normal(&mut rng)).collect();

            for &eye in &eyes {
                let mut rec = EyeRecord::new(pid.clone(), eye, label);
                for (g, name, v) in &patient_values {
                    rec.clinical_mut(*g).expect("clinical group").insert(name.clone(), v.clone());
                }
                for (f, zp) in &eye_numeric {
                    let z = wp * zp + we * normal(&mut rng);
                    let v = clamp(f.mean[c] + f.sd[c] * z, f.min, f.max);
                    rec.clinical_mut(f.group).expect("clinical group").insert(f.name.clone(), Value::Number(v));
                }
                for f in &config.categorical {
                    if f.level == FeatureLevel::Eye {
                        let k = categorical(&mut rng, &f.probabilities[c]);
                        rec.clinical_mut(f.group)
                            .expect("clinical group")
                            .insert(f.name.clone(), Value::Category(f.levels[k].clone()));
                    }
                }
                let missing: Vec<Modality> = config
                    .radiomics
                    .modalities
                    .iter()
                    .copied()
                    .filter(|_| rng.random_bool(config.radiomics.missing_rate))
                    .collect();
                for (key, zp) in radiomic_columns.iter().zip(&radiomic_z) {
                    let z = wp * zp + we * normal(&mut rng);
                    if Modality::of_column(key).is_some_and(|m| missing.contains(&m)) {
                        continue;
                    }
                    let (mean, sd) = overrides
                        .get(key.as_str())
                        .map_or((0.0, 1.0), |o| (o.mean[c], o.sd[c]));
                    let shift = if signal.contains(key.as_str()) {
                        config.radiomics.effect_size * config.radiomics.class_shift[c]
                    } else {
                        0.0
                    };
                    rec.radiomics.insert(key.clone(), mean + shift + sd * z);
                }
                records.push(rec);
            }
        }
    }
    Cohort::new(records, format!("synthetic (seed {seed})"))
}
