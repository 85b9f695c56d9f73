//! First-order radiomic statistics and per-eye feature rows.
//!
//! All statistics are functions of the intensity histogram only. Moments use
//! population divisors; kurtosis is Pearson's (non-excess, Gaussian = 3).
//! Percentiles interpolate linearly between closest ranks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{sample_intensities, GrayImage, PgmError, RoiMask, Spacing};

#[derive(Debug, Error, PartialEq)]
pub enum RadiomicsError {
    #[error("intensity sample is empty")]
    EmptySample,
    #[error("percentile {0} outside [0, 100]")]
    PercentileRange(f64),
    #[error("non-finite intensity in sample")]
    NonFinite,
    #[error("modality {0} supplied more than once")]
    DuplicateModality(Modality),
    #[error("no modality images supplied")]
    NoModalities,
    #[error("unknown modality {0:?}")]
    UnknownModality(String),
    #[error("invalid histogram bin width {0}")]
    BinWidth(f64),
    #[error(transparent)]
    Image(#[from] PgmError),
}

/// The six per-eye scan types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "FR")]
    Fr,
    #[serde(rename = "OCT")]
    Oct,
    #[serde(rename = "OCTA33S")]
    Octa33S,
    #[serde(rename = "OCTA33D")]
    Octa33D,
    #[serde(rename = "OCTA66S")]
    Octa66S,
    #[serde(rename = "OCTA66D")]
    Octa66D,
}

impl Modality {
    pub const ALL: [Modality; 6] = [
        Modality::Fr,
        Modality::Oct,
        Modality::Octa33S,
        Modality::Octa33D,
        Modality::Octa66S,
        Modality::Octa66D,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Fr => "FR",
            Modality::Oct => "OCT",
            Modality::Octa33S => "OCTA33S",
            Modality::Octa33D => "OCTA33D",
            Modality::Octa66S => "OCTA66S",
            Modality::Octa66D => "OCTA66D",
        }
    }

    /// Modality owning a radiomic column key such as `OCTA33D_skewness`.
    pub fn of_column(key: &str) -> Option<Modality> {
        let (prefix, _) = key.split_once('_')?;
        prefix.parse().ok()
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = RadiomicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| RadiomicsError::UnknownModality(s.to_string()))
    }
}

/// Feature names in the default set, in declaration order.
pub const DEFAULT_FEATURES: [&str; 16] = [
    "p10",
    "p90",
    "energy",
    "total_energy",
    "interquartile_range",
    "kurtosis",
    "maximum",
    "mean",
    "mean_absolute_deviation",
    "median",
    "minimum",
    "range",
    "robust_mean_absolute_deviation",
    "root_mean_squared",
    "skewness",
    "variance",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Adds `entropy` and `uniformity` to the feature set.
    pub histogram_features: bool,
    /// Fixed bin width for the histogram features, anchored at the sample minimum.
    pub bin_width: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            histogram_features: false,
            bin_width: 25.0,
        }
    }
}

impl FeatureConfig {
    pub fn feature_names(&self) -> Vec<&'static str> {
        let mut names = DEFAULT_FEATURES.to_vec();
        if self.histogram_features {
            names.extend(["entropy", "uniformity"]);
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderFeatures {
    pub p10: f64,
    pub p90: f64,
    pub energy: f64,
    pub total_energy: f64,
    pub interquartile_range: f64,
    pub kurtosis: f64,
    pub maximum: f64,
    pub mean: f64,
    pub mean_absolute_deviation: f64,
    pub median: f64,
    pub minimum: f64,
    pub range: f64,
    pub robust_mean_absolute_deviation: f64,
    pub root_mean_squared: f64,
    pub skewness: f64,
    pub variance: f64,
    pub entropy: Option<f64>,
    pub uniformity: Option<f64>,
}

impl FirstOrderFeatures {
    /// Look up a feature by its column name.
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "p10" => self.p10,
            "p90" => self.p90,
            "energy" => self.energy,
            "total_energy" => self.total_energy,
            "interquartile_range" => self.interquartile_range,
            "kurtosis" => self.kurtosis,
            "maximum" => self.maximum,
            "mean" => self.mean,
            "mean_absolute_deviation" => self.mean_absolute_deviation,
            "median" => self.median,
            "minimum" => self.minimum,
            "range" => self.range,
            "robust_mean_absolute_deviation" => self.robust_mean_absolute_deviation,
            "root_mean_squared" => self.root_mean_squared,
            "skewness" => self.skewness,
            "variance" => self.variance,
            "entropy" => return self.entropy,
            "uniformity" => return self.uniformity,
            _ => return None,
        })
    }

    pub fn named(&self) -> Vec<(&'static str, f64)> {
        let mut out: Vec<(&'static str, f64)> = DEFAULT_FEATURES
            .iter()
            .map(|&n| (n, self.get(n).expect("default feature")))
            .collect();
        if let Some(e) = self.entropy {
            out.push(("entropy", e));
        }
        if let Some(u) = self.uniformity {
            out.push(("uniformity", u));
        }
        out
    }
}

fn sorted_copy(sample: &[f64]) -> Result<Vec<f64>, RadiomicsError> {
    if sample.is_empty() {
        return Err(RadiomicsError::EmptySample);
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(RadiomicsError::NonFinite);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor();
    let i = lo as usize;
    let frac = h - lo;
    if frac == 0.0 || i + 1 >= sorted.len() {
        sorted[i]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

/// Linear-interpolation percentile, `p` in `[0, 100]`.
pub fn percentile(sample: &[f64], p: f64) -> Result<f64, RadiomicsError> {
    if !(0.0..=100.0).contains(&p) {
        return Err(RadiomicsError::PercentileRange(p));
    }
    let sorted = sorted_copy(sample)?;
    Ok(percentile_sorted(&sorted, p))
}

pub fn extract_first_order(
    sample: &[f64],
    spacing: Spacing,
    config: &FeatureConfig,
) -> Result<FirstOrderFeatures, RadiomicsError> {
    let sorted = sorted_copy(sample)?;
    let n = sorted.len() as f64;

    let mean = sorted.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4, mut abs_dev, mut energy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &x in &sorted {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        abs_dev += d.abs();
        energy += x * x;
    }
    let variance = m2 / n;
    let (skewness, kurtosis) = if variance > 0.0 {
        let sd = variance.sqrt();
        ((m3 / n) / (sd * sd * sd), (m4 / n) / (variance * variance))
    } else {
        (0.0, 0.0)
    };

    let p10 = percentile_sorted(&sorted, 10.0);
    let p90 = percentile_sorted(&sorted, 90.0);
    let robust: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|&x| x >= p10 && x <= p90)
        .collect();
    let robust_mean = robust.iter().sum::<f64>() / robust.len() as f64;
    let rmad = robust.iter().map(|x| (x - robust_mean).abs()).sum::<f64>() / robust.len() as f64;

    let minimum = sorted[0];
    let maximum = sorted[sorted.len() - 1];

    let (entropy, uniformity) = if config.histogram_features {
        let (e, u) = histogram_entropy_uniformity(&sorted, config.bin_width)?;
        (Some(e), Some(u))
    } else {
        (None, None)
    };

    Ok(FirstOrderFeatures {
        p10,
        p90,
        energy,
        total_energy: spacing.pixel_area() * energy,
        interquartile_range: percentile_sorted(&sorted, 75.0) - percentile_sorted(&sorted, 25.0),
        kurtosis,
        maximum,
        mean,
        mean_absolute_deviation: abs_dev / n,
        median: percentile_sorted(&sorted, 50.0),
        minimum,
        range: maximum - minimum,
        robust_mean_absolute_deviation: rmad,
        root_mean_squared: (energy / n).sqrt(),
        skewness,
        variance,
        entropy,
        uniformity,
    })
}

/// Entropy (bits) and uniformity of the fixed-bin-width histogram of a sorted sample.
fn histogram_entropy_uniformity(sorted: &[f64], bin_width: f64) -> Result<(f64, f64), RadiomicsError> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(RadiomicsError::BinWidth(bin_width));
    }
    let min = sorted[0];
    let n = sorted.len() as f64;
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for &x in sorted {
        *counts.entry(((x - min) / bin_width).floor() as u64).or_default() += 1;
    }
    let mut entropy = 0.0;
    let mut uniformity = 0.0;
    for &c in counts.values() {
        let p = c as f64 / n;
        entropy -= p * p.log2();
        uniformity += p * p;
    }
    Ok((entropy, uniformity))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Eye {
    #[serde(rename = "OD")]
    Od,
    #[serde(rename = "OS")]
    Os,
}

impl Eye {
    pub fn as_str(&self) -> &'static str {
        match self {
            Eye::Od => "OD",
            Eye::Os => "OS",
        }
    }
}

impl fmt::Display for Eye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Eye {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "OD" => Ok(Eye::Od),
            "OS" => Ok(Eye::Os),
            other => Err(format!("unknown eye {other:?} (expected OD or OS)")),
        }
    }
}

/// Radiomic values of one eye keyed `{modality}_{feature}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeFeatureRow {
    pub patient_id: String,
    pub eye: Eye,
    pub values: BTreeMap<String, f64>,
    /// Modalities without an image; their columns are missing downstream.
    pub missing: BTreeSet<Modality>,
}

pub fn column_key(modality: Modality, feature: &str) -> String {
    format!("{modality}_{feature}")
}

/// All radiomic column keys for the configured feature set, sorted.
pub fn all_column_keys(config: &FeatureConfig) -> Vec<String> {
    let mut keys: Vec<String> = Modality::ALL
        .iter()
        .flat_map(|&m| config.feature_names().into_iter().map(move |f| column_key(m, f)))
        .collect();
    keys.sort();
    keys
}

pub fn build_eye_feature_row(
    patient_id: &str,
    eye: Eye,
    images: &[(Modality, GrayImage, RoiMask)],
    config: &FeatureConfig,
) -> Result<EyeFeatureRow, RadiomicsError> {
    if images.is_empty() {
        return Err(RadiomicsError::NoModalities);
    }
    let mut seen = BTreeSet::new();
    let mut values = BTreeMap::new();
    for (modality, image, mask) in images {
        if !seen.insert(*modality) {
            return Err(RadiomicsError::DuplicateModality(*modality));
        }
        let sample = sample_intensities(image, mask)?;
        let features = extract_first_order(&sample, image.spacing(), config)?;
        for (name, value) in features.named() {
            values.insert(column_key(*modality, name), value);
        }
    }
    let missing = Modality::ALL
        .into_iter()
        .filter(|m| !seen.contains(m))
        .collect();
    Ok(EyeFeatureRow {
        patient_id: patient_id.to_string(),
        eye,
        values,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::full_mask;
    use approx::assert_relative_eq;

    fn feats(sample: &[f64]) -> FirstOrderFeatures {
        extract_first_order(sample, Spacing::default(), &FeatureConfig::default()).unwrap()
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[7.0], 33.0).unwrap(), 7.0);
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(percentile(&s, 25.0).unwrap(), 1.75, max_relative = 1e-15);
        assert_relative_eq!(percentile(&s, 75.0).unwrap(), 3.25, max_relative = 1e-15);
        assert_relative_eq!(percentile(&s, 10.0).unwrap(), 1.3, max_relative = 1e-15);
        assert_relative_eq!(percentile(&s, 90.0).unwrap(), 3.7, max_relative = 1e-15);
        assert_eq!(percentile(&[], 50.0), Err(RadiomicsError::EmptySample));
        assert_eq!(percentile(&s, 101.0), Err(RadiomicsError::PercentileRange(101.0)));
    }

    #[test]
    fn constant_sample_uses_zero_sigma_convention() {
        let f = feats(&[5.0; 4]);
        assert_eq!(f.mean, 5.0);
        assert_eq!(f.variance, 0.0);
        assert_eq!(f.skewness, 0.0);
        assert_eq!(f.kurtosis, 0.0);
        assert_eq!(f.energy, 100.0);
        assert_eq!(f.root_mean_squared, 5.0);
        assert_eq!(f.mean_absolute_deviation, 0.0);
        assert_eq!(f.range, 0.0);
    }

    #[test]
    fn one_to_four_closed_forms() {
        let f = feats(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(f.mean, 2.5);
        assert_relative_eq!(f.variance, 1.25);
        assert!(f.skewness.abs() < 1e-15);
        assert_relative_eq!(f.kurtosis, 1.64, max_relative = 1e-12);
        assert_relative_eq!(f.energy, 30.0);
        assert_relative_eq!(f.root_mean_squared, 7.5f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(f.root_mean_squared, 2.73861, max_relative = 1e-5);
        assert_relative_eq!(f.mean_absolute_deviation, 1.0);
        assert_relative_eq!(f.interquartile_range, 1.5, max_relative = 1e-15);
        assert_relative_eq!(f.robust_mean_absolute_deviation, 0.5);
        assert_relative_eq!(f.range, 3.0);
        assert_relative_eq!(f.median, 2.5);
        assert_eq!(f.total_energy, 30.0);
    }

    #[test]
    fn spacing_only_scales_total_energy() {
        let base = feats(&[1.0, 2.0, 3.0, 4.0]);
        let spaced = extract_first_order(
            &[1.0, 2.0, 3.0, 4.0],
            Spacing::new(2.0, 0.5).unwrap(),
            &FeatureConfig::default(),
        )
        .unwrap();
        assert_eq!(spaced.total_energy, 30.0);
        assert_eq!(
            FirstOrderFeatures {
                total_energy: base.total_energy,
                ..spaced.clone()
            },
            base
        );
        let spaced = extract_first_order(
            &[1.0, 2.0, 3.0, 4.0],
            Spacing::new(2.0, 1.5).unwrap(),
            &FeatureConfig::default(),
        )
        .unwrap();
        assert_eq!(spaced.total_energy, 90.0);
    }

    #[test]
    fn histogram_features_are_config_gated() {
        assert!(feats(&[1.0, 2.0]).entropy.is_none());
        let cfg = FeatureConfig {
            histogram_features: true,
            bin_width: 2.0,
        };
        // bins: [0,2) -> {0,1}, [2,4) -> {2,3}
        let f = extract_first_order(&[0.0, 1.0, 2.0, 3.0], Spacing::default(), &cfg).unwrap();
        assert_relative_eq!(f.entropy.unwrap(), 1.0);
        assert_relative_eq!(f.uniformity.unwrap(), 0.5);
        let constant = extract_first_order(&[9.0; 3], Spacing::default(), &cfg).unwrap();
        assert_eq!(constant.entropy, Some(0.0));
        assert_eq!(constant.uniformity, Some(1.0));
        assert_eq!(cfg.feature_names().len(), 18);
        let bad = FeatureConfig {
            histogram_features: true,
            bin_width: 0.0,
        };
        assert!(extract_first_order(&[1.0], Spacing::default(), &bad).is_err());
    }

    #[test]
    fn empty_sample_is_an_error() {
        assert_eq!(
            extract_first_order(&[], Spacing::default(), &FeatureConfig::default()),
            Err(RadiomicsError::EmptySample)
        );
    }

    fn image(values: &[u16]) -> GrayImage {
        GrayImage::new(values.len(), 1, 255, values.to_vec(), Spacing::default()).unwrap()
    }

    #[test]
    fn eye_row_keys_follow_present_modalities() {
        let cfg = FeatureConfig::default();
        let fr = image(&[1, 2, 3]);
        let row = build_eye_feature_row("P1", Eye::Od, &[(Modality::Fr, fr.clone(), full_mask(&fr))], &cfg)
            .unwrap();
        assert_eq!(row.values.len(), DEFAULT_FEATURES.len());
        assert!(row.values.keys().all(|k| k.starts_with("FR_")));
        assert!(row.values.contains_key("FR_mean"));
        assert!(row.missing.contains(&Modality::Oct));
        assert_eq!(row.missing.len(), 5);

        let all: Vec<_> = Modality::ALL
            .iter()
            .map(|&m| (m, fr.clone(), full_mask(&fr)))
            .collect();
        let row = build_eye_feature_row("P1", Eye::Os, &all, &cfg).unwrap();
        assert_eq!(row.values.len(), 6 * DEFAULT_FEATURES.len());
        assert!(row.missing.is_empty());

        let dup = vec![
            (Modality::Fr, fr.clone(), full_mask(&fr)),
            (Modality::Fr, fr.clone(), full_mask(&fr)),
        ];
        assert_eq!(
            build_eye_feature_row("P1", Eye::Od, &dup, &cfg),
            Err(RadiomicsError::DuplicateModality(Modality::Fr))
        );
        assert_eq!(
            build_eye_feature_row("P1", Eye::Od, &[], &cfg),
            Err(RadiomicsError::NoModalities)
        );
    }

    #[test]
    fn modality_parsing() {
        assert_eq!("octa33d".parse::<Modality>().unwrap(), Modality::Octa33D);
        assert!("OCTA99".parse::<Modality>().is_err());
        assert_eq!(Modality::of_column("OCTA66S_kurtosis"), Some(Modality::Octa66S));
        assert_eq!(Modality::of_column("dm_duration"), None);
        assert_eq!(all_column_keys(&FeatureConfig::default()).len(), 96);
    }
}
