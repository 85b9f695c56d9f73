use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{write_atomic, CliError};
use crate::cohort::write_features_csv;
use crate::imaging::{full_mask, load_pgm, Spacing};
use crate::radiomics::{all_column_keys, build_eye_feature_row, Eye, FeatureConfig, Modality};

#[derive(Debug, Deserialize)]
struct ManifestRow {
    patient_id: String,
    eye: String,
    modality: String,
    path: PathBuf,
    spacing_x: f64,
    spacing_y: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractSummary {
    pub rows: usize,
    pub columns: usize,
}

/// Read every image of an image manifest, compute first-order features
/// over the full frame and write one features row per (patient, eye).
/// Relative image paths resolve against the manifest's folder. Any bad row
/// aborts the command with a listing of every failing row.
pub fn cmd_extract(manifest: &Path, out: &Path) -> Result<ExtractSummary, CliError> {
    let base = manifest.parent().unwrap_or(Path::new(""));
    let mut reader = csv::Reader::from_path(manifest).map_err(|e| CliError::Lib(crate::Error::csv(manifest.display().to_string(), e)))?;
    let config = FeatureConfig::default();
    let mut errors = Vec::new();
    let mut eyes: BTreeMap<(String, Eye), Vec<_>> = BTreeMap::new();
    let mut n = 0;
    for (i, record) in reader.deserialize::<ManifestRow>().enumerate() {
        n += 1;
        // header is line 1
        let line = i + 2;
        let row = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let loaded = (|| -> Result<_, String> {
            let eye: Eye = row.eye.parse()?;
            let modality: Modality = row.modality.parse().map_err(|e: crate::radiomics::RadiomicsError| e.to_string())?;
            let spacing = Spacing::new(row.spacing_x, row.spacing_y).map_err(|e| e.to_string())?;
            let path = if row.path.is_relative() { base.join(&row.path) } else { row.path.clone() };
            let image = load_pgm(&path).map_err(|e| format!("{}: {e}", path.display()))?.with_spacing(spacing);
            let mask = full_mask(&image);
            Ok((eye, modality, image, mask))
        })();
        match loaded {
            Ok((eye, modality, image, mask)) => eyes.entry((row.patient_id.clone(), eye)).or_default().push((modality, image, mask)),
            Err(e) => errors.push(format!("line {line} ({} {} {}): {e}", row.patient_id, row.eye, row.modality)),
        }
    }
    if n == 0 {
        return Err(CliError::Data(format!("image manifest {} has no rows", manifest.display())));
    }
    let mut rows = Vec::with_capacity(eyes.len());
    for ((patient, eye), images) in &eyes {
        match build_eye_feature_row(patient, *eye, images, &config) {
            Ok(r) => rows.push(r),
            Err(e) => errors.push(format!("{patient} {eye}: {e}")),
        }
    }
    if !errors.is_empty() {
        return Err(CliError::Data(format!("{} manifest row(s) failed:\n{}", errors.len(), errors.join("\n"))));
    }
    let columns = all_column_keys(&config);
    let mut buf = Vec::new();
    write_features_csv(&mut buf, &rows, &columns)?;
    write_atomic(out, &buf)?;
    Ok(ExtractSummary {
        rows: rows.len(),
        columns: columns.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::GrayImage;

    fn write_image(dir: &Path, name: &str, seed: u16) {
        let pixels: Vec<u16> = (0..16u16).map(|v| (v * 7 + seed) % 256).collect();
        GrayImage::new(4, 4, 255, pixels, Spacing::default()).unwrap().write_p5(&dir.join(name)).unwrap();
    }

    #[test]
    fn two_eyes_all_modalities_and_partial_eye() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = String::from("patient_id,eye,modality,path,spacing_x,spacing_y\n");
        for (k, m) in Modality::ALL.iter().enumerate() {
            for eye in ["OD", "OS"] {
                let name = format!("p1_{eye}_{m}.pgm");
                write_image(dir.path(), &name, k as u16);
                manifest.push_str(&format!("p1,{eye},{m},{name},1.0,1.0\n"));
            }
        }
        write_image(dir.path(), "p2.pgm", 3);
        manifest.push_str("p2,OD,FR,p2.pgm,0.5,0.5\n");
        std::fs::write(dir.path().join("m.csv"), manifest).unwrap();
        let out = dir.path().join("out/features.csv");
        let s = cmd_extract(&dir.path().join("m.csv"), &out).unwrap();
        assert_eq!(s, ExtractSummary { rows: 3, columns: 6 * 16 });
        let text = std::fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0].split(',').count(), 2 + 96);
        // p2 only has FR: 16 filled values and 80 blanks
        let p2: Vec<&str> = lines[3].split(',').collect();
        assert_eq!(p2[0], "p2");
        assert_eq!(p2.iter().skip(2).filter(|v| v.is_empty()).count(), 80);
    }

    #[test]
    fn failures_are_listed_per_row() {
        let dir = tempfile::tempdir().unwrap();
        write_image(dir.path(), "ok.pgm", 0);
        std::fs::write(
            dir.path().join("m.csv"),
            "patient_id,eye,modality,path,spacing_x,spacing_y\np1,OD,FR,ok.pgm,1,1\np1,OS,FR,missing.pgm,1,1\np2,XX,FR,ok.pgm,1,1\n",
        )
        .unwrap();
        let err = cmd_extract(&dir.path().join("m.csv"), &dir.path().join("f.csv")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("missing.pgm") && msg.contains("line 4"), "{msg}");
        assert!(!dir.path().join("f.csv").exists());

        std::fs::write(dir.path().join("empty.csv"), "patient_id,eye,modality,path,spacing_x,spacing_y\n").unwrap();
        let err = cmd_extract(&dir.path().join("empty.csv"), &dir.path().join("f.csv")).unwrap_err();
        assert!(err.to_string().contains("no rows"));
    }
}
