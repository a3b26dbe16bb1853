use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::distribution::{extract_features, fid, kid, KidOptions, KidValue};
use super::lpips::lpips_distance;
use super::ssim::ssim;
use crate::error::{arg_err, Error, Result};
use crate::features::FeatureExtractor;
use crate::semantics::{DatasetManifest, ManifestRecord};
use crate::tensor::{ImageTensor, ValueRange};

/// Optional file in a generated-image directory naming the checkpoint that
/// produced it (`{"fingerprint": "..."}`).
pub const GEN_PROVENANCE_FILE: &str = "provenance.json";

/// KID is multiplied by this in text tables.
pub const KID_TEXT_SCALE: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Each person wears their own garment; pairwise metrics apply.
    Paired,
    /// Garments are swapped; only distribution metrics apply.
    Unpaired,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired" => Ok(EvalMode::Paired),
            "unpaired" => Ok(EvalMode::Unpaired),
            _ => arg_err(format!("unknown mode `{s}`")),
        }
    }
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalMode::Paired => "paired",
            EvalMode::Unpaired => "unpaired",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseScope {
    Pose1,
    Pose2,
    Both,
}

impl PoseScope {
    pub fn includes(self, pose_id: u8) -> bool {
        match self {
            PoseScope::Pose1 => pose_id == 1,
            PoseScope::Pose2 => pose_id == 2,
            PoseScope::Both => true,
        }
    }
}

impl std::str::FromStr for PoseScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "pose1" => Ok(PoseScope::Pose1),
            "2" | "pose2" => Ok(PoseScope::Pose2),
            "both" => Ok(PoseScope::Both),
            _ => arg_err(format!("unknown pose scope `{s}`")),
        }
    }
}

impl std::fmt::Display for PoseScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoseScope::Pose1 => "pose1",
            PoseScope::Pose2 => "pose2",
            PoseScope::Both => "both",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: EvalMode,
    pub pose_scope: PoseScope,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lpips: Option<f64>,
    pub fid: f64,
    /// Raw value; text tables scale it by [`KID_TEXT_SCALE`].
    pub kid: KidValue,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fingerprint: Option<String>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data");
        s.push('\n');
        s
    }

    /// Header and one row.
    pub fn to_table(&self) -> String {
        metric_table(&[(format!("{} / {}", self.mode, self.pose_scope), self)])
    }
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

/// Aligned-column table with one labelled row per report. KID is shown
/// scaled by 10^3.
pub fn metric_table(rows: &[(String, &MetricReport)]) -> String {
    let header = ["Setting", "N", "SSIM ↑", "LPIPS ↓", "KID(x1e3) ↓", "FID ↓"];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|(label, r)| {
            [
                label.clone(),
                r.samples.to_string(),
                cell(r.ssim, 3),
                cell(r.lpips, 3),
                format!(
                    "{:.3} ± {:.3}",
                    r.kid.value * KID_TEXT_SCALE,
                    r.kid.stderr * KID_TEXT_SCALE
                ),
                format!("{:.2}", r.fid),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            let pad = w - c.chars().count();
            if i == 0 {
                let _ = write!(s, "{c}{}", " ".repeat(pad));
            } else {
                let _ = write!(s, "  {}{c}", " ".repeat(pad));
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(&header.map(String::from));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// File name of a record's generated (and reference) image.
pub fn output_name(record: &ManifestRecord) -> String {
    format!("{}_pose{}.png", record.subject_id, record.pose_id)
}

/// Writes each record's person image to `out_dir/<output_name>`, resized
/// to `size = (height, width)` when given.
pub fn export_references(
    root: &Path,
    manifest: &DatasetManifest,
    out_dir: &Path,
    size: Option<(usize, usize)>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let dst = out_dir.join(output_name(r));
        let src = r.paths(root).person;
        match size {
            None => {
                std::fs::copy(&src, &dst)?;
            }
            Some((h, w)) => ImageTensor::load_png(&src, ValueRange::Unit)?
                .resized(h, w)?
                .save_png(&dst)?,
        }
        written.push(dst);
    }
    Ok(written)
}

fn read_fingerprint(dir: &Path) -> Option<String> {
    let text = std::fs::read_to_string(dir.join(GEN_PROVENANCE_FILE)).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("fingerprint")?.as_str().map(str::to_string)
}

/// Scores the generated images of every manifest record in `pose_scope`
/// against the reference images of the same name.
pub fn evaluate_pairs(
    gen_dir: &Path,
    ref_dir: &Path,
    manifest: &DatasetManifest,
    mode: EvalMode,
    pose_scope: PoseScope,
    extractor: &dyn FeatureExtractor,
) -> Result<MetricReport> {
    let names: Vec<String> = manifest
        .records
        .iter()
        .filter(|r| pose_scope.includes(r.pose_id))
        .map(output_name)
        .collect();
    if names.len() < 2 {
        return arg_err(format!(
            "{} records in scope {pose_scope}; need at least 2",
            names.len()
        ));
    }
    let mut missing = Vec::new();
    for n in &names {
        for (dir, tag) in [(gen_dir, "gen"), (ref_dir, "ref")] {
            if !dir.join(n).is_file() {
                missing.push(format!("{tag}/{n}"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Unmatched(missing));
    }
    let load = |dir: &Path| -> Result<Vec<ImageTensor>> {
        names
            .iter()
            .map(|n| ImageTensor::load_png(&dir.join(n), ValueRange::Unit))
            .collect()
    };
    let gen = load(gen_dir)?;
    let refs = load(ref_dir)?;
    let (ssim_v, lpips_v) = match mode {
        EvalMode::Paired => {
            let mut s = 0.0;
            let mut l = 0.0;
            for (g, r) in gen.iter().zip(&refs) {
                s += ssim(g, r)?;
                l += lpips_distance(g, r, extractor)?;
            }
            let n = gen.len() as f64;
            (Some(s / n), Some(l / n))
        }
        EvalMode::Unpaired => (None, None),
    };
    let fg = extract_features(&gen, extractor)?;
    let fr = extract_features(&refs, extractor)?;
    Ok(MetricReport {
        mode,
        pose_scope,
        samples: names.len(),
        ssim: ssim_v,
        lpips: lpips_v,
        fid: fid(&fg, &fr)?,
        kid: kid(&fg, &fr, &KidOptions::default())?,
        fingerprint: read_fingerprint(gen_dir),
    })
}

/// Per-metric `pose2 - pose1` differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lpips: Option<f64>,
    pub fid: f64,
    pub kid: f64,
}

pub fn pose_robustness(pose1: &MetricReport, pose2: &MetricReport) -> Result<MetricDeltas> {
    if pose1.fingerprint != pose2.fingerprint {
        return Err(Error::Provenance(format!(
            "reports come from different checkpoints: {:?} vs {:?}",
            pose1.fingerprint, pose2.fingerprint
        )));
    }
    if pose1.mode != pose2.mode {
        return arg_err("reports use different evaluation modes");
    }
    let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| b - a);
    Ok(MetricDeltas {
        ssim: diff(pose1.ssim, pose2.ssim),
        lpips: diff(pose1.lpips, pose2.lpips),
        fid: pose2.fid - pose1.fid,
        kid: pose2.kid.value - pose1.kid.value,
    })
}

/// Pose 1, pose 2 and the pooled report recomputed over both, with deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub pose1: MetricReport,
    pub pose2: MetricReport,
    pub pooled: MetricReport,
    pub deltas: MetricDeltas,
}

impl RobustnessReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data");
        s.push('\n');
        s
    }

    /// Rows for pose 1, pose 2 and both, then the deltas.
    pub fn to_table(&self) -> String {
        let rows = [
            ("Pose 1".to_string(), &self.pose1),
            ("Pose 2".to_string(), &self.pose2),
            ("Both".to_string(), &self.pooled),
        ];
        let d = &self.deltas;
        format!(
            "{}Δ pose2-pose1: SSIM {} LPIPS {} KID(x1e3) {:.3} FID {:.3}\n",
            metric_table(&rows),
            cell(d.ssim, 4),
            cell(d.lpips, 4),
            d.kid * KID_TEXT_SCALE,
            d.fid
        )
    }
}

pub fn evaluate_pose_robustness(
    gen_dir: &Path,
    ref_dir: &Path,
    manifest: &DatasetManifest,
    mode: EvalMode,
    extractor: &dyn FeatureExtractor,
) -> Result<RobustnessReport> {
    let pose1 = evaluate_pairs(
        gen_dir,
        ref_dir,
        manifest,
        mode,
        PoseScope::Pose1,
        extractor,
    )?;
    let pose2 = evaluate_pairs(
        gen_dir,
        ref_dir,
        manifest,
        mode,
        PoseScope::Pose2,
        extractor,
    )?;
    let pooled = evaluate_pairs(gen_dir, ref_dir, manifest, mode, PoseScope::Both, extractor)?;
    let deltas = pose_robustness(&pose1, &pose2)?;
    Ok(RobustnessReport {
        pose1,
        pose2,
        pooled,
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> MetricReport {
        MetricReport {
            mode: EvalMode::Paired,
            pose_scope: PoseScope::Both,
            samples: 2032,
            ssim: Some(0.852),
            lpips: Some(0.050),
            fid: 5.51,
            kid: KidValue {
                value: 0.024e-3,
                stderr: 0.0,
                blocks: 2,
            },
            fingerprint: None,
        }
    }

    #[test]
    fn table_layout() {
        let t = report().to_table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Setting"));
        assert!(
            lines[2].contains("0.852")
                && lines[2].contains("0.050")
                && lines[2].contains("0.024")
                && lines[2].contains("5.51")
        );
    }

    #[test]
    fn unpaired_json_omits_pairwise_fields() {
        let r = MetricReport {
            mode: EvalMode::Unpaired,
            ssim: None,
            lpips: None,
            ..report()
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(v.get("ssim").is_none() && v.get("lpips").is_none());
        assert!(v.get("fid").is_some());
    }

    #[test]
    fn identical_reports_zero_deltas() {
        let d = pose_robustness(&report(), &report()).unwrap();
        assert_eq!(
            (d.ssim, d.lpips, d.fid, d.kid),
            (Some(0.0), Some(0.0), 0.0, 0.0)
        );
        let other = MetricReport {
            fingerprint: Some("abc".into()),
            ..report()
        };
        assert!(matches!(
            pose_robustness(&report(), &other),
            Err(Error::Provenance(_))
        ));
    }
}
