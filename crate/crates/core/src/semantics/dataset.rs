use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::agnostic::make_agnostic;
use super::captioner::CaptionResult;
use super::labels::TRY_ON_REGION;
use super::pose::PoseKeypoints;
use super::PARSE_CLASSES;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{ImageTensor, ParseMap, ValueRange};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// `(asset name, file name)` for the eight files of one pose directory.
pub const ASSET_FILES: [(&str, &str); 8] = [
    ("person", "person.png"),
    ("garment", "garment.png"),
    ("garment_mask", "garment_mask.png"),
    ("caption", "caption.txt"),
    ("dense_pose", "densepose.png"),
    ("openpose", "openpose.json"),
    ("parse", "parse.png"),
    ("agnostic", "agnostic.png"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!(
                "unknown split `{other}` (train|test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePaths {
    pub person: PathBuf,
    pub garment: PathBuf,
    pub garment_mask: PathBuf,
    pub caption: PathBuf,
    pub dense_pose: PathBuf,
    pub openpose: PathBuf,
    pub parse: PathBuf,
    pub agnostic: PathBuf,
}

impl SamplePaths {
    /// The standard file names inside one `pose<k>` directory.
    pub fn in_dir(dir: &Path) -> Self {
        let f = |i: usize| dir.join(ASSET_FILES[i].1);
        Self {
            person: f(0),
            garment: f(1),
            garment_mask: f(2),
            caption: f(3),
            dense_pose: f(4),
            openpose: f(5),
            parse: f(6),
            agnostic: f(7),
        }
    }

    fn list(&self) -> [(&'static str, &Path); 8] {
        [
            ("person", &self.person),
            ("garment", &self.garment),
            ("garment_mask", &self.garment_mask),
            ("caption", &self.caption),
            ("dense_pose", &self.dense_pose),
            ("openpose", &self.openpose),
            ("parse", &self.parse),
            ("agnostic", &self.agnostic),
        ]
    }
}

/// Target resolution and whether other sizes with the same aspect ratio
/// are resized to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub height: usize,
    pub width: usize,
    pub resize: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            height: 512,
            width: 384,
            resize: true,
        }
    }
}

/// One person/garment/text triplet with its pose annotations.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub person_image: ImageTensor,
    pub garment_image: ImageTensor,
    /// Binary mask stored as a two-class label map.
    pub garment_mask: ParseMap,
    pub caption: CaptionResult,
    pub dense_pose: ImageTensor,
    pub openpose: PoseKeypoints,
    pub parse: ParseMap,
    pub agnostic: ImageTensor,
    pub pose_id: u8,
    pub subject_id: String,
}

impl SampleRecord {
    /// Re-checks every record invariant.
    pub fn validate(&self, options: &BuildOptions) -> Result<()> {
        let hw = (options.height, options.width);
        for (name, got) in [
            ("person", self.person_image.hw()),
            ("garment", self.garment_image.hw()),
            ("garment_mask", self.garment_mask.hw()),
            ("dense_pose", self.dense_pose.hw()),
            ("parse", self.parse.hw()),
            ("agnostic", self.agnostic.hw()),
        ] {
            if got != hw {
                return dim_err(format!("{name} is {got:?}, expected {hw:?}"));
            }
        }
        if self.garment_mask.num_classes() != 2 {
            return Err(Error::Value("garment mask must be binary".into()));
        }
        if !matches!(self.pose_id, 1 | 2) {
            return Err(Error::Argument(format!(
                "pose id {} not in {{1, 2}}",
                self.pose_id
            )));
        }
        self.caption.attributes()?;
        check_agnostic(&self.person_image, &self.agnostic, &self.parse)
    }

    /// The person pixels of the garment, zero elsewhere: the warp target.
    pub fn garment_region(&self) -> Result<ImageTensor> {
        let mask = self.parse.mask_of(&[super::labels::UPPER_GARMENT])?;
        let t = self.person_image.tensor().broadcast_mul(&mask)?;
        ImageTensor::new(t, self.person_image.range())
    }
}

fn check_agnostic(person: &ImageTensor, agnostic: &ImageTensor, parse: &ParseMap) -> Result<()> {
    if person.channels() != agnostic.channels()
        || person.hw() != agnostic.hw()
        || parse.hw() != person.hw()
    {
        return dim_err("agnostic image does not match the person image");
    }
    let (p, a) = (person.to_vec()?, agnostic.to_vec()?);
    let plane = parse.labels().len();
    for (i, l) in parse.labels().iter().enumerate() {
        if TRY_ON_REGION.contains(l) {
            continue;
        }
        for c in 0..person.channels() {
            if p[c * plane + i] != a[c * plane + i] {
                return Err(Error::Value(format!(
                    "agnostic differs from person outside the try-on region at pixel ({}, {})",
                    i % parse.width(),
                    i / parse.width()
                )));
            }
        }
    }
    Ok(())
}

fn asset_err(asset: &'static str, path: &Path, reason: impl fmt::Display) -> Error {
    Error::Asset {
        asset,
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn load_image(asset: &'static str, path: &Path) -> Result<ImageTensor> {
    ImageTensor::load_png(path, ValueRange::Signed).map_err(|e| asset_err(asset, path, e))
}

fn load_mask(path: &Path) -> Result<ParseMap> {
    let img = image::open(path)
        .map_err(|e| asset_err("garment_mask", path, e))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels = img.pixels().map(|p| u8::from(p.0[0] >= 128)).collect();
    ParseMap::new(labels, h, w, 2)
}

/// Loads, checks and normalises one pose directory's assets.
///
/// Sizes other than the target are resized when `options.resize` is set
/// and the aspect ratio matches. In that case the agnostic image is checked
/// at source resolution, then rebuilt from the resized person and parse.
pub fn build_sample(
    paths: &SamplePaths,
    pose_id: u8,
    subject_id: &str,
    options: &BuildOptions,
) -> Result<SampleRecord> {
    if !matches!(pose_id, 1 | 2) {
        return Err(Error::Argument(format!(
            "pose id {pose_id} not in {{1, 2}}"
        )));
    }
    for (asset, path) in paths.list() {
        if !path.is_file() {
            return Err(asset_err(asset, path, "missing"));
        }
    }
    let person = load_image("person", &paths.person)?;
    let garment = load_image("garment", &paths.garment)?;
    let mask = load_mask(&paths.garment_mask)?;
    let dense = load_image("dense_pose", &paths.dense_pose)?;
    let parse = ParseMap::load_png(&paths.parse, PARSE_CLASSES)
        .map_err(|e| asset_err("parse", &paths.parse, e))?;
    let agnostic = load_image("agnostic", &paths.agnostic)?;
    let src = person.hw();
    for (name, hw) in [
        ("garment", garment.hw()),
        ("garment_mask", mask.hw()),
        ("dense_pose", dense.hw()),
        ("parse", parse.hw()),
        ("agnostic", agnostic.hw()),
    ] {
        if hw != src {
            return dim_err(format!("{name} is {hw:?} but person is {src:?}"));
        }
    }
    let keypoints = PoseKeypoints::load(&paths.openpose, src.0, src.1)
        .map_err(|e| asset_err("openpose", &paths.openpose, e))?;
    let raw_caption = std::fs::read_to_string(&paths.caption)
        .map_err(|e| asset_err("caption", &paths.caption, e))?;
    let caption = CaptionResult::from_stored(raw_caption.lines().next().unwrap_or(""))?;
    check_agnostic(&person, &agnostic, &parse)
        .map_err(|e| asset_err("agnostic", &paths.agnostic, e))?;

    let target = (options.height, options.width);
    let record = if src == target {
        SampleRecord {
            person_image: person,
            garment_image: garment,
            garment_mask: mask,
            caption,
            dense_pose: dense,
            openpose: keypoints,
            parse,
            agnostic,
            pose_id,
            subject_id: subject_id.to_string(),
        }
    } else {
        if !options.resize || src.0 * target.1 != src.1 * target.0 {
            return dim_err(format!(
                "source resolution {}x{} (WxH) cannot be brought to {}x{}",
                src.1, src.0, target.1, target.0
            ));
        }
        let person = person.resized(target.0, target.1)?;
        let parse = parse.resized(target.0, target.1)?;
        let openpose = keypoints.rescaled(src, target)?;
        let agnostic = make_agnostic(&person, &parse, &openpose)?;
        SampleRecord {
            garment_image: garment.resized(target.0, target.1)?,
            garment_mask: mask.resized(target.0, target.1)?,
            caption,
            dense_pose: dense.resized(target.0, target.1)?,
            openpose,
            parse,
            agnostic,
            person_image: person,
            pose_id,
            subject_id: subject_id.to_string(),
        }
    };
    record.validate(options)?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub subject_id: String,
    pub pose_id: u8,
    /// Pose directory relative to the dataset root, `/`-separated.
    pub dir: String,
    /// Garment of the next subject (same pose, cyclic) for unpaired runs.
    pub unpaired_garment: String,
}

impl ManifestRecord {
    pub fn paths(&self, root: &Path) -> SamplePaths {
        SamplePaths::in_dir(&root.join(&self.dir))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub split: Split,
    pub records: Vec<ManifestRecord>,
    /// Records per pose id, keyed `"1"` and `"2"`.
    pub counts: BTreeMap<String, usize>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Value(format!(
                "unsupported manifest schema {}",
                m.schema_version
            )));
        }
        let total: usize = m.counts.values().sum();
        if total != m.records.len() {
            return Err(Error::Value(format!(
                "counts sum to {total} but there are {} records",
                m.records.len()
            )));
        }
        Ok(m)
    }

    pub fn count(&self, pose_id: u8) -> usize {
        self.counts.get(&pose_id.to_string()).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    /// Offending file (or pose directory), relative to the root.
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestBuild {
    pub manifest: DatasetManifest,
    pub warnings: Vec<String>,
    pub errors: Vec<RecordError>,
}

fn rel(root: &Path, p: &Path) -> String {
    let r = p.strip_prefix(root).unwrap_or(p);
    r.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn sorted_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            out.push((
                entry.file_name().to_string_lossy().into_owned(),
                entry.path(),
            ));
        }
    }
    out.sort();
    Ok(out)
}

/// Scans `<root>/<split>/<subject>/pose<k>/`, validates every record and
/// pairs each subject's two poses. Output ordering is by subject, then pose.
pub fn build_manifest(root: &Path, split: Split, options: &BuildOptions) -> Result<ManifestBuild> {
    let split_dir = root.join(split.as_str());
    let mut warnings = Vec::new();
    let mut errors = Vec::new();
    let mut records = Vec::new();
    let subjects = if split_dir.is_dir() {
        sorted_dirs(&split_dir)?
    } else {
        Vec::new()
    };
    for (subject, sdir) in subjects {
        let mut poses = Vec::new();
        for (name, pdir) in sorted_dirs(&sdir)? {
            match name.strip_prefix("pose").and_then(|k| k.parse::<u8>().ok()) {
                Some(k @ (1 | 2)) => poses.push((k, pdir)),
                _ => warnings.push(format!(
                    "{}: not a pose directory, ignored",
                    rel(root, &pdir)
                )),
            }
        }
        if poses.len() != 2 {
            if !poses.is_empty() {
                warnings.push(format!(
                    "{}: orphan subject with {} pose director{}, excluded",
                    rel(root, &sdir),
                    poses.len(),
                    if poses.len() == 1 { "y" } else { "ies" }
                ));
            }
            continue;
        }
        for (k, pdir) in poses {
            match build_sample(&SamplePaths::in_dir(&pdir), k, &subject, options) {
                Ok(_) => records.push(ManifestRecord {
                    subject_id: subject.clone(),
                    pose_id: k,
                    dir: rel(root, &pdir),
                    unpaired_garment: String::new(),
                }),
                Err(e) => {
                    let path = match &e {
                        Error::Asset { path, .. } => rel(root, path),
                        _ => rel(root, &pdir),
                    };
                    errors.push(RecordError {
                        path,
                        message: e.to_string(),
                    });
                }
            }
        }
    }
    for k in [1u8, 2] {
        let idx: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].pose_id == k)
            .collect();
        for (j, &i) in idx.iter().enumerate() {
            let partner = idx[(j + 1) % idx.len()];
            records[i].unpaired_garment = format!("{}/{}", records[partner].dir, ASSET_FILES[1].1);
        }
    }
    let mut counts = BTreeMap::new();
    for k in ["1", "2"] {
        counts.insert(
            k.to_string(),
            records
                .iter()
                .filter(|r| r.pose_id.to_string() == k)
                .count(),
        );
    }
    Ok(ManifestBuild {
        manifest: DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            split,
            records,
            counts,
        },
        warnings,
        errors,
    })
}

/// Loads and re-validates every record of a manifest.
pub fn load_records(
    root: &Path,
    manifest: &DatasetManifest,
    options: &BuildOptions,
) -> Result<Vec<SampleRecord>> {
    manifest
        .records
        .iter()
        .map(|r| build_sample(&r.paths(root), r.pose_id, &r.subject_id, options))
        .collect()
}
