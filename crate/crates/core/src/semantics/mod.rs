//! Garment semantics and dataset construction: the seven-slot attribute
//! schema, caption serialization and parsing, captioner orchestration,
//! agnostic person images and the on-disk triplet dataset.

mod agnostic;
mod attributes;
mod caption;
mod captioner;
mod dataset;
mod fixture;
mod pose;

pub use agnostic::make_agnostic;
pub use attributes::{
    is_token, validate_attributes, AttributeCandidate, AttributeViolation, Collar, Fit,
    GarmentAttributes, Neckline, ShirtLength, Sleeve, ViolationKind, SAMPLE_COLORS,
    SAMPLE_PATTERNS, SLOTS,
};
pub use caption::{clean_caption, parse_caption, serialize_caption};
pub use captioner::{
    generate_caption, generate_caption_traced, Attempt, CaptionClient, CaptionClients,
    CaptionPolicy, CaptionResult, CaptionSource, ClientResponse, CommandClient, ScriptedClient,
    SAFETY_EXIT_CODE,
};
pub use dataset::{
    build_manifest, build_sample, load_records, BuildOptions, DatasetManifest, ManifestBuild,
    ManifestRecord, RecordError, SamplePaths, SampleRecord, Split, ASSET_FILES,
    MANIFEST_SCHEMA_VERSION,
};
pub use fixture::{color_rgb, write_fixture_sample, write_fixture_split, FixtureSpec};
pub use pose::{Keypoint, PoseKeypoints, JOINTS};

/// Number of human-parse classes.
pub const PARSE_CLASSES: usize = 13;

pub mod labels {
    pub const BACKGROUND: u8 = 0;
    pub const HAIR: u8 = 1;
    pub const FACE: u8 = 2;
    pub const UPPER_GARMENT: u8 = 3;
    pub const LEFT_ARM: u8 = 4;
    pub const RIGHT_ARM: u8 = 5;
    pub const TORSO_SKIN: u8 = 6;
    pub const LOWER_GARMENT: u8 = 7;
    pub const LEFT_LEG: u8 = 8;
    pub const RIGHT_LEG: u8 = 9;
    pub const LEFT_SHOE: u8 = 10;
    pub const RIGHT_SHOE: u8 = 11;
    pub const NECK: u8 = 12;

    pub const NAMES: [&str; super::PARSE_CLASSES] = [
        "background",
        "hair",
        "face",
        "upper-garment",
        "left-arm",
        "right-arm",
        "torso-skin",
        "lower-garment",
        "left-leg",
        "right-leg",
        "left-shoe",
        "right-shoe",
        "neck",
    ];

    /// Pixels hidden in the agnostic person image.
    pub const TRY_ON_REGION: [u8; 4] = [UPPER_GARMENT, LEFT_ARM, RIGHT_ARM, TORSO_SKIN];
}

/// RGB palette written into parse PNGs.
pub const PARSE_PALETTE: [[u8; 3]; PARSE_CLASSES] = [
    [0, 0, 0],
    [128, 0, 0],
    [255, 85, 0],
    [255, 170, 0],
    [51, 170, 221],
    [0, 255, 255],
    [85, 51, 0],
    [0, 85, 85],
    [85, 255, 170],
    [170, 255, 85],
    [255, 255, 0],
    [0, 128, 0],
    [0, 0, 255],
];
