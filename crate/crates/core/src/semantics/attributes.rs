use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! closed_set {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub const NAMES: &'static [&'static str] = &[$($text),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            pub fn from_name(s: &str) -> Option<Self> {
                match s {
                    $($text => Some($name::$variant),)+
                    _ => None,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                $name::from_name(&s).ok_or_else(|| {
                    serde::de::Error::custom(format!("`{s}` is not one of {:?}", $name::NAMES))
                })
            }
        }
    };
}

closed_set!(Fit { Slim => "slim", Loose => "loose", Straight => "straight" });
closed_set!(Neckline { Low => "low", Mid => "mid", High => "high" });
closed_set!(Collar {
    VNeck => "v-neck",
    DeepVNeck => "deep v-neck",
    RoundNeck => "round neck",
    SquareNeck => "square neck",
    Irregular => "irregular",
});
closed_set!(Sleeve {
    Sleeveless => "sleeveless",
    Short => "short sleeve",
    Long => "long sleeve",
});
closed_set!(ShirtLength {
    HighWaist => "high waist",
    Normal => "normal",
    Long => "long",
    ExtraLong => "extra-long",
});

/// Slot names in schema order.
pub const SLOTS: [&str; 7] = [
    "fit",
    "pattern",
    "color",
    "neckline",
    "collar",
    "sleeve",
    "shirt_length",
];

/// Seven-slot structured description of an upper-body garment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GarmentAttributes {
    pub fit: Fit,
    pub pattern: String,
    pub color: String,
    pub neckline: Neckline,
    pub collar: Collar,
    pub sleeve: Sleeve,
    pub shirt_length: ShirtLength,
}

/// Free-text token slots (pattern, color) are single lowercase words.
pub fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        && !s.starts_with('-')
        && !s.ends_with('-')
}

/// Tokens used when drawing random records.
pub const SAMPLE_PATTERNS: &[&str] = &[
    "solid", "striped", "plaid", "floral", "dotted", "checked", "graphic", "camo", "tie-dye",
    "paisley",
];
pub const SAMPLE_COLORS: &[&str] = &[
    "blue", "red", "white", "black", "green", "yellow", "pink", "grey", "navy", "beige", "purple",
    "orange",
];

impl GarmentAttributes {
    /// Draws every slot uniformly; pattern and color come from the sample lists.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            fit: *Fit::ALL.choose(rng).expect("non-empty"),
            pattern: SAMPLE_PATTERNS.choose(rng).expect("non-empty").to_string(),
            color: SAMPLE_COLORS.choose(rng).expect("non-empty").to_string(),
            neckline: *Neckline::ALL.choose(rng).expect("non-empty"),
            collar: *Collar::ALL.choose(rng).expect("non-empty"),
            sleeve: *Sleeve::ALL.choose(rng).expect("non-empty"),
            shirt_length: *ShirtLength::ALL.choose(rng).expect("non-empty"),
        }
    }

    pub fn to_candidate(&self) -> AttributeCandidate {
        AttributeCandidate {
            fit: Some(self.fit.to_string()),
            pattern: Some(self.pattern.clone()),
            color: Some(self.color.clone()),
            neckline: Some(self.neckline.to_string()),
            collar: Some(self.collar.to_string()),
            sleeve: Some(self.sleeve.to_string()),
            shirt_length: Some(self.shirt_length.to_string()),
        }
    }
}

/// A possibly incomplete or malformed attribute record, e.g. decoded from a
/// captioner's JSON answer or an annotation file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeCandidate {
    pub fit: Option<String>,
    pub pattern: Option<String>,
    pub color: Option<String>,
    pub neckline: Option<String>,
    pub collar: Option<String>,
    pub sleeve: Option<String>,
    pub shirt_length: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    Missing,
    NotAllowed {
        value: String,
        allowed: &'static [&'static str],
    },
    NotToken {
        value: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeViolation {
    pub slot: &'static str,
    pub kind: ViolationKind,
}

impl fmt::Display for AttributeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::Missing => write!(f, "`{}` is missing", self.slot),
            ViolationKind::NotAllowed { value, allowed } => {
                write!(f, "`{}` = {value:?} is not one of {allowed:?}", self.slot)
            }
            ViolationKind::NotToken { value } => write!(
                f,
                "`{}` = {value:?} must be a single lowercase token of [a-z0-9-]",
                self.slot
            ),
        }
    }
}

fn closed<T>(
    slot: &'static str,
    v: &Option<String>,
    parse: fn(&str) -> Option<T>,
    allowed: &'static [&'static str],
    out: &mut Vec<AttributeViolation>,
) -> Option<T> {
    let Some(raw) = v else {
        out.push(AttributeViolation {
            slot,
            kind: ViolationKind::Missing,
        });
        return None;
    };
    let r = parse(raw.trim());
    if r.is_none() {
        out.push(AttributeViolation {
            slot,
            kind: ViolationKind::NotAllowed {
                value: raw.clone(),
                allowed,
            },
        });
    }
    r
}

fn token(
    slot: &'static str,
    v: &Option<String>,
    out: &mut Vec<AttributeViolation>,
) -> Option<String> {
    let Some(raw) = v else {
        out.push(AttributeViolation {
            slot,
            kind: ViolationKind::Missing,
        });
        return None;
    };
    let t = raw.trim();
    if is_token(t) {
        Some(t.to_string())
    } else {
        out.push(AttributeViolation {
            slot,
            kind: ViolationKind::NotToken { value: raw.clone() },
        });
        None
    }
}

/// Checks every slot and reports all violations at once, in schema order.
pub fn validate_attributes(c: &AttributeCandidate) -> Result<GarmentAttributes> {
    let mut v = Vec::new();
    let fit = closed("fit", &c.fit, Fit::from_name, Fit::NAMES, &mut v);
    let pattern = token("pattern", &c.pattern, &mut v);
    let color = token("color", &c.color, &mut v);
    let neckline = closed(
        "neckline",
        &c.neckline,
        Neckline::from_name,
        Neckline::NAMES,
        &mut v,
    );
    let collar = closed(
        "collar",
        &c.collar,
        Collar::from_name,
        Collar::NAMES,
        &mut v,
    );
    let sleeve = closed(
        "sleeve",
        &c.sleeve,
        Sleeve::from_name,
        Sleeve::NAMES,
        &mut v,
    );
    let shirt_length = closed(
        "shirt_length",
        &c.shirt_length,
        ShirtLength::from_name,
        ShirtLength::NAMES,
        &mut v,
    );
    match (fit, pattern, color, neckline, collar, sleeve, shirt_length) {
        (
            Some(fit),
            Some(pattern),
            Some(color),
            Some(neckline),
            Some(collar),
            Some(sleeve),
            Some(shirt_length),
        ) if v.is_empty() => Ok(GarmentAttributes {
            fit,
            pattern,
            color,
            neckline,
            collar,
            sleeve,
            shirt_length,
        }),
        _ => Err(Error::Attributes(v)),
    }
}
