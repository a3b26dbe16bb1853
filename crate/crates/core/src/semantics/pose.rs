use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Body-18 joint order.
pub const JOINTS: [&str; 18] = [
    "nose",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_eye",
    "l_eye",
    "r_ear",
    "l_ear",
];

/// One joint: pixel position and detection confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// 18 body joints. A joint outside the image must have confidence 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseKeypoints {
    points: Vec<Keypoint>,
}

impl PoseKeypoints {
    pub fn new(points: Vec<Keypoint>, height: usize, width: usize) -> Result<Self> {
        if points.len() != JOINTS.len() {
            return Err(Error::Annotation(format!(
                "expected 18 keypoints, got {}",
                points.len()
            )));
        }
        for (name, p) in JOINTS.iter().zip(&points) {
            if !(p.x.is_finite() && p.y.is_finite() && (0.0..=1.0).contains(&p.confidence)) {
                return Err(Error::Annotation(format!(
                    "keypoint `{name}` is malformed: {p:?}"
                )));
            }
            let inside =
                p.x >= 0.0 && p.y >= 0.0 && p.x <= (width - 1) as f64 && p.y <= (height - 1) as f64;
            if !inside && p.confidence != 0.0 {
                return Err(Error::Annotation(format!(
                    "keypoint `{name}` at ({}, {}) lies outside {width}x{height} with confidence {}",
                    p.x, p.y, p.confidence
                )));
            }
        }
        Ok(Self { points })
    }

    /// All joints undetected.
    pub fn missing() -> Self {
        Self {
            points: vec![
                Keypoint {
                    x: 0.0,
                    y: 0.0,
                    confidence: 0.0,
                };
                18
            ],
        }
    }

    pub fn points(&self) -> &[Keypoint] {
        &self.points
    }

    pub fn get(&self, joint: &str) -> Option<&Keypoint> {
        JOINTS
            .iter()
            .position(|j| *j == joint)
            .map(|i| &self.points[i])
    }

    /// Reads a JSON array of 18 `[x, y, c]` triples.
    pub fn from_json(text: &str, height: usize, width: usize) -> Result<Self> {
        let raw: Vec<[f64; 3]> = serde_json::from_str(text)
            .map_err(|e| Error::Annotation(format!("keypoint JSON: {e}")))?;
        let pts = raw
            .into_iter()
            .map(|[x, y, confidence]| Keypoint { x, y, confidence })
            .collect();
        Self::new(pts, height, width)
    }

    pub fn to_json(&self) -> String {
        let raw: Vec<[f64; 3]> = self
            .points
            .iter()
            .map(|p| [p.x, p.y, p.confidence])
            .collect();
        serde_json::to_string(&raw).expect("plain numbers")
    }

    pub fn load(path: &Path, height: usize, width: usize) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, height, width)
    }

    /// Rescales coordinates from `from` to `to` (both `(h, w)`), keeping pixel
    /// centres aligned.
    pub fn rescaled(&self, from: (usize, usize), to: (usize, usize)) -> Result<Self> {
        let sy = to.0 as f64 / from.0 as f64;
        let sx = to.1 as f64 / from.1 as f64;
        let pts = self
            .points
            .iter()
            .map(|p| {
                if p.confidence == 0.0 {
                    return *p;
                }
                let x = ((p.x + 0.5) * sx - 0.5).clamp(0.0, (to.1 - 1) as f64);
                let y = ((p.y + 0.5) * sy - 0.5).clamp(0.0, (to.0 - 1) as f64);
                Keypoint { x, y, ..*p }
            })
            .collect();
        Self::new(pts, to.0, to.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triples(n: usize) -> String {
        let v: Vec<[f64; 3]> = (0..n).map(|i| [i as f64, 2.0 * i as f64, 0.9]).collect();
        serde_json::to_string(&v).unwrap()
    }

    #[test]
    fn round_trip() {
        let k = PoseKeypoints::from_json(&triples(18), 64, 48).unwrap();
        assert_eq!(k.get("neck").unwrap().y, 2.0);
        assert_eq!(PoseKeypoints::from_json(&k.to_json(), 64, 48).unwrap(), k);
    }

    #[test]
    fn wrong_count() {
        assert!(PoseKeypoints::from_json(&triples(17), 64, 48).is_err());
    }

    #[test]
    fn out_of_bounds_needs_zero_confidence() {
        let mut v: Vec<[f64; 3]> = vec![[1.0, 1.0, 1.0]; 18];
        v[4] = [100.0, 1.0, 0.5];
        assert!(PoseKeypoints::from_json(&serde_json::to_string(&v).unwrap(), 64, 48).is_err());
        v[4][2] = 0.0;
        assert!(PoseKeypoints::from_json(&serde_json::to_string(&v).unwrap(), 64, 48).is_ok());
    }

    #[test]
    fn rescale_doubles() {
        let k = PoseKeypoints::from_json(&triples(18), 64, 48).unwrap();
        let r = k.rescaled((64, 48), (32, 24)).unwrap();
        assert_eq!(r.points()[2].x, 0.75);
    }
}
