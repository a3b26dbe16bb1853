//! Synthetic dataset writer: flat-shaded figures with consistent parse
//! maps, dense-pose renderings, keypoints, garments and captions. Used by
//! tests, the acceptance suite and desk-scale training runs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::agnostic::make_agnostic;
use super::attributes::{GarmentAttributes, ShirtLength, Sleeve};
use super::caption::serialize_caption;
use super::dataset::{SamplePaths, Split};
use super::labels::*;
use super::pose::{Keypoint, PoseKeypoints};
use super::{PARSE_CLASSES, PARSE_PALETTE};
use crate::error::Result;
use crate::tensor::{ImageTensor, ParseMap, ValueRange};

/// Nominal RGB (0..1) for the sample color tokens; unknown tokens get gray.
pub fn color_rgb(token: &str) -> [f32; 3] {
    match token {
        "blue" => [0.15, 0.3, 0.8],
        "red" => [0.8, 0.1, 0.1],
        "white" => [0.95, 0.95, 0.95],
        "black" => [0.08, 0.08, 0.08],
        "green" => [0.1, 0.6, 0.2],
        "yellow" => [0.95, 0.85, 0.1],
        "pink" => [0.95, 0.6, 0.7],
        "grey" => [0.5, 0.5, 0.5],
        "navy" => [0.05, 0.1, 0.35],
        "beige" => [0.85, 0.78, 0.62],
        "purple" => [0.5, 0.2, 0.6],
        "orange" => [0.95, 0.5, 0.1],
        _ => [0.6, 0.6, 0.6],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub height: usize,
    pub width: usize,
    pub subjects: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            height: 512,
            width: 384,
            subjects: 4,
            seed: 7,
        }
    }
}

struct Canvas {
    h: usize,
    w: usize,
    rgb: Vec<[f32; 3]>,
    labels: Vec<u8>,
    dense: Vec<[f32; 3]>,
}

impl Canvas {
    fn new(h: usize, w: usize, bg: [f32; 3]) -> Self {
        Self {
            h,
            w,
            rgb: vec![bg; h * w],
            labels: vec![BACKGROUND; h * w],
            dense: vec![[0.0; 3]; h * w],
        }
    }

    /// Paints the axis-aligned box `[x0, x1) x [y0, y1)` given in relative
    /// units. `color` receives box-relative coordinates in `[0, 1)`.
    fn rect(
        &mut self,
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
        label: u8,
        color: impl Fn(f32, f32) -> [f32; 3],
    ) {
        let (px0, px1) = (
            (x0 * self.w as f64).round() as isize,
            (x1 * self.w as f64).round() as isize,
        );
        let (py0, py1) = (
            (y0 * self.h as f64).round() as isize,
            (y1 * self.h as f64).round() as isize,
        );
        for y in py0.max(0)..py1.min(self.h as isize) {
            for x in px0.max(0)..px1.min(self.w as isize) {
                let i = y as usize * self.w + x as usize;
                let u = (x - px0) as f32 / (px1 - px0).max(1) as f32;
                let v = (y - py0) as f32 / (py1 - py0).max(1) as f32;
                self.rgb[i] = color(u, v);
                self.labels[i] = label;
                self.dense[i] = [label as f32 / PARSE_CLASSES as f32, u, v];
            }
        }
    }

    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, label: u8, color: [f32; 3]) {
        let (cx, cy) = (cx * self.w as f64, cy * self.h as f64);
        let (rx, ry) = (rx * self.w as f64, ry * self.h as f64);
        for y in 0..self.h {
            for x in 0..self.w {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    let i = y * self.w + x;
                    self.rgb[i] = color;
                    self.labels[i] = label;
                    self.dense[i] = [
                        label as f32 / PARSE_CLASSES as f32,
                        (dx as f32 + 1.0) / 2.0,
                        (dy as f32 + 1.0) / 2.0,
                    ];
                }
            }
        }
    }

    fn image(&self, px: &[[f32; 3]]) -> Result<ImageTensor> {
        let n = self.h * self.w;
        let mut data = vec![0f32; 3 * n];
        for (i, p) in px.iter().enumerate() {
            for c in 0..3 {
                data[c * n + i] = p[c] * 2.0 - 1.0;
            }
        }
        // quantise now so what is written is what is read back
        let t = ImageTensor::from_vec(data, 3, self.h, self.w, ValueRange::Signed)?;
        Ok(ImageTensor::from_rgb8(&t.to_rgb8()?, ValueRange::Signed))
    }
}

/// Pattern and a top-to-bottom shading ramp, both in garment coordinates,
/// so the flat garment and the worn one only line up after warping.
fn garment_color(a: &GarmentAttributes) -> impl Fn(f32, f32) -> [f32; 3] {
    let base = color_rgb(&a.color);
    let pattern = a.pattern.clone();
    move |u, v| {
        let cell = |t: f32, n: f32| (t * n).floor() as i32;
        let on = match pattern.as_str() {
            "striped" => cell(v, 8.0) % 2 == 0,
            "checked" | "plaid" => (cell(u, 6.0) + cell(v, 8.0)) % 2 == 0,
            "dotted" => (u * 6.0).fract() < 0.35 && (v * 8.0).fract() < 0.35,
            _ => false,
        };
        let shade = if on { 0.55 } else { 1.0 } * (1.15 - 0.4 * v);
        base.map(|c| (c * shade).clamp(0.0, 1.0))
    }
}

fn torso_length(a: &GarmentAttributes) -> f64 {
    match a.shirt_length {
        ShirtLength::HighWaist => 0.2,
        ShirtLength::Normal => 0.26,
        ShirtLength::Long => 0.3,
        ShirtLength::ExtraLong => 0.34,
    }
}

fn sleeve_length(a: &GarmentAttributes) -> f64 {
    match a.sleeve {
        Sleeve::Sleeveless => 0.0,
        Sleeve::Short => 0.08,
        Sleeve::Long => 0.26,
    }
}

/// Writes one pose directory. Pose 2 moves the figure sideways and
/// widens the torso.
pub fn write_fixture_sample(
    dir: &Path,
    attrs: &GarmentAttributes,
    pose_id: u8,
    skin: [f32; 3],
    height: usize,
    width: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let cx = if pose_id == 1 { 0.5 } else { 0.56 };
    let half = if pose_id == 1 { 0.16 } else { 0.18 };
    let top = 0.23;
    let bottom = top + torso_length(attrs);
    let gcol = garment_color(attrs);
    let mut cv = Canvas::new(height, width, [0.92, 0.92, 0.9]);

    cv.ellipse(cx, 0.1, 0.09, 0.065, HAIR, [0.2, 0.12, 0.05]);
    cv.ellipse(cx, 0.14, 0.07, 0.06, FACE, skin);
    cv.rect(cx - 0.03, cx + 0.03, 0.19, top, NECK, |_, _| skin);
    cv.rect(cx - 0.15, cx + 0.15, bottom, 0.8, LOWER_GARMENT, |_, _| {
        [0.2, 0.2, 0.3]
    });
    cv.rect(cx - 0.13, cx - 0.02, 0.8, 0.93, LEFT_LEG, |_, _| skin);
    cv.rect(cx + 0.02, cx + 0.13, 0.8, 0.93, RIGHT_LEG, |_, _| skin);
    cv.rect(cx - 0.14, cx - 0.02, 0.93, 0.97, LEFT_SHOE, |_, _| {
        [0.1, 0.1, 0.1]
    });
    cv.rect(cx + 0.02, cx + 0.14, 0.93, 0.97, RIGHT_SHOE, |_, _| {
        [0.1, 0.1, 0.1]
    });
    cv.rect(cx - half - 0.08, cx - half, 0.24, 0.52, LEFT_ARM, |_, _| {
        skin
    });
    cv.rect(
        cx + half,
        cx + half + 0.08,
        0.24,
        0.52,
        RIGHT_ARM,
        |_, _| skin,
    );
    cv.rect(cx - half, cx + half, top, bottom, UPPER_GARMENT, &gcol);
    let sl = sleeve_length(attrs);
    if sl > 0.0 {
        cv.rect(
            cx - half - 0.08,
            cx - half,
            0.24,
            0.24 + sl,
            UPPER_GARMENT,
            &gcol,
        );
        cv.rect(
            cx + half,
            cx + half + 0.08,
            0.24,
            0.24 + sl,
            UPPER_GARMENT,
            &gcol,
        );
    }
    cv.rect(cx - 0.03, cx + 0.03, top, top + 0.03, TORSO_SKIN, |_, _| {
        skin
    });

    let person = cv.image(&cv.rgb)?;
    let dense = cv.image(&cv.dense)?;
    let parse = ParseMap::new(cv.labels.clone(), height, width, PARSE_CLASSES)?;

    let (fw, fh) = ((width - 1) as f64, (height - 1) as f64);
    let kp = |x: f64, y: f64| Keypoint {
        x: (x * width as f64).clamp(0.0, fw),
        y: (y * height as f64).clamp(0.0, fh),
        confidence: 1.0,
    };
    let joints = vec![
        kp(cx, 0.15),
        kp(cx, 0.21),
        kp(cx - half, 0.25),
        kp(cx - half - 0.04, 0.38),
        kp(cx - half - 0.04, 0.5),
        kp(cx + half, 0.25),
        kp(cx + half + 0.04, 0.38),
        kp(cx + half + 0.04, 0.5),
        kp(cx - 0.07, bottom),
        kp(cx - 0.07, 0.8),
        kp(cx - 0.07, 0.93),
        kp(cx + 0.07, bottom),
        kp(cx + 0.07, 0.8),
        kp(cx + 0.07, 0.93),
        kp(cx - 0.025, 0.13),
        kp(cx + 0.025, 0.13),
        kp(cx - 0.06, 0.14),
        kp(cx + 0.06, 0.14),
    ];
    let keypoints = PoseKeypoints::new(joints, height, width)?;
    let agnostic = make_agnostic(&person, &parse, &keypoints)?;

    // in-shop garment: the same shape, centred and enlarged on a white page
    let mut shop = Canvas::new(height, width, [1.0, 1.0, 1.0]);
    let (g_top, g_bottom) = (0.18, 0.18 + torso_length(attrs) * 2.0);
    shop.rect(0.25, 0.75, g_top, g_bottom, UPPER_GARMENT, &gcol);
    if sl > 0.0 {
        shop.rect(0.12, 0.25, g_top, g_top + sl * 1.6, UPPER_GARMENT, &gcol);
        shop.rect(0.75, 0.88, g_top, g_top + sl * 1.6, UPPER_GARMENT, &gcol);
    }
    let garment = shop.image(&shop.rgb)?;
    let mask: Vec<[f32; 3]> = shop
        .labels
        .iter()
        .map(|l| {
            if *l == UPPER_GARMENT {
                [1.0; 3]
            } else {
                [0.0; 3]
            }
        })
        .collect();
    let mask = shop.image(&mask)?;

    let paths = SamplePaths::in_dir(dir);
    person.save_png(&paths.person)?;
    garment.save_png(&paths.garment)?;
    image::DynamicImage::ImageRgb8(mask.to_rgb8()?)
        .to_luma8()
        .save(&paths.garment_mask)?;
    std::fs::write(&paths.caption, format!("{}\n", serialize_caption(attrs)))?;
    dense.save_png(&paths.dense_pose)?;
    std::fs::write(&paths.openpose, keypoints.to_json())?;
    parse.save_png(&paths.parse, &PARSE_PALETTE)?;
    agnostic.save_png(&paths.agnostic)?;
    Ok(())
}

/// Writes `<root>/<split>/subjectNNN/pose{1,2}/` for `spec.subjects` subjects.
pub fn write_fixture_split(root: &Path, split: Split, spec: &FixtureSpec) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for s in 0..spec.subjects {
        let attrs = GarmentAttributes::random(&mut rng);
        let tone: f32 = rng.random_range(0.45..0.85);
        let skin = [tone, tone * 0.8, tone * 0.65];
        for pose in [1u8, 2] {
            let dir = root
                .join(split.as_str())
                .join(format!("subject{s:03}"))
                .join(format!("pose{pose}"));
            write_fixture_sample(&dir, &attrs, pose, skin, spec.height, spec.width)?;
        }
    }
    Ok(())
}
