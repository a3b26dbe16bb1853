use super::labels::TRY_ON_REGION;
use super::pose::PoseKeypoints;
use super::PARSE_CLASSES;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{ImageTensor, ParseMap};

/// Replaces the upper-garment, arm and torso-skin pixels with the neutral
/// mid value of the image's range. Every other pixel is copied unchanged.
///
/// Keypoints are checked against the image bounds; the region itself comes
/// from the parse map.
pub fn make_agnostic(
    person: &ImageTensor,
    parse: &ParseMap,
    keypoints: &PoseKeypoints,
) -> Result<ImageTensor> {
    if parse.num_classes() != PARSE_CLASSES {
        return Err(Error::Annotation(format!(
            "parse map has {} classes; the agnostic region needs the {PARSE_CLASSES}-class label set",
            parse.num_classes()
        )));
    }
    let (h, w) = person.hw();
    if parse.hw() != (h, w) {
        return dim_err(format!(
            "person {:?} vs parse {:?}",
            person.hw(),
            parse.hw()
        ));
    }
    for p in keypoints.points() {
        if p.confidence > 0.0 && (p.x > (w - 1) as f64 || p.y > (h - 1) as f64) {
            return Err(Error::Annotation(format!(
                "keypoint ({}, {}) outside the {w}x{h} person image",
                p.x, p.y
            )));
        }
    }
    let (lo, hi) = person.range().bounds();
    let gray = ((lo + hi) / 2.0) as f32;
    let mut data = person.to_vec()?;
    let plane = h * w;
    for (i, l) in parse.labels().iter().enumerate() {
        if TRY_ON_REGION.contains(l) {
            for c in 0..person.channels() {
                data[c * plane + i] = gray;
            }
        }
    }
    ImageTensor::from_vec(data, person.channels(), h, w, person.range())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::labels;
    use crate::tensor::ValueRange;

    fn person() -> ImageTensor {
        let data: Vec<f32> = (0..3 * 6 * 4)
            .map(|i| ((i * 7) % 19) as f32 / 10.0 - 0.9)
            .collect();
        ImageTensor::from_vec(data, 3, 6, 4, ValueRange::Signed).unwrap()
    }

    #[test]
    fn no_region_is_identity() {
        let p = person();
        let parse = ParseMap::filled(labels::FACE, 6, 4, PARSE_CLASSES).unwrap();
        let a = make_agnostic(&p, &parse, &PoseKeypoints::missing()).unwrap();
        assert_eq!(a.to_vec().unwrap(), p.to_vec().unwrap());
    }

    #[test]
    fn full_region_is_gray() {
        let parse = ParseMap::filled(labels::UPPER_GARMENT, 6, 4, PARSE_CLASSES).unwrap();
        let a = make_agnostic(&person(), &parse, &PoseKeypoints::missing()).unwrap();
        assert!(a.to_vec().unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn exactly_the_region_changes() {
        let p = person();
        let mut lab = vec![0u8; 24];
        lab[5] = labels::LEFT_ARM;
        lab[6] = labels::TORSO_SKIN;
        lab[7] = labels::NECK;
        let parse = ParseMap::new(lab.clone(), 6, 4, PARSE_CLASSES).unwrap();
        let a = make_agnostic(&p, &parse, &PoseKeypoints::missing())
            .unwrap()
            .to_vec()
            .unwrap();
        let orig = p.to_vec().unwrap();
        for c in 0..3 {
            for i in 0..24 {
                let masked = labels::TRY_ON_REGION.contains(&lab[i]);
                assert_eq!(
                    a[c * 24 + i] == 0.0 && orig[c * 24 + i] != 0.0,
                    masked && orig[c * 24 + i] != 0.0
                );
                if !masked {
                    assert_eq!(a[c * 24 + i].to_bits(), orig[c * 24 + i].to_bits());
                }
            }
        }
    }

    #[test]
    fn wrong_label_set() {
        let parse = ParseMap::filled(0, 6, 4, 5).unwrap();
        assert!(matches!(
            make_agnostic(&person(), &parse, &PoseKeypoints::missing()),
            Err(Error::Annotation(_))
        ));
    }
}
