use candle_core::Tensor;

use crate::error::{dim_err, Result};

/// Local cost volume `(B, (2d+1)^2, h, w)` of radius `d`.
///
/// Channel `(dy + d) * (2d + 1) + (dx + d)` holds
/// `<a(x), b(x + (dx, dy))> / c`, with zero contribution from samples of `b`
/// that fall outside the map.
#[derive(Debug, Clone)]
pub struct CorrelationVolume {
    data: Tensor,
    radius: usize,
}

impl CorrelationVolume {
    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Channel index of displacement `(dx, dy)`.
    pub fn channel(&self, dx: i64, dy: i64) -> usize {
        let d = self.radius as i64;
        ((dy + d) * (2 * d + 1) + (dx + d)) as usize
    }
}

pub fn local_correlation(a: &Tensor, b: &Tensor, radius: usize) -> Result<CorrelationVolume> {
    if a.dims() != b.dims() {
        return dim_err(format!(
            "correlation inputs {:?} vs {:?}",
            a.dims(),
            b.dims()
        ));
    }
    let (_, c, h, w) = a.dims4()?;
    let padded = b
        .pad_with_zeros(2, radius, radius)?
        .pad_with_zeros(3, radius, radius)?;
    let span = 2 * radius + 1;
    let mut planes = Vec::with_capacity(span * span);
    for dy in 0..span {
        let rows = padded.narrow(2, dy, h)?;
        for dx in 0..span {
            let shifted = rows.narrow(3, dx, w)?;
            planes.push((a * shifted)?.sum_keepdim(1)?);
        }
    }
    let data = (Tensor::cat(&planes, 1)? / c as f64)?;
    Ok(CorrelationVolume { data, radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn radius_zero_self_correlation_is_mean_square() {
        let a = Tensor::new(&[[[[1f64, -2.]], [[3., 0.5]]]], &Device::Cpu).unwrap();
        let v = local_correlation(&a, &a, 0).unwrap();
        let got = v.tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(got, vec![(1. + 9.) / 2., (4. + 0.25) / 2.]);
    }

    #[test]
    fn zero_partner_gives_zero_volume() {
        let a = Tensor::ones((1, 3, 5, 5), DType::F32, &Device::Cpu).unwrap();
        let b = Tensor::zeros((1, 3, 5, 5), DType::F32, &Device::Cpu).unwrap();
        let v = local_correlation(&a, &b, 2).unwrap();
        assert_eq!(v.tensor().dims(), &[1, 25, 5, 5]);
        assert_eq!(
            v.tensor()
                .abs()
                .unwrap()
                .sum_all()
                .unwrap()
                .to_scalar::<f32>()
                .unwrap(),
            0.0
        );
    }

    /// Brute-force enumeration over all nine shifts of a unit impulse.
    #[test]
    fn impulse_matches_enumeration() {
        let mut av = vec![0f64; 9];
        av[4] = 1.0;
        let bv: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let a = Tensor::from_vec(av.clone(), (1, 1, 3, 3), &Device::Cpu).unwrap();
        let b = Tensor::from_vec(bv.clone(), (1, 1, 3, 3), &Device::Cpu).unwrap();
        let vol = local_correlation(&a, &b, 1).unwrap();
        let got = vol.tensor().squeeze(0).unwrap().to_vec3::<f64>().unwrap();
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let ch = vol.channel(dx, dy);
                for y in 0..3i64 {
                    for x in 0..3i64 {
                        let (sy, sx) = (y + dy, x + dx);
                        let bval = if (0..3).contains(&sy) && (0..3).contains(&sx) {
                            bv[(sy * 3 + sx) as usize]
                        } else {
                            0.0
                        };
                        let want = av[(y * 3 + x) as usize] * bval;
                        assert_eq!(got[ch][y as usize][x as usize], want);
                    }
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor::zeros((1, 2, 4, 4), DType::F32, &Device::Cpu).unwrap();
        let b = Tensor::zeros((1, 3, 4, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(local_correlation(&a, &b, 1).is_err());
    }
}
