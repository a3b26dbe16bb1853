use candle_core::{DType, Tensor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::features::FeatureExtractor;
use crate::tensor::{ImageTensor, ValueRange};

/// One feature row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    data: DMatrix<f64>,
}

impl FeatureSet {
    /// Row-major `n x d` values.
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * d {
            return dim_err(format!("{} values for a {n}x{d} feature set", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Value("feature set has non-finite entries".into()));
        }
        Ok(Self {
            data: DMatrix::from_row_slice(n, d, &values),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return dim_err("ragged feature rows");
        }
        Self::new(rows.len(), d, rows.concat())
    }

    /// `(n, d)` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, d) = t.dims2()?;
        Self::new(
            n,
            d,
            t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?,
        )
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn rows(&self, start: usize, len: usize) -> FeatureSet {
        FeatureSet {
            data: self.data.rows(start, len).into_owned(),
        }
    }

    /// Rows of both sets, `self` first.
    pub fn concat(&self, other: &FeatureSet) -> Result<FeatureSet> {
        if self.dim() != other.dim() {
            return dim_err(format!("feature widths {} vs {}", self.dim(), other.dim()));
        }
        let mut data = DMatrix::zeros(self.len() + other.len(), self.dim());
        data.rows_mut(0, self.len()).copy_from(&self.data);
        data.rows_mut(self.len(), other.len())
            .copy_from(&other.data);
        Ok(FeatureSet { data })
    }

    pub fn mean(&self) -> DVector<f64> {
        self.data.row_mean().transpose()
    }

    /// Sample covariance with Bessel's correction.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.len();
        let mu = self.data.row_mean();
        let mut centered = self.data.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mu;
        }
        (centered.transpose() * centered) / (n as f64 - 1.0)
    }
}

/// Pooled embeddings of `images` (fed in `[-1, 1]`), one row each.
pub fn extract_features(
    images: &[ImageTensor],
    extractor: &dyn FeatureExtractor,
) -> Result<FeatureSet> {
    let mut rows = Vec::with_capacity(images.len());
    for img in images {
        let e = extractor.embedding(&img.with_range(ValueRange::Signed)?.batched()?)?;
        rows.push(e.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?);
    }
    FeatureSet::from_rows(&rows)
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(sym(m));
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `Tr((A B)^{1/2})` via the symmetric product `A^{1/2} B A^{1/2}`, with
/// negative eigenvalues clamped at zero.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let ra = psd_sqrt(a);
    let inner = sym(&(&ra * b * &ra));
    SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum()
}

/// Frechet distance between Gaussians fitted to `a` and `b`.
pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return arg_err(format!(
            "fid needs at least 2 rows per set, got {} and {}",
            a.len(),
            b.len()
        ));
    }
    if a.dim() != b.dim() {
        return dim_err(format!("feature widths {} vs {}", a.dim(), b.dim()));
    }
    let dm = a.mean() - b.mean();
    let (ca, cb) = (a.covariance(), b.covariance());
    // both operand orders, so the result is exactly symmetric
    let cross = 0.5 * (trace_sqrt_product(&ca, &cb) + trace_sqrt_product(&cb, &ca));
    let v = dm.dot(&dm) + (ca.trace() + cb.trace()) - 2.0 * cross;
    Ok(v.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KidOptions {
    pub degree: i32,
    /// Rows per block; `None` uses one block of up to 1000 rows per set.
    pub block_size: Option<usize>,
}

impl Default for KidOptions {
    fn default() -> Self {
        Self {
            degree: 3,
            block_size: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KidValue {
    pub value: f64,
    pub stderr: f64,
    pub blocks: usize,
}

fn poly_kernel(x: &DMatrix<f64>, y: &DMatrix<f64>, degree: i32) -> DMatrix<f64> {
    let d = x.ncols() as f64;
    (x * y.transpose()).map(|v| (v / d + 1.0).powi(degree))
}

/// Unbiased MMD^2 with the polynomial kernel; diagonal terms of the
/// within-set sums are excluded.
pub fn mmd2_unbiased(x: &DMatrix<f64>, y: &DMatrix<f64>, degree: i32) -> f64 {
    let (m, n) = (x.nrows() as f64, y.nrows() as f64);
    let kxx = poly_kernel(x, x, degree);
    let kyy = poly_kernel(y, y, degree);
    // both orientations, so swapping the sets gives the same bits
    let cross = 0.5 * (poly_kernel(x, y, degree).sum() + poly_kernel(y, x, degree).sum());
    let off = |k: &DMatrix<f64>| k.sum() - k.trace();
    off(&kxx) / (m * (m - 1.0)) + off(&kyy) / (n * (n - 1.0)) - 2.0 * cross / (m * n)
}

/// Kernel distance over disjoint consecutive blocks; value is the block mean
/// and the error is the standard error over blocks (0 for a single block).
pub fn kid(a: &FeatureSet, b: &FeatureSet, options: &KidOptions) -> Result<KidValue> {
    if a.dim() != b.dim() {
        return dim_err(format!("feature widths {} vs {}", a.dim(), b.dim()));
    }
    let n = a.len().min(b.len());
    let block = match options.block_size {
        Some(s) if s > n => return arg_err(format!("block size {s} exceeds {n} rows")),
        Some(s) => s,
        None => n.min(1000),
    };
    if block < 2 {
        return arg_err(format!("kid needs blocks of at least 2 rows, got {block}"));
    }
    let blocks = n / block;
    let values: Vec<f64> = (0..blocks)
        .map(|i| {
            mmd2_unbiased(
                &a.rows(i * block, block).data,
                &b.rows(i * block, block).data,
                options.degree,
            )
        })
        .collect();
    let mean = values.iter().sum::<f64>() / blocks as f64;
    let stderr = if blocks > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (blocks as f64 - 1.0);
        (var / blocks as f64).sqrt()
    } else {
        0.0
    };
    Ok(KidValue {
        value: mean,
        stderr,
        blocks,
    })
}
