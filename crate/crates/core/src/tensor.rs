//! Pixel and label carriers shared by every stage of the pipeline.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Declared value interval of an [`ImageTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueRange {
    /// `[-1, 1]`, used for model inputs and outputs.
    Signed,
    /// `[0, 1]`, used by the metrics.
    Unit,
}

impl ValueRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ValueRange::Signed => (-1.0, 1.0),
            ValueRange::Unit => (0.0, 1.0),
        }
    }

    fn from_byte(self, v: u8) -> f32 {
        let u = v as f32 / 255.0;
        match self {
            ValueRange::Signed => u * 2.0 - 1.0,
            ValueRange::Unit => u,
        }
    }

    fn to_byte(self, v: f32) -> u8 {
        let u = match self {
            ValueRange::Signed => (v + 1.0) * 0.5,
            ValueRange::Unit => v,
        };
        (u.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// A `c x H x W` floating image with a declared value range.
#[derive(Debug, Clone)]
pub struct ImageTensor {
    data: Tensor,
    range: ValueRange,
}

impl ImageTensor {
    /// Wraps a rank-3 tensor, checking finiteness and the declared range.
    pub fn new(data: Tensor, range: ValueRange) -> Result<Self> {
        let (c, h, w) = data.dims3()?;
        if c == 0 || h == 0 || w == 0 {
            return dim_err(format!("empty image {c}x{h}x{w}"));
        }
        let (lo, hi) = range.bounds();
        let vals = data.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        if let Some(bad) = vals.iter().find(|v| !v.is_finite() || **v < lo || **v > hi) {
            return Err(Error::Value(format!(
                "pixel value {bad} outside [{lo}, {hi}] or not finite"
            )));
        }
        Ok(Self { data, range })
    }

    /// Wraps a tensor after clamping it into the declared range.
    pub fn clamped(data: &Tensor, range: ValueRange) -> Result<Self> {
        let (lo, hi) = range.bounds();
        Self::new(data.clamp(lo, hi)?, range)
    }

    pub fn from_vec(
        data: Vec<f32>,
        c: usize,
        h: usize,
        w: usize,
        range: ValueRange,
    ) -> Result<Self> {
        if data.len() != c * h * w {
            return dim_err(format!("{} values for a {c}x{h}x{w} image", data.len()));
        }
        Self::new(Tensor::from_vec(data, (c, h, w), &Device::Cpu)?, range)
    }

    pub fn filled(value: f32, c: usize, h: usize, w: usize, range: ValueRange) -> Result<Self> {
        Self::from_vec(vec![value; c * h * w], c, h, w, range)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn channels(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.data.dims()[2]
    }

    /// `(H, W)`.
    pub fn hw(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    /// Adds a leading batch axis.
    pub fn batched(&self) -> Result<Tensor> {
        Ok(self.data.unsqueeze(0)?)
    }

    pub fn to_vec(&self) -> Result<Vec<f32>> {
        Ok(self
            .data
            .flatten_all()?
            .to_dtype(DType::F32)?
            .to_vec1::<f32>()?)
    }

    pub fn to_vec_f64(&self) -> Result<Vec<f64>> {
        Ok(self
            .data
            .flatten_all()?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?)
    }

    /// Same pixels re-expressed in another value range.
    pub fn with_range(&self, range: ValueRange) -> Result<Self> {
        let data = match (self.range, range) {
            (a, b) if a == b => self.data.clone(),
            (ValueRange::Signed, ValueRange::Unit) => self.data.affine(0.5, 0.5)?,
            (ValueRange::Unit, ValueRange::Signed) => self.data.affine(2.0, -1.0)?,
            _ => unreachable!(),
        };
        Self::clamped(&data, range)
    }

    pub fn load_png(path: &Path, range: ValueRange) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img, range))
    }

    pub fn from_rgb8(img: &image::RgbImage, range: ValueRange) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0f32; 3 * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[c * h * w + y as usize * w + x as usize] = range.from_byte(px[c]);
            }
        }
        let t = Tensor::from_vec(data, (3, h, w), &Device::Cpu).expect("shape matches");
        Self { data: t, range }
    }

    /// Converts to 8-bit RGB; single-channel images are replicated.
    pub fn to_rgb8(&self) -> Result<image::RgbImage> {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        if c != 1 && c != 3 {
            return dim_err(format!("cannot render a {c}-channel image as RGB"));
        }
        let v = self.to_vec()?;
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let mut px = [0u8; 3];
                for (k, p) in px.iter_mut().enumerate() {
                    let ch = if c == 1 { 0 } else { k };
                    *p = self.range.to_byte(v[ch * h * w + y * w + x]);
                }
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        Ok(img)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()?.save(path)?;
        Ok(())
    }

    /// Bilinear (triangle filter) resize through 8-bit RGB.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        if self.hw() == (height, width) {
            return Ok(self.clone());
        }
        let img = image::imageops::resize(
            &self.to_rgb8()?,
            width as u32,
            height as u32,
            FilterType::Triangle,
        );
        Ok(Self::from_rgb8(&img, self.range))
    }
}

/// Per-pixel integer labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseMap {
    labels: Vec<u8>,
    height: usize,
    width: usize,
    num_classes: usize,
}

impl ParseMap {
    pub fn new(labels: Vec<u8>, height: usize, width: usize, num_classes: usize) -> Result<Self> {
        if labels.len() != height * width || height == 0 || width == 0 {
            return dim_err(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            ));
        }
        if let Some(bad) = labels.iter().find(|l| **l as usize >= num_classes) {
            return Err(Error::Value(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            labels,
            height,
            width,
            num_classes,
        })
    }

    pub fn filled(label: u8, height: usize, width: usize, num_classes: usize) -> Result<Self> {
        Self::new(vec![label; height * width], height, width, num_classes)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// `num_classes x H x W` one-hot encoding.
    pub fn one_hot(&self, dtype: DType) -> Result<Tensor> {
        let n = self.height * self.width;
        let mut data = vec![0f32; self.num_classes * n];
        for (i, l) in self.labels.iter().enumerate() {
            data[*l as usize * n + i] = 1.0;
        }
        Ok(Tensor::from_vec(
            data,
            (self.num_classes, self.height, self.width),
            &Device::Cpu,
        )?
        .to_dtype(dtype)?)
    }

    /// `1 x H x W` binary mask selecting the given labels.
    pub fn mask_of(&self, selected: &[u8]) -> Result<Tensor> {
        let data: Vec<f32> = self
            .labels
            .iter()
            .map(|l| if selected.contains(l) { 1.0 } else { 0.0 })
            .collect();
        Ok(Tensor::from_vec(
            data,
            (1, self.height, self.width),
            &Device::Cpu,
        )?)
    }

    pub fn count_of(&self, selected: &[u8]) -> usize {
        self.labels.iter().filter(|l| selected.contains(l)).count()
    }

    /// Nearest-neighbour resize; labels are never blended.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        if self.hw() == (height, width) {
            return Ok(self.clone());
        }
        let mut labels = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64).floor() as usize;
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64).floor() as usize;
                labels.push(self.get(sy.min(self.height - 1), sx.min(self.width - 1)));
            }
        }
        Self::new(labels, height, width, self.num_classes)
    }

    /// Reads an 8-bit paletted (or grayscale) PNG; the stored index is the label.
    pub fn load_png(path: &Path, num_classes: usize) -> Result<Self> {
        let file = File::open(path)?;
        let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
        decoder.set_transformations(png::Transformations::IDENTITY);
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Value(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Value(e.to_string()))?;
        if info.bit_depth != png::BitDepth::Eight
            || !matches!(
                info.color_type,
                png::ColorType::Indexed | png::ColorType::Grayscale
            )
        {
            return Err(Error::Value(format!(
                "parse map must be 8-bit indexed or grayscale, got {:?} {:?}",
                info.color_type, info.bit_depth
            )));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let mut labels = Vec::with_capacity(w * h);
        for row in buf[..info.buffer_size()].chunks(info.line_size) {
            labels.extend_from_slice(&row[..w]);
        }
        Self::new(labels, h, w, num_classes)
    }

    /// Writes an indexed PNG using `palette` (RGB triples, one per class).
    pub fn save_png(&self, path: &Path, palette: &[[u8; 3]]) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(file, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(palette.iter().flatten().copied().collect::<Vec<u8>>());
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Value(e.to_string()))?;
        writer
            .write_image_data(&self.labels)
            .map_err(|e| Error::Value(e.to_string()))?;
        Ok(())
    }
}
