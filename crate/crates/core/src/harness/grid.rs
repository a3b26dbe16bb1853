use std::path::Path;

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};

use crate::error::{arg_err, Result};
use crate::tensor::ImageTensor;

/// Height of the column-header band above the cells.
pub const HEADER_HEIGHT: u32 = 16;
const GLYPH: u32 = 8;

/// Writes `text` in 8x8 glyphs, clipped to `max_width`, with its top-left
/// corner at `(x, y)`.
fn draw_text(img: &mut RgbImage, text: &str, x: u32, y: u32, max_width: u32) {
    for (i, ch) in text.chars().enumerate() {
        let gx = x + i as u32 * GLYPH;
        if gx + GLYPH > x + max_width {
            break;
        }
        let glyph = BASIC_FONTS
            .get(ch)
            .or_else(|| BASIC_FONTS.get('?'))
            .unwrap_or([0; 8]);
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..GLYPH {
                if bits >> col & 1 == 1 {
                    img.put_pixel(gx + col, y + row as u32, Rgb([0, 0, 0]));
                }
            }
        }
    }
}

/// Tiles `rows` under a white header band carrying one label per column.
/// Cell `(r, c)` has its top-left corner at `(c W, HEADER_HEIGHT + r H)`.
pub fn compose_grid(rows: &[Vec<ImageTensor>], headers: &[&str]) -> Result<RgbImage> {
    let Some(first) = rows.first().and_then(|r| r.first()) else {
        return arg_err("grid needs at least one row with one cell");
    };
    let cols = rows[0].len();
    if let Some(r) = rows.iter().position(|r| r.len() != cols) {
        return arg_err(format!(
            "ragged grid: row {r} has {} cells, row 0 has {cols}",
            rows[r].len()
        ));
    }
    if !headers.is_empty() && headers.len() != cols {
        return arg_err(format!("{} headers for {cols} columns", headers.len()));
    }
    let (h, w) = first.hw();
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            if cell.hw() != (h, w) {
                return arg_err(format!(
                    "cell ({r}, {c}) is {:?}, expected {:?}",
                    cell.hw(),
                    (h, w)
                ));
            }
        }
    }
    let (h, w) = (h as u32, w as u32);
    let mut out = RgbImage::from_pixel(
        cols as u32 * w,
        HEADER_HEIGHT + rows.len() as u32 * h,
        Rgb([255, 255, 255]),
    );
    for (c, label) in headers.iter().enumerate() {
        draw_text(
            &mut out,
            label,
            c as u32 * w + 2,
            (HEADER_HEIGHT - GLYPH) / 2,
            w.saturating_sub(4),
        );
    }
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            image::imageops::replace(
                &mut out,
                &cell.to_rgb8()?,
                (c as u32 * w) as i64,
                (HEADER_HEIGHT + r as u32 * h) as i64,
            );
        }
    }
    Ok(out)
}

/// [`compose_grid`] written as PNG. Returns `(width, height)`.
pub fn emit_grid(rows: &[Vec<ImageTensor>], headers: &[&str], path: &Path) -> Result<(u32, u32)> {
    let img = compose_grid(rows, headers)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    img.save(path)?;
    Ok(img.dimensions())
}
