use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use image::{GenericImageView, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::model::PageImage;

#[derive(Debug, thiserror::Error)]
pub enum LayoutError {
    #[error("region for problem `{problem_id}` on page {page} exceeds the page: {detail}")]
    OutOfBounds {
        page: usize,
        problem_id: String,
        detail: String,
    },
    #[error("page {0} has no layout entries")]
    NoEntries(usize),
    #[error("cannot decode page image: {0}")]
    Decode(String),
    #[error("cannot read layout: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse layout: {0}")]
    Parse(String),
}

/// One answer box in page-fraction coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub page: usize,
    pub problem_id: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

// Fractions come from decimal literals; absorb representation error
// before flooring/ceiling to whole pixels.
const PIXEL_SLACK: f64 = 1e-9;

impl BoxRegion {
    fn check(&self) -> Result<(), LayoutError> {
        let bad = |detail: String| LayoutError::OutOfBounds {
            page: self.page,
            problem_id: self.problem_id.clone(),
            detail,
        };
        for (name, v) in [("x", self.x), ("y", self.y), ("w", self.w), ("h", self.h)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(bad(format!("{name}={v} outside [0,1]")));
            }
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(bad("empty rectangle".into()));
        }
        if self.x + self.w > 1.0 + PIXEL_SLACK {
            return Err(bad(format!("x+w={}", self.x + self.w)));
        }
        if self.y + self.h > 1.0 + PIXEL_SLACK {
            return Err(bad(format!("y+h={}", self.y + self.h)));
        }
        Ok(())
    }

    /// Pixel rectangle `(left, top, width, height)` on a `width × height` page.
    pub fn pixel_rect(&self, width: u32, height: u32) -> Result<(u32, u32, u32, u32), LayoutError> {
        self.check()?;
        let (wf, hf) = (width as f64, height as f64);
        let left = ((self.x * wf) + PIXEL_SLACK).floor() as u32;
        let top = ((self.y * hf) + PIXEL_SLACK).floor() as u32;
        let w = ((self.w * wf) - PIXEL_SLACK).ceil() as u32;
        let h = ((self.h * hf) - PIXEL_SLACK).ceil() as u32;
        Ok((
            left.min(width),
            top.min(height),
            w.min(width - left.min(width)),
            h.min(height - top.min(height)),
        ))
    }

    fn is_full_page(&self) -> bool {
        self.x == 0.0 && self.y == 0.0 && self.w == 1.0 && self.h == 1.0
    }
}

/// Answer-box layout, keyed by page index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxLayout {
    pub regions: Vec<BoxRegion>,
}

impl BoxLayout {
    pub fn load(path: &Path) -> Result<Self, LayoutError> {
        let text = std::fs::read_to_string(path)?;
        let layout: BoxLayout =
            serde_json::from_str(&text).map_err(|e| LayoutError::Parse(e.to_string()))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let mut seen = BTreeMap::new();
        for r in &self.regions {
            r.check()?;
            if seen.insert((r.page, r.problem_id.as_str()), ()).is_some() {
                return Err(LayoutError::Parse(format!(
                    "duplicate region for problem `{}` on page {}",
                    r.problem_id, r.page
                )));
            }
        }
        Ok(())
    }

    pub fn for_page(&self, page: usize) -> impl Iterator<Item = &BoxRegion> {
        self.regions.iter().filter(move |r| r.page == page)
    }
}

/// A cropped answer region, re-encoded in the page's own format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub problem_id: String,
    pub bytes: Vec<u8>,
    pub media_type: String,
}

fn format_of(page: &PageImage) -> Result<ImageFormat, LayoutError> {
    match page.media_type.as_str() {
        "image/png" => Ok(ImageFormat::Png),
        "image/jpeg" | "image/jpg" => Ok(ImageFormat::Jpeg),
        _ => image::guess_format(&page.bytes).map_err(|e| LayoutError::Decode(e.to_string())),
    }
}

/// Crop every layout rectangle registered for this page.
pub fn crop_regions(page: &PageImage, layout: &BoxLayout) -> Result<Vec<Region>, LayoutError> {
    let entries: Vec<&BoxRegion> = layout.for_page(page.index).collect();
    if entries.is_empty() {
        return Err(LayoutError::NoEntries(page.index));
    }
    let format = format_of(page)?;
    let media_type = format.to_mime_type().to_string();
    let img = image::load_from_memory_with_format(&page.bytes, format)
        .map_err(|e| LayoutError::Decode(e.to_string()))?;
    let (width, height) = img.dimensions();

    entries
        .into_iter()
        .map(|entry| {
            if entry.is_full_page() {
                return Ok(Region {
                    problem_id: entry.problem_id.clone(),
                    bytes: page.bytes.clone(),
                    media_type: media_type.clone(),
                });
            }
            let (left, top, w, h) = entry.pixel_rect(width, height)?;
            let cropped = img.crop_imm(left, top, w, h);
            let mut out = Cursor::new(Vec::new());
            cropped
                .write_to(&mut out, format)
                .map_err(|e| LayoutError::Decode(e.to_string()))?;
            Ok(Region {
                problem_id: entry.problem_id.clone(),
                bytes: out.into_inner(),
                media_type: media_type.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Rgb};

    fn png_page(width: u32, height: u32) -> PageImage {
        let img = ImageBuffer::from_fn(width, height, |x, y| Rgb([(x % 251) as u8, (y % 241) as u8, 7]));
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        PageImage {
            index: 1,
            bytes: out.into_inner(),
            media_type: "image/png".into(),
        }
    }

    fn region(x: f64, y: f64, w: f64, h: f64) -> BoxLayout {
        BoxLayout {
            regions: vec![BoxRegion {
                page: 1,
                problem_id: "1".into(),
                x,
                y,
                w,
                h,
            }],
        }
    }

    #[test]
    fn full_page_is_identity() {
        let page = png_page(40, 30);
        let out = crop_regions(&page, &region(0.0, 0.0, 1.0, 1.0)).unwrap();
        assert_eq!(out[0].bytes, page.bytes);
    }

    #[test]
    fn crops_scaled_rectangle() {
        let page = png_page(1000, 2000);
        let layout = region(0.1, 0.2, 0.5, 0.25);
        assert_eq!(layout.regions[0].pixel_rect(1000, 2000).unwrap(), (100, 400, 500, 500));
        let out = crop_regions(&page, &layout).unwrap();
        let img = image::load_from_memory(&out[0].bytes).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (500, 500));
        // Top-left pixel of the crop is page pixel (100, 400).
        assert_eq!(img.get_pixel(0, 0), &Rgb([100, (400 % 241) as u8, 7]));
    }

    #[test]
    fn out_of_bounds_rectangle() {
        let page = png_page(10, 10);
        let err = crop_regions(&page, &region(0.5, 0.0, 0.7, 0.5)).unwrap_err();
        assert!(matches!(err, LayoutError::OutOfBounds { .. }), "{err}");
    }

    #[test]
    fn page_without_entries() {
        let mut page = png_page(10, 10);
        page.index = 2;
        assert!(matches!(
            crop_regions(&page, &region(0.0, 0.0, 0.5, 0.5)),
            Err(LayoutError::NoEntries(2))
        ));
    }

    #[test]
    fn decimal_fractions_do_not_overshoot() {
        let r = region(0.3, 0.7, 0.7, 0.3).regions.remove(0);
        assert_eq!(r.pixel_rect(1000, 1000).unwrap(), (300, 700, 700, 300));
    }
}
