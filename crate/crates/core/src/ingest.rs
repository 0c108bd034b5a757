//! DOTA / ICDAR annotation parsing and overlapping tiling.

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point2};

/// DOTA v1.0 categories, in label-index order.
pub const DOTA_CLASSES: [&str; 15] = [
    "plane",
    "baseball-diamond",
    "bridge",
    "ground-track-field",
    "small-vehicle",
    "large-vehicle",
    "ship",
    "tennis-court",
    "basketball-court",
    "storage-tank",
    "soccer-ball-field",
    "roundabout",
    "harbor",
    "swimming-pool",
    "helicopter",
];

pub const TEXT_CLASS: &str = "text";

pub fn dota_vocabulary() -> Vec<String> {
    DOTA_CLASSES.iter().map(|s| s.to_string()).collect()
}

pub fn text_vocabulary() -> Vec<String> {
    vec![TEXT_CLASS.to_string()]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnnotations {
    pub objects: Vec<OrientedBox>,
    /// One entry per skipped line, `line N: reason`.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParseOptions {
    /// Empty files are an error instead of an empty result.
    pub strict: bool,
}

fn finish(
    objects: Vec<OrientedBox>,
    warnings: Vec<String>,
    opts: &ParseOptions,
) -> Result<ParsedAnnotations> {
    if objects.is_empty() && !warnings.is_empty() {
        return Err(Error::AllLinesMalformed(warnings.len()));
    }
    if objects.is_empty() && opts.strict {
        return Err(Error::EmptyFile);
    }
    Ok(ParsedAnnotations { objects, warnings })
}

fn parse_coords<'a>(
    tokens: impl Iterator<Item = &'a str>,
) -> std::result::Result<[f64; 8], String> {
    let mut out = [0.0; 8];
    let mut n = 0;
    for tok in tokens {
        if n == 8 {
            break;
        }
        let v: f64 = tok
            .trim()
            .parse()
            .map_err(|_| format!("bad coordinate {tok:?}"))?;
        if !v.is_finite() {
            return Err(format!("non-finite coordinate {tok:?}"));
        }
        out[n] = v;
        n += 1;
    }
    if n < 8 {
        return Err(format!("expected 8 coordinates, got {n}"));
    }
    Ok(out)
}

fn strip_bom(text: &str) -> &str {
    text.strip_prefix('\u{feff}').unwrap_or(text)
}

/// Parses a DOTA label file: `x1 y1 … x4 y4 category difficult` per line.
/// A missing difficult flag reads as 0.
pub fn parse_dota(
    text: &str,
    vocabulary: &[String],
    opts: &ParseOptions,
) -> Result<ParsedAnnotations> {
    let mut objects = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in strip_bom(text).lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("imagesource") || line.starts_with("gsd") {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let parsed = (|| {
            if !(9..=10).contains(&tokens.len()) {
                return Err(format!("expected 9 or 10 fields, got {}", tokens.len()));
            }
            let coords = parse_coords(tokens[..8].iter().copied())?;
            let class_id = vocabulary
                .iter()
                .position(|c| c == tokens[8])
                .ok_or_else(|| format!("unknown category {:?}", tokens[8]))?;
            let difficult = match tokens.get(9).copied() {
                None | Some("0") => false,
                Some("1") => true,
                Some(other) => return Err(format!("bad difficult flag {other:?}")),
            };
            OrientedBox::from_flat(coords, class_id)
                .map(|b| b.with_difficult(difficult))
                .map_err(|e| e.to_string())
        })();
        match parsed {
            Ok(b) => objects.push(b),
            Err(msg) => warnings.push(format!("line {}: {msg}", i + 1)),
        }
    }
    finish(objects, warnings, opts)
}

/// Parses an ICDAR 2015 ground-truth file: `x1,y1,…,x4,y4,transcription`.
/// Transcription `###` marks a difficult box. Non-convex quadrilaterals are
/// skipped with a warning since rotated IoU needs convex input.
pub fn parse_icdar(text: &str, opts: &ParseOptions) -> Result<ParsedAnnotations> {
    let mut objects = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in strip_bom(text).lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(9, ',').collect();
        let parsed = (|| {
            if fields.len() < 9 {
                return Err(format!(
                    "expected 8 coordinates and a transcription, got {} fields",
                    fields.len()
                ));
            }
            let coords = parse_coords(fields[..8].iter().copied())?;
            let difficult = fields[8].trim() == "###";
            let b = OrientedBox::from_flat(coords, 0).map_err(|e| e.to_string())?;
            if !b.is_convex() {
                return Err("non-convex quadrilateral".to_string());
            }
            Ok(b.with_difficult(difficult))
        })();
        match parsed {
            Ok(b) => objects.push(b),
            Err(msg) => warnings.push(format!("line {}: {msg}", i + 1)),
        }
    }
    finish(objects, warnings, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<OrientedBox>,
    pub class_names: Vec<String>,
}

/// Smallest integer extent covering every corner, at least 1×1.
pub fn annotation_extent(objects: &[OrientedBox]) -> (u32, u32) {
    let (mut w, mut h) = (1.0f64, 1.0f64);
    for b in objects {
        let (_, hi) = b.bounds();
        w = w.max(hi.x.ceil());
        h = h.max(hi.y.ceil());
    }
    (
        w.min(f64::from(u32::MAX)) as u32,
        h.min(f64::from(u32::MAX)) as u32,
    )
}

/// Clamps corners into `[0,w]×[0,h]`. `None` when the result is degenerate.
pub fn clamp_box(b: &OrientedBox, width: f64, height: f64) -> Option<OrientedBox> {
    let k = b.corners();
    let c = |p: Point2| Point2::new(p.x.clamp(0.0, width), p.y.clamp(0.0, height));
    OrientedBox::new([c(k[0]), c(k[1]), c(k[2]), c(k[3])], b.class_id)
        .ok()
        .map(|n| n.with_difficult(b.difficult).with_score(b.score()))
}

impl AnnotatedImage {
    /// Clamps every object into the image, dropping the ones that collapse.
    pub fn clamped(mut self) -> (Self, Vec<String>) {
        let mut warnings = Vec::new();
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        let objects = std::mem::take(&mut self.objects);
        for (i, b) in objects.into_iter().enumerate() {
            match clamp_box(&b, w, h) {
                Some(c) => self.objects.push(c),
                None => warnings.push(format!(
                    "{}: object {i} degenerate after clamping",
                    self.image_id
                )),
            }
        }
        (self, warnings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileSpec {
    pub window: u32,
    pub overlap_fraction: f64,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self {
            window: 800,
            overlap_fraction: 0.25,
        }
    }
}

impl TileSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::invalid("tile window must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::invalid(format!(
                "overlap must lie in [0, 1), got {}",
                self.overlap_fraction
            )));
        }
        Ok(())
    }

    /// `window·(1−overlap)`, floored to whole pixels, at least 1.
    pub fn step(&self) -> u32 {
        ((f64::from(self.window) * (1.0 - self.overlap_fraction)).floor() as u32).max(1)
    }
}

/// Window origins along one axis; the last window ends at the image edge.
pub fn tile_origins(size: u32, window: u32, step: u32) -> Vec<u32> {
    if size <= window {
        return vec![0];
    }
    let mut out = Vec::new();
    let mut o = 0u32;
    loop {
        let clamped = o.min(size - window);
        if out.last() != Some(&clamped) {
            out.push(clamped);
        }
        if o + window >= size {
            break;
        }
        o += step;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub origin: (u32, u32),
    pub image: AnnotatedImage,
}

pub fn tile_id(image_id: &str, ox: u32, oy: u32) -> String {
    format!("{image_id}__{ox}_{oy}")
}

/// Whether a centroid falls in the half-open window at `origin`.
pub fn in_window(c: Point2, origin: (u32, u32), window: u32) -> bool {
    let (ox, oy) = (f64::from(origin.0), f64::from(origin.1));
    let w = f64::from(window);
    c.x >= ox && c.x < ox + w && c.y >= oy && c.y < oy + w
}

/// Splits an image into overlapping windows. Objects go to every window
/// holding their corner centroid, translated by `-origin` and clamped.
pub fn tile_image(img: &AnnotatedImage, spec: &TileSpec) -> Result<(Vec<Tile>, Vec<String>)> {
    spec.validate()?;
    let step = spec.step();
    let xs = tile_origins(img.width, spec.window, step);
    let ys = tile_origins(img.height, spec.window, step);
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    let mut warnings = Vec::new();
    for &oy in &ys {
        for &ox in &xs {
            let tw = spec.window.min(img.width - ox);
            let th = spec.window.min(img.height - oy);
            let shift = Point2::new(-f64::from(ox), -f64::from(oy));
            let id = tile_id(&img.image_id, ox, oy);
            let mut objects = Vec::new();
            for (i, b) in img.objects.iter().enumerate() {
                if !in_window(b.centroid(), (ox, oy), spec.window) {
                    continue;
                }
                match clamp_box(&b.translated(shift), f64::from(tw), f64::from(th)) {
                    Some(c) => objects.push(c),
                    None => warnings.push(format!("{id}: object {i} degenerate after clamping")),
                }
            }
            tiles.push(Tile {
                origin: (ox, oy),
                image: AnnotatedImage {
                    image_id: id,
                    width: tw,
                    height: th,
                    objects,
                    class_names: img.class_names.clone(),
                },
            });
        }
    }
    Ok((tiles, warnings))
}
