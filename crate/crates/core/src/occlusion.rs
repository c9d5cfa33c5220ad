//! Cut-and-paste occlusion synthesis, bounding-box expansion and the
//! photometric and geometric image augmentations.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{parse_pnm_header, pnm_samples, BinaryMask, SeededRng};

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage { width, height, data: vec![0; 3 * width * height] }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::SizeMismatch { left: data.len(), right: 3 * width * height });
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for r in 0..height {
            for c in 0..width {
                data.extend(f(r, c));
            }
        }
        RgbImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, px: [u8; 3]) {
        let i = 3 * (row * self.width + col);
        self.data[i..i + 3].copy_from_slice(&px);
    }

    fn check_mask(&self, mask: &BinaryMask) -> Result<()> {
        if mask.width() != self.width || mask.height() != self.height {
            return Err(Error::DimensionMismatch(self.width, self.height, mask.width(), mask.height()));
        }
        Ok(())
    }
}

/// Reads binary (P6) or ASCII (P3) PPM data.
pub fn parse_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_pnm_header(bytes)?;
    let ascii = match &h.magic {
        b"P3" => true,
        b"P6" => false,
        m => return Err(Error::Parse(format!("not a PPM file (magic {})", String::from_utf8_lossy(m)))),
    };
    let data = pnm_samples(bytes, &h, 3, ascii)?;
    RgbImage::from_raw(h.width, h.height, data)
}

/// Binary (P6) PPM encoding.
pub fn format_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    parse_ppm(&fs::read(path)?)
}

pub fn write_ppm(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    fs::write(path, format_ppm(image))?;
    Ok(())
}

/// Pixel box; `bottom` and `right` are exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BBox {
    pub fn new(top: usize, left: usize, bottom: usize, right: usize) -> Result<Self> {
        if bottom <= top || right <= left {
            return Err(Error::InvalidArgument(format!("empty box rows {top}..{bottom}, cols {left}..{right}")));
        }
        Ok(BBox { top, left, bottom, right })
    }

    /// Tight box around the foreground of `mask`.
    pub fn of_mask(mask: &BinaryMask) -> Option<Self> {
        mask.bbox().map(|(top, left, bottom, right)| BBox { top, left, bottom, right })
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }
}

/// Moves each side outward by `factor` times the box extent along that
/// axis, clipped to the image.
pub fn expand_bbox(b: BBox, factor: f64, image_w: usize, image_h: usize) -> Result<BBox> {
    if !(factor >= 0.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!("expansion factor must be non-negative, got {factor}")));
    }
    if b.bottom > image_h || b.right > image_w {
        return Err(Error::InvalidArgument("box exceeds the image".into()));
    }
    let dy = factor * b.height() as f64;
    let dx = factor * b.width() as f64;
    let lo = |v: usize, d: f64| (v as f64 - d).floor().max(0.0) as usize;
    let hi = |v: usize, d: f64, cap: usize| ((v as f64 + d).ceil() as usize).min(cap);
    Ok(BBox {
        top: lo(b.top, dy),
        left: lo(b.left, dx),
        bottom: hi(b.bottom, dy, image_h),
        right: hi(b.right, dx, image_w),
    })
}

/// An image with a pasted occluder and its amodal bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct OccludedSample {
    pub image: RgbImage,
    pub visible_mask: BinaryMask,
    pub full_mask: BinaryMask,
    pub occluder_mask: BinaryMask,
    /// Row/column where the donor segment's box was placed; `None` when no
    /// occluder was pasted.
    pub paste_offset: Option<(i64, i64)>,
}

impl OccludedSample {
    /// Unoccluded pass-through of an image and its object mask.
    pub fn unoccluded(image: RgbImage, mask: BinaryMask) -> Result<Self> {
        image.check_mask(&mask)?;
        let empty = BinaryMask::new(mask.width(), mask.height());
        Ok(OccludedSample { image, visible_mask: mask.clone(), full_mask: mask, occluder_mask: empty, paste_offset: None })
    }

    /// 1 − |visible| / |full|.
    pub fn occluded_fraction(&self) -> f64 {
        let full = self.full_mask.count();
        if full == 0 {
            return 0.0;
        }
        full.saturating_sub(self.visible_mask.count()) as f64 / full as f64
    }

    /// Checks visible ⊆ full, visible = full \ occluder and the coverage
    /// limit.
    pub fn check(&self) -> Result<()> {
        if !self.visible_mask.is_subset_of(&self.full_mask)? {
            return Err(Error::InvalidArgument("visible mask is not inside the full mask".into()));
        }
        if self.visible_mask != self.full_mask.minus(&self.occluder_mask)? {
            return Err(Error::InvalidArgument("visible mask differs from full minus occluder".into()));
        }
        if self.occluded_fraction() > MAX_OCCLUDED_FRACTION {
            return Err(Error::InvalidArgument(format!("occluded fraction {} above limit", self.occluded_fraction())));
        }
        Ok(())
    }
}

/// Samples whose pasted occluder hides more than this share of the object
/// are rejected.
pub const MAX_OCCLUDED_FRACTION: f64 = 0.5;

pub const DEFAULT_MAX_ATTEMPTS: usize = 50;

/// Inclusive ranges of admissible paste rows and columns: the donor box's
/// top-left corner may land anywhere from one donor extent above/left of
/// the object box to one donor extent below/right of its last pixel,
/// restricted to positions inside the image.
pub fn paste_range(object: BBox, donor: BBox, image_w: usize, image_h: usize) -> ((i64, i64), (i64, i64)) {
    let (h, w) = (donor.height() as i64, donor.width() as i64);
    let rows = ((object.top as i64 - h).max(0), (object.bottom as i64 - 1 + h).min(image_h as i64 - 1));
    let cols = ((object.left as i64 - w).max(0), (object.right as i64 - 1 + w).min(image_w as i64 - 1));
    (rows, cols)
}

fn check_inputs(image: &RgbImage, mask: &BinaryMask, donor: &RgbImage, donor_mask: &BinaryMask) -> Result<(BBox, BBox)> {
    image.check_mask(mask)?;
    donor.check_mask(donor_mask)?;
    if donor.width != image.width || donor.height != image.height {
        return Err(Error::DimensionMismatch(image.width, image.height, donor.width, donor.height));
    }
    let object = BBox::of_mask(mask).ok_or(Error::Empty("object mask"))?;
    let segment = BBox::of_mask(donor_mask).ok_or(Error::Empty("donor mask"))?;
    Ok((object, segment))
}

/// Pastes the donor segment with its box's top-left corner at `offset`.
/// Donor pixels falling outside the image are dropped.
pub fn paste_at(image: &RgbImage, mask: &BinaryMask, donor: &RgbImage, donor_mask: &BinaryMask, offset: (i64, i64)) -> Result<OccludedSample> {
    let (_, segment) = check_inputs(image, mask, donor, donor_mask)?;
    let mut out = image.clone();
    let mut occluder = BinaryMask::new(image.width, image.height);
    for r in segment.top..segment.bottom {
        for c in segment.left..segment.right {
            if !donor_mask.get(r, c) {
                continue;
            }
            let tr = offset.0 + (r - segment.top) as i64;
            let tc = offset.1 + (c - segment.left) as i64;
            if tr < 0 || tc < 0 || tr >= image.height as i64 || tc >= image.width as i64 {
                continue;
            }
            let (tr, tc) = (tr as usize, tc as usize);
            out.set(tr, tc, donor.get(r, c));
            occluder.set(tr, tc, true);
        }
    }
    let visible = mask.minus(&occluder)?;
    Ok(OccludedSample { image: out, visible_mask: visible, full_mask: mask.clone(), occluder_mask: occluder, paste_offset: Some(offset) })
}

/// Pastes the donor's object segment at a uniformly drawn location around
/// the object, redrawing while more than half of the object is hidden.
pub fn cut_and_paste(
    image: &RgbImage,
    mask: &BinaryMask,
    donor: &RgbImage,
    donor_mask: &BinaryMask,
    rng: &mut SeededRng,
    max_attempts: usize,
) -> Result<OccludedSample> {
    let (object, segment) = check_inputs(image, mask, donor, donor_mask)?;
    let (rows, cols) = paste_range(object, segment, image.width, image.height);
    for _ in 0..max_attempts {
        let offset = (rng.range_inclusive(rows.0, rows.1), rng.range_inclusive(cols.0, cols.1));
        let sample = paste_at(image, mask, donor, donor_mask, offset)?;
        if sample.occluded_fraction() <= MAX_OCCLUDED_FRACTION {
            return Ok(sample);
        }
    }
    Err(Error::CoverageRule(max_attempts))
}

/// A composed training sample with the pool entries that went into it.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedSample {
    pub sample: OccludedSample,
    pub donor: Option<usize>,
    pub background: Option<usize>,
}

/// Probabilities and retry budget for [`compose_sample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposeConfig {
    pub p_occlude: f64,
    pub p_background: f64,
    pub max_attempts: usize,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        ComposeConfig { p_occlude: 0.5, p_background: 0.5, max_attempts: DEFAULT_MAX_ATTEMPTS }
    }
}

/// With probability `p_occlude` pastes a uniformly chosen donor; then, with
/// probability `p_background`, replaces every pixel outside both the object
/// and the pasted occluder with a uniformly chosen background.
pub fn compose_sample(
    image: &RgbImage,
    mask: &BinaryMask,
    donors: &[(&RgbImage, &BinaryMask)],
    backgrounds: &[&RgbImage],
    cfg: &ComposeConfig,
    rng: &mut SeededRng,
) -> Result<ComposedSample> {
    for (name, p) in [("p_occlude", cfg.p_occlude), ("p_background", cfg.p_background)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    if cfg.p_occlude > 0.0 && donors.is_empty() {
        return Err(Error::Empty("donor pool"));
    }
    if cfg.p_background > 0.0 && backgrounds.is_empty() {
        return Err(Error::Empty("background pool"));
    }
    let mut donor = None;
    let mut sample = if rng.bernoulli(cfg.p_occlude) {
        let d = rng.below(donors.len());
        donor = Some(d);
        cut_and_paste(image, mask, donors[d].0, donors[d].1, rng, cfg.max_attempts)?
    } else {
        OccludedSample::unoccluded(image.clone(), mask.clone())?
    };
    let mut background = None;
    if rng.bernoulli(cfg.p_background) {
        let b = rng.below(backgrounds.len());
        let bg = backgrounds[b];
        if bg.width != image.width || bg.height != image.height {
            return Err(Error::DimensionMismatch(image.width, image.height, bg.width, bg.height));
        }
        background = Some(b);
        for r in 0..image.height {
            for c in 0..image.width {
                if !sample.full_mask.get(r, c) && !sample.occluder_mask.get(r, c) {
                    sample.image.set(r, c, bg.get(r, c));
                }
            }
        }
    }
    Ok(ComposedSample { sample, donor, background })
}

/// Parameters of the photometric augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotometricParams {
    pub gamma: f64,
    /// Lower end of the intensity rescale; the upper end is 255.
    pub min_intensity: f64,
    pub channel_factors: [f64; 3],
}

impl PhotometricParams {
    pub const IDENTITY: PhotometricParams = PhotometricParams { gamma: 1.0, min_intensity: 0.0, channel_factors: [1.0; 3] };

    /// γ ~ U[0.5, 2], minimum ~ U[0, 127], channel factors ~ U[0.8, 1.2].
    pub fn sample(rng: &mut SeededRng) -> Self {
        let gamma = rng.uniform(0.5, 2.0);
        let min_intensity = rng.uniform(0.0, 127.0);
        let channel_factors = [rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2)];
        PhotometricParams { gamma, min_intensity, channel_factors }
    }

    /// Gamma on [0, 1] intensities, rescale to [min, 255], per-channel
    /// scaling, clamp.
    pub fn apply(&self, image: &RgbImage) -> RgbImage {
        let m = self.min_intensity;
        let data = image
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let x = (v as f64 / 255.0).powf(self.gamma);
                let y = (m + x * (255.0 - m)) * self.channel_factors[i % 3];
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        RgbImage { width: image.width, height: image.height, data }
    }
}

pub fn photometric_augment(image: &RgbImage, rng: &mut SeededRng) -> RgbImage {
    PhotometricParams::sample(rng).apply(image)
}

/// Parameters of the geometric augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricParams {
    /// Fractions of the image height/width removed at the top, bottom, left
    /// and right.
    pub crop: [f64; 4],
    pub flip: bool,
    pub angle_deg: f64,
}

impl GeometricParams {
    pub const IDENTITY: GeometricParams = GeometricParams { crop: [0.0; 4], flip: false, angle_deg: 0.0 };

    /// Crop ratios ~ U[0.2, 0.4] per side, flip with probability 1/2,
    /// rotation ~ U[−5°, 5°].
    pub fn sample(rng: &mut SeededRng) -> Self {
        let crop = [rng.uniform(0.2, 0.4), rng.uniform(0.2, 0.4), rng.uniform(0.2, 0.4), rng.uniform(0.2, 0.4)];
        let flip = rng.bernoulli(0.5);
        let angle_deg = rng.uniform(-5.0, 5.0);
        GeometricParams { crop, flip, angle_deg }
    }

    /// Crop, then left-right flip, then rotation about the image centre with
    /// nearest-neighbour sampling. Uncovered pixels become white in the
    /// image and background in the masks.
    pub fn apply(&self, image: &RgbImage, masks: &[BinaryMask]) -> Result<(RgbImage, Vec<BinaryMask>)> {
        for m in masks {
            image.check_mask(m)?;
        }
        let (w, h) = (image.width as f64, image.height as f64);
        let top = (self.crop[0] * h).round() as usize;
        let bottom = image.height.saturating_sub((self.crop[1] * h).round() as usize);
        let left = (self.crop[2] * w).round() as usize;
        let right = image.width.saturating_sub((self.crop[3] * w).round() as usize);
        if bottom <= top || right <= left {
            return Err(Error::Degenerate("crop leaves no pixels".into()));
        }
        let (nw, nh) = (right - left, bottom - top);
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (cx, cy) = (nw as f64 / 2.0, nh as f64 / 2.0);
        // output pixel → source pixel in the original image, or None
        let source = |r: usize, col: usize| -> Option<(usize, usize)> {
            let (x, y) = (col as f64 + 0.5 - cx, r as f64 + 0.5 - cy);
            // inverse rotation
            let sx = c * x + s * y + cx;
            let sy = -s * x + c * y + cy;
            let (sr, mut sc) = (sy.floor(), sx.floor());
            if sr < 0.0 || sc < 0.0 || sr >= nh as f64 || sc >= nw as f64 {
                return None;
            }
            if self.flip {
                sc = nw as f64 - 1.0 - sc;
            }
            Some((sr as usize + top, sc as usize + left))
        };
        let mut out = RgbImage::new(nw, nh);
        let mut out_masks = vec![BinaryMask::new(nw, nh); masks.len()];
        for r in 0..nh {
            for col in 0..nw {
                match source(r, col) {
                    Some((sr, sc)) => {
                        out.set(r, col, image.get(sr, sc));
                        for (o, m) in out_masks.iter_mut().zip(masks) {
                            o.set(r, col, m.get(sr, sc));
                        }
                    }
                    None => out.set(r, col, [255; 3]),
                }
            }
        }
        Ok((out, out_masks))
    }
}

pub fn geometric_augment(image: &RgbImage, masks: &[BinaryMask], rng: &mut SeededRng) -> Result<(RgbImage, Vec<BinaryMask>)> {
    GeometricParams::sample(rng).apply(image, masks)
}
