//! Objectness pseudo-labels from box annotations and external masks.
//!
//! A box `(xc, yc, w, h)` induces a separable Gaussian-like kernel that is 1
//! at the box center and decays to `tau` at the box corners:
//!
//! `M[x, y] = exp(0.5 * ((x-xc)^2/(w/2)^2 + (y-yc)^2/(h/2)^2) * ln(tau))`
//!
//! Multiple boxes combine by elementwise maximum, which preserves the
//! center=1 property under overlap. An external segmentation mask, when
//! non-empty, modulates the Gaussian labels by elementwise product.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::netpbm;

/// Values below this are flushed to exact zero to keep masks sparse.
pub const FLUSH_THRESHOLD: f64 = 1e-4;

/// Center-form box; units depend on context (image pixels for annotations,
/// mask-grid cells for label generation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub xc: f64,
    pub yc: f64,
    pub w: f64,
    pub h: f64,
    pub category: i32,
}

impl BoundingBox {
    pub fn new(xc: f64, yc: f64, w: f64, h: f64, category: i32) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !w.is_finite() || !h.is_finite() {
            return Err(Error::Annotation(format!(
                "box extents must be positive, got w={w} h={h}"
            )));
        }
        Ok(BoundingBox { xc, yc, w, h, category })
    }

    /// Rescales all coordinates and extents by `factor` (e.g. 1/stride to go
    /// from image pixels to mask cells).
    pub fn scaled(&self, factor: f64) -> BoundingBox {
        BoundingBox {
            xc: self.xc * factor,
            yc: self.yc * factor,
            w: self.w * factor,
            h: self.h * factor,
            category: self.category,
        }
    }

    /// Axis-aligned corners `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.xc - self.w / 2.0,
            self.yc - self.h / 2.0,
            self.xc + self.w / 2.0,
            self.yc + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Threshold of the Gaussian kernel at the box corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpec {
    tau: f64,
}

impl GaussianSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::parameter(format!("tau must lie in (0,1), got {tau}")));
        }
        Ok(GaussianSpec { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec { tau: 0.5 }
    }
}

/// Where a pseudo-mask came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Gaussian,
    External,
    Hybrid,
}

/// How the external mask gates the Gaussian labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HybridMode {
    /// One global test: if the external mask has any mass, multiply
    /// everywhere.
    PerImage,
    /// The test and the product are applied independently inside each box
    /// footprint; cells outside all boxes stay zero.
    PerBox,
}

/// A [0,1]-valued objectness label grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMask {
    pub grid: Grid2D,
    pub provenance: Provenance,
}

impl PseudoMask {
    pub fn new(grid: Grid2D, provenance: Provenance) -> Result<Self> {
        if grid.values().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::parameter("mask values must lie in [0,1]"));
        }
        Ok(PseudoMask { grid, provenance })
    }
}

/// Evaluates the Gaussian kernel of `b` at integer cell `(x, y)`.
fn gaussian_at(b: &BoundingBox, ln_tau: f64, x: f64, y: f64) -> f64 {
    let ax = (x - b.xc) / (b.w / 2.0);
    let ay = (y - b.yc) / (b.h / 2.0);
    let q = 0.5 * (ax * ax + ay * ay);
    (q * ln_tau).exp()
}

/// Rasterises boxes into a Gaussian pseudo-mask on an `(height, width)` grid.
///
/// Cells are sampled at integer coordinates; boxes are expected in mask-grid
/// units. Values below [`FLUSH_THRESHOLD`] are written as exact zeros.
pub fn gaussian_mask(
    boxes: &[BoundingBox],
    shape: (usize, usize),
    spec: GaussianSpec,
) -> Result<PseudoMask> {
    let (height, width) = shape;
    if height == 0 || width == 0 {
        return Err(Error::parameter("mask shape must be positive"));
    }
    let ln_tau = spec.tau().ln();
    // value >= FLUSH_THRESHOLD iff q <= ln(FLUSH)/ln(tau); beyond that radius
    // every cell would be flushed anyway, so skip it.
    let q_max = FLUSH_THRESHOLD.ln() / ln_tau;
    let reach = (2.0 * q_max).sqrt();

    let mut grid = Grid2D::zeros(height, width);
    for b in boxes {
        if !(b.w > 0.0 && b.h > 0.0) {
            return Err(Error::Annotation(format!(
                "box extents must be positive, got w={} h={}",
                b.w, b.h
            )));
        }
        let rx = b.w / 2.0 * reach;
        let ry = b.h / 2.0 * reach;
        let x0 = (b.xc - rx).ceil().max(0.0) as usize;
        let x1 = (b.xc + rx).floor().min((width - 1) as f64);
        let y0 = (b.yc - ry).ceil().max(0.0) as usize;
        let y1 = (b.yc + ry).floor().min((height - 1) as f64);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let v = gaussian_at(b, ln_tau, x as f64, y as f64);
                if v >= FLUSH_THRESHOLD {
                    let cur = grid.get(x, y);
                    if v > cur {
                        grid.set(x, y, v.min(1.0));
                    }
                }
            }
        }
    }
    PseudoMask::new(grid, Provenance::Gaussian)
}

/// Integer-cell footprint of a box, clamped to the grid; `None` when the box
/// lies entirely outside.
fn footprint(b: &BoundingBox, height: usize, width: usize) -> Option<(usize, usize, usize, usize)> {
    let (bx1, by1, bx2, by2) = b.corners();
    let x0 = bx1.ceil().max(0.0);
    let y0 = by1.ceil().max(0.0);
    let x1 = bx2.floor().min((width - 1) as f64);
    let y1 = by2.floor().min((height - 1) as f64);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
}

/// Combines a Gaussian mask with an external segmentation mask.
///
/// With a zero external mask the Gaussian passes through bit-exact; otherwise
/// the external mask gates the Gaussian by elementwise product, globally
/// ([`HybridMode::PerImage`]) or per box footprint ([`HybridMode::PerBox`]).
pub fn hybrid_mask(
    gaussian: &PseudoMask,
    external: &PseudoMask,
    mode: HybridMode,
    boxes: &[BoundingBox],
) -> Result<PseudoMask> {
    if !gaussian.grid.same_shape(&external.grid) {
        return Err(Error::shape(format!(
            "gaussian {}x{} vs external {}x{}",
            gaussian.grid.height(),
            gaussian.grid.width(),
            external.grid.height(),
            external.grid.width()
        )));
    }
    let (height, width) = (gaussian.grid.height(), gaussian.grid.width());
    let grid = match mode {
        HybridMode::PerImage => {
            let l1: f64 = external.grid.values().iter().map(|v| v.abs()).sum();
            if l1 > 0.0 {
                let values = gaussian
                    .grid
                    .values()
                    .iter()
                    .zip(external.grid.values())
                    .map(|(g, e)| g * e)
                    .collect();
                Grid2D::from_values(height, width, values)?
            } else {
                gaussian.grid.clone()
            }
        }
        HybridMode::PerBox => {
            let mut out = Grid2D::zeros(height, width);
            for b in boxes {
                let Some((x0, y0, x1, y1)) = footprint(b, height, width) else {
                    continue;
                };
                let mut l1 = 0.0;
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        l1 += external.grid.get(x, y).abs();
                    }
                }
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let g = gaussian.grid.get(x, y);
                        let v = if l1 > 0.0 { g * external.grid.get(x, y) } else { g };
                        if v > out.get(x, y) {
                            out.set(x, y, v);
                        }
                    }
                }
            }
            out
        }
    };
    PseudoMask::new(grid, Provenance::Hybrid)
}

/// Loads a PGM file as a mask, scaling samples into [0,1] by maxval.
pub fn load_mask_pgm(path: &Path) -> Result<PseudoMask> {
    let raster = netpbm::read_pgm(path)?;
    let maxval = raster.maxval as f64;
    let values = raster.samples.iter().map(|&s| s as f64 / maxval).collect();
    let grid = Grid2D::from_values(raster.height, raster.width, values)?;
    PseudoMask::new(grid, Provenance::External)
}

/// Saves a mask as a binary PGM, quantising values to `maxval` levels.
pub fn save_mask_pgm(path: &Path, mask: &PseudoMask, maxval: u16) -> Result<()> {
    if maxval == 0 {
        return Err(Error::parameter("maxval must be positive"));
    }
    let samples: Vec<u16> = mask
        .grid
        .values()
        .iter()
        .map(|&v| (v * maxval as f64).round().clamp(0.0, maxval as f64) as u16)
        .collect();
    netpbm::write_pgm(path, mask.grid.width(), mask.grid.height(), maxval, &samples)
}
