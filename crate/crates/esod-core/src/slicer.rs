//! From objectness mask to fixed-size patch plan.
//!
//! Centers are activated local maxima of the mask (3x3 neighborhood); sizes
//! are activated-pixel counts in a 9x9 window. Three strategies produce a
//! plan: `uniform` keeps the grid cells that contain a center, `greedy`
//! iteratively places a patch at the largest remaining center and removes
//! the centers it covers, `parallel` adjusts all uniform candidates in one
//! round and drops duplicates. Every strategy emits only full-size in-bounds
//! boxes; clamping is by translation, never truncation, so downstream patch
//! shapes stay homogeneous.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{BitGrid, FeatureStack};
use crate::seeker::ObjectnessMask;

/// An activated local maximum of the objectness mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Center {
    pub x: usize,
    pub y: usize,
    /// Mask value at the cell.
    pub score: f64,
}

/// Centers in row-major discovery order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CenterSet {
    pub centers: Vec<Center>,
}

impl CenterSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Activated-fraction estimates aligned with a [`CenterSet`].
pub type SizeEstimates = Vec<f64>;

/// Half-open axis-aligned box `[x1,x2) x [y1,y2)` in mask coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchBox {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

impl PatchBox {
    pub fn width(&self) -> usize {
        self.x2 - self.x1
    }

    pub fn height(&self) -> usize {
        self.y2 - self.y1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    /// True when `self` lies fully inside `other`.
    pub fn contained_in(&self, other: &PatchBox) -> bool {
        self.x1 >= other.x1 && self.y1 >= other.y1 && self.x2 <= other.x2 && self.y2 <= other.y2
    }
}

/// Slicing strategy that produced a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Uniform,
    Greedy,
    Parallel,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Strategy::Uniform),
            "greedy" => Ok(Strategy::Greedy),
            "parallel" => Ok(Strategy::Parallel),
            other => Err(Error::parameter(format!(
                "unknown strategy {other:?} (expected uniform|greedy|parallel)"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Uniform => "uniform",
            Strategy::Greedy => "greedy",
            Strategy::Parallel => "parallel",
        })
    }
}

/// Fixed-size patch boxes selected for downstream computation.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPlan {
    pub strategy: Strategy,
    pub k: usize,
    pub patch_w: usize,
    pub patch_h: usize,
    pub boxes: Vec<PatchBox>,
}

impl PatchPlan {
    /// Total covered area counting overlaps once per box.
    pub fn total_area(&self) -> usize {
        self.boxes.iter().map(|b| b.area()).sum()
    }

    pub fn covers(&self, x: usize, y: usize) -> bool {
        self.boxes.iter().any(|b| b.contains(x, y))
    }

    /// Line-oriented text form: `strategy k W_p H_p` then one box per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {} {}\n", self.strategy, self.k, self.patch_w, self.patch_h);
        for b in &self.boxes {
            out.push_str(&format!("{} {} {} {}\n", b.x1, b.y1, b.x2, b.y2));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "empty plan".to_string() })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse { line: 1, msg: format!("bad header {header:?}") });
        }
        let strategy = Strategy::parse(fields[0])
            .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
        let nums: Vec<usize> = fields[1..]
            .iter()
            .map(|f| f.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
        let mut plan = PatchPlan {
            strategy,
            k: nums[0],
            patch_w: nums[1],
            patch_h: nums[2],
            boxes: Vec::new(),
        };
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let coords: Vec<usize> = line
                .split_whitespace()
                .map(|f| f.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: idx + 1, msg: e.to_string() })?;
            if coords.len() != 4 {
                return Err(Error::Parse { line: idx + 1, msg: format!("bad box line {line:?}") });
            }
            plan.boxes.push(PatchBox { x1: coords[0], y1: coords[1], x2: coords[2], y2: coords[3] });
        }
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Coordinates of all activated cells, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSet {
    pub tokens: Vec<(usize, usize)>,
}

/// Thresholds the mask into an activation grid (`>=` semantics).
pub fn activation(mask: &ObjectnessMask, threshold: f64) -> Result<BitGrid> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::parameter(format!("threshold must lie in (0,1), got {threshold}")));
    }
    let grid = &mask.grid;
    let mut bits = BitGrid::new(grid.height(), grid.width());
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            bits.set(x, y, grid.get(x, y) >= threshold);
        }
    }
    Ok(bits)
}

/// Activated cells whose value equals their 3x3 neighborhood maximum.
///
/// Plateau ties are broken deterministically: within each 3x3 tie group only
/// the first cell in row-major order survives.
pub fn local_maxima(mask: &ObjectnessMask, act: &BitGrid) -> Result<CenterSet> {
    let grid = &mask.grid;
    if grid.height() != act.height() || grid.width() != act.width() {
        return Err(Error::shape("mask and activation grid shapes differ".to_string()));
    }
    let (h, w) = (grid.height(), grid.width());
    let mut kept = BitGrid::new(h, w);
    let mut centers = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !act.get(x, y) {
                continue;
            }
            let v = grid.get(x, y);
            let mut is_max = true;
            let mut tied_with_kept = false;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let nv = grid.get(nx as usize, ny as usize);
                    if nv > v {
                        is_max = false;
                    } else if nv == v && kept.get(nx as usize, ny as usize) {
                        tied_with_kept = true;
                    }
                }
            }
            if is_max && !tied_with_kept {
                kept.set(x, y, true);
                centers.push(Center { x, y, score: v });
            }
        }
    }
    Ok(CenterSet { centers })
}

/// Fraction of activated cells in the 9x9 window around each center.
pub fn estimate_sizes(act: &BitGrid, centers: &CenterSet) -> SizeEstimates {
    let (h, w) = (act.height(), act.width());
    centers
        .centers
        .iter()
        .map(|c| {
            let mut count = 0usize;
            for dy in -4i64..=4 {
                let yy = c.y as i64 + dy;
                if yy < 0 || yy >= h as i64 {
                    continue;
                }
                for dx in -4i64..=4 {
                    let xx = c.x as i64 + dx;
                    if xx < 0 || xx >= w as i64 {
                        continue;
                    }
                    if act.get(xx as usize, yy as usize) {
                        count += 1;
                    }
                }
            }
            count as f64 / 81.0
        })
        .collect()
}

/// Fixed patch size for a `k x k` division of the grid, rounding up when `k`
/// does not divide the side.
pub fn patch_size_for(grid_shape: (usize, usize), k: usize) -> Result<(usize, usize)> {
    let (h, w) = grid_shape;
    if k == 0 {
        return Err(Error::parameter("k must be positive"));
    }
    if k > w || k > h {
        return Err(Error::parameter(format!("k={k} exceeds grid dims {w}x{h}")));
    }
    Ok((w.div_ceil(k), h.div_ceil(k)))
}

fn clamp_origin(x: isize, patch: usize, extent: usize) -> usize {
    let max = (extent - patch) as isize;
    x.clamp(0, max) as usize
}

/// Full-size box placed at the origin of uniform cell `(i, j)`, clamped into
/// bounds by translation.
fn uniform_cell_box(
    i: usize,
    j: usize,
    patch_w: usize,
    patch_h: usize,
    w: usize,
    h: usize,
) -> PatchBox {
    let x1 = clamp_origin((j * patch_w) as isize, patch_w, w);
    let y1 = clamp_origin((i * patch_h) as isize, patch_h, h);
    PatchBox { x1, y1, x2: x1 + patch_w, y2: y1 + patch_h }
}

/// Uniform slicing: keep a `k x k` grid cell iff it contains a center.
pub fn slice_uniform(act: &BitGrid, centers: &CenterSet, k: usize) -> Result<PatchPlan> {
    let (h, w) = (act.height(), act.width());
    let (patch_w, patch_h) = patch_size_for((h, w), k)?;
    let mut boxes = Vec::new();
    for i in 0..k {
        let y0 = i * patch_h;
        if y0 >= h {
            break;
        }
        let y1 = ((i + 1) * patch_h).min(h);
        for j in 0..k {
            let x0 = j * patch_w;
            if x0 >= w {
                break;
            }
            let x1 = ((j + 1) * patch_w).min(w);
            let occupied = centers
                .centers
                .iter()
                .any(|c| c.x >= x0 && c.x < x1 && c.y >= y0 && c.y < y1);
            if occupied {
                boxes.push(uniform_cell_box(i, j, patch_w, patch_h, w, h));
            }
        }
    }
    Ok(PatchPlan { strategy: Strategy::Uniform, k, patch_w, patch_h, boxes })
}

/// Translates the box so its top-left corner meets the first activated cell
/// inside it, then clamps back into bounds. A box with no activated content
/// is returned unchanged.
pub fn adjust_patch(bx: PatchBox, act: &BitGrid) -> PatchBox {
    let (h, w) = (act.height(), act.width());
    let mut min_x = None;
    let mut min_y = None;
    for y in bx.y1..bx.y2.min(h) {
        for x in bx.x1..bx.x2.min(w) {
            if act.get(x, y) {
                min_x = Some(min_x.map_or(x, |m: usize| m.min(x)));
                min_y = Some(min_y.map_or(y, |m: usize| m.min(y)));
            }
        }
    }
    let (Some(min_x), Some(min_y)) = (min_x, min_y) else {
        return bx;
    };
    let dx = min_x - bx.x1;
    let dy = min_y - bx.y1;
    let x1 = clamp_origin((bx.x1 + dx) as isize, bx.width(), w);
    let y1 = clamp_origin((bx.y1 + dy) as isize, bx.height(), h);
    PatchBox { x1, y1, x2: x1 + bx.width(), y2: y1 + bx.height() }
}

/// Greedy adaptive slicing: repeatedly place a patch at the center with the
/// largest size estimate, adjust it, and drop every center it covers.
///
/// Ties on size break toward the earlier (row-major) center, so plans are
/// reproducible.
pub fn slice_greedy(mask: &ObjectnessMask, k: usize, threshold: f64) -> Result<PatchPlan> {
    let (h, w) = (mask.grid.height(), mask.grid.width());
    let (patch_w, patch_h) = patch_size_for((h, w), k)?;
    let act = activation(mask, threshold)?;
    let centers = local_maxima(mask, &act)?;
    let sizes = estimate_sizes(&act, &centers);

    let mut remaining: Vec<(Center, f64)> =
        centers.centers.iter().copied().zip(sizes).collect();
    let mut boxes = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for (idx, (_, size)) in remaining.iter().enumerate() {
            if *size > remaining[best].1 {
                best = idx;
            }
        }
        let (c, _) = remaining[best];
        let x1 = clamp_origin(c.x as isize - (patch_w / 2) as isize, patch_w, w);
        let y1 = clamp_origin(c.y as isize - (patch_h / 2) as isize, patch_h, h);
        let initial = PatchBox { x1, y1, x2: x1 + patch_w, y2: y1 + patch_h };
        let adjusted = adjust_patch(initial, &act);
        remaining.retain(|(c, _)| !adjusted.contains(c.x, c.y));
        boxes.push(adjusted);
    }
    Ok(PatchPlan { strategy: Strategy::Greedy, k, patch_w, patch_h, boxes })
}

/// Simplified adaptive slicing: uniform candidates are adjusted in a single
/// round, then duplicates (and boxes fully contained in an earlier kept box)
/// are dropped, keeping the first in row-major candidate order.
pub fn slice_parallel(mask: &ObjectnessMask, k: usize, threshold: f64) -> Result<PatchPlan> {
    let act = activation(mask, threshold)?;
    let centers = local_maxima(mask, &act)?;
    let mut plan = slice_uniform(&act, &centers, k)?;
    plan.strategy = Strategy::Parallel;

    let adjusted: Vec<PatchBox> = plan.boxes.iter().map(|&b| adjust_patch(b, &act)).collect();
    let mut kept: Vec<PatchBox> = Vec::new();
    for b in adjusted {
        if !kept.iter().any(|k| b == *k || b.contained_in(k)) {
            kept.push(b);
        }
    }
    plan.boxes = kept;
    Ok(plan)
}

/// All activated coordinates, row-major (the ViT token-selection path).
pub fn select_tokens(mask: &ObjectnessMask, threshold: f64) -> Result<TokenSet> {
    let act = activation(mask, threshold)?;
    Ok(TokenSet { tokens: act.ones() })
}

/// Crops every planned box out of the feature stack.
pub fn extract_patches(features: &FeatureStack, plan: &PatchPlan) -> Result<Vec<FeatureStack>> {
    let mut out = Vec::with_capacity(plan.boxes.len());
    for b in &plan.boxes {
        if b.x2 > features.width() || b.y2 > features.height() {
            return Err(Error::shape(format!(
                "box ({},{})-({},{}) exceeds feature dims {}x{}",
                b.x1,
                b.y1,
                b.x2,
                b.y2,
                features.width(),
                features.height()
            )));
        }
        let mut patch = FeatureStack::zeros(features.channels(), b.height(), b.width());
        for c in 0..features.channels() {
            for (py, y) in (b.y1..b.y2).enumerate() {
                for (px, x) in (b.x1..b.x2).enumerate() {
                    patch.set(c, px, py, features.get(c, x, y));
                }
            }
        }
        out.push(patch);
    }
    Ok(out)
}
