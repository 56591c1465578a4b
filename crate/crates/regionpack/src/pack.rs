//! Region-aware packing of important macroblocks into inference bins.
//!
//! Selected MBs from many streams and frames are grouped into 4-connected
//! regions, bounded by slightly expanded pixel boxes, partitioned down to
//! a size limit, and packed into a small number of fixed-size bins that
//! are later stitched into one inference tensor. The packer is a
//! guillotine scheme with optional 90° rotation; boxes are ordered by
//! importance density so that when space runs out, what's dropped is the
//! least valuable area, not the least convenient one.
//!
//! Everything here is deterministic: explicit tie-breaks on every ordering
//! and a FIFO free-area scan make plans reproducible byte for byte.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use crate::importance::{synth_importance, ImportanceMap, MbGeometry};

/// Pixel margin added around every region box before packing.
pub const DEFAULT_EXPAND: u32 = 3;

/// One selected macroblock in the cross-stream queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MbIndex {
    pub stream_id: u32,
    pub frame_id: u32,
    /// MB grid coordinates, not pixels.
    pub loc_x: u32,
    pub loc_y: u32,
    pub importance: f64,
}

/// 4-connected group of selected MBs within one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub stream_id: u32,
    pub frame_id: u32,
    /// Sorted by `(loc_y, loc_x)`.
    pub cells: Vec<MbIndex>,
}

impl Region {
    pub fn total_importance(&self) -> f64 {
        self.cells.iter().map(|c| c.importance).sum()
    }
}

/// Pixel-space box cut from one source frame, ready to pack.
///
/// `members` are the MBs the box covers; geometry context (`mb_size`,
/// `expand`, frame dimensions) rides along so later stages can rebuild
/// per-MB boxes and clip partial boundary MBs. Members are dropped when a
/// plan is serialized — provenance plus the source rect is enough to
/// stitch and unstitch — so occupancy is a property of in-memory plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxItem {
    pub stream_id: u32,
    pub frame_id: u32,
    /// Source rect in frame pixels.
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
    pub total_importance: f64,
    #[serde(skip)]
    pub members: Vec<MbIndex>,
    pub mb_size: u32,
    pub expand: u32,
    pub frame_w: u32,
    pub frame_h: u32,
}

impl BoxItem {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Importance per box pixel; the packing order key.
    pub fn density(&self) -> f64 {
        self.total_importance / self.area() as f64
    }

    pub fn mb_count(&self) -> usize {
        self.members.len()
    }

    /// Free-standing box for benchmarks and tests: members tile the rect,
    /// splitting `importance` evenly.
    pub fn synthetic(
        stream_id: u32,
        frame_id: u32,
        w: u32,
        h: u32,
        importance: f64,
        mb_size: u32,
    ) -> BoxItem {
        let cols = w.div_ceil(mb_size).max(1);
        let rows = h.div_ceil(mb_size).max(1);
        let share = importance / (cols * rows) as f64;
        let members = (0..rows)
            .flat_map(|y| {
                (0..cols).map(move |x| MbIndex {
                    stream_id,
                    frame_id,
                    loc_x: x,
                    loc_y: y,
                    importance: share,
                })
            })
            .collect();
        BoxItem {
            stream_id,
            frame_id,
            x0: 0,
            y0: 0,
            w,
            h,
            total_importance: importance,
            members,
            mb_size,
            expand: 0,
            frame_w: w,
            frame_h: h,
        }
    }
}

/// The identical bins content is packed into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSpec {
    pub count: usize,
    pub width: u32,
    pub height: u32,
}

impl BinSpec {
    pub fn total_pixels(&self) -> u64 {
        self.count as u64 * self.width as u64 * self.height as u64
    }

    /// How many MBs of `mb_size` the bins can hold.
    pub fn capacity(&self, mb_size: u32) -> usize {
        (self.total_pixels() / (mb_size as u64 * mb_size as u64)) as usize
    }
}

/// Unoccupied rectangle inside one bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeArea {
    pub bin: usize,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// One packed box: where it landed and whether it was rotated 90°.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    #[serde(flatten)]
    pub item: BoxItem,
    pub bin: usize,
    pub x: u32,
    pub y: u32,
    pub rotated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingPlan {
    pub bins: BinSpec,
    pub mb_size: u32,
    pub placements: Vec<Placement>,
    pub unplaced: Vec<BoxItem>,
    /// Selected-MB pixels inside placed boxes over total bin pixels.
    pub occupy_ratio: f64,
}

/// Box ordering strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackPolicy {
    /// Importance per pixel, descending. The default.
    ImportanceDensity,
    /// Plain area, descending.
    MaxAreaFirst,
    /// Every MB becomes its own expanded box, density order.
    Block,
}

impl fmt::Display for PackPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PackPolicy::ImportanceDensity => "importance_density",
            PackPolicy::MaxAreaFirst => "max_area_first",
            PackPolicy::Block => "block",
        })
    }
}

#[derive(Debug)]
pub enum PackError {
    BadBins { count: usize, width: u32, height: u32 },
    BadMbSize,
    BadPartitionLimit,
    BadImportance { stream_id: u32, frame_id: u32, loc_x: u32, loc_y: u32, value: f64 },
    CellOutsideFrame { loc_x: u32, loc_y: u32, frame_w: u32, frame_h: u32 },
    DuplicateCell { stream_id: u32, frame_id: u32, loc_x: u32, loc_y: u32 },
    Csv { msg: String },
    Io(std::io::Error),
}

impl fmt::Display for PackError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PackError::BadBins { count, width, height } => {
                write!(f, "bins must be non-empty, got {count} of {width}x{height}")
            }
            PackError::BadMbSize => write!(f, "mb_size must be positive"),
            PackError::BadPartitionLimit => write!(f, "partition limit must be positive"),
            PackError::BadImportance { stream_id, frame_id, loc_x, loc_y, value } => write!(
                f,
                "importance of MB s{stream_id}/f{frame_id}@({loc_x},{loc_y}) must be finite and >= 0, got {value}"
            ),
            PackError::CellOutsideFrame { loc_x, loc_y, frame_w, frame_h } => write!(
                f,
                "MB ({loc_x},{loc_y}) lies outside the {frame_w}x{frame_h} frame"
            ),
            PackError::DuplicateCell { stream_id, frame_id, loc_x, loc_y } => write!(
                f,
                "MB s{stream_id}/f{frame_id}@({loc_x},{loc_y}) appears more than once"
            ),
            PackError::Csv { msg } => write!(f, "csv: {msg}"),
            PackError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for PackError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            PackError::Io(e) => Some(e),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// MB selection and region extraction
// ---------------------------------------------------------------------------

/// Keep the most important MBs that fit the bins' capacity.
///
/// Sorted by importance descending; ties resolve by
/// `(stream_id, frame_id, loc_y, loc_x)` ascending so equal scores never
/// reshuffle between runs. Capacity is `floor(bins_px / mb_size²)`.
pub fn select_top_n(
    queue: &[MbIndex],
    bins: BinSpec,
    mb_size: u32,
) -> Result<Vec<MbIndex>, PackError> {
    check_bins(bins)?;
    if mb_size == 0 {
        return Err(PackError::BadMbSize);
    }
    let mut seen = HashSet::with_capacity(queue.len());
    for mb in queue {
        if !mb.importance.is_finite() || mb.importance < 0.0 {
            return Err(PackError::BadImportance {
                stream_id: mb.stream_id,
                frame_id: mb.frame_id,
                loc_x: mb.loc_x,
                loc_y: mb.loc_y,
                value: mb.importance,
            });
        }
        if !seen.insert((mb.stream_id, mb.frame_id, mb.loc_x, mb.loc_y)) {
            return Err(PackError::DuplicateCell {
                stream_id: mb.stream_id,
                frame_id: mb.frame_id,
                loc_x: mb.loc_x,
                loc_y: mb.loc_y,
            });
        }
    }
    let mut sorted = queue.to_vec();
    sorted.sort_by(|a, b| {
        b.importance.total_cmp(&a.importance).then_with(|| {
            (a.stream_id, a.frame_id, a.loc_y, a.loc_x)
                .cmp(&(b.stream_id, b.frame_id, b.loc_y, b.loc_x))
        })
    });
    sorted.truncate(bins.capacity(mb_size));
    Ok(sorted)
}

/// Group selected MBs into 4-connected regions per (stream, frame).
///
/// Regions come out ordered by `(stream_id, frame_id, min loc_y, min
/// loc_x)`, cells within a region by `(loc_y, loc_x)`.
pub fn region_props(selected: &[MbIndex]) -> Vec<Region> {
    let mut frames: BTreeMap<(u32, u32), Vec<MbIndex>> = BTreeMap::new();
    for mb in selected {
        frames.entry((mb.stream_id, mb.frame_id)).or_default().push(*mb);
    }

    let mut regions = Vec::new();
    for ((stream_id, frame_id), cells) in frames {
        let index: HashMap<(u32, u32), usize> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| ((c.loc_x, c.loc_y), i))
            .collect();
        let mut seen = vec![false; cells.len()];
        let mut batch = Vec::new();
        for start in 0..cells.len() {
            if seen[start] {
                continue;
            }
            let mut members = Vec::new();
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let c = cells[i];
                members.push(c);
                let neighbors = [
                    (c.loc_x.wrapping_sub(1), c.loc_y),
                    (c.loc_x + 1, c.loc_y),
                    (c.loc_x, c.loc_y.wrapping_sub(1)),
                    (c.loc_x, c.loc_y + 1),
                ];
                for n in neighbors {
                    if let Some(&j) = index.get(&n) {
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            members.sort_by_key(|c| (c.loc_y, c.loc_x));
            batch.push(Region { stream_id, frame_id, cells: members });
        }
        // min-y/min-x are independent minima; the lexicographically first
        // cell settles the rare case where two regions share both.
        batch.sort_by_key(|r| {
            let min_y = r.cells.iter().map(|c| c.loc_y).min().unwrap();
            let min_x = r.cells.iter().map(|c| c.loc_x).min().unwrap();
            (min_y, min_x, r.cells[0].loc_y, r.cells[0].loc_x)
        });
        regions.extend(batch);
    }
    regions
}

/// Wrap each region in its pixel bounding box, expanded by `expand` pixels
/// on every side and clamped to the frame.
pub fn bound_regions(
    regions: &[Region],
    mb_size: u32,
    expand: u32,
    frame_w: u32,
    frame_h: u32,
) -> Result<Vec<BoxItem>, PackError> {
    if mb_size == 0 {
        return Err(PackError::BadMbSize);
    }
    let mut boxes = Vec::with_capacity(regions.len());
    for region in regions {
        if region.cells.is_empty() {
            continue;
        }
        let mut min_x = u32::MAX;
        let mut min_y = u32::MAX;
        let mut max_x = 0u32;
        let mut max_y = 0u32;
        for c in &region.cells {
            if c.loc_x * mb_size >= frame_w || c.loc_y * mb_size >= frame_h {
                return Err(PackError::CellOutsideFrame {
                    loc_x: c.loc_x,
                    loc_y: c.loc_y,
                    frame_w,
                    frame_h,
                });
            }
            min_x = min_x.min(c.loc_x);
            min_y = min_y.min(c.loc_y);
            max_x = max_x.max(c.loc_x);
            max_y = max_y.max(c.loc_y);
        }
        let x0 = (min_x * mb_size).saturating_sub(expand);
        let y0 = (min_y * mb_size).saturating_sub(expand);
        let x1 = (((max_x + 1) * mb_size).min(frame_w) + expand).min(frame_w);
        let y1 = (((max_y + 1) * mb_size).min(frame_h) + expand).min(frame_h);
        boxes.push(BoxItem {
            stream_id: region.stream_id,
            frame_id: region.frame_id,
            x0,
            y0,
            w: x1 - x0,
            h: y1 - y0,
            total_importance: region.total_importance(),
            members: region.cells.clone(),
            mb_size,
            expand,
            frame_w,
            frame_h,
        });
    }
    Ok(boxes)
}

/// Split boxes until no side exceeds `limit`.
///
/// An oversized box splits along its longer axis (ties split along the
/// width) into `ceil(side / limit)` near-equal pieces, earlier pieces
/// taking the remainder. Piece importance is recomputed from the MBs
/// whose pixel rects intersect the piece — not prorated by area — so a
/// straddling MB counts toward both neighbors.
pub fn partition_boxes(boxes: Vec<BoxItem>, limit: u32) -> Result<Vec<BoxItem>, PackError> {
    if limit == 0 {
        return Err(PackError::BadPartitionLimit);
    }
    let mut out = Vec::with_capacity(boxes.len());
    for b in boxes {
        split_into(b, limit, &mut out);
    }
    Ok(out)
}

fn split_into(b: BoxItem, limit: u32, out: &mut Vec<BoxItem>) {
    if b.w <= limit && b.h <= limit {
        out.push(b);
        return;
    }
    let along_w = b.w >= b.h;
    let side = if along_w { b.w } else { b.h };
    let k = side.div_ceil(limit);
    let base = side / k;
    let rem = side % k;
    let mut offset = 0u32;
    for i in 0..k {
        let len = base + u32::from(i < rem);
        let piece = if along_w {
            carve(&b, b.x0 + offset, b.y0, len, b.h)
        } else {
            carve(&b, b.x0, b.y0 + offset, b.w, len)
        };
        offset += len;
        split_into(piece, limit, out);
    }
}

/// Sub-box of `parent` covering the given rect, with members and
/// importance recomputed from intersecting MBs.
fn carve(parent: &BoxItem, x0: u32, y0: u32, w: u32, h: u32) -> BoxItem {
    let members: Vec<MbIndex> = parent
        .members
        .iter()
        .copied()
        .filter(|m| {
            mb_rect_intersection(m, parent.mb_size, parent.frame_w, parent.frame_h, x0, y0, w, h)
                > 0
        })
        .collect();
    let total_importance = members.iter().map(|m| m.importance).sum();
    BoxItem {
        stream_id: parent.stream_id,
        frame_id: parent.frame_id,
        x0,
        y0,
        w,
        h,
        total_importance,
        members,
        mb_size: parent.mb_size,
        expand: parent.expand,
        frame_w: parent.frame_w,
        frame_h: parent.frame_h,
    }
}

/// Pixel overlap between an MB (clipped to its frame) and a rect.
fn mb_rect_intersection(
    mb: &MbIndex,
    mb_size: u32,
    frame_w: u32,
    frame_h: u32,
    x0: u32,
    y0: u32,
    w: u32,
    h: u32,
) -> u64 {
    let mx0 = mb.loc_x * mb_size;
    let my0 = mb.loc_y * mb_size;
    let mx1 = ((mb.loc_x + 1) * mb_size).min(frame_w);
    let my1 = ((mb.loc_y + 1) * mb_size).min(frame_h);
    let ix0 = mx0.max(x0);
    let iy0 = my0.max(y0);
    let ix1 = mx1.min(x0 + w);
    let iy1 = my1.min(y0 + h);
    if ix1 <= ix0 || iy1 <= iy0 {
        0
    } else {
        (ix1 - ix0) as u64 * (iy1 - iy0) as u64
    }
}

// ---------------------------------------------------------------------------
// Guillotine packing
// ---------------------------------------------------------------------------

/// Split a free area around a box placed at its top-left corner.
///
/// Both guillotine splits are considered — vertical keeps a full-height
/// right strip, horizontal a full-width bottom strip — and the one whose
/// larger remainder has the larger area wins; ties split vertically.
/// Zero-area strips are omitted. The full strip is emitted before the
/// leftover next to the placed box, so the FIFO scan tries it first.
///
/// The placed box must fit. Callers check; this function panics on a
/// violated precondition rather than corrupting the free list.
pub fn inner_free(area: FreeArea, w: u32, h: u32) -> Vec<FreeArea> {
    assert!(
        w > 0 && h > 0 && w <= area.w && h <= area.h,
        "placed {w}x{h} must fit free {}x{}",
        area.w,
        area.h
    );
    let (rw, rh) = (area.w - w, area.h - h);
    // Vertical split: right strip rw x area.h, bottom strip w x rh.
    let v_larger = (rw as u64 * area.h as u64).max(w as u64 * rh as u64);
    // Horizontal split: bottom strip area.w x rh, right strip rw x h.
    let h_larger = (area.w as u64 * rh as u64).max(rw as u64 * h as u64);

    let mut out = Vec::with_capacity(2);
    if v_larger >= h_larger {
        if rw > 0 {
            out.push(FreeArea { bin: area.bin, x: area.x + w, y: area.y, w: rw, h: area.h });
        }
        if rh > 0 {
            out.push(FreeArea { bin: area.bin, x: area.x, y: area.y + h, w, h: rh });
        }
    } else {
        if rh > 0 {
            out.push(FreeArea { bin: area.bin, x: area.x, y: area.y + h, w: area.w, h: rh });
        }
        if rw > 0 {
            out.push(FreeArea { bin: area.bin, x: area.x + w, y: area.y, w: rw, h });
        }
    }
    out
}

/// Pack boxes into bins under the given ordering policy.
///
/// Free areas are scanned in creation order (bins first, then split
/// remainders as they appear); a box takes the first area it fits,
/// unrotated if possible, rotated otherwise, and is placed at that area's
/// top-left corner. Boxes that fit nowhere are reported, never dropped
/// silently.
pub fn pack(
    boxes: &[BoxItem],
    bins: BinSpec,
    policy: PackPolicy,
) -> Result<PackingPlan, PackError> {
    check_bins(bins)?;
    let mut items: Vec<BoxItem> = match policy {
        PackPolicy::Block => explode_to_mb_boxes(boxes),
        _ => boxes.to_vec(),
    };
    match policy {
        PackPolicy::ImportanceDensity | PackPolicy::Block => {
            items.sort_by(|a, b| b.density().total_cmp(&a.density()));
        }
        PackPolicy::MaxAreaFirst => {
            items.sort_by(|a, b| b.area().cmp(&a.area()));
        }
    }

    let mb_size = items.first().map_or(0, |b| b.mb_size);
    let mut free: Vec<FreeArea> = (0..bins.count)
        .map(|bin| FreeArea { bin, x: 0, y: 0, w: bins.width, h: bins.height })
        .collect();
    let mut placements: Vec<Placement> = Vec::with_capacity(items.len());
    let mut unplaced = Vec::new();

    for item in items {
        if item.w == 0 || item.h == 0 {
            unplaced.push(item);
            continue;
        }
        let slot = free.iter().position(|fa| {
            (item.w <= fa.w && item.h <= fa.h) || (item.h <= fa.w && item.w <= fa.h)
        });
        let Some(fi) = slot else {
            unplaced.push(item);
            continue;
        };
        let fa = free.remove(fi);
        let rotated = !(item.w <= fa.w && item.h <= fa.h);
        let (pw, ph) = if rotated { (item.h, item.w) } else { (item.w, item.h) };
        let remainders = inner_free(fa, pw, ph);
        placements.push(Placement { item, bin: fa.bin, x: fa.x, y: fa.y, rotated });
        #[cfg(debug_assertions)]
        audit_step(&free, &remainders, &placements, bins);
        free.extend(remainders);
    }

    let occupy_ratio = occupy_of(&placements, bins);
    Ok(PackingPlan { bins, mb_size, placements, unplaced, occupy_ratio })
}

/// Block policy: one expanded box per distinct member MB.
fn explode_to_mb_boxes(boxes: &[BoxItem]) -> Vec<BoxItem> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for b in boxes {
        for m in &b.members {
            if !seen.insert((m.stream_id, m.frame_id, m.loc_y, m.loc_x)) {
                continue;
            }
            let x0 = (m.loc_x * b.mb_size).saturating_sub(b.expand);
            let y0 = (m.loc_y * b.mb_size).saturating_sub(b.expand);
            let x1 = (((m.loc_x + 1) * b.mb_size).min(b.frame_w) + b.expand).min(b.frame_w);
            let y1 = (((m.loc_y + 1) * b.mb_size).min(b.frame_h) + b.expand).min(b.frame_h);
            out.push(BoxItem {
                stream_id: m.stream_id,
                frame_id: m.frame_id,
                x0,
                y0,
                w: x1 - x0,
                h: y1 - y0,
                total_importance: m.importance,
                members: vec![*m],
                mb_size: b.mb_size,
                expand: b.expand,
                frame_w: b.frame_w,
                frame_h: b.frame_h,
            });
        }
    }
    out
}

/// Selected-MB pixel area inside placed boxes over total bin area.
///
/// Counts, per placement, the overlap of each member MB's (frame-clipped)
/// pixel rect with the box's source rect; expansion margins and memberless
/// fragments dilute the ratio, which is the point of measuring it. Boxes
/// carry their own MB geometry, so no external cell size is needed.
pub fn occupy_ratio(plan: &PackingPlan) -> f64 {
    occupy_of(&plan.placements, plan.bins)
}

fn occupy_of(placements: &[Placement], bins: BinSpec) -> f64 {
    if bins.total_pixels() == 0 {
        return 0.0;
    }
    let covered: u64 = placements
        .iter()
        .flat_map(|p| {
            p.item.members.iter().map(|m| {
                mb_rect_intersection(
                    m,
                    p.item.mb_size.max(1),
                    p.item.frame_w,
                    p.item.frame_h,
                    p.item.x0,
                    p.item.y0,
                    p.item.w,
                    p.item.h,
                )
            })
        })
        .sum();
    covered as f64 / bins.total_pixels() as f64
}

fn check_bins(bins: BinSpec) -> Result<(), PackError> {
    if bins.count == 0 || bins.width == 0 || bins.height == 0 {
        return Err(PackError::BadBins {
            count: bins.count,
            width: bins.width,
            height: bins.height,
        });
    }
    Ok(())
}

/// Validate a finished plan: every placement inside its bin, placements
/// pairwise disjoint per bin, occupy ratio in range.
pub fn validate_plan(plan: &PackingPlan) -> Result<(), String> {
    for (i, p) in plan.placements.iter().enumerate() {
        let (w, h) = placed_dims(p);
        if p.bin >= plan.bins.count {
            return Err(format!("placement {i} targets bin {} of {}", p.bin, plan.bins.count));
        }
        if p.x + w > plan.bins.width || p.y + h > plan.bins.height {
            return Err(format!(
                "placement {i} ({w}x{h} at {},{}) exceeds the {}x{} bin",
                p.x, p.y, plan.bins.width, plan.bins.height
            ));
        }
        for (j, q) in plan.placements.iter().enumerate().skip(i + 1) {
            if p.bin != q.bin {
                continue;
            }
            let (qw, qh) = placed_dims(q);
            let overlap = p.x < q.x + qw && q.x < p.x + w && p.y < q.y + qh && q.y < p.y + h;
            if overlap {
                return Err(format!("placements {i} and {j} overlap in bin {}", p.bin));
            }
        }
    }
    if !(0.0..=1.0).contains(&plan.occupy_ratio) {
        return Err(format!("occupy ratio {} out of range", plan.occupy_ratio));
    }
    Ok(())
}

fn placed_dims(p: &Placement) -> (u32, u32) {
    if p.rotated {
        (p.item.h, p.item.w)
    } else {
        (p.item.w, p.item.h)
    }
}

/// Incremental free-list soundness check, debug builds only.
///
/// Runs right after a placement, before its remainders join the free
/// list: the new placement must sit inside its bin and stay clear of all
/// surviving free areas and earlier placements; its remainders must stay
/// clear of every placement including the new one. Pre-existing pairs
/// were checked when they were created, so each step stays linear in the
/// number of placements.
#[cfg(debug_assertions)]
fn audit_step(
    free: &[FreeArea],
    remainders: &[FreeArea],
    placements: &[Placement],
    bins: BinSpec,
) {
    type Rect = (usize, u32, u32, u32, u32);
    let free_rect = |f: &FreeArea| -> Rect { (f.bin, f.x, f.y, f.w, f.h) };
    let place_rect = |p: &Placement| -> Rect {
        let (w, h) = placed_dims(p);
        (p.bin, p.x, p.y, w, h)
    };
    let overlaps = |a: Rect, b: Rect| {
        a.0 == b.0 && a.1 < b.1 + b.3 && b.1 < a.1 + a.3 && a.2 < b.2 + b.4 && b.2 < a.2 + a.4
    };
    let inside = |r: Rect| r.0 < bins.count && r.1 + r.3 <= bins.width && r.2 + r.4 <= bins.height;

    let newest = place_rect(placements.last().expect("audit runs after a placement"));
    assert!(inside(newest), "placement escapes its bin");
    for p in &placements[..placements.len() - 1] {
        assert!(!overlaps(newest, place_rect(p)), "placement overlaps a placement");
    }
    for f in free {
        assert!(!overlaps(newest, free_rect(f)), "placement overlaps a free area");
    }
    for r in remainders {
        let rr = free_rect(r);
        assert!(inside(rr), "free area escapes its bin");
        for p in placements {
            assert!(!overlaps(rr, place_rect(p)), "free area overlaps a placement");
        }
    }
}

// ---------------------------------------------------------------------------
// CSV interchange
// ---------------------------------------------------------------------------

/// Read an MB queue from CSV with header
/// `stream_id,frame_id,loc_x,loc_y,importance`.
pub fn read_mb_csv(path: &Path) -> Result<Vec<MbIndex>, PackError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in reader.deserialize() {
        let mb: MbIndex = rec.map_err(csv_err)?;
        out.push(mb);
    }
    Ok(out)
}

pub fn write_mb_csv(path: &Path, queue: &[MbIndex]) -> Result<(), PackError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    for mb in queue {
        writer.serialize(mb).map_err(csv_err)?;
    }
    writer.flush().map_err(PackError::Io)
}

fn csv_err(e: csv::Error) -> PackError {
    PackError::Csv { msg: e.to_string() }
}

// ---------------------------------------------------------------------------
// Benchmark workloads
// ---------------------------------------------------------------------------

/// Synthetic multi-stream workload for the shuffle benchmark.
#[derive(Debug, Clone)]
pub struct ShuffleWorkload {
    pub streams: usize,
    pub frame_w: u32,
    pub frame_h: u32,
    pub mb_size: u32,
    pub expand: u32,
    pub partition_limit: u32,
    /// Per-stream high-importance coverage drawn uniformly per trial.
    pub sparsity: (f64, f64),
    pub hotspots: usize,
    pub bins: BinSpec,
}

impl ShuffleWorkload {
    /// Six 1280x720 streams with 10–25% important area, packed into one
    /// 1024x512 bin — a capacity of 2048 MBs, deliberately below the
    /// workload's high-importance supply so selection has to choose.
    pub fn desk_default() -> Self {
        ShuffleWorkload {
            streams: 6,
            frame_w: 1280,
            frame_h: 720,
            mb_size: 16,
            expand: DEFAULT_EXPAND,
            partition_limit: 352,
            sparsity: (0.10, 0.25),
            hotspots: 3,
            bins: BinSpec { count: 1, width: 1024, height: 512 },
        }
    }
}

/// Occupancy statistics for one policy over all trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyOccupancy {
    pub policy: PackPolicy,
    pub mean: f64,
    pub p90: f64,
    pub p95: f64,
}

/// Re-pack a randomized arrangement of the workload `trials` times per
/// policy and report occupancy statistics.
///
/// Each trial reseeds the per-stream importance maps and permutes stream
/// ids, modelling a different mix of live content competing for the same
/// bins. Trials are deterministic in (`seed`, trial index); statistics
/// reduce in trial order.
pub fn shuffle_benchmark(
    workload: &ShuffleWorkload,
    trials: usize,
    seed: u64,
) -> Result<Vec<PolicyOccupancy>, PackError> {
    let policies = [PackPolicy::ImportanceDensity, PackPolicy::MaxAreaFirst, PackPolicy::Block];
    let mut ratios: Vec<Vec<f64>> = vec![Vec::with_capacity(trials); policies.len()];
    let geom = MbGeometry::for_frame(
        workload.frame_w as usize,
        workload.frame_h as usize,
        workload.mb_size as usize,
    )
    .map_err(|_| PackError::BadMbSize)?;

    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64 + 1);

        let mut ids: Vec<u32> = (0..workload.streams as u32).collect();
        ids.shuffle(&mut rng);
        let mut queue = Vec::new();
        for &stream_id in &ids {
            let sparsity = rng.gen_range(workload.sparsity.0..=workload.sparsity.1);
            let map = synth_importance(rng.gen(), geom, sparsity, workload.hotspots)
                .expect("synth parameters are valid by construction");
            queue_from_map(&map, stream_id, 0, &mut queue);
        }

        let selected = select_top_n(&queue, workload.bins, workload.mb_size)?;
        let regions = region_props(&selected);
        let boxes = bound_regions(
            &regions,
            workload.mb_size,
            workload.expand,
            workload.frame_w,
            workload.frame_h,
        )?;
        let boxes = partition_boxes(boxes, workload.partition_limit)?;
        for (pi, &policy) in policies.iter().enumerate() {
            let plan = pack(&boxes, workload.bins, policy)?;
            ratios[pi].push(plan.occupy_ratio);
        }
    }

    Ok(policies
        .iter()
        .zip(ratios)
        .map(|(&policy, rs)| PolicyOccupancy {
            policy,
            mean: rs.iter().sum::<f64>() / rs.len().max(1) as f64,
            p90: percentile(&rs, 0.90),
            p95: percentile(&rs, 0.95),
        })
        .collect())
}

/// Every cell of an importance map as one queue entry.
pub fn queue_from_map(map: &ImportanceMap, stream_id: u32, frame_id: u32, out: &mut Vec<MbIndex>) {
    let gw = map.geometry.grid_w;
    for (i, &importance) in map.scores.iter().enumerate() {
        out.push(MbIndex {
            stream_id,
            frame_id,
            loc_x: (i % gw) as u32,
            loc_y: (i / gw) as u32,
            importance,
        });
    }
}

/// Nearest-rank percentile of an unsorted sample.
fn percentile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Instance for ordering-dominance checks: boxes plus bins.
#[derive(Debug, Clone)]
pub struct PackInstance {
    pub boxes: Vec<BoxItem>,
    pub bins: BinSpec,
}

/// Adversarial family where density ordering provably beats area
/// ordering: one huge sparse box monopolizes the bin against a crowd of
/// small dense boxes.
///
/// The large box (sides ≥ 105) and any small box (sides ≥ 24) cannot
/// share the 128x128 bin in any orientation, and after any small box is
/// placed no remaining free area fits the large one. Area order therefore
/// packs only the big box's importance (8–12) while density order packs
/// the crowd's strictly larger total (≥ 6 boxes at 4–6 each).
pub fn adversarial_instances(seed: u64, count: usize) -> Vec<PackInstance> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let bins = BinSpec { count: 1, width: 128, height: 128 };
        let mut boxes = vec![BoxItem::synthetic(
            0,
            0,
            rng.gen_range(105..=124),
            rng.gen_range(105..=124),
            rng.gen_range(8.0..12.0),
            16,
        )];
        let smalls = rng.gen_range(6..=9);
        for s in 0..smalls {
            boxes.push(BoxItem::synthetic(
                1 + s as u32,
                0,
                rng.gen_range(24..=40),
                rng.gen_range(24..=40),
                rng.gen_range(4.0..6.0),
                16,
            ));
        }
        out.push(PackInstance { boxes, bins });
    }
    out
}

/// Total importance of placed boxes; the quantity ordering policies fight
/// over.
pub fn packed_importance(plan: &PackingPlan) -> f64 {
    plan.placements.iter().map(|p| p.item.total_importance).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn mb(stream_id: u32, frame_id: u32, loc_x: u32, loc_y: u32, importance: f64) -> MbIndex {
        MbIndex { stream_id, frame_id, loc_x, loc_y, importance }
    }

    #[test]
    fn top_n_caps_at_capacity_with_deterministic_ties() {
        let bins = BinSpec { count: 1, width: 64, height: 64 }; // capacity 16
        let mut queue = Vec::new();
        for i in 0..40u32 {
            queue.push(mb(i % 3, i / 3, i % 7, i / 7, 1.0)); // all ties
        }
        let got = select_top_n(&queue, bins, 16).unwrap();
        assert_eq!(got.len(), 16);
        let keys: Vec<_> =
            got.iter().map(|m| (m.stream_id, m.frame_id, m.loc_y, m.loc_x)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted, "ties must come out in id order");
    }

    #[test]
    fn top_n_matches_sort_and_truncate_oracle() {
        let bins = BinSpec { count: 2, width: 64, height: 32 }; // capacity 16
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let n = rng.gen_range(1..200usize);
            let mut queue = Vec::new();
            for i in 0..n {
                queue.push(mb(
                    rng.gen_range(0..4),
                    rng.gen_range(0..4),
                    i as u32, // distinct cells
                    rng.gen_range(0..50),
                    (rng.gen_range(0..8) as f64) * 0.5, // plenty of ties
                ));
            }
            let got = select_top_n(&queue, bins, 16).unwrap();
            let mut oracle = queue.clone();
            oracle.sort_by(|a, b| {
                b.importance.total_cmp(&a.importance).then_with(|| {
                    (a.stream_id, a.frame_id, a.loc_y, a.loc_x)
                        .cmp(&(b.stream_id, b.frame_id, b.loc_y, b.loc_x))
                })
            });
            oracle.truncate(16);
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn top_n_rejects_bad_importance_and_duplicates() {
        let bins = BinSpec { count: 1, width: 64, height: 64 };
        assert!(matches!(
            select_top_n(&[mb(0, 0, 0, 0, -1.0)], bins, 16),
            Err(PackError::BadImportance { .. })
        ));
        assert!(matches!(
            select_top_n(&[mb(0, 0, 1, 1, 1.0), mb(0, 0, 1, 1, 2.0)], bins, 16),
            Err(PackError::DuplicateCell { .. })
        ));
        assert!(select_top_n(&[], bins, 0).is_err());
        assert!(select_top_n(&[], BinSpec { count: 0, width: 1, height: 1 }, 16).is_err());
    }

    #[test]
    fn region_props_examples() {
        // {(0,0),(1,0)} and {(5,5)}: two regions of sizes 2 and 1.
        let sel = [mb(0, 0, 0, 0, 1.0), mb(0, 0, 1, 0, 2.0), mb(0, 0, 5, 5, 3.0)];
        let regions = region_props(&sel);
        assert_eq!(regions.len(), 2);
        assert_eq!(regions[0].cells.len(), 2);
        assert_eq!(regions[1].cells.len(), 1);
        assert_eq!(regions[0].total_importance(), 3.0);

        // Diagonal cells are not 4-connected.
        let sel = [mb(0, 0, 0, 0, 1.0), mb(0, 0, 1, 1, 1.0)];
        assert_eq!(region_props(&sel).len(), 2);

        // Cells from different frames never merge.
        let sel = [mb(0, 0, 0, 0, 1.0), mb(0, 1, 1, 0, 1.0)];
        assert_eq!(region_props(&sel).len(), 2);
    }

    #[test]
    fn region_props_matches_flood_fill_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (w, h) = (60usize, 34usize);
            let mut mask = vec![false; w * h];
            let mut sel = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if rng.gen_bool(0.3) {
                        mask[y * w + x] = true;
                        sel.push(mb(0, 0, x as u32, y as u32, 1.0));
                    }
                }
            }
            let regions = region_props(&sel);
            // Oracle: dense-grid BFS component count plus cell conservation.
            let mut seen = vec![false; w * h];
            let mut comps = 0;
            for start in 0..w * h {
                if !mask[start] || seen[start] {
                    continue;
                }
                comps += 1;
                let mut stack = vec![start];
                seen[start] = true;
                while let Some(i) = stack.pop() {
                    let (x, y) = (i % w, i / w);
                    for (nx, ny) in
                        [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)]
                    {
                        if nx < w && ny < h && mask[ny * w + nx] && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            stack.push(ny * w + nx);
                        }
                    }
                }
            }
            assert_eq!(regions.len(), comps);
            assert_eq!(regions.iter().map(|r| r.cells.len()).sum::<usize>(), sel.len());
        }
    }

    #[test]
    fn bound_region_examples() {
        // Single MB at grid (0,0), mb 16, expand 3, frame 640x360: the
        // margin clamps at the frame edge.
        let r = region_props(&[mb(0, 0, 0, 0, 1.0)]);
        let b = &bound_regions(&r, 16, 3, 640, 360).unwrap()[0];
        assert_eq!((b.x0, b.y0, b.w, b.h), (0, 0, 19, 19));

        // Same MB at grid (2,2): expansion applies on all four sides.
        let r = region_props(&[mb(0, 0, 2, 2, 1.0)]);
        let b = &bound_regions(&r, 16, 3, 640, 360).unwrap()[0];
        assert_eq!((b.x0, b.y0, b.w, b.h), (29, 29, 22, 22));

        // Two MBs side by side.
        let r = region_props(&[mb(0, 0, 0, 0, 1.0), mb(0, 0, 1, 0, 1.0)]);
        let b = &bound_regions(&r, 16, 3, 640, 360).unwrap()[0];
        assert_eq!((b.x0, b.y0, b.w, b.h), (0, 0, 35, 19));

        // Boundary MB in a frame that is not a multiple of 16: the box
        // clips to the frame.
        let r = region_props(&[mb(0, 0, 39, 0, 1.0)]);
        let b = &bound_regions(&r, 16, 3, 630, 360).unwrap()[0];
        assert_eq!(b.x0, 621);
        assert_eq!(b.w, 9);

        let r = region_props(&[mb(0, 0, 50, 0, 1.0)]);
        assert!(bound_regions(&r, 16, 3, 630, 360).is_err());
    }

    #[test]
    fn partition_splits_near_equal() {
        let b = BoxItem::synthetic(0, 0, 300, 64, 30.0, 16);
        let parts = partition_boxes(vec![b], 256).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!((parts[0].w, parts[1].w), (150, 150));
        assert!(parts.iter().all(|p| p.h == 64));

        let b = BoxItem::synthetic(0, 0, 520, 64, 52.0, 16);
        let parts = partition_boxes(vec![b], 256).unwrap();
        assert_eq!(parts.iter().map(|p| p.w).collect::<Vec<_>>(), vec![174, 173, 173]);
        assert_eq!(parts.iter().map(|p| p.w).sum::<u32>(), 520);

        // Both sides oversized: recursion covers the other axis too.
        let b = BoxItem::synthetic(0, 0, 300, 300, 9.0, 16);
        let parts = partition_boxes(vec![b], 128).unwrap();
        assert!(parts.iter().all(|p| p.w <= 128 && p.h <= 128));
        assert_eq!(parts.iter().map(|p| p.area()).sum::<u64>(), 300 * 300);

        assert!(partition_boxes(vec![], 0).is_err());
    }

    #[test]
    fn partition_recomputes_importance_from_covered_mbs() {
        // Two 16px MBs of importance 1.0 each; a split at limit 16 puts
        // one MB per piece.
        let r = region_props(&[mb(0, 0, 0, 0, 1.0), mb(0, 0, 1, 0, 1.0)]);
        let boxes = bound_regions(&r, 16, 0, 64, 64).unwrap();
        let parts = partition_boxes(boxes, 16).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].total_importance, 1.0);
        assert_eq!(parts[1].total_importance, 1.0);
        assert_eq!(parts[0].mb_count(), 1);

        // A cut straddling an MB counts it toward both pieces.
        let r = region_props(&[
            mb(0, 0, 0, 0, 1.0),
            mb(0, 0, 1, 0, 1.0),
            mb(0, 0, 2, 0, 1.0),
        ]);
        let boxes = bound_regions(&r, 16, 0, 64, 64).unwrap();
        let parts = partition_boxes(boxes, 24).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!((parts[0].w, parts[1].w), (24, 24));
        assert_eq!(parts[0].total_importance, 2.0); // MBs 0 and 1
        assert_eq!(parts[1].total_importance, 2.0); // MBs 1 and 2
    }

    #[test]
    fn inner_free_prefers_vertical_on_ties() {
        let fa = FreeArea { bin: 0, x: 0, y: 0, w: 16, h: 16 };
        let rem = inner_free(fa, 10, 10);
        assert_eq!(
            rem,
            vec![
                FreeArea { bin: 0, x: 10, y: 0, w: 6, h: 16 },
                FreeArea { bin: 0, x: 0, y: 10, w: 10, h: 6 },
            ]
        );
    }

    #[test]
    fn inner_free_picks_larger_major_remainder() {
        // 20x10 free, 8x4 placed: vertical {12x10, 8x6} and horizontal
        // {20x6, 12x4} tie on the larger remainder (120 px each), so the
        // vertical preference applies.
        let fa = FreeArea { bin: 0, x: 0, y: 0, w: 20, h: 10 };
        let rem = inner_free(fa, 8, 4);
        assert_eq!(
            rem,
            vec![
                FreeArea { bin: 0, x: 8, y: 0, w: 12, h: 10 },
                FreeArea { bin: 0, x: 0, y: 4, w: 8, h: 6 },
            ]
        );

        // 20x10 free, 12x4 placed: horizontal's 20x6 (120) beats
        // vertical's 8x10 (80).
        let rem = inner_free(fa, 12, 4);
        assert_eq!(
            rem,
            vec![
                FreeArea { bin: 0, x: 0, y: 4, w: 20, h: 6 },
                FreeArea { bin: 0, x: 12, y: 0, w: 8, h: 4 },
            ]
        );
    }

    #[test]
    fn inner_free_drops_zero_strips() {
        let fa = FreeArea { bin: 0, x: 0, y: 0, w: 16, h: 16 };
        assert!(inner_free(fa, 16, 16).is_empty());
        let rem = inner_free(fa, 16, 10);
        assert_eq!(rem, vec![FreeArea { bin: 0, x: 0, y: 10, w: 16, h: 6 }]);
    }

    fn bare_box(w: u32, h: u32, importance: f64) -> BoxItem {
        BoxItem::synthetic(0, 0, w, h, importance, 16)
    }

    #[test]
    fn pack_places_at_top_left_and_reuses_remainders() {
        let bins = BinSpec { count: 1, width: 16, height: 16 };
        let plan =
            pack(&[bare_box(10, 10, 1.0), bare_box(6, 16, 1.0)], bins, PackPolicy::MaxAreaFirst)
                .unwrap();
        assert_eq!(plan.placements.len(), 2);
        assert_eq!((plan.placements[0].x, plan.placements[0].y), (0, 0));
        // Second box lands in the right strip created by the first.
        assert_eq!((plan.placements[1].x, plan.placements[1].y), (10, 0));
        assert!(plan.unplaced.is_empty());
    }

    #[test]
    fn pack_reports_unfittable_boxes() {
        let bins = BinSpec { count: 1, width: 16, height: 16 };
        let plan = pack(&[bare_box(12, 20, 1.0)], bins, PackPolicy::ImportanceDensity).unwrap();
        assert!(plan.placements.is_empty());
        assert_eq!(plan.unplaced.len(), 1);
    }

    #[test]
    fn pack_rotates_when_only_rotation_fits() {
        let bins = BinSpec { count: 1, width: 16, height: 16 };
        // First box leaves a 6x16 right strip; a 16x6 box must rotate to
        // use it.
        let plan = pack(
            &[bare_box(10, 16, 5.0), bare_box(16, 6, 1.0)],
            bins,
            PackPolicy::ImportanceDensity,
        )
        .unwrap();
        assert_eq!(plan.placements.len(), 2);
        assert!(!plan.placements[0].rotated);
        assert!(plan.placements[1].rotated);
        assert_eq!((plan.placements[1].x, plan.placements[1].y), (10, 0));
    }

    #[test]
    fn pack_prefers_unrotated_when_both_fit() {
        let bins = BinSpec { count: 1, width: 16, height: 16 };
        let plan = pack(&[bare_box(10, 12, 1.0)], bins, PackPolicy::ImportanceDensity).unwrap();
        assert!(!plan.placements[0].rotated);
    }

    #[test]
    fn density_order_beats_area_order_on_contested_bin() {
        // One 30x30 box of importance 3 against two 16x16 boxes of
        // importance 8 each in a 32x32 bin. No 16x16 box coexists with
        // the 30x30 one (30 + 16 > 32 on both axes), so the orderings
        // commit to opposite choices.
        let bins = BinSpec { count: 1, width: 32, height: 32 };
        let boxes = vec![bare_box(30, 30, 3.0), bare_box(16, 16, 8.0), bare_box(16, 16, 8.0)];
        let dense = pack(&boxes, bins, PackPolicy::ImportanceDensity).unwrap();
        let area = pack(&boxes, bins, PackPolicy::MaxAreaFirst).unwrap();
        assert_eq!(packed_importance(&dense), 16.0);
        assert_eq!(packed_importance(&area), 3.0);
        assert_eq!(dense.placements.len(), 2);
        assert_eq!(area.placements.len(), 1);
    }

    #[test]
    fn block_policy_explodes_into_per_mb_boxes() {
        let r = region_props(&[mb(0, 0, 2, 2, 4.0), mb(0, 0, 3, 2, 2.0)]);
        let boxes = bound_regions(&r, 16, 3, 640, 360).unwrap();
        let bins = BinSpec { count: 1, width: 128, height: 128 };
        let plan = pack(&boxes, bins, PackPolicy::Block).unwrap();
        assert_eq!(plan.placements.len(), 2);
        assert!(plan.placements.iter().all(|p| p.item.w == 22 && p.item.h == 22));
        // Density order puts the importance-4 MB first.
        assert_eq!(plan.placements[0].item.total_importance, 4.0);
    }

    #[test]
    fn occupy_ratio_examples() {
        // One box covering 4 full MBs placed in a 64x64 bin: 1024/4096.
        let r = region_props(&[
            mb(0, 0, 0, 0, 1.0),
            mb(0, 0, 1, 0, 1.0),
            mb(0, 0, 0, 1, 1.0),
            mb(0, 0, 1, 1, 1.0),
        ]);
        let boxes = bound_regions(&r, 16, 0, 640, 360).unwrap();
        let bins = BinSpec { count: 1, width: 64, height: 64 };
        let plan = pack(&boxes, bins, PackPolicy::ImportanceDensity).unwrap();
        assert_eq!(plan.occupy_ratio, 0.25);
        assert_eq!(occupy_ratio(&plan), 0.25);

        // A 3px margin adds box area but no selected pixels: the same
        // 1024 count over the same bins.
        let r = region_props(&[
            mb(0, 0, 1, 1, 1.0),
            mb(0, 0, 2, 1, 1.0),
            mb(0, 0, 1, 2, 1.0),
            mb(0, 0, 2, 2, 1.0),
        ]);
        let boxes = bound_regions(&r, 16, 3, 640, 360).unwrap();
        let plan = pack(&boxes, bins, PackPolicy::ImportanceDensity).unwrap();
        assert_eq!(plan.occupy_ratio, 0.25);

        let plan = pack(&[], bins, PackPolicy::ImportanceDensity).unwrap();
        assert_eq!(plan.occupy_ratio, 0.0);
    }

    #[test]
    fn adversarial_family_orders_strictly() {
        for inst in adversarial_instances(9, 25) {
            let dense = pack(&inst.boxes, inst.bins, PackPolicy::ImportanceDensity).unwrap();
            let area = pack(&inst.boxes, inst.bins, PackPolicy::MaxAreaFirst).unwrap();
            assert!(
                packed_importance(&dense) > packed_importance(&area),
                "density {} vs area {}",
                packed_importance(&dense),
                packed_importance(&area)
            );
        }
    }

    #[test]
    fn shuffle_benchmark_is_deterministic_and_ordered() {
        let wl = ShuffleWorkload::desk_default();
        let a = shuffle_benchmark(&wl, 20, 11).unwrap();
        let b = shuffle_benchmark(&wl, 20, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].policy, PackPolicy::ImportanceDensity);
        assert!(a[0].mean >= a[1].mean && a[1].mean >= a[2].mean, "{a:?}");
        assert!(a.iter().all(|s| s.p90 <= s.p95));
    }

    /// Diagnostic, not a gate: prints occupancy statistics at volume.
    /// Run with `cargo test -p regionpack shuffle_probe -- --ignored --nocapture`.
    #[test]
    #[ignore]
    fn shuffle_probe() {
        let trials: usize = std::env::var("PROBE_TRIALS").ok().and_then(|v| v.parse().ok()).unwrap_or(200);
        let seed: u64 = std::env::var("PROBE_SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(1);
        let wl = ShuffleWorkload::desk_default();
        for stats in shuffle_benchmark(&wl, trials, seed).unwrap() {
            println!(
                "{:>20}: mean {:.4}  p90 {:.4}  p95 {:.4}",
                stats.policy.to_string(),
                stats.mean,
                stats.p90,
                stats.p95
            );
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queue.csv");
        let queue = vec![mb(0, 1, 2, 3, 0.5), mb(4, 5, 6, 7, 1.25)];
        write_mb_csv(&path, &queue).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("stream_id,frame_id,loc_x,loc_y,importance\n"));
        assert_eq!(read_mb_csv(&path).unwrap(), queue);
        assert!(read_mb_csv(&dir.path().join("missing.csv")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Any box mix, any policy: plans must validate and conserve
        /// boxes.
        #[test]
        fn packing_is_always_valid(seed in 0u64..2000, policy_ix in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bins = BinSpec {
                count: rng.gen_range(1..=4),
                width: rng.gen_range(48..=160),
                height: rng.gen_range(48..=160),
            };
            let n = rng.gen_range(1..40usize);
            let boxes: Vec<BoxItem> = (0..n)
                .map(|i| BoxItem::synthetic(
                    i as u32, 0,
                    rng.gen_range(4..=180),
                    rng.gen_range(4..=180),
                    rng.gen_range(0.0..10.0),
                    16,
                ))
                .collect();
            let policy = [
                PackPolicy::ImportanceDensity,
                PackPolicy::MaxAreaFirst,
                PackPolicy::Block,
            ][policy_ix];
            let plan = pack(&boxes, bins, policy).unwrap();
            prop_assert!(validate_plan(&plan).is_ok(), "{:?}", validate_plan(&plan));
            if policy != PackPolicy::Block {
                prop_assert_eq!(plan.placements.len() + plan.unplaced.len(), n);
            }
            prop_assert!((0.0..=1.0).contains(&plan.occupy_ratio));
        }

        /// Free-area splitting conserves area: remainders sum to free
        /// minus placed, stay inside, and avoid the placed corner.
        #[test]
        fn inner_free_conserves_area(fw in 1u32..200, fh in 1u32..200, w in 1u32..200, h in 1u32..200) {
            prop_assume!(w <= fw && h <= fh);
            let fa = FreeArea { bin: 0, x: 3, y: 5, w: fw, h: fh };
            let rem = inner_free(fa, w, h);
            let total: u64 = rem.iter().map(|r| r.w as u64 * r.h as u64).sum();
            prop_assert_eq!(total, fw as u64 * fh as u64 - w as u64 * h as u64);
            prop_assert!(rem.len() <= 2);
            for r in &rem {
                prop_assert!(r.x >= fa.x && r.y >= fa.y);
                prop_assert!(r.x + r.w <= fa.x + fa.w && r.y + r.h <= fa.y + fa.h);
                let hits_placed =
                    r.x < fa.x + w && fa.x < r.x + r.w && r.y < fa.y + h && fa.y < r.y + r.h;
                prop_assert!(!hits_placed);
            }
        }
    }
}
