//! Temporal frame selection from residual feature-change series.
//!
//! Enhancing every frame is wasteful: consecutive frames change little, so
//! a few well-placed frames can donate their importance predictions to the
//! rest of a chunk. This module turns per-frame residuals into a scalar
//! feature series via a Φ operator, accumulates the normalized feature
//! change into a CDF, and picks frames where change concentrates. Streams
//! then split a global frame budget proportionally to their total change.
//!
//! Two Φ operators are provided. `InvArea` (sum of 1/area over foreground
//! components) reacts to the appearance and motion of small objects, the
//! ones analytics actually cares about; `Area` (total foreground pixels)
//! is dominated by large background disturbances. The regression suite in
//! this module exists to keep that ordering observable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::fmt;

use crate::grid::RawGrid;

/// Default chunk length in frames (one second at 30 fps).
pub const DEFAULT_CHUNK_LEN: usize = 30;

/// Default binarization threshold as a fraction of the chunk's maximum
/// residual magnitude.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.05;

/// Per-pixel residual magnitudes for one frame; all values >= 0, finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFrame {
    pub width: usize,
    pub height: usize,
    magnitudes: Vec<f64>,
}

impl ResidualFrame {
    pub fn new(width: usize, height: usize, magnitudes: Vec<f64>) -> Result<Self, TemporalError> {
        if width == 0 || height == 0 || magnitudes.len() != width * height {
            return Err(TemporalError::FrameShape { width, height, len: magnitudes.len() });
        }
        for (i, &m) in magnitudes.iter().enumerate() {
            if !m.is_finite() || m < 0.0 {
                return Err(TemporalError::BadMagnitude { index: i, value: m });
            }
        }
        Ok(ResidualFrame { width, height, magnitudes })
    }

    pub fn from_grid(grid: RawGrid) -> Result<Self, TemporalError> {
        ResidualFrame::new(grid.cols, grid.rows, grid.values)
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }
}

/// Residual summary operator applied per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiOperator {
    /// Sum of `1/area` over 4-connected foreground components.
    InvArea,
    /// Total foreground pixel count.
    Area,
}

/// Φ values for one stream's chunk plus derived deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub stream_id: u32,
    /// Φ per frame, `chunk_len` entries.
    pub values: Vec<f64>,
    /// `values[i+1] - values[i]`, signed.
    pub deltas: Vec<f64>,
    /// `|deltas|` scaled to sum to 1 (all zeros when nothing changes).
    pub normalized: Vec<f64>,
}

impl FeatureSeries {
    /// Build directly from Φ values (synthetic sources, tests).
    pub fn from_values(stream_id: u32, values: Vec<f64>) -> Result<Self, TemporalError> {
        if values.is_empty() {
            return Err(TemporalError::EmptyChunk);
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(TemporalError::BadMagnitude { index: idx, value: values[idx] });
        }
        let deltas: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
        let total: f64 = deltas.iter().map(|d| d.abs()).sum();
        let normalized = if total > 0.0 {
            deltas.iter().map(|d| d.abs() / total).collect()
        } else {
            vec![0.0; deltas.len()]
        };
        Ok(FeatureSeries { stream_id, values, deltas, normalized })
    }

    /// Total absolute feature change; the stream's weight in budget
    /// allocation.
    pub fn total_change(&self) -> f64 {
        self.deltas.iter().map(|d| d.abs()).sum()
    }
}

/// Which frames of a chunk get fresh predictions and who reuses whom.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrameSelection {
    pub stream_id: u32,
    pub chunk_len: usize,
    /// Ascending frame indices; always contains 0.
    pub selected: Vec<usize>,
    /// `reuse_map[f]` = f when selected, else the nearest preceding
    /// selected frame.
    pub reuse_map: Vec<usize>,
}

#[derive(Debug)]
pub enum TemporalError {
    FrameShape { width: usize, height: usize, len: usize },
    BadMagnitude { index: usize, value: f64 },
    BadThreshold { threshold: f64 },
    EmptyChunk,
    DimensionMismatch { first: (usize, usize), other: (usize, usize) },
    BadBudget { budget: usize, streams: usize },
    LengthMismatch { a: usize, b: usize },
    TooFewSamples { len: usize },
    ConstantInput,
    DuplicateStream { stream_id: u32 },
}

impl fmt::Display for TemporalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemporalError::FrameShape { width, height, len } => {
                write!(f, "residual frame {width}x{height} incompatible with {len} values")
            }
            TemporalError::BadMagnitude { index, value } => {
                write!(f, "residual magnitude at index {index} must be finite and >= 0, got {value}")
            }
            TemporalError::BadThreshold { threshold } => {
                write!(f, "threshold must be finite and >= 0, got {threshold}")
            }
            TemporalError::EmptyChunk => write!(f, "chunk must contain at least one frame"),
            TemporalError::DimensionMismatch { first, other } => write!(
                f,
                "all frames in a chunk must share dimensions: {}x{} vs {}x{}",
                first.0, first.1, other.0, other.1
            ),
            TemporalError::BadBudget { budget, streams } => {
                write!(f, "budget {budget} cannot cover {streams} streams at one frame each")
            }
            TemporalError::LengthMismatch { a, b } => {
                write!(f, "series lengths differ: {a} vs {b}")
            }
            TemporalError::TooFewSamples { len } => {
                write!(f, "correlation needs at least 2 samples, got {len}")
            }
            TemporalError::ConstantInput => {
                write!(f, "correlation is undefined for a constant series")
            }
            TemporalError::DuplicateStream { stream_id } => {
                write!(f, "stream {stream_id} appears more than once")
            }
        }
    }
}

impl std::error::Error for TemporalError {}

/// Σ 1/area over 4-connected components of `magnitude > threshold`.
pub fn phi_inv_area(frame: &ResidualFrame, threshold: f64) -> Result<f64, TemporalError> {
    Ok(component_areas(frame, check_threshold(threshold)?)
        .iter()
        .map(|&a| 1.0 / a as f64)
        .sum())
}

/// Total foreground pixel count of `magnitude > threshold`.
pub fn phi_area(frame: &ResidualFrame, threshold: f64) -> Result<f64, TemporalError> {
    let t = check_threshold(threshold)?;
    Ok(frame.magnitudes.iter().filter(|&&m| m > t).count() as f64)
}

/// Default chunk threshold: a fixed fraction of the peak magnitude.
pub fn default_threshold(frames: &[ResidualFrame]) -> f64 {
    let peak = frames
        .iter()
        .flat_map(|f| f.magnitudes.iter().copied())
        .fold(0.0f64, f64::max);
    DEFAULT_THRESHOLD_FRACTION * peak
}

fn check_threshold(threshold: f64) -> Result<f64, TemporalError> {
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(TemporalError::BadThreshold { threshold });
    }
    Ok(threshold)
}

/// Areas of 4-connected foreground components, BFS labeling.
fn component_areas(frame: &ResidualFrame, threshold: f64) -> Vec<usize> {
    let (w, h) = (frame.width, frame.height);
    let fg: Vec<bool> = frame.magnitudes.iter().map(|&m| m > threshold).collect();
    let mut seen = vec![false; fg.len()];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..fg.len() {
        if !fg[start] || seen[start] {
            continue;
        }
        let mut area = 0usize;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if fg[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        areas.push(area);
    }
    areas
}

/// Apply `op` to every frame of a chunk and derive the change series.
pub fn build_series(
    stream_id: u32,
    frames: &[ResidualFrame],
    op: PhiOperator,
    threshold: f64,
) -> Result<FeatureSeries, TemporalError> {
    if frames.is_empty() {
        return Err(TemporalError::EmptyChunk);
    }
    let dims = (frames[0].width, frames[0].height);
    for f in frames {
        if (f.width, f.height) != dims {
            return Err(TemporalError::DimensionMismatch {
                first: dims,
                other: (f.width, f.height),
            });
        }
    }
    let values = frames
        .iter()
        .map(|f| match op {
            PhiOperator::InvArea => phi_inv_area(f, threshold),
            PhiOperator::Area => phi_area(f, threshold),
        })
        .collect::<Result<Vec<f64>, _>>()?;
    FeatureSeries::from_values(stream_id, values)
}

/// Select up to `budget` frames of the chunk where feature change
/// concentrates.
///
/// The normalized change CDF is walked at the `budget` interval midpoints
/// `(j + 0.5) / budget`; each target picks the earliest frame whose CDF
/// reaches it (the change of delta `i` is charged to frame `i + 1`).
/// Frame 0 is always selected as the chunk anchor. Duplicate hits
/// collapse; if the anchor would push the count past `budget`, the hit
/// closest to the anchor is dropped. A budget above `chunk_len` is
/// clamped.
pub fn cdf_select(series: &FeatureSeries, budget: usize) -> Result<FrameSelection, TemporalError> {
    let chunk_len = series.values.len();
    if budget == 0 {
        return Err(TemporalError::BadBudget { budget, streams: 1 });
    }
    let n = budget.min(chunk_len);

    // cdf[f] = normalized change accumulated through frame f, f >= 1.
    let mut cdf = Vec::with_capacity(chunk_len);
    let mut acc = 0.0;
    cdf.push(0.0);
    for &d in &series.normalized {
        acc += d;
        cdf.push(acc);
    }

    let mut picked = BTreeSet::new();
    picked.insert(0usize);
    for j in 0..n {
        let y = (j as f64 + 0.5) / n as f64;
        if let Some(f) = cdf.iter().position(|&c| c >= y) {
            picked.insert(f);
        }
    }
    if picked.len() > n {
        // The anchor already represents the start of the chunk; the hit
        // nearest to it is the least informative one to keep.
        let earliest_hit = *picked.iter().find(|&&f| f != 0).expect("len > n >= 1");
        picked.remove(&earliest_hit);
    }

    let selected: Vec<usize> = picked.into_iter().collect();
    let mut reuse_map = Vec::with_capacity(chunk_len);
    let mut last = 0usize;
    let mut next = selected.iter().peekable();
    for f in 0..chunk_len {
        if next.peek() == Some(&&f) {
            last = f;
            next.next();
        }
        reuse_map.push(last);
    }
    Ok(FrameSelection { stream_id: series.stream_id, chunk_len, selected, reuse_map })
}

/// Split `total_budget` prediction slots across streams proportionally to
/// their total feature change.
///
/// Quotas `total_budget * w_j / Σw` are settled by largest remainder
/// (fractional ties to the lower stream id), then every stream is raised
/// to at least one slot — its chunk anchor — taking the units back from
/// the largest allocations (ties to the higher stream id). Returns
/// `(stream_id, budget)` in input order; budgets sum to `total_budget`
/// exactly.
pub fn allocate_frame_budget(
    series: &[FeatureSeries],
    total_budget: usize,
) -> Result<Vec<(u32, usize)>, TemporalError> {
    if series.is_empty() {
        return Err(TemporalError::EmptyChunk);
    }
    let mut ids = BTreeSet::new();
    for s in series {
        if !ids.insert(s.stream_id) {
            return Err(TemporalError::DuplicateStream { stream_id: s.stream_id });
        }
    }
    let streams = series.len();
    if total_budget < streams {
        return Err(TemporalError::BadBudget { budget: total_budget, streams });
    }

    let weights: Vec<f64> = series.iter().map(|s| s.total_change()).collect();
    let total_w: f64 = weights.iter().sum();
    let quotas: Vec<f64> = if total_w > 0.0 {
        weights.iter().map(|w| total_budget as f64 * w / total_w).collect()
    } else {
        vec![total_budget as f64 / streams as f64; streams]
    };

    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut leftover = total_budget - alloc.iter().sum::<usize>();

    // Largest remainder first; ties favor the lower stream id.
    let mut order: Vec<usize> = (0..streams).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa)
            .unwrap()
            .then_with(|| series[a].stream_id.cmp(&series[b].stream_id))
    });
    // Fractional parts sum below `streams`, so one pass suffices; the wrap
    // is pure defense against float drift.
    let mut at = 0usize;
    while leftover > 0 {
        alloc[order[at % streams]] += 1;
        leftover -= 1;
        at += 1;
    }

    // Every stream needs its anchor slot.
    for i in 0..streams {
        while alloc[i] == 0 {
            let donor = (0..streams)
                .filter(|&j| alloc[j] > 1)
                .max_by(|&a, &b| {
                    alloc[a]
                        .cmp(&alloc[b])
                        .then_with(|| series[a].stream_id.cmp(&series[b].stream_id))
                })
                .expect("total_budget >= streams guarantees a donor");
            alloc[donor] -= 1;
            alloc[i] += 1;
        }
    }

    Ok(series.iter().zip(alloc).map(|(s, a)| (s.stream_id, a)).collect())
}

/// Pearson correlation coefficient of two equal-length series.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<f64, TemporalError> {
    if a.len() != b.len() {
        return Err(TemporalError::LengthMismatch { a: a.len(), b: b.len() });
    }
    if a.len() < 2 {
        return Err(TemporalError::TooFewSamples { len: a.len() });
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(TemporalError::ConstantInput);
    }
    Ok(cov / (va * vb).sqrt())
}

/// One synthetic surveillance-style residual sequence: a handful of small
/// moving objects (the analytics targets) over sporadic large background
/// disturbances, plus the ground-truth change of the important-cell set.
///
/// Returns `len` residual frames (64x64) and the `len - 1` ground-truth
/// change magnitudes. Small objects are 2x2 blobs on an 8-pixel lattice in
/// the upper half of the scene; the background disturbance is a 28x28
/// patch that appears at random in the lower half (think foliage or a
/// lighting change away from the action). The patch moves Φ-area by ~784
/// pixels while the objects move it by 4, so area-based features drown in
/// background noise; inverse-area features track the object count.
pub fn small_blob_sequence(seed: u64, len: usize) -> (Vec<ResidualFrame>, Vec<f64>) {
    const W: usize = 64;
    const LATTICE: usize = 8;
    // Lattice sites in the upper half only; the patch owns the lower half.
    const SITES: usize = (W / LATTICE) * (W / LATTICE) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut sites: BTreeSet<usize> = BTreeSet::new();
    let initial = rng.gen_range(4..=8);
    while sites.len() < initial {
        sites.insert(rng.gen_range(0..SITES));
    }

    let mut frames = Vec::with_capacity(len);
    let mut truth = Vec::with_capacity(len.saturating_sub(1));
    let mut prev_sites = sites.clone();
    for t in 0..len {
        if t > 0 {
            // Count random walk in [2, 12]; rare independent relocations.
            let step = rng.gen_range(-2i32..=2);
            let target = (sites.len() as i32 + step).clamp(2, 12) as usize;
            while sites.len() > target {
                let idx = rng.gen_range(0..sites.len());
                let v = *sites.iter().nth(idx).unwrap();
                sites.remove(&v);
            }
            while sites.len() < target {
                sites.insert(rng.gen_range(0..SITES));
            }
            let moved: Vec<usize> = sites
                .iter()
                .copied()
                .filter(|_| rng.gen_bool(0.05))
                .collect();
            for m in moved {
                sites.remove(&m);
                loop {
                    let cand = rng.gen_range(0..SITES);
                    if sites.insert(cand) {
                        break;
                    }
                }
            }
            truth.push(sites.symmetric_difference(&prev_sites).count() as f64);
            prev_sites = sites.clone();
        }

        let mut mags = vec![0.0f64; W * W];
        for &s in &sites {
            let (sx, sy) = (s % (W / LATTICE), s / (W / LATTICE));
            let (px, py) = (sx * LATTICE + 3, sy * LATTICE + 3);
            for dy in 0..2 {
                for dx in 0..2 {
                    mags[(py + dy) * W + px + dx] = 1.0;
                }
            }
        }
        if rng.gen_bool(0.4) {
            let (px, py) = (rng.gen_range(0..W - 28), rng.gen_range(W / 2..W - 28));
            for dy in 0..28 {
                for dx in 0..28 {
                    mags[(py + dy) * W + px + dx] = 1.0;
                }
            }
        }
        frames.push(ResidualFrame::new(W, W, mags).expect("generator emits valid frames"));
    }
    (frames, truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, fg: &[(usize, usize)]) -> ResidualFrame {
        let mut mags = vec![0.0; w * h];
        for &(x, y) in fg {
            mags[y * w + x] = 1.0;
        }
        ResidualFrame::new(w, h, mags).unwrap()
    }

    #[test]
    fn phi_examples() {
        // Two isolated single pixels.
        let f = frame(8, 8, &[(1, 1), (5, 5)]);
        assert_eq!(phi_inv_area(&f, 0.5).unwrap(), 2.0);
        // One 2x2 block.
        let f = frame(8, 8, &[(2, 2), (3, 2), (2, 3), (3, 3)]);
        assert_eq!(phi_inv_area(&f, 0.5).unwrap(), 0.25);
        // All-zero residual.
        let z = ResidualFrame::new(4, 4, vec![0.0; 16]).unwrap();
        assert_eq!(phi_inv_area(&z, 0.1).unwrap(), 0.0);
        assert_eq!(phi_area(&z, 0.1).unwrap(), 0.0);
        // A 3-px L and a 5-px bar in a 10x10 frame.
        let f = frame(
            10,
            10,
            &[(0, 0), (1, 0), (0, 1), (4, 5), (5, 5), (6, 5), (7, 5), (8, 5)],
        );
        let got = phi_inv_area(&f, 0.5).unwrap();
        assert!((got - (1.0 / 3.0 + 1.0 / 5.0)).abs() < 1e-12);
        assert_eq!(phi_area(&f, 0.5).unwrap(), 8.0);
    }

    #[test]
    fn diagonal_pixels_are_separate_components() {
        let f = frame(4, 4, &[(1, 1), (2, 2)]);
        assert_eq!(phi_inv_area(&f, 0.5).unwrap(), 2.0);
    }

    #[test]
    fn rejects_negative_magnitudes_and_bad_threshold() {
        assert!(ResidualFrame::new(2, 2, vec![0.0, -1.0, 0.0, 0.0]).is_err());
        let f = frame(2, 2, &[]);
        assert!(phi_inv_area(&f, -0.5).is_err());
        assert!(phi_area(&f, f64::NAN).is_err());
    }

    #[test]
    fn build_series_normalizes_change() {
        // Φ-area values {0, 4, 1} via 0, 4 and 1 foreground pixels.
        let frames = vec![
            frame(8, 8, &[]),
            frame(8, 8, &[(0, 0), (2, 0), (4, 0), (6, 0)]),
            frame(8, 8, &[(0, 0)]),
        ];
        let s = build_series(3, &frames, PhiOperator::Area, 0.5).unwrap();
        assert_eq!(s.stream_id, 3);
        assert_eq!(s.values, vec![0.0, 4.0, 1.0]);
        assert_eq!(s.deltas, vec![4.0, -3.0]);
        assert_eq!(s.normalized, vec![4.0 / 7.0, 3.0 / 7.0]);
        assert!((s.total_change() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn build_series_rejects_empty_and_mismatched() {
        assert!(build_series(0, &[], PhiOperator::Area, 0.5).is_err());
        let frames = vec![frame(4, 4, &[]), frame(4, 5, &[])];
        assert!(build_series(0, &frames, PhiOperator::Area, 0.5).is_err());
    }

    fn series_from_normalized(normalized: &[f64]) -> FeatureSeries {
        // Reconstruct monotone Φ values whose |deltas| normalize to the
        // given profile, an independent route into cdf_select.
        let mut values = vec![0.0];
        for &d in normalized {
            values.push(values.last().unwrap() + d);
        }
        FeatureSeries::from_values(0, values).unwrap()
    }

    #[test]
    fn cdf_select_walk_example() {
        let s = series_from_normalized(&[0.1, 0.1, 0.1, 0.1, 0.6]);
        let sel = cdf_select(&s, 3).unwrap();
        // Targets 1/6, 3/6, 5/6 hit frames 2, 5, 5 -> {0, 2, 5}.
        assert_eq!(sel.selected, vec![0, 2, 5]);
        assert_eq!(sel.reuse_map, vec![0, 0, 2, 2, 2, 5]);
    }

    #[test]
    fn cdf_select_uniform_full_budget_takes_every_frame() {
        let s = series_from_normalized(&[1.0 / 29.0; 29]);
        let sel = cdf_select(&s, 30).unwrap();
        assert_eq!(sel.selected, (0..30).collect::<Vec<_>>());
        assert_eq!(sel.reuse_map, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn cdf_select_point_mass_collapses_to_anchor_pair() {
        for j in [1usize, 7, 29] {
            let mut normalized = vec![0.0; 29];
            normalized[j - 1] = 1.0;
            let sel = cdf_select(&series_from_normalized(&normalized), 5).unwrap();
            assert_eq!(sel.selected, vec![0, j], "mass on frame {j}");
        }
    }

    #[test]
    fn cdf_select_respects_budget_even_with_anchor() {
        let s = series_from_normalized(&[1.0 / 29.0; 29]);
        for budget in 1..=30 {
            let sel = cdf_select(&s, budget).unwrap();
            assert!(sel.selected.len() <= budget, "budget {budget}: {:?}", sel.selected);
            assert_eq!(sel.selected[0], 0);
        }
    }

    #[test]
    fn cdf_select_uniform_mass_spaces_hits_evenly() {
        let s = series_from_normalized(&[1.0 / 29.0; 29]);
        for budget in [3usize, 5, 10, 15] {
            let sel = cdf_select(&s, budget).unwrap();
            // The CDF-driven hits (anchor excluded) must be evenly spaced.
            let hits: Vec<usize> = sel.selected.iter().copied().filter(|&f| f != 0).collect();
            let gaps: Vec<usize> = hits.windows(2).map(|w| w[1] - w[0]).collect();
            if gaps.len() > 1 {
                let (lo, hi) = (gaps.iter().min().unwrap(), gaps.iter().max().unwrap());
                assert!(hi - lo <= 1, "budget {budget}: gaps {gaps:?}");
            }
        }
    }

    #[test]
    fn cdf_select_quiet_chunk_keeps_only_anchor() {
        let s = FeatureSeries::from_values(0, vec![2.0; 12]).unwrap();
        let sel = cdf_select(&s, 4).unwrap();
        assert_eq!(sel.selected, vec![0]);
        assert_eq!(sel.reuse_map, vec![0; 12]);
        assert!(cdf_select(&s, 0).is_err());
    }

    #[test]
    fn cdf_select_clamps_oversized_budget() {
        let s = series_from_normalized(&[0.5, 0.5]);
        let sel = cdf_select(&s, 99).unwrap();
        assert!(sel.selected.len() <= 3);
        assert_eq!(sel.selected[0], 0);
    }

    #[test]
    fn reuse_map_tracks_nearest_preceding_selection() {
        // chunk 30, selected {0, 7, 19}: hand-build via a point profile.
        let mut normalized = vec![0.0; 29];
        normalized[6] = 0.5;
        normalized[18] = 0.5;
        let sel = cdf_select(&series_from_normalized(&normalized), 3).unwrap();
        assert_eq!(sel.selected, vec![0, 7, 19]);
        for (f, &r) in sel.reuse_map.iter().enumerate() {
            let want = match f {
                0..=6 => 0,
                7..=18 => 7,
                _ => 19,
            };
            assert_eq!(r, want, "frame {f}");
        }
    }

    fn series_with_change(stream_id: u32, total: f64) -> FeatureSeries {
        FeatureSeries::from_values(stream_id, vec![0.0, total]).unwrap()
    }

    #[test]
    fn budget_allocation_examples() {
        // Proportional: totals {3, 1}, budget 8 -> {6, 2}.
        let s = vec![series_with_change(0, 3.0), series_with_change(1, 1.0)];
        assert_eq!(allocate_frame_budget(&s, 8).unwrap(), vec![(0, 6), (1, 2)]);
        // Remainder tie goes to the lower stream id: {1, 1}, budget 5.
        let s = vec![series_with_change(0, 1.0), series_with_change(1, 1.0)];
        assert_eq!(allocate_frame_budget(&s, 5).unwrap(), vec![(0, 3), (1, 2)]);
        // A dead stream still gets its anchor slot.
        let s = vec![series_with_change(0, 5.0), series_with_change(1, 0.0)];
        assert_eq!(allocate_frame_budget(&s, 6).unwrap(), vec![(0, 5), (1, 1)]);
        // Budget below one per stream is rejected.
        assert!(allocate_frame_budget(&s, 1).is_err());
        let dup = vec![series_with_change(2, 1.0), series_with_change(2, 1.0)];
        assert!(allocate_frame_budget(&dup, 4).is_err());
    }

    #[test]
    fn budget_allocation_sums_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(1..8);
            let series: Vec<FeatureSeries> = (0..n)
                .map(|i| series_with_change(i as u32, rng.gen_range(0.0..10.0)))
                .collect();
            let budget = rng.gen_range(n..n + 40);
            let alloc = allocate_frame_budget(&series, budget).unwrap();
            assert_eq!(alloc.iter().map(|(_, a)| a).sum::<usize>(), budget);
            assert!(alloc.iter().all(|&(_, a)| a >= 1));
        }
    }

    #[test]
    fn correlation_examples() {
        assert!((correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(correlation(&[1.0, 1.0], &[2.0, 3.0]).is_err());
        assert!(correlation(&[1.0], &[2.0]).is_err());
        assert!(correlation(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn inv_area_feature_tracks_small_objects_better() {
        let mut wins = 0;
        let total = 20;
        for seed in 0..total {
            let (frames, truth) = small_blob_sequence(seed, 40);
            let threshold = default_threshold(&frames);
            let inv = build_series(0, &frames, PhiOperator::InvArea, threshold).unwrap();
            let area = build_series(0, &frames, PhiOperator::Area, threshold).unwrap();
            let abs = |d: &[f64]| d.iter().map(|x| x.abs()).collect::<Vec<f64>>();
            let c_inv = correlation(&abs(&inv.deltas), &truth).unwrap_or(0.0);
            let c_area = correlation(&abs(&area.deltas), &truth).unwrap_or(0.0);
            if c_inv > c_area {
                wins += 1;
            }
        }
        assert!(wins * 10 >= total * 9, "only {wins}/{total} sequences favored 1/area");
    }

    #[test]
    fn blob_sequence_is_deterministic() {
        let (a, ta) = small_blob_sequence(12, 10);
        let (b, tb) = small_blob_sequence(12, 10);
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(ta.len(), 9);
    }
}
