//! Block-structured attention masks derived from a token layout.
//!
//! The four mask templates restrict which keys each query may attend to:
//!
//! * `Dense`: base visibility only.
//! * `Document`: image queries cannot reach keys of a *different* image;
//!   text rows and columns are unrestricted.
//! * `Sink`: image keys are visible only at their image's sink positions,
//!   for every query row; text keys are unrestricted.
//! * `DocumentSink`: union of the document and sink allowed sets.
//!
//! Allowed cells are `Base(q, k) AND Rule(q, k)`, plus the main diagonal so
//! every softmax row stays non-empty. Blocks (per query segment, disjoint
//! sorted key intervals) are the source of truth; the boolean matrix is a
//! capped test/debug materialization.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::layout::{sink_region, Segment, SegmentKind, SinkSpec, TokenLayout};

/// The four mask templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskType {
    Dense,
    Sink,
    Document,
    DocumentSink,
}

impl MaskType {
    pub const ALL: [MaskType; 4] =
        [MaskType::Dense, MaskType::Sink, MaskType::Document, MaskType::DocumentSink];

    /// Sparse candidates in the fixed characterization loop order.
    pub const SPARSE: [MaskType; 3] =
        [MaskType::Sink, MaskType::Document, MaskType::DocumentSink];

    /// Stable index into `[f64; 4]` tables (same order as [`Self::ALL`]).
    pub fn index(self) -> usize {
        match self {
            MaskType::Dense => 0,
            MaskType::Sink => 1,
            MaskType::Document => 2,
            MaskType::DocumentSink => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskType::Dense => "dense",
            MaskType::Sink => "sink",
            MaskType::Document => "document",
            MaskType::DocumentSink => "document_sink",
        }
    }
}

impl fmt::Display for MaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense visibility the sparse rules are intersected with.
///
/// `Causal` is the usual lower triangle. `CausalWithBidirectionalImages`
/// additionally lets every token of an image see every other token of the
/// same image (Gemma-style non-causal intra-image attention).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseVisibility {
    Causal,
    CausalWithBidirectionalImages,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskError {
    /// Materialization would exceed the configured cap.
    MaterializeCap { seq_len: usize, cap: usize },
}

impl fmt::Display for MaskError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MaterializeCap { seq_len, cap } => {
                write!(f, "seq_len {seq_len} exceeds materialization cap {cap}")
            }
        }
    }
}

impl core::error::Error for MaskError {}

/// Default cap on `materialize` (S x S booleans).
pub const MATERIALIZE_CAP: usize = 8192;

/// Key interval of one block. `full` marks intervals exempt from the causal
/// clip (intra-image cells under bidirectional base); every other interval
/// is implicitly intersected with `k <= q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyInterval {
    pub start: usize,
    pub end: usize,
    pub full: bool,
}

/// All blocks sharing one query row range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBand {
    pub q_start: usize,
    pub q_end: usize,
    /// Disjoint, sorted by `start`.
    pub keys: Vec<KeyInterval>,
}

/// A block-structured allowed-region description of one mask.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionMask {
    seq_len: usize,
    base: BaseVisibility,
    mask_type: MaskType,
    bands: Vec<QueryBand>,
}

impl AttentionMask {
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn base(&self) -> BaseVisibility {
        self.base
    }

    pub fn mask_type(&self) -> MaskType {
        self.mask_type
    }

    pub fn bands(&self) -> &[QueryBand] {
        &self.bands
    }

    /// The diagonal is always allowed; kept as an accessor so serialized
    /// block lists can state it explicitly.
    pub fn diag_fallback(&self) -> bool {
        true
    }

    fn band_of(&self, q: usize) -> &QueryBand {
        let idx = self.bands.partition_point(|b| b.q_end <= q);
        &self.bands[idx]
    }

    /// Whether query `q` may attend to key `k`.
    pub fn allows(&self, q: usize, k: usize) -> bool {
        if q == k {
            return true;
        }
        let band = self.band_of(q);
        band.keys
            .iter()
            .any(|iv| iv.start <= k && k < iv.end && (iv.full || k <= q))
    }

    /// Effective allowed key intervals of row `q` (causally clipped, with
    /// the diagonal inserted when not already covered), ascending and
    /// disjoint.
    pub fn row_intervals_into(&self, q: usize, out: &mut Vec<(usize, usize)>) {
        out.clear();
        let band = self.band_of(q);
        let mut diag_covered = false;
        for iv in &band.keys {
            let end = if iv.full { iv.end } else { iv.end.min(q + 1) };
            if iv.start >= end {
                continue;
            }
            if iv.start <= q && q < end {
                diag_covered = true;
            }
            out.push((iv.start, end));
        }
        if !diag_covered {
            let pos = out.partition_point(|&(s, _)| s < q);
            out.insert(pos, (q, q + 1));
        }
    }

    pub fn row_intervals(&self, q: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.row_intervals_into(q, &mut out);
        out
    }

    /// Boolean `S x S` matrix, row-major, `matrix[q * S + k] = allows(q, k)`.
    pub fn materialize(&self, cap: usize) -> Result<Vec<bool>, MaskError> {
        let s = self.seq_len;
        if s > cap {
            return Err(MaskError::MaterializeCap { seq_len: s, cap });
        }
        let mut matrix = alloc::vec![false; s * s];
        let mut ivs = Vec::new();
        for q in 0..s {
            self.row_intervals_into(q, &mut ivs);
            let row = &mut matrix[q * s..(q + 1) * s];
            for &(a, b) in &ivs {
                row[a..b].iter_mut().for_each(|c| *c = true);
            }
        }
        Ok(matrix)
    }

    /// Exact number of allowed cells, computed from block geometry without
    /// materialization.
    pub fn allowed_cell_count(&self) -> u128 {
        let mut total: u128 = 0;
        for band in &self.bands {
            let rows = (band.q_end - band.q_start) as u128;
            let mut diag_covered: u128 = 0;
            for iv in &band.keys {
                total += if iv.full {
                    rows * (iv.end - iv.start) as u128
                } else {
                    causal_cells(band.q_start, band.q_end, iv.start, iv.end)
                };
                // Diagonal cells (q, q) with q in both the band and the
                // interval are always within the causal clip.
                let lo = band.q_start.max(iv.start);
                let hi = band.q_end.min(iv.end);
                if lo < hi {
                    diag_covered += (hi - lo) as u128;
                }
            }
            total += rows - diag_covered;
        }
        total
    }
}

/// Number of cells `(q, k)` with `q0 <= q < q1`, `k0 <= k < k1`, `k <= q`.
fn causal_cells(q0: usize, q1: usize, k0: usize, k1: usize) -> u128 {
    if k0 >= k1 || q0 >= q1 {
        return 0;
    }
    let qa = q0.max(k0); // first row with any visible cell
    if qa >= q1 {
        return 0;
    }
    // Rows in [qa, ramp_end) see a growing prefix of the interval; rows
    // from ramp_end on see all of it.
    let ramp_end = q1.min(k1 - 1).max(qa);
    let mut count: u128 = 0;
    if ramp_end > qa {
        let n = (ramp_end - qa) as u128;
        let first = (qa + 1 - k0) as u128;
        let last = (ramp_end - k0) as u128;
        count += n * (first + last) / 2;
    }
    if q1 > ramp_end {
        count += (q1 - ramp_end) as u128 * (k1 - k0) as u128;
    }
    count
}

/// Build the block-structured mask for `mask` over `layout`.
///
/// Total on valid inputs: a sink spec that yields no positions for some
/// image simply produces no blocks there (rows stay covered through the
/// diagonal fallback).
pub fn build_mask(
    layout: &TokenLayout,
    mask: MaskType,
    sinks: &SinkSpec,
    base: BaseVisibility,
) -> AttentionMask {
    // Segment list annotated with image ordinals.
    let mut image_ord = 0usize;
    let segs: Vec<(Segment, Option<usize>)> = layout
        .segments()
        .iter()
        .map(|&s| {
            let ord = if s.kind == SegmentKind::Image {
                image_ord += 1;
                Some(image_ord - 1)
            } else {
                None
            };
            (s, ord)
        })
        .collect();

    let sink_intervals: Vec<Vec<(usize, usize)>> = layout
        .images()
        .map(|img| to_intervals(&sink_region(&img, sinks)))
        .collect();

    let bidir = base == BaseVisibility::CausalWithBidirectionalImages;
    let mut bands = Vec::with_capacity(segs.len());
    for &(qs, q_img) in &segs {
        let mut keys: Vec<KeyInterval> = Vec::new();
        for &(ks, k_img) in &segs {
            // Intra-image blocks escape the causal clip under the
            // bidirectional base.
            let full = bidir && q_img.is_some() && q_img == k_img;
            let seg_interval = KeyInterval { start: ks.start, end: ks.end, full };
            match (mask, k_img) {
                (_, None) => keys.push(seg_interval), // text keys always allowed
                (MaskType::Dense, Some(_)) => keys.push(seg_interval),
                (MaskType::Document, Some(ki)) => {
                    if q_img.is_none() || q_img == Some(ki) {
                        keys.push(seg_interval);
                    }
                }
                (MaskType::Sink, Some(ki)) => {
                    for &(a, b) in &sink_intervals[ki] {
                        keys.push(KeyInterval { start: a, end: b, full });
                    }
                }
                (MaskType::DocumentSink, Some(ki)) => {
                    if q_img.is_none() || q_img == Some(ki) {
                        keys.push(seg_interval);
                    } else {
                        for &(a, b) in &sink_intervals[ki] {
                            keys.push(KeyInterval { start: a, end: b, full });
                        }
                    }
                }
            }
        }
        keys.sort_unstable_by_key(|iv| iv.start);
        merge_contiguous(&mut keys);
        bands.push(QueryBand { q_start: qs.start, q_end: qs.end, keys });
    }

    AttentionMask { seq_len: layout.seq_len(), base, mask_type: mask, bands }
}

/// Compress a sorted index set into maximal half-open intervals.
fn to_intervals(indices: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &i in indices {
        match out.last_mut() {
            Some((_, end)) if *end == i => *end = i + 1,
            _ => out.push((i, i + 1)),
        }
    }
    out
}

/// Merge touching intervals with the same clip flag; input sorted by start.
fn merge_contiguous(keys: &mut Vec<KeyInterval>) {
    let mut merged: Vec<KeyInterval> = Vec::with_capacity(keys.len());
    for iv in keys.drain(..) {
        match merged.last_mut() {
            Some(last) if last.end == iv.start && last.full == iv.full => last.end = iv.end,
            _ => merged.push(iv),
        }
    }
    *keys = merged;
}

pub fn popcount(matrix: &[bool]) -> u128 {
    matrix.iter().filter(|&&b| b).count() as u128
}
