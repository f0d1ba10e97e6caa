//! Interleaved text/image token structure of a prompt.
//!
//! A [`TokenLayout`] is produced by scanning a token-id sequence for the
//! model's `<image_start>`/`<image_end>` markers. Marker tokens count as part
//! of the image segment they delimit: the sinks the sparse masks rely on form
//! on those boundary tokens. Everything downstream (mask generation, FLOPs
//! accounting, synthesis) consumes only the layout, never raw token ids.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Whether a run of tokens is plain text or one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Text,
    Image,
}

/// Half-open token range `[start, end)` of a single kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn text(start: usize, end: usize) -> Self {
        Segment { kind: SegmentKind::Text, start, end }
    }

    pub fn image(start: usize, end: usize) -> Self {
        Segment { kind: SegmentKind::Image, start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn contains(&self, token: usize) -> bool {
        self.start <= token && token < self.end
    }
}

/// Where the attention sinks of an image sit.
///
/// `Prefix` covers Qwen-style models whose sinks form at the start of every
/// image; `FixedOffsets` covers Gemma-style models with uniform image length
/// and sinks at fixed image-relative positions (see [`crate::sinkfind`] for
/// their discovery).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SinkSpec {
    Prefix { fraction: f64 },
    FixedOffsets { offsets: Vec<usize> },
}

impl SinkSpec {
    /// The paper-default sink size: 10% of each image.
    pub fn default_prefix() -> Self {
        SinkSpec::Prefix { fraction: 0.1 }
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        match self {
            SinkSpec::Prefix { fraction } => {
                if !(*fraction > 0.0 && *fraction <= 1.0) {
                    return Err(LayoutError::BadSinkFraction { fraction: *fraction });
                }
            }
            SinkSpec::FixedOffsets { offsets } => {
                if offsets.is_empty() {
                    return Err(LayoutError::EmptySinkOffsets);
                }
            }
        }
        Ok(())
    }
}

/// Errors from layout parsing and validation.
#[derive(Debug, Clone, PartialEq)]
pub enum LayoutError {
    /// `parse_layout` was handed an empty token sequence.
    EmptyTokens,
    /// An `<image_start>` marker opened inside an already-open image.
    NestedImageStart { pos: usize },
    /// An `<image_end>` marker with no matching open `<image_start>`.
    UnmatchedImageEnd { pos: usize },
    /// An `<image_start>` marker that never closes.
    UnmatchedImageStart { pos: usize },
    /// Segment list fails an invariant (coverage, ordering, merging).
    InvalidSegments { detail: String },
    /// Prefix sink fraction outside (0, 1].
    BadSinkFraction { fraction: f64 },
    /// FixedOffsets with no offsets at all.
    EmptySinkOffsets,
}

impl fmt::Display for LayoutError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyTokens => write!(f, "token sequence is empty"),
            Self::NestedImageStart { pos } => {
                write!(f, "nested image start marker at token {pos}")
            }
            Self::UnmatchedImageEnd { pos } => {
                write!(f, "image end marker at token {pos} without a matching start")
            }
            Self::UnmatchedImageStart { pos } => {
                write!(f, "image start marker at token {pos} is never closed")
            }
            Self::InvalidSegments { detail } => write!(f, "invalid segment list: {detail}"),
            Self::BadSinkFraction { fraction } => {
                write!(f, "sink prefix fraction {fraction} outside (0, 1]")
            }
            Self::EmptySinkOffsets => write!(f, "fixed-offset sink spec has no offsets"),
        }
    }
}

impl core::error::Error for LayoutError {}

/// Ordered, non-overlapping text/image segments covering `[0, seq_len)`.
///
/// Canonical form: adjacent text segments are merged; image segments are
/// never merged because each one is a distinct document for the document
/// mask, even when two images are back to back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLayout")]
pub struct TokenLayout {
    seq_len: usize,
    segments: Vec<Segment>,
}

/// Unvalidated mirror of the JSON schema; `TryFrom` performs validation.
#[derive(Deserialize)]
struct RawLayout {
    seq_len: usize,
    segments: Vec<Segment>,
}

impl TryFrom<RawLayout> for TokenLayout {
    type Error = LayoutError;

    fn try_from(raw: RawLayout) -> Result<Self, LayoutError> {
        TokenLayout::new(raw.seq_len, raw.segments)
    }
}

impl TokenLayout {
    /// Validates segment coverage and canonical form.
    pub fn new(seq_len: usize, segments: Vec<Segment>) -> Result<Self, LayoutError> {
        if seq_len == 0 || segments.is_empty() {
            return Err(LayoutError::InvalidSegments {
                detail: String::from("layout must cover at least one token"),
            });
        }
        let mut cursor = 0usize;
        for (i, seg) in segments.iter().enumerate() {
            if seg.start >= seg.end {
                return Err(LayoutError::InvalidSegments {
                    detail: alloc::format!("segment {i} is empty or reversed"),
                });
            }
            if seg.start != cursor {
                return Err(LayoutError::InvalidSegments {
                    detail: alloc::format!(
                        "segment {i} starts at {} but previous coverage ends at {cursor}",
                        seg.start
                    ),
                });
            }
            if i > 0
                && seg.kind == SegmentKind::Text
                && segments[i - 1].kind == SegmentKind::Text
            {
                return Err(LayoutError::InvalidSegments {
                    detail: alloc::format!("adjacent text segments {} and {i} are unmerged", i - 1),
                });
            }
            cursor = seg.end;
        }
        if cursor != seq_len {
            return Err(LayoutError::InvalidSegments {
                detail: alloc::format!("segments cover [0, {cursor}) but seq_len is {seq_len}"),
            });
        }
        Ok(TokenLayout { seq_len, segments })
    }

    /// A layout with a single text segment and no images.
    pub fn all_text(seq_len: usize) -> Result<Self, LayoutError> {
        TokenLayout::new(seq_len, alloc::vec![Segment::text(0, seq_len)])
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Image segments in prompt order.
    pub fn images(&self) -> impl Iterator<Item = Segment> + '_ {
        self.segments.iter().copied().filter(|s| s.kind == SegmentKind::Image)
    }

    pub fn image_count(&self) -> usize {
        self.images().count()
    }

    pub fn total_image_tokens(&self) -> usize {
        self.images().map(|s| s.len()).sum()
    }
}

/// Scan a token sequence for image markers and build the canonical layout.
///
/// Each matched start/end pair becomes one image segment spanning the marker
/// tokens themselves plus everything between; all other tokens are text.
/// If `image_start_id == image_end_id`, occurrences alternate open/close.
pub fn parse_layout(
    token_ids: &[u32],
    image_start_id: u32,
    image_end_id: u32,
) -> Result<TokenLayout, LayoutError> {
    if token_ids.is_empty() {
        return Err(LayoutError::EmptyTokens);
    }
    let toggling = image_start_id == image_end_id;
    let mut segments: Vec<Segment> = Vec::new();
    let mut open: Option<usize> = None;
    let mut text_start = 0usize;

    let push_text = |segments: &mut Vec<Segment>, from: usize, to: usize| {
        if from < to {
            segments.push(Segment::text(from, to));
        }
    };

    for (pos, &id) in token_ids.iter().enumerate() {
        let is_start = id == image_start_id && (!toggling || open.is_none());
        let is_end = id == image_end_id && (!toggling || open.is_some());
        if is_start {
            if open.is_some() {
                return Err(LayoutError::NestedImageStart { pos });
            }
            push_text(&mut segments, text_start, pos);
            open = Some(pos);
        } else if is_end {
            let start = open.take().ok_or(LayoutError::UnmatchedImageEnd { pos })?;
            segments.push(Segment::image(start, pos + 1));
            text_start = pos + 1;
        }
    }
    if let Some(pos) = open {
        return Err(LayoutError::UnmatchedImageStart { pos });
    }
    push_text(&mut segments, text_start, token_ids.len());
    TokenLayout::new(token_ids.len(), segments)
}

/// Ceiling of `fraction * len` with a relative snap so that decimal
/// fractions of round lengths (0.1 of 100) do not tick up from binary
/// float error.
pub(crate) fn ceil_fraction(fraction: f64, len: usize) -> usize {
    let t = fraction * len as f64;
    libm::ceil(t - t.abs() * 1e-12) as usize
}

/// Absolute token indices of the sink region of one image.
///
/// `Prefix` takes the first `max(1, ceil(fraction * len))` tokens of the
/// segment. `FixedOffsets` keeps `image.start + o` for every offset that
/// fits inside the image; the result may be empty when none fit (the mask
/// builder's diagonal fallback keeps such rows well-defined).
pub fn sink_region(image: &Segment, spec: &SinkSpec) -> Vec<usize> {
    debug_assert_eq!(image.kind, SegmentKind::Image);
    match spec {
        SinkSpec::Prefix { fraction } => {
            let size = ceil_fraction(*fraction, image.len()).max(1).min(image.len());
            (image.start..image.start + size).collect()
        }
        SinkSpec::FixedOffsets { offsets } => {
            let mut out: Vec<usize> = offsets
                .iter()
                .filter(|&&o| o < image.len())
                .map(|&o| image.start + o)
                .collect();
            out.sort_unstable();
            out.dedup();
            out
        }
    }
}
