//! Discovery of fixed sink offsets from attention-score statistics.
//!
//! For models whose images all tokenize to the same length, sinks sit at
//! fixed image-relative positions. Per capture, head, and image, the
//! columns receiving the most attention mass from query rows *outside* the
//! image each earn one histogram vote; the highest-voted offsets win. Votes
//! rather than raw mass sums implement frequency-based selection, and ties
//! always break toward the lower offset so results are deterministic.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::attention::{masked_scores, ScoreMatrix};
use crate::capture::PromptCapture;
use crate::layout::{ceil_fraction, Segment, SinkSpec, TokenLayout};
use crate::mask::{build_mask, BaseVisibility, MaskType};

#[derive(Debug, Clone, PartialEq)]
pub enum SinkFindError {
    ImageOutOfRange { image_end: usize, seq_len: usize },
    /// Fixed-offset discovery requires a uniform image length.
    MixedImageLengths { expected: usize, found: usize, prompt_id: alloc::string::String },
    BadTopFraction { top_fraction: f64 },
    Attention { detail: alloc::string::String },
    /// Accumulators built with different parameters cannot merge.
    MergeMismatch,
}

impl fmt::Display for SinkFindError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ImageOutOfRange { image_end, seq_len } => {
                write!(f, "image ends at {image_end} beyond sequence length {seq_len}")
            }
            Self::MixedImageLengths { expected, found, prompt_id } => write!(
                f,
                "prompt {prompt_id} has an image of length {found}, expected uniform {expected}; \
                 use prefix sinks for variable-length images"
            ),
            Self::BadTopFraction { top_fraction } => {
                write!(f, "top_fraction {top_fraction} outside (0, 1]")
            }
            Self::Attention { detail } => write!(f, "attention scores failed: {detail}"),
            Self::MergeMismatch => write!(f, "accumulator parameters differ"),
        }
    }
}

impl core::error::Error for SinkFindError {}

/// Mean attention mass each image-relative offset receives from query rows
/// outside the image. Empty when the image has no external query rows.
pub fn column_mass(
    attn: &ScoreMatrix,
    layout: &TokenLayout,
    image: &Segment,
) -> Result<Vec<f64>, SinkFindError> {
    let s = layout.seq_len();
    if image.end > s || attn.seq_len() != s {
        return Err(SinkFindError::ImageOutOfRange {
            image_end: image.end.max(attn.seq_len()),
            seq_len: s,
        });
    }
    let outside: Vec<usize> = (0..s).filter(|&q| !image.contains(q)).collect();
    if outside.is_empty() {
        return Ok(Vec::new());
    }
    let mut profile = alloc::vec![0.0f64; image.len()];
    for &q in &outside {
        let row = attn.row(q);
        for (o, acc) in profile.iter_mut().enumerate() {
            *acc += row[image.start + o] as f64;
        }
    }
    let n = outside.len() as f64;
    profile.iter_mut().for_each(|m| *m /= n);
    Ok(profile)
}

/// Frequency histogram of top-mass sink positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkHistogram {
    pub image_len: usize,
    /// Votes per image-relative offset; offsets with zero votes omitted.
    pub votes: BTreeMap<usize, u64>,
    /// Profiles that contributed votes (per head per image per prompt).
    pub samples: u64,
    /// Heads scanned across all prompts.
    pub heads_considered: u64,
}

/// Streaming vote accumulator over a capture set.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkAccumulator {
    image_len: usize,
    top_k: usize,
    top_fraction: f64,
    base: BaseVisibility,
    votes: Vec<u64>,
    samples: u64,
    heads_considered: u64,
}

impl SinkAccumulator {
    pub fn new(
        uniform_image_len: usize,
        top_fraction: f64,
        base: BaseVisibility,
    ) -> Result<Self, SinkFindError> {
        if !(top_fraction > 0.0 && top_fraction <= 1.0) {
            return Err(SinkFindError::BadTopFraction { top_fraction });
        }
        let top_k = ceil_fraction(top_fraction, uniform_image_len).max(1).min(uniform_image_len);
        Ok(SinkAccumulator {
            image_len: uniform_image_len,
            top_k,
            top_fraction,
            base,
            votes: alloc::vec![0; uniform_image_len],
            samples: 0,
            heads_considered: 0,
        })
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    /// Scan every head of one prompt capture and vote its top-mass offsets.
    pub fn add_prompt(&mut self, capture: &PromptCapture) -> Result<(), SinkFindError> {
        for img in capture.layout.images() {
            if img.len() != self.image_len {
                return Err(SinkFindError::MixedImageLengths {
                    expected: self.image_len,
                    found: img.len(),
                    prompt_id: capture.prompt_id.clone(),
                });
            }
        }
        // The dense score matrix under the model's base visibility; the
        // sink spec is irrelevant for a dense mask.
        let dense = build_mask(
            &capture.layout,
            MaskType::Dense,
            &SinkSpec::default_prefix(),
            self.base,
        );
        for layer in 0..capture.layers() {
            for head in 0..capture.heads() {
                let (q, k, _) = capture.head(layer, head);
                let scores = masked_scores(q, k, &dense).map_err(|e| SinkFindError::Attention {
                    detail: alloc::format!("{e} (layer {layer}, head {head})"),
                })?;
                self.heads_considered += 1;
                for img in capture.layout.images() {
                    let profile = column_mass(&scores, &capture.layout, &img)?;
                    if profile.is_empty() {
                        continue; // image spans the whole sequence
                    }
                    for &offset in top_offsets(&profile, self.top_k).iter() {
                        self.votes[offset] += 1;
                    }
                    self.samples += 1;
                }
            }
        }
        Ok(())
    }

    /// Commutative merge of two accumulators over disjoint capture subsets.
    pub fn merge(&mut self, other: &SinkAccumulator) -> Result<(), SinkFindError> {
        if self.image_len != other.image_len
            || self.top_k != other.top_k
            || self.base != other.base
        {
            return Err(SinkFindError::MergeMismatch);
        }
        for (a, b) in self.votes.iter_mut().zip(&other.votes) {
            *a += b;
        }
        self.samples += other.samples;
        self.heads_considered += other.heads_considered;
        Ok(())
    }

    pub fn histogram(&self) -> SinkHistogram {
        SinkHistogram {
            image_len: self.image_len,
            votes: self
                .votes
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0)
                .map(|(o, &v)| (o, v))
                .collect(),
            samples: self.samples,
            heads_considered: self.heads_considered,
        }
    }

    /// The `top_k` offsets with the most votes, ascending.
    pub fn finish(&self) -> SinkDiscovery {
        let mut ranked: Vec<usize> = (0..self.image_len).collect();
        // Highest votes first; equal votes resolve to the lower offset.
        ranked.sort_by(|&a, &b| self.votes[b].cmp(&self.votes[a]).then(a.cmp(&b)));
        let mut offsets: Vec<usize> = ranked.into_iter().take(self.top_k).collect();
        offsets.sort_unstable();
        SinkDiscovery {
            uniform_image_len: self.image_len,
            top_fraction: self.top_fraction,
            offsets,
            histogram: self.histogram(),
        }
    }
}

/// Discovery result, consumable as `SinkSpec::FixedOffsets`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkDiscovery {
    pub uniform_image_len: usize,
    pub top_fraction: f64,
    pub offsets: Vec<usize>,
    pub histogram: SinkHistogram,
}

impl SinkDiscovery {
    pub fn as_sink_spec(&self) -> SinkSpec {
        SinkSpec::FixedOffsets { offsets: self.offsets.clone() }
    }
}

/// Indices of the `k` largest profile entries, ties toward lower offsets.
fn top_offsets(profile: &[f64], k: usize) -> Vec<usize> {
    let mut ranked: Vec<usize> = (0..profile.len()).collect();
    ranked.sort_by(|&a, &b| {
        profile[b].partial_cmp(&profile[a]).expect("masses are finite").then(a.cmp(&b))
    });
    ranked.truncate(k);
    ranked
}

/// One-shot discovery over an in-memory capture set.
pub fn find_sink_offsets(
    captures: &[PromptCapture],
    top_fraction: f64,
    uniform_image_len: usize,
    base: BaseVisibility,
) -> Result<SinkDiscovery, SinkFindError> {
    let mut acc = SinkAccumulator::new(uniform_image_len, top_fraction, base)?;
    for capture in captures {
        acc.add_prompt(capture)?;
    }
    Ok(acc.finish())
}
