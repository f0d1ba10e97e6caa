//! Theoretical FLOPs accounting for the sparse masks.
//!
//! Two routes are kept deliberately separate: [`estimate_masked_areas`] is
//! the closed-form masked-area estimator over continuous image blocks, and
//! [`exact_masked_fraction`] counts discrete allowed cells through the mask
//! geometry. The estimator is the deployable account; the counter is the
//! truth it is checked against. Known estimator approximations (sink
//! masking from text query rows is not counted, intra-image sink area uses
//! `0.45 * len^2`) are surfaced by reports, not patched here.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregate::MaskDistribution;
use crate::layout::{SinkSpec, TokenLayout};
use crate::mask::{build_mask, BaseVisibility, MaskType};

/// Masked attention-cell areas per sparse mask, in cell units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskedAreas {
    pub sink: f64,
    pub document: f64,
    pub document_sink: f64,
    /// Dense attention area the reductions are normalized by.
    pub original: f64,
}

impl MaskedAreas {
    pub fn reduction(&self, mask: MaskType) -> f64 {
        let masked = match mask {
            MaskType::Dense => 0.0,
            MaskType::Sink => self.sink,
            MaskType::Document => self.document,
            MaskType::DocumentSink => self.document_sink,
        };
        masked / self.original
    }

    pub fn reductions(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for mask in MaskType::ALL {
            out[mask.index()] = self.reduction(mask);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlopsError {
    /// Head shares do not sum to 1.
    NotADistribution { sum: f64 },
}

impl fmt::Display for FlopsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotADistribution { sum } => {
                write!(f, "mask shares sum to {sum}, expected 1")
            }
        }
    }
}

impl core::error::Error for FlopsError {}

/// Closed-form masked-area estimator for causal attention.
///
/// Runs the image-pair double loop verbatim: the same-image term adds
/// `0.5 * 0.9 * len^2` to sink, cross-image pairs add `0.9 * len_a * len_b`
/// to both sink and document-sink, a second loop adds the full
/// `len_a * len_b` cross blocks to document, and the last image's
/// same-image sink term is added after the loop. No images means every
/// area is zero. `original = 0.5 * S^2`.
pub fn estimate_masked_areas(layout: &TokenLayout) -> MaskedAreas {
    let s = layout.seq_len() as f64;
    let lens: Vec<f64> = layout.images().map(|img| img.len() as f64).collect();
    let mut sink = 0.0;
    let mut document = 0.0;
    let mut document_sink = 0.0;
    if !lens.is_empty() {
        let n = lens.len();
        for start in 0..n.saturating_sub(1) {
            for end in start..n {
                if end == start {
                    sink += 0.5 * 0.9 * lens[start] * lens[start];
                } else {
                    document_sink += 0.9 * lens[start] * lens[end];
                    sink += 0.9 * lens[start] * lens[end];
                }
            }
            for end in start + 1..n {
                document += lens[start] * lens[end];
            }
        }
        sink += 0.5 * 0.9 * lens[n - 1] * lens[n - 1];
    }
    MaskedAreas { sink, document, document_sink, original: 0.5 * s * s }
}

/// The estimator with the dense area adjusted for a bidirectional-image
/// base: `0.5 * S^2` plus the upper-triangular intra-image cells. The
/// masked areas themselves are unchanged; this extension only widens the
/// denominator, since the closed form covers causal masks.
pub fn estimate_masked_areas_with_base(layout: &TokenLayout, base: BaseVisibility) -> MaskedAreas {
    let mut areas = estimate_masked_areas(layout);
    if base == BaseVisibility::CausalWithBidirectionalImages {
        let extra: f64 = layout
            .images()
            .map(|img| 0.5 * (img.len() as f64) * (img.len() as f64))
            .sum();
        areas.original += extra;
    }
    areas
}

/// Exact masked fraction from discrete cell counts:
/// `1 - allowed(mask) / allowed(dense)`.
pub fn exact_masked_fraction(
    layout: &TokenLayout,
    mask: MaskType,
    sinks: &SinkSpec,
    base: BaseVisibility,
) -> f64 {
    let allowed = build_mask(layout, mask, sinks, base).allowed_cell_count();
    let dense = build_mask(layout, MaskType::Dense, sinks, base).allowed_cell_count();
    1.0 - allowed as f64 / dense as f64
}

/// Which route computes the per-mask reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopsEstimator {
    ClosedForm,
    ExactCount,
}

/// Per-mask FLOPs reductions of one layout, indexed by [`MaskType::index`].
pub fn mask_reductions(
    layout: &TokenLayout,
    sinks: &SinkSpec,
    base: BaseVisibility,
    estimator: FlopsEstimator,
) -> [f64; 4] {
    match estimator {
        FlopsEstimator::ClosedForm => estimate_masked_areas_with_base(layout, base).reductions(),
        FlopsEstimator::ExactCount => {
            let mut out = [0.0; 4];
            for mask in MaskType::SPARSE {
                out[mask.index()] = exact_masked_fraction(layout, mask, sinks, base);
            }
            out
        }
    }
}

/// Model-level reduction: per-mask reductions weighted by the share of
/// heads assigned each mask, dense contributing zero.
pub fn model_reduction(
    shares: &MaskDistribution,
    layout: &TokenLayout,
    sinks: &SinkSpec,
    base: BaseVisibility,
    estimator: FlopsEstimator,
) -> Result<f64, FlopsError> {
    let sum = shares.sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(FlopsError::NotADistribution { sum });
    }
    let reductions = mask_reductions(layout, sinks, base, estimator);
    Ok(MaskType::ALL
        .iter()
        .map(|&m| shares.get(m) * reductions[m.index()])
        .sum())
}

/// One step of an empirical CDF over per-prompt reductions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub reduction: f64,
    pub cum_fraction: f64,
}

/// Sorted reduction values with cumulative fractions.
pub fn cdf_series(values: &[f64]) -> Vec<CdfPoint> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("reductions are finite"));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &reduction)| CdfPoint { reduction, cum_fraction: (i + 1) as f64 / n })
        .collect()
}

/// Per-prompt model reductions over a layout set, then their CDF.
pub fn reduction_cdf(
    layouts: &[TokenLayout],
    shares: &MaskDistribution,
    sinks: &SinkSpec,
    base: BaseVisibility,
    estimator: FlopsEstimator,
) -> Result<Vec<CdfPoint>, FlopsError> {
    let mut values = Vec::with_capacity(layouts.len());
    for layout in layouts {
        values.push(model_reduction(shares, layout, sinks, base, estimator)?);
    }
    Ok(cdf_series(&values))
}
