//! Naive reference implementations used as independent test oracles.
//!
//! Everything here is written directly from the mask rule definitions as
//! per-cell predicates and plain dense loops, deliberately sharing no code
//! with the block-structured mask builder or the interval-walking attention
//! path it checks. Index loops are kept as-is; the point is to mirror the
//! definitions, not to be idiomatic or fast.

#![allow(clippy::needless_range_loop)]

use alloc::vec::Vec;

use crate::attention::{AttentionOutput, HeadTensor};
use crate::layout::{sink_region, SegmentKind, SinkSpec, TokenLayout};
use crate::mask::{BaseVisibility, MaskType};

/// Image ordinal of each token, or `None` for text.
fn image_index_per_token(layout: &TokenLayout) -> Vec<Option<usize>> {
    let mut idx = alloc::vec![None; layout.seq_len()];
    let mut ord = 0;
    for seg in layout.segments() {
        if seg.kind == SegmentKind::Image {
            for slot in idx.iter_mut().take(seg.end).skip(seg.start) {
                *slot = Some(ord);
            }
            ord += 1;
        }
    }
    idx
}

fn sink_flags(layout: &TokenLayout, sinks: &SinkSpec) -> Vec<bool> {
    let mut flags = alloc::vec![false; layout.seq_len()];
    for img in layout.images() {
        for pos in sink_region(&img, sinks) {
            flags[pos] = true;
        }
    }
    flags
}

/// The mask rule as a literal per-cell predicate.
pub fn rule_allows(
    img_of: &[Option<usize>],
    sink_at: &[bool],
    mask: MaskType,
    base: BaseVisibility,
    q: usize,
    k: usize,
) -> bool {
    if q == k {
        return true;
    }
    let base_ok = match base {
        BaseVisibility::Causal => k <= q,
        BaseVisibility::CausalWithBidirectionalImages => {
            k <= q || (img_of[q].is_some() && img_of[q] == img_of[k])
        }
    };
    if !base_ok {
        return false;
    }
    match mask {
        MaskType::Dense => true,
        MaskType::Document => !(img_of[q].is_some() && img_of[k].is_some() && img_of[q] != img_of[k]),
        MaskType::Sink => img_of[k].is_none() || sink_at[k],
        MaskType::DocumentSink => {
            !(img_of[q].is_some() && img_of[k].is_some() && img_of[q] != img_of[k])
                || img_of[k].is_none()
                || sink_at[k]
        }
    }
}

/// Row-major `S x S` boolean matrix straight from the rule predicate.
pub fn rule_mask_matrix(
    layout: &TokenLayout,
    mask: MaskType,
    sinks: &SinkSpec,
    base: BaseVisibility,
) -> Vec<bool> {
    let s = layout.seq_len();
    let img_of = image_index_per_token(layout);
    let sink_at = sink_flags(layout, sinks);
    let mut out = alloc::vec![false; s * s];
    for q in 0..s {
        for k in 0..s {
            out[q * s + k] = rule_allows(&img_of, &sink_at, mask, base, q, k);
        }
    }
    out
}

/// Dense-loop attention with explicit negative-infinity masking: scores for
/// every key are computed, disallowed cells are set to `-inf`, and the
/// softmax subtracts the row maximum.
pub fn naive_attention(
    q: &HeadTensor,
    k: &HeadTensor,
    v: &HeadTensor,
    layout: &TokenLayout,
    mask: MaskType,
    sinks: &SinkSpec,
    base: BaseVisibility,
) -> AttentionOutput {
    let s = q.rows();
    let d = q.cols();
    let dv = v.cols();
    assert_eq!(s, layout.seq_len());
    let img_of = image_index_per_token(layout);
    let sink_at = sink_flags(layout, sinks);
    let scale = 1.0 / (d as f64).sqrt();

    let mut out = alloc::vec![0.0f32; s * dv];
    let mut logits = alloc::vec![0.0f64; s];
    for qi in 0..s {
        let qrow = q.row(qi);
        for ki in 0..s {
            if rule_allows(&img_of, &sink_at, mask, base, qi, ki) {
                let mut dot = 0.0f32;
                let krow = k.row(ki);
                for j in 0..d {
                    dot += qrow[j] * krow[j];
                }
                logits[ki] = dot as f64 * scale;
            } else {
                logits[ki] = f64::NEG_INFINITY;
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0f64;
        let mut acc = alloc::vec![0.0f64; dv];
        for ki in 0..s {
            let w = (logits[ki] - max).exp();
            denom += w;
            let vrow = v.row(ki);
            for (a, &vv) in acc.iter_mut().zip(vrow) {
                *a += w * vv as f64;
            }
        }
        for (o, a) in out[qi * dv..(qi + 1) * dv].iter_mut().zip(acc) {
            *o = (a / denom) as f32;
        }
    }
    AttentionOutput::from_raw(s, dv, out)
}
