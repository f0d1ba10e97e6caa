//! Prompt-level characterization: pick the cheapest sparse mask per head
//! whose NMSE against dense attention stays below the threshold.
//!
//! Candidates are tried in order and the first one below `alpha` wins; a
//! head where none qualifies stays dense. Two candidate orders are
//! provided: the fixed `[Sink, Document, DocumentSink]` loop, and a
//! FLOPs-ascending order that tries the biggest estimated saver first (the
//! two disagree when images are numerous, because sink's cross-image cost
//! grows quadratically in image count while document's grows linearly).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::attention::{masked_attention, nmse, AttentionError, HeadTensor};
use crate::capture::PromptCapture;
use crate::flops::estimate_masked_areas;
use crate::layout::{SinkSpec, TokenLayout};
use crate::mask::{build_mask, BaseVisibility, MaskType};

/// Candidate iteration order for the characterization loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    /// Exactly `[Sink, Document, DocumentSink]`.
    PaperFixed,
    /// Highest estimated FLOPs saving first; ties fall back to the fixed
    /// order and document-sink always stays last (it is the superset).
    FlopsAscending,
}

/// Parameters of the per-head characterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizerConfig {
    /// NMSE selection threshold.
    pub alpha: f64,
    pub order_policy: OrderPolicy,
    pub sinks: SinkSpec,
    pub base: BaseVisibility,
    /// Keep computing NMSE for candidates after the early exit.
    #[serde(default)]
    pub full_diagnostics: bool,
}

impl Default for CharacterizerConfig {
    fn default() -> Self {
        CharacterizerConfig {
            alpha: 0.1,
            order_policy: OrderPolicy::PaperFixed,
            sinks: SinkSpec::default_prefix(),
            base: BaseVisibility::Causal,
            full_diagnostics: false,
        }
    }
}

impl CharacterizerConfig {
    pub fn validate(&self) -> Result<(), CharacterizeError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CharacterizeError::BadAlpha { alpha: self.alpha });
        }
        self.sinks.validate().map_err(|e| CharacterizeError::BadSinkSpec {
            detail: alloc::format!("{e}"),
        })
    }
}

/// The mask chosen for one `(layer, head)` plus the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadVerdict {
    pub layer: usize,
    pub head: usize,
    pub chosen: MaskType,
    /// NMSE per evaluated candidate (all three when the head stays dense or
    /// full diagnostics are on).
    pub nmse: BTreeMap<MaskType, f64>,
    /// Estimated per-mask FLOPs reduction for this prompt's layout.
    pub flops_reduction: BTreeMap<MaskType, f64>,
}

/// All verdicts of one prompt, in `(layer, head)` lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptVerdicts {
    pub prompt_id: String,
    pub alpha: f64,
    pub order_policy: OrderPolicy,
    /// Image count of the prompt's layout; aggregation excludes prompts
    /// with zero images from its denominators.
    pub num_images: usize,
    pub verdicts: Vec<HeadVerdict>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CharacterizeError {
    BadAlpha { alpha: f64 },
    BadSinkSpec { detail: String },
    /// Attention or NMSE failure, tagged with the head it came from.
    Head { layer: usize, head: usize, source: AttentionError },
}

impl fmt::Display for CharacterizeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadAlpha { alpha } => write!(f, "alpha {alpha} outside (0, 1)"),
            Self::BadSinkSpec { detail } => write!(f, "invalid sink spec: {detail}"),
            Self::Head { layer, head, source } => {
                write!(f, "layer {layer} head {head}: {source}")
            }
        }
    }
}

impl core::error::Error for CharacterizeError {}

/// Sparse candidates in the order the loop will try them.
pub fn candidate_order(policy: OrderPolicy, layout: &TokenLayout) -> [MaskType; 3] {
    match policy {
        OrderPolicy::PaperFixed => MaskType::SPARSE,
        OrderPolicy::FlopsAscending => {
            let areas = estimate_masked_areas(layout);
            let mut order = MaskType::SPARSE;
            // Highest reduction first; stable sort keeps the fixed order on
            // ties. The estimator already puts document-sink at or below
            // both others, and the explicit key pins it last regardless.
            order.sort_by(|&a, &b| {
                let last_a = a == MaskType::DocumentSink;
                let last_b = b == MaskType::DocumentSink;
                last_a.cmp(&last_b).then(
                    areas
                        .reduction(b)
                        .partial_cmp(&areas.reduction(a))
                        .expect("areas are finite"),
                )
            });
            order
        }
    }
}

/// Run the per-head selection loop for one `(layer, head)`.
///
/// A layout without images short-circuits to a dense verdict with empty
/// evidence maps: all three sparse templates degenerate to the dense mask
/// there and carry no signal.
pub fn characterize_head(
    layer: usize,
    head: usize,
    q: &HeadTensor,
    k: &HeadTensor,
    v: &HeadTensor,
    layout: &TokenLayout,
    cfg: &CharacterizerConfig,
) -> Result<HeadVerdict, CharacterizeError> {
    if layout.image_count() == 0 {
        return Ok(HeadVerdict {
            layer,
            head,
            chosen: MaskType::Dense,
            nmse: BTreeMap::new(),
            flops_reduction: BTreeMap::new(),
        });
    }
    let head_err = |source: AttentionError| CharacterizeError::Head { layer, head, source };

    let dense = build_mask(layout, MaskType::Dense, &cfg.sinks, cfg.base);
    let reference = masked_attention(q, k, v, &dense).map_err(head_err)?;

    let areas = estimate_masked_areas(layout);
    let mut flops_reduction = BTreeMap::new();
    for mask in MaskType::SPARSE {
        flops_reduction.insert(mask, areas.reduction(mask));
    }

    let mut nmse_by_mask = BTreeMap::new();
    let mut chosen = MaskType::Dense;
    for candidate in candidate_order(cfg.order_policy, layout) {
        let mask = build_mask(layout, candidate, &cfg.sinks, cfg.base);
        let output = masked_attention(q, k, v, &mask).map_err(head_err)?;
        let err = nmse(&output, &reference).map_err(head_err)?;
        nmse_by_mask.insert(candidate, err);
        if chosen == MaskType::Dense && err < cfg.alpha {
            chosen = candidate;
            if !cfg.full_diagnostics {
                break;
            }
        }
    }
    Ok(HeadVerdict { layer, head, chosen, nmse: nmse_by_mask, flops_reduction })
}

/// Characterize every `(layer, head)` of one prompt capture.
pub fn characterize_prompt(
    capture: &PromptCapture,
    cfg: &CharacterizerConfig,
) -> Result<PromptVerdicts, CharacterizeError> {
    cfg.validate()?;
    let mut verdicts = Vec::with_capacity(capture.layers() * capture.heads());
    for layer in 0..capture.layers() {
        for head in 0..capture.heads() {
            let (q, k, v) = capture.head(layer, head);
            verdicts.push(characterize_head(layer, head, q, k, v, &capture.layout, cfg)?);
        }
    }
    Ok(PromptVerdicts {
        prompt_id: capture.prompt_id.clone(),
        alpha: cfg.alpha,
        order_policy: cfg.order_policy,
        num_images: capture.layout.image_count(),
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Segment;
    use crate::synth;
    use alloc::vec;

    fn cfg() -> CharacterizerConfig {
        CharacterizerConfig::default()
    }

    fn image_layout(lens: &[usize]) -> TokenLayout {
        let mut segs = vec![Segment::text(0, 8)];
        let mut pos = 8;
        for &l in lens {
            segs.push(Segment::image(pos, pos + l));
            pos += l;
        }
        segs.push(Segment::text(pos, pos + 8));
        TokenLayout::new(pos + 8, segs).unwrap()
    }

    #[test]
    fn planted_document_head_is_recovered() {
        let layout = image_layout(&[48, 48]);
        let c = cfg();
        let (q, k, v) = synth::gen_head(
            &layout,
            MaskType::Document,
            &c.sinks,
            c.base,
            0.4,
            99,
            16,
            8.0,
        )
        .unwrap();
        let verdict = characterize_head(0, 0, &q, &k, &v, &layout, &c).unwrap();
        assert_eq!(verdict.chosen, MaskType::Document);
        assert!(verdict.nmse[&MaskType::Document] < 0.1);
        assert!(verdict.nmse[&MaskType::Sink] >= 0.1);
    }

    #[test]
    fn single_full_image_uniform_head_picks_document() {
        // Document mask equals dense on a one-image layout, so its NMSE is
        // exactly zero; uniform attention makes the sink candidate fail.
        let layout = TokenLayout::new(64, vec![Segment::image(0, 64)]).unwrap();
        let c = cfg();
        let (q, k, v) =
            synth::gen_head(&layout, MaskType::Dense, &c.sinks, c.base, 0.0, 3, 16, 0.0).unwrap();
        let verdict = characterize_head(0, 0, &q, &k, &v, &layout, &c).unwrap();
        assert_eq!(verdict.chosen, MaskType::Document);
        assert_eq!(verdict.nmse[&MaskType::Document], 0.0);
        assert!(verdict.nmse[&MaskType::Sink] >= 0.1);
    }

    #[test]
    fn near_uniform_attention_stays_dense() {
        // Gain driven toward zero produces near-uniform attention over the
        // four images; every sparse template then fails the threshold.
        let layout = image_layout(&[32, 32, 32, 32]);
        let c = cfg();
        let (q, k, v) =
            synth::gen_head(&layout, MaskType::Dense, &c.sinks, c.base, 0.0, 17, 16, 0.8).unwrap();
        let verdict = characterize_head(0, 0, &q, &k, &v, &layout, &c).unwrap();
        assert_eq!(verdict.chosen, MaskType::Dense);
        for mask in MaskType::SPARSE {
            assert!(verdict.nmse[&mask] >= c.alpha, "{mask} unexpectedly qualified");
        }
    }

    #[test]
    fn no_image_layout_short_circuits_to_dense() {
        let layout = TokenLayout::all_text(32).unwrap();
        let c = cfg();
        let (q, k, v) =
            synth::gen_head(&layout, MaskType::Dense, &c.sinks, c.base, 0.2, 5, 16, 8.0).unwrap();
        let verdict = characterize_head(1, 2, &q, &k, &v, &layout, &c).unwrap();
        assert_eq!(verdict.chosen, MaskType::Dense);
        assert!(verdict.nmse.is_empty());
        assert!(verdict.flops_reduction.is_empty());
    }

    #[test]
    fn alpha_monotone_qualifying_set_grows() {
        let layout = image_layout(&[40, 40]);
        let mut c = cfg();
        c.full_diagnostics = true;
        let (q, k, v) = synth::gen_head(
            &layout,
            MaskType::DocumentSink,
            &c.sinks,
            c.base,
            0.8,
            21,
            16,
            8.0,
        )
        .unwrap();
        let mut last_was_dense = false;
        for alpha in [0.001, 0.01, 0.1, 0.5] {
            c.alpha = alpha;
            let verdict = characterize_head(0, 0, &q, &k, &v, &layout, &c).unwrap();
            let is_dense = verdict.chosen == MaskType::Dense;
            // Raising alpha must never move a head from sparse back to dense.
            assert!(!(is_dense && !last_was_dense) || alpha == 0.001);
            last_was_dense = is_dense;
        }
    }

    #[test]
    fn early_exit_document_sink_means_both_failed() {
        let layout = image_layout(&[40, 40, 40]);
        let c = cfg();
        let (q, k, v) = synth::gen_head(
            &layout,
            MaskType::DocumentSink,
            &c.sinks,
            c.base,
            0.4,
            33,
            16,
            8.0,
        )
        .unwrap();
        let verdict = characterize_head(0, 0, &q, &k, &v, &layout, &c).unwrap();
        assert_eq!(verdict.chosen, MaskType::DocumentSink);
        assert!(verdict.nmse[&MaskType::Sink] >= c.alpha);
        assert!(verdict.nmse[&MaskType::Document] >= c.alpha);
    }

    #[test]
    fn order_policies_disagree_when_images_are_numerous() {
        // Few large images: sink saves the most. Many small images: the
        // cross-image document area dominates.
        let few = image_layout(&[100, 100]);
        assert_eq!(
            candidate_order(OrderPolicy::FlopsAscending, &few),
            [MaskType::Sink, MaskType::Document, MaskType::DocumentSink]
        );
        let many = image_layout(&[20; 12]);
        assert_eq!(
            candidate_order(OrderPolicy::FlopsAscending, &many),
            [MaskType::Document, MaskType::Sink, MaskType::DocumentSink]
        );
        assert_eq!(
            candidate_order(OrderPolicy::PaperFixed, &many),
            [MaskType::Sink, MaskType::Document, MaskType::DocumentSink]
        );
    }

    #[test]
    fn characterize_prompt_orders_verdicts_and_is_deterministic() {
        let layout = image_layout(&[32, 32]);
        let plan = synth::SynthPlan {
            layout,
            patterns: vec![
                MaskType::Sink,
                MaskType::Document,
                MaskType::Dense,
                MaskType::DocumentSink,
            ],
            layers: 2,
            heads: 2,
            noise_sigma: 0.4,
            seed: 7,
            head_dim: 16,
            logit_gain: 8.0,
            sinks: SinkSpec::default_prefix(),
            base: BaseVisibility::Causal,
        };
        let capture = synth::gen_prompt(&plan, 0, "p0").unwrap();
        let a = characterize_prompt(&capture, &cfg()).unwrap();
        let b = characterize_prompt(&capture, &cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.verdicts.len(), 4);
        let order: Vec<(usize, usize)> = a.verdicts.iter().map(|v| (v.layer, v.head)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(a.num_images, 2);
    }
}
