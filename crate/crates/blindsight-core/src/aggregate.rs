//! Dataset-level aggregation: collapse per-prompt verdicts into one fixed
//! mask per head.
//!
//! The cascade keeps a head dense whenever the dense fraction exceeds the
//! veto threshold, then requires a strict majority-style threshold for sink
//! and document, and otherwise falls back to the superset document-sink
//! category. Comparisons are strict: a fraction exactly equal to a
//! threshold does not trigger the branch.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::characterize::{CharacterizerConfig, OrderPolicy, PromptVerdicts};
use crate::layout::SinkSpec;
use crate::mask::{BaseVisibility, MaskType};

/// Threshold cascade parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    /// Dense veto: above this dense fraction the head stays dense.
    pub gamma_c: f64,
    pub gamma_s: f64,
    pub gamma_d: f64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        AggregatorConfig { gamma_c: 0.25, gamma_s: 0.60, gamma_d: 0.60 }
    }
}

impl AggregatorConfig {
    pub fn validate(&self) -> Result<(), AggregateError> {
        for (name, v) in [("gamma_c", self.gamma_c), ("gamma_s", self.gamma_s), ("gamma_d", self.gamma_d)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(AggregateError::BadThreshold { name, value: v });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggregateError {
    NoPrompts,
    /// Every prompt in the set had zero images; fractions are undefined.
    NoImagePrompts,
    ShapeMismatch { prompt_id: String, detail: String },
    BadThreshold { name: &'static str, value: f64 },
}

impl fmt::Display for AggregateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoPrompts => write!(f, "no prompt verdicts to aggregate"),
            Self::NoImagePrompts => {
                write!(f, "every prompt has zero images; nothing to aggregate")
            }
            Self::ShapeMismatch { prompt_id, detail } => {
                write!(f, "prompt {prompt_id}: {detail}")
            }
            Self::BadThreshold { name, value } => {
                write!(f, "{name} = {value} outside (0, 1)")
            }
        }
    }
}

impl core::error::Error for AggregateError {}

/// A distribution over the four mask types, indexed by [`MaskType::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskDistribution([f64; 4]);

impl MaskDistribution {
    pub fn new(fractions: [f64; 4]) -> Self {
        MaskDistribution(fractions)
    }

    pub fn from_counts(counts: [u64; 4], total: u64) -> Self {
        let mut out = [0.0; 4];
        for (o, c) in out.iter_mut().zip(counts) {
            *o = c as f64 / total as f64;
        }
        MaskDistribution(out)
    }

    pub fn get(&self, mask: MaskType) -> f64 {
        self.0[mask.index()]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }
}

/// Per-head mask-type fractions over the counted prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskFractions {
    layers: usize,
    heads: usize,
    /// Prompts with at least one image; the fraction denominator.
    prompts_counted: usize,
    dist: Vec<MaskDistribution>,
}

impl MaskFractions {
    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn prompts_counted(&self) -> usize {
        self.prompts_counted
    }

    pub fn head(&self, layer: usize, head: usize) -> &MaskDistribution {
        &self.dist[layer * self.heads + head]
    }
}

/// Count per-head mask choices across prompts into fractions.
///
/// Prompts whose layout has no images are excluded from the denominator:
/// the characterizer short-circuits them to dense for structural reasons,
/// not behavioral ones.
pub fn accumulate(prompts: &[PromptVerdicts]) -> Result<MaskFractions, AggregateError> {
    if prompts.is_empty() {
        return Err(AggregateError::NoPrompts);
    }
    let counted: Vec<&PromptVerdicts> =
        prompts.iter().filter(|p| p.num_images > 0).collect();
    if counted.is_empty() {
        return Err(AggregateError::NoImagePrompts);
    }
    let (layers, heads) = grid_shape(counted[0])?;
    let mut counts = alloc::vec![[0u64; 4]; layers * heads];
    for prompt in &counted {
        let (l, h) = grid_shape(prompt)?;
        if (l, h) != (layers, heads) {
            return Err(AggregateError::ShapeMismatch {
                prompt_id: prompt.prompt_id.clone(),
                detail: alloc::format!(
                    "grid {l}x{h} differs from first prompt's {layers}x{heads}"
                ),
            });
        }
        for v in &prompt.verdicts {
            counts[v.layer * heads + v.head][v.chosen.index()] += 1;
        }
    }
    let total = counted.len() as u64;
    let dist = counts.into_iter().map(|c| MaskDistribution::from_counts(c, total)).collect();
    Ok(MaskFractions { layers, heads, prompts_counted: counted.len(), dist })
}

/// Validate a prompt's verdicts form a complete lexicographic grid and
/// return its `(layers, heads)` shape.
fn grid_shape(prompt: &PromptVerdicts) -> Result<(usize, usize), AggregateError> {
    let mismatch = |detail: String| AggregateError::ShapeMismatch {
        prompt_id: prompt.prompt_id.clone(),
        detail,
    };
    if prompt.verdicts.is_empty() {
        return Err(mismatch(String::from("no verdicts")));
    }
    let layers = prompt.verdicts.last().unwrap().layer + 1;
    let heads = prompt.verdicts.last().unwrap().head + 1;
    if prompt.verdicts.len() != layers * heads {
        return Err(mismatch(alloc::format!(
            "{} verdicts do not fill a {layers}x{heads} grid",
            prompt.verdicts.len()
        )));
    }
    for (i, v) in prompt.verdicts.iter().enumerate() {
        if (v.layer, v.head) != (i / heads, i % heads) {
            return Err(mismatch(alloc::format!(
                "verdict {i} is for (layer {}, head {}), expected lexicographic order",
                v.layer, v.head
            )));
        }
    }
    Ok((layers, heads))
}

/// The threshold cascade for one head.
pub fn aggregate_head(fractions: &MaskDistribution, cfg: &AggregatorConfig) -> MaskType {
    if fractions.get(MaskType::Dense) > cfg.gamma_c {
        MaskType::Dense
    } else if fractions.get(MaskType::Sink) > cfg.gamma_s {
        MaskType::Sink
    } else if fractions.get(MaskType::Document) > cfg.gamma_d {
        MaskType::Document
    } else {
        MaskType::DocumentSink
    }
}

/// The deployable artifact: a fixed `(layer, head) -> MaskType` mapping
/// with every hyper-parameter that produced it embedded for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMap {
    pub model: String,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub alpha: f64,
    pub order_policy: OrderPolicy,
    pub base: BaseVisibility,
    pub gamma_c: f64,
    pub gamma_s: f64,
    pub gamma_d: f64,
    pub sink_spec: SinkSpec,
    /// `map[layer][head]`.
    pub map: Vec<Vec<MaskType>>,
}

impl HeadMap {
    pub fn mask_for(&self, layer: usize, head: usize) -> MaskType {
        self.map[layer][head]
    }

    /// Share of heads per category across the whole model, every head
    /// weighted equally.
    pub fn category_shares(&self) -> MaskDistribution {
        let mut counts = [0u64; 4];
        for row in &self.map {
            for &mask in row {
                counts[mask.index()] += 1;
            }
        }
        MaskDistribution::from_counts(counts, (self.layers * self.heads) as u64)
    }
}

/// Apply the cascade to every head and embed the configs that produced it.
pub fn build_headmap(
    fractions: &MaskFractions,
    agg: &AggregatorConfig,
    characterizer: &CharacterizerConfig,
    model: String,
    head_dim: usize,
) -> HeadMap {
    let map = (0..fractions.layers)
        .map(|l| {
            (0..fractions.heads)
                .map(|h| aggregate_head(fractions.head(l, h), agg))
                .collect()
        })
        .collect();
    HeadMap {
        model,
        layers: fractions.layers,
        heads: fractions.heads,
        head_dim,
        alpha: characterizer.alpha,
        order_policy: characterizer.order_policy,
        base: characterizer.base,
        gamma_c: agg.gamma_c,
        gamma_s: agg.gamma_s,
        gamma_d: agg.gamma_d,
        sink_spec: characterizer.sinks.clone(),
        map,
    }
}
