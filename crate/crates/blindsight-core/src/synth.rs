//! Synthetic Q/K/V generation with planted sparsity patterns.
//!
//! Patterns are planted in logit space through shared directions rather
//! than by factorizing a target score matrix: every image gets its own
//! direction (document structure), sink keys carry a direction shared by
//! all queries (sink structure), and document-sink combines both with sink
//! keys carrying the sink direction *instead of* their image direction so
//! own-image sink logits stay at the gain rather than doubling. The
//! generator stays independent of the mask code it is used to validate.
//!
//! With head dimension `d` and gain `g`, structured rows have norm
//! `sqrt(g * sqrt(d))` so pre-softmax logits land at `g` on pattern cells
//! and near zero elsewhere; entry-level Gaussian noise is scaled to perturb
//! logits by roughly `noise_sigma`. Dense plants are isotropic Gaussian
//! Q/K whose logit spread scales as `g / 8`: diffuse texture at the
//! default gain, exactly uniform rows as the gain goes to zero.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::HeadTensor;
use crate::capture::PromptCapture;
use crate::layout::{sink_region, Segment, SinkSpec, TokenLayout};
use crate::mask::{BaseVisibility, MaskType};

#[derive(Debug, Clone, PartialEq)]
pub enum SynthError {
    HeadDimTooSmall { head_dim: usize },
    BadGain { logit_gain: f64 },
    /// Nonzero noise needs a positive gain to be scaled against.
    NoiseWithoutGain,
    BadNoise { noise_sigma: f64 },
    PatternCount { expected: usize, actual: usize },
    Shape { detail: String },
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::HeadDimTooSmall { head_dim } => {
                write!(f, "head_dim {head_dim} below the minimum of 8")
            }
            Self::BadGain { logit_gain } => write!(f, "logit_gain {logit_gain} must be >= 0"),
            Self::NoiseWithoutGain => {
                write!(f, "noise_sigma > 0 requires logit_gain > 0")
            }
            Self::BadNoise { noise_sigma } => {
                write!(f, "noise_sigma {noise_sigma} must be >= 0 and finite")
            }
            Self::PatternCount { expected, actual } => {
                write!(f, "expected {expected} per-head patterns, got {actual}")
            }
            Self::Shape { detail } => write!(f, "{detail}"),
        }
    }
}

impl core::error::Error for SynthError {}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn mix_seed(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut x = splitmix64(seed);
    for v in [a, b, c] {
        x = splitmix64(x ^ splitmix64(v));
    }
    x
}

/// Draw a unit vector orthogonal to `existing` (Gram-Schmidt on a fresh
/// Gaussian draw; falls back to plain normalization once the basis is
/// exhausted).
fn orthonormal_direction(rng: &mut ChaCha8Rng, d: usize, existing: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        if existing.len() < d {
            for prev in existing {
                let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (vi, pi) in v.iter_mut().zip(prev) {
                    *vi -= dot * pi;
                }
            }
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// Manufacture `(Q, K, V)` whose dense attention exhibits `pattern`.
///
/// Deterministic per `seed`; `V` is standard Gaussian.
#[allow(clippy::too_many_arguments)]
pub fn gen_head(
    layout: &TokenLayout,
    pattern: MaskType,
    sinks: &SinkSpec,
    _base: BaseVisibility,
    noise_sigma: f64,
    seed: u64,
    head_dim: usize,
    logit_gain: f64,
) -> Result<(HeadTensor, HeadTensor, HeadTensor), SynthError> {
    if head_dim < 8 {
        return Err(SynthError::HeadDimTooSmall { head_dim });
    }
    if logit_gain.is_nan() || logit_gain < 0.0 {
        return Err(SynthError::BadGain { logit_gain });
    }
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(SynthError::BadNoise { noise_sigma });
    }
    if noise_sigma > 0.0 && logit_gain == 0.0 {
        return Err(SynthError::NoiseWithoutGain);
    }

    let s = layout.seq_len();
    let d = head_dim;
    let images: Vec<Segment> = layout.images().collect();
    let mut is_sink = alloc::vec![false; s];
    for img in &images {
        for pos in sink_region(img, sinks) {
            is_sink[pos] = true;
        }
    }
    let mut image_of = alloc::vec![usize::MAX; s];
    for (i, img) in images.iter().enumerate() {
        for slot in image_of.iter_mut().take(img.end).skip(img.start) {
            *slot = i;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(images.len() + 1);
    let sink_dir = orthonormal_direction(&mut rng, d, &dirs);
    dirs.push(sink_dir.clone());
    let image_dirs: Vec<Vec<f64>> = (0..images.len())
        .map(|_| {
            let dir = orthonormal_direction(&mut rng, d, &dirs);
            dirs.push(dir.clone());
            dir
        })
        .collect();

    // Row magnitude making structured logits equal logit_gain after the
    // 1/sqrt(d) attention scaling.
    let row_scale = libm::sqrt(logit_gain * libm::sqrt(d as f64));
    let sqrt_d = libm::sqrt(d as f64);

    let mut q0 = alloc::vec![0.0f64; s * d];
    let mut k0 = alloc::vec![0.0f64; s * d];
    if pattern == MaskType::Dense {
        // Diffuse head: isotropic Gaussian Q/K. Entry spread sqrt(g / 8)
        // puts the logit standard deviation at g / 8, so the default gain
        // yields textured but patternless attention and zero gain yields
        // exactly uniform rows.
        let dense_std = libm::sqrt(logit_gain / 8.0);
        for x in q0.iter_mut().chain(k0.iter_mut()) {
            *x = dense_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let text_token = |t: usize| image_of[t] == usize::MAX;
    for t in 0..s {
        let qrow = &mut q0[t * d..(t + 1) * d];
        match pattern {
            MaskType::Dense => {}
            MaskType::Sink => {
                for (x, w) in qrow.iter_mut().zip(&sink_dir) {
                    *x = row_scale * w;
                }
            }
            MaskType::Document => {
                if !text_token(t) {
                    let u = &image_dirs[image_of[t]];
                    for (x, ui) in qrow.iter_mut().zip(u) {
                        *x = row_scale * ui;
                    }
                }
            }
            MaskType::DocumentSink => {
                if text_token(t) {
                    for (x, w) in qrow.iter_mut().zip(&sink_dir) {
                        *x = row_scale * w;
                    }
                } else {
                    let u = &image_dirs[image_of[t]];
                    for ((x, ui), w) in qrow.iter_mut().zip(u).zip(&sink_dir) {
                        *x = row_scale * (ui + w);
                    }
                }
            }
        }
        let krow = &mut k0[t * d..(t + 1) * d];
        match pattern {
            MaskType::Dense => {}
            MaskType::Sink => {
                if is_sink[t] {
                    for (x, w) in krow.iter_mut().zip(&sink_dir) {
                        *x = row_scale * w;
                    }
                }
            }
            MaskType::Document => {
                if !text_token(t) {
                    let u = &image_dirs[image_of[t]];
                    for (x, ui) in krow.iter_mut().zip(u) {
                        *x = row_scale * ui;
                    }
                }
            }
            MaskType::DocumentSink => {
                if is_sink[t] {
                    for (x, w) in krow.iter_mut().zip(&sink_dir) {
                        *x = row_scale * w;
                    }
                } else if !text_token(t) {
                    let u = &image_dirs[image_of[t]];
                    for (x, ui) in krow.iter_mut().zip(u) {
                        *x = row_scale * ui;
                    }
                }
            }
        }
    }

    // Entry noise amplitude giving the requested marginal logit noise
    // against structured rows of norm `row_scale`.
    let noise_amp = if noise_sigma > 0.0 {
        noise_sigma * libm::sqrt(sqrt_d / (2.0 * logit_gain))
    } else {
        0.0
    };

    let sample_matrix = |base: &[f64], rng: &mut ChaCha8Rng| -> Vec<f32> {
        base.iter()
            .map(|&x| (x + noise_amp * rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect()
    };
    let q = sample_matrix(&q0, &mut rng);
    let k = sample_matrix(&k0, &mut rng);
    let v: Vec<f32> = (0..s * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();

    let wrap = |role: &str, data: Vec<f32>| {
        HeadTensor::new(s, d, data).map_err(|e| SynthError::Shape {
            detail: alloc::format!("{role}: {e}"),
        })
    };
    Ok((wrap("q", q)?, wrap("k", k)?, wrap("v", v)?))
}

/// Per-prompt generation plan: one planted pattern per `(layer, head)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPlan {
    pub layout: TokenLayout,
    /// `layers * heads` patterns in `(layer, head)` lexicographic order.
    pub patterns: Vec<MaskType>,
    pub layers: usize,
    pub heads: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub head_dim: usize,
    pub logit_gain: f64,
    pub sinks: SinkSpec,
    pub base: BaseVisibility,
}

impl SynthPlan {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.patterns.len() != self.layers * self.heads {
            return Err(SynthError::PatternCount {
                expected: self.layers * self.heads,
                actual: self.patterns.len(),
            });
        }
        if self.head_dim < 8 {
            return Err(SynthError::HeadDimTooSmall { head_dim: self.head_dim });
        }
        Ok(())
    }
}

/// Generate the full capture of one prompt. Head seeds are derived from
/// `(plan.seed, prompt_index, layer, head)` so every head is independent
/// and the whole capture is reproducible bit for bit.
pub fn gen_prompt(
    plan: &SynthPlan,
    prompt_index: u64,
    prompt_id: &str,
) -> Result<PromptCapture, SynthError> {
    plan.validate()?;
    let mut q = Vec::with_capacity(plan.patterns.len());
    let mut k = Vec::with_capacity(plan.patterns.len());
    let mut v = Vec::with_capacity(plan.patterns.len());
    for layer in 0..plan.layers {
        for head in 0..plan.heads {
            let pattern = plan.patterns[layer * plan.heads + head];
            let seed = mix_seed(plan.seed, prompt_index, layer as u64, head as u64);
            let (hq, hk, hv) = gen_head(
                &plan.layout,
                pattern,
                &plan.sinks,
                plan.base,
                plan.noise_sigma,
                seed,
                plan.head_dim,
                plan.logit_gain,
            )?;
            q.push(hq);
            k.push(hk);
            v.push(hv);
        }
    }
    PromptCapture::new(
        String::from(prompt_id),
        plan.layout.clone(),
        plan.layers,
        plan.heads,
        plan.head_dim,
        q,
        k,
        v,
    )
    .map_err(|e| SynthError::Shape { detail: alloc::format!("{e}") })
}

/// Random multi-image layout generation for synthetic capture sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomLayoutParams {
    pub min_images: usize,
    pub max_images: usize,
    pub min_image_tokens: usize,
    pub max_image_tokens: usize,
    /// Text runs between/around images are drawn from `0..=max_text_tokens`.
    pub max_text_tokens: usize,
}

impl Default for RandomLayoutParams {
    fn default() -> Self {
        RandomLayoutParams {
            min_images: 2,
            max_images: 4,
            min_image_tokens: 32,
            max_image_tokens: 64,
            max_text_tokens: 12,
        }
    }
}

pub fn random_layout(rng: &mut ChaCha8Rng, params: &RandomLayoutParams) -> TokenLayout {
    let n = rng.random_range(params.min_images..=params.max_images);
    let mut segments = Vec::new();
    let mut pos = 0usize;
    let push_text = |segments: &mut Vec<Segment>, pos: &mut usize, rng: &mut ChaCha8Rng| {
        let t = rng.random_range(0..=params.max_text_tokens);
        if t > 0 {
            segments.push(Segment::text(*pos, *pos + t));
            *pos += t;
        }
    };
    for _ in 0..n {
        push_text(&mut segments, &mut pos, rng);
        let len = rng.random_range(params.min_image_tokens..=params.max_image_tokens);
        segments.push(Segment::image(pos, pos + len));
        pos += len;
    }
    push_text(&mut segments, &mut pos, rng);
    TokenLayout::new(pos, segments).expect("generated segments are canonical")
}

/// Fixed per-head pattern assignment for a capture set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternAssignment {
    /// Seeded uniform draw over the four mask types.
    Mixed,
    Fixed(MaskType),
}

/// Parameters for a whole synthetic capture set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSetConfig {
    pub layers: usize,
    pub heads: usize,
    pub prompts: usize,
    pub seed: u64,
    pub head_dim: usize,
    pub noise_sigma: f64,
    pub logit_gain: f64,
    pub pattern: PatternAssignment,
    pub layout: RandomLayoutParams,
    pub sinks: SinkSpec,
    pub base: BaseVisibility,
}

/// The planted per-head patterns, written alongside a synthetic capture as
/// ground truth (never inside the manifest itself).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub logit_gain: f64,
    /// `map[layer][head]`.
    pub map: Vec<Vec<MaskType>>,
}

impl GroundTruth {
    /// Fraction of heads where `map` agrees with the planted patterns.
    pub fn match_fraction(&self, map: &[Vec<MaskType>]) -> f64 {
        let total = self.layers * self.heads;
        let mut matches = 0usize;
        for (planted_row, got_row) in self.map.iter().zip(map) {
            for (planted, got) in planted_row.iter().zip(got_row) {
                if planted == got {
                    matches += 1;
                }
            }
        }
        matches as f64 / total as f64
    }
}

/// A generated capture set plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSet {
    pub prompts: Vec<PromptCapture>,
    pub ground_truth: GroundTruth,
}

const PATTERN_STREAM: u64 = 0x70_61_74;
const LAYOUT_STREAM: u64 = 0x6C_61_79;

/// Generate `cfg.prompts` captures sharing one planted per-head pattern map,
/// each over its own randomly drawn layout.
pub fn generate_set(cfg: &SynthSetConfig) -> Result<SynthSet, SynthError> {
    let mut pattern_rng =
        ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, PATTERN_STREAM, 0, 0));
    let patterns: Vec<MaskType> = (0..cfg.layers * cfg.heads)
        .map(|_| match cfg.pattern {
            PatternAssignment::Fixed(mask) => mask,
            PatternAssignment::Mixed => {
                MaskType::ALL[pattern_rng.random_range(0..MaskType::ALL.len())]
            }
        })
        .collect();

    let mut prompts = Vec::with_capacity(cfg.prompts);
    for p in 0..cfg.prompts {
        let mut layout_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, LAYOUT_STREAM, p as u64, 0));
        let layout = random_layout(&mut layout_rng, &cfg.layout);
        let plan = SynthPlan {
            layout,
            patterns: patterns.clone(),
            layers: cfg.layers,
            heads: cfg.heads,
            noise_sigma: cfg.noise_sigma,
            seed: cfg.seed,
            head_dim: cfg.head_dim,
            logit_gain: cfg.logit_gain,
            sinks: cfg.sinks.clone(),
            base: cfg.base,
        };
        prompts.push(gen_prompt(&plan, p as u64, &alloc::format!("p{p:04}"))?);
    }
    let map = (0..cfg.layers)
        .map(|l| patterns[l * cfg.heads..(l + 1) * cfg.heads].to_vec())
        .collect();
    Ok(SynthSet {
        prompts,
        ground_truth: GroundTruth {
            layers: cfg.layers,
            heads: cfg.heads,
            head_dim: cfg.head_dim,
            seed: cfg.seed,
            noise_sigma: cfg.noise_sigma,
            logit_gain: cfg.logit_gain,
            map,
        },
    })
}
