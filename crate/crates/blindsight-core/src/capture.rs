//! In-memory representation of one prompt's attention capture.
//!
//! A capture holds the post-projection Q/K/V matrices of every
//! `(layer, head)` for a single prompt, together with the prompt's token
//! layout. The on-disk format (manifest plus raw tensor files) lives in the
//! companion `blindsight` crate; this type is what both the loader and the
//! synthesizer produce and what the characterizer consumes.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::attention::HeadTensor;
use crate::layout::TokenLayout;

#[derive(Debug, Clone, PartialEq)]
pub enum CaptureShapeError {
    WrongTensorCount { role: &'static str, expected: usize, actual: usize },
    HeadShape { role: &'static str, layer: usize, head: usize, detail: String },
}

impl fmt::Display for CaptureShapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WrongTensorCount { role, expected, actual } => {
                write!(f, "{role}: expected {expected} per-head tensors, got {actual}")
            }
            Self::HeadShape { role, layer, head, detail } => {
                write!(f, "{role}[layer {layer}, head {head}]: {detail}")
            }
        }
    }
}

impl core::error::Error for CaptureShapeError {}

/// Q/K/V tensors of shape `[layers, heads, seq_len, head_dim]` for one
/// prompt, stored as per-head matrices in `layer * heads + head` order.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptCapture {
    pub prompt_id: String,
    pub layout: TokenLayout,
    layers: usize,
    heads: usize,
    head_dim: usize,
    q: Vec<HeadTensor>,
    k: Vec<HeadTensor>,
    v: Vec<HeadTensor>,
}

impl PromptCapture {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        prompt_id: String,
        layout: TokenLayout,
        layers: usize,
        heads: usize,
        head_dim: usize,
        q: Vec<HeadTensor>,
        k: Vec<HeadTensor>,
        v: Vec<HeadTensor>,
    ) -> Result<Self, CaptureShapeError> {
        let expected = layers * heads;
        for (role, tensors) in [("q", &q), ("k", &k), ("v", &v)] {
            if tensors.len() != expected {
                return Err(CaptureShapeError::WrongTensorCount {
                    role,
                    expected,
                    actual: tensors.len(),
                });
            }
            for (i, t) in tensors.iter().enumerate() {
                if t.rows() != layout.seq_len() || t.cols() != head_dim {
                    return Err(CaptureShapeError::HeadShape {
                        role,
                        layer: i / heads,
                        head: i % heads,
                        detail: alloc::format!(
                            "expected {}x{head_dim}, got {}x{}",
                            layout.seq_len(),
                            t.rows(),
                            t.cols()
                        ),
                    });
                }
            }
        }
        Ok(PromptCapture { prompt_id, layout, layers, heads, head_dim, q, k, v })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn seq_len(&self) -> usize {
        self.layout.seq_len()
    }

    fn idx(&self, layer: usize, head: usize) -> usize {
        debug_assert!(layer < self.layers && head < self.heads);
        layer * self.heads + head
    }

    /// `(Q, K, V)` of one head.
    pub fn head(&self, layer: usize, head: usize) -> (&HeadTensor, &HeadTensor, &HeadTensor) {
        let i = self.idx(layer, head);
        (&self.q[i], &self.k[i], &self.v[i])
    }
}
