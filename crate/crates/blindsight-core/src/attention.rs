//! Numerically stable masked attention and the NMSE comparison metric.
//!
//! Scores are `Q[q] . K[k] / sqrt(d_h)` over the mask's allowed keys only;
//! the softmax subtracts the row maximum, and exponentials plus output
//! accumulation run in f64. Together with the mask's diagonal fallback this
//! keeps every row a well-defined convex combination of value rows.

use alloc::vec::Vec;
use core::fmt;

use crate::mask::AttentionMask;

/// Row-major `rows x cols` matrix of one head's Q, K, or V.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensor {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl HeadTensor {
    /// Validates the element count and that every entry is finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, AttentionError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(AttentionError::ShapeMismatch {
                detail: alloc::format!(
                    "expected {rows}x{cols} = {} elements, got {}",
                    rows * cols,
                    data.len()
                ),
            });
        }
        if let Some(idx) = data.iter().position(|x| !x.is_finite()) {
            return Err(AttentionError::NonFinite { index: idx });
        }
        Ok(HeadTensor { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Masked-attention result, `seq_len x d_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl AttentionOutput {
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        AttentionOutput { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Row-stochastic attention score matrix (`seq_len x seq_len`), zeros at
/// disallowed cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    seq_len: usize,
    data: Vec<f32>,
}

impl ScoreMatrix {
    /// Wrap an externally computed row-stochastic matrix.
    pub fn new(seq_len: usize, data: Vec<f32>) -> Result<Self, AttentionError> {
        if data.len() != seq_len * seq_len {
            return Err(AttentionError::ShapeMismatch {
                detail: alloc::format!(
                    "expected {seq_len}x{seq_len} = {} entries, got {}",
                    seq_len * seq_len,
                    data.len()
                ),
            });
        }
        Ok(ScoreMatrix { seq_len, data })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn row(&self, q: usize) -> &[f32] {
        &self.data[q * self.seq_len..(q + 1) * self.seq_len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttentionError {
    ShapeMismatch { detail: alloc::string::String },
    NonFinite { index: usize },
    /// NMSE against an all-zero reference is undefined (degenerate capture).
    ZeroNormReference,
}

impl fmt::Display for AttentionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { detail } => write!(f, "shape mismatch: {detail}"),
            Self::NonFinite { index } => write!(f, "non-finite entry at flat index {index}"),
            Self::ZeroNormReference => write!(f, "reference output has zero norm"),
        }
    }
}

impl core::error::Error for AttentionError {}

fn check_shapes(
    q: &HeadTensor,
    k: &HeadTensor,
    v: &HeadTensor,
    mask: &AttentionMask,
) -> Result<(), AttentionError> {
    if q.rows != k.rows || q.rows != v.rows || q.cols != k.cols {
        return Err(AttentionError::ShapeMismatch {
            detail: alloc::format!(
                "Q {}x{}, K {}x{}, V {}x{}",
                q.rows, q.cols, k.rows, k.cols, v.rows, v.cols
            ),
        });
    }
    if q.rows != mask.seq_len() {
        return Err(AttentionError::ShapeMismatch {
            detail: alloc::format!("tensors have {} rows, mask covers {}", q.rows, mask.seq_len()),
        });
    }
    Ok(())
}

/// `softmax(QK^T / sqrt(d_h))V` restricted to the mask's allowed cells.
pub fn masked_attention(
    q: &HeadTensor,
    k: &HeadTensor,
    v: &HeadTensor,
    mask: &AttentionMask,
) -> Result<AttentionOutput, AttentionError> {
    check_shapes(q, k, v, mask)?;
    let s = q.rows;
    let d = q.cols;
    let dv = v.cols;
    let scale = 1.0 / libm::sqrt(d as f64);

    let mut out = alloc::vec![0.0f32; s * dv];
    let mut ivs: Vec<(usize, usize)> = Vec::new();
    let mut scratch: Vec<(usize, f64)> = Vec::new();
    let mut acc = alloc::vec![0.0f64; dv];

    for qi in 0..s {
        mask.row_intervals_into(qi, &mut ivs);
        scratch.clear();
        let qrow = q.row(qi);
        let mut max = f64::NEG_INFINITY;
        for &(a, b) in &ivs {
            for ki in a..b {
                let krow = k.row(ki);
                let mut dot = 0.0f32;
                for j in 0..d {
                    dot += qrow[j] * krow[j];
                }
                let logit = dot as f64 * scale;
                if logit > max {
                    max = logit;
                }
                scratch.push((ki, logit));
            }
        }
        let mut denom = 0.0f64;
        for entry in scratch.iter_mut() {
            let w = libm::exp(entry.1 - max);
            entry.1 = w;
            denom += w;
        }
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &(ki, w) in &scratch {
            let vrow = v.row(ki);
            for (a, &vv) in acc.iter_mut().zip(vrow) {
                *a += w * vv as f64;
            }
        }
        for (o, &a) in out[qi * dv..(qi + 1) * dv].iter_mut().zip(&acc) {
            *o = (a / denom) as f32;
        }
    }
    Ok(AttentionOutput::from_raw(s, dv, out))
}

/// Row-stochastic score matrix `softmax(QK^T / sqrt(d_h))` under the mask.
pub fn masked_scores(
    q: &HeadTensor,
    k: &HeadTensor,
    mask: &AttentionMask,
) -> Result<ScoreMatrix, AttentionError> {
    if q.rows != k.rows || q.cols != k.cols || q.rows != mask.seq_len() {
        return Err(AttentionError::ShapeMismatch {
            detail: alloc::format!(
                "Q {}x{}, K {}x{}, mask seq_len {}",
                q.rows, q.cols, k.rows, k.cols,
                mask.seq_len()
            ),
        });
    }
    let s = q.rows;
    let d = q.cols;
    let scale = 1.0 / libm::sqrt(d as f64);
    let mut data = alloc::vec![0.0f32; s * s];
    let mut ivs: Vec<(usize, usize)> = Vec::new();
    let mut scratch: Vec<(usize, f64)> = Vec::new();
    for qi in 0..s {
        mask.row_intervals_into(qi, &mut ivs);
        scratch.clear();
        let qrow = q.row(qi);
        let mut max = f64::NEG_INFINITY;
        for &(a, b) in &ivs {
            for ki in a..b {
                let krow = k.row(ki);
                let mut dot = 0.0f32;
                for j in 0..d {
                    dot += qrow[j] * krow[j];
                }
                let logit = dot as f64 * scale;
                if logit > max {
                    max = logit;
                }
                scratch.push((ki, logit));
            }
        }
        let mut denom = 0.0f64;
        for entry in scratch.iter_mut() {
            let w = libm::exp(entry.1 - max);
            entry.1 = w;
            denom += w;
        }
        let row = &mut data[qi * s..(qi + 1) * s];
        for &(ki, w) in &scratch {
            row[ki] = (w / denom) as f32;
        }
    }
    Ok(ScoreMatrix { seq_len: s, data })
}

/// Normalized mean squared error: `|candidate - reference|_F^2 / |reference|_F^2`.
pub fn nmse(candidate: &AttentionOutput, reference: &AttentionOutput) -> Result<f64, AttentionError> {
    if candidate.rows != reference.rows || candidate.cols != reference.cols {
        return Err(AttentionError::ShapeMismatch {
            detail: alloc::format!(
                "candidate {}x{}, reference {}x{}",
                candidate.rows, candidate.cols, reference.rows, reference.cols
            ),
        });
    }
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&c, &r) in candidate.data.iter().zip(&reference.data) {
        let diff = c as f64 - r as f64;
        num += diff * diff;
        den += (r as f64) * (r as f64);
    }
    if den == 0.0 {
        return Err(AttentionError::ZeroNormReference);
    }
    Ok(num / den)
}
