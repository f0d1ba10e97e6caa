//! File schemas and report writers for the pipeline stages.
//!
//! Stages communicate only through files: verdict JSON out of
//! `characterize`, head-map JSON out of `aggregate`, CSV plus report JSON
//! out of `flops`. Every artifact embeds the resolved semantic
//! configuration that produced it, and none carries timestamps or absolute
//! paths, so identical inputs and flags give byte-identical outputs.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use blindsight_core::aggregate::{HeadMap, MaskDistribution};
use blindsight_core::characterize::{CharacterizerConfig, PromptVerdicts};
use blindsight_core::flops::{CdfPoint, MaskedAreas};
use blindsight_core::layout::TokenLayout;
use blindsight_core::mask::MaskType;
use serde::{Deserialize, Serialize};

use crate::capture::ModelMeta;

/// Output of `characterize`: resolved configuration plus per-prompt
/// verdicts in capture order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictsFile {
    pub config: CharacterizerConfig,
    pub model: ModelMeta,
    pub prompts: Vec<PromptVerdicts>,
}

/// Layout list consumed by `flops`, one entry per prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub prompt_id: String,
    pub layout: TokenLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutsFile {
    pub layouts: Vec<LayoutEntry>,
}

/// Per-prompt FLOPs accounting in the report JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptFlops {
    pub prompt_id: String,
    pub masked_area: MaskedAreas,
    /// Estimator reduction per mask, keyed by mask name.
    pub reduction: std::collections::BTreeMap<MaskType, f64>,
    pub model_reduction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_reduction_exact: Option<f64>,
}

/// Output of `flops`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReportFile {
    /// Theoretical mask-area accounting, not a measured speedup. The
    /// estimator ignores sink masking from text query rows and treats
    /// areas continuously, so the exact counting oracle is the reference
    /// wherever the two are reported together.
    pub note: String,
    pub model: String,
    pub estimator: String,
    pub shares: std::collections::BTreeMap<MaskType, f64>,
    pub mean_model_reduction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_model_reduction_exact: Option<f64>,
    pub per_prompt: Vec<PromptFlops>,
    pub cdf: Vec<CdfPoint>,
}

pub const FLOPS_NOTE: &str = "theoretical FLOPs accounting from mask geometry; \
not a measured speedup, and a plausibility estimate rather than a reproduction";

pub fn shares_map(shares: &MaskDistribution) -> std::collections::BTreeMap<MaskType, f64> {
    MaskType::ALL.iter().map(|&m| (m, shares.get(m))).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let raw =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
}

/// Category-share summary of a head map (one row per mask type).
pub fn distribution_csv(headmap: &HeadMap) -> String {
    let shares = headmap.category_shares();
    let mut out = String::from("mask_type,share\n");
    for mask in MaskType::ALL {
        out.push_str(&format!("{mask},{}\n", shares.get(mask)));
    }
    out
}

/// Per-prompt reduction rows plus a trailing mean summary line.
pub fn reductions_csv(rows: &[(String, f64, Option<f64>)], with_exact: bool) -> String {
    let mut out = if with_exact {
        String::from("prompt_id,reduction,reduction_exact\n")
    } else {
        String::from("prompt_id,reduction\n")
    };
    let mut sum = 0.0;
    let mut sum_exact = 0.0;
    for (id, reduction, exact) in rows {
        sum += reduction;
        match exact {
            Some(e) if with_exact => {
                sum_exact += e;
                out.push_str(&format!("{id},{reduction},{e}\n"));
            }
            _ => out.push_str(&format!("{id},{reduction}\n")),
        }
    }
    let n = rows.len().max(1) as f64;
    if with_exact {
        out.push_str(&format!("mean,{},{}\n", sum / n, sum_exact / n));
    } else {
        out.push_str(&format!("mean,{}\n", sum / n));
    }
    out
}

pub fn cdf_csv(points: &[CdfPoint]) -> String {
    let mut out = String::from("reduction,cdf\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.reduction, p.cum_fraction));
    }
    out
}

/// Plain PBM (P1) bitmap of a materialized mask; allowed cells are black.
pub fn pbm_string(matrix: &[bool], seq_len: usize) -> String {
    let mut out = format!("P1\n{seq_len} {seq_len}\n");
    for q in 0..seq_len {
        let row = &matrix[q * seq_len..(q + 1) * seq_len];
        for &cell in row {
            out.push(if cell { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}
