//! Writing synthetic capture sets to disk.
//!
//! The planted pattern map goes into a `ground_truth.json` sidecar next to
//! the manifest, never inside it, so the characterizer cannot accidentally
//! read it. A `layouts.json` convenience file is emitted too, ready to feed
//! the `flops` stage.

use std::path::Path;

use anyhow::{Context, Result};
use blindsight_core::synth::{generate_set, GroundTruth, SynthSet, SynthSetConfig};

use crate::capture::save_capture;
use crate::report::{write_json, LayoutEntry, LayoutsFile};

pub const GROUND_TRUTH_NAME: &str = "ground_truth.json";
pub const LAYOUTS_NAME: &str = "layouts.json";

/// Generate and write a synthetic capture set; returns the set for callers
/// that keep processing in memory.
pub fn write_synth_capture(
    cfg: &SynthSetConfig,
    model_name: &str,
    dir: &Path,
    overwrite: bool,
) -> Result<SynthSet> {
    let set = generate_set(cfg).context("generating synthetic captures")?;
    save_capture(&set.prompts, model_name, dir, overwrite)
        .with_context(|| format!("writing capture to {}", dir.display()))?;
    write_json(&dir.join(GROUND_TRUTH_NAME), &set.ground_truth)?;
    let layouts = LayoutsFile {
        layouts: set
            .prompts
            .iter()
            .map(|p| LayoutEntry { prompt_id: p.prompt_id.clone(), layout: p.layout.clone() })
            .collect(),
    };
    write_json(&dir.join(LAYOUTS_NAME), &layouts)?;
    Ok(set)
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruth> {
    crate::report::read_json(&dir.join(GROUND_TRUTH_NAME))
}
