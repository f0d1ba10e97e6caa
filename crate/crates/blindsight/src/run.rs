//! Parallel characterization driver.
//!
//! Heads are independent, so one prompt's grid fans out across a rayon
//! pool; results are collected back in `(layer, head)` order, keeping
//! output identical to the sequential path regardless of thread count.

use anyhow::Result;
use blindsight_core::characterize::{
    characterize_head, CharacterizerConfig, HeadVerdict, PromptVerdicts,
};
use blindsight_core::PromptCapture;
use rayon::prelude::*;

pub fn characterize_prompt_parallel(
    pool: &rayon::ThreadPool,
    capture: &PromptCapture,
    cfg: &CharacterizerConfig,
) -> Result<PromptVerdicts> {
    cfg.validate()?;
    let heads = capture.heads();
    let verdicts: Vec<HeadVerdict> = pool.install(|| {
        (0..capture.layers() * heads)
            .into_par_iter()
            .map(|i| {
                let (layer, head) = (i / heads, i % heads);
                let (q, k, v) = capture.head(layer, head);
                characterize_head(layer, head, q, k, v, &capture.layout, cfg)
            })
            .collect::<Result<_, _>>()
    })?;
    Ok(PromptVerdicts {
        prompt_id: capture.prompt_id.clone(),
        alpha: cfg.alpha,
        order_policy: cfg.order_policy,
        num_images: capture.layout.image_count(),
        verdicts,
    })
}

/// A rayon pool with `jobs` threads (0 picks rayon's default).
pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}
